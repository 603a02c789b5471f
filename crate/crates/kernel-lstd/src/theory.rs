//! Critical inequality, statistical dimension and predicted rates.
//!
//! All quantities here use the untruncated spectrum; polynomial tails are
//! summed analytically.

use crate::error::{Error, Result};
use crate::kernel::{euler_maclaurin_tail, EigenSpectrum, MercerKernel, SpectrumFamily};
use crate::mrp::{exact_value_function, BlockMrp, EnsembleKind};
use crate::walsh_basis::{walsh_transform, DyadicFunction};

pub const DEFAULT_C0: f64 = 0.01;
const SPAN_TOL: f64 = 1e-10;
const BRACKET_LO: f64 = 1e-12;
const TIE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalRadiusProblem {
    pub spectrum: EigenSpectrum,
    pub n: usize,
    pub radius: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl CriticalRadiusProblem {
    /// `sqrt(n) R (1 - gamma) / zeta`.
    pub fn slope(&self) -> f64 {
        (self.n as f64).sqrt() * self.radius * (1.0 - self.gamma) / self.zeta
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatePrediction {
    pub n_exponent: f64,
    pub h_exponent: f64,
    pub regime: EnsembleKind,
}

/// Number of `j` with `mu_j >= delta^2`, as a float so that tiny radii on
/// slowly decaying spectra do not overflow.
fn head_count(spectrum: &EigenSpectrum, delta: f64) -> f64 {
    // Ties such as j^-2 against 0.1^2 should not hinge on the last ulp.
    let t = delta * delta * (1.0 - TIE_SLACK);
    let meets = |j: f64| j >= 1.0 && spectrum_at(spectrum, j) >= t;
    let guess = match &spectrum.family {
        SpectrumFamily::Polynomial { alpha, c } => (c / t).powf(1.0 / (2.0 * alpha)).floor(),
        SpectrumFamily::Exponential { rate } => {
            if t > 1.0 {
                0.0
            } else {
                1.0 + (-t.ln() / rate).sqrt().floor()
            }
        }
        SpectrumFamily::FiniteLinear { values } => {
            return values.iter().take_while(|&&v| v >= t).count() as f64;
        }
    };
    let mut j = guess.max(0.0);
    if j > 1e15 {
        return j;
    }
    while meets(j + 1.0) {
        j += 1.0;
    }
    while j >= 1.0 && !meets(j) {
        j -= 1.0;
    }
    j
}

fn spectrum_at(spectrum: &EigenSpectrum, j: f64) -> f64 {
    match &spectrum.family {
        SpectrumFamily::Polynomial { alpha, c } => c * j.powf(-2.0 * alpha),
        SpectrumFamily::Exponential { rate } => (-rate * (j - 1.0) * (j - 1.0)).exp(),
        SpectrumFamily::FiniteLinear { .. } => spectrum.eigenvalue(j as usize),
    }
}

fn tail_from(spectrum: &EigenSpectrum, k: f64) -> f64 {
    match &spectrum.family {
        SpectrumFamily::Polynomial { alpha, c } if k > 1e12 => c * euler_maclaurin_tail(2.0 * alpha, k),
        _ => spectrum.tail_after(k as usize),
    }
}

/// `sqrt(sum_j min(mu_j / delta^2, 1))`.
pub fn kernel_complexity(spectrum: &EigenSpectrum, delta: f64) -> f64 {
    assert!(delta > 0.0, "delta must be positive");
    let h = head_count(spectrum, delta);
    (h + tail_from(spectrum, h) / (delta * delta)).sqrt()
}

/// Smallest `delta` with `C(delta) <= slope * delta`, with `slope` as in
/// [`CriticalRadiusProblem::slope`].
pub fn critical_radius(problem: &CriticalRadiusProblem) -> Result<f64> {
    let p = problem;
    if !(p.radius > 0.0 && p.zeta > 0.0 && p.n > 0 && p.gamma > 0.0 && p.gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need n, R, zeta > 0 and gamma in (0, 1); got n = {}, R = {}, gamma = {}, zeta = {}",
            p.n, p.radius, p.gamma, p.zeta
        )));
    }
    let slope = p.slope();
    if !(slope > 0.0 && slope.is_finite()) {
        return Err(Error::NoSolution(format!("slope {slope} is not positive")));
    }
    let total = p.spectrum.total_sum();
    let b = total.sqrt();
    // Past sqrt(mu_1) every min picks mu_j / delta^2 and the root is explicit.
    let outer = (b / slope).sqrt();
    let excess = |d: f64| kernel_complexity(&p.spectrum, d) - slope * d;
    let mut hi = b.max(outer);
    let mut lo = BRACKET_LO;
    if excess(lo) <= 0.0 {
        return Ok(lo);
    }
    while excess(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        if hi - lo <= 1e-15 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `max{j : mu_j >= delta^2}`, zero if `mu_1 < delta^2`.
pub fn statistical_dimension(spectrum: &EigenSpectrum, delta: f64) -> usize {
    let h = head_count(spectrum, delta);
    if h >= usize::MAX as f64 {
        usize::MAX
    } else {
        h as usize
    }
}

pub fn choose_lambda(delta_n: f64, gamma: f64, c0: f64) -> f64 {
    c0 * (1.0 - gamma) * delta_n * delta_n
}

/// `||f||_H` for `f` on a dyadic grid, rejecting energy outside the span.
pub fn hilbert_norm(kernel: &MercerKernel, f: &DyadicFunction) -> Result<f64> {
    let level = kernel.level().max(f.level());
    let coeffs = walsh_transform(f).extend(level);
    let (mut norm, mut outside) = (0.0, 0.0);
    for (a, c) in coeffs.coeffs().iter().enumerate() {
        let mu = kernel.eigenvalue_at_index(a);
        if mu > 0.0 {
            norm += c * c / mu;
        } else {
            outside += c * c;
        }
    }
    if outside > SPAN_TOL {
        return Err(Error::SpanError { energy: outside });
    }
    Ok(norm.sqrt())
}

/// `max{||theta* - r||_H, 2 ||theta*||_inf / b}`.
pub fn compute_radius_r(kernel: &MercerKernel, m: &BlockMrp) -> Result<f64> {
    let theta = exact_value_function(m);
    let diff = theta.combine(1.0, &m.reward(), -1.0);
    let h = hilbert_norm(kernel, &diff)?;
    let (b, _) = kernel.bounds();
    Ok(h.max(2.0 * theta.sup_norm() / b))
}

pub fn predicted_exponents(family: &SpectrumFamily, regime: EnsembleKind) -> Result<RatePrediction> {
    let (n_exponent, h_exponent) = match family {
        SpectrumFamily::Polynomial { alpha, .. } => {
            let d = 2.0 * alpha + 1.0;
            let h = match regime {
                EnsembleKind::Hard => 2.0 * (3.0 * alpha + 1.0) / d,
                EnsembleKind::Easy => 4.0 * alpha / d,
            };
            (2.0 * alpha / d, h)
        }
        SpectrumFamily::Exponential { .. } => {
            (1.0, if regime == EnsembleKind::Hard { 3.0 } else { 2.0 })
        }
        SpectrumFamily::FiniteLinear { .. } => {
            return Err(Error::InvalidParameter("no rate prediction for finite-rank kernels".into()))
        }
    };
    Ok(RatePrediction { n_exponent, h_exponent, regime })
}

/// `(zeta / (R (1 - gamma)))^2 d_n / (n delta_n^2)` at the critical radius
/// of `problem`. With `zeta = 2 sigma_bar`, `R = R_bar` this is the kernel
/// regularity ratio.
pub fn regularity_ratio(problem: &CriticalRadiusProblem) -> Result<f64> {
    let delta = critical_radius(problem)?;
    let d = statistical_dimension(&problem.spectrum, delta) as f64;
    let s = problem.slope();
    Ok(d / (s * s * delta * delta))
}
