//! Mercer kernels whose eigenfunctions are Walsh functions.
//!
//! `K(x, y) = sum_j mu_j W_{m(j)}(x) W_{m(j)}(y)`. Because
//! `W_a(x) W_a(y) = W_a(x xor y)`, the kernel is a function of the XOR of
//! the two cell indices only, so evaluation is a single table lookup.

use faer::Mat;

use crate::error::{Error, Result};
use crate::mrp::SampleSet;
use crate::walsh_basis::{bits_for, cell, fwht, reverse_bits};

pub const DEFAULT_TRUNCATION: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub enum SpectrumFamily {
    /// `mu_j = c j^{-2 alpha}`.
    Polynomial { alpha: f64, c: f64 },
    /// `mu_j = exp(-rate (j - 1)^2)`.
    Exponential { rate: f64 },
    /// `mu_j = values[j - 1]`, zero past the end.
    FiniteLinear { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenSpectrum {
    pub family: SpectrumFamily,
    pub truncation: usize,
}

impl EigenSpectrum {
    pub fn polynomial(alpha: f64, c: f64, truncation: usize) -> Result<Self> {
        if !(alpha.is_finite() && 2.0 * alpha > 1.0) {
            return Err(Error::InvalidParameter(format!("need 2 alpha > 1, got alpha = {alpha}")));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {c}")));
        }
        Self::checked(SpectrumFamily::Polynomial { alpha, c }, truncation)
    }

    pub fn exponential(truncation: usize) -> Result<Self> {
        Self::checked(SpectrumFamily::Exponential { rate: 1.0 }, truncation)
    }

    pub fn finite_linear(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("finite spectrum needs at least one value".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("eigenvalues must be finite and nonnegative".into()));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter("eigenvalues must be nonincreasing".into()));
        }
        let d = values.len();
        Self::checked(SpectrumFamily::FiniteLinear { values }, d)
    }

    fn checked(family: SpectrumFamily, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(Error::InvalidParameter("truncation must be positive".into()));
        }
        Ok(Self { family, truncation })
    }

    /// Untruncated `mu_j`, `j >= 1`.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        assert!(j >= 1, "eigenvalues are indexed from 1");
        match &self.family {
            SpectrumFamily::Polynomial { alpha, c } => c * (j as f64).powf(-2.0 * alpha),
            SpectrumFamily::Exponential { rate } => {
                let t = (j - 1) as f64;
                (-rate * t * t).exp()
            }
            SpectrumFamily::FiniteLinear { values } => values.get(j - 1).copied().unwrap_or(0.0),
        }
    }

    /// Number of indices `j <= truncation` with `mu_j > 0`.
    pub fn active_len(&self) -> usize {
        match &self.family {
            SpectrumFamily::Polynomial { .. } => self.truncation,
            _ => (1..=self.truncation).take_while(|&j| self.eigenvalue(j) > 0.0).count(),
        }
    }

    pub fn truncated_values(&self) -> Vec<f64> {
        (1..=self.active_len()).map(|j| self.eigenvalue(j)).collect()
    }

    pub fn truncated_sum(&self) -> f64 {
        self.truncated_values().iter().sum()
    }

    /// `sum_{j > J} mu_j`, analytic for polynomial decay.
    pub fn tail_energy(&self) -> f64 {
        match &self.family {
            SpectrumFamily::Polynomial { .. } => self.tail_after(self.truncation),
            _ => (self.truncation + 1..)
                .map(|j| self.eigenvalue(j))
                .take_while(|&m| m > 0.0)
                .sum(),
        }
    }

    /// `sum_j mu_j` without truncation.
    pub fn total_sum(&self) -> f64 {
        match &self.family {
            SpectrumFamily::Polynomial { .. } => {
                let head: f64 = (1..=POLY_HEAD).map(|j| self.eigenvalue(j)).sum();
                head + self.tail_after(POLY_HEAD)
            }
            SpectrumFamily::Exponential { .. } => {
                (1..).map(|j| self.eigenvalue(j)).take_while(|&m| m > 0.0).sum()
            }
            SpectrumFamily::FiniteLinear { values } => values.iter().sum(),
        }
    }

    /// `sum_{j > k} mu_j` of the untruncated sequence.
    pub fn tail_after(&self, k: usize) -> f64 {
        match &self.family {
            SpectrumFamily::Polynomial { alpha, c } => {
                let s = 2.0 * alpha;
                let start = k.max(POLY_HEAD);
                let exact: f64 = (k + 1..=start).map(|j| self.eigenvalue(j)).sum();
                exact + c * euler_maclaurin_tail(s, start as f64)
            }
            SpectrumFamily::Exponential { .. } => {
                (k + 1..).map(|j| self.eigenvalue(j)).take_while(|&m| m > 0.0).sum()
            }
            SpectrumFamily::FiniteLinear { values } => values.iter().skip(k).sum(),
        }
    }
}

const POLY_HEAD: usize = 64;

/// `sum_{j > N} j^{-s}` by Euler-Maclaurin through the third derivative.
pub(crate) fn euler_maclaurin_tail(s: f64, n: f64) -> f64 {
    let f = n.powf(-s);
    let integral = n * f / (s - 1.0);
    let d1 = s * f / n;
    let d3 = s * (s + 1.0) * (s + 2.0) * f / (n * n * n);
    integral - 0.5 * f + d1 / 12.0 - d3 / 720.0
}

/// How spectral index `j` is attached to a Walsh function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IndexMap {
    /// `j -> j - 1`.
    Simulation,
    /// `j -> 2j - 1`.
    RegimeA,
    /// `1 -> 1`, `j -> 2(j - 1)`.
    RegimeB,
}

impl IndexMap {
    pub fn walsh_index(self, j: usize) -> usize {
        assert!(j >= 1, "eigenvalues are indexed from 1");
        match self {
            IndexMap::Simulation => j - 1,
            IndexMap::RegimeA => 2 * j - 1,
            IndexMap::RegimeB if j == 1 => 1,
            IndexMap::RegimeB => 2 * (j - 1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct MercerKernel {
    spectrum: EigenSpectrum,
    index_map: IndexMap,
    level: u32,
    /// `mu` placed at Walsh index, zero elsewhere.
    by_index: Vec<f64>,
    /// `K` as a function of the XOR of Hadamard-ordered cell indices.
    table: Vec<f64>,
}

impl MercerKernel {
    pub fn new(spectrum: EigenSpectrum, index_map: IndexMap) -> Self {
        let active = spectrum.truncated_values();
        let top = active.len().max(1);
        let level = (1..=top).map(|j| bits_for(index_map.walsh_index(j) + 1)).max().unwrap_or(0);
        let mut by_index = vec![0.0; 1 << level];
        for (i, mu) in active.iter().enumerate() {
            by_index[index_map.walsh_index(i + 1)] = *mu;
        }
        let mut table = by_index.clone();
        fwht(&mut table);
        Self { spectrum, index_map, level, by_index, table }
    }

    pub fn spectrum(&self) -> &EigenSpectrum {
        &self.spectrum
    }

    pub fn index_map(&self) -> IndexMap {
        self.index_map
    }

    /// Grid level on which every eigenfunction in play is constant.
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Eigenvalue attached to Walsh index `a` (zero if none).
    pub fn eigenvalue_at_index(&self, a: usize) -> f64 {
        self.by_index.get(a).copied().unwrap_or(0.0)
    }

    pub fn eigenvalues_by_index(&self) -> &[f64] {
        &self.by_index
    }

    /// Hadamard-ordered cell index of `x` on the kernel grid.
    #[inline]
    pub fn coordinate(&self, x: f64) -> usize {
        reverse_bits(cell(x, self.level), self.level)
    }

    #[inline]
    pub fn eval_coordinates(&self, u: usize, v: usize) -> f64 {
        self.table[u ^ v]
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        for z in [x, y] {
            if !(0.0..1.0).contains(&z) {
                return Err(Error::Domain(format!("{z} is not in [0, 1)")));
            }
        }
        Ok(self.eval_coordinates(self.coordinate(x), self.coordinate(y)))
    }

    /// `(b, kappa)` with `b = sqrt(sum_{j <= J} mu_j)` and `kappa = 1`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.spectrum.truncated_sum().sqrt(), 1.0)
    }
}

pub fn eigenvalue(spectrum: &EigenSpectrum, j: usize) -> f64 {
    spectrum.eigenvalue(j)
}

pub fn kernel_eval(kernel: &MercerKernel, x: f64, y: f64) -> Result<f64> {
    kernel.eval(x, y)
}

pub fn kernel_bounds(kernel: &MercerKernel) -> (f64, f64) {
    kernel.bounds()
}

/// Scaled Gram matrices `K(x_i, x_j) / n` and `K(x_i, x'_j) / n`.
#[derive(Clone, Debug)]
pub struct GramPair {
    pub cov: Mat<f64>,
    pub cr: Mat<f64>,
    pub n: usize,
}

pub fn gram_matrices(kernel: &MercerKernel, samples: &SampleSet) -> GramPair {
    let n = samples.len();
    let u: Vec<usize> = samples.pairs.iter().map(|p| kernel.coordinate(p.0)).collect();
    let v: Vec<usize> = samples.pairs.iter().map(|p| kernel.coordinate(p.1)).collect();
    let scale = 1.0 / n as f64;
    let cov = Mat::from_fn(n, n, |i, j| kernel.eval_coordinates(u[i], u[j]) * scale);
    let cr = Mat::from_fn(n, n, |i, j| kernel.eval_coordinates(u[i], v[j]) * scale);
    GramPair { cov, cr, n }
}

/// Parse `poly:<alpha>[:<c>]`, `exp` or `linear:<d>`.
pub fn parse_spectrum(spec: &str, truncation: usize) -> Result<EigenSpectrum> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {s:?} in kernel {spec:?}")))
    };
    match parts.as_slice() {
        ["exp"] => EigenSpectrum::exponential(truncation),
        ["poly", a] => EigenSpectrum::polynomial(num(a)?, 1.0, truncation),
        ["poly", a, c] => EigenSpectrum::polynomial(num(a)?, num(c)?, truncation),
        ["linear", d] => {
            let d: usize = d
                .parse()
                .map_err(|_| Error::Parse(format!("bad dimension {d:?} in kernel {spec:?}")))?;
            if d == 0 {
                return Err(Error::Parse("linear kernel needs d >= 1".into()));
            }
            EigenSpectrum::finite_linear(vec![1.0; d])
        }
        _ => Err(Error::Parse(format!("unknown kernel {spec:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walsh_basis::walsh_eval;

    #[test]
    fn eigenvalue_examples() {
        let e = EigenSpectrum::exponential(16).unwrap();
        assert_eq!(e.eigenvalue(1), 1.0);
        let p = EigenSpectrum::polynomial(1.0, 1.0, 16).unwrap();
        assert_eq!(p.eigenvalue(2), 0.25);
        let l = EigenSpectrum::finite_linear(vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(l.eigenvalue(5), 0.0);
    }

    #[test]
    fn rejects_non_summable_decay() {
        assert!(EigenSpectrum::polynomial(0.5, 1.0, 8).is_err());
        assert!(EigenSpectrum::finite_linear(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn exponential_diagonal() {
        let k = MercerKernel::new(EigenSpectrum::exponential(4096).unwrap(), IndexMap::Simulation);
        let direct: f64 = (0..40).map(|t: i32| (-(t * t) as f64).exp()).sum();
        for x in [0.0, 0.3, 0.77] {
            assert!((k.eval(x, x).unwrap() - direct).abs() < 1e-14);
        }
        assert!((direct - 1.3863).abs() < 1e-4);
        let (b, kappa) = k.bounds();
        assert!((b - direct.sqrt()).abs() < 1e-14);
        assert!((b - 1.1774).abs() < 1e-4);
        assert_eq!(kappa, 1.0);
    }

    #[test]
    fn same_cell_equals_diagonal() {
        let k = MercerKernel::new(EigenSpectrum::polynomial(1.0, 1.0, 64).unwrap(), IndexMap::Simulation);
        let w = 1.0 / 64.0;
        let (x, y) = (5.0 * w + 0.1 * w, 5.0 * w + 0.9 * w);
        assert_eq!(k.eval(x, y).unwrap(), k.eval(x, x).unwrap());
    }

    #[test]
    fn polynomial_term_by_term() {
        let k = MercerKernel::new(EigenSpectrum::polynomial(1.0, 1.0, 4).unwrap(), IndexMap::Simulation);
        let (x, y) = (0.1, 0.6);
        let direct: f64 = (1..=4)
            .map(|j| {
                let a = (j - 1) as u64;
                (j as f64).powi(-2)
                    * walsh_eval(a, x).unwrap() as f64
                    * walsh_eval(a, y).unwrap() as f64
            })
            .sum();
        assert!((k.eval(x, y).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn regime_maps() {
        assert_eq!(IndexMap::RegimeA.walsh_index(1), 1);
        assert_eq!(IndexMap::RegimeA.walsh_index(3), 5);
        assert_eq!(IndexMap::RegimeB.walsh_index(1), 1);
        assert_eq!(IndexMap::RegimeB.walsh_index(2), 2);
        assert_eq!(IndexMap::RegimeB.walsh_index(4), 6);
        let k = MercerKernel::new(EigenSpectrum::polynomial(1.0, 1.0, 8).unwrap(), IndexMap::RegimeB);
        assert_eq!(k.level(), 4);
        assert_eq!(k.eigenvalue_at_index(1), 1.0);
        assert_eq!(k.eigenvalue_at_index(2), 0.25);
        assert_eq!(k.eigenvalue_at_index(3), 0.0);
    }

    #[test]
    fn bounds_examples() {
        let k = MercerKernel::new(EigenSpectrum::finite_linear(vec![1.0]).unwrap(), IndexMap::Simulation);
        assert_eq!(k.bounds(), (1.0, 1.0));
        let p = EigenSpectrum::polynomial(1.0, 1.0, 1_000_000).unwrap();
        let b = p.truncated_sum().sqrt();
        assert!((b - (std::f64::consts::PI.powi(2) / 6.0).sqrt()).abs() < 1e-3);
    }

    #[test]
    fn polynomial_tail_is_accurate() {
        let p = EigenSpectrum::polynomial(0.6, 1.0, 100).unwrap();
        let brute: f64 = (101..=2_000_000).map(|j| p.eigenvalue(j)).sum();
        let rest = euler_maclaurin_tail(1.2, 2_000_000.0);
        assert!(((brute + rest) - p.tail_energy()).abs() < 1e-9 * p.tail_energy());
        let total = EigenSpectrum::polynomial(1.0, 1.0, 8).unwrap().total_sum();
        assert!((total - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn parse_grammar() {
        assert!(matches!(
            parse_spectrum("poly:1:2", 8).unwrap().family,
            SpectrumFamily::Polynomial { alpha, c } if alpha == 1.0 && c == 2.0
        ));
        assert!(matches!(parse_spectrum("exp", 8).unwrap().family, SpectrumFamily::Exponential { .. }));
        assert_eq!(parse_spectrum("linear:3", 8).unwrap().truncation, 3);
        assert!(parse_spectrum("Exp", 8).is_err());
        assert!(parse_spectrum("poly:x", 8).is_err());
        assert!(parse_spectrum("linear:0", 8).is_err());
    }
}
