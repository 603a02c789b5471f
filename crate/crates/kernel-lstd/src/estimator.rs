//! Regularized kernel LSTD.
//!
//! The fitted value function is
//! `theta_hat = r + (gamma / sqrt(n)) sum_i alpha_i K(., x_i)` where
//! `(K_cov + lambda I - gamma K_cr^T) alpha = y` and `y_i = r(x'_i) / sqrt(n)`.
//!
//! With `Psi_{ij} = sqrt(mu_j) phi_j(x_i)` the same estimate solves the
//! `J x J` system `(Psi^T (Psi - gamma Psi') / n + lambda I) v = Psi^T y`
//! with `v = Psi^T alpha`. Every entry of that system is a Walsh transform
//! of a histogram of sample cells, so its cost does not grow with `n`.
//! [`SolveRoute::Auto`] picks whichever system is smaller.

use faer::prelude::*;
use faer::Mat;

use crate::error::{Error, Result};
use crate::kernel::MercerKernel;
use crate::mrp::{stationary_density, BlockMrp, SampleSet};
use crate::walsh_basis::{fwht, l2_inner, walsh_transform, DyadicFunction, WalshCoefficients};

const RESIDUAL_TOL: f64 = 1e-8;
/// Largest kernel grid handled by the histogram route (`N^2` doubles).
const MAX_FEATURE_LEVEL: u32 = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveRoute {
    Auto,
    /// The `n x n` representer system.
    Direct,
    /// The eigenbasis system over the active spectrum.
    Feature,
}

#[derive(Clone, Debug)]
pub struct LstdEstimate {
    pub alpha: Vec<f64>,
    pub samples: SampleSet,
    pub kernel: MercerKernel,
    pub reward: DyadicFunction,
    pub gamma: f64,
    pub lambda: f64,
    /// Ratio of largest to smallest LU pivot magnitude.
    pub condition_estimate: f64,
    pub route: SolveRoute,
}

/// `theta_hat - r` in the Walsh basis, on the kernel grid.
#[derive(Clone, Debug)]
pub struct WalshFit {
    pub correction: WalshCoefficients,
    pub condition_estimate: f64,
    pub route: SolveRoute,
}

struct Solved {
    x: Vec<f64>,
    condition: f64,
}

/// LU with partial pivoting plus one step of iterative refinement.
fn solve_refined(a: &Mat<f64>, b: &[f64]) -> Result<Solved> {
    let n = b.len();
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let lu = a.partial_piv_lu();
    let mut x = lu.solve(&rhs);
    let r = &rhs - a * &x;
    let dx = lu.solve(&r);
    x += &dx;
    let res = &rhs - a * &x;
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let rnorm = (0..n).map(|i| res[(i, 0)] * res[(i, 0)]).sum::<f64>().sqrt();
    let rel = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
    let u = lu.U();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        let d = u[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if !(rel <= RESIDUAL_TOL) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem { residual: rel });
    }
    Ok(Solved { x, condition: if lo > 0.0 { hi / lo } else { f64::INFINITY } })
}

struct Prepared {
    n: usize,
    u: Vec<usize>,
    v: Vec<usize>,
    y: Vec<f64>,
}

fn prepare(kernel: &MercerKernel, samples: &SampleSet, reward: &DyadicFunction) -> Result<Prepared> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let root = (n as f64).sqrt();
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for &(x, xn) in &samples.pairs {
        y.push(reward.value_at(xn)? / root);
        u.push(kernel.coordinate(x));
        v.push(kernel.coordinate(xn));
    }
    Ok(Prepared { n, u, v, y })
}

fn active_indices(kernel: &MercerKernel) -> Vec<usize> {
    let mu = kernel.eigenvalues_by_index();
    (0..mu.len()).filter(|&a| mu[a] > 0.0).collect()
}

fn resolve_route(route: SolveRoute, kernel: &MercerKernel, n: usize, lambda: f64) -> SolveRoute {
    match route {
        SolveRoute::Auto => {
            let feasible = lambda > 0.0 && kernel.level() <= MAX_FEATURE_LEVEL;
            if feasible && active_indices(kernel).len() < n {
                SolveRoute::Feature
            } else {
                SolveRoute::Direct
            }
        }
        r => r,
    }
}

fn check_inputs(gamma: f64, lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} is not in [0, 1)")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda} must be finite and >= 0")));
    }
    Ok(())
}

fn direct_alpha(kernel: &MercerKernel, prep: &Prepared, gamma: f64, lambda: f64) -> Result<Solved> {
    let n = prep.n;
    let inv = 1.0 / n as f64;
    let a = Mat::from_fn(n, n, |i, j| {
        let cov = kernel.eval_coordinates(prep.u[i], prep.u[j]);
        let cr = kernel.eval_coordinates(prep.u[j], prep.v[i]);
        let d = if i == j { lambda } else { 0.0 };
        (cov - gamma * cr) * inv + d
    });
    solve_refined(&a, &prep.y)
}

/// Walsh coefficients of `(gamma / sqrt(n)) sum_i alpha_i K(., x_i)`.
fn correction_from_alpha(kernel: &MercerKernel, prep: &Prepared, alpha: &[f64], gamma: f64) -> Vec<f64> {
    let mut s = vec![0.0; 1usize << kernel.level()];
    for (i, &ui) in prep.u.iter().enumerate() {
        s[ui] += alpha[i];
    }
    fwht(&mut s);
    let scale = gamma / (prep.n as f64).sqrt();
    let mu = kernel.eigenvalues_by_index();
    s.iter().zip(mu).map(|(si, m)| scale * m * si).collect()
}

/// Row-wise then column-wise Walsh-Hadamard transform of an `N x N` array.
fn fwht_2d(data: &mut [f64], side: usize) {
    for row in data.chunks_exact_mut(side) {
        fwht(row);
    }
    let mut h = 1;
    while h < side {
        for block in data.chunks_exact_mut(2 * h * side) {
            let (lo, hi) = block.split_at_mut(h * side);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (p, q) = (*a, *b);
                *a = p + q;
                *b = p - q;
            }
        }
        h *= 2;
    }
}

struct FeatureSolution {
    active: Vec<usize>,
    v: Vec<f64>,
    condition: f64,
}

fn feature_solve(kernel: &MercerKernel, prep: &Prepared, gamma: f64, lambda: f64) -> Result<FeatureSolution> {
    let level = kernel.level();
    if level > MAX_FEATURE_LEVEL {
        return Err(Error::InvalidParameter(format!(
            "kernel grid level {level} is too fine for the eigenbasis route"
        )));
    }
    let side = 1usize << level;
    let (n, root) = (prep.n as f64, (prep.n as f64).sqrt());
    let mut hx = vec![0.0; side];
    let mut hy = vec![0.0; side];
    let mut joint = vec![0.0; side * side];
    for i in 0..prep.n {
        hx[prep.u[i]] += 1.0;
        hy[prep.u[i]] += prep.y[i] * root;
        joint[prep.u[i] * side + prep.v[i]] += 1.0;
    }
    fwht(&mut hx);
    fwht(&mut hy);
    fwht_2d(&mut joint, side);

    let mu = kernel.eigenvalues_by_index();
    let active = active_indices(kernel);
    let m = active.len();
    let sq: Vec<f64> = active.iter().map(|&a| mu[a].sqrt()).collect();
    let b = Mat::from_fn(m, m, |p, q| {
        let (a, c) = (active[p], active[q]);
        let d = if p == q { lambda } else { 0.0 };
        sq[p] * (hx[a ^ c] - gamma * joint[a * side + c]) * sq[q] / n + d
    });
    let rhs: Vec<f64> = (0..m).map(|p| sq[p] * hy[active[p]] / root).collect();
    let s = solve_refined(&b, &rhs)?;
    Ok(FeatureSolution { active, v: s.x, condition: s.condition })
}

fn correction_from_features(kernel: &MercerKernel, sol: &FeatureSolution, n: usize, gamma: f64) -> Vec<f64> {
    let mu = kernel.eigenvalues_by_index();
    let scale = gamma / (n as f64).sqrt();
    let mut c = vec![0.0; mu.len()];
    for (p, &a) in sol.active.iter().enumerate() {
        c[a] = scale * mu[a].sqrt() * sol.v[p];
    }
    c
}

/// `alpha = (y - (K_cov - gamma K_cr^T) alpha) / lambda` evaluated through
/// `g = sum_i alpha_i K(., x_i)`, whose Walsh coefficients are `sqrt(mu) v`.
fn alpha_from_features(kernel: &MercerKernel, prep: &Prepared, sol: &FeatureSolution, gamma: f64, lambda: f64) -> Vec<f64> {
    let mu = kernel.eigenvalues_by_index();
    let mut g = vec![0.0; mu.len()];
    for (p, &a) in sol.active.iter().enumerate() {
        g[a] = mu[a].sqrt() * sol.v[p];
    }
    fwht(&mut g);
    let n = prep.n as f64;
    (0..prep.n)
        .map(|i| (prep.y[i] - (g[prep.u[i]] - gamma * g[prep.v[i]]) / n) / lambda)
        .collect()
}

fn wrap(kernel: &MercerKernel, c: Vec<f64>) -> WalshCoefficients {
    WalshCoefficients::new(kernel.level(), c).expect("kernel grid has 2^level cells")
}

/// Fit and return only `theta_hat - r`, skipping `alpha` on the
/// eigenbasis route.
pub fn fit_walsh(
    kernel: &MercerKernel,
    samples: &SampleSet,
    reward: &DyadicFunction,
    gamma: f64,
    lambda: f64,
    route: SolveRoute,
) -> Result<WalshFit> {
    check_inputs(gamma, lambda)?;
    let prep = prepare(kernel, samples, reward)?;
    match resolve_route(route, kernel, prep.n, lambda) {
        SolveRoute::Feature => {
            let sol = feature_solve(kernel, &prep, gamma, lambda)?;
            let c = correction_from_features(kernel, &sol, prep.n, gamma);
            Ok(WalshFit { correction: wrap(kernel, c), condition_estimate: sol.condition, route: SolveRoute::Feature })
        }
        _ => {
            let s = direct_alpha(kernel, &prep, gamma, lambda)?;
            let c = correction_from_alpha(kernel, &prep, &s.x, gamma);
            Ok(WalshFit { correction: wrap(kernel, c), condition_estimate: s.condition, route: SolveRoute::Direct })
        }
    }
}

pub fn fit(
    kernel: &MercerKernel,
    samples: &SampleSet,
    reward: &DyadicFunction,
    gamma: f64,
    lambda: f64,
) -> Result<LstdEstimate> {
    fit_with(kernel, samples, reward, gamma, lambda, SolveRoute::Auto)
}

pub fn fit_with(
    kernel: &MercerKernel,
    samples: &SampleSet,
    reward: &DyadicFunction,
    gamma: f64,
    lambda: f64,
    route: SolveRoute,
) -> Result<LstdEstimate> {
    check_inputs(gamma, lambda)?;
    let prep = prepare(kernel, samples, reward)?;
    let route = resolve_route(route, kernel, prep.n, lambda);
    let (alpha, condition) = match route {
        SolveRoute::Feature => {
            if lambda <= 0.0 {
                return Err(Error::InvalidParameter("eigenbasis route needs lambda > 0".into()));
            }
            let sol = feature_solve(kernel, &prep, gamma, lambda)?;
            (alpha_from_features(kernel, &prep, &sol, gamma, lambda), sol.condition)
        }
        _ => {
            let s = direct_alpha(kernel, &prep, gamma, lambda)?;
            (s.x, s.condition)
        }
    };
    Ok(LstdEstimate {
        alpha,
        samples: samples.clone(),
        kernel: kernel.clone(),
        reward: reward.clone(),
        gamma,
        lambda,
        condition_estimate: condition,
        route,
    })
}

pub fn predict(est: &LstdEstimate, x: f64) -> Result<f64> {
    let r = est.reward.value_at(x)?;
    let u = est.kernel.coordinate(x);
    let s: f64 = est
        .samples
        .pairs
        .iter()
        .zip(&est.alpha)
        .map(|(p, a)| a * est.kernel.eval_coordinates(u, est.kernel.coordinate(p.0)))
        .sum();
    Ok(r + est.gamma / (est.samples.len() as f64).sqrt() * s)
}

/// Walsh coefficients of `theta_hat` on a level-`level` grid.
pub fn estimate_as_walsh(est: &LstdEstimate, level: u32) -> Result<WalshCoefficients> {
    let needed = est.kernel.level().max(est.reward.level());
    if level < needed {
        return Err(Error::LevelTooSmall { level, needed });
    }
    let prep = prepare(&est.kernel, &est.samples, &est.reward)?;
    let c = correction_from_alpha(&est.kernel, &prep, &est.alpha, est.gamma);
    let corr = wrap(&est.kernel, c).extend(level);
    let r = walsh_transform(&est.reward).extend(level);
    let sum: Vec<f64> = corr.coeffs().iter().zip(r.coeffs()).map(|(a, b)| a + b).collect();
    WalshCoefficients::new(level, sum)
}

/// `||theta_hat - theta*||` in `L^2(density)`.
pub fn l2_error(est: &LstdEstimate, theta_star: &DyadicFunction, density: &DyadicFunction) -> Result<f64> {
    let level = est.kernel.level().max(est.reward.level()).max(theta_star.level()).max(density.level());
    let fitted = estimate_as_walsh(est, level)?.inverse();
    let diff = fitted.combine(1.0, theta_star, -1.0);
    Ok(l2_inner(&diff, &diff, density).max(0.0).sqrt())
}

/// Squared `L^2` error under Lebesgue measure from a Walsh fit.
pub fn squared_error_uniform(fit: &WalshFit, reward: &DyadicFunction, theta_star: &DyadicFunction) -> f64 {
    let level = fit.correction.level().max(reward.level()).max(theta_star.level());
    let c = fit.correction.extend(level);
    let r = walsh_transform(reward).extend(level);
    let t = walsh_transform(theta_star).extend(level);
    c.coeffs()
        .iter()
        .zip(r.coeffs())
        .zip(t.coeffs())
        .map(|((a, b), s)| {
            let e = a + b - s;
            e * e
        })
        .sum()
}

/// Regularized projected fixed point with exact population moments.
///
/// Writing the output as `r + sum_j w_j phi_j`, solves
/// `(G - gamma C + lambda diag(1 / mu)) w = gamma e` with
/// `G_jk = E[phi_j(X) phi_k(X)]`, `C_jk = E[phi_j(X) phi_k(X')]` and
/// `e_j = E[phi_j(X) r(X')]`, which is the population limit of the
/// eigenbasis system.
pub fn population_fixed_point(kernel: &MercerKernel, m: &BlockMrp, lambda: f64) -> Result<DyadicFunction> {
    check_inputs(m.gamma(), lambda)?;
    let gamma = m.gamma();
    let lm = m.level();
    let level = kernel.level().max(lm);
    let rho = stationary_density(m);
    let rho_hat = walsh_transform(&rho).extend(level);
    let mu = kernel.eigenvalues_by_index();
    // Coordinates whose penalty overflows are pinned to zero.
    let active: Vec<usize> = active_indices(kernel).into_iter().filter(|&a| (lambda / mu[a]).is_finite()).collect();
    let size = active.len();

    // E[phi_a(X) (P g)(X)] for each coarse Walsh index a, as Walsh
    // coefficients of rho * P g.
    let coarse = 1usize << lm;
    let weighted = |g: &DyadicFunction| -> Vec<f64> {
        let pg = m.transition_expectation(g);
        let h = DyadicFunction::from_fn(lm, |c| rho.values()[c] * pg.values()[c]);
        walsh_transform(&h).coeffs().to_vec()
    };
    let cross: Vec<Vec<f64>> = (0..coarse).map(|b| weighted(&DyadicFunction::walsh(b, lm))).collect();
    let e_all = weighted(&m.reward());

    let g = Mat::from_fn(size, size, |p, q| {
        let (a, b) = (active[p], active[q]);
        let gram = rho_hat.coeffs()[a ^ b];
        let c = if a < coarse && b < coarse { cross[b][a] } else { 0.0 };
        let d = if p == q { lambda / mu[a] } else { 0.0 };
        gram - gamma * c + d
    });
    let rhs: Vec<f64> = active.iter().map(|&a| if a < coarse { gamma * e_all[a] } else { 0.0 }).collect();
    let w = solve_refined(&g, &rhs)?.x;

    let mut coeffs = vec![0.0; 1usize << level];
    for (p, &a) in active.iter().enumerate() {
        coeffs[a] = w[p];
    }
    let corr = WalshCoefficients::new(level, coeffs)?.inverse();
    Ok(m.reward().combine(1.0, &corr, 1.0))
}
