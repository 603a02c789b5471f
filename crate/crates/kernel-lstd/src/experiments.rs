//! Monte Carlo sweeps, slope fits and lower-bound runs behind the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::estimator::{fit_walsh, fit_with, l2_error, squared_error_uniform, SolveRoute};
use crate::kernel::{parse_spectrum, IndexMap, MercerKernel, DEFAULT_TRUNCATION};
use crate::lowerbound::{build_regime_a_family, build_regime_b_family, certify, CertificationReport, InstanceFamily, Regime};
use crate::mrp::{bellman_residual_variance, exact_value_function, make_ensemble, stationary_density, BlockMrp, EnsembleKind};
use crate::theory::{choose_lambda, compute_radius_r, critical_radius, predicted_exponents, CriticalRadiusProblem, DEFAULT_C0};

pub const CSV_HEADER: &str = "n,gamma,H,trials,missing,mean_mse,std_mse,delta_n,lambda_n";
/// Resamples allowed per trial slot after a failed solve.
pub const MAX_RESAMPLES: u64 = 3;
pub const DEFAULT_N_GRID: [usize; 7] = [128, 256, 512, 1024, 2048, 4096, 8192];
pub const DEFAULT_GAMMA_GRID: [f64; 5] = [0.6, 0.7, 0.8, 0.9, 0.95];

/// Noise scale used in the critical inequality when tuning `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZetaChoice {
    /// `zeta = b R`, needs no variance knowledge.
    BoundTimesRadius,
    /// `zeta = kappa sigma(theta*)` with the exact Bellman residual spread.
    Sigma,
}

impl FromStr for ZetaChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bR" => Ok(ZetaChoice::BoundTimesRadius),
            "sigma" => Ok(ZetaChoice::Sigma),
            _ => Err(Error::Parse(format!("zeta must be bR or sigma, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub kernel: String,
    pub ensemble: EnsembleKind,
    pub gammas: Vec<f64>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub c0: f64,
    pub truncation: usize,
    pub zeta: ZetaChoice,
    pub workers: usize,
}

impl SweepConfig {
    /// Defaults for an `n` sweep.
    pub fn sweep_n_defaults() -> Self {
        Self {
            kernel: "exp".into(),
            ensemble: EnsembleKind::Easy,
            gammas: vec![0.9],
            ns: DEFAULT_N_GRID.to_vec(),
            trials: 2000,
            seed: 0,
            c0: DEFAULT_C0,
            truncation: DEFAULT_TRUNCATION,
            zeta: ZetaChoice::BoundTimesRadius,
            workers: default_workers(),
        }
    }

    /// Defaults for a horizon sweep.
    pub fn sweep_h_defaults() -> Self {
        Self { gammas: DEFAULT_GAMMA_GRID.to_vec(), ns: vec![1024], trials: 1000, ..Self::sweep_n_defaults() }
    }

    /// Apply `key=value` settings; unknown keys are rejected.
    pub fn apply(&mut self, settings: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in settings {
            match k.as_str() {
                "kernel" => self.kernel = v.clone(),
                "ensemble" => self.ensemble = v.parse()?,
                "gamma" | "gamma-grid" => self.gammas = parse_list(v, k)?,
                "n" | "n-grid" => self.ns = parse_list(v, k)?,
                "trials" => self.trials = parse_value(v, k)?,
                "seed" => self.seed = parse_value(v, k)?,
                "c0" => self.c0 = parse_value(v, k)?,
                "trunc" => self.truncation = parse_value(v, k)?,
                "zeta" => self.zeta = v.parse()?,
                "workers" => self.workers = parse_value(v, k)?,
                "out" | "summary" => {}
                _ => return Err(Error::Parse(format!("unknown setting {k:?}"))),
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.ns.is_empty() {
            return Err(Error::InvalidParameter("grids must be nonempty".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidParameter("workers must be at least 1".into()));
        }
        if !(self.c0 > 0.0) {
            return Err(Error::InvalidParameter(format!("c0 must be positive, got {}", self.c0)));
        }
        parse_spectrum(&self.kernel, self.truncation)?;
        Ok(())
    }

    fn kernel(&self) -> Result<MercerKernel> {
        Ok(MercerKernel::new(parse_spectrum(&self.kernel, self.truncation)?, IndexMap::Simulation))
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn parse_value<T: FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Parse(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_value(s, key)).collect()
}

/// Flat `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", no + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tuning {
    pub radius: f64,
    pub zeta: f64,
    pub delta_n: f64,
    pub lambda_n: f64,
}

/// Critical radius and regularization for one `(kernel, MRP, n)`.
pub fn tune(kernel: &MercerKernel, m: &BlockMrp, n: usize, c0: f64, zeta: ZetaChoice) -> Result<Tuning> {
    let radius = compute_radius_r(kernel, m)?;
    let zeta = match zeta {
        ZetaChoice::BoundTimesRadius => kernel.bounds().0 * radius,
        ZetaChoice::Sigma => kernel.bounds().1 * bellman_residual_variance(m).sqrt(),
    };
    let problem = CriticalRadiusProblem { spectrum: kernel.spectrum().clone(), n, radius, gamma: m.gamma(), zeta };
    let delta_n = critical_radius(&problem)?;
    Ok(Tuning { radius, zeta, delta_n, lambda_n: choose_lambda(delta_n, m.gamma(), c0) })
}

fn uniform_stationary(m: &BlockMrp) -> bool {
    stationary_density(m).values().iter().all(|&v| v == 1.0)
}

/// Squared `L^2(mu)` error of one fit.
fn trial_error(kernel: &MercerKernel, m: &BlockMrp, n: usize, lambda: f64, seed: u64, stream: u64) -> Result<f64> {
    let samples = m.sample_pairs_keyed(n, seed, stream);
    let reward = m.reward();
    let theta = exact_value_function(m);
    if uniform_stationary(m) {
        let fit = fit_walsh(kernel, &samples, &reward, m.gamma(), lambda, SolveRoute::Auto)?;
        Ok(squared_error_uniform(&fit, &reward, &theta))
    } else {
        let est = fit_with(kernel, &samples, &reward, m.gamma(), lambda, SolveRoute::Auto)?;
        Ok(l2_error(&est, &theta, &stationary_density(m))?.powi(2))
    }
}

/// Run `trials` fits in parallel; slot `t` uses streams `point`/`t`/attempt.
fn run_point(config: &SweepConfig, kernel: &MercerKernel, m: &BlockMrp, n: usize, lambda: f64, point: u64) -> Vec<Option<f64>> {
    let trials = config.trials;
    let results = Mutex::new(vec![None; trials]);
    let next = AtomicUsize::new(0);
    let workers = config.workers.min(trials);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= trials {
                    break;
                }
                let mut value = None;
                for attempt in 0..=MAX_RESAMPLES {
                    let stream = (point << 40) | ((t as u64) << 2) | attempt;
                    if let Ok(e) = trial_error(kernel, m, n, lambda, config.seed, stream) {
                        value = Some(e);
                        break;
                    }
                }
                results.lock().expect("no worker panicked")[t] = value;
            });
        }
    });
    results.into_inner().expect("no worker panicked")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub gamma: f64,
    pub horizon: f64,
    pub trials: usize,
    pub missing: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub delta_n: f64,
    pub lambda_n: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// `(slope, stderr)`, absent with fewer than two usable rows.
    pub slope: Option<(f64, f64)>,
    pub predicted: Option<f64>,
}

fn summarize(n: usize, gamma: f64, tuning: &Tuning, errs: &[Option<f64>]) -> SweepRow {
    let ok: Vec<f64> = errs.iter().flatten().copied().collect();
    let k = ok.len();
    let mean = if k == 0 { f64::NAN } else { ok.iter().sum::<f64>() / k as f64 };
    let std = if k < 2 {
        0.0
    } else {
        (ok.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (k - 1) as f64).sqrt()
    };
    SweepRow {
        n,
        gamma,
        horizon: 1.0 / (1.0 - gamma),
        trials: errs.len(),
        missing: errs.len() - k,
        mean_mse: mean,
        std_mse: std,
        delta_n: tuning.delta_n,
        lambda_n: tuning.lambda_n,
    }
}

fn sweep(config: &SweepConfig, points: &[(usize, f64)]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    faer::set_global_parallelism(faer::Par::Seq);
    let kernel = config.kernel()?;
    let mut rows = Vec::with_capacity(points.len());
    for (i, &(n, gamma)) in points.iter().enumerate() {
        let m = make_ensemble(config.ensemble, gamma)?;
        let tuning = tune(&kernel, &m, n, config.c0, config.zeta)?;
        let errs = run_point(config, &kernel, &m, n, tuning.lambda_n, i as u64);
        rows.push(summarize(n, gamma, &tuning, &errs));
    }
    Ok(rows)
}

fn slope_of(points: Vec<(f64, f64)>) -> Option<(f64, f64)> {
    let usable: Vec<(f64, f64)> = points.into_iter().filter(|p| p.1.is_finite() && p.1 > 0.0).collect();
    fit_loglog_slope(&usable).ok()
}

pub fn run_sweep_n(config: &SweepConfig) -> Result<SweepResult> {
    if config.gammas.len() != 1 {
        return Err(Error::InvalidParameter("an n sweep takes a single gamma".into()));
    }
    let mut ns = config.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    let points: Vec<(usize, f64)> = ns.iter().map(|&n| (n, config.gammas[0])).collect();
    let rows = sweep(config, &points)?;
    let slope = slope_of(rows.iter().map(|r| (r.n as f64, r.mean_mse)).collect());
    let family = parse_spectrum(&config.kernel, config.truncation)?.family;
    let predicted = predicted_exponents(&family, config.ensemble).ok().map(|p| -p.n_exponent);
    Ok(SweepResult { rows, slope, predicted })
}

pub fn run_sweep_horizon(config: &SweepConfig) -> Result<SweepResult> {
    if config.ns.len() != 1 {
        return Err(Error::InvalidParameter("a horizon sweep takes a single n".into()));
    }
    if config.ensemble == EnsembleKind::Hard {
        if let Some(g) = config.gammas.iter().find(|&&g| g <= 0.5) {
            return Err(Error::InvalidParameter(format!("hard ensemble needs gamma > 1/2, got {g}")));
        }
    }
    let mut gammas = config.gammas.clone();
    gammas.sort_by(f64::total_cmp);
    gammas.dedup();
    let points: Vec<(usize, f64)> = gammas.iter().map(|&g| (config.ns[0], g)).collect();
    let rows = sweep(config, &points)?;
    let slope = slope_of(rows.iter().map(|r| (r.horizon, r.mean_mse)).collect());
    let family = parse_spectrum(&config.kernel, config.truncation)?.family;
    let predicted = predicted_exponents(&family, config.ensemble).ok().map(|p| p.h_exponent);
    Ok(SweepResult { rows, slope, predicted })
}

/// OLS slope of `log y` on `log x`, with its standard error.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::Degenerate(format!("need at least two points, got {}", points.len())));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Domain("log-log fit needs positive coordinates".into()));
    }
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all x values are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let stderr = if points.len() > 2 {
        let ssr: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
        (ssr / (k - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, stderr))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

/// CSV rendering; floats use the shortest round-trip form so output is
/// byte-stable for a given config.
pub fn to_csv(result: &SweepResult, summary: bool) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.n, r.gamma, r.horizon, r.trials, r.missing, r.mean_mse, r.std_mse, r.delta_n, r.lambda_n
        );
    }
    if summary {
        let (slope, se) = result.slope.map_or((None, None), |(a, b)| (Some(a), Some(b)));
        let _ = writeln!(s, "slope,{},stderr,{},predicted,{}", opt(slope), opt(se), opt(result.predicted));
    }
    s
}

/// Build one lower-bound family and certify it.
pub fn run_verify_lowerbound(
    regime: Regime,
    kernel: &str,
    gamma: f64,
    n: usize,
    seed: u64,
    truncation: usize,
) -> Result<(CertificationReport, InstanceFamily)> {
    let spectrum = parse_spectrum(kernel, truncation)?;
    let fam = match regime {
        Regime::A => build_regime_a_family(&spectrum, gamma, n, seed)?,
        Regime::B => build_regime_b_family(&spectrum, gamma, n, seed)?,
    };
    Ok((certify(&fam)?, fam))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub n: usize,
    pub gamma: f64,
    pub tuning: Tuning,
    pub route: SolveRoute,
    pub condition_estimate: f64,
    pub l2_error: f64,
}

impl FitReport {
    pub fn to_text(&self) -> String {
        format!(
            "n={}\ngamma={}\nR={}\nzeta={}\ndelta_n={}\nlambda_n={}\nroute={:?}\ncondition={}\nl2_error={}\n",
            self.n,
            self.gamma,
            self.tuning.radius,
            self.tuning.zeta,
            self.tuning.delta_n,
            self.tuning.lambda_n,
            self.route,
            self.condition_estimate,
            self.l2_error
        )
    }
}

/// One tuned fit on the first `n` and `gamma` of `config`.
pub fn fit_one(config: &SweepConfig) -> Result<FitReport> {
    config.validate()?;
    let (n, gamma) = (config.ns[0], config.gammas[0]);
    let kernel = config.kernel()?;
    let m = make_ensemble(config.ensemble, gamma)?;
    let tuning = tune(&kernel, &m, n, config.c0, config.zeta)?;
    let samples = m.sample_pairs(n, config.seed);
    let est = fit_with(&kernel, &samples, &m.reward(), gamma, tuning.lambda_n, SolveRoute::Auto)?;
    let err = l2_error(&est, &exact_value_function(&m), &stationary_density(&m))?;
    Ok(FitReport { n, gamma, tuning, route: est.route, condition_estimate: est.condition_estimate, l2_error: err })
}
