use kernel_lstd::experiments::fit_loglog_slope;
use kernel_lstd::kernel::{EigenSpectrum, IndexMap, MercerKernel, DEFAULT_TRUNCATION};
use kernel_lstd::mrp::{make_ensemble, EnsembleKind};
use kernel_lstd::theory::{
    compute_radius_r, critical_radius, kernel_complexity, regularity_ratio, statistical_dimension,
    CriticalRadiusProblem,
};
use proptest::prelude::*;

fn spectrum(kind: u8, alpha: f64, d: usize) -> EigenSpectrum {
    match kind {
        0 => EigenSpectrum::polynomial(alpha, 1.0, DEFAULT_TRUNCATION).unwrap(),
        1 => EigenSpectrum::exponential(DEFAULT_TRUNCATION).unwrap(),
        _ => EigenSpectrum::finite_linear((0..d).map(|j| 1.0 / (1.0 + j as f64)).collect()).unwrap(),
    }
}

fn problem_strategy() -> impl Strategy<Value = CriticalRadiusProblem> {
    (0u8..3, 0.55f64..3.0, 1usize..20, 1u32..7, -1f64..1.0, 0.05f64..0.99, -1f64..1.0).prop_map(
        |(kind, alpha, d, log_n, log_r, gamma, log_z)| CriticalRadiusProblem {
            spectrum: spectrum(kind, alpha, d),
            n: 10usize.pow(log_n),
            radius: 10f64.powf(log_r),
            gamma,
            zeta: 10f64.powf(log_z),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bisection_certificate(p in problem_strategy()) {
        let delta = critical_radius(&p).unwrap();
        let s = p.slope();
        let at = kernel_complexity(&p.spectrum, delta);
        prop_assert!(at <= s * delta * (1.0 + 1e-10), "C({}) = {} > {}", delta, at, s * delta);
        let below = 0.999 * delta;
        let c = kernel_complexity(&p.spectrum, below);
        prop_assert!(c > s * below * (1.0 - 1e-10), "C({}) = {} <= {}", below, c, s * below);
    }

    #[test]
    fn scale_covariance(p in problem_strategy(), log_c in -2f64..2.0) {
        let c = 10f64.powf(log_c);
        let scaled = CriticalRadiusProblem { radius: p.radius * c, zeta: p.zeta * c, ..p.clone() };
        let (a, b) = (critical_radius(&p).unwrap(), critical_radius(&scaled).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a, "{} vs {}", a, b);
    }

    #[test]
    fn dimension_brackets_the_radius(p in problem_strategy()) {
        let delta = critical_radius(&p).unwrap();
        let d = statistical_dimension(&p.spectrum, delta);
        let t = delta * delta;
        if d >= 1 {
            // Ties are resolved with a relative slack of 1e-12.
            prop_assert!(p.spectrum.eigenvalue(d) >= t * (1.0 - 1e-12));
        }
        prop_assert!(p.spectrum.eigenvalue(d + 1) < t);
    }
}

#[test]
fn linear_closed_form() {
    let p = CriticalRadiusProblem {
        spectrum: EigenSpectrum::finite_linear(vec![1.0; 4]).unwrap(),
        n: 400,
        radius: 1.0,
        gamma: 0.5,
        zeta: 1.0,
    };
    assert!((critical_radius(&p).unwrap() - 0.2).abs() <= 1e-9);
}

fn squared_radius_exponent(alpha: f64) -> f64 {
    let spectrum = EigenSpectrum::polynomial(alpha, 1.0, DEFAULT_TRUNCATION).unwrap();
    let points: Vec<(f64, f64)> = (0..=12)
        .map(|i| {
            let n = 10f64.powf(3.0 + i as f64 * 0.25).round() as usize;
            let p = CriticalRadiusProblem { spectrum: spectrum.clone(), n, radius: 1.0, gamma: 0.9, zeta: 1.0 };
            let d = critical_radius(&p).unwrap();
            (n as f64, d * d)
        })
        .collect();
    fit_loglog_slope(&points).unwrap().0
}

#[test]
fn polynomial_radius_exponent() {
    for alpha in [1.0, 0.6] {
        let want = -2.0 * alpha / (2.0 * alpha + 1.0);
        let got = squared_radius_exponent(alpha);
        assert!((got - want).abs() <= 0.02, "alpha {alpha}: {got} vs {want}");
    }
}

#[test]
fn regularity_ratio_stays_bounded_below() {
    let spectra = [spectrum(0, 1.0, 0), spectrum(0, 0.6, 0), spectrum(0, 2.0, 0), spectrum(1, 0.0, 0), spectrum(2, 0.0, 8)];
    for s in &spectra {
        let mut low = f64::INFINITY;
        for log_n in 2..=7 {
            for gamma in [0.5f64, 0.9, 0.99] {
                let sigma_bar = ((1.0 + gamma) / (5.0 * (1.0 - gamma))).sqrt();
                let p = CriticalRadiusProblem {
                    spectrum: s.clone(),
                    n: 10usize.pow(log_n),
                    radius: 1.0 / (1.0 - gamma),
                    gamma,
                    zeta: 2.0 * sigma_bar,
                };
                // Below the first eigenvalue the ratio is zero by definition.
                if statistical_dimension(&p.spectrum, critical_radius(&p).unwrap()) == 0 {
                    continue;
                }
                low = low.min(regularity_ratio(&p).unwrap());
            }
        }
        assert!(low >= 0.1, "{:?}: {low}", s.family);
    }
}

#[test]
fn snr_monotonicity() {
    let spectrum = EigenSpectrum::polynomial(1.0, 1.0, DEFAULT_TRUNCATION).unwrap();
    let base = CriticalRadiusProblem { spectrum, n: 1000, radius: 1.0, gamma: 0.9, zeta: 1.0 };
    let mut prev = critical_radius(&base).unwrap();
    for r in [2.0, 4.0, 8.0] {
        let d = critical_radius(&CriticalRadiusProblem { radius: r, ..base.clone() }).unwrap();
        assert!(d < prev);
        prev = d;
    }
}

#[test]
fn hard_radius_scales_with_horizon() {
    for spec in [EigenSpectrum::polynomial(1.0, 1.0, DEFAULT_TRUNCATION).unwrap(), EigenSpectrum::exponential(DEFAULT_TRUNCATION).unwrap()] {
        let k = MercerKernel::new(spec, IndexMap::Simulation);
        let scaled: Vec<f64> = [0.8, 0.9, 0.95]
            .iter()
            .map(|&g| compute_radius_r(&k, &make_ensemble(EnsembleKind::Hard, g).unwrap()).unwrap() * (1.0 - g))
            .collect();
        for w in scaled.windows(2) {
            assert!((w[1] / w[0] - 1.0).abs() <= 0.1, "{scaled:?}");
        }
    }
}
