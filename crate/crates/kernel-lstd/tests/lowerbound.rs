use kernel_lstd::kernel::{parse_spectrum, DEFAULT_TRUNCATION};
use kernel_lstd::lowerbound::{
    arrowhead_spectrum, build_regime_a_family, build_regime_b_family, certify, hypercube_packing, pairwise_divergence,
    read_family, write_family, InstanceFamily,
};
use kernel_lstd::mrp::{exact_value_function, stationary_density};
use kernel_lstd::walsh_basis::walsh_transform;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::sync::OnceLock;

fn poly1() -> kernel_lstd::kernel::EigenSpectrum {
    parse_spectrum("poly:1", DEFAULT_TRUNCATION).unwrap()
}

fn family_a() -> &'static InstanceFamily {
    static F: OnceLock<InstanceFamily> = OnceLock::new();
    F.get_or_init(|| build_regime_a_family(&poly1(), 0.95, 100_000, 1).unwrap())
}

fn family_b() -> &'static InstanceFamily {
    static F: OnceLock<InstanceFamily> = OnceLock::new();
    F.get_or_init(|| build_regime_b_family(&poly1(), 0.9, 10_000, 1).unwrap())
}

fn hamming_scan(vectors: &[Vec<bool>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..vectors.len() {
        for j in 0..i {
            let diff = (0..vectors[i].len()).filter(|&k| vectors[i][k] != vectors[j][k]).count();
            best = best.min(diff as f64 / vectors[i].len() as f64);
        }
    }
    best
}

#[test]
fn packing_of_dimension_forty() {
    let p = hypercube_packing(40, 4.0, 9).unwrap();
    assert!(p.vectors.len() >= 55);
    assert!(hamming_scan(&p.vectors) >= 0.25);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn packings_are_separated(dim in 1usize..60, seed in any::<u64>()) {
        let p = hypercube_packing(dim, dim as f64 / 10.0, seed).unwrap();
        prop_assert!(p.vectors.iter().all(|v| v.len() == dim));
        if p.vectors.len() > 1 {
            prop_assert!(hamming_scan(&p.vectors) >= 0.25);
        }
    }
}

/// Walsh energy of `f` outside `allowed`.
fn energy_outside(f: &kernel_lstd::walsh_basis::DyadicFunction, allowed: &[usize]) -> f64 {
    walsh_transform(f).coeffs().iter().enumerate().filter(|(a, _)| !allowed.contains(a)).map(|(_, c)| c * c).sum()
}

#[test]
fn regime_a_instances() {
    let fam = family_a();
    let p = fam.params.p;
    assert!(fam.params.d_n >= 2);
    let base = fam.base_value();
    let allowed: Vec<usize> = (2..=fam.params.d_n).map(|j| 2 * j - 1).collect();
    for (m, inst) in fam.instances.iter().enumerate() {
        for c in inst.chains() {
            assert!(c.dp.abs() <= p / 8.0, "instance {m}: |dp| = {}", c.dp.abs());
        }
        let theta = exact_value_function(inst);
        let closed = fam.closed_form_value(m);
        for (a, b) in theta.values().iter().zip(closed.values()) {
            assert!((a - b).abs() <= 1e-12, "instance {m}");
        }
        assert!(stationary_density(inst).values().iter().all(|&v| (v - 1.0).abs() <= 1e-12));
        let diff = theta.combine(1.0, &base, -1.0);
        assert!(energy_outside(&diff, &allowed) <= 1e-12, "instance {m}");
    }
    // The zero packing vector is the base MRP.
    assert!(fam.packing.vectors[0].iter().all(|b| !b));
    let zero = exact_value_function(&fam.instances[0]);
    assert!(zero.values().iter().zip(base.values()).all(|(a, b)| (a - b).abs() <= 1e-12));
}

#[test]
fn regime_a_certifies() {
    let report = certify(family_a()).unwrap();
    assert!(report.pass, "{}", report.to_text());
    assert!(report.max_pairwise_kl <= report.d_n as f64 / 40.0);
    let gamma = 0.95;
    for v in &report.validity {
        let s = v.check("sigma_sq").unwrap();
        assert!(s.value <= (1.0 + gamma) / (5.0 * (1.0 - gamma)));
        assert!(v.check("hilbert_norm").unwrap().value <= report.r_bar);
        assert!(v.check("sup_norm_ratio").unwrap().value <= report.r_bar);
    }
}

/// Four-cell joint law `diag(pi) P` of one chain.
fn joint(c: &kernel_lstd::mrp::TwoStateChain) -> [f64; 4] {
    let (pi, p) = (c.stationary(), c.matrix());
    [pi[0] * p[0][0], pi[0] * p[0][1], pi[1] * p[1][0], pi[1] * p[1][1]]
}

#[test]
fn divergences_match_enumeration() {
    for fam in [family_a(), family_b()] {
        let m = fam.instances.len();
        for i in 0..m {
            for j in 0..m {
                let (chi2, kl_n) = pairwise_divergence(fam, i, j);
                let k = fam.blocks() as f64;
                let mut want = 0.0;
                for (ca, cb) in fam.instances[i].chains().iter().zip(fam.instances[j].chains()) {
                    let (f, g) = (joint(ca), joint(cb));
                    want += (0..4).map(|c| (g[c] - f[c]).powi(2) / f[c]).sum::<f64>();
                }
                assert!((chi2 - want / k).abs() <= 1e-12 * (1.0 + want));
                assert!(chi2 >= 0.0 && kl_n >= 0.0);
                assert!(kl_n <= fam.n as f64 * chi2 * (1.0 + 1e-12) + 1e-15);
                let same = fam.instances[i].chains().iter().zip(fam.instances[j].chains()).all(|(a, b)| a.dp == b.dp);
                assert_eq!(chi2 == 0.0, same, "pair ({i}, {j})");
            }
        }
    }
}

#[test]
fn regime_b_instances() {
    let fam = family_b();
    let base = fam.base_value();
    let allowed: Vec<usize> = (2..=fam.params.d_n).map(|j| 2 * (j - 1)).collect();
    for (m, inst) in fam.instances.iter().enumerate() {
        assert!(stationary_density(inst).min_value() >= 0.5, "instance {m}");
        let theta = exact_value_function(inst);
        let shift = fam.perturbation_function(m).scale(1.0 / (1.0 - fam.gamma));
        let diff = theta.combine(1.0, &base, -1.0);
        for (a, b) in diff.values().iter().zip(shift.values()) {
            assert!((a - b).abs() <= 1e-12, "instance {m}");
        }
        assert!(energy_outside(&diff, &allowed) <= 1e-12, "instance {m}");
    }
}

#[test]
fn regime_b_certifies() {
    let report = certify(family_b()).unwrap();
    assert!(report.pass, "{}", report.to_text());
    let floor = (family_b().params.p / (50.0 * 0.1)) * ((report.d_n as f64 - 1.0) / 1e4).sqrt();
    assert!(report.min_value_gap >= floor * (1.0 - 1e-12));
    for v in &report.validity {
        assert!(v.check("density_min").unwrap().value >= 0.5);
        assert!(v.check("interlacing_excess").unwrap().pass);
    }
}

#[test]
fn round_trip_recertifies() {
    for fam in [family_a(), family_b()] {
        let text = write_family(fam);
        let back = read_family(&text).unwrap();
        assert_eq!(write_family(&back), text);
        assert_eq!(certify(&back).unwrap(), certify(fam).unwrap());
    }
}

fn arrowhead_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..12).prop_flat_map(|d| {
        (prop::collection::vec(0.01f64..1.0, d), prop::collection::vec(-0.3f64..0.3, d - 1)).prop_map(|(mut mu, x)| {
            mu.sort_by(|a, b| b.total_cmp(a));
            (mu, x)
        })
    })
}

proptest! {
    #[test]
    fn arrowhead_matches_dense_oracle((mu, x) in arrowhead_case()) {
        let d = mu.len();
        let a = DMatrix::from_fn(d, d, |i, j| match (i, j) {
            _ if i == j => mu[i],
            (0, j) => x[j - 1],
            (i, 0) => x[i - 1],
            _ => 0.0,
        });
        let eig = a.symmetric_eigen();
        let mut want: Vec<(f64, f64)> = (0..d)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().map(|v| v.abs()).sum()))
            .collect();
        want.sort_by(|p, q| q.0.total_cmp(&p.0));
        let (vals, l1) = arrowhead_spectrum(&mu, &x);
        for k in 0..d {
            prop_assert!((vals[k] - want[k].0).abs() <= 1e-12);
            // Eigenvectors are only defined up to rotation inside clusters.
            let gap = (0..d).filter(|&o| o != k).map(|o| (want[o].0 - want[k].0).abs()).fold(f64::INFINITY, f64::min);
            if gap > 1e-6 {
                prop_assert!((l1[k] - want[k].1).abs() <= 1e-8);
            }
        }
        // Cauchy interlacing against diag(mu_2, ..., mu_d).
        for j in 1..d {
            prop_assert!(vals[j - 1] >= mu[j] - 1e-12);
            prop_assert!(mu[j] >= vals[j] - 1e-12);
        }
    }
}

#[test]
fn two_by_two_arrowhead() {
    let (vals, l1) = arrowhead_spectrum(&[1.0, 0.25], &[0.1]);
    let root = (0.5625f64 + 0.04).sqrt();
    assert!((vals[0] - (1.25 + root) / 2.0).abs() < 1e-14);
    assert!((vals[1] - (1.25 - root) / 2.0).abs() < 1e-14);
    let (same, ones) = arrowhead_spectrum(&[0.9, 0.5, 0.1], &[0.0, 0.0]);
    assert_eq!(same, vec![0.9, 0.5, 0.1]);
    assert!(ones.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    assert!(l1.iter().all(|&v| v >= 1.0 && v <= 2f64.sqrt() + 1e-12));
}
