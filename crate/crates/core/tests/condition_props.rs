//! Condition evaluators: MGF identities against independent quadrature and
//! the monotonicity and limit properties of the conditions.

use proptest::prelude::*;
use switchstab::conditions::{check_eh, check_gh, check_uh, eta_kappa, EtaForm};
use switchstab::{HoldingDistribution, Matrix};

/// Composite 5-point Gauss–Legendre rule.
fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [0.0, 0.538_469_310_105_683_1, -0.538_469_310_105_683_1, 0.906_179_845_938_664, -0.906_179_845_938_664];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| {
            let mid = a + (k as f64 + 0.5) * h;
            X.iter().zip(W).map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

#[test]
fn mgf_closed_forms_match_quadrature() {
    let grid: Vec<f64> = (0..20).map(|k| -1.0 + 0.45 * k as f64).collect();
    let exp = HoldingDistribution::exponential(2.0).unwrap();
    let uni = HoldingDistribution::uniform(2.0).unwrap();
    let point = HoldingDistribution::point_mass(1.0).unwrap();
    for &s in &grid {
        let q_exp = gauss_legendre(|t| 2.0 * (-2.0 * t).exp() * (-s * t).exp(), 0.0, 60.0, 4000);
        assert!((exp.mgf(s).unwrap() - q_exp).abs() <= 1e-10 * q_exp, "exp s={s}");
        let q_uni = gauss_legendre(|t| 0.5 * (-s * t).exp(), 0.0, 2.0, 200);
        assert!((uni.mgf(s).unwrap() - q_uni).abs() <= 1e-10 * q_uni, "uniform s={s}");
        // a point mass has no density: its expectation is evaluation at 1
        assert!((point.mgf(s).unwrap() - (-s).exp()).abs() <= 1e-12 * (-s).exp());
    }
}

#[test]
fn tabulated_mgf_matches_quadrature() {
    // inverse CDF through (0, 0.2), (0.3, 0.5), (1, 3): piecewise-constant density
    let tab = HoldingDistribution::tabulated(vec![0.0, 0.3, 1.0], vec![0.2, 0.5, 3.0]).unwrap();
    for k in 0..20 {
        let s = -1.0 + 0.4 * k as f64;
        let oracle = gauss_legendre(|t| 0.3 / 0.3 * (-s * t).exp(), 0.2, 0.5, 200)
            + gauss_legendre(|t| 0.7 / 2.5 * (-s * t).exp(), 0.5, 3.0, 400);
        assert!((tab.mgf(s).unwrap() - oracle).abs() <= 1e-10 * oracle, "s={s}");
    }
}

#[test]
fn eh_worked_example() {
    let v = check_eh(&[2.0, -2.0], 1.01, &[0.8, 0.2], 6.0).unwrap();
    let oracle = 1.01 * 0.8 / (1.0 + 2.0 / 6.0) + 1.01 * 0.2 / (1.0 - 2.0 / 6.0);
    assert!((v.value().unwrap() - oracle).abs() < 1e-12);
    assert!((v.value().unwrap() - 0.909).abs() < 1e-12);
    assert!(v.satisfied);
}

#[test]
fn eh_margin_monotone_in_rate_for_uniform_signs() {
    let margin = |lambda: &[f64], rate: f64| check_eh(lambda, 1.01, &[0.6, 0.4], rate).unwrap().margin.unwrap();
    let rates: Vec<f64> = (0..20).map(|k| 2.5 + k as f64).collect();
    // all modes unstable: faster switching helps
    let unstable: Vec<f64> = rates.iter().map(|&r| margin(&[-0.5, -2.0], r)).collect();
    assert!(unstable.windows(2).all(|w| w[0] < w[1]));
    // all modes stable: faster switching hurts
    let stable: Vec<f64> = rates.iter().map(|&r| margin(&[0.5, 2.0], r)).collect();
    assert!(stable.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn eh_margin_mixed_signs_is_not_monotone() {
    // For λ = (2, −2), q = (0.8, 0.2) the sum μ Σ q_i r/(r+λ_i) has zero
    // derivative at r = 6, so rate 6 is the best rate for this pair.
    let sum = |r: f64| 1.01 * (0.8 * r / (r + 2.0) + 0.2 * r / (r - 2.0));
    for r in [3.0, 6.0, 12.0] {
        let v = check_eh(&[2.0, -2.0], 1.01, &[0.8, 0.2], r).unwrap();
        assert!((v.value().unwrap() - sum(r)).abs() < 1e-12);
    }
    let m = |r| check_eh(&[2.0, -2.0], 1.01, &[0.8, 0.2], r).unwrap().margin.unwrap();
    assert!(m(6.0) > m(12.0) && m(6.0) > m(3.0));
}

#[test]
fn eta_increases_with_kappa() {
    let (lambda, q) = ([2.0, -2.0], [0.8, 0.2]);
    for form in [EtaForm::Exponential { rate: 6.0 }, EtaForm::Uniform { max: 1.0 }] {
        let etas: Vec<f64> =
            (0..20).map(|k| eta_kappa(form, 0.025 * k as f64, &lambda, 1.01, &q).unwrap().unwrap()).collect();
        assert!(etas.windows(2).all(|w| w[0] < w[1]), "{form:?}: {etas:?}");
        // continuity: small κ steps give small η steps
        assert!(etas.windows(2).all(|w| w[1] - w[0] < 0.05), "{form:?}: {etas:?}");
        let eta0 = eta_kappa(form, 0.0, &lambda, 1.01, &q).unwrap().unwrap();
        let near = eta_kappa(form, 1e-9, &lambda, 1.01, &q).unwrap().unwrap();
        assert!((near - eta0).abs() < 1e-7);
    }
}

#[test]
fn gh_single_mode_reduces_to_eh() {
    for (lambda, rate) in [(1.0, 6.0), (-0.5, 2.0), (3.0, 0.5), (0.0, 1.0)] {
        let eh = check_eh(&[lambda], 1.01, &[1.0], rate).unwrap();
        let gh = check_gh(
            &Matrix::diag(&[lambda]),
            1.01,
            &Matrix::identity(1),
            &HoldingDistribution::exponential(rate).unwrap(),
        )
        .unwrap();
        assert!((eh.terms[0].value - gh.terms[0].value).abs() < 1e-12);
        assert_eq!(eh.satisfied, gh.satisfied);
    }
}

proptest! {
    #[test]
    fn uh_satisfied_when_every_mode_decays(
        lambda in prop::collection::vec(1e-3f64..50.0, 1..6),
        t in 1e-3f64..20.0,
        weights in prop::collection::vec(0.01f64..1.0, 6),
    ) {
        let w = &weights[..lambda.len()];
        let total: f64 = w.iter().sum();
        let q: Vec<f64> = w.iter().map(|x| x / total).collect();
        let v = check_uh(&lambda, 1.0 + 1e-9, &q, t).unwrap();
        prop_assert!(v.satisfied, "{v:?}");
        for (term, qi) in v.terms.iter().zip(&q) {
            prop_assert!(term.value < qi * (1.0 + 1e-9));
        }
    }

    #[test]
    fn evaluators_are_deterministic(l in -5.0f64..5.0, rate in 0.1f64..10.0) {
        let a = check_eh(&[l, 1.0], 1.1, &[0.5, 0.5], rate).unwrap();
        let b = check_eh(&[l, 1.0], 1.1, &[0.5, 0.5], rate).unwrap();
        prop_assert_eq!(a, b);
    }
}
