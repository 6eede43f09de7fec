//! Monte Carlo ensembles: reproducibility, record consistency and decay.

use switchstab::certificates::Rates;
use switchstab::montecarlo::{contraction_factor, decay_check, gasp_estimate, log_decay_slope, run_ensemble, Scenario};
use switchstab::{CertificateFamily, Matrix, Mode, SubsystemFamily, SwitchingLaw, VectorFieldSpec};

fn scalar_family(rates: &[f64]) -> SubsystemFamily {
    SubsystemFamily::new(rates.iter().map(|&a| VectorFieldSpec::linear(Matrix::diag(&[a])).unwrap()).collect()).unwrap()
}

fn unit_cert(modes: usize, lambda: Vec<f64>) -> CertificateFamily {
    CertificateFamily::quadratic(vec![Matrix::diag(&[1.0]); modes], Rates::PerMode(lambda), 1.01).unwrap()
}

fn eh_scenario(q: Vec<f64>, horizon: f64, step: f64) -> Scenario {
    let law = SwitchingLaw::eh(6.0, q, Mode(0)).unwrap();
    Scenario::new(scalar_family(&[-1.0, 1.0]), law, vec![1.0], horizon)
        .unwrap()
        .with_certificate(unit_cert(2, vec![2.0, -2.0]))
        .unwrap()
        .with_step(step)
        .unwrap()
}

#[test]
fn ensembles_are_reproducible() {
    let scn = eh_scenario(vec![0.8, 0.2], 5.0, 1e-2);
    let a = run_ensemble(&scn, 200, 7, 2.5).unwrap();
    let b = run_ensemble(&scn, 200, 7, 2.5).unwrap();
    assert_eq!(a, b);
    let c = run_ensemble(&scn, 200, 8, 2.5).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn record_norms_are_ordered() {
    let scn = eh_scenario(vec![0.5, 0.5], 5.0, 1e-2);
    let stats = run_ensemble(&scn, 300, 3, 1.0).unwrap();
    for r in &stats.records {
        assert!(r.terminal_norm <= r.tail_sup && r.tail_sup <= r.sup_norm, "{r:?}");
        assert!(r.sup_norm >= 1.0);
    }
    assert_eq!(stats.records.len(), 300);
    assert!(stats.records.iter().enumerate().all(|(k, r)| r.index == k as u64));
}

#[test]
fn contracting_mode_terminal_norm() {
    let law = SwitchingLaw::eh(6.0, vec![1.0], Mode(0)).unwrap();
    let scn = Scenario::new(scalar_family(&[-1.0]), law, vec![1.0], 4.0).unwrap();
    let stats = run_ensemble(&scn, 50, 1, 2.0).unwrap();
    for t in stats.terminal_norms() {
        assert!((t - (-4.0f64).exp()).abs() < 1e-6);
    }
    for (t, m) in stats.sample_times.iter().zip(&stats.mean_alpha1) {
        assert!((m - (-2.0 * t).exp()).abs() < 1e-6, "t = {t}");
    }
}

#[test]
fn switch_moments_decay_at_the_predicted_rate() {
    let scn = eh_scenario(vec![0.8, 0.2], 6.0, 5e-3);
    let cert = scn.cert.clone().unwrap();
    let stats = run_ensemble(&scn, 4000, 11, 3.0).unwrap();
    let report = decay_check(&stats, &cert, &scn.law, &scn.x0).unwrap();
    assert!(report.pass, "{report:?}");
    assert!(!report.rows.is_empty());
    let eta = contraction_factor(&cert, &scn.law).unwrap();
    let slope = log_decay_slope(&stats, 500).unwrap();
    assert!(slope <= eta.ln() + 0.05, "slope {slope} vs ln η {}", eta.ln());
}

#[test]
fn negative_control_grows() {
    let scn = eh_scenario(vec![0.2, 0.8], 10.0, 1e-2);
    let stats = run_ensemble(&scn, 500, 5, 5.0).unwrap();
    assert!(stats.median_terminal_norm() > 1.0);
    assert!(contraction_factor(scn.cert.as_ref().unwrap(), &scn.law).is_err());
}

#[test]
fn exceedance_probability_is_monotone() {
    let scn = eh_scenario(vec![0.8, 0.2], 5.0, 1e-2);
    let stats = run_ensemble(&scn, 500, 2, 2.5).unwrap();
    let est: Vec<_> = [1.0, 0.1, 0.01].iter().map(|&e| gasp_estimate(&stats, e, 2.5).unwrap()).collect();
    assert!(est.windows(2).all(|w| w[0].exceedances <= w[1].exceedances));
    for e in &est {
        assert!(e.lower <= e.estimate && e.estimate <= e.upper);
    }
    assert!(gasp_estimate(&stats, 0.1, 1.0).is_err());
}

#[test]
fn invalid_runs_are_rejected() {
    let scn = eh_scenario(vec![0.8, 0.2], 5.0, 1e-2);
    assert!(run_ensemble(&scn, 0, 1, 1.0).is_err());
    assert!(run_ensemble(&scn, 10, 1, 6.0).is_err());
}
