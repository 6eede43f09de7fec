//! Sufficient stability conditions linking certificate constants to the
//! switching law.
//!
//! * EH: every `λ_i + λ > 0` and `Σ μ q_i / (1 + λ_i/λ) < 1`.
//! * UH: `Σ μ q_i (1 − e^{−λ_i T}) / (λ_i T) < 1`.
//! * GH: `θ̂ = max_i Σ_j μ p_{i,j} E[e^{−λ_{j,i} S}] < 1`, where `i` is the
//!   mode active during the holding interval and `j` the destination whose
//!   Lyapunov function is tracked across it.
//!
//! The per-switch contraction factor `η(κ)` of `E[V^{1+κ}]` and the UH
//! bound on `sup_t E[V_σ(t)(x(t))]` are also here.

use serde::Serialize;

use crate::certificates::{CertificateFamily, Rates};
use crate::linalg::Matrix;
use crate::signal::{relative_decay, HoldingDistribution, JumpKernel, Mode, SignalClass, SwitchingLaw};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConditionId {
    #[serde(rename = "E3-E4")]
    Exponential,
    #[serde(rename = "U3")]
    Uniform,
    #[serde(rename = "G3")]
    General,
}

impl ConditionId {
    pub fn for_class(class: SignalClass) -> Self {
        match class {
            SignalClass::EH => Self::Exponential,
            SignalClass::UH => Self::Uniform,
            SignalClass::GH => Self::General,
        }
    }
}

/// Contribution of one mode (EH/UH: summand; GH: row sum for that source mode).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Term {
    pub mode: Mode,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub condition: ConditionId,
    pub satisfied: bool,
    /// `1 − sum` (or `1 − θ̂`); absent when the condition is inapplicable.
    pub margin: Option<f64>,
    pub terms: Vec<Term>,
    pub inapplicable_reason: Option<String>,
}

impl ConditionVerdict {
    fn evaluated(condition: ConditionId, terms: Vec<Term>, total: f64) -> Self {
        let margin = 1.0 - total;
        Self { condition, satisfied: margin > 0.0, margin: Some(margin), terms, inapplicable_reason: None }
    }

    fn inapplicable(condition: ConditionId, reason: String) -> Self {
        Self { condition, satisfied: false, margin: None, terms: Vec::new(), inapplicable_reason: Some(reason) }
    }

    /// The evaluated sum or `θ̂`.
    pub fn value(&self) -> Option<f64> {
        self.margin.map(|m| 1.0 - m)
    }
}

fn same_len(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::dim(context, a, b))
    }
}

/// Exponential holding times with rate `rate`, i.i.d. destinations `q`.
pub fn check_eh(lambda: &[f64], mu: f64, q: &[f64], rate: f64) -> Result<ConditionVerdict> {
    same_len("check_eh", lambda.len(), q.len())?;
    let id = ConditionId::Exponential;
    let failing: Vec<String> = lambda
        .iter()
        .enumerate()
        .filter(|(_, &l)| !(l + rate > 0.0))
        .map(|(i, _)| format!("(E3) violated for mode {}", Mode(i)))
        .collect();
    if !failing.is_empty() {
        return Ok(ConditionVerdict::inapplicable(id, failing.join("; ")));
    }
    let terms: Vec<Term> = lambda
        .iter()
        .zip(q)
        .enumerate()
        .map(|(i, (&l, &qi))| Term { mode: Mode(i), value: mu * qi / (1.0 + l / rate) })
        .collect();
    let sum = terms.iter().map(|t| t.value).sum();
    Ok(ConditionVerdict::evaluated(id, terms, sum))
}

/// Uniform holding times on `(0, T]`, i.i.d. destinations `q`.
pub fn check_uh(lambda: &[f64], mu: f64, q: &[f64], t_max: f64) -> Result<ConditionVerdict> {
    same_len("check_uh", lambda.len(), q.len())?;
    if !(t_max > 0.0) {
        return Err(Error::domain(format!("T must be > 0, got {t_max}")));
    }
    let terms: Vec<Term> = lambda
        .iter()
        .zip(q)
        .enumerate()
        .map(|(i, (&l, &qi))| Term { mode: Mode(i), value: mu * qi * relative_decay(l * t_max) })
        .collect();
    let sum = terms.iter().map(|t| t.value).sum();
    Ok(ConditionVerdict::evaluated(ConditionId::Uniform, terms, sum))
}

/// General i.i.d. holding times, Markov destinations with matrix `transition`.
/// `lambda[(j, i)]` is the rate of `V_j` along `f_i`.
pub fn check_gh(
    lambda: &Matrix,
    mu: f64,
    transition: &Matrix,
    holding: &HoldingDistribution,
) -> Result<ConditionVerdict> {
    let n = transition.rows();
    if !lambda.is_square() || lambda.rows() != n || !transition.is_square() {
        return Err(Error::dim("check_gh", n, lambda.rows()));
    }
    let id = ConditionId::General;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            let p = transition[(i, j)];
            if p == 0.0 {
                continue;
            }
            match holding.mgf(lambda[(j, i)]) {
                Some(m) => row += mu * p * m,
                None => {
                    return Ok(ConditionVerdict::inapplicable(
                        id,
                        format!(
                            "E[exp(-λ S)] diverges for λ_{{{},{}}} = {}",
                            Mode(j),
                            Mode(i),
                            lambda[(j, i)]
                        ),
                    ))
                }
            }
        }
        terms.push(Term { mode: Mode(i), value: row });
    }
    let theta = terms.iter().map(|t| t.value).fold(f64::NEG_INFINITY, f64::max);
    Ok(ConditionVerdict::evaluated(id, terms, theta))
}

/// Evaluates the condition matching the class of `law` with the constants of
/// `cert`. GH laws need the full rate matrix.
pub fn check_for_law(cert: &CertificateFamily, law: &SwitchingLaw) -> Result<ConditionVerdict> {
    if cert.modes() != law.modes() {
        return Err(Error::dim("certificate modes", law.modes(), cert.modes()));
    }
    match (law.holding(), &law.jumps().kernel) {
        (_, JumpKernel::Markov { transition }) => match cert.rates() {
            Rates::Matrix(lambda) => check_gh(lambda, cert.mu(), transition, law.holding()),
            Rates::PerMode(_) => Err(Error::domain("GH laws need the full rate matrix λ_{i,j}")),
        },
        (HoldingDistribution::Exponential { rate }, JumpKernel::Iid { q }) => {
            check_eh(&cert.rates().per_mode(), cert.mu(), q, *rate)
        }
        (HoldingDistribution::Uniform { max }, JumpKernel::Iid { q }) => {
            check_uh(&cert.rates().per_mode(), cert.mu(), q, *max)
        }
        (h, JumpKernel::Iid { .. }) => Err(Error::domain(format!("no condition for i.i.d. jumps with {h:?} holding"))),
    }
}

/// Holding-time form entering `η(κ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaForm {
    Exponential { rate: f64 },
    Uniform { max: f64 },
}

/// Per-switch contraction factor of `E[V^{1+κ}]` at the switching instants.
///
/// Returns `None` for the exponential form when some `(1+κ)λ_j + λ ≤ 0`,
/// where the bound does not apply.
pub fn eta_kappa(form: EtaForm, kappa: f64, lambda: &[f64], mu: f64, q: &[f64]) -> Result<Option<f64>> {
    same_len("eta_kappa", lambda.len(), q.len())?;
    if !(kappa >= 0.0) {
        return Err(Error::domain(format!("κ must be >= 0, got {kappa}")));
    }
    let scale = 1.0 + kappa;
    let mu_pow = mu.powf(scale);
    let terms = lambda.iter().zip(q);
    let eta = match form {
        EtaForm::Exponential { rate } => {
            if lambda.iter().any(|&l| !(scale * l + rate > 0.0)) {
                return Ok(None);
            }
            terms.map(|(&l, &qj)| mu_pow * qj / (1.0 + l * scale / rate)).sum()
        }
        EtaForm::Uniform { max } => terms.map(|(&l, &qj)| mu_pow * qj * relative_decay(l * scale * max)).sum(),
    };
    Ok(Some(eta))
}

/// `η(κ)` for an EH or UH law.
pub fn eta_for_law(law: &SwitchingLaw, kappa: f64, lambda: &[f64], mu: f64) -> Result<Option<f64>> {
    let form = match (law.class(), law.holding()) {
        (SignalClass::EH, HoldingDistribution::Exponential { rate }) => EtaForm::Exponential { rate: *rate },
        (SignalClass::UH, HoldingDistribution::Uniform { max }) => EtaForm::Uniform { max: *max },
        _ => return Err(Error::domain(format!("η(κ) is defined for EH and UH laws, not {}", law.class()))),
    };
    let q = law.iid_probabilities().expect("EH/UH laws have i.i.d. destinations");
    eta_kappa(form, kappa, lambda, mu, q)
}

/// `(z − 1 + e^{−z}) / z²`, continuous through 0 with limit 1/2.
fn integral_weight(z: f64) -> f64 {
    if z.abs() < 1e-2 {
        // Σ (−z)^k / (k+2)!
        let mut term = 0.5;
        let mut sum = 0.5;
        for k in 1..8 {
            term *= -z / (k + 2) as f64;
            sum += term;
        }
        sum
    } else {
        (z + (-z).exp_m1()) / (z * z)
    }
}

/// `max_i (1/λ_i − (1 − e^{−λ_i T}) / (λ_i² T))`, equal to `T/2` for `λ_i = 0`.
pub fn uh_integral_constant(lambda: &[f64], t_max: f64) -> f64 {
    lambda.iter().map(|&l| t_max * integral_weight(l * t_max)).fold(f64::NEG_INFINITY, f64::max)
}

/// Upper bound `M α₂(‖x₀‖) / (1 − η(0))` on `sup_t E[V_σ(t)(x(t))]` for a UH law.
pub fn mean_bound_uh(cert: &CertificateFamily, law: &SwitchingLaw, x0_norm: f64) -> Result<f64> {
    let max = match (law.class(), law.holding()) {
        (SignalClass::UH, HoldingDistribution::Uniform { max }) => *max,
        _ => return Err(Error::domain("mean_bound_uh needs a UH law")),
    };
    let lambda = cert.rates().per_mode();
    let eta0 = eta_for_law(law, 0.0, &lambda, cert.mu())?.expect("uniform η is always finite");
    if !(eta0 < 1.0) {
        return Err(Error::domain(format!("η(0) = {eta0} ≥ 1: the UH condition does not hold")));
    }
    Ok(uh_integral_constant(&lambda, max) * cert.alpha2().eval(x0_norm) / (1.0 - eta0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::Rates;

    #[test]
    fn eh_worked_example() {
        let v = check_eh(&[2.0, -2.0], 1.01, &[0.8, 0.2], 6.0).unwrap();
        assert!(v.satisfied);
        assert!((v.value().unwrap() - 0.909).abs() < 1e-12);
        assert!((v.margin.unwrap() - 0.091).abs() < 1e-12);
        assert!((v.terms[0].value - 0.606).abs() < 1e-12);
        assert!((v.terms[1].value - 0.303).abs() < 1e-12);
    }

    #[test]
    fn eh_unsatisfied_and_inapplicable() {
        let v = check_eh(&[2.0, -2.0], 1.01, &[0.5, 0.5], 6.0).unwrap();
        assert!(!v.satisfied);
        assert!((v.value().unwrap() - 1.13625).abs() < 1e-12);
        let v = check_eh(&[2.0, -2.0], 1.01, &[0.8, 0.2], 2.0).unwrap();
        assert!(!v.satisfied);
        assert_eq!(v.inapplicable_reason.as_deref(), Some("(E3) violated for mode 2"));
        assert!(v.margin.is_none());
    }

    #[test]
    fn uh_examples() {
        let v = check_uh(&[1.0], 1.01, &[1.0], 1.0).unwrap();
        assert!(v.satisfied);
        assert!((v.value().unwrap() - 1.01 * (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let v = check_uh(&[0.0, 1.0], 1.2, &[0.25, 0.75], 2.0).unwrap();
        assert_eq!(v.terms[0].value, 1.2 * 0.25);
        let v = check_uh(&[-1.0], 1.01, &[1.0], 1.0).unwrap();
        assert!(!v.satisfied);
        assert!((v.value().unwrap() - 1.01 * (std::f64::consts::E - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn gh_single_mode() {
        let h = HoldingDistribution::exponential(6.0).unwrap();
        let v = check_gh(&Matrix::diag(&[2.0]), 1.01, &Matrix::identity(1), &h).unwrap();
        assert!(v.satisfied);
        assert!((v.value().unwrap() - 0.7575).abs() < 1e-12);
        let v = check_gh(&Matrix::diag(&[-7.0]), 1.01, &Matrix::identity(1), &h).unwrap();
        assert!(!v.satisfied);
        assert!(v.inapplicable_reason.is_some());
        // the divergence boundary itself
        let v = check_gh(&Matrix::diag(&[-6.0]), 1.01, &Matrix::identity(1), &h).unwrap();
        assert!(v.inapplicable_reason.is_some());
    }

    #[test]
    fn gh_two_mode_indexing() {
        // λ_{i,j}: V_i along f_j. Mode 1 stable (rate 2), mode 2 unstable (rate -2).
        let lambda = Matrix::from_rows(&[vec![2.0, -2.0], vec![2.0, -2.0]]).unwrap();
        let p = Matrix::from_rows(&[vec![0.8, 0.2], vec![0.8, 0.2]]).unwrap();
        let h = HoldingDistribution::exponential(6.0).unwrap();
        let v = check_gh(&lambda, 1.01, &p, &h).unwrap();
        // active mode 1: every destination function decays at rate 2 → 1.01·6/8
        assert!((v.terms[0].value - 1.01 * 0.75).abs() < 1e-12);
        // active mode 2: growth at rate 2 → 1.01·6/4
        assert!((v.terms[1].value - 1.01 * 1.5).abs() < 1e-12);
        assert!(!v.satisfied);
        assert!((v.value().unwrap() - 1.515).abs() < 1e-12);
    }

    #[test]
    fn eta_matches_condition_sums() {
        let eta = eta_kappa(EtaForm::Exponential { rate: 6.0 }, 0.0, &[2.0, -2.0], 1.01, &[0.8, 0.2]).unwrap();
        let eh = check_eh(&[2.0, -2.0], 1.01, &[0.8, 0.2], 6.0).unwrap();
        assert_eq!(eta, eh.value());
        let eta = eta_kappa(EtaForm::Uniform { max: 1.5 }, 0.0, &[0.3, -0.4], 1.1, &[0.6, 0.4]).unwrap();
        let uh = check_uh(&[0.3, -0.4], 1.1, &[0.6, 0.4], 1.5).unwrap();
        assert_eq!(eta, uh.value());
    }

    #[test]
    fn eta_eh_domain() {
        let f = EtaForm::Exponential { rate: 6.0 };
        assert!(eta_kappa(f, 2.0, &[2.0, -2.0], 1.01, &[0.8, 0.2]).unwrap().is_none());
        assert!(eta_kappa(f, 3.0, &[2.0, -2.0], 1.01, &[0.8, 0.2]).unwrap().is_none());
        assert!(eta_kappa(f, 1.99, &[2.0, -2.0], 1.01, &[0.8, 0.2]).unwrap().is_some());
        assert!(eta_kappa(f, -0.1, &[2.0], 1.01, &[1.0]).is_err());
    }

    #[test]
    fn integral_constant_limits() {
        assert!((uh_integral_constant(&[1.0], 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((uh_integral_constant(&[0.0], 3.0) - 1.5).abs() < 1e-15);
        // series and direct branch agree across the cutoff
        for z in [1e-2 * (1.0 - 1e-9), -1e-2 * (1.0 - 1e-9)] {
            let direct = (z + (-z as f64).exp_m1()) / (z * z);
            assert!((integral_weight(z) - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn uh_mean_bound() {
        let law = SwitchingLaw::uh(1.0, vec![1.0], Mode(0)).unwrap();
        let cert = CertificateFamily::quadratic(vec![Matrix::diag(&[1.0])], Rates::PerMode(vec![1.0]), 1.01).unwrap();
        let b = mean_bound_uh(&cert, &law, 1.0).unwrap();
        let e1 = (-1.0f64).exp();
        let expect = e1 / (1.0 - 1.01 * (1.0 - e1));
        assert!((b - expect).abs() < 1e-14);
        assert!((b - 1.01748).abs() < 1e-5);
        assert_eq!(mean_bound_uh(&cert, &law, 0.0).unwrap(), 0.0);

        let bad = CertificateFamily::quadratic(vec![Matrix::diag(&[1.0])], Rates::PerMode(vec![-1.0]), 1.01).unwrap();
        assert!(mean_bound_uh(&bad, &law, 1.0).is_err());
    }
}
