//! Feedback synthesis for control-affine families
//! `ẋ = f_i(x) + Σ_j g_{i,j}(x) u_j` with unconstrained inputs.
//!
//! The mode-dependent universal formula picks, for a Lyapunov function `V_i`
//! and target rate `λ_i`,
//!
//! ```text
//! W̄_i = L_{f_i}V_i + λ_i V_i,   W̃_i = Σ_j (L_{g_{i,j}}V_i)²,
//! k_{i,j}(x) = −L_{g_{i,j}}V_i(x) · φ(W̄_i(x), W̃_i(x)),
//! φ(a, b) = (a + √(a² + b²)) / b  for b ≠ 0,  0 otherwise,
//! ```
//!
//! which gives `L_{f_i}V_i + Σ_j k_{i,j} L_{g_{i,j}}V_i = −λ_i V_i − √(W̄_i² + W̃_i²)`
//! wherever `W̃_i > 0`. Mode-independent linear or polynomial gains are also
//! supported; for those only the decrease check applies.

use std::sync::Arc;

use serde::Serialize;

use crate::certificates::{exceeds, random_direction, CertificateFamily, Inequality, LyapunovSpec, Violation};
use crate::dynamics::{PolynomialMap, SubsystemFamily, VectorFieldSpec};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::rng_from_seed;
use crate::signal::Mode;
use crate::{Error, Result};

/// Directions per radius in [`small_control_probe`].
pub const PROBE_DIRECTIONS: usize = 100;
const PROBE_SEED: u64 = 0x00C4_0B3E;

/// `φ(a, b)`; zero when `b = 0`.
pub fn phi(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else if a < 0.0 {
        // rationalised to avoid cancelling a + |a| for small b
        b / (a.hypot(b) - a)
    } else {
        (a + a.hypot(b)) / b
    }
}

/// A state-feedback law.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    /// Mode-dependent universal formula from per-mode `V_i` and target `λ_i`.
    Universal { functions: Vec<LyapunovSpec>, rates: Vec<f64> },
    /// `u = K x`, shared by all modes.
    LinearGain { gain: Matrix },
    /// `u = k̄(x)`, shared by all modes.
    Polynomial { map: PolynomialMap },
}

impl ControllerSpec {
    pub fn universal(functions: Vec<LyapunovSpec>, rates: Vec<f64>) -> Result<Self> {
        if functions.is_empty() || functions.len() != rates.len() {
            return Err(Error::invalid("universal controller", "need one target rate per Lyapunov function"));
        }
        Ok(Self::Universal { functions, rates })
    }

    /// Universal controller targeting the certificate's per-mode rates.
    pub fn universal_from(cert: &CertificateFamily) -> Result<Self> {
        Self::universal(cert.functions().to_vec(), cert.rates().per_mode())
    }

    pub fn linear_gain(gain: Matrix) -> Self {
        Self::LinearGain { gain }
    }

    pub fn is_mode_dependent(&self) -> bool {
        matches!(self, Self::Universal { .. })
    }

    fn check_against(&self, family: &SubsystemFamily) -> Result<()> {
        let (n, m) = (family.dim(), family.inputs());
        if family.control(Mode(0)).is_none() {
            return Err(Error::invalid("controller", "the family has no control fields"));
        }
        match self {
            Self::Universal { functions, .. } => {
                if functions.len() != family.modes() {
                    return Err(Error::dim("universal controller modes", family.modes(), functions.len()));
                }
                if let Some(v) = functions.iter().find(|v| v.dim() != n) {
                    return Err(Error::dim("universal controller certificate", n, v.dim()));
                }
            }
            Self::LinearGain { gain } => {
                if gain.rows() != m || gain.cols() != n {
                    return Err(Error::invalid("linear gain", format!("expected {m}×{n}, got {}×{}", gain.rows(), gain.cols())));
                }
            }
            Self::Polynomial { map } => {
                if map.output_dim() != m || map.input_dim() != n {
                    return Err(Error::invalid("polynomial controller", format!("expected map ℝ^{n} → ℝ^{m}")));
                }
            }
        }
        Ok(())
    }

    fn law_for(&self, mode: Mode) -> ModeLaw {
        match self {
            Self::Universal { functions, rates } => {
                ModeLaw::Universal { function: functions[mode.0].clone(), rate: rates[mode.0] }
            }
            Self::LinearGain { gain } => ModeLaw::LinearGain(gain.clone()),
            Self::Polynomial { map } => ModeLaw::Polynomial(map.clone()),
        }
    }

    /// `k(x)` for `mode`.
    pub fn control(&self, family: &SubsystemFamily, mode: Mode, x: &[f64]) -> Result<Vec<f64>> {
        self.check_against(family)?;
        if x.len() != family.dim() {
            return Err(Error::dim("controller argument", family.dim(), x.len()));
        }
        let law = self.law_for(mode);
        let controls = family.control(mode).unwrap();
        let mut u = vec![0.0; controls.len()];
        law.eval_into(family.drift(mode), controls, x, &mut u);
        Ok(u)
    }
}

/// The controller specialised to one mode.
#[derive(Debug, Clone, PartialEq)]
enum ModeLaw {
    Universal { function: LyapunovSpec, rate: f64 },
    LinearGain(Matrix),
    Polynomial(PolynomialMap),
}

/// Lie-derivative quantities of the universal formula at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct UniversalTerms {
    pub lf_v: f64,
    pub value: f64,
    /// `L_{g_j} V` for each input.
    pub lg_v: Vec<f64>,
    pub w_bar: f64,
    pub w_tilde: f64,
}

fn universal_terms(v: &LyapunovSpec, rate: f64, drift: &VectorFieldSpec, controls: &[VectorFieldSpec], x: &[f64]) -> UniversalTerms {
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut buf = vec![0.0; n];
    v.gradient_into(x, &mut grad);
    drift.eval_into(x, &mut buf);
    let lf_v = dot(&grad, &buf);
    let lg_v: Vec<f64> = controls
        .iter()
        .map(|g| {
            g.eval_into(x, &mut buf);
            dot(&grad, &buf)
        })
        .collect();
    let value = v.value(x);
    let w_bar = lf_v + rate * value;
    let w_tilde = lg_v.iter().map(|b| b * b).sum();
    UniversalTerms { lf_v, value, lg_v, w_bar, w_tilde }
}

impl ModeLaw {
    fn eval_into(&self, drift: &VectorFieldSpec, controls: &[VectorFieldSpec], x: &[f64], u: &mut [f64]) {
        match self {
            ModeLaw::Universal { function, rate } => {
                let t = universal_terms(function, *rate, drift, controls, x);
                let p = phi(t.w_bar, t.w_tilde);
                for (uj, b) in u.iter_mut().zip(&t.lg_v) {
                    *uj = -b * p;
                }
            }
            ModeLaw::LinearGain(k) => k.mul_vec_into(x, u),
            ModeLaw::Polynomial(map) => map.eval_into(x, u),
        }
    }
}

/// `f_i(x) + Σ_j g_{i,j}(x) k_j(x)` for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    drift: VectorFieldSpec,
    controls: Vec<VectorFieldSpec>,
    law: ModeLaw,
}

impl ClosedLoop {
    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut u = vec![0.0; self.controls.len()];
        self.law.eval_into(&self.drift, &self.controls, x, &mut u);
        self.drift.eval_into(x, out);
        let mut g = vec![0.0; x.len()];
        for (gj, uj) in self.controls.iter().zip(&u) {
            if *uj == 0.0 {
                continue;
            }
            gj.eval_into(x, &mut g);
            for (o, gk) in out.iter_mut().zip(&g) {
                *o += gk * uj;
            }
        }
    }
}

/// Closed-loop field of `mode` under `controller`.
pub fn closed_loop_field(family: &SubsystemFamily, controller: &ControllerSpec, mode: Mode) -> Result<VectorFieldSpec> {
    controller.check_against(family)?;
    if mode.0 >= family.modes() {
        return Err(Error::invalid("mode", format!("{mode} not in family")));
    }
    Ok(VectorFieldSpec::ClosedLoop(Arc::new(ClosedLoop {
        drift: family.drift(mode).clone(),
        controls: family.control(mode).unwrap().to_vec(),
        law: controller.law_for(mode),
    })))
}

/// Universal-formula control for `mode`, targeting the certificate's rate.
pub fn universal_control(family: &SubsystemFamily, cert: &CertificateFamily, mode: Mode, x: &[f64]) -> Result<Vec<f64>> {
    ControllerSpec::universal_from(cert)?.control(family, mode, x)
}

/// `W̄`, `W̃` and the Lie derivatives behind the universal formula.
pub fn universal_terms_at(
    family: &SubsystemFamily,
    function: &LyapunovSpec,
    rate: f64,
    mode: Mode,
    x: &[f64],
) -> Result<UniversalTerms> {
    let controls = family.control(mode).ok_or_else(|| Error::invalid("family", "no control fields"))?;
    if x.len() != family.dim() || function.dim() != family.dim() {
        return Err(Error::dim("universal terms", family.dim(), x.len()));
    }
    Ok(universal_terms(function, rate, family.drift(mode), controls, x))
}

/// Control-Lyapunov check with unbounded inputs for one mode.
///
/// The infimum over `u` is `−∞` unless `∇V_i(x)` is orthogonal to every
/// `g_{i,j}(x)`; at such samples the condition reduces to `W̄_i(x) < 0`. A
/// sample is reported when it is numerically in that kernel (each
/// `|L_{g_{i,j}}V_i| ≤ tol·‖∇V_i‖‖g_{i,j}(x)‖`) and `W̄_i(x)` exceeds `tol`
/// (relative above unit scale). The origin is skipped.
pub fn verify_clf_condition(
    family: &SubsystemFamily,
    cert: &CertificateFamily,
    mode: Mode,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<Violation>> {
    let controls = family.control(mode).ok_or_else(|| Error::invalid("family", "no control fields"))?;
    let v = cert.function(mode);
    let rate = cert.rates().per_mode()[mode.0];
    let n = family.dim();
    let mut out = Vec::new();
    let mut gbuf = vec![0.0; n];
    for x in samples {
        if x.len() != n {
            return Err(Error::dim("sample", n, x.len()));
        }
        if x.iter().all(|&c| c == 0.0) {
            continue;
        }
        let grad = v.gradient(x);
        let gnorm = norm(&grad);
        let in_kernel = controls.iter().all(|g| {
            g.eval_into(x, &mut gbuf);
            dot(&grad, &gbuf).abs() <= tol * gnorm * norm(&gbuf)
        });
        if !in_kernel {
            continue;
        }
        let t = universal_terms(v, rate, family.drift(mode), controls, x);
        if exceeds(t.w_bar, t.lf_v.abs().max((rate * t.value).abs()), tol) {
            out.push(Violation { inequality: Inequality::ControlLyapunov, modes: (mode, mode), x: x.clone(), residual: t.w_bar });
        }
    }
    Ok(out)
}

/// [`verify_clf_condition`] over every mode.
pub fn verify_clf_all(
    family: &SubsystemFamily,
    cert: &CertificateFamily,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<Violation>> {
    let mut out = Vec::new();
    for i in 0..family.modes() {
        out.extend(verify_clf_condition(family, cert, Mode(i), samples, tol)?);
    }
    Ok(out)
}

/// Checks `L_{f_i + Σ g_{i,j} k_j} V_i ≤ −λ_i V_i` at every sample and mode,
/// with `V_i` and `λ_i` from `cert`.
pub fn verify_closed_loop_decrease(
    family: &SubsystemFamily,
    cert: &CertificateFamily,
    controller: &ControllerSpec,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<Violation>> {
    let n = family.dim();
    if cert.modes() != family.modes() || cert.dim() != n {
        return Err(Error::dim("certificate", family.modes(), cert.modes()));
    }
    let rates = cert.rates().per_mode();
    let mut out = Vec::new();
    let mut grad = vec![0.0; n];
    let mut fx = vec![0.0; n];
    for i in 0..family.modes() {
        let field = closed_loop_field(family, controller, Mode(i))?;
        let v = cert.function(Mode(i));
        for x in samples {
            if x.len() != n {
                return Err(Error::dim("sample", n, x.len()));
            }
            v.gradient_into(x, &mut grad);
            field.eval_into(x, &mut fx);
            let lie = dot(&grad, &fx);
            let rhs = -rates[i] * v.value(x);
            if exceeds(lie - rhs, lie.abs().max(rhs.abs()), tol) {
                out.push(Violation {
                    inequality: Inequality::ClosedLoopDecrease,
                    modes: (Mode(i), Mode(i)),
                    x: x.clone(),
                    residual: lie - rhs,
                });
            }
        }
    }
    Ok(out)
}

/// One row of the small-control probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeRow {
    pub radius: f64,
    pub max_control_norm: f64,
}

/// Largest `‖k(x)‖` over [`PROBE_DIRECTIONS`] directions per radius and all
/// modes. A trend to zero with the radius is what the small-control property
/// predicts; a plateau means the feedback is discontinuous at the origin.
pub fn small_control_probe(family: &SubsystemFamily, controller: &ControllerSpec, radii: &[f64]) -> Result<Vec<ProbeRow>> {
    controller.check_against(family)?;
    let n = family.dim();
    let mut rng = rng_from_seed(PROBE_SEED);
    let directions: Vec<Vec<f64>> = (0..PROBE_DIRECTIONS).map(|_| random_direction(n, &mut rng)).collect();
    radii
        .iter()
        .map(|&r| {
            let mut worst = 0.0_f64;
            for d in &directions {
                let x: Vec<f64> = d.iter().map(|c| c * r).collect();
                for i in 0..family.modes() {
                    worst = worst.max(norm(&controller.control(family, Mode(i), &x)?));
                }
            }
            Ok(ProbeRow { radius: r, max_control_norm: worst })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::Rates;

    /// ẋ = x + x·u, V = x²/2, λ = 1.
    fn scalar_example() -> (SubsystemFamily, CertificateFamily) {
        let fam = SubsystemFamily::new(vec![VectorFieldSpec::linear(Matrix::diag(&[1.0])).unwrap()])
            .unwrap()
            .with_control(vec![vec![VectorFieldSpec::linear(Matrix::diag(&[1.0])).unwrap()]])
            .unwrap();
        let cert = CertificateFamily::quadratic(vec![Matrix::diag(&[0.5])], Rates::PerMode(vec![1.0]), 1.01).unwrap();
        (fam, cert)
    }

    #[test]
    fn phi_examples() {
        assert_eq!(phi(3.0, 0.0), 0.0);
        assert_eq!(phi(-5.0, 0.0), 0.0);
        assert_eq!(phi(0.0, 1.0), 1.0);
        assert_eq!(phi(3.0, 4.0), 2.0);
    }

    #[test]
    fn scalar_universal_control() {
        let (fam, cert) = scalar_example();
        let u = universal_control(&fam, &cert, Mode(0), &[1.0]).unwrap();
        let expect = -(1.5 + 3.25f64.sqrt());
        assert!((u[0] - expect).abs() < 1e-12);
        assert_eq!(universal_control(&fam, &cert, Mode(0), &[0.0]).unwrap(), vec![0.0]);

        let ctrl = ControllerSpec::universal_from(&cert).unwrap();
        let f = closed_loop_field(&fam, &ctrl, Mode(0)).unwrap();
        let v = f.evaluate(&[1.0]).unwrap()[0];
        assert!((v - (1.0 + expect)).abs() < 1e-12);
        assert_eq!(f.evaluate(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn zero_gain_closed_loop_is_drift() {
        let (fam, _) = scalar_example();
        let ctrl = ControllerSpec::linear_gain(Matrix::zeros(1, 1));
        let f = closed_loop_field(&fam, &ctrl, Mode(0)).unwrap();
        for x in [-2.0, 0.3, 5.0] {
            assert_eq!(f.evaluate(&[x]).unwrap(), fam.drift(Mode(0)).evaluate(&[x]).unwrap());
        }
    }

    #[test]
    fn kernel_branch_gives_zero_control() {
        // 2-D: g(x) = (0, x2) so L_gV = 2 x2² vanishes on the x1-axis
        let g = VectorFieldSpec::linear(Matrix::diag(&[0.0, 1.0])).unwrap();
        let fam = SubsystemFamily::new(vec![VectorFieldSpec::linear(Matrix::diag(&[-1.0, 1.0])).unwrap()])
            .unwrap()
            .with_control(vec![vec![g]])
            .unwrap();
        let cert = CertificateFamily::quadratic(vec![Matrix::identity(2)], Rates::PerMode(vec![1.0]), 1.01).unwrap();
        assert_eq!(universal_control(&fam, &cert, Mode(0), &[0.7, 0.0]).unwrap(), vec![0.0]);
        assert_ne!(universal_control(&fam, &cert, Mode(0), &[0.7, 0.1]).unwrap(), vec![0.0]);
    }

    #[test]
    fn clf_checks() {
        let (fam, cert) = scalar_example();
        let samples: Vec<Vec<f64>> = (1..=20).map(|k| vec![0.25 * k as f64 - 2.6]).collect();
        assert!(verify_clf_condition(&fam, &cert, Mode(0), &samples, 1e-9).unwrap().is_empty());

        // g ≡ 0 with unstable drift
        let dead = SubsystemFamily::new(vec![VectorFieldSpec::linear(Matrix::diag(&[1.0])).unwrap()])
            .unwrap()
            .with_control(vec![vec![VectorFieldSpec::linear(Matrix::zeros(1, 1)).unwrap()]])
            .unwrap();
        let report = verify_clf_condition(&dead, &cert, Mode(0), &samples, 1e-9).unwrap();
        assert_eq!(report.len(), samples.len());

        // g ≡ 0, stable drift, λ equal to the tight rate
        let stable = SubsystemFamily::new(vec![VectorFieldSpec::linear(Matrix::diag(&[-1.0])).unwrap()])
            .unwrap()
            .with_control(vec![vec![VectorFieldSpec::linear(Matrix::zeros(1, 1)).unwrap()]])
            .unwrap();
        let tight = CertificateFamily::quadratic(vec![Matrix::diag(&[0.5])], Rates::PerMode(vec![2.0]), 1.01).unwrap();
        assert!(verify_clf_condition(&stable, &tight, Mode(0), &samples, 1e-9).unwrap().is_empty());
    }

    #[test]
    fn decrease_checks() {
        let (fam, cert) = scalar_example();
        let ctrl = ControllerSpec::universal_from(&cert).unwrap();
        let samples = crate::certificates::default_samples(1, 1000, 3);
        assert!(verify_closed_loop_decrease(&fam, &cert, &ctrl, &samples, 1e-9).unwrap().is_empty());

        let zero = ControllerSpec::linear_gain(Matrix::zeros(1, 1));
        let report = verify_closed_loop_decrease(&fam, &cert, &zero, &samples, 1e-9).unwrap();
        assert_eq!(report.len(), samples.len() - 1, "all but the origin");
        assert!(verify_closed_loop_decrease(&fam, &cert, &zero, &[vec![0.0]], 1e-9).unwrap().is_empty());
    }

    #[test]
    fn probe_plateaus_for_scalar_example() {
        // u(x) = −x²·φ(1.5x², x⁴) → −3 as x → 0; the control does not shrink.
        let (fam, cert) = scalar_example();
        let ctrl = ControllerSpec::universal_from(&cert).unwrap();
        let rows = small_control_probe(&fam, &ctrl, &[1.0, 0.1, 0.01, 0.0]).unwrap();
        let oracle = |r: f64| {
            let (a, b) = (1.5 * r * r, r.powi(4));
            r * r * (a + (a * a + b * b).sqrt()) / b
        };
        for row in &rows[..3] {
            assert!((row.max_control_norm - oracle(row.radius)).abs() < 1e-9 * oracle(row.radius));
        }
        assert!(rows.windows(2).take(2).all(|w| w[1].max_control_norm < w[0].max_control_norm));
        assert!(rows[2].max_control_norm > 2.99);
        assert_eq!(rows[3].max_control_norm, 0.0);
    }

    #[test]
    fn probe_zero_for_uncontrolled() {
        let dead = SubsystemFamily::new(vec![VectorFieldSpec::linear(Matrix::diag(&[1.0])).unwrap()])
            .unwrap()
            .with_control(vec![vec![VectorFieldSpec::linear(Matrix::zeros(1, 1)).unwrap()]])
            .unwrap();
        let cert = CertificateFamily::quadratic(vec![Matrix::diag(&[0.5])], Rates::PerMode(vec![1.0]), 1.01).unwrap();
        let ctrl = ControllerSpec::universal_from(&cert).unwrap();
        let rows = small_control_probe(&dead, &ctrl, &[1.0, 0.1, 0.01]).unwrap();
        assert!(rows.iter().all(|r| r.max_control_norm == 0.0));
    }

    #[test]
    fn controller_requires_control_fields() {
        let fam = SubsystemFamily::new(vec![VectorFieldSpec::linear(Matrix::diag(&[1.0])).unwrap()]).unwrap();
        let ctrl = ControllerSpec::linear_gain(Matrix::zeros(1, 1));
        assert!(closed_loop_field(&fam, &ctrl, Mode(0)).is_err());
    }
}
