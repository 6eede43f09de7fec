//! Multiple Lyapunov functions: evaluation, Lie derivatives, tight constants
//! for quadratic certificates over linear subsystems, and pointwise checks of
//! the certificate inequalities
//!
//! * sandwich: `α₁(‖x‖) ≤ V_i(x) ≤ α₂(‖x‖)`;
//! * decay: `L_{f_i} V_i ≤ −λ_i V_i` (per mode) or `L_{f_j} V_i ≤ −λ_{i,j} V_i`
//!   (full matrix);
//! * comparability: `V_i ≤ μ V_j`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dynamics::{Monomial, Polynomial, SubsystemFamily, VectorFieldSpec};
use crate::linalg::{self, dot, norm, Matrix};
use crate::rng::rng_from_seed;
use crate::signal::Mode;
use crate::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
/// Margin added to a tight `μ* = 1` so the strict `μ > 1` requirement holds.
pub const MU_EPSILON: f64 = 1e-9;
/// Seed for the default verification sample set.
pub const DEFAULT_SAMPLE_SEED: u64 = 0x5EED_CE27;
pub const DEFAULT_SAMPLE_COUNT: usize = 1000;

/// A Lyapunov function `V`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LyapunovSpec {
    /// `V(x) = xᵀ P x`, `P` symmetric positive definite.
    Quadratic(Matrix),
    /// Positive-definite polynomial, checked on a sample sphere.
    Polynomial(Polynomial),
}

impl LyapunovSpec {
    pub fn quadratic(p: Matrix) -> Result<Self> {
        if !p.is_square() {
            return Err(Error::invalid("quadratic certificate", "P must be square"));
        }
        if p.max_asymmetry() > SYMMETRY_TOL {
            return Err(Error::invalid("quadratic certificate", "P must be symmetric"));
        }
        let lo = linalg::min_eigenvalue(&p)?;
        if !(lo > 0.0) {
            return Err(Error::invalid("quadratic certificate", format!("P is not positive definite (λ_min = {lo})")));
        }
        Ok(Self::Quadratic(p.symmetrized()))
    }

    /// Polynomial `V`; must vanish at 0 and be positive on 200 sampled unit
    /// directions at radii 0.1, 1 and 10.
    pub fn polynomial(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        let p = Polynomial::vanishing_at_origin(dim, terms)?;
        let mut rng = rng_from_seed(DEFAULT_SAMPLE_SEED);
        // coordinate axes first: degenerate candidates usually vanish there
        let axes = (0..2 * dim).map(|k| {
            let mut e = vec![0.0; dim];
            e[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            e
        });
        let random = (0..200).map(|_| random_direction(dim, &mut rng)).collect::<Vec<_>>();
        for u in axes.chain(random) {
            for r in [0.1, 1.0, 10.0] {
                let x: Vec<f64> = u.iter().map(|c| c * r).collect();
                if !(p.eval(&x) > 0.0) {
                    return Err(Error::invalid("polynomial certificate", "V is not positive away from the origin"));
                }
            }
        }
        Ok(Self::Polynomial(p))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Quadratic(p) => p.rows(),
            Self::Polynomial(p) => p.dim(),
        }
    }

    pub fn as_quadratic(&self) -> Option<&Matrix> {
        match self {
            Self::Quadratic(p) => Some(p),
            Self::Polynomial(_) => None,
        }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Quadratic(p) => p.quad_form(x),
            Self::Polynomial(p) => p.eval(x),
        }
    }

    /// Exact gradient: `2 P x` or termwise differentiation.
    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Quadratic(p) => {
                p.mul_vec_into(x, out);
                out.iter_mut().for_each(|g| *g *= 2.0);
            }
            Self::Polynomial(p) => p.gradient_into(x, out),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.gradient_into(x, &mut g);
        g
    }

    /// `L_f V(x) = ⟨∇V(x), f(x)⟩`.
    pub fn lie_derivative(&self, field: &VectorFieldSpec, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || field.dim() != self.dim() {
            return Err(Error::dim("Lie derivative", self.dim(), x.len().max(field.dim())));
        }
        Ok(dot(&self.gradient(x), &field.evaluate(x)?))
    }
}

/// `coeff · r^power`, the class-K∞ bounds induced by a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerBound {
    pub coeff: f64,
    pub power: f64,
}

impl PowerBound {
    pub fn quadratic(coeff: f64) -> Self {
        Self { coeff, power: 2.0 }
    }

    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        if r == 0.0 {
            0.0
        } else {
            self.coeff * r.powf(self.power)
        }
    }
}

/// Decay/growth rates: one per mode, or `λ_{i,j}` for `V_i` along `f_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rates {
    PerMode(Vec<f64>),
    Matrix(Matrix),
}

impl Rates {
    /// Per-mode rates; the diagonal when a full matrix is stored.
    pub fn per_mode(&self) -> Vec<f64> {
        match self {
            Rates::PerMode(v) => v.clone(),
            Rates::Matrix(m) => (0..m.rows()).map(|i| m[(i, i)]).collect(),
        }
    }

    fn modes(&self) -> usize {
        match self {
            Rates::PerMode(v) => v.len(),
            Rates::Matrix(m) => m.rows(),
        }
    }
}

/// A family `{V_i}` with its constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateFamily {
    functions: Vec<LyapunovSpec>,
    rates: Rates,
    mu: f64,
    alpha1: PowerBound,
    alpha2: PowerBound,
}

impl CertificateFamily {
    pub fn new(
        functions: Vec<LyapunovSpec>,
        rates: Rates,
        mu: f64,
        alpha1: PowerBound,
        alpha2: PowerBound,
    ) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::invalid("certificate", "no Lyapunov functions"));
        }
        let n = functions[0].dim();
        if functions.iter().any(|v| v.dim() != n) {
            return Err(Error::invalid("certificate", "Lyapunov functions differ in dimension"));
        }
        if rates.modes() != functions.len() {
            return Err(Error::dim("certificate rates", functions.len(), rates.modes()));
        }
        if let Rates::Matrix(m) = &rates {
            if !m.is_square() {
                return Err(Error::invalid("certificate", "rate matrix must be square"));
            }
        }
        if !(mu > 1.0) || !mu.is_finite() {
            return Err(Error::invalid("certificate", format!("μ must be > 1, got {mu}")));
        }
        for a in [alpha1, alpha2] {
            if !(a.coeff > 0.0 && a.power > 0.0) {
                return Err(Error::invalid("certificate", "class-K∞ bounds need positive coefficient and power"));
            }
        }
        Ok(Self { functions, rates, mu, alpha1, alpha2 })
    }

    /// Quadratic family with `α₁ = min_i λ_min(P_i) r²`, `α₂ = max_i λ_max(P_i) r²`.
    pub fn quadratic(ps: Vec<Matrix>, rates: Rates, mu: f64) -> Result<Self> {
        let (c1, c2) = quadratic_bounds(&ps)?;
        let functions = ps.into_iter().map(LyapunovSpec::quadratic).collect::<Result<Vec<_>>>()?;
        Self::new(functions, rates, mu, PowerBound::quadratic(c1), PowerBound::quadratic(c2))
    }

    pub fn functions(&self) -> &[LyapunovSpec] {
        &self.functions
    }

    pub fn function(&self, mode: Mode) -> &LyapunovSpec {
        &self.functions[mode.0]
    }

    pub fn rates(&self) -> &Rates {
        &self.rates
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn alpha1(&self) -> PowerBound {
        self.alpha1
    }

    pub fn alpha2(&self) -> PowerBound {
        self.alpha2
    }

    pub fn modes(&self) -> usize {
        self.functions.len()
    }

    pub fn dim(&self) -> usize {
        self.functions[0].dim()
    }

    pub fn quadratic_matrices(&self) -> Option<Vec<Matrix>> {
        self.functions.iter().map(|v| v.as_quadratic().cloned()).collect()
    }
}

/// `(min_i λ_min(P_i), max_i λ_max(P_i))`.
pub fn quadratic_bounds(ps: &[Matrix]) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in ps {
        let e = linalg::symmetric_eigen(p)?;
        lo = lo.min(e.values[0]);
        hi = hi.max(*e.values.last().unwrap());
    }
    Ok((lo, hi))
}

fn check_spd(p: &Matrix) -> Result<()> {
    if !p.is_square() || p.max_asymmetry() > SYMMETRY_TOL {
        return Err(Error::domain("P must be square and symmetric"));
    }
    linalg::cholesky(p).map(|_| ())
}

/// Largest `λ` with `AᵀP + PA + λP ⪯ 0`, i.e. the tight decay rate of
/// `V = xᵀPx` along `ẋ = Ax`.
pub fn extract_lambda_quadratic(p: &Matrix, a: &Matrix) -> Result<f64> {
    check_spd(p)?;
    if !a.is_square() || a.rows() != p.rows() {
        return Err(Error::dim("extract_lambda_quadratic", p.rows(), a.rows()));
    }
    let lyap = a.transpose().matmul(p).add(&p.matmul(a));
    Ok(-linalg::max_eigenvalue(&linalg::whiten(&lyap, p)?)?)
}

/// `λ_{i,j}` = tight rate of `V_i` along `f_j`.
pub fn extract_lambda_matrix(ps: &[Matrix], drifts: &[Matrix]) -> Result<Matrix> {
    if ps.len() != drifts.len() {
        return Err(Error::dim("extract_lambda_matrix", ps.len(), drifts.len()));
    }
    let n = ps.len();
    let mut out = Matrix::zeros(n, n);
    for (i, p) in ps.iter().enumerate() {
        for (j, a) in drifts.iter().enumerate() {
            out[(i, j)] = extract_lambda_quadratic(p, a)?;
        }
    }
    Ok(out)
}

/// Tightest `μ*` with `V_i ≤ μ* V_j` for all ordered pairs.
pub fn extract_mu(ps: &[Matrix]) -> Result<f64> {
    let mut mu = 1.0_f64;
    for pj in ps {
        check_spd(pj)?;
        for pi in ps {
            mu = mu.max(linalg::max_eigenvalue(&linalg::whiten(pi, pj)?)?);
        }
    }
    Ok(mu)
}

/// `max(μ*, 1 + ε)`.
pub fn strict_mu(mu_star: f64) -> f64 {
    mu_star.max(1.0 + MU_EPSILON)
}

/// Which inequality a violation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Inequality {
    #[serde(rename = "V1-lower")]
    SandwichLower,
    #[serde(rename = "V1-upper")]
    SandwichUpper,
    #[serde(rename = "V2")]
    Decay,
    #[serde(rename = "V2'")]
    CrossDecay,
    #[serde(rename = "V3")]
    Comparability,
    /// Control-Lyapunov condition with unbounded inputs.
    #[serde(rename = "C3")]
    ControlLyapunov,
    /// `L_{f_i + g_i k} V_i ≤ −λ_i V_i` for the closed loop.
    #[serde(rename = "closed-loop-decrease")]
    ClosedLoopDecrease,
}

/// One failed inequality at one sample. `residual > 0` is the amount by which
/// the left side exceeds the right.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub inequality: Inequality,
    pub modes: (Mode, Mode),
    pub x: Vec<f64>,
    pub residual: f64,
}

/// Residual test: absolute below unit scale, relative above it.
#[inline]
pub(crate) fn exceeds(residual: f64, scale: f64, tol: f64) -> bool {
    residual > tol * scale.abs().max(1.0) || residual.is_nan()
}

pub(crate) fn random_direction(n: usize, rng: &mut crate::rng::Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let r = norm(&v);
        if r > 1e-12 {
            return v.into_iter().map(|c| c / r).collect();
        }
    }
}

/// `count` points with radius log-uniform on `[1e-2, 1e2]` and uniform
/// direction, plus the origin.
pub fn default_samples(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(count + 1);
    out.push(vec![0.0; n]);
    for _ in 0..count {
        let r = 10f64.powf(rng.gen_range(-2.0..=2.0));
        out.push(random_direction(n, &mut rng).into_iter().map(|c| c * r).collect());
    }
    out
}

/// Checks every certificate inequality at every sample.
///
/// Rates stored per mode check `L_{f_i} V_i ≤ −λ_i V_i`; a rate matrix checks
/// all pairs `L_{f_j} V_i ≤ −λ_{i,j} V_i`.
pub fn verify_pointwise(
    family: &SubsystemFamily,
    cert: &CertificateFamily,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<Vec<Violation>> {
    let n = family.dim();
    if cert.dim() != n {
        return Err(Error::dim("certificate", n, cert.dim()));
    }
    if cert.modes() != family.modes() {
        return Err(Error::dim("certificate modes", family.modes(), cert.modes()));
    }
    let modes = family.modes();
    let mut out = Vec::new();
    let mut grad = vec![0.0; n];
    let mut fx = vec![0.0; n];
    for x in samples {
        if x.len() != n {
            return Err(Error::dim("sample", n, x.len()));
        }
        let r = norm(x);
        let values: Vec<f64> = cert.functions.iter().map(|v| v.value(x)).collect();
        let mut push = |inequality, i: usize, j: usize, residual: f64, scale: f64| {
            if exceeds(residual, scale, tol) {
                out.push(Violation { inequality, modes: (Mode(i), Mode(j)), x: x.clone(), residual });
            }
        };
        for i in 0..modes {
            let (a1, a2) = (cert.alpha1.eval(r), cert.alpha2.eval(r));
            push(Inequality::SandwichLower, i, i, a1 - values[i], values[i]);
            push(Inequality::SandwichUpper, i, i, values[i] - a2, values[i]);
            cert.functions[i].gradient_into(x, &mut grad);
            match &cert.rates {
                Rates::PerMode(lambda) => {
                    family.drift(Mode(i)).eval_into(x, &mut fx);
                    let lie = dot(&grad, &fx);
                    let rhs = -lambda[i] * values[i];
                    push(Inequality::Decay, i, i, lie - rhs, lie.abs().max(rhs.abs()));
                }
                Rates::Matrix(lambda) => {
                    for j in 0..modes {
                        family.drift(Mode(j)).eval_into(x, &mut fx);
                        let lie = dot(&grad, &fx);
                        let rhs = -lambda[(i, j)] * values[i];
                        push(Inequality::CrossDecay, i, j, lie - rhs, lie.abs().max(rhs.abs()));
                    }
                }
            }
            for j in 0..modes {
                if i != j {
                    let rhs = cert.mu * values[j];
                    push(Inequality::Comparability, i, j, values[i] - rhs, rhs);
                }
            }
        }
    }
    Ok(out)
}
