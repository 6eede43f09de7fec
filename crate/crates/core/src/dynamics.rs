//! Subsystem vector fields and switched-trajectory integration.
//!
//! Fields are closed-form: linear (`ẋ = A x`), polynomial (per-coordinate
//! monomial lists) or a closed-loop composite `f(x) + Σ g_j(x) k_j(x)`.
//! Every field vanishes at the origin.
//!
//! Integration is classical fixed-step RK4 run segment by segment between
//! the switching instants of a [`SwitchingPath`]; the last substep of each
//! segment is shortened so every instant is hit exactly.

use std::sync::Arc;

use serde::Serialize;

use crate::linalg::{norm, Matrix};
use crate::signal::{Mode, SwitchingPath};
use crate::synthesis::{ClosedLoop, ControllerSpec};
use crate::{Error, Result};

/// Default integration step.
pub const DEFAULT_STEP: f64 = 1e-3;
/// A realisation whose state norm exceeds this is marked divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// `coeff · Π x_k^{exponents[k]}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>, coeff: f64) -> Self {
        Self { exponents, coeff }
    }

    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exponents.iter().zip(x).fold(self.coeff, |acc, (&e, &xi)| acc * powu(xi, e))
    }

    /// `∂/∂x_k` of this monomial at `x`.
    pub fn partial(&self, k: usize, x: &[f64]) -> f64 {
        let e = self.exponents[k];
        if e == 0 {
            return 0.0;
        }
        let mut acc = self.coeff * f64::from(e);
        for (i, (&ei, &xi)) in self.exponents.iter().zip(x).enumerate() {
            acc *= powu(xi, if i == k { ei - 1 } else { ei });
        }
        acc
    }
}

#[inline]
fn powu(x: f64, e: u32) -> f64 {
    match e {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(e as i32),
    }
}

/// Scalar polynomial in `dim` variables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    /// Rejects exponent vectors of the wrong length and non-finite coefficients.
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        for t in &terms {
            if t.exponents.len() != dim {
                return Err(Error::dim("monomial exponents", dim, t.exponents.len()));
            }
            if !t.coeff.is_finite() {
                return Err(Error::invalid("monomial", "coefficient must be finite"));
            }
        }
        Ok(Self { dim, terms })
    }

    /// As [`Polynomial::new`] and additionally requires `p(0) = 0`.
    pub fn vanishing_at_origin(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        let p = Self::new(dim, terms)?;
        if p.terms.iter().any(|t| t.degree() == 0 && t.coeff != 0.0) {
            return Err(Error::invalid("polynomial", "constant monomials are not allowed (value at 0 must be 0)"));
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.terms.iter().map(|t| t.partial(k, x)).sum();
        }
    }
}

/// Vector of polynomials, one per output coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolynomialMap {
    components: Vec<Polynomial>,
}

impl PolynomialMap {
    /// Each component must vanish at the origin and take `dim` inputs.
    pub fn new(dim: usize, components: Vec<Vec<Monomial>>) -> Result<Self> {
        let components = components
            .into_iter()
            .map(|terms| Polynomial::vanishing_at_origin(dim, terms))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components })
    }

    pub fn input_dim(&self) -> usize {
        self.components.first().map_or(0, Polynomial::dim)
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.components) {
            *o = p.eval(x);
        }
    }
}

/// A closed-form vector field with `f(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorFieldSpec {
    Linear(Matrix),
    Polynomial(PolynomialMap),
    #[serde(skip)]
    ClosedLoop(Arc<ClosedLoop>),
}

impl VectorFieldSpec {
    pub fn linear(a: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::invalid("linear field", "matrix must be square"));
        }
        Ok(Self::Linear(a))
    }

    /// Polynomial field `ẋ_k = Σ coeff · x^exponents` for each coordinate `k`.
    pub fn polynomial(components: Vec<Vec<Monomial>>) -> Result<Self> {
        let dim = components.len();
        Ok(Self::Polynomial(PolynomialMap::new(dim, components)?))
    }

    /// A polynomial map `ℝ^input_dim → ℝ^n`, used for control fields.
    pub fn polynomial_map(input_dim: usize, components: Vec<Vec<Monomial>>) -> Result<Self> {
        let map = PolynomialMap::new(input_dim, components)?;
        if map.output_dim() != input_dim {
            return Err(Error::dim("polynomial field", input_dim, map.output_dim()));
        }
        Ok(Self::Polynomial(map))
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Linear(a) => a.rows(),
            Self::Polynomial(p) => p.output_dim(),
            Self::ClosedLoop(c) => c.dim(),
        }
    }

    pub fn as_linear(&self) -> Option<&Matrix> {
        match self {
            Self::Linear(a) => Some(a),
            _ => None,
        }
    }

    /// Writes `f(x)` into `out`. Lengths are the caller's responsibility.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Linear(a) => a.mul_vec_into(x, out),
            Self::Polynomial(p) => p.eval_into(x, out),
            Self::ClosedLoop(c) => c.eval_into(x, out),
        }
    }

    /// `f(x)` with a dimension check.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim("vector field argument", self.dim(), x.len()));
        }
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        Ok(out)
    }
}

/// The indexed family of subsystems, optionally control-affine.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsystemFamily {
    dim: usize,
    drift: Vec<VectorFieldSpec>,
    /// `control[i][j]` is `g_{i,j}`.
    control: Option<Vec<Vec<VectorFieldSpec>>>,
}

impl SubsystemFamily {
    pub fn new(drift: Vec<VectorFieldSpec>) -> Result<Self> {
        let dim = drift.first().map(VectorFieldSpec::dim).ok_or_else(|| Error::invalid("family", "no modes"))?;
        for f in &drift {
            if f.dim() != dim {
                return Err(Error::dim("drift field", dim, f.dim()));
            }
        }
        Ok(Self { dim, drift, control: None })
    }

    /// Adds control fields. Every mode must carry the same number of inputs
    /// and each `g_{i,j}` must vanish at the origin (true for linear and
    /// polynomial specs by construction).
    pub fn with_control(mut self, control: Vec<Vec<VectorFieldSpec>>) -> Result<Self> {
        if control.len() != self.drift.len() {
            return Err(Error::dim("control field modes", self.drift.len(), control.len()));
        }
        let m = control[0].len();
        for g in &control {
            if g.len() != m {
                return Err(Error::dim("control inputs", m, g.len()));
            }
            for gij in g {
                if gij.dim() != self.dim {
                    return Err(Error::dim("control field", self.dim, gij.dim()));
                }
            }
        }
        self.control = Some(control);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> usize {
        self.drift.len()
    }

    pub fn drift(&self, mode: Mode) -> &VectorFieldSpec {
        &self.drift[mode.0]
    }

    pub fn drifts(&self) -> &[VectorFieldSpec] {
        &self.drift
    }

    pub fn control(&self, mode: Mode) -> Option<&[VectorFieldSpec]> {
        self.control.as_ref().map(|c| c[mode.0].as_slice())
    }

    pub fn inputs(&self) -> usize {
        self.control.as_ref().map_or(0, |c| c[0].len())
    }

    pub fn is_linear(&self) -> bool {
        self.drift.iter().all(|f| f.as_linear().is_some())
    }

    /// Per-mode right-hand sides, closed through `controller` when given.
    pub fn mode_fields(&self, controller: Option<&ControllerSpec>) -> Result<Vec<VectorFieldSpec>> {
        match controller {
            None => Ok(self.drift.clone()),
            Some(c) => (0..self.modes()).map(|i| crate::synthesis::closed_loop_field(self, c, Mode(i))).collect(),
        }
    }
}

/// Integrated switched trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    dim: usize,
    grid: Vec<f64>,
    /// Row-major `grid.len() × dim`.
    states: Vec<f64>,
    /// Active mode at each grid time (right-continuous).
    modes: Vec<Mode>,
    path: SwitchingPath,
    /// Time at which the state left the finite region, if it did.
    divergence: Option<f64>,
}

impl Trajectory {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks(self.dim)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn path(&self) -> &SwitchingPath {
        &self.path
    }

    pub fn divergence(&self) -> Option<f64> {
        self.divergence
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Euclidean norm at every grid time.
    pub fn norm_series(&self) -> Vec<(f64, f64)> {
        self.grid.iter().zip(self.states()).map(|(&t, x)| (t, norm(x))).collect()
    }
}

/// A grid point reported during streaming integration.
#[derive(Debug, Clone, Copy)]
pub struct GridPoint<'a> {
    pub t: f64,
    pub x: &'a [f64],
    /// Mode active from `t` on.
    pub mode: Mode,
    /// `Some(j)` when `t` is the switching instant `τ_j` (`τ_0 = 0`).
    pub jump: Option<usize>,
}

/// Integration outcome for streaming callers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamOutcome {
    pub divergence: Option<f64>,
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }
}

#[inline]
fn rk4_step(f: &VectorFieldSpec, x: &mut [f64], h: f64, s: &mut Rk4Scratch) {
    f.eval_into(x, &mut s.k1);
    for i in 0..x.len() {
        s.tmp[i] = x[i] + 0.5 * h * s.k1[i];
    }
    f.eval_into(&s.tmp, &mut s.k2);
    for i in 0..x.len() {
        s.tmp[i] = x[i] + 0.5 * h * s.k2[i];
    }
    f.eval_into(&s.tmp, &mut s.k3);
    for i in 0..x.len() {
        s.tmp[i] = x[i] + h * s.k3[i];
    }
    f.eval_into(&s.tmp, &mut s.k4);
    for i in 0..x.len() {
        x[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

fn diverged(x: &[f64]) -> bool {
    let r = norm(x);
    !r.is_finite() || r > DIVERGENCE_THRESHOLD
}

/// Integrates `fields` (indexed by mode) along `path` and reports every grid
/// point to `visit`.
///
/// `extra_breaks` are additional times the grid must hit exactly (sorted or
/// not; values outside `(0, horizon)` are ignored). They split a segment
/// without changing its mode.
pub fn integrate_streaming<F>(
    fields: &[VectorFieldSpec],
    path: &SwitchingPath,
    x0: &[f64],
    step: f64,
    extra_breaks: &[f64],
    mut visit: F,
) -> Result<StreamOutcome>
where
    F: FnMut(GridPoint<'_>),
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::domain(format!("step must be finite and > 0, got {step}")));
    }
    let n = fields.first().map_or(0, VectorFieldSpec::dim);
    if x0.len() != n {
        return Err(Error::dim("initial state", n, x0.len()));
    }
    if path.max_mode().0 >= fields.len() {
        return Err(Error::invalid("switching path", format!("mode {} not in family", path.max_mode())));
    }

    let horizon = path.horizon();
    let times = path.times();
    let modes = path.modes();

    let mut breaks: Vec<f64> = times[1..].to_vec();
    breaks.extend(extra_breaks.iter().copied().filter(|&t| t > 0.0 && t < horizon));
    breaks.push(horizon);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut x = x0.to_vec();
    let mut scratch = Rk4Scratch::new(n);
    let mut seg_mode = modes[0];
    let mut next_jump = 1;
    visit(GridPoint { t: 0.0, x: &x, mode: seg_mode, jump: Some(0) });
    if diverged(&x) {
        return Ok(StreamOutcome { divergence: Some(0.0) });
    }

    let mut start = 0.0;
    for &end in &breaks {
        if end <= start {
            continue;
        }
        let field = &fields[seg_mode.0];
        let len = end - start;
        let substeps = ((len / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        for k in 0..substeps {
            let t0 = start + k as f64 * step;
            let t1 = if k + 1 == substeps { end } else { start + (k + 1) as f64 * step };
            rk4_step(field, &mut x, t1 - t0, &mut scratch);
            if diverged(&x) {
                return Ok(StreamOutcome { divergence: Some(t1) });
            }
            if k + 1 < substeps {
                visit(GridPoint { t: t1, x: &x, mode: seg_mode, jump: None });
            }
        }
        let jump = if next_jump < times.len() && times[next_jump] == end {
            seg_mode = modes[next_jump];
            next_jump += 1;
            Some(next_jump - 1)
        } else {
            None
        };
        visit(GridPoint { t: end, x: &x, mode: seg_mode, jump });
        start = end;
    }
    Ok(StreamOutcome { divergence: None })
}

/// Integrates the switched system driven by `path` from `x0`.
///
/// With a controller, mode `i` runs `f_i(x) + Σ_j g_{i,j}(x) k_j(x)` with the
/// control evaluated at every RK4 stage. A state whose norm becomes
/// non-finite or exceeds [`DIVERGENCE_THRESHOLD`] ends the trajectory and sets
/// [`Trajectory::divergence`].
pub fn integrate(
    family: &SubsystemFamily,
    path: &SwitchingPath,
    x0: &[f64],
    step: f64,
    controller: Option<&ControllerSpec>,
) -> Result<Trajectory> {
    let fields = family.mode_fields(controller)?;
    let n = family.dim();
    let mut grid = Vec::new();
    let mut states = Vec::new();
    let mut modes = Vec::new();
    let outcome = integrate_streaming(&fields, path, x0, step, &[], |p| {
        grid.push(p.t);
        states.extend_from_slice(p.x);
        modes.push(p.mode);
    })?;
    Ok(Trajectory { dim: n, grid, states, modes, path: path.clone(), divergence: outcome.divergence })
}
