//! Trajectory ensembles and the empirical statistics behind almost-sure,
//! mean and in-probability stability.
//!
//! Each trajectory `k` draws its switching path from a seed derived from
//! `(master_seed, k)`, so trajectories are independent work items. They run
//! in parallel; results are collected in index order and reduced
//! sequentially, which makes every statistic bit-reproducible.
//!
//! An ensemble can only test fixed `(ε, T, x₀)` instances of the stability
//! definitions. Passing is evidence, not proof.

use rayon::prelude::*;
use serde::Serialize;

use crate::certificates::{CertificateFamily, PowerBound};
use crate::conditions::{check_for_law, eta_for_law};
use crate::dynamics::{integrate_streaming, SubsystemFamily, DEFAULT_STEP};
use crate::linalg::norm;
use crate::rng::derive_seed;
use crate::signal::{SignalClass, SwitchingLaw};
use crate::synthesis::ControllerSpec;
use crate::{Error, Result};

/// Spacing of the time grid for `E[α₁(‖x(t)‖)]` unless overridden.
pub const DEFAULT_SAMPLE_INTERVAL: f64 = 0.05;
/// Jump indices need at least this many trajectories to enter a decay check.
pub const MIN_SURVIVORS: usize = 100;
const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Everything needed to simulate one switched system from one initial state.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub family: SubsystemFamily,
    pub law: SwitchingLaw,
    pub cert: Option<CertificateFamily>,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: f64,
    pub controller: Option<ControllerSpec>,
    /// Spacing of the recorded mean grid.
    pub sample_interval: f64,
}

impl Scenario {
    pub fn new(family: SubsystemFamily, law: SwitchingLaw, x0: Vec<f64>, horizon: f64) -> Result<Self> {
        let s = Self {
            family,
            law,
            cert: None,
            x0,
            horizon,
            step: DEFAULT_STEP,
            controller: None,
            sample_interval: DEFAULT_SAMPLE_INTERVAL,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_certificate(mut self, cert: CertificateFamily) -> Result<Self> {
        self.cert = Some(cert);
        self.validate()?;
        Ok(self)
    }

    pub fn with_controller(mut self, controller: ControllerSpec) -> Result<Self> {
        self.controller = Some(controller);
        self.validate()?;
        Ok(self)
    }

    pub fn with_step(mut self, step: f64) -> Result<Self> {
        self.step = step;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.family.dim();
        if self.x0.len() != n {
            return Err(Error::dim("x0", n, self.x0.len()));
        }
        if self.law.modes() != self.family.modes() {
            return Err(Error::dim("switching law modes", self.family.modes(), self.law.modes()));
        }
        if let Some(c) = &self.cert {
            if c.dim() != n || c.modes() != self.family.modes() {
                return Err(Error::invalid("certificate", "dimension or mode count differs from the family"));
            }
        }
        if let Some(k) = &self.controller {
            crate::synthesis::closed_loop_field(&self.family, k, crate::signal::Mode(0))?;
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::domain("horizon must be finite and >= 0"));
        }
        if !(self.step > 0.0) || !(self.sample_interval > 0.0) {
            return Err(Error::domain("step and sample interval must be > 0"));
        }
        Ok(())
    }

    /// `k·Δ` for all `k` with `k·Δ ≤ horizon`.
    pub fn sample_times(&self) -> Vec<f64> {
        let count = (self.horizon / self.sample_interval * (1.0 + 1e-12)).floor() as usize;
        (0..=count).map(|k| k as f64 * self.sample_interval).filter(|&t| t <= self.horizon).collect()
    }

    fn alpha1(&self) -> PowerBound {
        self.cert.as_ref().map_or(PowerBound::quadratic(1.0), CertificateFamily::alpha1)
    }
}

/// Per-trajectory summary, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub seed: u64,
    /// `sup_t ‖x(t)‖`; `+∞` if divergent.
    pub sup_norm: f64,
    pub terminal_norm: f64,
    /// `sup_{t ≥ tail_start} ‖x(t)‖`.
    pub tail_sup: f64,
    pub jumps: usize,
    pub divergent: bool,
    #[serde(skip)]
    v_at_switches: Vec<f64>,
    #[serde(skip)]
    alpha1_grid: Vec<f64>,
    #[serde(skip)]
    v_grid: Vec<f64>,
}

/// Empirical mean of `V_σ(τ_j)(x(τ_j))` over trajectories reaching jump `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchMoment {
    pub j: usize,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub trials: usize,
    pub master_seed: u64,
    pub horizon: f64,
    pub tail_start: f64,
    pub records: Vec<TrajectoryRecord>,
    pub sample_times: Vec<f64>,
    /// `E[α₁(‖x(t)‖)]` on `sample_times`, over non-divergent trajectories.
    pub mean_alpha1: Vec<f64>,
    /// `E[V_σ(t)(x(t))]` on `sample_times` when a certificate is present.
    pub mean_lyapunov: Option<Vec<f64>>,
    pub v_at_switches: Vec<SwitchMoment>,
    pub divergent_count: usize,
}

impl EnsembleStats {
    pub fn sup_norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.sup_norm)
    }

    pub fn terminal_norms(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.terminal_norm)
    }

    pub fn tail_sups(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.tail_sup)
    }

    pub fn fraction_terminal_below(&self, threshold: f64) -> f64 {
        self.terminal_norms().filter(|&r| r < threshold).count() as f64 / self.trials as f64
    }

    /// Median terminal norm; divergent trajectories count as `+∞`.
    pub fn median_terminal_norm(&self) -> f64 {
        let mut v: Vec<f64> = self.terminal_norms().collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

fn simulate_one(scn: &Scenario, fields: &[crate::dynamics::VectorFieldSpec], breaks: &[f64], sample_times: &[f64], tail_start: f64, index: u64, seed: u64) -> Result<TrajectoryRecord> {
    let path = scn.law.sample_path(scn.horizon, seed)?;
    let alpha1 = scn.alpha1();
    let cert = scn.cert.as_ref();
    let mut sup = 0.0_f64;
    let mut tail = 0.0_f64;
    let mut last = 0.0;
    let mut v_at_switches = Vec::with_capacity(path.jumps() + 1);
    let mut alpha1_grid = Vec::with_capacity(sample_times.len());
    let mut v_grid = Vec::with_capacity(if cert.is_some() { sample_times.len() } else { 0 });
    let mut next_sample = 0;
    let outcome = integrate_streaming(fields, &path, &scn.x0, scn.step, breaks, |p| {
        let r = norm(p.x);
        sup = sup.max(r);
        if p.t >= tail_start {
            tail = tail.max(r);
        }
        last = r;
        if p.jump.is_some() {
            if let Some(c) = cert {
                v_at_switches.push(c.function(p.mode).value(p.x));
            }
        }
        if next_sample < sample_times.len() && p.t == sample_times[next_sample] {
            alpha1_grid.push(alpha1.eval(r));
            if let Some(c) = cert {
                v_grid.push(c.function(p.mode).value(p.x));
            }
            next_sample += 1;
        }
    })?;
    let divergent = outcome.divergence.is_some();
    if divergent {
        sup = f64::INFINITY;
        tail = f64::INFINITY;
        last = f64::INFINITY;
    }
    Ok(TrajectoryRecord {
        index,
        seed,
        sup_norm: sup,
        terminal_norm: last,
        tail_sup: tail,
        jumps: path.jumps(),
        divergent,
        v_at_switches,
        alpha1_grid,
        v_grid,
    })
}

fn grid_means(records: &[TrajectoryRecord], len: usize, pick: impl Fn(&TrajectoryRecord) -> &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; len];
    let mut count = 0usize;
    for r in records.iter().filter(|r| !r.divergent) {
        for (s, v) in sums.iter_mut().zip(pick(r)) {
            *s += v;
        }
        count += 1;
    }
    sums.into_iter().map(|s| s / count as f64).collect()
}

/// Simulates `trials` trajectories of `scn`.
///
/// `tail_start` fixes the `T*` for the tail supremum statistic.
pub fn run_ensemble(scn: &Scenario, trials: usize, master_seed: u64, tail_start: f64) -> Result<EnsembleStats> {
    scn.validate()?;
    if trials == 0 {
        return Err(Error::domain("trials must be >= 1"));
    }
    if !(0.0..=scn.horizon).contains(&tail_start) {
        return Err(Error::domain(format!("tail_start {tail_start} outside [0, {}]", scn.horizon)));
    }
    let fields = scn.family.mode_fields(scn.controller.as_ref())?;
    let sample_times = scn.sample_times();
    let mut breaks = sample_times.clone();
    breaks.push(tail_start);

    let records = (0..trials as u64)
        .into_par_iter()
        .map(|k| simulate_one(scn, &fields, &breaks, &sample_times, tail_start, k, derive_seed(master_seed, k)))
        .collect::<Result<Vec<_>>>()?;

    let divergent_count = records.iter().filter(|r| r.divergent).count();
    let mean_alpha1 = grid_means(&records, sample_times.len(), |r| &r.alpha1_grid);
    let mean_lyapunov = scn.cert.as_ref().map(|_| grid_means(&records, sample_times.len(), |r| &r.v_grid));

    let max_j = records.iter().map(|r| r.v_at_switches.len()).max().unwrap_or(0);
    let v_at_switches = (0..max_j)
        .map(|j| {
            let vals: Vec<f64> = records.iter().filter_map(|r| r.v_at_switches.get(j).copied()).collect();
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count as f64;
            let std_error = if count > 1 {
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            } else {
                0.0
            };
            SwitchMoment { j, count, mean, std_error }
        })
        .collect();

    Ok(EnsembleStats {
        trials,
        master_seed,
        horizon: scn.horizon,
        tail_start,
        records,
        sample_times,
        mean_alpha1,
        mean_lyapunov,
        v_at_switches,
        divergent_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub j: usize,
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
    pub bound: f64,
    /// `mean / bound`.
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    /// Per-switch contraction factor `η(0)` (or `θ̂` for GH laws).
    pub eta: f64,
    pub alpha2_x0: f64,
    pub rows: Vec<DecayRow>,
    pub pass: bool,
}

/// Per-switch contraction factor for the law: `η(0)` for EH/UH, `θ̂` for GH.
/// Fails when the matching condition does not hold.
pub fn contraction_factor(cert: &CertificateFamily, law: &SwitchingLaw) -> Result<f64> {
    let eta = match law.class() {
        SignalClass::EH | SignalClass::UH => {
            eta_for_law(law, 0.0, &cert.rates().per_mode(), cert.mu())?
                .ok_or_else(|| Error::domain("(E3) fails: η(0) is undefined"))?
        }
        SignalClass::GH => {
            let v = check_for_law(cert, law)?;
            v.value().ok_or_else(|| Error::domain(v.inapplicable_reason.unwrap_or_default()))?
        }
    };
    if !(eta < 1.0) {
        return Err(Error::domain(format!("contraction factor {eta} ≥ 1: the stability condition does not hold")));
    }
    Ok(eta)
}

/// Compares the empirical `E[V_σ(τ_j)(x(τ_j))]` with `α₂(‖x₀‖)·η^j` at every
/// jump index reached by at least [`MIN_SURVIVORS`] trajectories. A row passes
/// when `mean ≤ bound·(1 + 3·SE/mean)`.
pub fn decay_check(stats: &EnsembleStats, cert: &CertificateFamily, law: &SwitchingLaw, x0: &[f64]) -> Result<DecayReport> {
    let eta = contraction_factor(cert, law)?;
    let alpha2_x0 = cert.alpha2().eval(norm(x0));
    let rows: Vec<DecayRow> = stats
        .v_at_switches
        .iter()
        .filter(|m| m.count >= MIN_SURVIVORS)
        .map(|m| {
            let bound = alpha2_x0 * eta.powi(m.j as i32);
            let pass = m.mean == 0.0 || m.mean <= bound * (1.0 + 3.0 * m.std_error / m.mean);
            DecayRow { j: m.j, count: m.count, mean: m.mean, std_error: m.std_error, bound, ratio: m.mean / bound, pass }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    Ok(DecayReport { eta, alpha2_x0, rows, pass })
}

/// Least-squares slope of `ln E[V(x(τ_j))]` against `j` over indices with at
/// least `min_count` samples and positive mean.
pub fn log_decay_slope(stats: &EnsembleStats, min_count: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = stats
        .v_at_switches
        .iter()
        .filter(|m| m.count >= min_count && m.mean > 0.0)
        .map(|m| (m.j as f64, m.mean.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Some(sxy / sxx)
}

/// Binomial proportion with a Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbabilityEstimate {
    pub eps: f64,
    pub t_star: f64,
    pub exceedances: usize,
    pub trials: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).clamp(0.0, 1.0), (center + half).clamp(0.0, 1.0))
}

/// Empirical `P{sup_{t ≥ T*} ‖x(t)‖ > ε}`. `t_star` must be the tail start the
/// ensemble was run with.
pub fn gasp_estimate(stats: &EnsembleStats, eps: f64, t_star: f64) -> Result<ProbabilityEstimate> {
    if t_star != stats.tail_start {
        return Err(Error::domain(format!("ensemble tail statistic was recorded from {} not {t_star}", stats.tail_start)));
    }
    let exceedances = stats.tail_sups().filter(|&s| s > eps).count();
    let (lower, upper) = wilson_interval(exceedances, stats.trials);
    Ok(ProbabilityEstimate {
        eps,
        t_star,
        exceedances,
        trials: stats.trials,
        estimate: exceedances as f64 / stats.trials as f64,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::VectorFieldSpec;
    use crate::linalg::Matrix;
    use crate::signal::Mode;

    fn scalar_family(rates: &[f64]) -> SubsystemFamily {
        SubsystemFamily::new(rates.iter().map(|&a| VectorFieldSpec::linear(Matrix::diag(&[a])).unwrap()).collect()).unwrap()
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo.abs() < 1e-15);
        assert!(hi > 0.0 && hi < 0.05);
        let (lo, hi) = wilson_interval(100, 100);
        assert!(lo > 0.95 && hi == 1.0);
        let (lo, hi) = wilson_interval(30, 100);
        assert!(lo < 0.3 && hi > 0.3);
    }

    #[test]
    fn zero_state_gives_zero_statistics() {
        let scn = Scenario::new(scalar_family(&[1.0, -1.0]), SwitchingLaw::eh(3.0, vec![0.5, 0.5], Mode(0)).unwrap(), vec![0.0], 2.0)
            .unwrap()
            .with_step(1e-2)
            .unwrap();
        let s = run_ensemble(&scn, 20, 1, 1.0).unwrap();
        assert!(s.sup_norms().all(|v| v == 0.0));
        assert!(s.terminal_norms().all(|v| v == 0.0));
        assert!(s.tail_sups().all(|v| v == 0.0));
        assert!(s.mean_alpha1.iter().all(|&v| v == 0.0));
        assert_eq!(s.divergent_count, 0);
    }

    #[test]
    fn divergent_runs_are_flagged() {
        let scn = Scenario::new(scalar_family(&[40.0]), SwitchingLaw::eh(1.0, vec![1.0], Mode(0)).unwrap(), vec![1.0], 2.0)
            .unwrap()
            .with_step(1e-2)
            .unwrap();
        let s = run_ensemble(&scn, 5, 3, 0.0).unwrap();
        assert_eq!(s.divergent_count, 5);
        assert!(s.sup_norms().all(f64::is_infinite));
        assert!(s.records.iter().all(|r| r.tail_sup <= r.sup_norm));
        assert!(s.mean_alpha1.iter().all(|v| v.is_nan()));
    }

    #[test]
    fn tail_start_checked() {
        let scn = Scenario::new(scalar_family(&[-1.0]), SwitchingLaw::eh(1.0, vec![1.0], Mode(0)).unwrap(), vec![1.0], 1.0).unwrap();
        assert!(run_ensemble(&scn, 1, 0, 2.0).is_err());
        assert!(run_ensemble(&scn, 0, 0, 0.5).is_err());
        let s = run_ensemble(&scn, 2, 0, 0.5).unwrap();
        assert!(gasp_estimate(&s, 1.0, 0.25).is_err());
    }

    #[test]
    fn sample_grid() {
        let mut scn = Scenario::new(scalar_family(&[-1.0]), SwitchingLaw::eh(1.0, vec![1.0], Mode(0)).unwrap(), vec![1.0], 1.0).unwrap();
        scn.sample_interval = 0.1;
        let g = scn.sample_times();
        assert_eq!(g.len(), 11);
        assert_eq!(g[10], 1.0);
    }
}
