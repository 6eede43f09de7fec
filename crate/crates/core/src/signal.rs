//! Switching laws and sampled switching paths.
//!
//! A switching signal is described by its holding-time distribution (the
//! durations between consecutive jumps) and its jump law (where each jump
//! lands). The two are sampled independently. Three signal classes are
//! supported:
//!
//! * `EH`: exponential holding times, i.i.d. jump destinations;
//! * `UH`: uniform holding times on `(0, T]`, i.i.d. jump destinations;
//! * `GH`: any holding distribution with finite mean, Markov-chain jump
//!   destinations.

use std::fmt;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::quadrature::adaptive_simpson;
use crate::rng::{rng_from_seed, Rng};
use crate::{Error, Result};

const PROB_SUM_TOL: f64 = 1e-12;
/// Below this `|s·T|` the uniform MGF switches to its Taylor series.
const SERIES_CUTOFF: f64 = 1e-6;
const TABULATED_MGF_TOL: f64 = 1e-10;

/// A subsystem index. Stored zero-based; displayed and serialised one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "usize", try_from = "usize")]
pub struct Mode(pub usize);

impl Mode {
    pub fn index(self) -> usize {
        self.0
    }

    /// Mode from its one-based label.
    pub fn from_label(label: usize) -> Result<Self> {
        label
            .checked_sub(1)
            .map(Mode)
            .ok_or_else(|| Error::invalid("mode", "mode labels start at 1"))
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0 + 1)
    }
}

impl From<Mode> for usize {
    fn from(m: Mode) -> usize {
        m.0 + 1
    }
}

impl TryFrom<usize> for Mode {
    type Error = Error;
    fn try_from(label: usize) -> Result<Self> {
        Mode::from_label(label)
    }
}

/// Piecewise-linear inverse CDF on a grid of `(probability, duration)` knots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseCdf {
    probabilities: Vec<f64>,
    durations: Vec<f64>,
}

impl InverseCdf {
    /// The grid must start at probability 0, end at probability 1 and be
    /// strictly increasing in both coordinates with positive durations.
    pub fn new(probabilities: Vec<f64>, durations: Vec<f64>) -> Result<Self> {
        if probabilities.len() != durations.len() || probabilities.len() < 2 {
            return Err(Error::invalid(
                "tabulated holding distribution",
                "need at least two knots and equally many probabilities and durations",
            ));
        }
        if probabilities[0] != 0.0 || *probabilities.last().unwrap() != 1.0 {
            return Err(Error::invalid("tabulated holding distribution", "probabilities must run from 0 to 1"));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&probabilities) || !increasing(&durations) {
            return Err(Error::invalid("tabulated holding distribution", "knots must be strictly increasing"));
        }
        if !(durations[0] > 0.0) || durations.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("tabulated holding distribution", "durations must be finite and positive"));
        }
        Ok(Self { probabilities, durations })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    /// Duration at probability level `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        let p = &self.probabilities;
        let k = p.partition_point(|&pk| pk <= u).clamp(1, p.len() - 1) - 1;
        let w = (u - p[k]) / (p[k + 1] - p[k]);
        self.durations[k] + w * (self.durations[k + 1] - self.durations[k])
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let d = &self.durations;
        if x < d[0] {
            return 0.0;
        }
        if x >= *d.last().unwrap() {
            return 1.0;
        }
        let k = d.partition_point(|&dk| dk <= x) - 1;
        let w = (x - d[k]) / (d[k + 1] - d[k]);
        self.probabilities[k] + w * (self.probabilities[k + 1] - self.probabilities[k])
    }

    fn segments(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.probabilities
            .windows(2)
            .zip(self.durations.windows(2))
            .map(|(p, d)| ((p[0], p[1]), (d[0], d[1])))
    }
}

/// Distribution of the i.i.d. holding times between jumps.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HoldingDistribution {
    Exponential { rate: f64 },
    /// Uniform on `(0, max]`.
    Uniform { max: f64 },
    PointMass { duration: f64 },
    Tabulated(InverseCdf),
}

impl HoldingDistribution {
    pub fn exponential(rate: f64) -> Result<Self> {
        positive("exponential rate", rate)?;
        Ok(Self::Exponential { rate })
    }

    pub fn uniform(max: f64) -> Result<Self> {
        positive("uniform bound T", max)?;
        Ok(Self::Uniform { max })
    }

    pub fn point_mass(duration: f64) -> Result<Self> {
        positive("point-mass duration", duration)?;
        Ok(Self::PointMass { duration })
    }

    pub fn tabulated(probabilities: Vec<f64>, durations: Vec<f64>) -> Result<Self> {
        InverseCdf::new(probabilities, durations).map(Self::Tabulated)
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Uniform { max } => 0.5 * max,
            Self::PointMass { duration } => *duration,
            Self::Tabulated(t) => t.segments().map(|((p0, p1), (d0, d1))| (p1 - p0) * 0.5 * (d0 + d1)).sum(),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Self::Uniform { max } => (x / max).clamp(0.0, 1.0),
            Self::PointMass { duration } => {
                if x >= *duration {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tabulated(t) => t.cdf(x),
        }
    }

    /// Draws one strictly positive holding time.
    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            Self::Exponential { rate } => loop {
                let s: f64 = Exp::new(*rate).expect("validated rate").sample(rng);
                if s > 0.0 {
                    break s;
                }
            },
            // 1 - U with U in [0, 1) lands in (0, 1]
            Self::Uniform { max } => max * (1.0 - rng.gen::<f64>()),
            Self::PointMass { duration } => *duration,
            Self::Tabulated(t) => t.quantile(rng.gen::<f64>()),
        }
    }

    /// `E[exp(-s·S)]`, or `None` when the expectation diverges.
    pub fn mgf(&self, s: f64) -> Option<f64> {
        let value = match self {
            Self::Exponential { rate } => {
                if s <= -rate {
                    return None;
                }
                rate / (rate + s)
            }
            Self::Uniform { max } => relative_decay(s * max),
            Self::PointMass { duration } => (-s * duration).exp(),
            Self::Tabulated(t) => t
                .segments()
                .map(|((p0, p1), (d0, d1))| {
                    let slope = (d1 - d0) / (p1 - p0);
                    adaptive_simpson(|p| (-s * (d0 + slope * (p - p0))).exp(), p0, p1, TABULATED_MGF_TOL)
                })
                .sum(),
        };
        value.is_finite().then_some(value)
    }
}

/// `(1 - e^{-z}) / z`, continuous through `z = 0`.
pub fn relative_decay(z: f64) -> f64 {
    if z.abs() < SERIES_CUTOFF {
        1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0
    } else {
        -(-z).exp_m1() / z
    }
}

fn positive(what: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(what, format!("must be finite and > 0, got {v}")))
    }
}

fn check_probability_vector(what: &'static str, q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return Err(Error::invalid(what, "empty probability vector"));
    }
    if q.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(what, "entries must lie in [0, 1]"));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::invalid(what, format!("entries sum to {sum}, expected 1")));
    }
    Ok(())
}

fn sample_categorical(weights: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass; take the last supported index
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// How jump destinations are drawn.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpKernel {
    /// Destinations i.i.d. with probabilities `q`.
    Iid { q: Vec<f64> },
    /// Discrete-time Markov chain with row-stochastic transition matrix.
    Markov { transition: Matrix },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpLaw {
    pub kernel: JumpKernel,
    pub initial: Mode,
}

impl JumpLaw {
    pub fn iid(q: Vec<f64>, initial: Mode) -> Result<Self> {
        check_probability_vector("jump probabilities q", &q)?;
        if initial.0 >= q.len() {
            return Err(Error::invalid("initial mode", format!("{initial} exceeds {} modes", q.len())));
        }
        Ok(Self { kernel: JumpKernel::Iid { q }, initial })
    }

    pub fn markov(transition: Matrix, initial: Mode) -> Result<Self> {
        if !transition.is_square() || transition.rows() == 0 {
            return Err(Error::invalid("transition matrix", "must be square and non-empty"));
        }
        for i in 0..transition.rows() {
            check_probability_vector("transition matrix row", transition.row(i))?;
        }
        if initial.0 >= transition.rows() {
            return Err(Error::invalid("initial mode", format!("{initial} exceeds {} modes", transition.rows())));
        }
        Ok(Self { kernel: JumpKernel::Markov { transition }, initial })
    }

    pub fn modes(&self) -> usize {
        match &self.kernel {
            JumpKernel::Iid { q } => q.len(),
            JumpKernel::Markov { transition } => transition.rows(),
        }
    }

    pub fn next(&self, current: Mode, rng: &mut Rng) -> Mode {
        let weights = match &self.kernel {
            JumpKernel::Iid { q } => q.as_slice(),
            JumpKernel::Markov { transition } => transition.row(current.0),
        };
        Mode(sample_categorical(weights, rng))
    }

    /// Probability of jumping to `to` from `from`.
    pub fn probability(&self, from: Mode, to: Mode) -> f64 {
        match &self.kernel {
            JumpKernel::Iid { q } => q[to.0],
            JumpKernel::Markov { transition } => transition[(from.0, to.0)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalClass {
    EH,
    UH,
    GH,
}

impl fmt::Display for SignalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SignalClass::EH => "EH",
            SignalClass::UH => "UH",
            SignalClass::GH => "GH",
        };
        f.write_str(s)
    }
}

/// A validated switching law. Fields are private so the class tag always
/// agrees with the holding and jump kinds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingLaw {
    class: SignalClass,
    holding: HoldingDistribution,
    jumps: JumpLaw,
}

impl SwitchingLaw {
    /// Exponential holding times with the given rate, i.i.d. destinations.
    pub fn eh(rate: f64, q: Vec<f64>, initial: Mode) -> Result<Self> {
        Ok(Self { class: SignalClass::EH, holding: HoldingDistribution::exponential(rate)?, jumps: JumpLaw::iid(q, initial)? })
    }

    /// Uniform holding times on `(0, max]`, i.i.d. destinations.
    pub fn uh(max: f64, q: Vec<f64>, initial: Mode) -> Result<Self> {
        Ok(Self { class: SignalClass::UH, holding: HoldingDistribution::uniform(max)?, jumps: JumpLaw::iid(q, initial)? })
    }

    /// General i.i.d. holding times, Markov-chain destinations.
    pub fn gh(holding: HoldingDistribution, transition: Matrix, initial: Mode) -> Result<Self> {
        Ok(Self { class: SignalClass::GH, holding, jumps: JumpLaw::markov(transition, initial)? })
    }

    pub fn class(&self) -> SignalClass {
        self.class
    }

    pub fn holding(&self) -> &HoldingDistribution {
        &self.holding
    }

    pub fn jumps(&self) -> &JumpLaw {
        &self.jumps
    }

    pub fn initial(&self) -> Mode {
        self.jumps.initial
    }

    pub fn modes(&self) -> usize {
        self.jumps.modes()
    }

    /// Jump probabilities `q` for the i.i.d. classes.
    pub fn iid_probabilities(&self) -> Option<&[f64]> {
        match &self.jumps.kernel {
            JumpKernel::Iid { q } => Some(q),
            JumpKernel::Markov { .. } => None,
        }
    }

    /// Samples one path on `[0, horizon]`. Identical seeds give identical paths.
    pub fn sample_path(&self, horizon: f64, seed: u64) -> Result<SwitchingPath> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon must be finite and >= 0, got {horizon}")));
        }
        let mut rng = rng_from_seed(seed);
        let mut times = vec![0.0];
        let mut modes = vec![self.jumps.initial];
        let mut t = 0.0;
        loop {
            let next = t + self.holding.sample(&mut rng);
            if next > horizon || next <= t {
                break;
            }
            let mode = self.jumps.next(*modes.last().unwrap(), &mut rng);
            times.push(next);
            modes.push(mode);
            t = next;
        }
        Ok(SwitchingPath { times, modes, horizon })
    }
}

/// One realised switching signal on `[0, horizon]`: jump instants and the
/// mode entered at each. Right-continuous and piecewise constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingPath {
    times: Vec<f64>,
    modes: Vec<Mode>,
    horizon: f64,
}

impl SwitchingPath {
    pub fn new(times: Vec<f64>, modes: Vec<Mode>, horizon: f64) -> Result<Self> {
        if times.is_empty() || times[0] != 0.0 {
            return Err(Error::invalid("switching path", "first time must be exactly 0"));
        }
        if times.len() != modes.len() {
            return Err(Error::invalid("switching path", "times and modes differ in length"));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::invalid("switching path", "times must be strictly increasing"));
        }
        if *times.last().unwrap() > horizon || !horizon.is_finite() {
            return Err(Error::invalid("switching path", "jump after the horizon"));
        }
        Ok(Self { times, modes, horizon })
    }

    /// A path with no jumps.
    pub fn constant(mode: Mode, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![mode], horizon)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn jumps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn holding_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    /// Active mode at `t`, right-continuous at the jump instants.
    pub fn mode_at(&self, t: f64) -> Result<Mode> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        let i = self.times.partition_point(|&tau| tau <= t) - 1;
        Ok(self.modes[i])
    }

    /// Largest mode index referenced, for validating against a family.
    pub fn max_mode(&self) -> Mode {
        *self.modes.iter().max().unwrap()
    }
}
