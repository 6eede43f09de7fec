//! The `check`, `simulate` and `synthesize` workflows behind the
//! `switchstab` binary.
//!
//! Each command returns an [`Outcome`] carrying the exit code and the text
//! destined for standard output and standard error, so the workflows can be
//! driven from tests without spawning a process.
//!
//! Exit codes: 0 success, 1 domain-level failure (condition unsatisfied,
//! certificate or CLF violation, failed statistical check), 2 usage or
//! parse error.

use std::path::{Path, PathBuf};

use serde::Serialize;
use switchstab::certificates::{default_samples, verify_pointwise, Violation, DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLE_SEED};
use switchstab::conditions::{check_for_law, mean_bound_uh, ConditionVerdict};
use switchstab::export::{json_string, records_csv, write_atomic};
use switchstab::linalg::norm;
use switchstab::montecarlo::{decay_check, gasp_estimate, run_ensemble, DecayReport, EnsembleStats, ProbabilityEstimate, SwitchMoment};
use switchstab::scenario::{controller_json, load, ConstantOrigin, LoadedScenario, Overrides};
use switchstab::synthesis::{verify_clf_all, verify_closed_loop_decrease};
use switchstab::{CertificateFamily, ControllerSpec, Error, PowerBound, Rates, Scenario, SignalClass, SubsystemFamily};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Relative tolerance for pointwise certificate checks.
pub const CHECK_TOL: f64 = 1e-9;
/// Violations listed in reports; the count is always complete.
const MAX_LISTED: usize = 20;
/// Terminal norm below which a closed-loop trajectory counts as converged.
pub const CONVERGED_NORM: f64 = 1e-2;

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const CONTROLLER_FILE: &str = "controller.json";
pub const SYNTHESIS_FILE: &str = "synthesis.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Outcome {
    fn json<T: Serialize>(code: i32, doc: &T) -> Self {
        match json_string(doc) {
            Ok(stdout) => Self { code, stdout, stderr: String::new() },
            Err(e) => Self::error(&e),
        }
    }

    fn error(e: &Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Io(_) | Error::Json(_) => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        };
        Self { code, stdout: String::new(), stderr: format!("error: {e}\n") }
    }
}

/// Unwraps or returns the error outcome.
macro_rules! attempt {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return Outcome::error(&e),
        }
    };
}

#[derive(Serialize)]
struct Constants<'a> {
    class: SignalClass,
    lambda: &'a Rates,
    mu: f64,
    alpha1: PowerBound,
    alpha2: PowerBound,
    #[serde(flatten)]
    origin: ConstantOrigin,
}

impl<'a> Constants<'a> {
    fn new(cert: &'a CertificateFamily, class: SignalClass, origin: ConstantOrigin) -> Self {
        Self { class, lambda: cert.rates(), mu: cert.mu(), alpha1: cert.alpha1(), alpha2: cert.alpha2(), origin }
    }
}

#[derive(Serialize)]
struct ViolationList {
    count: usize,
    listed: Vec<Violation>,
}

impl From<Vec<Violation>> for ViolationList {
    fn from(mut v: Vec<Violation>) -> Self {
        let count = v.len();
        v.truncate(MAX_LISTED);
        Self { count, listed: v }
    }
}

#[derive(Serialize)]
struct CheckReport<'a> {
    command: &'static str,
    #[serde(flatten)]
    verdict: &'a ConditionVerdict,
    certificate_ok: bool,
    constants: Constants<'a>,
    certificate_violations: ViolationList,
}

/// The right-hand sides actually integrated, closed through the controller.
fn effective_family(scn: &Scenario) -> switchstab::Result<SubsystemFamily> {
    SubsystemFamily::new(scn.family.mode_fields(scn.controller.as_ref())?)
}

fn certificate_of(loaded: &LoadedScenario) -> switchstab::Result<&CertificateFamily> {
    loaded
        .scenario
        .cert
        .as_ref()
        .ok_or_else(|| Error::Config("the scenario has no [certificate] section".into()))
}

/// Pointwise certificate check on the effective family plus the condition
/// matching the switching class.
fn evaluate(loaded: &LoadedScenario) -> switchstab::Result<(ConditionVerdict, Vec<Violation>)> {
    let scn = &loaded.scenario;
    let cert = certificate_of(loaded)?;
    let family = effective_family(scn)?;
    let samples = default_samples(family.dim(), DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLE_SEED);
    let violations = verify_pointwise(&family, cert, &samples, CHECK_TOL)?;
    let verdict = check_for_law(cert, &scn.law)?;
    Ok((verdict, violations))
}

/// Verifies the certificate and evaluates the stability condition.
/// Exit 0 iff both hold.
pub fn cmd_check(path: &Path, overrides: &Overrides) -> Outcome {
    let loaded = attempt!(load(path, overrides));
    let (verdict, violations) = attempt!(evaluate(&loaded));
    let cert = loaded.scenario.cert.as_ref().unwrap();
    let certificate_ok = violations.is_empty();
    let code = if verdict.satisfied && certificate_ok { EXIT_OK } else { EXIT_DOMAIN };
    let report = CheckReport {
        command: "check",
        verdict: &verdict,
        certificate_ok,
        constants: Constants::new(cert, loaded.scenario.law.class(), loaded.origin),
        certificate_violations: violations.into(),
    };
    Outcome::json(code, &report)
}

#[derive(Serialize)]
struct Spread {
    min: f64,
    median: f64,
    max: f64,
}

impl Spread {
    fn of(values: impl Iterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.collect();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Self { min: v[0], median, max: v[n - 1] }
    }
}

#[derive(Serialize)]
struct MeanBoundReport {
    bound: f64,
    empirical_sup_mean_v: f64,
    pass: bool,
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    command: &'static str,
    trials: usize,
    seed: u64,
    horizon: f64,
    step: f64,
    tail_start: f64,
    class: SignalClass,
    closed_loop: bool,
    divergent_count: usize,
    sup_norm: Spread,
    terminal_norm: Spread,
    fraction_converged: f64,
    verdict: Option<ConditionVerdict>,
    decay_check: Option<DecayReport>,
    mean_bound: Option<MeanBoundReport>,
    exceedance: Vec<ProbabilityEstimate>,
    sample_times: &'a [f64],
    mean_alpha1: &'a [f64],
    mean_lyapunov: Option<&'a [f64]>,
    v_at_switches: &'a [SwitchMoment],
    files: Option<Files>,
}

#[derive(Serialize)]
struct Files {
    summary: &'static str,
    trajectories: &'static str,
}

struct Simulation<'a> {
    summary: SimulationSummary<'a>,
    checks_pass: bool,
}

fn simulate<'a>(loaded: &LoadedScenario, stats: &'a EnsembleStats) -> switchstab::Result<Simulation<'a>> {
    let scn = &loaded.scenario;
    let run = &loaded.run;
    let verdict = scn.cert.as_ref().map(|c| check_for_law(c, &scn.law)).transpose()?;
    let satisfied = verdict.as_ref().is_some_and(|v| v.satisfied);
    let mut checks_pass = true;
    let mut decay = None;
    let mut mean_bound = None;
    if let (Some(cert), true) = (&scn.cert, satisfied) {
        let report = decay_check(stats, cert, &scn.law, &scn.x0)?;
        checks_pass &= report.pass;
        decay = Some(report);
        if scn.law.class() == SignalClass::UH {
            let bound = mean_bound_uh(cert, &scn.law, norm(&scn.x0))?;
            let sup = stats.mean_lyapunov.as_deref().unwrap_or(&[]).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pass = sup <= bound;
            checks_pass &= pass;
            mean_bound = Some(MeanBoundReport { bound, empirical_sup_mean_v: sup, pass });
        }
    }
    let exceedance = run
        .epsilons
        .iter()
        .map(|&eps| gasp_estimate(stats, eps, run.tail_start))
        .collect::<switchstab::Result<Vec<_>>>()?;
    let summary = SimulationSummary {
        command: "simulate",
        trials: stats.trials,
        seed: stats.master_seed,
        horizon: stats.horizon,
        step: scn.step,
        tail_start: stats.tail_start,
        class: scn.law.class(),
        closed_loop: scn.controller.is_some(),
        divergent_count: stats.divergent_count,
        sup_norm: Spread::of(stats.sup_norms()),
        terminal_norm: Spread::of(stats.terminal_norms()),
        fraction_converged: stats.fraction_terminal_below(CONVERGED_NORM),
        verdict,
        decay_check: decay,
        mean_bound,
        exceedance,
        sample_times: &stats.sample_times,
        mean_alpha1: &stats.mean_alpha1,
        mean_lyapunov: stats.mean_lyapunov.as_deref(),
        v_at_switches: &stats.v_at_switches,
        files: None,
    };
    Ok(Simulation { summary, checks_pass })
}

fn ensure_dir(dir: &Path) -> switchstab::Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Runs the ensemble and reports the statistics. When the scenario has a
/// certificate and its condition holds, the decay check (and for UH laws the
/// mean bound) is included; exit 1 if one of them fails. With `out_dir`,
/// writes the summary JSON and the per-trajectory CSV there.
pub fn cmd_simulate(path: &Path, overrides: &Overrides, out_dir: Option<&Path>) -> Outcome {
    let loaded = attempt!(load(path, overrides));
    let stats = attempt!(run_ensemble(&loaded.scenario, loaded.run.trials, loaded.run.seed, loaded.run.tail_start));
    let mut sim = attempt!(simulate(&loaded, &stats));
    if let Some(dir) = out_dir {
        sim.summary.files = Some(Files { summary: SUMMARY_FILE, trajectories: TRAJECTORIES_FILE });
        let text = attempt!(json_string(&sim.summary));
        attempt!(ensure_dir(dir));
        attempt!(write_atomic(&dir.join(SUMMARY_FILE), text.as_bytes()));
        attempt!(write_atomic(&dir.join(TRAJECTORIES_FILE), records_csv(&stats).as_bytes()));
    }
    Outcome::json(if sim.checks_pass { EXIT_OK } else { EXIT_DOMAIN }, &sim.summary)
}

#[derive(Serialize)]
struct SynthesisReport<'a> {
    command: &'static str,
    controller: &'a ControllerSpec,
    clf_violations: Option<ViolationList>,
    decrease_violations: ViolationList,
    check: CheckStage<'a>,
    simulation: Option<ClosedLoopRun>,
    pass: bool,
    files: Option<SynthesisFiles>,
}

#[derive(Serialize)]
struct CheckStage<'a> {
    #[serde(flatten)]
    verdict: &'a ConditionVerdict,
    certificate_ok: bool,
    constants: Constants<'a>,
}

#[derive(Serialize)]
struct ClosedLoopRun {
    trials: usize,
    seed: u64,
    horizon: f64,
    divergent_count: usize,
    terminal_norm: Spread,
    fraction_converged: f64,
    decay_check: Option<DecayReport>,
}

#[derive(Serialize)]
struct SynthesisFiles {
    report: &'static str,
    controller: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct SynthesizeOptions {
    /// Write the controller description and stop.
    pub emit_controller: bool,
    pub out_dir: Option<PathBuf>,
}

/// Builds the controller (the configured one, or the universal formula on
/// the certificate when none is configured), verifies the CLF condition and
/// the closed-loop decrease, evaluates the stability condition with the
/// closed-loop rates and, if all of that passes, simulates the closed loop.
/// Exit 0 iff every verification stage and the closed-loop decay check pass.
pub fn cmd_synthesize(path: &Path, overrides: &Overrides, opts: &SynthesizeOptions) -> Outcome {
    let mut loaded = attempt!(load(path, overrides));
    let cert = attempt!(certificate_of(&loaded)).clone();
    if loaded.scenario.family.control(switchstab::Mode(0)).is_none() {
        return Outcome::error(&Error::Config("synthesis needs control fields (system.control)".into()));
    }
    if loaded.scenario.controller.is_none() {
        let k = attempt!(ControllerSpec::universal_from(&cert));
        loaded.scenario = attempt!(loaded.scenario.with_controller(k));
    }
    let controller = loaded.scenario.controller.clone().unwrap();

    if opts.emit_controller {
        let text = attempt!(controller_json(&controller));
        return match &opts.out_dir {
            Some(dir) => {
                attempt!(ensure_dir(dir));
                attempt!(write_atomic(&dir.join(CONTROLLER_FILE), text.as_bytes()));
                Outcome { code: EXIT_OK, stdout: text, stderr: String::new() }
            }
            None => Outcome { code: EXIT_OK, stdout: text, stderr: String::new() },
        };
    }

    let scn = &loaded.scenario;
    let samples = default_samples(scn.family.dim(), DEFAULT_SAMPLE_COUNT, DEFAULT_SAMPLE_SEED);
    let clf = match controller {
        ControllerSpec::Universal { .. } => Some(attempt!(verify_clf_all(&scn.family, &cert, &samples, CHECK_TOL))),
        _ => None,
    };
    let decrease = attempt!(verify_closed_loop_decrease(&scn.family, &cert, &controller, &samples, CHECK_TOL));
    let (verdict, violations) = attempt!(evaluate(&loaded));
    let certificate_ok = violations.is_empty();
    let verified = clf.as_ref().map_or(true, Vec::is_empty) && decrease.is_empty() && certificate_ok && verdict.satisfied;

    let simulation = if verified {
        let run = &loaded.run;
        let stats = attempt!(run_ensemble(scn, run.trials, run.seed, run.tail_start));
        let decay = attempt!(decay_check(&stats, &cert, &scn.law, &scn.x0));
        Some(ClosedLoopRun {
            trials: stats.trials,
            seed: stats.master_seed,
            horizon: stats.horizon,
            divergent_count: stats.divergent_count,
            terminal_norm: Spread::of(stats.terminal_norms()),
            fraction_converged: stats.fraction_terminal_below(CONVERGED_NORM),
            decay_check: Some(decay),
        })
    } else {
        None
    };
    let pass = verified && simulation.as_ref().is_some_and(|s| s.decay_check.as_ref().map_or(true, |d| d.pass));

    let mut report = SynthesisReport {
        command: "synthesize",
        controller: &controller,
        clf_violations: clf.map(ViolationList::from),
        decrease_violations: decrease.into(),
        check: CheckStage {
            verdict: &verdict,
            certificate_ok,
            constants: Constants::new(&cert, scn.law.class(), loaded.origin),
        },
        simulation,
        pass,
        files: None,
    };
    if let Some(dir) = &opts.out_dir {
        report.files = Some(SynthesisFiles { report: SYNTHESIS_FILE, controller: CONTROLLER_FILE });
        let text = attempt!(json_string(&report));
        let k = attempt!(controller_json(&controller));
        attempt!(ensure_dir(dir));
        attempt!(write_atomic(&dir.join(SYNTHESIS_FILE), text.as_bytes()));
        attempt!(write_atomic(&dir.join(CONTROLLER_FILE), k.as_bytes()));
    }
    Outcome::json(if pass { EXIT_OK } else { EXIT_DOMAIN }, &report)
}
