//! Scenario files: a TOML document with `system`, `switching`,
//! `certificate`, `controller` and `run` sections.
//!
//! ```toml
//! [system]
//! dimension = 1
//! modes = 2
//! drift = [{ matrix = [[-1.0]] }, { matrix = [[1.0]] }]
//!
//! [switching]
//! class = "EH"
//! rate = 6.0
//! q = [0.8, 0.2]
//! sigma0 = 1
//!
//! [certificate]
//! P = [[[1.0]], [[1.0]]]
//! mu = 1.01
//!
//! [run]
//! x0 = [1.0]
//! horizon = 20.0
//! ```
//!
//! Syntax and type errors carry the TOML parser's line and column; semantic
//! errors name the offending `section.key` and, where it can be found, its
//! line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::certificates::{
    extract_lambda_matrix, extract_lambda_quadratic, extract_mu, strict_mu, CertificateFamily, LyapunovSpec,
    PowerBound, Rates,
};
use crate::dynamics::{Monomial, PolynomialMap, SubsystemFamily, VectorFieldSpec, DEFAULT_STEP};
use crate::linalg::Matrix;
use crate::montecarlo::{Scenario, DEFAULT_SAMPLE_INTERVAL};
use crate::signal::{HoldingDistribution, Mode, SignalClass, SwitchingLaw};
use crate::synthesis::ControllerSpec;
use crate::{Error, Result};

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemSection,
    pub switching: SwitchingSection,
    pub certificate: Option<CertificateSection>,
    pub controller: Option<ControllerSection>,
    pub run: RunSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub dimension: usize,
    pub modes: usize,
    pub drift: Vec<FieldEntry>,
    /// Per mode, one field per input.
    pub control: Option<Vec<Vec<FieldEntry>>>,
}

/// A vector field: `matrix` for `x ↦ Ax`, or `monomials` with one list of
/// terms per output coordinate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub matrix: Option<Vec<Vec<f64>>>,
    pub monomials: Option<Vec<Vec<MonomialEntry>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialEntry {
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingSection {
    pub class: SignalClass,
    /// EH jump rate.
    pub rate: Option<f64>,
    /// UH support bound.
    #[serde(rename = "T")]
    pub t_max: Option<f64>,
    /// EH/UH destination probabilities.
    pub q: Option<Vec<f64>>,
    /// GH holding distribution.
    pub holding: Option<HoldingEntry>,
    /// GH destination matrix.
    pub transition: Option<Vec<Vec<f64>>>,
    /// One-based initial mode.
    #[serde(default = "one")]
    pub sigma0: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HoldingEntry {
    Exponential { rate: f64 },
    Uniform { max: f64 },
    PointMass { duration: f64 },
    Tabulated { probabilities: Vec<f64>, durations: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateSection {
    /// One symmetric positive definite matrix per mode.
    #[serde(rename = "P")]
    pub p: Option<Vec<Vec<Vec<f64>>>>,
    /// One polynomial per mode.
    pub polynomial: Option<Vec<Vec<MonomialEntry>>>,
    pub lambda: Option<Vec<f64>>,
    /// `lambda_matrix[i][j]` is the rate of `V_i` along mode `j`.
    pub lambda_matrix: Option<Vec<Vec<f64>>>,
    pub mu: Option<f64>,
    pub alpha1: Option<PowerEntry>,
    pub alpha2: Option<PowerEntry>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerEntry {
    pub coeff: f64,
    pub power: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSection {
    /// Universal formula on the certificate's `V_i`; `lambda` are the target
    /// rates and default to the certificate's.
    Universal { lambda: Option<Vec<f64>> },
    LinearGain { gain: Vec<Vec<f64>> },
    /// One list of terms per input.
    Polynomial { components: Vec<Vec<MonomialEntry>> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub step: Option<f64>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub tail_start: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub sample_interval: Option<f64>,
}

/// Command-line overrides of the `run` section.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub tail_start: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSettings {
    pub trials: usize,
    pub seed: u64,
    pub tail_start: f64,
    pub epsilons: Vec<f64>,
}

/// How the certificate constants were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ConstantOrigin {
    /// Rates computed from linear drifts and quadratic `V_i`.
    pub lambda_extracted: bool,
    pub mu_extracted: bool,
    /// Tight comparison constant before strictification.
    pub mu_star: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub run: RunSettings,
    pub origin: ConstantOrigin,
}

/// Reads, parses and builds the scenario at `path`.
pub fn load(path: &Path, overrides: &Overrides) -> Result<LoadedScenario> {
    let src = std::fs::read_to_string(path)?;
    from_toml(&src, overrides)
}

pub fn from_toml(src: &str, overrides: &Overrides) -> Result<LoadedScenario> {
    parse(src)?.build(src, overrides)
}

pub fn parse(src: &str) -> Result<ScenarioFile> {
    toml::from_str(src).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
}

/// Line of `key` inside `[section]`, one-based.
fn line_of(src: &str, section: &str, key: &str) -> Option<usize> {
    let header = format!("[{section}]");
    let mut inside = false;
    for (k, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') && !t.starts_with("[[") && t.ends_with(']') && !t.contains('=') {
            inside = t == header;
            continue;
        }
        if inside {
            if let Some(rest) = t.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(k + 1);
                }
            }
        }
    }
    src.lines().position(|l| l.trim() == header).map(|k| k + 1)
}

struct Diag<'a> {
    src: &'a str,
}

impl Diag<'_> {
    fn err(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        match line_of(self.src, section, key) {
            Some(l) => Error::Config(format!("line {l}: {section}.{key}: {msg}")),
            None => Error::Config(format!("{section}.{key}: {msg}")),
        }
    }

    fn wrap<T>(&self, section: &str, key: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| self.err(section, key, e))
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(rows)
}

fn monomials(terms: &[MonomialEntry]) -> Vec<Monomial> {
    terms.iter().map(|m| Monomial::new(m.exponents.clone(), m.coeff)).collect()
}

fn field(entry: &FieldEntry, n: usize) -> Result<VectorFieldSpec> {
    match (&entry.matrix, &entry.monomials) {
        (Some(a), None) => {
            let f = VectorFieldSpec::linear(matrix(a)?)?;
            if f.dim() != n {
                return Err(Error::dim("matrix field", n, f.dim()));
            }
            Ok(f)
        }
        (None, Some(comps)) => {
            VectorFieldSpec::polynomial_map(n, comps.iter().map(|c| monomials(c)).collect())
        }
        _ => Err(Error::invalid("field", "give exactly one of `matrix` or `monomials`")),
    }
}

impl ScenarioFile {
    pub fn build(&self, src: &str, overrides: &Overrides) -> Result<LoadedScenario> {
        let d = Diag { src };
        let sys = &self.system;
        let n = sys.dimension;
        if n == 0 {
            return Err(d.err("system", "dimension", "must be >= 1"));
        }
        if sys.drift.len() != sys.modes {
            return Err(d.err("system", "drift", format!("expected {} fields (one per mode), got {}", sys.modes, sys.drift.len())));
        }
        let drift = sys
            .drift
            .iter()
            .enumerate()
            .map(|(i, f)| field(f, n).map_err(|e| d.err("system", "drift", format!("mode {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        let mut family = d.wrap("system", "drift", SubsystemFamily::new(drift))?;
        if let Some(control) = &sys.control {
            let g = control
                .iter()
                .enumerate()
                .map(|(i, fs)| {
                    fs.iter()
                        .map(|f| field(f, n).map_err(|e| d.err("system", "control", format!("mode {}: {e}", i + 1))))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            family = d.wrap("system", "control", family.with_control(g))?;
        }

        let law = self.law(&d)?;
        let (cert, origin) = match &self.certificate {
            Some(c) => {
                let (cert, origin) = self.certificate(&d, c, &family, &law)?;
                (Some(cert), origin)
            }
            None => (None, ConstantOrigin::default()),
        };
        let controller = match &self.controller {
            None => None,
            Some(c) => Some(self.controller(&d, c, &family, cert.as_ref())?),
        };

        let run = &self.run;
        let horizon = overrides.horizon.unwrap_or(run.horizon);
        let mut scn = Scenario::new(family, law, run.x0.clone(), horizon).map_err(|e| d.err("run", "x0", e))?;
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(d.err("run", "horizon", "must be finite and >= 0"));
        }
        scn.step = overrides.step.or(run.step).unwrap_or(DEFAULT_STEP);
        if !(scn.step > 0.0) {
            return Err(d.err("run", "step", "must be > 0"));
        }
        scn.sample_interval = run.sample_interval.unwrap_or(DEFAULT_SAMPLE_INTERVAL);
        if !(scn.sample_interval > 0.0) {
            return Err(d.err("run", "sample_interval", "must be > 0"));
        }
        if let Some(c) = cert {
            scn = d.wrap("certificate", "P", scn.with_certificate(c))?;
        }
        if let Some(k) = controller {
            scn = d.wrap("controller", "kind", scn.with_controller(k))?;
        }

        let trials = overrides.trials.or(run.trials).unwrap_or(DEFAULT_TRIALS);
        if trials == 0 {
            return Err(d.err("run", "trials", "must be >= 1"));
        }
        let tail_start = overrides.tail_start.or(run.tail_start).unwrap_or(horizon / 2.0);
        if !(0.0..=horizon).contains(&tail_start) {
            return Err(d.err("run", "tail_start", format!("{tail_start} is outside [0, horizon = {horizon}]")));
        }
        let epsilons = overrides.epsilons.clone().or_else(|| run.epsilons.clone()).unwrap_or_else(|| vec![DEFAULT_EPSILON]);
        if epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(d.err("run", "epsilons", "every ε must be > 0"));
        }
        let run = RunSettings { trials, seed: overrides.seed.or(run.seed).unwrap_or(0), tail_start, epsilons };
        Ok(LoadedScenario { scenario: scn, run, origin })
    }

    fn law(&self, d: &Diag) -> Result<SwitchingLaw> {
        let s = &self.switching;
        let initial = d.wrap("switching", "sigma0", Mode::from_label(s.sigma0))?;
        if initial.0 >= self.system.modes {
            return Err(d.err("switching", "sigma0", format!("mode {} does not exist", s.sigma0)));
        }
        let need = |key: &str| d.err("switching", key, format!("required for class {}", s.class));
        match s.class {
            SignalClass::EH => {
                let rate = s.rate.ok_or_else(|| need("rate"))?;
                let q = s.q.clone().ok_or_else(|| need("q"))?;
                SwitchingLaw::eh(rate, q, initial).map_err(|e| d.err("switching", "q", e))
            }
            SignalClass::UH => {
                let t = s.t_max.ok_or_else(|| need("T"))?;
                let q = s.q.clone().ok_or_else(|| need("q"))?;
                SwitchingLaw::uh(t, q, initial).map_err(|e| d.err("switching", "q", e))
            }
            SignalClass::GH => {
                let h = s.holding.as_ref().ok_or_else(|| need("holding"))?;
                let holding = d.wrap(
                    "switching",
                    "holding",
                    match h {
                        HoldingEntry::Exponential { rate } => HoldingDistribution::exponential(*rate),
                        HoldingEntry::Uniform { max } => HoldingDistribution::uniform(*max),
                        HoldingEntry::PointMass { duration } => HoldingDistribution::point_mass(*duration),
                        HoldingEntry::Tabulated { probabilities, durations } => {
                            HoldingDistribution::tabulated(probabilities.clone(), durations.clone())
                        }
                    },
                )?;
                let p = s.transition.as_ref().ok_or_else(|| need("transition"))?;
                let p = d.wrap("switching", "transition", matrix(p))?;
                d.wrap("switching", "transition", SwitchingLaw::gh(holding, p, initial))
            }
        }
    }

    fn certificate(
        &self,
        d: &Diag,
        c: &CertificateSection,
        family: &SubsystemFamily,
        law: &SwitchingLaw,
    ) -> Result<(CertificateFamily, ConstantOrigin)> {
        let modes = family.modes();
        let mut origin = ConstantOrigin::default();
        let quadratic: Option<Vec<Matrix>> = match (&c.p, &c.polynomial) {
            (Some(ps), None) => {
                if ps.len() != modes {
                    return Err(d.err("certificate", "P", format!("expected {modes} matrices, got {}", ps.len())));
                }
                Some(d.wrap("certificate", "P", ps.iter().map(|p| matrix(p)).collect::<Result<Vec<_>>>())?)
            }
            (None, Some(polys)) => {
                if polys.len() != modes {
                    return Err(d.err("certificate", "polynomial", format!("expected {modes} polynomials, got {}", polys.len())));
                }
                None
            }
            _ => return Err(d.err("certificate", "P", "give exactly one of `P` or `polynomial`")),
        };
        let functions = match (&quadratic, &c.polynomial) {
            (Some(ps), _) => ps
                .iter()
                .map(|p| LyapunovSpec::quadratic(p.clone()))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| d.err("certificate", "P", e))?,
            (None, Some(polys)) => polys
                .iter()
                .map(|t| LyapunovSpec::polynomial(family.dim(), monomials(t)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| d.err("certificate", "polynomial", e))?,
            (None, None) => unreachable!(),
        };

        // Rates can be extracted only for the open-loop linear case.
        let open_loop = self.controller.is_none();
        let linear: Option<Vec<Matrix>> = (open_loop && family.is_linear())
            .then(|| family.drifts().iter().map(|f| f.as_linear().unwrap().clone()).collect());
        let universal_rates = match &self.controller {
            Some(ControllerSection::Universal { lambda }) => lambda.clone(),
            _ => None,
        };

        let rates = if law.class() == SignalClass::GH {
            if let Some(m) = &c.lambda_matrix {
                Rates::Matrix(d.wrap("certificate", "lambda_matrix", matrix(m))?)
            } else if let (Some(ps), Some(a)) = (&quadratic, &linear) {
                origin.lambda_extracted = true;
                Rates::Matrix(d.wrap("certificate", "P", extract_lambda_matrix(ps, a))?)
            } else if let (Some(l), 1) = (c.lambda.as_ref().or(universal_rates.as_ref()), modes) {
                Rates::Matrix(Matrix::diag(l))
            } else {
                return Err(d.err("certificate", "lambda_matrix", "required for GH laws unless the system is linear with quadratic P"));
            }
        } else if let Some(l) = c.lambda.clone().or(universal_rates) {
            Rates::PerMode(l)
        } else if let (Some(ps), Some(a)) = (&quadratic, &linear) {
            origin.lambda_extracted = true;
            Rates::PerMode(
                ps.iter()
                    .zip(a)
                    .map(|(p, a)| extract_lambda_quadratic(p, a))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| d.err("certificate", "P", e))?,
            )
        } else {
            return Err(d.err("certificate", "lambda", "required unless the system is linear, open-loop and P is given"));
        };

        let mu = match (c.mu, &quadratic) {
            (Some(mu), Some(ps)) => {
                origin.mu_star = Some(d.wrap("certificate", "P", extract_mu(ps))?);
                mu
            }
            (Some(mu), None) => mu,
            (None, Some(ps)) => {
                let star = d.wrap("certificate", "P", extract_mu(ps))?;
                origin.mu_star = Some(star);
                origin.mu_extracted = true;
                strict_mu(star)
            }
            (None, None) => return Err(d.err("certificate", "mu", "required for polynomial certificates")),
        };

        let cert = match quadratic {
            Some(ps) => CertificateFamily::quadratic(ps, rates, mu),
            None => {
                let a1 = c.alpha1.ok_or_else(|| d.err("certificate", "alpha1", "required for polynomial certificates"))?;
                let a2 = c.alpha2.ok_or_else(|| d.err("certificate", "alpha2", "required for polynomial certificates"))?;
                CertificateFamily::new(
                    functions,
                    rates,
                    mu,
                    PowerBound { coeff: a1.coeff, power: a1.power },
                    PowerBound { coeff: a2.coeff, power: a2.power },
                )
            }
        };
        let key = if c.mu.is_some() { "mu" } else { "P" };
        Ok((d.wrap("certificate", key, cert)?, origin))
    }

    fn controller(
        &self,
        d: &Diag,
        c: &ControllerSection,
        family: &SubsystemFamily,
        cert: Option<&CertificateFamily>,
    ) -> Result<ControllerSpec> {
        if family.control(Mode(0)).is_none() {
            return Err(d.err("controller", "kind", "the system has no control fields (system.control)"));
        }
        match c {
            ControllerSection::Universal { lambda } => {
                let cert = cert.ok_or_else(|| d.err("controller", "kind", "the universal controller needs a [certificate] section"))?;
                let rates = lambda.clone().unwrap_or_else(|| cert.rates().per_mode());
                d.wrap("controller", "lambda", ControllerSpec::universal(cert.functions().to_vec(), rates))
            }
            ControllerSection::LinearGain { gain } => {
                Ok(ControllerSpec::linear_gain(d.wrap("controller", "gain", matrix(gain))?))
            }
            ControllerSection::Polynomial { components } => {
                let map = PolynomialMap::new(family.dim(), components.iter().map(|c| monomials(c)).collect());
                Ok(ControllerSpec::Polynomial { map: d.wrap("controller", "components", map)? })
            }
        }
    }
}

// Controller documents mirror the serialized form of `ControllerSpec`.

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ControllerDoc {
    Universal { functions: Vec<FunctionDoc>, rates: Vec<f64> },
    LinearGain { gain: Matrix },
    Polynomial { map: MapDoc },
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum FunctionDoc {
    Quadratic(Matrix),
    Polynomial(PolyDoc),
}

#[derive(Deserialize)]
struct PolyDoc {
    dim: usize,
    terms: Vec<MonomialEntry>,
}

#[derive(Deserialize)]
struct MapDoc {
    components: Vec<PolyDoc>,
}

/// JSON document describing `controller` exactly.
pub fn controller_json(controller: &ControllerSpec) -> Result<String> {
    crate::export::json_string(controller)
}

/// Inverse of [`controller_json`]; the `schema_version` field is checked.
pub fn controller_from_json(text: &str) -> Result<ControllerSpec> {
    let mut v: serde_json::Value = serde_json::from_str(text)?;
    let version = v.as_object_mut().and_then(|m| m.remove("schema_version")).and_then(|s| s.as_u64());
    if version != Some(u64::from(crate::SCHEMA_VERSION)) {
        return Err(Error::Config(format!("controller document has schema_version {version:?}, expected {}", crate::SCHEMA_VERSION)));
    }
    match serde_json::from_value::<ControllerDoc>(v)? {
        ControllerDoc::Universal { functions, rates } => {
            let fs = functions
                .into_iter()
                .map(|f| match f {
                    FunctionDoc::Quadratic(p) => LyapunovSpec::quadratic(p),
                    FunctionDoc::Polynomial(p) => LyapunovSpec::polynomial(p.dim, monomials(&p.terms)),
                })
                .collect::<Result<Vec<_>>>()?;
            ControllerSpec::universal(fs, rates)
        }
        ControllerDoc::LinearGain { gain } => Ok(ControllerSpec::linear_gain(gain)),
        ControllerDoc::Polynomial { map } => {
            let dim = map.components.first().map_or(0, |c| c.dim);
            let map = PolynomialMap::new(dim, map.components.iter().map(|c| monomials(&c.terms)).collect())?;
            Ok(ControllerSpec::Polynomial { map })
        }
    }
}
