//! Randomly switched dynamical systems under semi-Markov switching.
//!
//! The crate samples switching signals (exponential, uniform or general
//! i.i.d. holding times with i.i.d. or Markov jump destinations), integrates
//! switched trajectories aligned to the switching instants, extracts and
//! verifies multiple-Lyapunov-function certificates, evaluates the
//! sufficient stability conditions tied to each signal class, runs
//! reproducible Monte Carlo ensembles and builds universal-formula feedback
//! controllers.

pub mod certificates;
pub mod conditions;
pub mod dynamics;
pub mod export;
pub mod linalg;
pub mod montecarlo;
pub mod quadrature;
pub mod rng;
pub mod scenario;
pub mod signal;
pub mod synthesis;

pub use certificates::{CertificateFamily, LyapunovSpec, PowerBound, Rates, Violation};
pub use conditions::{ConditionId, ConditionVerdict};
pub use dynamics::{Monomial, PolynomialMap, SubsystemFamily, Trajectory, VectorFieldSpec};
pub use linalg::Matrix;
pub use montecarlo::{EnsembleStats, Scenario};
pub use signal::{HoldingDistribution, JumpLaw, Mode, SignalClass, SwitchingLaw, SwitchingPath};
pub use synthesis::ControllerSpec;

/// Version tag carried by every JSON document this crate writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension { context: &'static str, expected: usize, got: usize },
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid { what, reason: reason.into() }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension { context, expected, got }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
