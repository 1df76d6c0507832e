//! Error types.

use crate::infra::ResourceVector;
use crate::sim::SimTime;

/// Kernel-level failures.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("unparseable time {0:?} (expected non-negative seconds, ms resolution)")]
    BadTime(String),
    #[error("bad run config: {0}")]
    BadConfig(String),
    #[error("unknown rng stream {0:?}")]
    UnknownStream(String),
    #[error("cannot run to {requested:?}: clock already at {now:?}")]
    ClockRegression { now: SimTime, requested: SimTime },
    #[error("cannot schedule: clock {now:?} past horizon {horizon:?}")]
    PastHorizon { now: SimTime, horizon: SimTime },
}

/// Domain-model failures raised by infrastructure and service-layer
/// operations. Orchestrators treat most of these as signals (e.g. capacity
/// exhaustion feeds the escalation ladder), not as fatal errors.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unknown capacity class {0:?}")]
    UnknownCapacityClass(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("vm limit {0} reached")]
    VmLimitReached(u32),
    #[error("{entity} {id}: illegal transition {from} -> {to}")]
    IllegalTransition {
        entity: &'static str,
        id: String,
        from: String,
        to: String,
    },
    #[error("{host}: insufficient capacity (free {free:?}, requested {requested:?})")]
    InsufficientCapacity {
        host: String,
        free: ResourceVector,
        requested: ResourceVector,
    },
    #[error("{0} is not drained (still hosts workloads)")]
    NotDrained(String),
    #[error("{0}")]
    Invalid(String),
}

/// One scenario-validation finding, with a location path like
/// `traces.web[0].from_s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub location: String,
    pub message: String,
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Top-level error for loading scenarios, running simulations and verifying
/// reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario validation failed:\n{}", format_issues(.0))]
    Validation(Vec<ValidationIssue>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed event log line {line_no}: {text:?}")]
    BadLogLine { line_no: usize, text: String },
    #[error("report does not match its event log: {0}")]
    VerifyMismatch(String),
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}
