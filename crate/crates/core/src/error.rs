//! Error type shared by every module of the crate.

use crate::game::ValidationReport;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// All failure modes surfaced by the library.
///
/// Each variant maps onto one of the process exit codes used by the command
/// line front end (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An instance or mechanism violates one of its structural invariants.
    #[error("validation failed: {0}")]
    Validation(ValidationReport),

    /// Malformed input file.
    #[error("parse error in {source_name} at line {line}, column {column}: {message}")]
    Parse {
        /// File name or other description of the input.
        source_name: String,
        /// 1-based line of the offending token (0 when unknown).
        line: usize,
        /// 1-based column of the offending token (0 when unknown).
        column: usize,
        /// Human readable diagnostic, naming the offending field when known.
        message: String,
    },

    /// I/O failure while reading or writing a file.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// Path that was being accessed.
        path: String,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },

    /// Two objects that must agree on their dimensions do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An agent, action, signal or state index is out of range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A posterior was requested for a signal that is never observed.
    #[error("signal {signal} of agent {agent} has zero probability under action {action}")]
    ZeroProbabilitySignal {
        /// Agent index.
        agent: usize,
        /// Action of the agent.
        action: usize,
        /// Signal index.
        signal: usize,
    },

    /// The numerical routines could not produce a trustworthy answer.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A linear program that must be feasible turned out infeasible.
    #[error("linear program infeasible: {0}")]
    LpInfeasible(String),

    /// A linear program that must be bounded turned out unbounded.
    #[error("linear program unbounded: {0}")]
    LpUnbounded(String),

    /// No action profile can be incentivized by an uncorrelated mechanism.
    #[error("no action profile can be incentivized within the budget")]
    AllProfilesInfeasible,

    /// The instance is not of product form (signals are correlated given the state).
    #[error("instance is not of product form (max residual {residual:e})")]
    NotProductForm {
        /// Largest absolute factorisation residual.
        residual: f64,
    },

    /// No scoring rule strictly incentivizes the given action.
    #[error("no scoring rule strictly incentivizes action {action} of agent {agent} (best margin {margin:e})")]
    AssumptionFails {
        /// Agent index.
        agent: usize,
        /// Action that cannot be strictly incentivized.
        action: usize,
        /// Best achievable margin.
        margin: f64,
    },

    /// The exploration phase could not finish within its round budget.
    #[error("horizon exhausted during {phase} after {rounds} rounds")]
    HorizonExhausted {
        /// Phase that ran out of rounds.
        phase: String,
        /// Rounds played when the phase gave up.
        rounds: usize,
    },

    /// The binary search split more often than the best-response geometry allows.
    #[error("binary search split depth {depth} exceeds the limit {limit}")]
    RecursionOverflow {
        /// Depth reached.
        depth: usize,
        /// Maximum admissible depth.
        limit: usize,
    },

    /// A correlated mechanism that is not incentive compatible was committed in strict mode.
    #[error("committed correlated mechanism is not incentive compatible (min slack {slack:e})")]
    NonIcMechanismCommitted {
        /// Most negative IC slack.
        slack: f64,
    },

    /// The lower estimate of the posterior separation is not positive.
    #[error("lower posterior-separation estimate is not positive ({value:e})")]
    NonPositiveEllUnder {
        /// The offending value.
        value: f64,
    },

    /// Random instance generation did not meet its acceptance thresholds.
    #[error("instance generation gave up after {attempts} attempts")]
    GenerationTimeout {
        /// Number of rejected candidates.
        attempts: usize,
    },
}

impl Error {
    /// Process exit code associated with the error class:
    /// 2 validation/input, 3 infeasible or assumption failure, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::DimensionMismatch(_)
            | Error::IndexOutOfRange(_)
            | Error::InvalidArgument(_)
            | Error::NotProductForm { .. }
            | Error::ZeroProbabilitySignal { .. } => 2,
            Error::LpInfeasible(_)
            | Error::LpUnbounded(_)
            | Error::AllProfilesInfeasible
            | Error::AssumptionFails { .. }
            | Error::HorizonExhausted { .. }
            | Error::NonIcMechanismCommitted { .. }
            | Error::NonPositiveEllUnder { .. }
            | Error::GenerationTimeout { .. } => 3,
            Error::NumericalFailure(_) | Error::RecursionOverflow { .. } => 4,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Validation(_) => "Validation",
            Error::Parse { .. } => "Parse",
            Error::Io { .. } => "Io",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::IndexOutOfRange(_) => "IndexOutOfRange",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::ZeroProbabilitySignal { .. } => "ZeroProbabilitySignal",
            Error::NumericalFailure(_) => "NumericalFailure",
            Error::LpInfeasible(_) => "LpInfeasible",
            Error::LpUnbounded(_) => "LpUnbounded",
            Error::AllProfilesInfeasible => "AllProfilesInfeasible",
            Error::NotProductForm { .. } => "NotProductForm",
            Error::AssumptionFails { .. } => "AssumptionFails",
            Error::HorizonExhausted { .. } => "HorizonExhausted",
            Error::RecursionOverflow { .. } => "RecursionOverflow",
            Error::NonIcMechanismCommitted { .. } => "NonIcMechanismCommitted",
            Error::NonPositiveEllUnder { .. } => "NonPositiveEllUnder",
            Error::GenerationTimeout { .. } => "GenerationTimeout",
        }
    }
}
