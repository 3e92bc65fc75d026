//! Optimal incentive-compatible mechanisms for multi-agent information
//! acquisition, and an explore-then-commit learner that discovers them online.
//!
//! The crate is organised bottom-up:
//!
//! * [`game`] — the ground-truth game model, validation and serialization;
//! * [`lp`] — a deterministic dense simplex solver;
//! * [`mechanism`] — correlated and uncorrelated mechanisms;
//! * [`agent`] — best responses, optimal deviations and IC verification;
//! * [`offline`] — the mechanism-design linear program and its companions;
//! * [`sim`] — the seeded round-by-round environment and traces;
//! * [`online`] — the three-phase learner and its regret bound;
//! * [`generate`] — instance generators;
//! * [`experiment`] — seeded multi-run batches and aggregates.

// Index loops mirror the subscripted formulas they implement, and negated
// comparisons deliberately treat NaN as out of range.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod error;
pub mod experiment;
pub mod game;
pub mod generate;
pub mod lp;
pub mod mechanism;
pub mod offline;
pub mod online;
pub mod sim;

pub use agent::{BestResponse, IcReport, TieBreak};
pub use error::{Error, Result};
pub use game::{Dims, GameInstance, InstanceConstants, ValidationReport, Violation};
pub use generate::{GenKind, GenOptions};
pub use lp::{LinearProgram, LpSolution, LpStatus, Sense};
pub use mechanism::{CorrelatedMechanism, DeviationPolicy, UncorrelatedMechanism};
pub use offline::{IncentivizingRules, LpMechanismVars};
pub use online::{CommitArtifacts, CostEstimates, LearnerConfig, LearnerSettings, ProbEstimates, RunOutcome};
pub use sim::{Environment, RoundRecord, Trace};
