//! Checkpoint-guarded orchestration of a sensitivity-analysis agent pipeline.
//!
//! A contextual bandit chooses the analysis method, scripted agents turn the
//! choice into an execution plan, semantic checkpoints guard each hand-off and
//! real estimators produce the observations that feed the reward.

pub mod action_space;
pub mod agents;
pub mod archive;
pub mod bandit;
pub mod checkpoints;
pub mod embedding;
pub mod estimators;
pub mod experiments;
pub mod metrics;
pub mod pipeline;
pub mod reward;
pub mod schemes;
pub mod seeds;

pub use action_space::{ActionSpace, ActionTuple, Estimator, Task};
pub use schemes::{ContextVector, DiagnosticScheme, MethodScheme, ProblemScheme};
