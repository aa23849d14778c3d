//! Online Monte-Carlo planning for multiagent POMDPs.
//!
//! The crate centers on three POMCP-style planners that differ in how they
//! store lookahead statistics:
//!
//! * [`planner::FlatPomcp`] — one tree over joint histories with per-joint-action
//!   statistics (the classic baseline),
//! * [`planner::FactoredStatsPomcp`] — same tree, but statistics are kept per
//!   coordination-graph component and joint actions are selected by variable
//!   elimination over factored upper confidence bounds,
//! * [`planner::FactoredTreesPomcp`] — one tree per component, keyed by
//!   projected local histories and traversed in lockstep.
//!
//! Around them: the generative-model contract and joint-action indexing
//! ([`model`]), coordination graphs and variable elimination ([`graph`]), a
//! Bayes-adaptive wrapper that turns model uncertainty into planning
//! ([`bapomdp`]), two benchmark domains ([`domains`]), a one-shot verification
//! bench for mixture-of-experts estimation ([`moe`]), and a reproducible
//! experiment harness ([`harness`]).

pub mod bapomdp;
pub mod domains;
pub mod graph;
pub mod harness;
pub mod model;
pub mod moe;
pub mod planner;

pub use graph::{ComponentTable, ExpertStats, LocalTable};
pub use model::{
    CoordinationGraph, GenerativeModel, JointAction, JointHistory, JointObservation, ProblemSpec,
    Step,
};
pub use planner::{
    AdvanceStatus, FactoredStatsPomcp, FactoredTreesPomcp, FlatPomcp, OnlinePlanner, PlanError,
    PlannerConfig, RandomPlanner,
};
