//! Resource-aware hierarchical federated multi-task learning.
//!
//! A deterministic simulator and library for primal-dual training across a
//! cloud / base-station / terminal hierarchy. Each base station owns one
//! task; terminals run randomized dual coordinate ascent on their private
//! shards; base stations aggregate dual updates; the cloud couples tasks
//! through a shared regulation anchor. A resource planner chooses terminal-
//! and BS-iteration counts that meet a duality-gap target within per-type
//! resource budgets.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod harness;
pub mod objective;
pub mod planner;
pub mod rng;
pub mod solver;

pub use config::{ConvergenceTarget, ResourceCosts, SystemConfig};
pub use data::{FederatedDataset, Sample, SynthSpec, TaskData, TerminalShard};
pub use engine::{FederationState, ReportSink, RoundReport, RunStatus, RunSummary, VecSink};
pub use error::{Error, Result};
pub use harness::{Algorithm, DataSource, ExperimentConfig, RunArtifact};
pub use objective::{DualState, RegulationParams, SmoothLoss, TaskModel};
pub use planner::{EtaVariant, Regime, ResourcePlan, SigmaMode, TaskStats};
pub use solver::{LocalUpdate, TerminalDual};
