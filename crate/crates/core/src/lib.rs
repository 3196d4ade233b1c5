//! Code generation for decision tree ensembles with explicit register
//! allocation.
//!
//! The pipeline is `model` → `profiler` → `planner` → `ir` → `backends`,
//! with `verifier` interpreting the IR as the oracle-side executor.

pub mod backends;
pub mod ir;
pub mod model;
pub mod planner;
pub mod profiler;
pub mod synth;
pub mod verifier;

pub use model::{load_model, Aggregation, Ensemble, ModelError, Node, NodeId, NodeKind, Tree};
pub use planner::{AllocationPlan, PackMode, PlanError, PlanOptions, Strategy, TargetDesc, TargetName};
