//! Compilation as a side-channel defense, at desk scale.
//!
//! The pipeline tunes tensor-program schedules for a model graph, lowers the
//! graph into kernels, simulates the per-kernel metrics a profiler would
//! record, runs an architecture-extraction attack on those metrics and scores
//! how well the attack recovers the operator sequence.

pub mod attack;
pub mod autotuner;
pub mod error;
pub mod harness;
pub mod ir;
pub mod perfsim;
pub mod schedule;
pub mod seed;
pub mod sidechannel;

pub use error::{Error, Result};
pub use ir::{Family, ModelGraph, OpKind, TensorShape};
