//! Per-workload tuning knobs and lowering of a scheduled graph into kernels.
//!
//! Tiling changes how often operands are re-read, split-K adds a partial-sum
//! kernel, and epilogue fusion removes kernel boundaries. Those three effects
//! are what make a tuned model's kernel trace differ from the library default.

mod lower;
mod space;
mod workload;

pub use lower::{
    lower, lower_workload, CompiledModel, Kernel, KernelRole, OperandRead, ScheduleAssignment, Work,
};
pub use space::{
    default_schedule, mutate, tile_values, Knob, Schedule, ScheduleSpace, DEFAULT_TILE, MAX_TILE,
    SPLIT_K_VALUES, UNROLL_VALUES, VECTOR_VALUES,
};
pub use workload::{workloads, GemmExtents, Workload};
