//! Parameter storage, optimizers, layer primitives with hand-written
//! gradients, and finite-difference verification.

pub mod checkpoint;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;

pub use gradcheck::{finite_difference_check, FnObjective, GradCheckReport, Objective};
pub use optim::{sgd_update, Direction, Optimizer, OptimizerKind};
pub use params::{GradientRecord, ParameterLayout, ParameterStore, SegmentId};
