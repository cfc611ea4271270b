//! Gradients, Adam updates and learning-rate schedules.

pub mod adam;
pub mod gradcheck;
pub mod objective;
pub mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState, FieldOptimizer, PoseOptimizer};
pub use gradcheck::{grad_check, GradCheckReport};
pub use objective::{Evaluation, Objective, ObjectiveSpec, RayBatch, REDUCE_CHUNKS};
pub use schedule::{decayed_lr, LearningRates};
