//! Progressive training: frames are appended one at a time and new local
//! fields are spawned as the camera moves on.

pub mod config;
pub mod log;
pub mod sampler;
pub mod trainer;

pub use config::{is_held_out, SamplingConfig, ScheduleConfig, TrainConfig};
pub use log::{IterRecord, Phase, TrainLog};
pub use sampler::{depth_bounds, RaySampler};
pub use trainer::{
    should_spawn, train_progressive, FieldSlot, IterCounters, IterInfo, SpawnRecord, SpawnTrigger, TrainOutput,
    TrainState, Trainer,
};

#[cfg(test)]
mod tests;
