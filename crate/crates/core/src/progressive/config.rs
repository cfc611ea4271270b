use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::losses::LossWeights;
use crate::optimizer::{AdamConfig, LearningRates};
use serde::{Deserialize, Serialize};

/// Progressive schedule: when frames are appended, when local fields are
/// spawned and how long each phase runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Spawn once the active field would hold more than this many frames.
    pub t_k: usize,
    /// Spawn once the newest camera is farther than this from the active
    /// field's origin, in scene units.
    pub t_d: f64,
    /// Frames shared by consecutive fields.
    pub overlap: usize,
    pub bootstrap: usize,
    /// Rays come from this many most recent frames while appending.
    pub recent_window: usize,
    pub iters_per_frame: usize,
    /// Fraction of the refinement after which the flow loss is dropped.
    pub refine_fraction_flow_cutoff: f64,
    pub batch_rays: usize,
    /// Refinement length; `None` uses `iters_per_frame · span / 4`.
    pub refine_iters: Option<usize>,
    pub pose_optimization: bool,
    /// Frames with `k % eval_stride == eval_stride - 1` get no color or
    /// depth supervision. Zero disables the hold-out.
    pub eval_stride: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            t_k: 100,
            t_d: 1.0,
            overlap: 30,
            bootstrap: 5,
            recent_window: 4,
            iters_per_frame: 100,
            refine_fraction_flow_cutoff: 0.2,
            batch_rays: 4096,
            refine_iters: None,
            pose_optimization: true,
            eval_stride: 8,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.overlap >= self.t_k {
            return bad("overlap must be smaller than t_k");
        }
        if self.bootstrap == 0 || self.bootstrap > self.t_k {
            return bad("bootstrap must be in 1..=t_k");
        }
        if self.recent_window == 0 || self.batch_rays == 0 {
            return bad("recent_window and batch_rays must be positive");
        }
        if !(self.t_d > 0.0) {
            return bad("t_d must be positive");
        }
        if !(0.0..=1.0).contains(&self.refine_fraction_flow_cutoff) {
            return bad("refine_fraction_flow_cutoff must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn refine_budget(&self, span_len: usize) -> usize {
        self.refine_iters
            .unwrap_or(self.iters_per_frame * span_len / 4)
    }

    /// Refinement iterations that still use the flow loss.
    pub fn flow_cutoff(&self, refine_iters: usize) -> usize {
        (self.refine_fraction_flow_cutoff * refine_iters as f64).ceil() as usize
    }

    pub fn is_held_out(&self, k: usize) -> bool {
        is_held_out(k, self.eval_stride)
    }
}

pub fn is_held_out(k: usize, stride: usize) -> bool {
    stride > 0 && k % stride == stride - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_samples: usize,
    /// Ray distance bounds; unset values come from the dataset depth.
    pub near: Option<f64>,
    pub far: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 64,
            near: None,
            far: None,
        }
    }
}

/// Everything training needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub field: FieldConfig,
    pub loss: LossWeights<f64>,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub sampling: SamplingConfig,
    /// Multiplier on the softplus density, inverse scene units.
    pub density_scale: f64,
    pub seed: u64,
    /// Write a log record every this many iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            field: FieldConfig::default(),
            loss: LossWeights::default(),
            lr: LearningRates::default(),
            adam: AdamConfig::default(),
            sampling: SamplingConfig::default(),
            density_scale: 10.0,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.loss.validate()?;
        if self.sampling.n_samples < 2 {
            return Err(Error::Config("sampling.n_samples must be at least 2".into()));
        }
        if let (Some(n), Some(f)) = (self.sampling.near, self.sampling.far) {
            if !(n > 0.0 && f > n) {
                return Err(Error::Config(format!("need 0 < near < far, got {n} and {f}")));
            }
        }
        let lr = &self.lr;
        if ![lr.planes, lr.mlp, lr.pose, lr.pose_translation_scale, lr.final_ratio]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
        {
            return Err(Error::Config("learning rates and their factors must be positive".into()));
        }
        if !(self.density_scale > 0.0) {
            return Err(Error::Config("density_scale must be positive".into()));
        }
        let f = &self.field;
        if f.spatial_res == 0 || f.channels_per_plane == 0 || f.hidden_layers == 0 || f.hidden_width == 0 {
            return Err(Error::Config("field sizes must be positive".into()));
        }
        if f.hidden_layers > 14 {
            return Err(Error::Config("at most 14 hidden layers are supported".into()));
        }
        Ok(())
    }
}
