use crate::data::SyntheticRig;
use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::losses::LossWeights;
use crate::optimizer::{AdamConfig, LearningRates};
use crate::progressive::{SamplingConfig, ScheduleConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Floating-point width used for training and rendering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl TryFrom<u32> for Precision {
    type Error = String;
    fn try_from(v: u32) -> std::result::Result<Self, String> {
        match v {
            32 => Ok(Precision::F32),
            64 => Ok(Precision::F64),
            _ => Err(format!("precision must be 32 or 64, got {v}")),
        }
    }
}

impl From<Precision> for u32 {
    fn from(p: Precision) -> u32 {
        match p {
            Precision::F32 => 32,
            Precision::F64 => 64,
        }
    }
}

/// Options for the `render` command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Samples per ray; falls back to `sampling.n_samples`.
    pub n_samples: Option<usize>,
    /// Render only the held-out frames.
    pub held_out_only: bool,
}

/// The TOML file shared by every subcommand. Scalar keys come first so the
/// struct serializes back to valid TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory; `synth` writes here, the others read from here.
    pub dataset: PathBuf,
    /// Directory for checkpoints, logs, renders and reports.
    pub output: PathBuf,
    pub seed: u64,
    pub precision: Precision,
    pub density_scale: f64,
    pub log_every: usize,
    pub schedule: ScheduleConfig,
    pub field: FieldConfig,
    pub loss: LossWeights<f64>,
    pub lr: LearningRates,
    pub adam: AdamConfig,
    pub sampling: SamplingConfig,
    pub render: RenderConfig,
    pub synth: SyntheticRig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            dataset: "data".into(),
            output: "run".into(),
            seed: t.seed,
            precision: Precision::F64,
            density_scale: t.density_scale,
            log_every: t.log_every,
            schedule: t.schedule,
            field: t.field,
            loss: t.loss,
            lr: t.lr,
            adam: t.adam,
            sampling: t.sampling,
            render: RenderConfig::default(),
            synth: SyntheticRig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            schedule: self.schedule.clone(),
            field: self.field.clone(),
            loss: self.loss.clone(),
            lr: self.lr.clone(),
            adam: self.adam.clone(),
            sampling: self.sampling.clone(),
            density_scale: self.density_scale,
            seed: self.seed,
            log_every: self.log_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.render.n_samples.is_some_and(|n| n < 2) {
            return Err(Error::Config("render.n_samples must be at least 2".into()));
        }
        Ok(())
    }
}
