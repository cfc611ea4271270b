//! Newline-delimited JSON training log.

use crate::error::Result;
use serde::Serialize;
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Bootstrap,
    Append,
    Refine,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub phase: Phase,
    pub model: usize,
    /// Newest appended frame.
    pub frame: usize,
    pub rgb: f64,
    pub depth: f64,
    pub flow: f64,
    pub total: f64,
    pub lr_planes: f64,
    pub lr_mlp: f64,
    pub lr_pose: f64,
    pub epsilon: f64,
    pub flow_active: bool,
    /// Poses changed by this iteration.
    pub pose_updates: usize,
}

#[derive(Default)]
pub struct TrainLog {
    sink: Option<Box<dyn Write + Send>>,
}

impl TrainLog {
    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        Self { sink: Some(sink) }
    }

    pub fn record<S: Serialize>(&mut self, rec: &S) -> Result<()> {
        if let Some(w) = &mut self.sink {
            serde_json::to_writer(&mut *w, rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = &mut self.sink {
            w.flush()?;
        }
        Ok(())
    }
}
