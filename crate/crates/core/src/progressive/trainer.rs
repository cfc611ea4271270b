//! Progressive joint optimization of camera poses and local fields.

use super::config::{ScheduleConfig, TrainConfig};
use super::log::{IterRecord, Phase, TrainLog};
use super::sampler::{depth_bounds, RaySampler};
use crate::data::synthetic::MIN_FRAMES;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::checkpoint::{load_field, save_field};
use crate::field::{FrameSpan, LocalField};
use crate::geometry::{Intrinsics, Pose};
use crate::losses::LossWeights;
use crate::optimizer::{decayed_lr, FieldOptimizer, Objective, ObjectiveSpec, PoseOptimizer, RayBatch};
use crate::renderer::{RenderMode, SamplingSpec};
use crate::scalar::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpawnTrigger {
    Bootstrap,
    FrameCount,
    Distance,
}

/// Bookkeeping for one local field.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpawnRecord {
    pub model: usize,
    pub first: usize,
    pub last: usize,
    /// Frame whose camera position is the field's origin.
    pub origin_frame: usize,
    pub trigger: SpawnTrigger,
}

#[derive(Clone, Debug)]
pub enum FieldSlot<T> {
    Resident(LocalField<T>),
    /// Frozen and written to disk.
    Offloaded { frames: FrameSpan, path: PathBuf },
}

impl<T: Real> FieldSlot<T> {
    pub fn frames(&self) -> FrameSpan {
        match self {
            FieldSlot::Resident(f) => f.frames,
            FieldSlot::Offloaded { frames, .. } => *frames,
        }
    }

    pub fn resident(&self) -> Option<&LocalField<T>> {
        match self {
            FieldSlot::Resident(f) => Some(f),
            FieldSlot::Offloaded { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterCounters {
    pub bootstrap: usize,
    pub append: usize,
    pub refine: usize,
}

impl IterCounters {
    pub fn total(&self) -> usize {
        self.bootstrap + self.append + self.refine
    }
}

#[derive(Clone, Debug)]
pub struct TrainState<T> {
    /// In spawn order; only the last one is ever unfrozen.
    pub fields: Vec<FieldSlot<T>>,
    /// One pose per appended frame.
    pub poses: Vec<Pose<T>>,
    pub appended_upto: Option<usize>,
    pub iterations: IterCounters,
    pub spawn_log: Vec<SpawnRecord>,
    /// Total number of individual pose changes.
    pub pose_updates: usize,
}

impl<T: Real> TrainState<T> {
    fn new() -> Self {
        Self {
            fields: Vec::new(),
            poses: Vec::new(),
            appended_upto: None,
            iterations: IterCounters::default(),
            spawn_log: Vec::new(),
            pose_updates: 0,
        }
    }

    pub fn active(&self) -> Result<&LocalField<T>> {
        match self.fields.last() {
            Some(FieldSlot::Resident(f)) if !f.frozen => Ok(f),
            _ => Err(Error::Internal("no active field".into())),
        }
    }

    fn active_mut(&mut self) -> Result<&mut LocalField<T>> {
        match self.fields.last_mut() {
            Some(FieldSlot::Resident(f)) if !f.frozen => Ok(f),
            _ => Err(Error::Internal("no active field".into())),
        }
    }

    /// The active field, preceded by the newest frozen one when resident.
    fn training_fields(&self) -> Vec<&LocalField<T>> {
        let n = self.fields.len();
        self.fields[n.saturating_sub(2)..]
            .iter()
            .filter_map(FieldSlot::resident)
            .collect()
    }

    pub fn unfrozen_count(&self) -> usize {
        self.fields
            .iter()
            .filter(|s| s.resident().is_some_and(|f| !f.frozen))
            .count()
    }
}

/// Spawn decision after appending a frame: `count` frames would belong to
/// the active field and its origin is `distance` away from the newest
/// camera.
pub fn should_spawn(count: usize, distance: f64, cfg: &ScheduleConfig) -> Option<SpawnTrigger> {
    if count > cfg.t_k {
        Some(SpawnTrigger::FrameCount)
    } else if distance > cfg.t_d {
        Some(SpawnTrigger::Distance)
    } else {
        None
    }
}

/// Passed to the batch observer before every iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IterInfo {
    pub phase: Phase,
    pub model: usize,
    /// Global iteration index.
    pub iter: usize,
    /// Index within the current bootstrap, append or refinement phase.
    pub phase_iter: usize,
    /// Newest appended frame.
    pub frame: usize,
    pub flow_active: bool,
}

/// Iteration budget and coarse-to-fine state of the active field.
struct ModelSchedule {
    budget: usize,
    iter: usize,
    levels: Vec<(usize, usize)>,
    level: usize,
}

pub struct TrainOutput<T> {
    pub fields: Vec<LocalField<T>>,
    pub poses: Vec<Pose<T>>,
    pub spawn_log: Vec<SpawnRecord>,
    pub iterations: IterCounters,
    pub pose_updates: usize,
    pub near: f64,
    pub far: f64,
}

type Observer<'a, T> = Box<dyn FnMut(&IterInfo, &RayBatch<T>) + 'a>;

pub struct Trainer<'a, T: Real> {
    ds: &'a Dataset,
    cfg: TrainConfig,
    intr: Intrinsics<T>,
    near: f64,
    far: f64,
    sampler: RaySampler<'a>,
    pub state: TrainState<T>,
    field_opt: Option<FieldOptimizer<T>>,
    pose_opt: PoseOptimizer<T>,
    model: ModelSchedule,
    rng: ChaCha8Rng,
    log: TrainLog,
    offload_dir: Option<PathBuf>,
    observer: Option<Observer<'a, T>>,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(ds: &'a Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        ds.validate()?;
        let need = cfg.schedule.bootstrap.max(MIN_FRAMES);
        if ds.len() < need {
            return Err(Error::SequenceTooShort { got: ds.len(), need });
        }
        if !cfg.schedule.pose_optimization && ds.gt_trajectory.is_none() {
            return Err(Error::Config(
                "pose_optimization = false needs a ground-truth trajectory in the dataset".into(),
            ));
        }
        let bounds = depth_bounds(ds);
        let near = cfg.sampling.near.or(ds.meta.near).or(bounds.map(|b| b.0));
        let far = cfg.sampling.far.or(ds.meta.far).or(bounds.map(|b| b.1));
        let (near, far) = match (near, far) {
            (Some(n), Some(f)) if n > 0.0 && f > n => (n, f),
            _ => {
                return Err(Error::Config(
                    "cannot determine near/far: set sampling.near and sampling.far".into(),
                ))
            }
        };
        let sampler = RaySampler::new(ds, cfg.schedule.eval_stride, cfg.sampling.n_samples);
        let mut pose_opt = PoseOptimizer::new(T::lit(cfg.lr.pose), &cfg.adam);
        pose_opt.translation_scale = T::lit(cfg.lr.pose_translation_scale);
        Ok(Self {
            ds,
            intr: ds.intrinsics.cast(),
            near,
            far,
            sampler,
            state: TrainState::new(),
            field_opt: None,
            pose_opt,
            model: ModelSchedule {
                budget: 0,
                iter: 0,
                levels: Vec::new(),
                level: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            log: TrainLog::default(),
            offload_dir: None,
            observer: None,
            cfg,
        })
    }

    pub fn with_log(mut self, log: TrainLog) -> Self {
        self.log = log;
        self
    }

    /// Frozen fields no longer needed for training are written here and
    /// dropped from memory.
    pub fn with_offload_dir(mut self, dir: PathBuf) -> Self {
        self.offload_dir = Some(dir);
        self
    }

    /// Called with every training batch before it is evaluated.
    pub fn set_observer(&mut self, f: impl FnMut(&IterInfo, &RayBatch<T>) + 'a) {
        self.observer = Some(Box::new(f));
    }

    pub fn near_far(&self) -> (f64, f64) {
        (self.near, self.far)
    }

    fn initial_pose(&self, k: usize) -> Pose<T> {
        match (&self.ds.gt_trajectory, self.cfg.schedule.pose_optimization) {
            (Some(gt), false) => gt[k].cast(),
            _ if k == 0 => Pose::identity(),
            _ => self.state.poses[k - 1],
        }
    }

    /// Creates a field whose first frame is `first`, with origin at the
    /// camera of frame `origin_frame` and assigned frames up to `last`.
    fn create_field(&mut self, first: usize, origin_frame: usize, last: usize, trigger: SpawnTrigger) -> Result<()> {
        let sched = &self.cfg.schedule;
        let model = self.state.fields.len();
        let planned_last = (first + sched.t_k - 1).min(self.ds.len() - 1).max(last);
        let planned_len = planned_last + 1 - first;
        let fc = &self.cfg.field;
        let levels = fc.resolution_levels(fc.spatial_res, fc.temporal_res_for(planned_len));
        let (s0, t0) = levels[0];
        let origin = self.state.poses[origin_frame].position();
        let half = T::lit(sched.t_d + self.far);
        let seed = self.cfg.seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(model as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = LocalField::new(
            fc,
            s0,
            t0,
            origin,
            half,
            (first, planned_last),
            FrameSpan::new(first, last),
            T::lit(self.cfg.density_scale),
            &mut rng,
        )?;
        self.field_opt = Some(FieldOptimizer::new(
            &field,
            T::lit(self.cfg.lr.planes),
            T::lit(self.cfg.lr.mlp),
            &self.cfg.adam,
        ));
        self.model = ModelSchedule {
            budget: sched.iters_per_frame * (planned_last + 1 - origin_frame.max(first)) + sched.refine_budget(planned_len),
            iter: 0,
            levels,
            level: 0,
        };
        self.state.fields.push(FieldSlot::Resident(field));
        self.state.spawn_log.push(SpawnRecord {
            model,
            first,
            last,
            origin_frame,
            trigger,
        });
        self.log.record(&json!({
            "event": "spawn",
            "model": model,
            "first": first,
            "last": last,
            "origin_frame": origin_frame,
            "trigger": trigger,
            "budget": self.model.budget,
        }))
    }

    /// Jointly optimizes the first `bootstrap` frames with a fresh field.
    pub fn bootstrap(&mut self) -> Result<()> {
        if self.state.appended_upto.is_some() {
            return Err(Error::Internal("bootstrap on a non-empty state".into()));
        }
        let n = self.cfg.schedule.bootstrap;
        for k in 0..n {
            let p = self.initial_pose(k);
            self.state.poses.push(p);
        }
        self.state.appended_upto = Some(n - 1);
        self.create_field(0, 0, n - 1, SpawnTrigger::Bootstrap)?;
        let frames: Vec<usize> = (0..n).collect();
        for i in 0..n * self.cfg.schedule.iters_per_frame {
            self.step(Phase::Bootstrap, &frames, true, i)?;
        }
        Ok(())
    }

    /// Appends frame `k`, spawning a new field first when a trigger fires,
    /// then optimizes over the most recent frames.
    pub fn append_frame(&mut self, k: usize) -> Result<()> {
        self.push_frame(k)?;
        let frames = self.recent_frames()?;
        for i in 0..self.cfg.schedule.iters_per_frame {
            self.step(Phase::Append, &frames, true, i)?;
        }
        Ok(())
    }

    /// The bookkeeping half of [`append_frame`](Self::append_frame): pose
    /// initialization, spawn check and span extension.
    pub fn push_frame(&mut self, k: usize) -> Result<()> {
        if self.state.appended_upto.map(|a| a + 1) != Some(k) || k >= self.ds.len() {
            return Err(Error::Internal(format!(
                "out-of-order append of frame {k} after {:?}",
                self.state.appended_upto
            )));
        }
        let p = self.initial_pose(k);
        self.state.poses.push(p);
        self.state.appended_upto = Some(k);
        let active = self.state.active()?;
        let count = k + 1 - active.frames.first;
        let distance = (p.position() - active.origin).norm().as_f64();
        match should_spawn(count, distance, &self.cfg.schedule) {
            Some(trigger) => {
                self.refine_model()?;
                self.spawn_model(k, trigger)?;
            }
            None => {
                self.state.active_mut()?.frames.last = k;
                if let Some(r) = self.state.spawn_log.last_mut() {
                    r.last = k;
                }
            }
        }
        Ok(())
    }

    /// The last `recent_window` appended frames inside the active span.
    pub fn recent_frames(&self) -> Result<Vec<usize>> {
        let k = self
            .state
            .appended_upto
            .ok_or_else(|| Error::Internal("no frames appended".into()))?;
        let first = self.state.active()?.frames.first;
        let lo = (k + 1).saturating_sub(self.cfg.schedule.recent_window).max(first);
        Ok((lo..=k).collect())
    }

    /// Freezes the active field and starts a new one at frame `k`.
    pub fn spawn_model(&mut self, k: usize, trigger: SpawnTrigger) -> Result<()> {
        let prev_first = {
            let f = self.state.active_mut()?;
            f.frozen = true;
            f.frames.first
        };
        self.field_opt = None;
        self.offload_stale()?;
        let first = k.saturating_sub(self.cfg.schedule.overlap).max(prev_first + 1);
        self.create_field(first, k, k, trigger)
    }

    /// Writes frozen fields other than the newest one to the offload dir.
    fn offload_stale(&mut self) -> Result<()> {
        let Some(dir) = &self.offload_dir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir)?;
        let n = self.state.fields.len();
        for (i, slot) in self.state.fields.iter_mut().enumerate().take(n.saturating_sub(1)) {
            if let FieldSlot::Resident(f) = slot {
                let path = dir.join(format!("field_{i:03}.lhf"));
                save_field(f, &path)?;
                *slot = FieldSlot::Offloaded { frames: f.frames, path };
            }
        }
        Ok(())
    }

    /// Optimizes the active field over its whole span, dropping the flow
    /// loss after the configured fraction of the iterations.
    pub fn refine_model(&mut self) -> Result<()> {
        let span = self.state.active()?.frames;
        let r = self.cfg.schedule.refine_budget(span.len());
        let cutoff = self.cfg.schedule.flow_cutoff(r);
        let frames: Vec<usize> = (span.first..=span.last).collect();
        for i in 0..r {
            self.step(Phase::Refine, &frames, i < cutoff, i)?;
        }
        Ok(())
    }

    /// Runs the whole schedule over the dataset.
    pub fn run(&mut self) -> Result<()> {
        self.bootstrap()?;
        for k in self.cfg.schedule.bootstrap..self.ds.len() {
            self.append_frame(k)?;
            if k % 10 == 0 {
                log::info!(
                    "frame {k}/{}, {} fields, {} iterations",
                    self.ds.len(),
                    self.state.fields.len(),
                    self.state.iterations.total()
                );
            }
        }
        self.run_final()
    }

    /// Refines the last field and freezes it.
    pub fn run_final(&mut self) -> Result<()> {
        self.refine_model()?;
        self.state.active_mut()?.frozen = true;
        self.log.flush()
    }

    /// Loads offloaded fields back and returns the result.
    pub fn finish(self) -> Result<TrainOutput<T>> {
        let fields = self
            .state
            .fields
            .into_iter()
            .map(|s| match s {
                FieldSlot::Resident(f) => Ok(f),
                FieldSlot::Offloaded { path, .. } => load_field(&path),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainOutput {
            fields,
            poses: self.state.poses,
            spawn_log: self.state.spawn_log,
            iterations: self.state.iterations,
            pose_updates: self.state.pose_updates,
            near: self.near,
            far: self.far,
        })
    }

    fn step(&mut self, phase: Phase, frames: &[usize], flow_active: bool, phase_iter: usize) -> Result<()> {
        let budget = self.model.budget.max(1);
        let frac = (self.model.iter as f64 / budget as f64).min(1.0);
        let scale: T = decayed_lr(self.model.iter, budget, self.cfg.lr.final_ratio);
        let epsilon = (0.02 + (0.005 - 0.02) * frac) * (self.far - self.near);
        let sched = &self.cfg.schedule;
        let batch: RayBatch<T> = self.sampler.sample(frames, sched.batch_rays, &mut self.rng)?;
        let flow_active = flow_active && self.cfg.loss.flow_active;
        let info = IterInfo {
            phase,
            model: self.state.fields.len() - 1,
            iter: self.state.iterations.total(),
            phase_iter,
            frame: self.state.appended_upto.unwrap_or(0),
            flow_active,
        };
        if let Some(obs) = &mut self.observer {
            obs(&info, &batch);
        }
        let spec = ObjectiveSpec {
            sampling: SamplingSpec {
                near: T::lit(self.near),
                far: T::lit(self.far),
                n_samples: self.cfg.sampling.n_samples,
            },
            weights: LossWeights {
                lambda_z: T::lit(self.cfg.loss.lambda_z),
                lambda_f: T::lit(self.cfg.loss.lambda_f),
                flow_active,
            },
            epsilon: T::lit(epsilon),
            mode: RenderMode::Train,
        };
        let ev = {
            let refs = self.state.training_fields();
            Objective {
                fields: &refs,
                active: Some(refs.len() - 1),
                intr: &self.intr,
                ray_poses: &self.state.poses,
                flow_poses: &self.state.poses,
                spec,
            }
            .evaluate(&batch, true)?
        };
        let grad = ev
            .field_grad
            .as_ref()
            .ok_or_else(|| Error::Internal("missing field gradient".into()))?;
        let opt = self
            .field_opt
            .as_mut()
            .ok_or_else(|| Error::Internal("no field optimizer".into()))?;
        let field = match self.state.fields.last_mut() {
            Some(FieldSlot::Resident(f)) => f,
            _ => return Err(Error::Internal("no active field".into())),
        };
        opt.step(field, grad, scale)?;
        let span = field.frames;
        let mut pose_updates = 0;
        if self.cfg.schedule.pose_optimization && ev.pose_touched.iter().any(|&t| t) {
            // Only poses of frames that supplied rays move. A neighbour
            // reached through a flow pair would otherwise follow the newest,
            // least converged frame with nothing holding it on its other side.
            let touched: Vec<bool> = ev
                .pose_touched
                .iter()
                .enumerate()
                .map(|(k, &t)| t && span.contains(k) && frames.contains(&k))
                .collect();
            pose_updates = self.pose_opt.step(&mut self.state.poses, &ev.pose_grad, &touched, scale)?;
            self.state.pose_updates += pose_updates;
        }
        let c = &mut self.state.iterations;
        match phase {
            Phase::Bootstrap => c.bootstrap += 1,
            Phase::Append => c.append += 1,
            Phase::Refine => c.refine += 1,
        }
        let every = self.cfg.log_every.max(1);
        if info.iter % every == 0 || phase_iter == 0 {
            let s = scale.as_f64();
            self.log.record(&IterRecord {
                iter: info.iter,
                phase,
                model: info.model,
                frame: info.frame,
                rgb: ev.parts.rgb.as_f64(),
                depth: ev.parts.depth.as_f64(),
                flow: ev.parts.flow.as_f64(),
                total: ev.total.as_f64(),
                lr_planes: s * self.cfg.lr.planes,
                lr_mlp: s * self.cfg.lr.mlp,
                lr_pose: s * self.cfg.lr.pose,
                epsilon,
                flow_active,
                pose_updates,
            })?;
        }
        self.model.iter += 1;
        self.maybe_upsample()
    }

    /// Moves to the next grid resolution at 1/2, 3/4, 7/8, ... of the budget.
    fn maybe_upsample(&mut self) -> Result<()> {
        while self.model.level + 1 < self.model.levels.len() {
            let next = self.model.level + 1;
            let at = ((1.0 - 0.5f64.powi(next as i32)) * self.model.budget as f64) as usize;
            if self.model.iter < at {
                break;
            }
            let (s, t) = self.model.levels[next];
            let field = self.state.active_mut()?;
            field.upsample(s, t)?;
            if let Some(opt) = &mut self.field_opt {
                opt.reset_planes(self.state.active()?);
            }
            self.model.level = next;
            self.log.record(&json!({
                "event": "upsample",
                "model": self.state.fields.len() - 1,
                "iter": self.state.iterations.total(),
                "spatial_res": s,
                "temporal_res": t,
            }))?;
        }
        Ok(())
    }
}

/// Runs the full progressive schedule.
pub fn train_progressive<T: Real>(ds: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput<T>> {
    let mut t = Trainer::<T>::new(ds, cfg.clone())?;
    t.run()?;
    t.finish()
}
