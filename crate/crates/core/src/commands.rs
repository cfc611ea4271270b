//! The four pipeline steps behind the command-line tool. Everything a step
//! writes goes below `RunConfig::output`, except `synth`, which writes the
//! dataset directory.
//!
//! ```text
//! config.toml          effective configuration
//! train_log.jsonl      one record per logged iteration
//! spawn_log.json       span and spawn trigger of every local field
//! summary.json         iteration counts and ray bounds
//! trajectory.txt       optimized camera-to-world poses
//! checkpoints/         one file per local field
//! render/rgb, depth/   rendered frames, same formats as a dataset
//! eval.csv, eval.txt   image and trajectory metrics
//! ```

use crate::config::{Precision, RunConfig};
use crate::data::formats::{read_depth, read_intrinsics, read_png, write_depth, write_png};
use crate::data::{generate_synthetic, load_dataset, read_trajectory, write_dataset, write_trajectory};
use crate::data::{DepthMap, RgbImage};
use crate::error::{Error, Result};
use crate::field::{load_field, save_field, LocalField};
use crate::metrics::{depth_l1, psnr, ssim, EvalReport, FrameMetrics};
use crate::progressive::{is_held_out, IterCounters, SpawnRecord, TrainLog, Trainer};
use crate::renderer::{render_frame, SamplingSpec};
use crate::Real;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const SPAWN_LOG_FILE: &str = "spawn_log.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const RENDER_DIR: &str = "render";
pub const SYNTH_MANIFEST: &str = "synth.toml";

#[derive(Serialize)]
struct SynthManifest<'a> {
    seed: u64,
    rig: &'a crate::data::SyntheticRig,
}

/// Generates the configured synthetic rig into `cfg.dataset`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.synth.validate()?;
    let ds = generate_synthetic(&cfg.synth, cfg.seed)?;
    write_dataset(&ds, &cfg.dataset)?;
    let manifest = toml::to_string(&SynthManifest {
        seed: cfg.seed,
        rig: &cfg.synth,
    })
    .map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(cfg.dataset.join(SYNTH_MANIFEST), manifest)?;
    log::info!("wrote {} frames to {}", ds.len(), cfg.dataset.display());
    Ok(cfg.dataset.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub frames: usize,
    pub fields: usize,
    pub iterations: IterCounters,
    pub pose_updates: usize,
    pub near: f64,
    pub far: f64,
    pub precision: u32,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn checkpoint_path(output: &Path, model: usize) -> PathBuf {
    output.join(CHECKPOINT_DIR).join(format!("field_{model:03}.lhf"))
}

fn train_with<T: Real>(cfg: &RunConfig) -> Result<TrainSummary> {
    let ds = load_dataset(&cfg.dataset)?;
    let tc = cfg.train_config();
    let out = &cfg.output;
    let log = TrainLog::new(Box::new(BufWriter::new(File::create(out.join(TRAIN_LOG_FILE))?)));
    let mut trainer = Trainer::<T>::new(&ds, tc)?
        .with_log(log)
        .with_offload_dir(out.join(CHECKPOINT_DIR).join("offload"));
    trainer.run()?;
    let res = trainer.finish()?;
    for (i, f) in res.fields.iter().enumerate() {
        save_field(f, &checkpoint_path(out, i))?;
    }
    let offload = out.join(CHECKPOINT_DIR).join("offload");
    if offload.exists() {
        fs::remove_dir_all(offload)?;
    }
    let poses: Vec<_> = res.poses.iter().map(|p| p.cast::<f64>()).collect();
    write_trajectory(&poses, &out.join(TRAJECTORY_FILE))?;
    write_json(&out.join(SPAWN_LOG_FILE), &res.spawn_log)?;
    let summary = TrainSummary {
        frames: ds.len(),
        fields: res.fields.len(),
        iterations: res.iterations,
        pose_updates: res.pose_updates,
        near: res.near,
        far: res.far,
        precision: cfg.precision.into(),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    log::info!(
        "trained {} fields in {} iterations",
        summary.fields,
        summary.iterations.total()
    );
    Ok(summary)
}

/// Runs the progressive optimization and writes checkpoints, trajectory,
/// logs and the effective config.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    fs::create_dir_all(cfg.output.join(CHECKPOINT_DIR))?;
    fs::write(cfg.output.join(CONFIG_FILE), cfg.to_toml()?)?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg),
        Precision::F64 => train_with::<f64>(cfg),
    }
}

pub fn read_summary(output: &Path) -> Result<TrainSummary> {
    let path = output.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(&path, e.to_string()))
}

pub fn read_spawn_log(output: &Path) -> Result<Vec<SpawnRecord>> {
    let path = output.join(SPAWN_LOG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::load(&path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(&path, e.to_string()))
}

/// Loads every checkpoint of a training run, in spawn order.
pub fn load_checkpoints<T: Real>(output: &Path) -> Result<Vec<LocalField<T>>> {
    let dir = output.join(CHECKPOINT_DIR);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "lhf"))
        .collect();
    if paths.is_empty() {
        return Err(Error::Checkpoint(format!("no checkpoints in {}", dir.display())));
    }
    paths.sort();
    paths.iter().map(|p| load_field(p)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSummary {
    pub frames: Vec<usize>,
    /// Frames rendered from more than one local field.
    pub blended_frames: usize,
}

fn render_with<T: Real>(cfg: &RunConfig, frames: Option<&[usize]>) -> Result<RenderSummary> {
    let out = &cfg.output;
    let fields = load_checkpoints::<T>(out)?;
    let traj = read_trajectory(&out.join(TRAJECTORY_FILE))?;
    let intr = read_intrinsics(&cfg.dataset.join("intrinsics.txt"))?;
    let summary = read_summary(out)?;
    let near = cfg.sampling.near.unwrap_or(summary.near);
    let far = cfg.sampling.far.unwrap_or(summary.far);
    let spec = SamplingSpec {
        near: T::lit(near),
        far: T::lit(far),
        n_samples: cfg.render.n_samples.unwrap_or(cfg.sampling.n_samples),
    };
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let frames: Vec<usize> = match frames {
        Some(f) => f.to_vec(),
        None => (0..traj.len())
            .filter(|&k| !cfg.render.held_out_only || is_held_out(k, cfg.schedule.eval_stride))
            .collect(),
    };
    if let Some(&k) = frames.iter().find(|&&k| k >= traj.len()) {
        return Err(Error::Config(format!("frame {k} is outside the {}-frame trajectory", traj.len())));
    }
    let refs: Vec<&LocalField<T>> = fields.iter().collect();
    let intr_t = intr.cast::<T>();
    let (rgb_dir, depth_dir) = (out.join(RENDER_DIR).join("rgb"), out.join(RENDER_DIR).join("depth"));
    fs::create_dir_all(&rgb_dir)?;
    fs::create_dir_all(&depth_dir)?;
    let mut blended_frames = 0;
    for &k in &frames {
        let r = render_frame(&refs, &traj[k].cast::<T>(), &intr_t, k, &spec)?;
        if r.blended_rays > 0 {
            blended_frames += 1;
            log::info!("frame {k}: {} rays blended across fields", r.blended_rays);
        }
        let rgb = r
            .rgb
            .iter()
            .map(|c| c.map(|x| x.to_f64().unwrap_or(0.0).clamp(0.0, 1.0) as f32))
            .collect();
        write_png(
            &rgb_dir.join(format!("{k:06}.png")),
            &RgbImage {
                width: r.width,
                height: r.height,
                data: rgb,
            },
        )?;
        write_depth(
            &depth_dir.join(format!("{k:06}.bin")),
            &DepthMap {
                width: r.width,
                height: r.height,
                data: r.depth.iter().map(|d| d.to_f64().unwrap_or(0.0) as f32).collect(),
            },
        )?;
    }
    log::info!("rendered {} frames, {blended_frames} blended", frames.len());
    Ok(RenderSummary { frames, blended_frames })
}

/// Renders frames of a trained run from its checkpoints and trajectory.
/// `frames` overrides the set chosen by the config.
pub fn cmd_render(cfg: &RunConfig, frames: Option<&[usize]>) -> Result<RenderSummary> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => render_with::<f32>(cfg, frames),
        Precision::F64 => render_with::<f64>(cfg, frames),
    }
}

/// Compares rendered frames in `renders` (a directory with `rgb/` and
/// `depth/`) against the dataset on the held-out frames, or on every frame
/// when the hold-out is disabled. Trajectory metrics are added when both
/// an estimate and a ground truth exist. Writes the report to the output
/// directory.
pub fn cmd_eval(cfg: &RunConfig, renders: Option<&Path>, trajectory: Option<&Path>) -> Result<EvalReport> {
    let ds = load_dataset(&cfg.dataset)?;
    let default_renders = cfg.output.join(RENDER_DIR);
    let renders = renders.unwrap_or(&default_renders);
    let stride = cfg.schedule.eval_stride;
    let (w, h) = (ds.intrinsics.width, ds.intrinsics.height);
    let mut rows = Vec::new();
    for k in (0..ds.len()).filter(|&k| stride == 0 || is_held_out(k, stride)) {
        let rgb_path = renders.join("rgb").join(format!("{k:06}.png"));
        if !rgb_path.exists() {
            continue;
        }
        let img = read_png(&rgb_path)?;
        let depth = read_depth(&renders.join("depth").join(format!("{k:06}.bin")))?;
        if (img.width, img.height) != (w, h) || (depth.width, depth.height) != (w, h) {
            return Err(Error::load(&rgb_path, format!("render size differs from the dataset's {w}x{h}")));
        }
        let f = &ds.frames[k];
        let to64 = |v: &[[f32; 3]]| v.iter().map(|c| c.map(f64::from)).collect::<Vec<_>>();
        let (pred, gt) = (to64(&img.data), to64(&f.rgb));
        let pd: Vec<f64> = depth.data.iter().map(|&d| d as f64).collect();
        let gd: Vec<f64> = f.depth.iter().map(|&d| d as f64).collect();
        let mask: Vec<bool> = (0..gd.len()).map(|i| f.depth_valid(i) && pd[i].is_finite()).collect();
        rows.push(FrameMetrics {
            frame: k,
            psnr: psnr(&pred, &gt)?,
            ssim: ssim(&pred, &gt, w, h)?,
            depth_l1: depth_l1(&pd, &gd, &mask)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::load(renders, "no rendered evaluation frames found"));
    }
    let mut report = EvalReport::new(rows);
    let default_traj = cfg.output.join(TRAJECTORY_FILE);
    let traj_path = trajectory.unwrap_or(&default_traj);
    if let (Some(gt), true) = (&ds.gt_trajectory, traj_path.exists()) {
        let est = read_trajectory(traj_path)?;
        if est.len() != gt.len() {
            return Err(Error::load(traj_path, format!("{} poses for {} frames", est.len(), gt.len())));
        }
        report = report.with_trajectory(&est, gt)?;
    }
    fs::create_dir_all(&cfg.output)?;
    report.write(&cfg.output)?;
    log::info!("{}", report.summary());
    Ok(report)
}
