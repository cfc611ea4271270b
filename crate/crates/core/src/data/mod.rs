//! Datasets on disk and in memory, and the synthetic scene generator.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! intrinsics.txt        fx fy cx cy width height
//! rgb/000000.png        8-bit color
//! depth/000000.bin      z-depth, f32 with a (width, height) u32 header
//! flow_fwd/000000.flo   flow k → k+1 for k in 0..K-1
//! flow_bwd/000001.flo   flow k → k-1 for k in 1..K
//! gt_traj.txt           optional camera-to-world poses
//! meta.toml             optional unit label and near/far hints
//! ```

pub mod formats;
pub mod synthetic;
pub mod trajectory;

pub use formats::{DepthMap, FlowMap, RgbImage, FLO_TAG, FLO_UNKNOWN};
pub use synthetic::{generate_synthetic, Deformation, Surface, SyntheticRig, TrajectorySpec};
pub use trajectory::{read_trajectory, write_trajectory};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::losses::FLOW_INVALID;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Supervision for one frame. Images are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub rgb: Vec<[f32; 3]>,
    /// z-depth in scene units; zero marks invalid pixels.
    pub depth: Vec<f32>,
    /// Flow to the next frame, absent on the last frame.
    pub flow_fwd: Option<Vec<[f32; 2]>>,
    /// Flow to the previous frame, absent on the first frame.
    pub flow_bwd: Option<Vec<[f32; 2]>>,
}

impl FrameRecord {
    pub fn depth_valid(&self, i: usize) -> bool {
        self.depth[i] > 0.0
    }
}

/// True when a stored flow vector carries a measurement.
pub fn flow_valid(v: [f32; 2]) -> bool {
    let lim = FLOW_INVALID as f32;
    v[0].is_finite() && v[1].is_finite() && v[0].abs() < lim && v[1].abs() < lim
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetMeta {
    /// Name of the scene unit, e.g. "mm".
    pub unit: String,
    pub near: Option<f64>,
    pub far: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub intrinsics: Intrinsics<f64>,
    pub frames: Vec<FrameRecord>,
    pub gt_trajectory: Option<Vec<Pose<f64>>>,
    pub meta: DatasetMeta,
}

fn frame_file(dir: &Path, sub: &str, k: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{k:06}.{ext}"))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.intrinsics.pixel_count()
    }

    /// Checks the in-memory invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.pixel_count();
        let k_last = self.frames.len().saturating_sub(1);
        for (k, f) in self.frames.iter().enumerate() {
            if f.rgb.len() != n || f.depth.len() != n {
                return Err(Error::ShapeMismatch(format!("frame {k}: image sizes differ from intrinsics")));
            }
            if f.depth.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
                return Err(Error::Domain(format!("frame {k}: depth must be finite and nonnegative")));
            }
            for (flow, want) in [(&f.flow_fwd, k < k_last), (&f.flow_bwd, k > 0)] {
                match flow {
                    Some(v) if v.len() != n => {
                        return Err(Error::ShapeMismatch(format!("frame {k}: flow size differs from intrinsics")))
                    }
                    None if want => return Err(Error::Domain(format!("frame {k}: missing flow"))),
                    _ => {}
                }
            }
        }
        if let Some(t) = &self.gt_trajectory {
            if t.len() != self.frames.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} trajectory poses for {} frames",
                    t.len(),
                    self.frames.len()
                )));
            }
        }
        Ok(())
    }

    /// Ray distance of a z-depth at pixel index `i`.
    pub fn depth_to_distance(&self, i: usize, z: f64) -> f64 {
        let intr = &self.intrinsics;
        let (u, v) = ((i % intr.width) as f64, (i / intr.width) as f64);
        z * intr.bearing([u, v]).norm()
    }
}

fn count_frames(root: &Path) -> Result<usize> {
    let dir = root.join("rgb");
    let entries = fs::read_dir(&dir).map_err(|e| Error::load(&dir, e.to_string()))?;
    let mut idx = Vec::new();
    for e in entries {
        let e = e?;
        let name = e.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".png") else {
            continue;
        };
        let k: usize = stem
            .parse()
            .map_err(|_| Error::load(e.path(), "image name is not a frame index"))?;
        idx.push(k);
    }
    idx.sort_unstable();
    for (want, &k) in idx.iter().enumerate() {
        if k != want {
            return Err(Error::load(frame_file(root, "rgb", want, "png"), "frame indices are not contiguous from 0"));
        }
    }
    Ok(idx.len())
}

fn check_size(path: &Path, w: usize, h: usize, intr: &Intrinsics<f64>) -> Result<()> {
    if w != intr.width || h != intr.height {
        return Err(Error::load(
            path,
            format!("resolution {w}x{h} does not match intrinsics {}x{}", intr.width, intr.height),
        ));
    }
    Ok(())
}

fn load_frame(root: &Path, k: usize, last: usize, intr: &Intrinsics<f64>) -> Result<FrameRecord> {
    let p = frame_file(root, "rgb", k, "png");
    let rgb = formats::read_png(&p)?;
    check_size(&p, rgb.width, rgb.height, intr)?;
    let p = frame_file(root, "depth", k, "bin");
    let depth = formats::read_depth(&p)?;
    check_size(&p, depth.width, depth.height, intr)?;
    let flow = |sub: &str, present: bool| -> Result<Option<Vec<[f32; 2]>>> {
        if !present {
            return Ok(None);
        }
        let p = frame_file(root, sub, k, "flo");
        let f = formats::read_flo(&p)?;
        check_size(&p, f.width, f.height, intr)?;
        Ok(Some(f.data))
    };
    Ok(FrameRecord {
        rgb: rgb.data,
        depth: depth.data,
        flow_fwd: flow("flow_fwd", k < last)?,
        flow_bwd: flow("flow_bwd", k > 0)?,
    })
}

/// Loads and validates a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let intr = formats::read_intrinsics(&root.join("intrinsics.txt"))?;
    let n = count_frames(root)?;
    if n == 0 {
        return Err(Error::load(root.join("rgb"), "no frames"));
    }
    let frames = (0..n)
        .into_par_iter()
        .map(|k| load_frame(root, k, n - 1, &intr))
        .collect::<Result<Vec<_>>>()?;
    let traj_path = root.join("gt_traj.txt");
    let gt_trajectory = if traj_path.exists() {
        let t = read_trajectory(&traj_path)?;
        if t.len() != n {
            return Err(Error::load(&traj_path, format!("{} poses for {n} frames", t.len())));
        }
        Some(t)
    } else {
        None
    };
    let meta_path = root.join("meta.toml");
    let meta = if meta_path.exists() {
        let text = fs::read_to_string(&meta_path)?;
        toml::from_str(&text).map_err(|e| Error::load(&meta_path, e.to_string()))?
    } else {
        DatasetMeta::default()
    };
    let ds = Dataset {
        intrinsics: intr,
        frames,
        gt_trajectory,
        meta,
    };
    ds.validate().map_err(|e| Error::load(root, e.to_string()))?;
    Ok(ds)
}

/// Writes a dataset in the layout read by [`load_dataset`]. Colors are
/// stored with 8 bits per channel.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    ds.validate()?;
    for sub in ["rgb", "depth", "flow_fwd", "flow_bwd"] {
        fs::create_dir_all(root.join(sub))?;
    }
    formats::write_intrinsics(&root.join("intrinsics.txt"), &ds.intrinsics)?;
    let (w, h) = (ds.intrinsics.width, ds.intrinsics.height);
    ds.frames.par_iter().enumerate().try_for_each(|(k, f)| -> Result<()> {
        formats::write_png(
            &frame_file(root, "rgb", k, "png"),
            &RgbImage {
                width: w,
                height: h,
                data: f.rgb.clone(),
            },
        )?;
        formats::write_depth(
            &frame_file(root, "depth", k, "bin"),
            &DepthMap {
                width: w,
                height: h,
                data: f.depth.clone(),
            },
        )?;
        for (sub, flow) in [("flow_fwd", &f.flow_fwd), ("flow_bwd", &f.flow_bwd)] {
            if let Some(d) = flow {
                formats::write_flo(
                    &frame_file(root, sub, k, "flo"),
                    &FlowMap {
                        width: w,
                        height: h,
                        data: d.clone(),
                    },
                )?;
            }
        }
        Ok(())
    })?;
    if let Some(t) = &ds.gt_trajectory {
        write_trajectory(t, &root.join("gt_traj.txt"))?;
    }
    fs::write(
        root.join("meta.toml"),
        toml::to_string(&ds.meta).map_err(|e| Error::Internal(e.to_string()))?,
    )?;
    Ok(())
}
