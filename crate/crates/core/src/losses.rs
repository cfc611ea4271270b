//! Training objectives: photometric, depth with line-of-sight prior, flow
//! induced by the relative camera motion, and their weighted sum.

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose, Ray};
use crate::linalg::{Mat3, Vec3};
use crate::renderer::DEPTH_EPS;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Flow values at or above this magnitude mark a missing measurement.
pub const FLOW_INVALID: f64 = 1e9;

/// Smallest camera-space depth accepted after reprojection.
const MIN_Z: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct LossWeights<T> {
    pub lambda_z: T,
    pub lambda_f: T,
    pub flow_active: bool,
}

impl<T: Real> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            lambda_z: T::lit(0.01),
            lambda_f: T::one(),
            flow_active: true,
        }
    }
}

impl<T: Real> LossWeights<T> {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_z < T::zero() || self.lambda_f < T::zero() {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Per-batch values of the three loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossParts<T> {
    pub rgb: T,
    pub depth: T,
    pub flow: T,
}

/// Ground truth for a batch of rays, with one validity mask per signal.
#[derive(Clone, Debug, Default)]
pub struct SupervisionBatch<T> {
    pub color: Vec<[T; 3]>,
    pub color_mask: Vec<bool>,
    pub depth: Vec<T>,
    pub depth_mask: Vec<bool>,
    pub flow_fwd: Vec<[T; 2]>,
    pub flow_fwd_mask: Vec<bool>,
    pub flow_bwd: Vec<[T; 2]>,
    pub flow_bwd_mask: Vec<bool>,
}

impl<T: Real> SupervisionBatch<T> {
    pub fn len(&self) -> usize {
        self.color.len()
    }

    pub fn is_empty(&self) -> bool {
        self.color.is_empty()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.color.len();
        let lens = [
            self.color_mask.len(),
            self.depth.len(),
            self.depth_mask.len(),
            self.flow_fwd.len(),
            self.flow_fwd_mask.len(),
            self.flow_bwd.len(),
            self.flow_bwd_mask.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::ShapeMismatch(format!("supervision batch of {n} rays has fields of lengths {lens:?}")));
        }
        Ok(())
    }
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

fn count_valid(mask: &[bool], name: &'static str) -> Result<usize> {
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::UndefinedLoss(name)),
        n => Ok(n),
    }
}

/// Squared color error of one ray and its gradient.
#[inline]
pub fn rgb_term<T: Real>(pred: [T; 3], gt: [T; 3]) -> (T, [T; 3]) {
    let d = [pred[0] - gt[0], pred[1] - gt[1], pred[2] - gt[2]];
    let two = T::lit(2.0);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], [two * d[0], two * d[1], two * d[2]])
}

pub fn loss_rgb<T: Real>(pred: &[[T; 3]], gt: &[[T; 3]], mask: &[bool]) -> Result<T> {
    check_len(pred.len(), gt.len(), "colors")?;
    check_len(pred.len(), mask.len(), "color mask")?;
    let n = count_valid(mask, "rgb")?;
    let mut sum = T::zero();
    for ((p, g), _) in pred.iter().zip(gt).zip(mask).filter(|(_, &m)| m) {
        sum += rgb_term(*p, *g).0;
    }
    Ok(sum / T::from_usize_lossy(n))
}

/// Expected depth from compositing weights and sample positions.
pub fn expected_depth<T: Real>(weights: &[T], t_values: &[T]) -> T {
    let s: T = weights.iter().copied().sum();
    let wt: T = weights.iter().zip(t_values).map(|(&w, &t)| w * t).sum();
    wt / s.max(T::lit(DEPTH_EPS))
}

/// Depth and line-of-sight loss for one ray. When `dweights` is given it
/// receives `∂/∂wᵢ` (accumulated), including the path through `D̂`.
pub fn depth_los_term<T: Real>(weights: &[T], t_values: &[T], gt: T, epsilon: T, dweights: Option<&mut [T]>) -> T {
    let s: T = weights.iter().copied().sum();
    let dhat = expected_depth(weights, t_values);
    let err = dhat - gt;
    let mut far_sq = T::zero();
    let mut near_mass = T::zero();
    for (&w, &t) in weights.iter().zip(t_values) {
        if (t - gt).abs() > epsilon {
            far_sq += w * w;
        } else {
            near_mass += w;
        }
    }
    let miss = T::one() - near_mass;
    let value = err * err + far_sq + miss * miss;
    if let Some(dw) = dweights {
        let two = T::lit(2.0);
        let big = s > T::lit(DEPTH_EPS);
        let inv = T::one() / s.max(T::lit(DEPTH_EPS));
        for ((g, &w), &t) in dw.iter_mut().zip(weights).zip(t_values) {
            let ddhat = if big { (t - dhat) * inv } else { t * inv };
            let mut v = two * err * ddhat;
            if (t - gt).abs() > epsilon {
                v += two * w;
            } else {
                v -= two * miss;
            }
            *g += v;
        }
    }
    value
}

pub fn loss_depth_los<T: Real>(
    weights: &[Vec<T>],
    t_values: &[Vec<T>],
    gt_depth: &[T],
    mask: &[bool],
    epsilon: T,
) -> Result<T> {
    check_len(weights.len(), t_values.len(), "weights")?;
    check_len(weights.len(), gt_depth.len(), "depths")?;
    check_len(weights.len(), mask.len(), "depth mask")?;
    let n = count_valid(mask, "depth")?;
    let mut sum = T::zero();
    for i in (0..weights.len()).filter(|&i| mask[i]) {
        check_len(weights[i].len(), t_values[i].len(), "samples")?;
        sum += depth_los_term(&weights[i], &t_values[i], gt_depth[i], epsilon, None);
    }
    Ok(sum / T::from_usize_lossy(n))
}

/// Flow induced at one pixel, with a validity flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowPrediction<T> {
    pub flow: [T; 2],
    pub valid: bool,
}

/// Derivatives of the induced flow. Pose rows use left perturbations
/// `exp(δ)·P` with tangent order (ω, v).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowJacobian<T> {
    pub d_depth: [T; 2],
    pub d_pose_k: [[T; 6]; 2],
    pub d_pose_adj: [[T; 6]; 2],
}

/// Reprojects the camera-`k` point `x_cam` seen at `pixel` into the
/// adjacent camera and returns the pixel displacement. The point is invalid
/// when it lands behind the adjacent camera or outside its image.
pub fn flow_from_camera_point<T: Real>(
    pixel: [T; 2],
    x_cam: Vec3<T>,
    pose_k: &Pose<T>,
    pose_adj: &Pose<T>,
    intr: &Intrinsics<T>,
) -> (FlowPrediction<T>, Vec3<T>, Vec3<T>) {
    let w = pose_k.transform_point(x_cam);
    let y = pose_adj.rotation.transpose() * (w - pose_adj.translation);
    if y.z <= T::lit(MIN_Z) {
        return (
            FlowPrediction {
                flow: [T::zero(); 2],
                valid: false,
            },
            w,
            y,
        );
    }
    let q = [intr.fx * y.x / y.z + intr.cx, intr.fy * y.y / y.z + intr.cy];
    let flow = [q[0] - pixel[0], q[1] - pixel[1]];
    (
        FlowPrediction {
            flow,
            valid: intr.contains(q),
        },
        w,
        y,
    )
}

/// Jacobian of [`flow_from_camera_point`] given the intermediate world
/// point `w` and adjacent-camera point `y` it returned, and the camera-`k`
/// unit bearing `dir_cam` so that `x_cam = D̂·dir_cam`.
pub fn flow_jacobian<T: Real>(
    w: Vec3<T>,
    y: Vec3<T>,
    dir_cam: Vec3<T>,
    pose_k: &Pose<T>,
    pose_adj: &Pose<T>,
    intr: &Intrinsics<T>,
) -> FlowJacobian<T> {
    let iz = T::one() / y.z;
    let jp = [
        [intr.fx * iz, T::zero(), -intr.fx * y.x * iz * iz],
        [T::zero(), intr.fy * iz, -intr.fy * y.y * iz * iz],
    ];
    let rat = pose_adj.rotation.transpose();
    // a = Jπ·Rₐᵀ (2×3)
    let mut a = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            a[r][c] = (0..3).map(|k| jp[r][k] * rat.m[k][c]).sum();
        }
    }
    let ws = Mat3::skew(w);
    let dw = pose_k.rotation * dir_cam;
    let mut out = FlowJacobian {
        d_depth: [T::zero(); 2],
        d_pose_k: [[T::zero(); 6]; 2],
        d_pose_adj: [[T::zero(); 6]; 2],
    };
    for r in 0..2 {
        out.d_depth[r] = a[r][0] * dw.x + a[r][1] * dw.y + a[r][2] * dw.z;
        for c in 0..3 {
            // a·[W]× column c
            let s: T = (0..3).map(|k| a[r][k] * ws.m[k][c]).sum();
            out.d_pose_k[r][c] = -s;
            out.d_pose_k[r][3 + c] = a[r][c];
            out.d_pose_adj[r][c] = s;
            out.d_pose_adj[r][3 + c] = -a[r][c];
        }
    }
    out
}

/// Flow from frame `k` to an adjacent frame induced by the predicted depth
/// along `ray` and the relative camera motion.
pub fn induced_flow<T: Real>(
    ray: &Ray<T>,
    pred_depth: T,
    pose_k: &Pose<T>,
    pose_adj: &Pose<T>,
    intr: &Intrinsics<T>,
) -> Result<FlowPrediction<T>> {
    Ok(induced_flow_with_jacobian(ray, pred_depth, pose_k, pose_adj, intr)?.0)
}

pub fn induced_flow_with_jacobian<T: Real>(
    ray: &Ray<T>,
    pred_depth: T,
    pose_k: &Pose<T>,
    pose_adj: &Pose<T>,
    intr: &Intrinsics<T>,
) -> Result<(FlowPrediction<T>, FlowJacobian<T>)> {
    if !(pred_depth > T::zero()) {
        return Err(Error::Domain(format!("predicted depth must be positive, got {pred_depth}")));
    }
    let dir_cam = intr.bearing(ray.pixel).normalize();
    let (pred, w, y) = flow_from_camera_point(ray.pixel, dir_cam * pred_depth, pose_k, pose_adj, intr);
    let jac = if y.z > T::lit(MIN_Z) {
        flow_jacobian(w, y, dir_cam, pose_k, pose_adj, intr)
    } else {
        FlowJacobian {
            d_depth: [T::zero(); 2],
            d_pose_k: [[T::zero(); 6]; 2],
            d_pose_adj: [[T::zero(); 6]; 2],
        }
    };
    Ok((pred, jac))
}

/// L1 flow error of one (ray, direction) pair and its gradient.
#[inline]
pub fn flow_term<T: Real>(pred: [T; 2], gt: [T; 2]) -> (T, [T; 2]) {
    let d = [pred[0] - gt[0], pred[1] - gt[1]];
    let sgn = |x: T| {
        if x > T::zero() {
            T::one()
        } else if x < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    };
    (d[0].abs() + d[1].abs(), [sgn(d[0]), sgn(d[1])])
}

/// True when a stored flow vector is a real measurement.
pub fn flow_is_valid<T: Real>(f: [T; 2]) -> bool {
    let lim = T::lit(FLOW_INVALID);
    f[0].is_finite() && f[1].is_finite() && f[0].abs() < lim && f[1].abs() < lim
}

pub fn loss_flow<T: Real>(
    induced_fwd: &[[T; 2]],
    induced_bwd: &[[T; 2]],
    gt_fwd: &[[T; 2]],
    gt_bwd: &[[T; 2]],
    mask_fwd: &[bool],
    mask_bwd: &[bool],
) -> Result<T> {
    let n = induced_fwd.len();
    for (l, what) in [
        (induced_bwd.len(), "backward flow"),
        (gt_fwd.len(), "forward target"),
        (gt_bwd.len(), "backward target"),
        (mask_fwd.len(), "forward mask"),
        (mask_bwd.len(), "backward mask"),
    ] {
        check_len(n, l, what)?;
    }
    let count = mask_fwd.iter().chain(mask_bwd).filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::UndefinedLoss("flow"));
    }
    let mut sum = T::zero();
    for i in 0..n {
        if mask_fwd[i] {
            sum += flow_term(induced_fwd[i], gt_fwd[i]).0;
        }
        if mask_bwd[i] {
            sum += flow_term(induced_bwd[i], gt_bwd[i]).0;
        }
    }
    Ok(sum / T::from_usize_lossy(count))
}

pub fn total_loss<T: Real>(parts: &LossParts<T>, weights: &LossWeights<T>) -> T {
    let base = parts.rgb + weights.lambda_z * parts.depth;
    if weights.flow_active {
        base + weights.lambda_f * parts.flow
    } else {
        base
    }
}
