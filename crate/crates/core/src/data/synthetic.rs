//! Synthetic deforming scenes with analytic color, depth and flow.
//!
//! The surface is a plane or a sphere, optionally in front of a backdrop
//! plane. Points move along the rest normal by `A·sin(2π(f·t + φ))`, with
//! `t` the frame index. Color is a
//! smooth sinusoidal texture attached to material points. The camera
//! follows a Catmull-Rom spline through control points starting at the
//! origin and looks at a fixed target on the +z axis, so frame 0 has the
//! identity pose.

use super::{Dataset, DatasetMeta, FrameRecord, FLO_UNKNOWN};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::linalg::{Mat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    /// The plane `z = depth`, facing the camera.
    Plane { depth: f64 },
    Sphere { center: [f64; 3], radius: f64 },
}

/// Displacement `amplitude·sin(2π(frequency·t + phase))` along the normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Deformation {
    pub amplitude: f64,
    /// Cycles per frame.
    pub frequency: f64,
    pub phase: f64,
}

impl Default for Deformation {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            frequency: 0.02,
            phase: 0.0,
        }
    }
}

impl Deformation {
    pub fn offset(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * (self.frequency * t + self.phase)).sin()
    }
}

/// Camera path, always starting at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Static,
    /// Straight segment from the origin to `end`.
    Line { end: [f64; 3] },
    /// Circular arc in the image plane of frame 0, curving toward -y.
    Arc { radius: f64, angle_deg: f64 },
    /// Control points of the spline; the first must be the origin.
    Points { points: Vec<[f64; 3]> },
}

impl TrajectorySpec {
    fn control_points(&self) -> Vec<Vec3<f64>> {
        match self {
            TrajectorySpec::Static => vec![Vec3::zeros(), Vec3::zeros()],
            TrajectorySpec::Line { end } => vec![Vec3::zeros(), Vec3::from_array(*end)],
            TrajectorySpec::Arc { radius, angle_deg } => (0..=8)
                .map(|i| {
                    let th = angle_deg.to_radians() * i as f64 / 8.0;
                    Vec3::new(radius * th.sin(), -radius * (1.0 - th.cos()), 0.0)
                })
                .collect(),
            TrajectorySpec::Points { points } => points.iter().map(|p| Vec3::from_array(*p)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticRig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels, shared by both axes.
    pub focal: f64,
    pub surface: Surface,
    /// Depth of a wall `z = backdrop` behind the surface. Occlusion edges
    /// against it separate camera translation from rotation in the flow.
    pub backdrop: Option<f64>,
    pub deformation: Deformation,
    pub trajectory: TrajectorySpec,
    /// Point every camera looks at; defaults to the surface center.
    pub look_at: Option<[f64; 3]>,
    /// Multiplies the texture periods, which are drawn from [0.6, 1.0].
    pub texture_scale: f64,
    pub unit: String,
}

impl Default for SyntheticRig {
    fn default() -> Self {
        Self {
            frames: 60,
            width: 128,
            height: 128,
            focal: 120.0,
            surface: Surface::Plane { depth: 2.5 },
            backdrop: None,
            deformation: Deformation::default(),
            trajectory: TrajectorySpec::Arc {
                radius: 1.0,
                angle_deg: 30.0,
            },
            look_at: None,
            texture_scale: 1.0,
            unit: "unit".into(),
        }
    }
}

/// Fewest frames a sequence needs for the bootstrap phase.
pub const MIN_FRAMES: usize = 5;

impl SyntheticRig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < MIN_FRAMES {
            return Err(Error::SequenceTooShort {
                got: self.frames,
                need: MIN_FRAMES,
            });
        }
        if self.width < 2 || self.height < 2 || !(self.focal > 0.0) || !(self.texture_scale > 0.0) {
            return Err(Error::Generation("image size, focal length and texture scale must be positive".into()));
        }
        match &self.surface {
            Surface::Plane { depth } if !(*depth > 0.0) => {
                return Err(Error::Generation("plane must lie in front of the first camera".into()))
            }
            Surface::Sphere { radius, .. } if !(*radius > 0.0) => {
                return Err(Error::Generation("sphere radius must be positive".into()))
            }
            _ => {}
        }
        if let Some(b) = self.backdrop {
            let back = match &self.surface {
                Surface::Plane { depth } => *depth,
                Surface::Sphere { center, radius } => center[2] + radius,
            };
            if !(b > back + 2.0 * self.deformation.amplitude.abs()) {
                return Err(Error::Generation("backdrop must lie behind the surface".into()));
            }
        }
        let pts = self.trajectory.control_points();
        if pts.len() < 2 || pts[0].norm() != 0.0 {
            return Err(Error::Generation("trajectory must start at the origin".into()));
        }
        let t = self.target();
        if t.x != 0.0 || t.y != 0.0 || !(t.z > 0.0) {
            return Err(Error::Generation("look-at target must lie on the +z axis".into()));
        }
        Ok(())
    }

    fn target(&self) -> Vec3<f64> {
        match self.look_at {
            Some(p) => Vec3::from_array(p),
            None => match &self.surface {
                Surface::Plane { depth } => Vec3::new(0.0, 0.0, *depth),
                Surface::Sphere { center, .. } => Vec3::new(0.0, 0.0, center[2]),
            },
        }
    }

    pub fn intrinsics(&self) -> Intrinsics<f64> {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height,
        }
    }
}

/// Ray parameter where `origin + s·dir` meets the plane `z = z`.
fn hit_plane(z: f64, origin: Vec3<f64>, dir: Vec3<f64>) -> Option<f64> {
    if dir.z <= 1e-12 {
        return None;
    }
    let s = (z - origin.z) / dir.z;
    (s > 0.0).then_some(s)
}

/// Uniform Catmull-Rom interpolation at `u ∈ [0, 1]` with reflected ends.
pub fn catmull_rom(points: &[Vec3<f64>], u: f64) -> Vec3<f64> {
    let n = points.len();
    if n == 1 {
        return points[0];
    }
    let s = u.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = (s.floor() as usize).min(n - 2);
    let t = s - i as f64;
    let get = |j: isize| -> Vec3<f64> {
        if j < 0 {
            points[0] * 2.0 - points[1]
        } else if j as usize >= n {
            points[n - 1] * 2.0 - points[n - 2]
        } else {
            points[j as usize]
        }
    };
    let (p0, p1, p2, p3) = (get(i as isize - 1), get(i as isize), get(i as isize + 1), get(i as isize + 2));
    let (t2, t3) = (t * t, t * t * t);
    (p1 * 2.0 + (p2 - p0) * t + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3) * 0.5
}

/// Camera-to-world pose at `position` looking at `target`, with the image
/// y axis pointing along world +y as far as possible.
pub fn look_at(position: Vec3<f64>, target: Vec3<f64>) -> Result<Pose<f64>> {
    let z = (target - position).normalize();
    let x = Vec3::new(0.0, 1.0, 0.0).cross(z);
    if x.norm() < 1e-9 {
        return Err(Error::Generation("viewing direction parallel to the down axis".into()));
    }
    let x = x.normalize();
    let y = z.cross(x);
    Ok(Pose::new(Mat3::from_cols(x, y, z), position))
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Part {
    Surface,
    Backdrop,
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    dir: Vec3<f64>,
    period: f64,
    phase: f64,
}

/// A generated scene: geometry, texture and camera path.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub rig: SyntheticRig,
    pub poses: Vec<Pose<f64>>,
    waves: [[Wave; 2]; 3],
}

impl SyntheticScene {
    pub fn new(rig: &SyntheticRig, seed: u64) -> Result<Self> {
        rig.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planar = matches!(rig.surface, Surface::Plane { .. });
        let mut wave = || {
            let dir = if planar {
                let a = rng.gen_range(0.0..2.0 * PI);
                Vec3::new(a.cos(), a.sin(), 0.0)
            } else {
                let z: f64 = rng.gen_range(-1.0..1.0);
                let a = rng.gen_range(0.0..2.0 * PI);
                let r = (1.0 - z * z).sqrt();
                Vec3::new(r * a.cos(), r * a.sin(), z)
            };
            Wave {
                dir,
                period: rng.gen_range(0.6..1.0) * rig.texture_scale,
                phase: rng.gen_range(0.0..1.0),
            }
        };
        let waves = std::array::from_fn(|_| [wave(), wave()]);
        let pts = rig.trajectory.control_points();
        let target = rig.target();
        let k_max = (rig.frames - 1).max(1) as f64;
        let poses = (0..rig.frames)
            .map(|k| {
                if k == 0 {
                    return look_at(Vec3::zeros(), target);
                }
                look_at(catmull_rom(&pts, k as f64 / k_max), target)
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Self {
            rig: rig.clone(),
            poses,
            waves,
        };
        if let Surface::Sphere { center, radius } = rig.surface {
            let c = Vec3::from_array(center);
            let r_max = radius + rig.deformation.amplitude.abs();
            if radius - rig.deformation.amplitude.abs() <= 0.0 {
                return Err(Error::Generation("deformation collapses the sphere".into()));
            }
            if let Some(k) = scene.poses.iter().position(|p| (p.translation - c).norm() <= r_max) {
                return Err(Error::Generation(format!("camera {k} lies inside the sphere")));
            }
        }
        Ok(scene)
    }

    fn normal_offset(&self, t: f64) -> f64 {
        self.rig.deformation.offset(t)
    }

    /// Distance along `dir` (not necessarily unit) from `origin` to the
    /// nearest surface at time `t`, in multiples of `dir`.
    pub fn intersect(&self, origin: Vec3<f64>, dir: Vec3<f64>, t: f64) -> Option<f64> {
        self.hit(origin, dir, t).map(|(s, _)| s)
    }

    fn hit(&self, origin: Vec3<f64>, dir: Vec3<f64>, t: f64) -> Option<(f64, Part)> {
        let front = self.hit_surface(origin, dir, t).map(|s| (s, Part::Surface));
        let back = self
            .rig
            .backdrop
            .and_then(|z| hit_plane(z - self.normal_offset(t), origin, dir))
            .map(|s| (s, Part::Backdrop));
        match (front, back) {
            (Some(f), Some(b)) => Some(if b.0 < f.0 { b } else { f }),
            (f, b) => f.or(b),
        }
    }

    fn hit_surface(&self, origin: Vec3<f64>, dir: Vec3<f64>, t: f64) -> Option<f64> {
        let d = self.normal_offset(t);
        match self.rig.surface {
            Surface::Plane { depth } => hit_plane(depth - d, origin, dir),
            Surface::Sphere { center, radius } => {
                let r = radius + d;
                let oc = origin - Vec3::from_array(center);
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(oc) - r * r;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                // stable smaller root
                let q = -b - b.signum() * sq;
                let (r1, r2) = (q / a, c / q);
                let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
                if lo > 0.0 {
                    Some(lo)
                } else if hi > 0.0 {
                    Some(hi)
                } else {
                    None
                }
            }
        }
    }

    /// Rest position of the surface point at `x` and time `t`, and the
    /// normal it moves along.
    fn material(&self, x: Vec3<f64>, t: f64, part: Part) -> (Vec3<f64>, Vec3<f64>) {
        match (part, &self.rig.surface) {
            (Part::Backdrop, _) | (_, Surface::Plane { .. }) => {
                let n = Vec3::new(0.0, 0.0, -1.0);
                (x - n * self.normal_offset(t), n)
            }
            (_, Surface::Sphere { center, radius }) => {
                let c = Vec3::from_array(*center);
                let n = (x - c).normalize();
                (c + n * *radius, n)
            }
        }
    }

    /// World position at time `t` of the material point at rest position `m`.
    fn advect(&self, m: Vec3<f64>, n: Vec3<f64>, t: f64) -> Vec3<f64> {
        m + n * self.normal_offset(t)
    }

    fn color(&self, m: Vec3<f64>, part: Part) -> [f32; 3] {
        let m = match (part, &self.rig.surface) {
            (Part::Surface, Surface::Sphere { center, .. }) => m - Vec3::from_array(*center),
            _ => m,
        };
        std::array::from_fn(|c| {
            let v: f64 = self.waves[c]
                .iter()
                .map(|w| 0.22 * (2.0 * PI * (w.dir.dot(m) / w.period + w.phase)).sin())
                .sum();
            (0.5 + v) as f32
        })
    }

    /// Surface point seen through `pixel` of frame `k`, as z-depth.
    pub fn depth_at(&self, k: usize, pixel: [f64; 2]) -> Option<f64> {
        let intr = self.rig.intrinsics();
        let p = &self.poses[k];
        self.intersect(p.translation, p.rotation * intr.bearing(pixel), k as f64)
    }

    /// Analytic flow from frame `k` to frame `adj` at `pixel`. `None` when
    /// the pixel misses the surface or the point is hidden in frame `adj`.
    pub fn flow_at(&self, k: usize, adj: usize, pixel: [f64; 2]) -> Option<[f64; 2]> {
        let intr = self.rig.intrinsics();
        let pk = &self.poses[k];
        let (s, part) = self.hit(pk.translation, pk.rotation * intr.bearing(pixel), k as f64)?;
        if self.poses[adj] == *pk && self.normal_offset(adj as f64) == self.normal_offset(k as f64) {
            return Some([0.0, 0.0]);
        }
        let x = pk.translation + pk.rotation * intr.bearing(pixel) * s;
        let (m, n) = self.material(x, k as f64, part);
        let x2 = self.advect(m, n, adj as f64);
        let pa = &self.poses[adj];
        let y = pa.inverse().transform_point(x2);
        if y.z <= 1e-9 {
            return None;
        }
        let b = y * (1.0 / y.z);
        let s2 = self.intersect(pa.translation, pa.rotation * b, adj as f64)?;
        if (s2 - y.z).abs() > 1e-6 * y.z {
            return None;
        }
        Some([intr.fx * b.x + intr.cx - pixel[0], intr.fy * b.y + intr.cy - pixel[1]])
    }

    fn frame(&self, k: usize) -> FrameRecord {
        let intr = self.rig.intrinsics();
        let n = intr.pixel_count();
        let last = self.rig.frames - 1;
        let mut rgb = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        let mut fwd = (k < last).then(|| Vec::with_capacity(n));
        let mut bwd = (k > 0).then(|| Vec::with_capacity(n));
        let pose = &self.poses[k];
        for v in 0..intr.height {
            for u in 0..intr.width {
                let px = [u as f64, v as f64];
                match self.hit(pose.translation, pose.rotation * intr.bearing(px), k as f64) {
                    Some((s, part)) => {
                        let x = pose.translation + pose.rotation * intr.bearing(px) * s;
                        rgb.push(self.color(self.material(x, k as f64, part).0, part));
                        depth.push(s as f32);
                    }
                    None => {
                        rgb.push([0.0; 3]);
                        depth.push(0.0);
                    }
                }
                let f = |adj: usize| match self.flow_at(k, adj, px) {
                    Some(f) => [f[0] as f32, f[1] as f32],
                    None => [FLO_UNKNOWN; 2],
                };
                if let Some(v) = fwd.as_mut() {
                    v.push(f(k + 1));
                }
                if let Some(v) = bwd.as_mut() {
                    v.push(f(k - 1));
                }
            }
        }
        for p in &mut rgb {
            for c in p.iter_mut() {
                *c = (c.clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
        FrameRecord {
            rgb,
            depth,
            flow_fwd: fwd,
            flow_bwd: bwd,
        }
    }

    pub fn to_dataset(&self) -> Dataset {
        let frames = (0..self.rig.frames).into_par_iter().map(|k| self.frame(k)).collect();
        Dataset {
            intrinsics: self.rig.intrinsics(),
            frames,
            gt_trajectory: Some(self.poses.clone()),
            meta: DatasetMeta {
                unit: self.rig.unit.clone(),
                near: None,
                far: None,
            },
        }
    }
}

/// Renders a synthetic dataset. Identical inputs give identical bits.
pub fn generate_synthetic(rig: &SyntheticRig, seed: u64) -> Result<Dataset> {
    Ok(SyntheticScene::new(rig, seed)?.to_dataset())
}

/// Total length of a piecewise-linear path through the camera centers.
pub fn path_length(poses: &[Pose<f64>]) -> f64 {
    poses
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).norm())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_dataset, write_dataset};
    use crate::geometry::unproject;
    use crate::losses::induced_flow;
    use crate::geometry::cast_ray;

    fn small(frames: usize) -> SyntheticRig {
        SyntheticRig {
            frames,
            width: 24,
            height: 20,
            focal: 22.0,
            ..SyntheticRig::default()
        }
    }

    #[test]
    fn first_pose_is_identity() {
        let s = SyntheticScene::new(&small(6), 1).unwrap();
        assert_eq!(s.poses[0], Pose::identity());
        for p in &s.poses {
            let r = p.rotation;
            assert!((r.transpose() * r).max_abs_diff(&Mat3::identity()) < 1e-12);
        }
    }

    #[test]
    fn catmull_rom_interpolates_control_points() {
        let pts = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0), Vec3::new(0.0, 3.0, 1.0)];
        for (i, p) in pts.iter().enumerate() {
            let q = catmull_rom(&pts, i as f64 / 3.0);
            assert!((q - *p).norm() < 1e-12);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate_synthetic(&small(5), 3).unwrap();
        let b = generate_synthetic(&small(5), 3).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(5), 4).unwrap();
        assert_ne!(a.frames[0].rgb, c.frames[0].rgb);
    }

    #[test]
    fn static_rigid_scene_has_zero_flow() {
        let rig = SyntheticRig {
            trajectory: TrajectorySpec::Static,
            ..small(5)
        };
        let ds = generate_synthetic(&rig, 1).unwrap();
        for f in &ds.frames {
            for flow in [&f.flow_fwd, &f.flow_bwd].into_iter().flatten() {
                assert!(flow.iter().all(|v| *v == [0.0, 0.0]));
            }
        }
    }

    #[test]
    fn lateral_translation_parallax() {
        let t = 0.04;
        let rig = SyntheticRig {
            trajectory: TrajectorySpec::Line { end: [t * 4.0, 0.0, 0.0] },
            look_at: Some([0.0, 0.0, 1e9]),
            ..small(5)
        };
        let s = SyntheticScene::new(&rig, 1).unwrap();
        // the spline through two points is linear, so each step moves by t
        assert!((s.poses[1].translation.x - t).abs() < 1e-12);
        let intr = rig.intrinsics();
        let c = [intr.cx, intr.cy];
        let d = s.depth_at(0, c).unwrap();
        let f = s.flow_at(0, 1, c).unwrap();
        assert!((f[0] + intr.fx * t / d).abs() < 1e-6, "{f:?}");
        assert!(f[1].abs() < 1e-6);
    }

    fn march(s: &SyntheticScene, origin: Vec3<f64>, dir: Vec3<f64>, t: f64) -> Option<f64> {
        let off = s.normal_offset(t);
        let front = march_sdf(origin, dir, |x| match s.rig.surface {
            Surface::Plane { depth } => x.z - (depth - off),
            Surface::Sphere { center, radius } => (x - Vec3::from_array(center)).norm() - (radius + off),
        });
        let back = s.rig.backdrop.and_then(|b| march_sdf(origin, dir, |x| x.z - (b - off)));
        match (front, back) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn march_sdf(origin: Vec3<f64>, dir: Vec3<f64>, f: impl Fn(Vec3<f64>) -> f64) -> Option<f64> {
        let sign0 = f(origin).signum();
        let step = 1e-3;
        let mut a = 0.0;
        for i in 1..20000 {
            let b = i as f64 * step;
            if f(origin + dir * b).signum() != sign0 {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..80 {
                    let m = 0.5 * (lo + hi);
                    if f(origin + dir * m).signum() == sign0 {
                        lo = m;
                    } else {
                        hi = m;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            a = b;
        }
        None
    }

    #[test]
    fn depth_matches_ray_marching() {
        let sphere = Surface::Sphere {
            center: [0.0, 0.0, 3.0],
            radius: 1.2,
        };
        for (surface, backdrop) in [
            (Surface::Plane { depth: 2.5 }, None),
            (sphere.clone(), None),
            (sphere, Some(4.6)),
        ] {
            let rig = SyntheticRig {
                surface,
                backdrop,
                deformation: Deformation {
                    amplitude: 0.1,
                    frequency: 0.1,
                    phase: 0.2,
                },
                ..small(6)
            };
            let s = SyntheticScene::new(&rig, 2).unwrap();
            let intr = rig.intrinsics();
            for k in [0, 3, 5] {
                for (u, v) in [(0.0, 0.0), (11.5, 9.5), (23.0, 4.0), (7.0, 19.0)] {
                    let p = &s.poses[k];
                    let dir = p.rotation * intr.bearing([u, v]);
                    let a = s.intersect(p.translation, dir, k as f64);
                    let b = march(&s, p.translation, dir, k as f64);
                    match (a, b) {
                        (Some(a), Some(b)) => assert!((a - b).abs() < 1e-6, "{a} vs {b}"),
                        (None, None) => {}
                        other => panic!("hit mismatch {other:?}"),
                    }
                }
            }
        }
    }

    #[test]
    fn rigid_flow_equals_induced_flow() {
        let ds = generate_synthetic(&small(6), 5).unwrap();
        let intr = ds.intrinsics;
        let poses = ds.gt_trajectory.as_ref().unwrap();
        let mut max_err = 0.0f64;
        for k in 0..5 {
            let f = &ds.frames[k];
            for i in 0..ds.pixel_count() {
                let px = [(i % intr.width) as f64, (i / intr.width) as f64];
                let g = f.flow_fwd.as_ref().unwrap()[i];
                if !crate::data::flow_valid(g) {
                    continue;
                }
                let ray = cast_ray(px, &poses[k], &intr, k).unwrap();
                let dist = ds.depth_to_distance(i, f.depth[i] as f64);
                let pred = induced_flow(&ray, dist, &poses[k], &poses[k + 1], &intr).unwrap();
                max_err = max_err.max((pred.flow[0] - g[0] as f64).abs()).max((pred.flow[1] - g[1] as f64).abs());
            }
        }
        assert!(max_err < 1e-4, "{max_err}");
    }

    #[test]
    fn deformation_moves_points_along_normal() {
        let rig = SyntheticRig {
            trajectory: TrajectorySpec::Static,
            deformation: Deformation {
                amplitude: 0.2,
                frequency: 0.25,
                phase: 0.0,
            },
            ..small(5)
        };
        let s = SyntheticScene::new(&rig, 1).unwrap();
        let intr = rig.intrinsics();
        // on the principal ray the plane point moves along the optical axis
        let c = [intr.cx, intr.cy];
        let f = s.flow_at(0, 1, c).unwrap();
        assert!(f[0].abs() < 1e-9 && f[1].abs() < 1e-9);
        let z0 = s.depth_at(0, c).unwrap();
        let z1 = s.depth_at(1, c).unwrap();
        assert!((z0 - z1 - 0.2).abs() < 1e-12);
        // off-axis points show radial flow toward the principal point when moving away
        let p = [2.0, 2.0];
        let x = unproject(p, s.depth_at(0, p).unwrap(), &intr).unwrap();
        let f = s.flow_at(0, 1, p).unwrap();
        let x1 = x - Vec3::new(0.0, 0.0, 0.2);
        let q = [intr.fx * x1.x / x1.z + intr.cx, intr.fy * x1.y / x1.z + intr.cy];
        assert!((f[0] - (q[0] - p[0])).abs() < 1e-9 && (f[1] - (q[1] - p[1])).abs() < 1e-9);
    }

    #[test]
    fn backdrop_fills_misses_and_occludes() {
        let sphere = Surface::Sphere {
            center: [0.0, 0.0, 3.0],
            radius: 0.5,
        };
        let open = SyntheticRig {
            surface: sphere.clone(),
            trajectory: TrajectorySpec::Line { end: [0.4, 0.0, 0.0] },
            look_at: Some([0.0, 0.0, 1e9]),
            ..small(5)
        };
        let walled = SyntheticRig {
            backdrop: Some(5.0),
            ..open.clone()
        };
        let a = generate_synthetic(&open, 1).unwrap();
        let b = generate_synthetic(&walled, 1).unwrap();
        assert!(a.frames[0].depth.iter().any(|&d| d == 0.0));
        assert!(b.frames[0].depth.iter().all(|&d| d > 0.0));
        // pixels on the sphere keep depth, color and flow
        for (i, (&da, &db)) in a.frames[0].depth.iter().zip(&b.frames[0].depth).enumerate() {
            if da > 0.0 {
                assert_eq!(da, db);
                assert_eq!(a.frames[0].rgb[i], b.frames[0].rgb[i]);
            }
        }
        // the moving sphere hides some wall pixels in the next frame
        let fwd = b.frames[0].flow_fwd.as_ref().unwrap();
        assert!(fwd.iter().any(|f| !crate::data::flow_valid(*f)));
        let s = SyntheticScene::new(&walled, 1).unwrap();
        let c = [walled.intrinsics().cx, walled.intrinsics().cy];
        assert!(s.depth_at(0, c).unwrap() < 3.0);
        assert!(matches!(
            generate_synthetic(&SyntheticRig { backdrop: Some(3.2), ..open }, 1),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn camera_inside_sphere_is_rejected() {
        let rig = SyntheticRig {
            surface: Surface::Sphere {
                center: [0.0, 0.0, 0.5],
                radius: 1.0,
            },
            ..small(5)
        };
        assert!(matches!(generate_synthetic(&rig, 1), Err(Error::Generation(_))));
        assert!(matches!(generate_synthetic(&small(3), 1), Err(Error::SequenceTooShort { .. })));
    }

    #[test]
    fn disk_roundtrip_is_exact() {
        let ds = generate_synthetic(&small(5), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.frames, ds.frames);
        assert_eq!(back.intrinsics, ds.intrinsics);
        let (a, b) = (ds.gt_trajectory.unwrap(), back.gt_trajectory.unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!(p.rotation.max_abs_diff(&q.rotation) < 1e-12);
            assert!((p.translation - q.translation).norm() < 1e-12);
        }
    }
}
