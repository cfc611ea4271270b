//! Plain-text trajectories: `index tx ty tz qx qy qz qw` per line.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::linalg::{Mat3, Vec3};
use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Unit quaternion `(x, y, z, w)` with `w ≥ 0`.
pub fn rotation_to_quaternion(r: &Mat3<f64>) -> [f64; 4] {
    let m = Matrix3::from_fn(|i, j| r.m[i][j]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    let mut c = [q.i, q.j, q.k, q.w];
    if c[3] < 0.0 {
        c.iter_mut().for_each(|v| *v = -*v);
    }
    c
}

/// Rotation of a quaternion `(x, y, z, w)`, normalized first.
pub fn quaternion_to_rotation(q: [f64; 4]) -> Mat3<f64> {
    let u = UnitQuaternion::from_quaternion(Quaternion::new(q[3], q[0], q[1], q[2]));
    let m = u.to_rotation_matrix().into_inner();
    Mat3::from_rows(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])))
}

pub fn format_trajectory(poses: &[Pose<f64>]) -> String {
    let mut s = String::new();
    for (i, p) in poses.iter().enumerate() {
        let q = rotation_to_quaternion(&p.rotation);
        let t = p.translation;
        // adding zero turns -0 into 0
        let v = [t.x, t.y, t.z, q[0], q[1], q[2], q[3]].map(|x| x + 0.0);
        let _ = writeln!(s, "{i} {} {} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
    }
    s
}

pub fn write_trajectory(poses: &[Pose<f64>], path: &Path) -> Result<()> {
    fs::write(path, format_trajectory(poses))?;
    Ok(())
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<Pose<f64>>> {
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", tok.len())));
        }
        let idx: usize = tok[0].parse().map_err(|e| err(format!("frame index {}: {e}", tok[0])))?;
        if idx != poses.len() {
            return Err(err(format!("expected frame {}, found {idx}", poses.len())));
        }
        let mut v = [0.0f64; 7];
        for (o, t) in v.iter_mut().zip(&tok[1..]) {
            *o = t.parse().map_err(|e| err(format!("{t}: {e}")))?;
            if !o.is_finite() {
                return Err(err(format!("non-finite value {t}")));
            }
        }
        let q = [v[3], v[4], v[5], v[6]];
        let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(err("zero quaternion".into()));
        }
        if (norm - 1.0).abs() > 1e-9 {
            log::warn!("{}:{}: quaternion norm {norm}, normalizing", path.display(), n + 1);
        }
        poses.push(Pose::new(quaternion_to_rotation(q), Vec3::new(v[0], v[1], v[2])));
    }
    Ok(poses)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<Pose<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    parse_trajectory(&text, path)
}
