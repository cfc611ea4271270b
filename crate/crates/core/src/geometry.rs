//! Rigid poses, the pinhole camera and ray generation.
//!
//! A [`Pose`] maps camera coordinates to world coordinates. Tangent vectors
//! are ordered `(ω, v)`: rotation first, translation second. Optimizers apply
//! increments on the left, `exp(δ) · pose`.

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

const SMALL_ANGLE: f64 = 1e-8;

/// Rigid transform, world-from-camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Mat3::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self::new(Mat3::identity(), t)
    }

    #[inline]
    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn transform_vector(&self, v: Vec3<T>) -> Vec3<T> {
        self.rotation * v
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn position(&self) -> Vec3<T> {
        self.translation
    }

    pub fn exp(tangent: &[T; 6]) -> Self {
        se3_exp(tangent)
    }

    pub fn log(&self) -> [T; 6] {
        se3_log(self)
    }

    pub fn compose(&self, other: &Self) -> Self {
        pose_compose(self, other)
    }

    pub fn inverse(&self) -> Self {
        pose_inverse(self)
    }

    /// Homogeneous 4×4 matrix, row-major.
    pub fn to_matrix(&self) -> [[T; 4]; 4] {
        let r = &self.rotation.m;
        let t = self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [z, z, z, o],
        ]
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose::new(self.rotation.cast(), self.translation.cast())
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> T {
        // atan2 stays accurate near 0 and π, unlike acos of the trace
        let r = &self.rotation;
        let c = (r.trace() - T::one()) * T::lit(0.5);
        let r = &r.m;
        let s = Vec3::new(r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]).norm() * T::lit(0.5);
        s.atan2(c)
    }
}

fn so3_coefficients<T: Real>(theta: T) -> (T, T, T) {
    // a = sinθ/θ, b = (1−cosθ)/θ², c = (θ−sinθ)/θ³
    if theta < T::lit(SMALL_ANGLE) {
        let t2 = theta * theta;
        (
            T::one() - t2 / T::lit(6.0),
            T::lit(0.5) - t2 / T::lit(24.0),
            T::lit(1.0 / 6.0) - t2 / T::lit(120.0),
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (T::one() - c) / t2, (theta - s) / (t2 * theta))
    }
}

pub fn so3_exp<T: Real>(omega: Vec3<T>) -> Mat3<T> {
    let theta = omega.norm();
    let (a, b, _) = so3_coefficients(theta);
    let k = Mat3::skew(omega);
    Mat3::identity() + k.scale(a) + (k * k).scale(b)
}

pub fn so3_log<T: Real>(r: &Mat3<T>) -> Vec3<T> {
    let m = &r.m;
    let half = T::lit(0.5);
    let vee = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]) * half;
    let cos = ((r.trace() - T::one()) * half).max(-T::one()).min(T::one());
    let sin = vee.norm();
    let theta = sin.atan2(cos);
    if theta < T::lit(SMALL_ANGLE) {
        // sinθ ≈ θ
        return vee * (T::one() + theta * theta / T::lit(6.0));
    }
    if cos > T::lit(-0.9) {
        return vee * (theta / sin);
    }
    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part (1 − cosθ)·a·aᵀ.
    let one_minus_cos = T::one() - cos;
    let mut best = 0;
    for i in 1..3 {
        if m[i][i] > m[best][best] {
            best = i;
        }
    }
    let mut axis = [T::zero(); 3];
    for (i, a) in axis.iter_mut().enumerate() {
        let sym = (m[i][best] + m[best][i]) * half;
        let delta = if i == best { cos } else { T::zero() };
        *a = (sym - delta) / one_minus_cos;
    }
    let mut axis = Vec3::from_array(axis).normalize();
    if axis.dot(vee) < T::zero() {
        axis = -axis;
    }
    axis * theta
}

/// Exponential map of a tangent `(ω, v)`.
pub fn se3_exp<T: Real>(tangent: &[T; 6]) -> Pose<T> {
    let omega = Vec3::new(tangent[0], tangent[1], tangent[2]);
    let v = Vec3::new(tangent[3], tangent[4], tangent[5]);
    let theta = omega.norm();
    let (a, b, c) = so3_coefficients(theta);
    let k = Mat3::skew(omega);
    let k2 = k * k;
    let rotation = Mat3::identity() + k.scale(a) + k2.scale(b);
    let jac = Mat3::identity() + k.scale(b) + k2.scale(c);
    Pose::new(rotation, jac * v)
}

pub fn se3_log<T: Real>(pose: &Pose<T>) -> [T; 6] {
    let omega = so3_log(&pose.rotation);
    let theta = omega.norm();
    let k = Mat3::skew(omega);
    let coef = if theta < T::lit(1e-4) {
        T::lit(1.0 / 12.0) + theta * theta / T::lit(720.0)
    } else {
        let (s, c) = theta.sin_cos();
        (T::one() - theta * s / (T::lit(2.0) * (T::one() - c))) / (theta * theta)
    };
    let jac_inv = Mat3::identity() - k.scale(T::lit(0.5)) + (k * k).scale(coef);
    let v = jac_inv * pose.translation;
    [omega.x, omega.y, omega.z, v.x, v.y, v.z]
}

/// `a · b`: apply `b` first, then `a`.
pub fn pose_compose<T: Real>(a: &Pose<T>, b: &Pose<T>) -> Pose<T> {
    Pose::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
    )
}

pub fn pose_inverse<T: Real>(a: &Pose<T>) -> Pose<T> {
    let rt = a.rotation.transpose();
    Pose::new(rt, -(rt * a.translation))
}

/// Transform taking points in `from`'s camera frame to `to`'s camera frame,
/// `to⁻¹ · from`.
pub fn pose_relative<T: Real>(from: &Pose<T>, to: &Pose<T>) -> Pose<T> {
    pose_compose(&pose_inverse(to), from)
}

/// Pinhole intrinsics. Pixel `(u, v)` samples the continuous image location
/// `(u, v)`; there is no half-pixel offset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let w = T::from_usize_lossy(self.width);
        let h = T::from_usize_lossy(self.height);
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Domain("focal lengths must be positive".into()));
        }
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(Error::Domain(
                "principal point must lie inside the image".into(),
            ));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.as_f64()),
            fy: U::lit(self.fy.as_f64()),
            cx: U::lit(self.cx.as_f64()),
            cy: U::lit(self.cy.as_f64()),
            width: self.width,
            height: self.height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Whether a continuous pixel location lies inside `[0, w−1] × [0, h−1]`.
    pub fn contains(&self, pixel: [T; 2]) -> bool {
        let w = T::from_usize_lossy(self.width - 1);
        let h = T::from_usize_lossy(self.height - 1);
        pixel[0] >= T::zero() && pixel[0] <= w && pixel[1] >= T::zero() && pixel[1] <= h
    }

    /// Camera-frame direction with unit z through a pixel.
    #[inline]
    pub fn bearing(&self, pixel: [T; 2]) -> Vec3<T> {
        Vec3::new(
            (pixel[0] - self.cx) / self.fx,
            (pixel[1] - self.cy) / self.fy,
            T::one(),
        )
    }
}

/// Camera ray through a pixel of frame `frame_index`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
    pub pixel: [T; 2],
    pub frame_index: usize,
}

impl<T: Real> Ray<T> {
    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }
}

/// Back-projects a pixel at z-depth `depth` into the camera frame.
pub fn unproject<T: Real>(pixel: [T; 2], depth: T, intr: &Intrinsics<T>) -> Result<Vec3<T>> {
    if !(depth > T::zero()) {
        return Err(Error::Domain(format!(
            "depth must be positive, got {depth}"
        )));
    }
    Ok(intr.bearing(pixel) * depth)
}

/// Projects a camera-frame point to pixel coordinates. The result may fall
/// outside the image.
pub fn project<T: Real>(point: Vec3<T>, intr: &Intrinsics<T>) -> Result<[T; 2]> {
    if !(point.z > T::zero()) {
        return Err(Error::BehindCamera(point.z.as_f64()));
    }
    Ok([
        intr.fx * point.x / point.z + intr.cx,
        intr.fy * point.y / point.z + intr.cy,
    ])
}

pub fn cast_ray<T: Real>(
    pixel: [T; 2],
    pose: &Pose<T>,
    intr: &Intrinsics<T>,
    frame_index: usize,
) -> Result<Ray<T>> {
    if !intr.contains(pixel) {
        return Err(Error::Domain(format!(
            "pixel ({}, {}) outside {}x{} image",
            pixel[0], pixel[1], intr.width, intr.height
        )));
    }
    let dir_cam = intr.bearing(pixel).normalize();
    Ok(Ray {
        origin: pose.translation,
        direction: pose.rotation * dir_cam,
        pixel,
        frame_index,
    })
}
