//! Image and trajectory quality metrics, computed in f64.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::linalg::{Mat3, Vec3};
use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::Path;

/// Returned for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for values in `[0, 1]`.
pub fn psnr(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    same_len(pred.len(), gt.len(), "image sizes")?;
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("empty image".into()));
    }
    let mut se = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for c in 0..3 {
            se += (p[c] - g[c]) * (p[c] - g[c]);
        }
    }
    let mse = se / (3 * pred.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

/// SSIM of one window position for single-channel images.
fn ssim_at(x: &[f64], y: &[f64], width: usize, u0: usize, v0: usize, w: &[f64]) -> f64 {
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for dv in 0..SSIM_WINDOW {
        for du in 0..SSIM_WINDOW {
            let k = w[dv * SSIM_WINDOW + du];
            let i = (v0 + dv) * width + u0 + du;
            mx += k * x[i];
            my += k * y[i];
            sxx += k * x[i] * x[i];
            syy += k * y[i] * y[i];
            sxy += k * x[i] * y[i];
        }
    }
    let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
    ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2))
}

/// Mean SSIM over every fully contained 11×11 Gaussian window and over
/// the three channels.
pub fn ssim(pred: &[[f64; 3]], gt: &[[f64; 3]], width: usize, height: usize) -> Result<f64> {
    same_len(pred.len(), gt.len(), "image sizes")?;
    same_len(pred.len(), width * height, "image size vs dimensions")?;
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "{width}x{height} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let w = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let x: Vec<f64> = pred.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = gt.iter().map(|p| p[c]).collect();
        for v0 in 0..=height - SSIM_WINDOW {
            for u0 in 0..=width - SSIM_WINDOW {
                total += ssim_at(&x, &y, width, u0, v0, &w);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Mean absolute difference over valid pixels.
pub fn depth_l1(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<f64> {
    same_len(pred.len(), gt.len(), "depth sizes")?;
    same_len(pred.len(), mask.len(), "depth mask")?;
    let (mut s, mut n) = (0.0, 0usize);
    for i in (0..pred.len()).filter(|&i| mask[i]) {
        s += (pred[i] - gt[i]).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedLoss("depth L1"));
    }
    Ok(s / n as f64)
}

/// `x ↦ scale·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, p: Vec3<f64>) -> Vec3<f64> {
        (self.rotation * p) * self.scale + self.translation
    }

    /// Applies the transform to a camera pose.
    pub fn apply_pose(&self, p: &Pose<f64>) -> Pose<f64> {
        Pose::new(self.rotation * p.rotation, self.apply(p.translation))
    }
}

fn to_na(v: Vec3<f64>) -> Vector3<f64> {
    Vector3::new(v.x, v.y, v.z)
}

/// Least-squares transform taking the `est` positions onto `gt`.
pub fn align_umeyama(est: &[Vec3<f64>], gt: &[Vec3<f64>], with_scale: bool) -> Result<Similarity> {
    same_len(est.len(), gt.len(), "trajectory lengths")?;
    let n = est.len();
    if n < 3 {
        return Err(Error::Alignment(format!("need at least 3 positions, got {n}")));
    }
    let nf = n as f64;
    let me = est.iter().fold(Vector3::zeros(), |a, p| a + to_na(*p)) / nf;
    let mg = gt.iter().fold(Vector3::zeros(), |a, p| a + to_na(*p)) / nf;
    let mut cov = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let (de, dg) = (to_na(*e) - me, to_na(*g) - mg);
        cov += dg * de.transpose();
        var_e += de.norm_squared();
    }
    cov /= nf;
    var_e /= nf;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(sv[0] > 0.0) || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::Alignment("positions are collinear or coincident".into()));
    }
    let mut s = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    let scale = if with_scale {
        let d = svd.singular_values;
        // trace(D·S)
        let tr = d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)];
        tr / var_e
    } else {
        1.0
    };
    let t = mg - r * me * scale;
    Ok(Similarity {
        rotation: Mat3::from_rows(std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)]))),
        translation: Vec3::new(t[0], t[1], t[2]),
        scale,
    })
}

fn positions(p: &[Pose<f64>]) -> Vec<Vec3<f64>> {
    p.iter().map(|p| p.translation).collect()
}

/// RMS position error after rigid alignment. Collinear trajectories fall
/// back to aligning centroids only.
pub fn ate_rmse(est: &[Pose<f64>], gt: &[Pose<f64>]) -> Result<f64> {
    ate_rmse_with(est, gt, false)
}

pub fn ate_rmse_with(est: &[Pose<f64>], gt: &[Pose<f64>], with_scale: bool) -> Result<f64> {
    same_len(est.len(), gt.len(), "trajectory lengths")?;
    if est.is_empty() {
        return Err(Error::ShapeMismatch("empty trajectory".into()));
    }
    let (pe, pg) = (positions(est), positions(gt));
    let sim = match align_umeyama(&pe, &pg, with_scale) {
        Ok(s) => s,
        Err(Error::Alignment(msg)) => {
            log::warn!("rigid alignment unavailable ({msg}); aligning centroids only");
            let n = pe.len() as f64;
            let c = |v: &[Vec3<f64>]| v.iter().fold(Vec3::zeros(), |a, p| a + *p) * (1.0 / n);
            Similarity {
                rotation: Mat3::identity(),
                translation: c(&pg) - c(&pe),
                scale: 1.0,
            }
        }
        Err(e) => return Err(e),
    };
    let se: f64 = pe
        .iter()
        .zip(&pg)
        .map(|(e, g)| {
            let d = sim.apply(*e) - *g;
            d.dot(d)
        })
        .sum();
    Ok((se / pe.len() as f64).sqrt())
}

/// Mean translational (scene units) and rotational (degrees) relative pose
/// error over frame gaps of `delta`.
pub fn rpe(est: &[Pose<f64>], gt: &[Pose<f64>], delta: usize) -> Result<(f64, f64)> {
    same_len(est.len(), gt.len(), "trajectory lengths")?;
    if delta == 0 {
        return Err(Error::Domain("RPE gap must be at least 1".into()));
    }
    if est.len() <= delta {
        return Ok((0.0, 0.0));
    }
    let (mut t, mut r) = (0.0, 0.0);
    let n = est.len() - delta;
    for i in 0..n {
        let dg = gt[i].inverse().compose(&gt[i + delta]);
        let de = est[i].inverse().compose(&est[i + delta]);
        let e = dg.inverse().compose(&de);
        t += e.translation.norm();
        r += e.angle().to_degrees();
    }
    Ok((t / n as f64, r / n as f64))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_l1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_depth_l1: f64,
    pub ate_rmse: Option<f64>,
    pub rpe_trans: Option<f64>,
    /// Degrees.
    pub rpe_rot: Option<f64>,
}

impl EvalReport {
    pub fn new(frames: Vec<FrameMetrics>) -> Self {
        let n = frames.len().max(1) as f64;
        let mean = |f: fn(&FrameMetrics) -> f64| frames.iter().map(f).sum::<f64>() / n;
        Self {
            mean_psnr: mean(|m| m.psnr),
            mean_ssim: mean(|m| m.ssim),
            mean_depth_l1: mean(|m| m.depth_l1),
            frames,
            ..Default::default()
        }
    }

    pub fn with_trajectory(mut self, est: &[Pose<f64>], gt: &[Pose<f64>]) -> Result<Self> {
        self.ate_rmse = Some(ate_rmse(est, gt)?);
        let (t, r) = rpe(est, gt, 1)?;
        self.rpe_trans = Some(t);
        self.rpe_rot = Some(r);
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("frame,psnr,ssim,depth_l1,ate_rmse,rpe_trans,rpe_rot\n");
        for f in &self.frames {
            let _ = writeln!(s, "{},{},{},{},,,", f.frame, f.psnr, f.ssim, f.depth_l1);
        }
        let _ = writeln!(
            s,
            "mean,{},{},{},{},{},{}",
            self.mean_psnr,
            self.mean_ssim,
            self.mean_depth_l1,
            opt(self.ate_rmse),
            opt(self.rpe_trans),
            opt(self.rpe_rot)
        );
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames evaluated: {}", self.frames.len());
        let _ = writeln!(s, "PSNR (dB):        {:.3}", self.mean_psnr);
        let _ = writeln!(s, "SSIM:             {:.4}", self.mean_ssim);
        let _ = writeln!(s, "depth L1:         {:.5}", self.mean_depth_l1);
        if let (Some(a), Some(t), Some(r)) = (self.ate_rmse, self.rpe_trans, self.rpe_rot) {
            let _ = writeln!(s, "ATE-RMSE:         {a:.6}");
            let _ = writeln!(s, "RPE-Trans:        {t:.6}");
            let _ = writeln!(s, "RPE-Rot (deg):    {r:.6}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("eval.csv"), self.to_csv())?;
        std::fs::write(dir.join("eval.txt"), self.summary())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::se3_exp;
    use nalgebra::{Matrix4, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(w: usize, h: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> Vec<[f64; 3]> {
        (0..h).flat_map(|v| (0..w).map(move |u| (u, v))).map(|(u, v)| f(u, v)).collect()
    }

    #[test]
    fn psnr_examples() {
        let a = img(4, 4, |u, v| [u as f64 / 4.0, v as f64 / 4.0, 0.5]);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b: Vec<_> = a.iter().map(|p| [p[0] + 0.1, p[1] - 0.1, p[2] + 0.1]).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!((psnr(&vec![[0.0; 3]; 9], &vec![[1.0; 3]; 9]).unwrap()).abs() < 1e-12);
        assert!(psnr(&a, &a[..3]).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = img(16, 14, |u, v| {
            let s = ((u * 7 + v * 3) % 11) as f64 / 10.0;
            [s, 1.0 - s, (s * 0.5 + 0.2)]
        });
        assert!((ssim(&a, &a, 16, 14).unwrap() - 1.0).abs() < 1e-12);
        // constants: luminance term only
        let (x, y) = (0.3, 0.7);
        let want = (2.0 * x * y + C1) / (x * x + y * y + C1);
        let got = ssim(&vec![[x; 3]; 144], &vec![[y; 3]; 144], 12, 12).unwrap();
        assert!((got - want).abs() < 1e-9);
        assert!(ssim(&a[..100], &a[..100], 10, 10).is_err());
    }

    #[test]
    fn ssim_of_inverted_binary_image() {
        let (w, h) = (13, 12);
        let gt = img(w, h, |u, v| if (u / 2 + v / 3) % 2 == 0 { [1.0; 3] } else { [0.0; 3] });
        let pred: Vec<_> = gt.iter().map(|p| [1.0 - p[0], 1.0 - p[1], 1.0 - p[2]]).collect();
        // direct windowed oracle with explicit Gaussian weights
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let gs: f64 = g.iter().sum();
        let mut total = 0.0;
        let mut n = 0;
        for v0 in 0..=h - 11 {
            for u0 in 0..=w - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for a in 0..11 {
                    for b in 0..11 {
                        let k = g[a] * g[b] / (gs * gs);
                        let i = (v0 + a) * w + u0 + b;
                        let (x, y) = (pred[i][0], gt[i][0]);
                        mx += k * x;
                        my += k * y;
                        xx += k * x * x;
                        yy += k * y * y;
                        xy += k * x * y;
                    }
                }
                let (vx, vy, c) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += (2.0 * mx * my + C1) * (2.0 * c + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2));
                n += 1;
            }
        }
        let want = total / n as f64;
        let got = ssim(&pred, &gt, w, h).unwrap();
        assert!(want < -0.5, "{want}");
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn depth_l1_examples() {
        let gt = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(depth_l1(&gt, &gt, &[true; 4]).unwrap(), 0.0);
        let p: Vec<f64> = gt.iter().map(|v| v + 1.5).collect();
        assert!((depth_l1(&p, &gt, &[true; 4]).unwrap() - 1.5).abs() < 1e-12);
        let p = vec![3.0, 9.0, 5.0, -7.0];
        assert!((depth_l1(&p, &gt, &[true, false, true, false]).unwrap() - 2.0).abs() < 1e-12);
        assert!(depth_l1(&p, &gt, &[false; 4]).is_err());
    }

    fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3<f64>> {
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
            .collect()
    }

    #[test]
    fn umeyama_recovers_rigid_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let gt = random_points(10, &mut rng);
            let t = se3_exp(&std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
            let est: Vec<_> = gt.iter().map(|p| t.transform_point(*p)).collect();
            let sim = align_umeyama(&est, &gt, false).unwrap();
            let inv = t.inverse();
            assert!(sim.rotation.max_abs_diff(&inv.rotation) < 1e-9);
            assert!((sim.translation - inv.translation).norm() < 1e-9);
            assert_eq!(sim.scale, 1.0);
        }
        let gt = random_points(6, &mut rng);
        let sim = align_umeyama(&gt, &gt, false).unwrap();
        assert!(sim.rotation.max_abs_diff(&Mat3::identity()) < 1e-12 && sim.translation.norm() < 1e-12);
        let est: Vec<_> = gt.iter().map(|p| *p * 2.0).collect();
        let sim = align_umeyama(&est, &gt, true).unwrap();
        assert!((sim.scale - 0.5).abs() < 1e-12);
    }

    #[test]
    fn umeyama_rejects_degenerate_input() {
        let line: Vec<_> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(align_umeyama(&line, &line, false), Err(Error::Alignment(_))));
        assert!(matches!(align_umeyama(&line[..2], &line[..2], false), Err(Error::Alignment(_))));
    }

    /// Horn's closed-form absolute orientation via the quaternion
    /// eigenproblem, independent of the SVD route.
    fn horn(est: &[Vec3<f64>], gt: &[Vec3<f64>]) -> (Mat3<f64>, Vec3<f64>) {
        let n = est.len() as f64;
        let ce = est.iter().fold(Vec3::zeros(), |a, p| a + *p) * (1.0 / n);
        let cg = gt.iter().fold(Vec3::zeros(), |a, p| a + *p) * (1.0 / n);
        let mut s = [[0.0; 3]; 3];
        for (e, g) in est.iter().zip(gt) {
            let (a, b) = ((*e - ce).to_array(), (*g - cg).to_array());
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] += a[i] * b[j];
                }
            }
        }
        let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
        let k = Matrix4::new(
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        );
        let eig = SymmetricEigen::new(k);
        let i = eig.eigenvalues.imax();
        let q = eig.eigenvectors.column(i);
        let r = crate::data::trajectory::quaternion_to_rotation([q[1], q[2], q[3], q[0]]);
        (r, cg - r * ce)
    }

    #[test]
    fn ate_of_single_displaced_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let gt: Vec<Pose<f64>> = (0..n).map(|_| se3_exp(&std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))).collect();
        let mut est = gt.clone();
        est[5].translation = est[5].translation + Vec3::new(3.0, 0.0, 0.0);
        let (pe, pg) = (positions(&est), positions(&gt));
        let (r, t) = horn(&pe, &pg);
        let want = (pe.iter().zip(&pg).map(|(e, g)| {
            let d = r * *e + t - *g;
            d.dot(d)
        }).sum::<f64>() / n as f64).sqrt();
        let got = ate_rmse(&est, &gt).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!(got < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn trajectory_metrics_are_gauge_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt: Vec<Pose<f64>> = (0..15).map(|_| se3_exp(&std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))).collect();
        assert!(ate_rmse(&gt, &gt).unwrap() < 1e-12);
        assert_eq!(rpe(&gt, &gt, 1).unwrap(), (0.0, 0.0));
        let g = se3_exp(&[0.3, -1.0, 0.5, 4.0, -2.0, 1.0]);
        let moved: Vec<_> = gt.iter().map(|p| g.compose(p)).collect();
        assert!(ate_rmse(&moved, &gt).unwrap() < 1e-9);
        let (t, r) = rpe(&moved, &gt, 1).unwrap();
        assert!(t < 1e-9 && r < 1e-6);
    }

    #[test]
    fn report_files() {
        let r = EvalReport::new(vec![
            FrameMetrics { frame: 7, psnr: 30.0, ssim: 0.9, depth_l1: 0.01 },
            FrameMetrics { frame: 15, psnr: 32.0, ssim: 0.8, depth_l1: 0.03 },
        ]);
        assert!((r.mean_psnr - 31.0).abs() < 1e-12);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().starts_with("mean,31,"));
    }

    proptest! {
        #[test]
        fn psnr_decreases_with_noise(seed in 0u64..1000, a in 0.01f64..0.2, b in 0.01f64..0.2) {
            prop_assume!((a - b).abs() > 1e-3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt = img(8, 8, |u, v| [0.3 + 0.04 * u as f64, 0.3 + 0.04 * v as f64, 0.5]);
            let noise: Vec<[f64; 3]> = (0..64).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect();
            let add = |s: f64| gt.iter().zip(&noise).map(|(g, n)| [g[0] + s * n[0], g[1] + s * n[1], g[2] + s * n[2]]).collect::<Vec<_>>();
            let (pa, pb) = (psnr(&add(a), &gt).unwrap(), psnr(&add(b), &gt).unwrap());
            prop_assert_eq!(pa > pb, a < b);
        }

        #[test]
        fn ssim_of_self_is_one(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<[f64; 3]> = (0..144).map(|_| std::array::from_fn(|_| rng.gen::<f64>())).collect();
            prop_assert!((ssim(&x, &x, 12, 12).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rpe_invariant_to_separate_gauges(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gt: Vec<Pose<f64>> = (0..6).map(|_| se3_exp(&std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))).collect();
            let est: Vec<Pose<f64>> = gt.iter().map(|p| p.compose(&se3_exp(&std::array::from_fn(|_| rng.gen_range(-0.1..0.1))))).collect();
            let (t0, r0) = rpe(&est, &gt, 1).unwrap();
            let g1 = se3_exp(&std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
            let g2 = se3_exp(&std::array::from_fn(|_| rng.gen_range(-2.0..2.0)));
            let e2: Vec<_> = est.iter().map(|p| g1.compose(p)).collect();
            let gt2: Vec<_> = gt.iter().map(|p| g2.compose(p)).collect();
            let (t1, r1) = rpe(&e2, &gt2, 1).unwrap();
            prop_assert!((t0 - t1).abs() < 1e-9 && (r0 - r1).abs() < 1e-7);
        }
    }
}
