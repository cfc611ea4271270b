//! Random training rays with their supervision.

use super::config::is_held_out;
use crate::data::{flow_valid, Dataset};
use crate::error::{Error, Result};
use crate::losses::SupervisionBatch;
use crate::optimizer::RayBatch;
use crate::scalar::Real;
use rand::Rng;

/// Draws pixels uniformly from a set of frames. Held-out frames keep their
/// flow targets but lose color and depth.
pub struct RaySampler<'a> {
    ds: &'a Dataset,
    /// Length of the bearing through each pixel, converting z-depth to
    /// ray distance.
    bearing_norm: Vec<f64>,
    eval_stride: usize,
    n_samples: usize,
}

impl<'a> RaySampler<'a> {
    pub fn new(ds: &'a Dataset, eval_stride: usize, n_samples: usize) -> Self {
        let bearing_norm = (0..ds.pixel_count()).map(|i| ds.depth_to_distance(i, 1.0)).collect();
        Self {
            ds,
            bearing_norm,
            eval_stride,
            n_samples,
        }
    }

    /// `n` rays with frames drawn uniformly from `frames`.
    pub fn sample<T: Real, R: Rng>(&self, frames: &[usize], n: usize, rng: &mut R) -> Result<RayBatch<T>> {
        if frames.is_empty() {
            return Err(Error::Internal("ray sampler got no frames".into()));
        }
        if let Some(&k) = frames.iter().find(|&&k| k >= self.ds.len()) {
            return Err(Error::Internal(format!("frame {k} is not in the dataset")));
        }
        let (w, h) = (self.ds.intrinsics.width, self.ds.intrinsics.height);
        let mut b = RayBatch {
            n_samples: self.n_samples,
            ..Default::default()
        };
        let t: &mut SupervisionBatch<T> = &mut b.target;
        for _ in 0..n {
            let k = frames[rng.gen_range(0..frames.len())];
            let (u, v) = (rng.gen_range(0..w), rng.gen_range(0..h));
            let i = v * w + u;
            let f = &self.ds.frames[k];
            let train = !is_held_out(k, self.eval_stride);
            b.frames.push(k);
            b.pixels.push([T::from_usize_lossy(u), T::from_usize_lossy(v)]);
            b.offsets.extend((0..self.n_samples).map(|_| T::lit(rng.gen::<f64>())));
            t.color.push(f.rgb[i].map(|c| T::lit(c as f64)));
            t.color_mask.push(train);
            let z = f.depth[i] as f64;
            t.depth.push(T::lit(z * self.bearing_norm[i]));
            t.depth_mask.push(train && f.depth_valid(i));
            for (flow, out, mask) in [
                (&f.flow_fwd, &mut t.flow_fwd, &mut t.flow_fwd_mask),
                (&f.flow_bwd, &mut t.flow_bwd, &mut t.flow_bwd_mask),
            ] {
                match flow.as_ref().map(|fl| fl[i]).filter(|&fv| flow_valid(fv)) {
                    Some(fv) => {
                        out.push(fv.map(|x| T::lit(x as f64)));
                        mask.push(true);
                    }
                    None => {
                        out.push([T::zero(); 2]);
                        mask.push(false);
                    }
                }
            }
        }
        Ok(b)
    }
}

/// Ray distance bounds from the 1st and 99th percentile of the dataset's
/// valid depths, widened by 20% each way.
pub fn depth_bounds(ds: &Dataset) -> Option<(f64, f64)> {
    const MAX_VALUES: usize = 1 << 20;
    let n = ds.pixel_count();
    let total = n * ds.len();
    let stride = total.div_ceil(MAX_VALUES).max(1);
    let norms: Vec<f64> = (0..n).map(|i| ds.depth_to_distance(i, 1.0)).collect();
    let mut d: Vec<f64> = (0..total)
        .step_by(stride)
        .filter_map(|j| {
            let (k, i) = (j / n, j % n);
            let z = ds.frames[k].depth[i];
            (z > 0.0).then(|| z as f64 * norms[i])
        })
        .collect();
    if d.is_empty() {
        return None;
    }
    let pick = |d: &mut Vec<f64>, q: f64| {
        let idx = ((d.len() - 1) as f64 * q).round() as usize;
        *d.select_nth_unstable_by(idx, |a, b| a.total_cmp(b)).1
    };
    let lo = pick(&mut d, 0.01);
    let hi = pick(&mut d, 0.99);
    Some((0.8 * lo, 1.2 * hi))
}
