//! Six-plane factorized 4D feature grid.
//!
//! Resolutions count cells; an axis with `n` cells carries `n + 1` nodes
//! spanning `[-1, 1]` end to end, so doubling the cell count nests the old
//! nodes inside the new grid.

use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;
use rand::Rng;

/// Axis pairs of the six planes, in storage order XY, XZ, YZ, XT, YT, ZT.
/// Axes 0..3 are x, y, z and axis 3 is time.
pub const PLANE_AXES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

pub const PLANE_NAMES: [&str; 6] = ["xy", "xz", "yz", "xt", "yt", "zt"];

/// Complementary plane pairs whose features are multiplied: XY·ZT, XZ·YT, YZ·XT.
pub const PLANE_PAIRS: [(usize, usize); 3] = [(0, 5), (1, 4), (2, 3)];

#[derive(Clone, Debug, PartialEq)]
pub struct Plane<T> {
    pub cells: [usize; 2],
    pub channels: usize,
    /// Node-major, channel-last: `data[(ia * (cells[1] + 1) + ib) * channels + c]`.
    pub data: Vec<T>,
}

impl<T: Real> Plane<T> {
    pub fn zeros(cells: [usize; 2], channels: usize) -> Self {
        let len = (cells[0] + 1) * (cells[1] + 1) * channels;
        Self {
            cells,
            channels,
            data: vec![T::zero(); len],
        }
    }

    #[inline]
    pub fn offset(&self, ia: usize, ib: usize) -> usize {
        (ia * (self.cells[1] + 1) + ib) * self.channels
    }

    #[inline]
    pub fn node(&self, ia: usize, ib: usize) -> &[T] {
        let o = self.offset(ia, ib);
        &self.data[o..o + self.channels]
    }

    /// Bilinear stencil at canonical coordinates `(ua, ub) ∈ [-1, 1]²`.
    #[inline]
    pub fn lookup(&self, ua: T, ub: T) -> PlaneLookup<T> {
        let (ia, fa) = cell_and_fraction(ua, self.cells[0]);
        let (ib, fb) = cell_and_fraction(ub, self.cells[1]);
        let stride = self.cells[1] + 1;
        let o00 = (ia * stride + ib) * self.channels;
        let o01 = o00 + self.channels;
        let o10 = o00 + stride * self.channels;
        let o11 = o10 + self.channels;
        let one = T::one();
        PlaneLookup {
            offsets: [o00, o01, o10, o11],
            weights: [
                (one - fa) * (one - fb),
                (one - fa) * fb,
                fa * (one - fb),
                fa * fb,
            ],
            frac: [fa, fb],
        }
    }

    #[inline]
    pub fn sample_into(&self, lk: &PlaneLookup<T>, out: &mut [T]) {
        let c = self.channels;
        let d = &self.data;
        let [o0, o1, o2, o3] = lk.offsets;
        let [w0, w1, w2, w3] = lk.weights;
        for (k, v) in out[..c].iter_mut().enumerate() {
            *v = w0 * d[o0 + k] + w1 * d[o1 + k] + w2 * d[o2 + k] + w3 * d[o3 + k];
        }
    }

    /// Evaluates the bilinear interpolant at canonical coordinates.
    pub fn sample(&self, ua: T, ub: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.channels];
        self.sample_into(&self.lookup(ua, ub), &mut out);
        out
    }

    /// Bilinear resampling onto a finer node lattice.
    pub fn resampled(&self, cells: [usize; 2]) -> Self {
        let mut out = Self::zeros(cells, self.channels);
        let two = T::lit(2.0);
        let mut buf = vec![T::zero(); self.channels];
        for ja in 0..=cells[0] {
            let ua = two * T::from_usize_lossy(ja) / T::from_usize_lossy(cells[0]) - T::one();
            for jb in 0..=cells[1] {
                let ub = two * T::from_usize_lossy(jb) / T::from_usize_lossy(cells[1]) - T::one();
                self.sample_into(&self.lookup(ua, ub), &mut buf);
                let o = out.offset(ja, jb);
                out.data[o..o + self.channels].copy_from_slice(&buf);
            }
        }
        out
    }
}

#[inline]
fn cell_and_fraction<T: Real>(u: T, cells: usize) -> (usize, T) {
    let g = (u + T::one()) * T::lit(0.5) * T::from_usize_lossy(cells);
    let g = g.max(T::zero()).min(T::from_usize_lossy(cells));
    let i = g.floor().to_usize().unwrap_or(0).min(cells - 1);
    (i, g - T::from_usize_lossy(i))
}

/// Bilinear stencil on one plane: corner offsets ordered 00, 01, 10, 11.
#[derive(Clone, Copy, Debug)]
pub struct PlaneLookup<T> {
    pub offsets: [usize; 4],
    pub weights: [T; 4],
    pub frac: [T; 2],
}

impl<T: Real> Default for PlaneLookup<T> {
    fn default() -> Self {
        Self {
            offsets: [0; 4],
            weights: [T::zero(); 4],
            frac: [T::zero(); 2],
        }
    }
}

/// Per-query state needed to backpropagate through [`HexPlaneGrid::query_into`].
#[derive(Clone, Debug)]
pub struct FeatureCache<T> {
    pub lookups: [PlaneLookup<T>; 6],
    /// Interpolated per-plane features, `6 × channels`.
    pub values: Vec<T>,
    pub in_domain: bool,
}

impl<T: Real> FeatureCache<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            lookups: [PlaneLookup::default(); 6],
            values: vec![T::zero(); 6 * channels],
            in_domain: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HexPlaneGrid<T> {
    pub planes: Vec<Plane<T>>,
    /// Cells along x, y, z.
    pub spatial_res: [usize; 3],
    /// Cells along time.
    pub temporal_res: usize,
    pub channels_per_plane: usize,
    pub bbox_min: Vec3<T>,
    pub bbox_max: Vec3<T>,
    /// Frame range mapped onto the time axis, inclusive.
    pub t_span: (usize, usize),
}

impl<T: Real> HexPlaneGrid<T> {
    pub fn zeros(
        spatial_res: [usize; 3],
        temporal_res: usize,
        channels: usize,
        bbox_min: Vec3<T>,
        bbox_max: Vec3<T>,
        t_span: (usize, usize),
    ) -> Result<Self> {
        if spatial_res.iter().any(|&r| r == 0) || temporal_res == 0 || channels == 0 {
            return Err(Error::Domain("grid resolutions must be positive".into()));
        }
        if t_span.1 < t_span.0 {
            return Err(Error::Domain("time span must be ascending".into()));
        }
        for a in 0..3 {
            if !(bbox_max[a] > bbox_min[a]) {
                return Err(Error::Domain("bounding box must have positive extent".into()));
            }
        }
        let res = [spatial_res[0], spatial_res[1], spatial_res[2], temporal_res];
        let planes = PLANE_AXES
            .iter()
            .map(|&(a, b)| Plane::zeros([res[a], res[b]], channels))
            .collect();
        Ok(Self {
            planes,
            spatial_res,
            temporal_res,
            channels_per_plane: channels,
            bbox_min,
            bbox_max,
            t_span,
        })
    }

    pub fn randomize<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for plane in &mut self.planes {
            for v in &mut plane.data {
                *v = T::lit(rng.gen_range(-scale..scale));
            }
        }
    }

    #[inline]
    pub fn feature_len(&self) -> usize {
        3 * self.channels_per_plane
    }

    pub fn num_params(&self) -> usize {
        self.planes.iter().map(|p| p.data.len()).sum()
    }

    /// Affine map of the bounding box and frame span onto `[-1, 1]⁴`.
    /// The flag is false when any coordinate leaves the canonical cube.
    pub fn normalize_coords(&self, point: Vec3<T>, frame: T) -> ([T; 4], bool) {
        let two = T::lit(2.0);
        let mut out = [T::zero(); 4];
        for a in 0..3 {
            out[a] = two * (point[a] - self.bbox_min[a]) / (self.bbox_max[a] - self.bbox_min[a])
                - T::one();
        }
        let (t0, t1) = self.t_span;
        out[3] = if t1 == t0 {
            T::zero()
        } else {
            let t0 = T::from_usize_lossy(t0);
            let t1 = T::from_usize_lossy(t1);
            two * (frame - t0) / (t1 - t0) - T::one()
        };
        let inside = out.iter().all(|&u| u >= -T::one() && u <= T::one());
        (out, inside)
    }

    /// Fused feature at canonical coordinates; zero outside the domain.
    pub fn query_features(&self, xyzt: [T; 4]) -> Vec<T> {
        let mut cache = FeatureCache::new(self.channels_per_plane);
        let mut out = vec![T::zero(); self.feature_len()];
        self.query_into(xyzt, &mut out, &mut cache);
        out
    }

    /// Writes the fused feature into `out` and records the stencils in
    /// `cache`. Returns whether the query was inside the domain.
    pub fn query_into(&self, xyzt: [T; 4], out: &mut [T], cache: &mut FeatureCache<T>) -> bool {
        let c = self.channels_per_plane;
        let inside = xyzt.iter().all(|&u| u >= -T::one() && u <= T::one());
        cache.in_domain = inside;
        if !inside {
            out[..3 * c].iter_mut().for_each(|v| *v = T::zero());
            return false;
        }
        for (p, &(a, b)) in PLANE_AXES.iter().enumerate() {
            let lk = self.planes[p].lookup(xyzt[a], xyzt[b]);
            self.planes[p].sample_into(&lk, &mut cache.values[p * c..(p + 1) * c]);
            cache.lookups[p] = lk;
        }
        for (j, &(p, q)) in PLANE_PAIRS.iter().enumerate() {
            for k in 0..c {
                out[j * c + k] = cache.values[p * c + k] * cache.values[q * c + k];
            }
        }
        true
    }

    /// Backpropagates `dfeat` into per-plane gradient buffers (same layout as
    /// `planes[p].data`) and, optionally, into canonical coordinates.
    pub fn backward(
        &self,
        cache: &FeatureCache<T>,
        dfeat: &[T],
        plane_grads: Option<&mut [Vec<T>]>,
        coord_grad: Option<&mut [T; 4]>,
    ) {
        if !cache.in_domain {
            return;
        }
        let c = self.channels_per_plane;
        // d loss / d sampled plane value
        let mut dval = [T::zero(); 6 * 64];
        let mut dval_heap;
        let dval: &mut [T] = if 6 * c <= dval.len() {
            &mut dval[..6 * c]
        } else {
            dval_heap = vec![T::zero(); 6 * c];
            &mut dval_heap
        };
        for (j, &(p, q)) in PLANE_PAIRS.iter().enumerate() {
            for k in 0..c {
                let g = dfeat[j * c + k];
                dval[p * c + k] = g * cache.values[q * c + k];
                dval[q * c + k] = g * cache.values[p * c + k];
            }
        }
        if let Some(grads) = plane_grads {
            for p in 0..6 {
                let lk = &cache.lookups[p];
                let gbuf = &mut grads[p];
                let dv = &dval[p * c..(p + 1) * c];
                for corner in 0..4 {
                    let w = lk.weights[corner];
                    if w == T::zero() {
                        continue;
                    }
                    let o = lk.offsets[corner];
                    for (g, &d) in gbuf[o..o + c].iter_mut().zip(dv) {
                        *g += w * d;
                    }
                }
            }
        }
        if let Some(cg) = coord_grad {
            for (p, &(a, b)) in PLANE_AXES.iter().enumerate() {
                let plane = &self.planes[p];
                let lk = &cache.lookups[p];
                let [fa, fb] = lk.frac;
                let one = T::one();
                let half = T::lit(0.5);
                let sa = half * T::from_usize_lossy(plane.cells[0]);
                let sb = half * T::from_usize_lossy(plane.cells[1]);
                let d = &plane.data;
                let [o00, o01, o10, o11] = lk.offsets;
                let mut ga = T::zero();
                let mut gb = T::zero();
                for k in 0..c {
                    let (v00, v01, v10, v11) = (d[o00 + k], d[o01 + k], d[o10 + k], d[o11 + k]);
                    let dv = dval[p * c + k];
                    ga += dv * ((one - fb) * (v10 - v00) + fb * (v11 - v01));
                    gb += dv * ((one - fa) * (v01 - v00) + fa * (v11 - v10));
                }
                cg[a] += ga * sa;
                cg[b] += gb * sb;
            }
        }
    }

    /// Resamples every plane to the requested cell counts.
    pub fn upsample(&self, spatial_res: [usize; 3], temporal_res: usize) -> Result<Self> {
        if spatial_res
            .iter()
            .zip(self.spatial_res.iter())
            .any(|(n, o)| n < o)
            || temporal_res < self.temporal_res
        {
            return Err(Error::Domain(format!(
                "cannot shrink grid from {:?}x{} to {:?}x{}",
                self.spatial_res, self.temporal_res, spatial_res, temporal_res
            )));
        }
        let res = [spatial_res[0], spatial_res[1], spatial_res[2], temporal_res];
        let planes = PLANE_AXES
            .iter()
            .zip(&self.planes)
            .map(|(&(a, b), plane)| {
                if plane.cells == [res[a], res[b]] {
                    plane.clone()
                } else {
                    plane.resampled([res[a], res[b]])
                }
            })
            .collect();
        Ok(Self {
            planes,
            spatial_res,
            temporal_res,
            ..self.clone()
        })
    }
}
