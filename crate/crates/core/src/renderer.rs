//! Stratified ray sampling, alpha compositing and blending of overlapping
//! local fields.

use crate::error::{Error, Result};
use crate::field::{FrameSpan, LocalField, PointCache};
use crate::geometry::{cast_ray, Intrinsics, Pose, Ray};
use crate::scalar::Real;
use rand::Rng;
use rayon::prelude::*;

/// Guard for the expected-depth normalization `Σ wᵢtᵢ / max(Σ wᵢ, ε)`.
pub const DEPTH_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// The active field, blended with the previous frozen field inside
    /// their overlap.
    Train,
    /// Every field covering the frame.
    Inference,
}

/// Ray-marching setup shared by training and inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingSpec<T> {
    pub near: T,
    pub far: T,
    pub n_samples: usize,
}

impl<T: Real> SamplingSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.near > T::zero() && self.far > self.near) {
            return Err(Error::Domain(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::Domain("at least two samples per ray".into()));
        }
        Ok(())
    }
}

/// Result of compositing one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub color: [T; 3],
    /// Expected distance along the ray.
    pub depth: T,
    pub opacity: T,
    pub t_values: Vec<T>,
    pub deltas: Vec<T>,
    pub weights: Vec<T>,
    pub transmittance: Vec<T>,
}

/// One sample per stratum of `[near, far]`: stratum midpoints without
/// jitter, uniform positions inside each stratum with it.
pub fn sample_along_ray<T: Real, R: Rng>(
    near: T,
    far: T,
    n_samples: usize,
    jitter: Option<&mut R>,
) -> Result<Vec<T>> {
    SamplingSpec {
        near,
        far,
        n_samples,
    }
    .validate()?;
    let offsets: Vec<T> = match jitter {
        Some(rng) => (0..n_samples).map(|_| T::lit(rng.gen::<f64>())).collect(),
        None => vec![T::lit(0.5); n_samples],
    };
    Ok(stratified(near, far, &offsets))
}

/// `tᵢ = near + (i + oᵢ)·(far − near)/n` for offsets `oᵢ ∈ [0, 1)`.
pub fn stratified<T: Real>(near: T, far: T, offsets: &[T]) -> Vec<T> {
    let step = (far - near) / T::from_usize_lossy(offsets.len());
    offsets
        .iter()
        .enumerate()
        .map(|(i, &o)| near + (T::from_usize_lossy(i) + o) * step)
        .collect()
}

/// Alpha compositing against a black background. The last sample's
/// interval extends to `far`.
pub fn composite<T: Real>(densities: &[T], colors: &[[T; 3]], t_values: &[T], far: T) -> RenderOutput<T> {
    let n = t_values.len();
    assert_eq!(densities.len(), n);
    assert_eq!(colors.len(), n);
    let mut deltas = Vec::with_capacity(n);
    for i in 0..n {
        let next = if i + 1 < n { t_values[i + 1] } else { far };
        deltas.push(next - t_values[i]);
    }
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = Vec::with_capacity(n);
    let mut optical = T::zero();
    let mut color = [T::zero(); 3];
    let mut wsum = T::zero();
    let mut wt = T::zero();
    for i in 0..n {
        let t_i = (-optical).exp();
        let tau = densities[i] * deltas[i];
        let w = t_i * -(-tau).exp_m1();
        transmittance.push(t_i);
        weights.push(w);
        for c in 0..3 {
            color[c] += w * colors[i][c];
        }
        wsum += w;
        wt += w * t_values[i];
        optical += tau;
    }
    let depth = wt / wsum.max(T::lit(DEPTH_EPS));
    RenderOutput {
        color,
        depth,
        opacity: wsum,
        t_values: t_values.to_vec(),
        deltas,
        weights,
        transmittance,
    }
}

impl<T: Real> RenderOutput<T> {
    /// Transmittance left after the last sample.
    pub fn residual_transmittance(&self) -> T {
        let n = self.weights.len();
        if n == 0 {
            return T::one();
        }
        self.transmittance[n - 1] - self.weights[n - 1]
    }

    /// `∂D̂/∂wᵢ` for the expected depth.
    pub fn depth_weight_gradient(&self, out: &mut [T]) {
        let s = self.opacity;
        if s > T::lit(DEPTH_EPS) {
            for (o, &t) in out.iter_mut().zip(&self.t_values) {
                *o = (t - self.depth) / s;
            }
        } else {
            let inv = T::one() / T::lit(DEPTH_EPS);
            for (o, &t) in out.iter_mut().zip(&self.t_values) {
                *o = t * inv;
            }
        }
    }

    /// Pulls gradients on the weights and on the composited color back to
    /// per-sample densities and colors.
    pub fn backward(&self, colors: &[[T; 3]], dweights: &[T], dcolor: [T; 3]) -> (Vec<T>, Vec<[T; 3]>) {
        let n = self.weights.len();
        // g_i = dL/dw_i including the color path
        let g: Vec<T> = (0..n)
            .map(|i| {
                dweights[i]
                    + dcolor[0] * colors[i][0]
                    + dcolor[1] * colors[i][1]
                    + dcolor[2] * colors[i][2]
            })
            .collect();
        let mut dsigma = vec![T::zero(); n];
        // dL/dσ_j = δ_j [ g_j (T_j − w_j) − Σ_{i>j} g_i w_i ]
        let mut suffix = T::zero();
        for j in (0..n).rev() {
            dsigma[j] = self.deltas[j] * (g[j] * (self.transmittance[j] - self.weights[j]) - suffix);
            suffix += g[j] * self.weights[j];
        }
        let dcolors = self
            .weights
            .iter()
            .map(|&w| [w * dcolor[0], w * dcolor[1], w * dcolor[2]])
            .collect();
        (dsigma, dcolors)
    }
}

/// Temporal blend weights for the given spans at frame `k`, in input order.
/// Non-covering spans get zero; covering weights sum to one. Each field's
/// raw weight ramps linearly across every overlap with a field that starts
/// earlier (rising) or later (falling).
pub fn blend_weights_for_spans<T: Real>(k: usize, spans: &[FrameSpan]) -> Vec<T> {
    let kf = T::from_usize_lossy(k);
    let mut raw = vec![T::zero(); spans.len()];
    for (i, s) in spans.iter().enumerate() {
        if !s.contains(k) {
            continue;
        }
        let mut w = T::one();
        for (j, o) in spans.iter().enumerate() {
            if i == j || !o.contains(k) {
                continue;
            }
            if o.first < s.first {
                // rising edge across [s.first, o.last]
                let len = T::from_usize_lossy(o.last + 1 - s.first);
                let r = (kf - T::from_usize_lossy(s.first)) / len;
                w = w.min(r.max(T::zero()).min(T::one()));
            } else if o.first > s.first {
                // falling edge across [o.first, s.last]
                let len = T::from_usize_lossy(s.last + 1 - o.first);
                let r = T::one() - (kf - T::from_usize_lossy(o.first)) / len;
                w = w.min(r.max(T::zero()).min(T::one()));
            }
        }
        raw[i] = w;
    }
    let total: T = raw.iter().copied().sum();
    let covering = spans.iter().filter(|s| s.contains(k)).count();
    if covering == 0 {
        return raw;
    }
    if total > T::zero() {
        raw.iter_mut().for_each(|w| *w /= total);
    } else {
        let u = T::one() / T::from_usize_lossy(covering);
        for (w, s) in raw.iter_mut().zip(spans) {
            if s.contains(k) {
                *w = u;
            }
        }
    }
    raw
}

/// Per-field blend weights at a world point and frame. Blending is temporal,
/// so the point only matters through each field's domain test inside
/// [`LocalField::eval_field`].
pub fn blend_weights<T: Real>(_point: crate::linalg::Vec3<T>, k: usize, fields: &[&LocalField<T>]) -> Vec<T> {
    let spans: Vec<FrameSpan> = fields.iter().map(|f| f.frames).collect();
    blend_weights_for_spans(k, &spans)
}

/// Indices of the fields taking part in rendering frame `k`, ordered by
/// span, paired with their blend weights.
pub fn select_fields<T: Real>(
    fields: &[&LocalField<T>],
    k: usize,
    mode: RenderMode,
) -> Result<Vec<(usize, T)>> {
    let mut chosen: Vec<usize> = match mode {
        RenderMode::Inference => (0..fields.len()).filter(|&i| fields[i].frames.contains(k)).collect(),
        RenderMode::Train => {
            let active = (0..fields.len()).find(|&i| !fields[i].frozen);
            let mut out = Vec::new();
            if let Some(a) = active {
                if fields[a].frames.contains(k) {
                    out.push(a);
                }
            }
            let prev = (0..fields.len())
                .filter(|&i| fields[i].frozen && fields[i].frames.contains(k))
                .max_by_key(|&i| (fields[i].frames.first, fields[i].frames.last));
            out.extend(prev);
            out
        }
    };
    if chosen.is_empty() {
        return Err(Error::UncoveredRay(k));
    }
    chosen.sort_by_key(|&i| (fields[i].frames.first, fields[i].frames.last, i));
    let spans: Vec<FrameSpan> = chosen.iter().map(|&i| fields[i].frames).collect();
    let w = blend_weights_for_spans::<T>(k, &spans);
    Ok(chosen.into_iter().zip(w).collect())
}

/// Mixes per-field samples: densities add with blend weights, colors mix
/// in proportion to each field's weighted density.
#[inline]
pub fn blend_sample<T: Real>(betas: &[T], densities: &[T], colors: &[[T; 3]]) -> (T, [T; 3]) {
    let mut sigma = T::zero();
    for (&b, &s) in betas.iter().zip(densities) {
        sigma += b * s;
    }
    let mut rgb = [T::zero(); 3];
    if sigma > T::zero() {
        for ((&b, &s), c) in betas.iter().zip(densities).zip(colors) {
            let m = b * s / sigma;
            for k in 0..3 {
                rgb[k] += m * c[k];
            }
        }
    } else {
        for (&b, c) in betas.iter().zip(colors) {
            for k in 0..3 {
                rgb[k] += b * c[k];
            }
        }
    }
    (sigma, rgb)
}

/// Gradient of [`blend_sample`] with respect to field `m`'s density and color.
#[inline]
pub fn blend_sample_backward<T: Real>(
    betas: &[T],
    densities: &[T],
    colors: &[[T; 3]],
    blended: (T, [T; 3]),
    dsigma: T,
    drgb: [T; 3],
    m: usize,
) -> (T, [T; 3]) {
    let (sigma, rgb) = blended;
    let b = betas[m];
    if sigma > T::zero() {
        let mut ds = b * dsigma;
        for k in 0..3 {
            ds += drgb[k] * b * (colors[m][k] - rgb[k]) / sigma;
        }
        let f = b * densities[m] / sigma;
        (ds, [f * drgb[0], f * drgb[1], f * drgb[2]])
    } else {
        (b * dsigma, [b * drgb[0], b * drgb[1], b * drgb[2]])
    }
}

/// Renders one ray through the fields covering its frame.
pub fn render_ray<T: Real>(
    ray: &Ray<T>,
    fields: &[&LocalField<T>],
    mode: RenderMode,
    spec: &SamplingSpec<T>,
    offsets: Option<&[T]>,
) -> Result<RenderOutput<T>> {
    spec.validate()?;
    let k = ray.frame_index;
    let chosen = select_fields(fields, k, mode)?;
    let t_values = match offsets {
        Some(o) => stratified(spec.near, spec.far, o),
        None => stratified(spec.near, spec.far, &vec![T::lit(0.5); spec.n_samples]),
    };
    let frame = T::from_usize_lossy(k);
    let encs: Vec<Vec<T>> = chosen.iter().map(|&(i, _)| fields[i].encode_view(ray.direction)).collect();
    let mut caches: Vec<PointCache<T>> = chosen.iter().map(|&(i, _)| PointCache::for_field(fields[i])).collect();
    let betas: Vec<T> = chosen.iter().map(|&(_, w)| w).collect();
    let mut dens = vec![T::zero(); chosen.len()];
    let mut cols = vec![[T::zero(); 3]; chosen.len()];
    let mut sigmas = Vec::with_capacity(t_values.len());
    let mut colors = Vec::with_capacity(t_values.len());
    for &t in &t_values {
        let p = ray.at(t);
        for (m, &(i, _)) in chosen.iter().enumerate() {
            fields[i].eval_cached(p, frame, &encs[m], &mut caches[m]);
            dens[m] = caches[m].density;
            cols[m] = caches[m].rgb;
        }
        let (s, c) = blend_sample(&betas, &dens, &cols);
        sigmas.push(s);
        colors.push(c);
    }
    Ok(composite(&sigmas, &colors, &t_values, spec.far))
}

/// A rendered image: colors, z-depth and the number of rays that blended
/// more than one field.
#[derive(Clone, Debug)]
pub struct FrameRender<T> {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[T; 3]>,
    pub depth: Vec<T>,
    pub blended_rays: usize,
}

/// Renders every pixel of frame `k` in inference mode.
pub fn render_frame<T: Real>(
    fields: &[&LocalField<T>],
    pose: &Pose<T>,
    intr: &Intrinsics<T>,
    k: usize,
    spec: &SamplingSpec<T>,
) -> Result<FrameRender<T>> {
    let blended = select_fields(fields, k, RenderMode::Inference)?.len() > 1;
    let rows: Vec<Result<Vec<([T; 3], T)>>> = (0..intr.height)
        .into_par_iter()
        .map(|v| {
            (0..intr.width)
                .map(|u| {
                    let px = [T::from_usize_lossy(u), T::from_usize_lossy(v)];
                    let ray = cast_ray(px, pose, intr, k)?;
                    let out = render_ray(&ray, fields, RenderMode::Inference, spec, None)?;
                    // ray distance to z-depth
                    let z = out.depth / intr.bearing(px).norm();
                    Ok((out.color, z))
                })
                .collect()
        })
        .collect();
    let mut rgb = Vec::with_capacity(intr.pixel_count());
    let mut depth = Vec::with_capacity(intr.pixel_count());
    for row in rows {
        for (c, z) in row? {
            rgb.push(c);
            depth.push(z);
        }
    }
    Ok(FrameRender {
        width: intr.width,
        height: intr.height,
        rgb,
        depth,
        blended_rays: if blended { intr.pixel_count() } else { 0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::linalg::Vec3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn midpoint_samples() {
        let t = sample_along_ray::<f64, ChaCha8Rng>(1.0, 2.0, 2, None).unwrap();
        assert_eq!(t, vec![1.25, 1.75]);
        assert!(sample_along_ray::<f64, ChaCha8Rng>(2.0, 1.0, 4, None).is_err());
        assert!(sample_along_ray::<f64, ChaCha8Rng>(0.0, 1.0, 4, None).is_err());
        assert!(sample_along_ray::<f64, ChaCha8Rng>(1.0, 2.0, 1, None).is_err());
    }

    #[test]
    fn jittered_samples_stay_in_their_strata() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (near, far, n) = (0.5, 3.5, 16);
        for _ in 0..100 {
            let t = sample_along_ray::<f64, _>(near, far, n, Some(&mut rng)).unwrap();
            let w = (far - near) / n as f64;
            for (i, &ti) in t.iter().enumerate() {
                assert!(ti >= near + i as f64 * w && ti < near + (i + 1) as f64 * w);
            }
            let widths: f64 = (0..n).map(|_| w).sum();
            assert!((widths - (far - near)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_space_is_transparent() {
        let out = composite(&[0.0; 4], &[[1.0, 0.5, 0.2]; 4], &[1.0, 2.0, 3.0, 4.0], 5.0);
        assert_eq!(out.color, [0.0; 3]);
        assert_eq!(out.opacity, 0.0);
        assert_eq!(out.depth, 0.0);
    }

    #[test]
    fn opaque_sample_takes_all_weight() {
        let out = composite::<f64>(&[0.0, 50.0, 3.0], &[[0.0; 3], [0.2, 0.4, 0.6], [1.0; 3]], &[1.0, 2.0, 3.0], 4.0);
        assert!((out.weights[1] - 1.0).abs() < 1e-12);
        assert!((out.color[1] - 0.4).abs() < 1e-12);
        assert!((out.depth - 2.0).abs() < 1e-9);
    }

    #[test]
    fn two_sample_weights() {
        let out = composite::<f64>(&[0.5, 0.5], &[[1.0; 3]; 2], &[0.0, 1.0], 2.0);
        assert!((out.weights[0] - 0.393469).abs() < 1e-6);
        assert!((out.weights[1] - 0.238651).abs() < 1e-6);
        // Independent evaluation of the recurrence.
        let a = 1.0 - (-0.5f64).exp();
        assert!((out.weights[1] - (-0.5f64).exp() * a).abs() < 1e-15);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 8;
            let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..3.0)).collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
            let c: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let dw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dc = [0.3, -0.8, 0.5];
            let obj = |s: &[f64], c: &[[f64; 3]]| {
                let o = composite(s, c, &t, 3.2);
                o.weights.iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>()
                    + o.color.iter().zip(&dc).map(|(a, b)| a * b).sum::<f64>()
            };
            let out = composite(&s, &c, &t, 3.2);
            let (ds, dcol) = out.backward(&c, &dw, dc);
            let h = 1e-4;
            for j in 0..n {
                let mut sp = s.clone();
                sp[j] += h;
                let mut sm = s.clone();
                sm[j] -= h;
                let fd = (obj(&sp, &c) - obj(&sm, &c)) / (2.0 * h);
                let rel = (fd - ds[j]).abs() / fd.abs().max(ds[j].abs()).max(1e-8);
                assert!(rel < 1e-4, "density {j}: {fd} vs {}", ds[j]);
                for k in 0..3 {
                    let mut cp = c.clone();
                    cp[j][k] += h;
                    let mut cm = c.clone();
                    cm[j][k] -= h;
                    let fd = (obj(&s, &cp) - obj(&s, &cm)) / (2.0 * h);
                    assert!((fd - dcol[j][k]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn blend_weight_examples() {
        let a = FrameSpan::new(0, 99);
        let b = FrameSpan::new(70, 169);
        let w: Vec<f64> = blend_weights_for_spans(50, &[a, b]);
        assert_eq!(w, vec![1.0, 0.0]);
        let w: Vec<f64> = blend_weights_for_spans(85, &[a, b]);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
        let w: Vec<f64> = blend_weights_for_spans(80, &[a, b]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
        let w: Vec<f64> = blend_weights_for_spans(120, &[a, b]);
        assert_eq!(w, vec![0.0, 1.0]);
        let w: Vec<f64> = blend_weights_for_spans(500, &[a, b]);
        assert_eq!(w, vec![0.0, 0.0]);
        // identical spans share equally
        let w: Vec<f64> = blend_weights_for_spans(10, &[a, a]);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn blend_weights_sum_to_one() {
        let spans = [
            FrameSpan::new(0, 99),
            FrameSpan::new(70, 169),
            FrameSpan::new(140, 239),
            FrameSpan::new(210, 249),
        ];
        for k in 0..250 {
            let w: Vec<f64> = blend_weights_for_spans(k, &spans);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12, "frame {k}");
        }
    }

    #[test]
    fn blended_density_is_convex_combination() {
        let (s, _) = blend_sample::<f64>(&[0.25, 0.75], &[2.0, 4.0], &[[0.0; 3], [1.0; 3]]);
        assert!((s - 3.5).abs() < 1e-15);
    }

    #[test]
    fn blend_backward_matches_finite_differences() {
        let betas = [0.3, 0.7];
        let dens = [1.5, 0.4];
        let cols = [[0.2, 0.9, 0.4], [0.7, 0.1, 0.3]];
        let (ds, dc) = (0.6, [0.2, -0.5, 0.9]);
        let obj = |d: &[f64; 2], c: &[[f64; 3]; 2]| {
            let (s, rgb) = blend_sample(&betas, d, c);
            ds * s + dc[0] * rgb[0] + dc[1] * rgb[1] + dc[2] * rgb[2]
        };
        let blended = blend_sample(&betas, &dens, &cols);
        let h = 1e-6;
        for m in 0..2 {
            let (gs, gc) = blend_sample_backward(&betas, &dens, &cols, blended, ds, dc, m);
            let mut dp = dens;
            dp[m] += h;
            let mut dm = dens;
            dm[m] -= h;
            let fd = (obj(&dp, &cols) - obj(&dm, &cols)) / (2.0 * h);
            assert!((fd - gs).abs() < 1e-8);
            for k in 0..3 {
                let mut cp = cols;
                cp[m][k] += h;
                let mut cm = cols;
                cm[m][k] -= h;
                let fd = (obj(&dens, &cp) - obj(&dens, &cm)) / (2.0 * h);
                assert!((fd - gc[k]).abs() < 1e-8);
            }
        }
    }

    fn test_field(seed: u64, frames: FrameSpan) -> LocalField<f64> {
        let cfg = FieldConfig {
            spatial_res: 4,
            temporal_res: Some(4),
            channels_per_plane: 2,
            hidden_width: 8,
            grid_init: 0.8,
            ..FieldConfig::default()
        };
        LocalField::new(
            &cfg,
            4,
            4,
            Vec3::new(0.0, 0.0, 2.0),
            2.0,
            (0, 20),
            frames,
            5.0,
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    }

    fn test_ray(k: usize) -> Ray<f64> {
        Ray {
            origin: Vec3::new(0.1, -0.2, 0.0),
            direction: Vec3::new(0.1, 0.05, 1.0).normalize(),
            pixel: [0.0, 0.0],
            frame_index: k,
        }
    }

    #[test]
    fn single_field_render_matches_direct_compositing() {
        let f = test_field(1, FrameSpan::new(0, 20));
        let spec = SamplingSpec { near: 0.5, far: 3.5, n_samples: 8 };
        let ray = test_ray(4);
        let out = render_ray(&ray, &[&f], RenderMode::Inference, &spec, None).unwrap();
        let t = sample_along_ray::<f64, ChaCha8Rng>(0.5, 3.5, 8, None).unwrap();
        let (s, c): (Vec<f64>, Vec<[f64; 3]>) =
            t.iter().map(|&ti| f.eval_field(ray.at(ti), 4.0, ray.direction)).unzip();
        let direct = composite(&s, &c, &t, 3.5);
        assert_eq!(out, direct);
        let sum: f64 = out.weights.iter().sum();
        assert!((sum + out.residual_transmittance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_fields_blend_to_single_output() {
        let f = test_field(2, FrameSpan::new(0, 20));
        let spec = SamplingSpec { near: 0.5, far: 3.5, n_samples: 8 };
        let ray = test_ray(7);
        let single = render_ray(&ray, &[&f], RenderMode::Inference, &spec, None).unwrap();
        let both = render_ray(&ray, &[&f, &f], RenderMode::Inference, &spec, None).unwrap();
        for c in 0..3 {
            assert!((single.color[c] - both.color[c]).abs() < 1e-9);
        }
        assert!((single.depth - both.depth).abs() < 1e-9);
    }

    #[test]
    fn render_is_permutation_invariant() {
        let a = test_field(3, FrameSpan::new(0, 12));
        let b = test_field(4, FrameSpan::new(6, 20));
        let spec = SamplingSpec { near: 0.5, far: 3.5, n_samples: 8 };
        let ray = test_ray(9);
        let ab = render_ray(&ray, &[&a, &b], RenderMode::Inference, &spec, None).unwrap();
        let ba = render_ray(&ray, &[&b, &a], RenderMode::Inference, &spec, None).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn uncovered_frame_is_an_error() {
        let a = test_field(3, FrameSpan::new(0, 12));
        let spec = SamplingSpec { near: 0.5, far: 3.5, n_samples: 8 };
        let err = render_ray(&test_ray(15), &[&a], RenderMode::Inference, &spec, None);
        assert!(matches!(err, Err(Error::UncoveredRay(15))));
    }

    #[test]
    fn train_mode_uses_active_and_previous_only() {
        let mut a = test_field(3, FrameSpan::new(0, 12));
        let mut b = test_field(4, FrameSpan::new(6, 20));
        let c = test_field(5, FrameSpan::new(14, 30));
        a.frozen = true;
        b.frozen = true;
        let fields = [&a, &b, &c];
        let sel = select_fields(&fields, 16, RenderMode::Train).unwrap();
        assert_eq!(sel.iter().map(|s| s.0).collect::<Vec<_>>(), vec![1, 2]);
        let sel = select_fields(&fields, 25, RenderMode::Train).unwrap();
        assert_eq!(sel, vec![(2, 1.0)]);
        let sel = select_fields(&fields, 10, RenderMode::Inference).unwrap();
        assert_eq!(sel.len(), 2);
    }
}
