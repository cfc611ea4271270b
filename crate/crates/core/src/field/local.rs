//! A local radiance field: one HexPlane grid plus density and color decoders.

use super::grid::{FeatureCache, HexPlaneGrid};
use super::mlp::{Mlp, MlpScratch};
use crate::error::Result;
use crate::linalg::Vec3;
use crate::scalar::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Architecture of a local field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Target cells along x, y, z.
    pub spatial_res: usize,
    /// Target cells along time; `None` picks half the model's frame span.
    pub temporal_res: Option<usize>,
    pub channels_per_plane: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Sinusoidal frequencies used to encode the view direction.
    pub view_frequencies: usize,
    /// Grid entries start uniform in `[-grid_init, grid_init]`.
    pub grid_init: f64,
    /// Initial density, per unit length.
    pub init_density: f64,
    /// Start at `1 / coarse_factor` of the target resolution.
    pub coarse_factor: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            spatial_res: 512,
            temporal_res: None,
            channels_per_plane: 24,
            hidden_width: 64,
            hidden_layers: 2,
            view_frequencies: 4,
            grid_init: 0.1,
            init_density: 0.1,
            coarse_factor: 4,
        }
    }
}

impl FieldConfig {
    pub fn temporal_res_for(&self, span_frames: usize) -> usize {
        self.temporal_res
            .unwrap_or_else(|| span_frames.div_ceil(2))
            .max(1)
    }

    /// Resolution levels visited by the coarse-to-fine schedule, coarse
    /// first. Each level doubles the previous one and the last equals the
    /// target.
    pub fn resolution_levels(&self, target_spatial: usize, target_temporal: usize) -> Vec<(usize, usize)> {
        let mut levels = vec![(target_spatial, target_temporal)];
        let mut f = self.coarse_factor.max(1);
        while f > 1 {
            let (s, t) = *levels.last().unwrap();
            levels.push((s.div_ceil(2).max(1), t.div_ceil(2).max(1)));
            f /= 2;
        }
        levels.reverse();
        levels
    }
}

pub fn view_encoding_len(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// `[d, sin(2^f π d), cos(2^f π d)]` for `f = 0..freqs`.
pub fn encode_view<T: Real>(dir: Vec3<T>, freqs: usize, out: &mut [T]) {
    let d = dir.to_array();
    out[..3].copy_from_slice(&d);
    let mut scale = T::PI();
    let mut o = 3;
    for _ in 0..freqs {
        for &dj in &d {
            let (s, c) = (scale * dj).sin_cos();
            out[o] = s;
            out[o + 1] = c;
            o += 2;
        }
        scale = scale + scale;
    }
}

/// Frames assigned to a field, inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpan {
    pub first: usize,
    pub last: usize,
}

impl FrameSpan {
    pub fn new(first: usize, last: usize) -> Self {
        Self { first, last }
    }

    pub fn contains(&self, k: usize) -> bool {
        k >= self.first && k <= self.last
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalField<T> {
    pub grid: HexPlaneGrid<T>,
    pub density_mlp: Mlp<T>,
    pub color_mlp: Mlp<T>,
    /// World position of the model center.
    pub origin: Vec3<T>,
    /// Frames this field is responsible for.
    pub frames: FrameSpan,
    /// Density multiplier applied after the softplus, in inverse scene units.
    pub density_scale: T,
    pub view_frequencies: usize,
    pub frozen: bool,
}

/// Gradient buffers mirroring a field's parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrad<T> {
    pub planes: Vec<Vec<T>>,
    pub density: Vec<T>,
    pub color: Vec<T>,
}

impl<T: Real> FieldGrad<T> {
    pub fn zeros_like(field: &LocalField<T>) -> Self {
        Self {
            planes: field
                .grid
                .planes
                .iter()
                .map(|p| vec![T::zero(); p.data.len()])
                .collect(),
            density: vec![T::zero(); field.density_mlp.params.len()],
            color: vec![T::zero(); field.color_mlp.params.len()],
        }
    }

    pub fn clear(&mut self) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.planes.iter().map(|p| p.as_slice()).collect();
        out.push(&self.density);
        out.push(&self.color);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = self.planes.iter_mut().collect();
        out.push(&mut self.density);
        out.push(&mut self.color);
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn max_abs(&self) -> T {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(T::zero(), |m, &v| m.max(v.abs()))
    }
}

/// Forward record of one point evaluation.
#[derive(Clone, Debug)]
pub struct PointCache<T> {
    pub feat: FeatureCache<T>,
    pub density_acts: Vec<T>,
    pub color_acts: Vec<T>,
    pub raw_density: T,
    pub density: T,
    pub rgb: [T; 3],
    pub in_domain: bool,
}

impl<T: Real> PointCache<T> {
    pub fn for_field(field: &LocalField<T>) -> Self {
        Self {
            feat: FeatureCache::new(field.grid.channels_per_plane),
            density_acts: vec![T::zero(); field.density_mlp.activations_len()],
            color_acts: vec![T::zero(); field.color_mlp.activations_len()],
            raw_density: T::zero(),
            density: T::zero(),
            rgb: [T::zero(); 3],
            in_domain: false,
        }
    }
}

/// Reusable buffers for [`LocalField::backward`].
#[derive(Clone, Debug, Default)]
pub struct FieldScratch<T> {
    mlp: MlpScratch<T>,
    dfeat: Vec<T>,
    din: Vec<T>,
}

impl<T: Real> LocalField<T> {
    /// Builds a randomly initialized field at the given grid resolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        cfg: &FieldConfig,
        spatial_res: usize,
        temporal_res: usize,
        origin: Vec3<T>,
        half_extent: T,
        t_span: (usize, usize),
        frames: FrameSpan,
        density_scale: T,
        rng: &mut R,
    ) -> Result<Self> {
        let h = Vec3::new(half_extent, half_extent, half_extent);
        let mut grid = HexPlaneGrid::zeros(
            [spatial_res; 3],
            temporal_res,
            cfg.channels_per_plane,
            origin - h,
            origin + h,
            t_span,
        )?;
        grid.randomize(rng, cfg.grid_init);
        let feat = grid.feature_len();
        let mut dens_sizes = vec![feat];
        dens_sizes.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
        dens_sizes.push(1);
        let mut col_sizes = vec![feat + view_encoding_len(cfg.view_frequencies)];
        col_sizes.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
        col_sizes.push(3);
        let mut density_mlp = Mlp::init_uniform(&dens_sizes, rng);
        let color_mlp = Mlp::init_uniform(&col_sizes, rng);
        // softplus(b) · scale = init_density
        let target = (cfg.init_density / density_scale.as_f64()).max(1e-12);
        let b = density_mlp.output_bias_offset();
        density_mlp.params[b] = T::lit(target.exp_m1().ln());
        Ok(Self {
            grid,
            density_mlp,
            color_mlp,
            origin,
            frames,
            density_scale,
            view_frequencies: cfg.view_frequencies,
            frozen: false,
        })
    }

    pub fn num_params(&self) -> usize {
        self.grid.num_params() + self.density_mlp.params.len() + self.color_mlp.params.len()
    }

    pub fn param_blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.grid.planes.iter().map(|p| p.data.as_slice()).collect();
        out.push(&self.density_mlp.params);
        out.push(&self.color_mlp.params);
        out
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = self.grid.planes.iter_mut().map(|p| &mut p.data).collect();
        out.push(&mut self.density_mlp.params);
        out.push(&mut self.color_mlp.params);
        out
    }

    pub fn view_encoding_len(&self) -> usize {
        view_encoding_len(self.view_frequencies)
    }

    pub fn encode_view(&self, dir: Vec3<T>) -> Vec<T> {
        let mut out = vec![T::zero(); self.view_encoding_len()];
        encode_view(dir, self.view_frequencies, &mut out);
        out
    }

    /// Density and color at a world point. Points outside the grid's box or
    /// time span have density exactly zero.
    pub fn eval_field(&self, point: Vec3<T>, frame: T, view_dir: Vec3<T>) -> (T, [T; 3]) {
        let enc = self.encode_view(view_dir);
        let mut cache = PointCache::for_field(self);
        self.eval_cached(point, frame, &enc, &mut cache);
        (cache.density, cache.rgb)
    }

    /// Evaluates a point and keeps everything needed for the backward pass.
    pub fn eval_cached(&self, point: Vec3<T>, frame: T, view_enc: &[T], cache: &mut PointCache<T>) {
        let (xyzt, inside) = self.grid.normalize_coords(point, frame);
        cache.in_domain = inside;
        if !inside {
            cache.feat.in_domain = false;
            cache.raw_density = T::zero();
            cache.density = T::zero();
            cache.rgb = [T::zero(); 3];
            return;
        }
        let flen = self.grid.feature_len();
        self.grid
            .query_into(xyzt, &mut cache.density_acts[..flen], &mut cache.feat);
        cache.color_acts[..flen].copy_from_slice(&cache.density_acts[..flen]);
        cache.color_acts[flen..flen + view_enc.len()].copy_from_slice(view_enc);
        let raw = self.density_mlp.forward_in_place(&mut cache.density_acts)[0];
        cache.raw_density = raw;
        cache.density = self.density_scale * raw.softplus();
        let out = self.color_mlp.forward_in_place(&mut cache.color_acts);
        cache.rgb = [out[0].sigmoid(), out[1].sigmoid(), out[2].sigmoid()];
    }

    /// Density only, skipping the color decoder. Leaves the cache unfit
    /// for [`LocalField::backward`].
    pub fn eval_density(&self, point: Vec3<T>, frame: T, cache: &mut PointCache<T>) -> T {
        let (xyzt, inside) = self.grid.normalize_coords(point, frame);
        cache.in_domain = inside;
        if !inside {
            cache.density = T::zero();
            return T::zero();
        }
        let flen = self.grid.feature_len();
        self.grid
            .query_into(xyzt, &mut cache.density_acts[..flen], &mut cache.feat);
        let raw = self.density_mlp.forward_in_place(&mut cache.density_acts)[0];
        cache.raw_density = raw;
        cache.density = self.density_scale * raw.softplus();
        cache.density
    }

    /// Backpropagates density/color gradients of one cached evaluation into
    /// `grads`, and optionally into the world point.
    pub fn backward(
        &self,
        cache: &PointCache<T>,
        dsigma: T,
        drgb: [T; 3],
        grads: &mut FieldGrad<T>,
        point_grad: Option<&mut Vec3<T>>,
        scratch: &mut FieldScratch<T>,
    ) {
        if !cache.in_domain {
            return;
        }
        let flen = self.grid.feature_len();
        let FieldScratch { mlp, dfeat, din } = scratch;
        dfeat.clear();
        dfeat.resize(flen, T::zero());
        din.clear();
        din.resize(self.color_mlp.input_len().max(flen), T::zero());
        // density head
        let draw = dsigma * self.density_scale * cache.raw_density.sigmoid();
        if draw != T::zero() {
            self.density_mlp.backward(
                &cache.density_acts,
                &[draw],
                &mut grads.density,
                Some(&mut din[..flen]),
                mlp,
            );
            dfeat.copy_from_slice(&din[..flen]);
        }
        // color head
        let one = T::one();
        let dout: [T; 3] = std::array::from_fn(|i| drgb[i] * cache.rgb[i] * (one - cache.rgb[i]));
        if dout.iter().any(|&d| d != T::zero()) {
            let clen = self.color_mlp.input_len();
            self.color_mlp
                .backward(&cache.color_acts, &dout, &mut grads.color, Some(&mut din[..clen]), mlp);
            for (a, b) in dfeat.iter_mut().zip(&din[..flen]) {
                *a += *b;
            }
        }
        match point_grad {
            Some(pg) => {
                let mut cg = [T::zero(); 4];
                self.grid
                    .backward(&cache.feat, dfeat, Some(&mut grads.planes), Some(&mut cg));
                let two = T::lit(2.0);
                for a in 0..3 {
                    let s = two / (self.grid.bbox_max[a] - self.grid.bbox_min[a]);
                    match a {
                        0 => pg.x += cg[0] * s,
                        1 => pg.y += cg[1] * s,
                        _ => pg.z += cg[2] * s,
                    }
                }
            }
            None => self
                .grid
                .backward(&cache.feat, dfeat, Some(&mut grads.planes), None),
        }
    }

    /// Replaces the grid by a resampled finer one.
    pub fn upsample(&mut self, spatial_res: usize, temporal_res: usize) -> Result<()> {
        self.grid = self.grid.upsample([spatial_res; 3], temporal_res)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_cfg() -> FieldConfig {
        FieldConfig {
            spatial_res: 4,
            temporal_res: Some(4),
            channels_per_plane: 3,
            hidden_width: 8,
            hidden_layers: 2,
            view_frequencies: 2,
            grid_init: 0.8,
            init_density: 0.1,
            coarse_factor: 1,
        }
    }

    fn field(seed: u64) -> LocalField<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LocalField::new(
            &small_cfg(),
            4,
            4,
            Vec3::zeros(),
            1.0,
            (0, 8),
            FrameSpan::new(0, 8),
            1.0,
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn out_of_box_has_zero_density() {
        let f = field(1);
        let (s, _) = f.eval_field(Vec3::new(1.5, 0.0, 0.0), 2.0, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(s, 0.0);
        let (s, _) = f.eval_field(Vec3::new(0.0, 0.0, 0.0), 9.0, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(s, 0.0);
    }

    #[test]
    fn constant_network_gives_softplus_bias() {
        let mut f = field(2);
        let (w, b) = f.density_mlp.layer_offsets(f.density_mlp.num_layers() - 1);
        f.density_mlp.params[w..b].iter_mut().for_each(|v| *v = 0.0);
        let bias = f.density_mlp.params[b];
        let expected = bias.exp().ln_1p();
        let dir = Vec3::new(0.0, 0.0, 1.0);
        for p in [Vec3::new(0.1, 0.2, 0.3), Vec3::new(-0.9, 0.5, 0.0)] {
            let (s, rgb) = f.eval_field(p, 3.0, dir);
            assert!((s - expected).abs() < 1e-15);
            assert!(rgb.iter().all(|&c| (0.0..=1.0).contains(&c)));
        }
        // initial density equals the configured 0.1 per unit length
        assert!((expected - 0.1).abs() < 1e-12);
    }

    #[test]
    fn coarse_to_fine_levels() {
        let cfg = FieldConfig::default();
        assert_eq!(cfg.resolution_levels(64, 32), vec![(16, 8), (32, 16), (64, 32)]);
        assert_eq!(cfg.temporal_res_for(60), 30);
        assert_eq!(cfg.temporal_res_for(101), 51);
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        let f = field(3);
        let p = Vec3::new(0.21, -0.33, 0.47);
        let dir = Vec3::new(0.0, 0.6, 0.8);
        let frame = 3.3;
        let (ds, dc) = (1.3, [0.4, -0.7, 0.2]);
        let objective = |f: &LocalField<f64>, p: Vec3<f64>| {
            let (s, c) = f.eval_field(p, frame, dir);
            ds * s + dc[0] * c[0] + dc[1] * c[1] + dc[2] * c[2]
        };
        let enc = f.encode_view(dir);
        let mut cache = PointCache::for_field(&f);
        f.eval_cached(p, frame, &enc, &mut cache);
        let mut g = FieldGrad::zeros_like(&f);
        let mut pg = Vec3::zeros();
        f.backward(&cache, ds, dc, &mut g, Some(&mut pg), &mut FieldScratch::default());
        let h = 1e-4;
        let analytic = g.blocks().iter().map(|b| b.to_vec()).collect::<Vec<_>>();
        let mut max_rel: f64 = 0.0;
        for (bi, block) in analytic.iter().enumerate() {
            for i in 0..block.len() {
                let mut fp = f.clone();
                fp.param_blocks_mut()[bi][i] += h;
                let mut fm = f.clone();
                fm.param_blocks_mut()[bi][i] -= h;
                let fd = (objective(&fp, p) - objective(&fm, p)) / (2.0 * h);
                let rel = (fd - block[i]).abs() / fd.abs().max(block[i].abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
        for a in 0..3 {
            let mut e = [0.0; 3];
            e[a] = h;
            let fd = (objective(&f, p + Vec3::from_array(e)) - objective(&f, p - Vec3::from_array(e)))
                / (2.0 * h);
            assert!((fd - pg[a]).abs() < 1e-6 * fd.abs().max(1.0), "axis {a}");
        }
    }
}
