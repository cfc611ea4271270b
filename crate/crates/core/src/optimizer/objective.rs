//! The batch training objective and its exact gradients.
//!
//! Rays are cast from `ray_poses`, which are treated as constants. Poses
//! influence the loss only through the relative transforms inside the
//! induced flow, evaluated with `flow_poses`. In training both slices hold
//! the same values; keeping them apart makes the pose derivative of the
//! objective well defined for finite-difference checks.

use crate::error::{Error, Result};
use crate::field::{FieldGrad, FieldScratch, LocalField, PointCache};
use crate::geometry::{cast_ray, Intrinsics, Pose};
use crate::losses::{
    depth_los_term, flow_from_camera_point, flow_jacobian, flow_term, rgb_term, total_loss, LossParts, LossWeights,
};
use crate::renderer::{
    blend_sample, blend_sample_backward, composite, select_fields, stratified, RenderMode, SamplingSpec,
};
use crate::scalar::Real;
use rayon::prelude::*;

/// Rays are reduced in this many fixed contiguous chunks whose partial sums
/// are added in order, independent of the thread count.
pub const REDUCE_CHUNKS: usize = 8;

/// Training rays with their targets and stratification offsets.
#[derive(Clone, Debug, Default)]
pub struct RayBatch<T> {
    pub frames: Vec<usize>,
    pub pixels: Vec<[T; 2]>,
    /// `n_samples` offsets in `[0, 1)` per ray, row-major.
    pub offsets: Vec<T>,
    pub n_samples: usize,
    /// Depth targets are distances along the unit ray direction.
    pub target: crate::losses::SupervisionBatch<T>,
}

impl<T: Real> RayBatch<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.pixels.len() != n || self.offsets.len() != n * self.n_samples {
            return Err(Error::ShapeMismatch(format!(
                "ray batch: {n} frames, {} pixels, {} offsets for {} samples",
                self.pixels.len(),
                self.offsets.len(),
                self.n_samples
            )));
        }
        if self.target.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "ray batch of {n} rays has {} targets",
                self.target.len()
            )));
        }
        self.target.check_shapes()
    }

    fn offsets_of(&self, i: usize) -> &[T] {
        &self.offsets[i * self.n_samples..(i + 1) * self.n_samples]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSpec<T> {
    pub sampling: SamplingSpec<T>,
    pub weights: LossWeights<T>,
    /// Half-width of the surface band in the line-of-sight term.
    pub epsilon: T,
    pub mode: RenderMode,
}

/// Everything the loss depends on besides the batch.
#[derive(Clone, Copy)]
pub struct Objective<'a, T> {
    pub fields: &'a [&'a LocalField<T>],
    /// Field receiving parameter gradients.
    pub active: Option<usize>,
    pub intr: &'a Intrinsics<T>,
    pub ray_poses: &'a [Pose<T>],
    pub flow_poses: &'a [Pose<T>],
    pub spec: ObjectiveSpec<T>,
}

/// Loss values and gradients of one batch.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub parts: LossParts<T>,
    pub total: T,
    /// Valid entries behind each mean: rgb, depth, flow pairs.
    pub counts: [usize; 3],
    pub field_grad: Option<FieldGrad<T>>,
    /// Per-frame gradient with respect to a left perturbation of the pose.
    pub pose_grad: Vec<[T; 6]>,
    pub pose_touched: Vec<bool>,
    /// Rays rendered from more than one field.
    pub blended_rays: usize,
}

struct Partial<T> {
    sums: [T; 3],
    grad: Option<FieldGrad<T>>,
    pose_grad: Vec<[T; 6]>,
    pose_touched: Vec<bool>,
    blended: usize,
}

/// Per-thread buffers reused across rays.
struct Workspace<T> {
    caches: Vec<PointCache<T>>,
    sigmas: Vec<T>,
    colors: Vec<[T; 3]>,
    dens: Vec<T>,
    cols: Vec<[T; 3]>,
    dweights: Vec<T>,
    ddepth: Vec<T>,
    scratch: FieldScratch<T>,
}

/// At most this many fields take part in one ray.
const SLOTS: usize = 2;

impl<T: Real> Workspace<T> {
    /// Makes the caches of each slot match the field evaluated there.
    fn fit(&mut self, fields: &[&LocalField<T>], chosen: &[(usize, T)], n_samples: usize) {
        for (m, &(fi, _)) in chosen.iter().enumerate() {
            let f = fields[fi];
            for s in 0..n_samples {
                let c = &mut self.caches[s * SLOTS + m];
                if c.density_acts.len() != f.density_mlp.activations_len()
                    || c.color_acts.len() != f.color_mlp.activations_len()
                    || c.feat.values.len() != 6 * f.grid.channels_per_plane
                {
                    *c = PointCache::for_field(f);
                }
            }
        }
    }
}

impl<'a, T: Real> Objective<'a, T> {
    fn adjacent(&self, batch: &RayBatch<T>, i: usize) -> [Option<usize>; 2] {
        let k = batch.frames[i];
        let n = self.flow_poses.len();
        let t = &batch.target;
        let fwd = (t.flow_fwd_mask[i] && k + 1 < n).then_some(k + 1);
        let bwd = (t.flow_bwd_mask[i] && k > 0).then(|| k - 1);
        [fwd, bwd]
    }

    fn workspace(&self, n_samples: usize) -> Workspace<T> {
        let per = SLOTS;
        let caches = vec![PointCache::for_field(self.fields[0]); n_samples * per];
        Workspace {
            caches,
            sigmas: Vec::with_capacity(n_samples),
            colors: Vec::with_capacity(n_samples),
            dens: vec![T::zero(); per],
            cols: vec![[T::zero(); 3]; per],
            dweights: vec![T::zero(); n_samples],
            ddepth: vec![T::zero(); n_samples],
            scratch: FieldScratch::default(),
        }
    }

    fn check(&self, batch: &RayBatch<T>) -> Result<()> {
        batch.validate()?;
        self.spec.sampling.validate()?;
        self.spec.weights.validate()?;
        if batch.n_samples != self.spec.sampling.n_samples {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} samples per ray, sampling expects {}",
                batch.n_samples, self.spec.sampling.n_samples
            )));
        }
        if self.fields.is_empty() {
            return Err(Error::Internal("no fields to render".into()));
        }
        if self.flow_poses.len() != self.ray_poses.len() {
            return Err(Error::ShapeMismatch("ray and flow pose counts differ".into()));
        }
        if let Some(&k) = batch.frames.iter().find(|&&k| k >= self.ray_poses.len()) {
            return Err(Error::Domain(format!("ray from frame {k} has no pose")));
        }
        if let Some(a) = self.active {
            if a >= self.fields.len() {
                return Err(Error::Internal(format!("active field {a} out of range")));
            }
        }
        Ok(())
    }

    /// Expected ray distance from densities alone.
    fn depth_only(&self, batch: &RayBatch<T>, i: usize, ws: &mut Workspace<T>) -> Result<T> {
        let k = batch.frames[i];
        let ray = cast_ray(batch.pixels[i], &self.ray_poses[k], self.intr, k)?;
        let chosen = select_fields(self.fields, k, self.spec.mode)?;
        let t = stratified(self.spec.sampling.near, self.spec.sampling.far, batch.offsets_of(i));
        let frame = T::from_usize_lossy(k);
        let betas: Vec<T> = chosen.iter().map(|c| c.1).collect();
        ws.fit(self.fields, &chosen, 1);
        ws.sigmas.clear();
        ws.colors.clear();
        for &ts in &t {
            let p = ray.at(ts);
            for (m, &(fi, _)) in chosen.iter().enumerate() {
                ws.dens[m] = self.fields[fi].eval_density(p, frame, &mut ws.caches[m]);
                ws.cols[m] = [T::zero(); 3];
            }
            let (s, c) = blend_sample(&betas, &ws.dens[..chosen.len()], &ws.cols[..chosen.len()]);
            ws.sigmas.push(s);
            ws.colors.push(c);
        }
        Ok(composite(&ws.sigmas, &ws.colors, &t, self.spec.sampling.far).depth)
    }

    /// Valid (ray, direction) flow pairs for the whole batch.
    fn flow_validity(&self, batch: &RayBatch<T>) -> Result<Vec<[bool; 2]>> {
        let n = batch.len();
        let chunk = n.div_ceil(REDUCE_CHUNKS).max(1);
        let parts: Vec<Result<Vec<[bool; 2]>>> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(chunk)
            .map(|idx| {
                let mut ws = self.workspace(batch.n_samples);
                idx.iter()
                    .map(|&i| {
                        let adj = self.adjacent(batch, i);
                        if adj.iter().all(Option::is_none) {
                            return Ok([false; 2]);
                        }
                        let d = self.depth_only(batch, i, &mut ws)?;
                        let mut ok = [false; 2];
                        for (o, a) in ok.iter_mut().zip(adj) {
                            if let Some(a) = a {
                                *o = self.flow_pair(batch, i, a, d).is_some();
                            }
                        }
                        Ok(ok)
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Induced flow of ray `i` toward frame `adj` at predicted distance `d`,
    /// with the intermediate points needed for the Jacobian.
    #[allow(clippy::type_complexity)]
    fn flow_pair(
        &self,
        batch: &RayBatch<T>,
        i: usize,
        adj: usize,
        d: T,
    ) -> Option<([T; 2], crate::linalg::Vec3<T>, crate::linalg::Vec3<T>, crate::linalg::Vec3<T>)> {
        if !(d > T::zero()) {
            return None;
        }
        let k = batch.frames[i];
        let px = batch.pixels[i];
        let dir = self.intr.bearing(px).normalize();
        let (pred, w, y) =
            flow_from_camera_point(px, dir * d, &self.flow_poses[k], &self.flow_poses[adj], self.intr);
        pred.valid.then_some((pred.flow, w, y, dir))
    }

    /// Losses and, if requested, gradients for the batch.
    pub fn evaluate(&self, batch: &RayBatch<T>, with_grad: bool) -> Result<Evaluation<T>> {
        self.check(batch)?;
        let t = &batch.target;
        let n_rgb = t.color_mask.iter().filter(|&&m| m).count();
        let n_depth = t.depth_mask.iter().filter(|&&m| m).count();
        if n_rgb == 0 {
            return Err(Error::UndefinedLoss("rgb"));
        }
        let flow_on = self.spec.weights.flow_active;
        let flow_ok = if flow_on {
            self.flow_validity(batch)?
        } else {
            vec![[false; 2]; batch.len()]
        };
        let n_flow: usize = flow_ok.iter().map(|f| f[0] as usize + f[1] as usize).sum();
        let inv = |n: usize| {
            if n > 0 {
                T::one() / T::from_usize_lossy(n)
            } else {
                T::zero()
            }
        };
        let scales = [inv(n_rgb), self.spec.weights.lambda_z * inv(n_depth), self.spec.weights.lambda_f * inv(n_flow)];

        let n = batch.len();
        let chunk = n.div_ceil(REDUCE_CHUNKS).max(1);
        let idx: Vec<usize> = (0..n).collect();
        let partials: Vec<Result<Partial<T>>> = idx
            .par_chunks(chunk)
            .map(|ids| {
                let mut ws = self.workspace(batch.n_samples);
                let mut part = Partial {
                    sums: [T::zero(); 3],
                    grad: match (with_grad, self.active) {
                        (true, Some(a)) => Some(FieldGrad::zeros_like(self.fields[a])),
                        _ => None,
                    },
                    pose_grad: vec![[T::zero(); 6]; if with_grad { self.flow_poses.len() } else { 0 }],
                    pose_touched: vec![false; if with_grad { self.flow_poses.len() } else { 0 }],
                    blended: 0,
                };
                for &i in ids {
                    self.ray(batch, i, flow_ok[i], &scales, with_grad, &mut ws, &mut part)?;
                }
                Ok(part)
            })
            .collect();

        let mut sums = [T::zero(); 3];
        let mut grad = None::<FieldGrad<T>>;
        let mut pose_grad = vec![[T::zero(); 6]; if with_grad { self.flow_poses.len() } else { 0 }];
        let mut pose_touched = vec![false; pose_grad.len()];
        let mut blended = 0;
        for p in partials {
            let p = p?;
            for c in 0..3 {
                sums[c] += p.sums[c];
            }
            match (&mut grad, p.grad) {
                (Some(g), Some(pg)) => g.add_assign(&pg),
                (g @ None, Some(pg)) => *g = Some(pg),
                _ => {}
            }
            for (a, b) in pose_grad.iter_mut().zip(&p.pose_grad) {
                for c in 0..6 {
                    a[c] += b[c];
                }
            }
            for (a, b) in pose_touched.iter_mut().zip(&p.pose_touched) {
                *a |= *b;
            }
            blended += p.blended;
        }
        let parts = LossParts {
            rgb: sums[0] * inv(n_rgb),
            depth: sums[1] * inv(n_depth),
            flow: sums[2] * inv(n_flow),
        };
        Ok(Evaluation {
            total: total_loss(&parts, &self.spec.weights),
            parts,
            counts: [n_rgb, n_depth, n_flow],
            field_grad: grad,
            pose_grad,
            pose_touched,
            blended_rays: blended,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn ray(
        &self,
        batch: &RayBatch<T>,
        i: usize,
        flow_ok: [bool; 2],
        scales: &[T; 3],
        with_grad: bool,
        ws: &mut Workspace<T>,
        part: &mut Partial<T>,
    ) -> Result<()> {
        let k = batch.frames[i];
        let tg = &batch.target;
        let ray = cast_ray(batch.pixels[i], &self.ray_poses[k], self.intr, k)?;
        let chosen = select_fields(self.fields, k, self.spec.mode)?;
        let nm = chosen.len();
        if nm > 1 {
            part.blended += 1;
        }
        if nm > SLOTS {
            return Err(Error::Internal(format!("{nm} fields blended at once")));
        }
        let per = SLOTS;
        let t = stratified(self.spec.sampling.near, self.spec.sampling.far, batch.offsets_of(i));
        let frame = T::from_usize_lossy(k);
        let betas: Vec<T> = chosen.iter().map(|c| c.1).collect();
        let encs: Vec<Vec<T>> = chosen.iter().map(|c| self.fields[c.0].encode_view(ray.direction)).collect();
        ws.fit(self.fields, &chosen, batch.n_samples);
        ws.sigmas.clear();
        ws.colors.clear();
        for (s, &ts) in t.iter().enumerate() {
            let p = ray.at(ts);
            for (m, &(fi, _)) in chosen.iter().enumerate() {
                let c = &mut ws.caches[s * per + m];
                self.fields[fi].eval_cached(p, frame, &encs[m], c);
                ws.dens[m] = c.density;
                ws.cols[m] = c.rgb;
            }
            let (sg, cl) = blend_sample(&betas, &ws.dens[..nm], &ws.cols[..nm]);
            ws.sigmas.push(sg);
            ws.colors.push(cl);
        }
        let out = composite(&ws.sigmas, &ws.colors, &t, self.spec.sampling.far);

        let ns = t.len();
        ws.dweights[..ns].iter_mut().for_each(|v| *v = T::zero());
        let mut dcolor = [T::zero(); 3];
        if tg.color_mask[i] {
            let (v, g) = rgb_term(out.color, tg.color[i]);
            part.sums[0] += v;
            dcolor = [g[0] * scales[0], g[1] * scales[0], g[2] * scales[0]];
        }
        if tg.depth_mask[i] {
            ws.ddepth[..ns].iter_mut().for_each(|v| *v = T::zero());
            let v = depth_los_term(&out.weights, &t, tg.depth[i], self.spec.epsilon, Some(&mut ws.ddepth[..ns]));
            part.sums[1] += v;
            for (a, &b) in ws.dweights[..ns].iter_mut().zip(&ws.ddepth[..ns]) {
                *a += scales[1] * b;
            }
        }
        let mut d_dhat = T::zero();
        let adj = self.adjacent(batch, i);
        for dirn in 0..2 {
            let Some(a) = adj[dirn].filter(|_| flow_ok[dirn]) else {
                continue;
            };
            let gt = if dirn == 0 { tg.flow_fwd[i] } else { tg.flow_bwd[i] };
            let Some((flow, w, y, dir)) = self.flow_pair(batch, i, a, out.depth) else {
                return Err(Error::Internal(format!("flow validity of ray {i} changed between passes")));
            };
            let (v, g) = flow_term(flow, gt);
            part.sums[2] += v;
            if with_grad {
                let jac = flow_jacobian(w, y, dir, &self.flow_poses[k], &self.flow_poses[a], self.intr);
                let sc = scales[2];
                d_dhat += sc * (g[0] * jac.d_depth[0] + g[1] * jac.d_depth[1]);
                for c in 0..6 {
                    part.pose_grad[k][c] += sc * (g[0] * jac.d_pose_k[0][c] + g[1] * jac.d_pose_k[1][c]);
                    part.pose_grad[a][c] += sc * (g[0] * jac.d_pose_adj[0][c] + g[1] * jac.d_pose_adj[1][c]);
                }
                part.pose_touched[k] = true;
                part.pose_touched[a] = true;
            }
        }
        let Some(grad) = part.grad.as_mut().filter(|_| with_grad) else {
            return Ok(());
        };
        let Some(slot) = chosen.iter().position(|c| Some(c.0) == self.active) else {
            return Ok(());
        };
        if d_dhat != T::zero() {
            out.depth_weight_gradient(&mut ws.ddepth[..ns]);
            for (a, &b) in ws.dweights[..ns].iter_mut().zip(&ws.ddepth[..ns]) {
                *a += d_dhat * b;
            }
        }
        let (dsig, dcols) = out.backward(&ws.colors, &ws.dweights[..ns], dcolor);
        let field = self.fields[chosen[slot].0];
        for s in 0..ns {
            if dsig[s] == T::zero() && dcols[s].iter().all(|&c| c == T::zero()) {
                continue;
            }
            for m in 0..nm {
                let c = &ws.caches[s * per + m];
                ws.dens[m] = c.density;
                ws.cols[m] = c.rgb;
            }
            let blended = (ws.sigmas[s], ws.colors[s]);
            let (ds, dc) = blend_sample_backward(&betas, &ws.dens[..nm], &ws.cols[..nm], blended, dsig[s], dcols[s], slot);
            field.backward(&ws.caches[s * per + slot], ds, dc, grad, None, &mut ws.scratch);
        }
        Ok(())
    }
}
