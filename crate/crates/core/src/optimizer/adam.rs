use crate::error::{Error, Result};
use crate::field::{FieldGrad, LocalField};
use crate::geometry::{se3_exp, Pose};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize, lr: T, cfg: &AdamConfig) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
            lr,
            beta1: T::lit(cfg.beta1),
            beta2: T::lit(cfg.beta2),
            eps: T::lit(cfg.eps),
        }
    }

    /// Drops the moments, e.g. after the block changed shape.
    pub fn reset(&mut self, len: usize) {
        self.m = vec![T::zero(); len];
        self.v = vec![T::zero(); len];
        self.step = 0;
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Internal(format!(
            "adam shape mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.step as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let step = state.lr * c2.sqrt() / c1;
    let eps = state.eps * c2.sqrt();
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *p -= step * *m / (v.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a field's plane and decoder blocks.
#[derive(Clone, Debug)]
pub struct FieldOptimizer<T> {
    pub blocks: Vec<AdamState<T>>,
    pub lr_planes: T,
    pub lr_mlp: T,
}

impl<T: Real> FieldOptimizer<T> {
    pub fn new(field: &LocalField<T>, lr_planes: T, lr_mlp: T, cfg: &AdamConfig) -> Self {
        let blocks = field
            .param_blocks()
            .iter()
            .enumerate()
            .map(|(i, b)| AdamState::new(b.len(), if i < 6 { lr_planes } else { lr_mlp }, cfg))
            .collect();
        Self {
            blocks,
            lr_planes,
            lr_mlp,
        }
    }

    /// Updates every block with learning rates scaled by `lr_scale`.
    pub fn step(&mut self, field: &mut LocalField<T>, grad: &FieldGrad<T>, lr_scale: T) -> Result<()> {
        if field.frozen {
            return Err(Error::Internal("attempted to update a frozen field".into()));
        }
        for (i, ((p, g), st)) in field
            .param_blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.blocks.iter_mut())
            .enumerate()
        {
            st.lr = lr_scale * if i < 6 { self.lr_planes } else { self.lr_mlp };
            adam_step(p, g, st)?;
        }
        Ok(())
    }

    /// Re-creates the plane moments after the grid was resampled.
    pub fn reset_planes(&mut self, field: &LocalField<T>) {
        for (st, p) in self.blocks.iter_mut().zip(&field.grid.planes) {
            st.reset(p.data.len());
        }
    }
}

/// Sparse Adam over per-frame pose tangents. Each frame has its own moments
/// and step count, advanced only when the frame receives a gradient. The
/// update is applied as a left retraction `exp(δ)·P`.
#[derive(Clone, Debug)]
pub struct PoseOptimizer<T> {
    pub states: Vec<Option<AdamState<T>>>,
    pub lr: T,
    /// Step multiplier on the translation coordinates.
    pub translation_scale: T,
    pub cfg: AdamConfig,
    /// Frames whose pose never changes.
    pub fixed: Vec<usize>,
}

impl<T: Real> PoseOptimizer<T> {
    pub fn new(lr: T, cfg: &AdamConfig) -> Self {
        Self {
            states: Vec::new(),
            lr,
            translation_scale: T::one(),
            cfg: *cfg,
            fixed: vec![0],
        }
    }

    /// Returns the number of poses that changed.
    pub fn step(&mut self, poses: &mut [Pose<T>], grads: &[[T; 6]], touched: &[bool], lr_scale: T) -> Result<usize> {
        if grads.len() > poses.len() || touched.len() != grads.len() {
            return Err(Error::Internal("pose gradient shape mismatch".into()));
        }
        if self.states.len() < poses.len() {
            self.states.resize(poses.len(), None);
        }
        let mut updated = 0;
        for (k, g) in grads.iter().enumerate() {
            if !touched[k] || self.fixed.contains(&k) {
                continue;
            }
            let st = self.states[k].get_or_insert_with(|| AdamState::new(6, self.lr, &self.cfg));
            st.lr = self.lr * lr_scale;
            let mut delta = [T::zero(); 6];
            adam_step(&mut delta, g, st)?;
            for d in &mut delta[3..] {
                *d *= self.translation_scale;
            }
            if delta.iter().any(|&d| d != T::zero()) {
                poses[k] = se3_exp(&delta).compose(&poses[k]);
                updated += 1;
            }
        }
        Ok(updated)
    }

    /// Forgets every frame's moments.
    pub fn reset(&mut self) {
        self.states.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut st = AdamState::new(3, 0.1, &AdamConfig::default());
        adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let mut p = vec![0.0; 4];
        let g: [f64; 4] = [0.5, -3.0, 1e-3, -7.0];
        let mut st = AdamState::new(4, 0.01, &AdamConfig::default());
        adam_step(&mut p, &g, &mut st).unwrap();
        for (x, gi) in p.iter().zip(g) {
            // m̂/√v̂ = g/|g| on the first step
            assert!((x + 0.01 * gi.signum()).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn quadratic_converges() {
        let mut x = vec![1.0f64];
        let mut st = AdamState::new(1, 0.01, &AdamConfig::default());
        let mut hit = None;
        for i in 0..500 {
            let g = [2.0 * x[0]];
            adam_step(&mut x, &g, &mut st).unwrap();
            if x[0] * x[0] < 1e-3 && hit.is_none() {
                hit = Some(i);
            }
        }
        assert!(hit.is_some(), "f = {}", x[0] * x[0]);
    }

    #[test]
    fn mismatched_shapes_fail() {
        let mut st = AdamState::new(2, 0.1, &AdamConfig::default());
        assert!(matches!(adam_step(&mut [0.0; 3], &[0.0; 3], &mut st), Err(Error::Internal(_))));
        assert!(matches!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut st), Err(Error::Internal(_))));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn pose_updates_skip_gauge_and_untouched() {
        let mut poses = vec![Pose::<f64>::identity(); 3];
        let mut opt = PoseOptimizer::new(0.1, &AdamConfig::default());
        let g = [[1.0; 6]; 3];
        let n = opt.step(&mut poses, &g, &[true, false, true], 1.0).unwrap();
        assert_eq!(n, 1);
        assert_eq!(poses[0], Pose::identity());
        assert_eq!(poses[1], Pose::identity());
        assert!(poses[2].translation.norm() > 0.05);
    }

    #[test]
    fn translation_scale_only_stretches_translation() {
        let g = [[0.0, 0.0, 0.0, -1.0, 0.0, 0.0]; 2];
        let step = |scale: f64| {
            let mut poses = vec![Pose::<f64>::identity(); 2];
            let mut opt = PoseOptimizer::new(0.01, &AdamConfig::default());
            opt.translation_scale = scale;
            opt.step(&mut poses, &g, &[true, true], 1.0).unwrap();
            poses[1].translation.x
        };
        // first Adam step moves each coordinate by about the rate
        assert!((step(1.0) - 0.01).abs() < 1e-6);
        assert!((step(20.0) - 0.2).abs() < 2e-5);
    }
}
