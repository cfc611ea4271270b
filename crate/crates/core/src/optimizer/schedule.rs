use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Base learning rates per parameter group and the decay applied over each
/// model's iteration budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRates {
    pub planes: f64,
    pub mlp: f64,
    pub pose: f64,
    /// Multiplies the pose rate on the translation part of the tangent.
    /// Adam steps every coordinate by about the rate, so scenes measured in
    /// large units need a proportionally larger translation step.
    pub pose_translation_scale: f64,
    /// Fraction of the base rate reached at the end of the budget.
    pub final_ratio: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            planes: 2e-2,
            mlp: 1e-3,
            pose: 3e-3,
            pose_translation_scale: 1.0,
            final_ratio: 0.1,
        }
    }
}

/// Exponential decay from 1 to `final_ratio` over `budget` iterations,
/// constant afterwards.
pub fn decayed_lr<T: Real>(iter: usize, budget: usize, final_ratio: f64) -> T {
    if budget == 0 {
        return T::one();
    }
    let frac = (iter as f64 / budget as f64).min(1.0);
    T::lit(final_ratio.powf(frac))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_endpoints() {
        assert_eq!(decayed_lr::<f64>(0, 100, 0.1), 1.0);
        assert!((decayed_lr::<f64>(100, 100, 0.1) - 0.1).abs() < 1e-15);
        assert!((decayed_lr::<f64>(50, 100, 0.1) - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((decayed_lr::<f64>(500, 100, 0.1) - 0.1).abs() < 1e-15);
        assert_eq!(decayed_lr::<f64>(3, 0, 0.1), 1.0);
    }
}
