use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::net::{Gradients, ParamKind, Weights};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub nesterov_momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub iters_per_epoch: usize,
    pub poly_exponent: f64,
    pub batch_size: usize,
    /// Global gradient-norm limit applied before each step.
    pub grad_clip: Option<f64>,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            nesterov_momentum: 0.99,
            weight_decay: 5e-4,
            epochs: 20,
            iters_per_epoch: 8,
            poly_exponent: 0.9,
            batch_size: 2,
            grad_clip: Some(12.0),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainConfig(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be a non-negative finite number");
        }
        if !(0.0..1.0).contains(&self.nesterov_momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.poly_exponent <= 0.0 {
            return bad("weight decay must be >= 0 and the poly exponent > 0");
        }
        if self.epochs == 0 || self.iters_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, iterations and batch size must be positive");
        }
        if self.grad_clip.is_some_and(|c| c <= 0.0) {
            return bad("gradient clip must be positive");
        }
        self.augment.validate()
    }
}

/// `lr0 · (1 − epoch/epochs)^exponent`.
pub fn poly_lr(epoch: usize, t: &TrainConfig) -> f64 {
    let frac = (epoch.min(t.epochs) as f64) / t.epochs as f64;
    t.lr0 * (1.0 - frac).powf(t.poly_exponent)
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity<T>(pub Vec<Vec<T>>);

impl<T: Real> Velocity<T> {
    pub fn zeros_like(w: &Weights<T>) -> Self {
        Velocity(w.params.iter().map(|p| vec![T::zero(); p.data.len()]).collect())
    }
}

/// Nesterov step `v ← μv + g; w ← w − lr(g + μv)`, followed by decoupled
/// decay `w ← w − lr·wd·w` on convolution kernels only.
pub fn sgd_step<T: Real>(w: &mut Weights<T>, grads: &Gradients<T>, lr: f64, t: &TrainConfig, velocity: &mut Velocity<T>) {
    let (mu, lr_t) = (T::lit(t.nesterov_momentum), T::lit(lr));
    let decay = T::one() - T::lit(lr * t.weight_decay);
    for ((p, g), v) in w.params.iter_mut().zip(&grads.0).zip(velocity.0.iter_mut()) {
        for ((wi, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + gi;
            *wi -= lr_t * (gi + mu * *vi);
        }
        if p.kind == ParamKind::Kernel && t.weight_decay > 0.0 {
            p.data.iter_mut().for_each(|wi| *wi *= decay);
        }
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let n = grads.norm();
    if n > max_norm {
        grads.scale(T::lit(max_norm / n));
    }
    n
}
