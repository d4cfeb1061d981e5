//! Soft Dice over the foreground channels plus binary cross-entropy over all
//! channels, summed with unit weights. Gradients are w.r.t. the probabilities.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DICE_EPS: f64 = 1e-5;
/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside the logarithms.
pub const CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub dice: f64,
    pub bce: f64,
}

impl LossValue {
    pub fn total(&self) -> f64 {
        self.dice + self.bce
    }
}

fn check(pred: &Tensor<impl Real>, target: &Tensor<impl Real>) -> Result<()> {
    if pred.channels() != target.channels() || pred.spatial() != target.spatial() {
        return Err(Error::Shape(format!(
            "prediction {}x{:?} vs target {}x{:?}",
            pred.channels(),
            pred.spatial(),
            target.channels(),
            target.spatial()
        )));
    }
    if pred.channels() < 2 {
        return Err(Error::Shape("need a background and at least one foreground channel".into()));
    }
    Ok(())
}

/// `1 - mean_c (2Σpq + ε)/(Σp + Σq + ε)` over channels 1.. (channel 0 is
/// background).
pub fn soft_dice<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(pred, target)?;
    let fg = pred.channels() - 1;
    let mut grad = Tensor::zeros(pred.channels(), pred.spatial());
    let mut mean = 0.0;
    for c in 1..pred.channels() {
        let (p, q) = (pred.channel(c), target.channel(c));
        let inter: f64 = p.iter().zip(q).map(|(a, b)| a.f64() * b.f64()).sum();
        let sp: f64 = p.iter().map(|a| a.f64()).sum();
        let sq: f64 = q.iter().map(|a| a.f64()).sum();
        let num = 2.0 * inter + DICE_EPS;
        let den = sp + sq + DICE_EPS;
        mean += num / den;
        // d(num/den)/dp_i = (2 q_i den - num) / den^2
        let k = -1.0 / (fg as f64 * den * den);
        for (g, &qi) in grad.channel_mut(c).iter_mut().zip(q) {
            *g = T::lit(k * (2.0 * qi.f64() * den - num));
        }
    }
    Ok((1.0 - mean / fg as f64, grad))
}

/// Mean binary cross-entropy over every channel and voxel.
pub fn bce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    check(pred, target)?;
    let n = pred.data().len() as f64;
    let mut grad = Tensor::zeros(pred.channels(), pred.spatial());
    let mut sum = 0.0;
    for ((g, &p), &q) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let (p, q) = (p.f64(), q.f64());
        let pc = p.clamp(CLAMP, 1.0 - CLAMP);
        sum -= q * pc.ln() + (1.0 - q) * (1.0 - pc).ln();
        // Clamped regions are flat.
        let d = if p == pc { -(q / pc - (1.0 - q) / (1.0 - pc)) / n } else { 0.0 };
        *g = T::lit(d);
    }
    Ok((sum / n, grad))
}

pub fn loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(LossValue, Tensor<T>)> {
    let (dice, mut grad) = soft_dice(pred, target)?;
    let (ce, g2) = bce(pred, target)?;
    grad.add_assign(&g2);
    Ok((LossValue { dice, bce: ce }, grad))
}
