use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::augment;
use crate::error::{Error, Result};
use crate::loss::loss;
use crate::net::{backward, forward_tape, one_hot, NetworkConfig, Weights, NUM_CLASSES};
use crate::optim::{clip_grad_norm, poly_lr, sgd_step, TrainConfig, Velocity};
use crate::tensor::Tensor;

/// One training pair: network input channels and the label map on the same
/// grid. Channels from `intensity_channels` on are treated as categorical.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Tensor<f32>,
    pub labels: Vec<u8>,
    pub intensity_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub mean_dice_loss: f64,
    pub mean_bce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: Weights<f32>,
    pub velocity: Velocity<f32>,
    pub log: Vec<EpochLog>,
}

/// Minibatch training from a He-initialised network seeded by `t.seed`.
pub fn train(data: &[Sample], cfg: &NetworkConfig, t: &TrainConfig) -> Result<TrainOutcome> {
    let w = Weights::init(cfg, t.seed)?;
    train_from(data, w, t)
}

/// Runs `epochs × iters_per_epoch` steps. Each step draws `batch_size` cases
/// uniformly, augments them, and averages their gradients.
pub fn train_from(data: &[Sample], mut w: Weights<f32>, t: &TrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    t.validate()?;
    w.check_shapes()?;
    for s in data {
        w.config.check_input(s.input.channels(), s.input.spatial())?;
        if s.labels.len() != s.input.voxels() {
            return Err(Error::Shape("labels and input grid differ".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x5eed_0f_a11);
    let mut velocity = Velocity::zeros_like(&w);
    let mut log = Vec::with_capacity(t.epochs);
    let inv_batch = 1.0 / t.batch_size as f32;
    for epoch in 0..t.epochs {
        let lr = poly_lr(epoch, t);
        let (mut sum, mut sum_dice, mut sum_bce) = (0.0, 0.0, 0.0);
        for _ in 0..t.iters_per_epoch {
            let mut grads = w.zeros_like();
            for _ in 0..t.batch_size {
                let s = &data[rng.random_range(0..data.len())];
                let (x, labels) = augment(&s.input, &s.labels, s.intensity_channels, &mut rng, &t.augment);
                let target = one_hot::<f32>(&labels, x.spatial(), NUM_CLASSES)?;
                let tape = forward_tape(&w, &x)?;
                let (value, mut dp) = loss(tape.probs(), &target)?;
                dp.data_mut().iter_mut().for_each(|g| *g *= inv_batch);
                backward(&w, tape, &dp, &mut grads, false);
                sum += value.total();
                sum_dice += value.dice;
                sum_bce += value.bce;
            }
            if let Some(c) = t.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            sgd_step(&mut w, &grads, lr, t, &mut velocity);
        }
        let n = (t.iters_per_epoch * t.batch_size) as f64;
        let entry = EpochLog {
            epoch,
            lr,
            mean_loss: sum / n,
            mean_dice_loss: sum_dice / n,
            mean_bce: sum_bce / n,
        };
        info!("epoch {epoch:>3}  lr {lr:.5}  loss {:.4}", entry.mean_loss);
        log.push(entry);
    }
    if !w.is_finite() {
        return Err(Error::InvalidTrainConfig("training diverged to non-finite weights".into()));
    }
    Ok(TrainOutcome {
        weights: w,
        velocity,
        log,
    })
}
