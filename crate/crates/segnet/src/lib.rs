//! Encoder-decoder segmentation networks with hand-written backpropagation,
//! generic over `f32` (training) and `f64` (gradient checks).

pub mod augment;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod net;
pub mod optim;
pub mod real;
pub mod tensor;
pub mod train;

pub use augment::{augment, AugmentConfig};
pub use error::{Error, Result};
pub use net::{
    configure_stages, count_params_macs, forward, one_hot, predict_labels, Dimensionality, NetworkConfig, Weights,
    NUM_CLASSES,
};
pub use optim::{poly_lr, sgd_step, TrainConfig, Velocity};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{train, train_from, EpochLog, Sample, TrainOutcome};
