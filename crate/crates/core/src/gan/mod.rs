//! Per-zone adversarial anomaly detector.
//!
//! A generator learns the joint distribution of normal windows while a
//! discriminator learns to tell generated from real ones. A new window is
//! scored by searching the latent space for the closest generated window
//! (residual loss) and combining that distance with the discriminator's
//! verdict on both windows.

mod checkpoint;
mod model;
pub mod net;
mod train;

pub use checkpoint::{
    load_model, model_from_json, model_to_json, save_model, CHECKPOINT_FORMAT, CHECKPOINT_MAJOR, CHECKPOINT_MINOR,
};
pub use model::{
    invert_latent, AnomalyScore, Calibration, GanModel, InversionConfig, Norm, Normalization, TrainingMeta,
};
pub use net::{Activation, DenseNet, Gradients, Layer};
pub use train::{
    discriminator_loss, generator_loss, train, train_uncalibrated, GanHyper, LossRecord, Optimizer, TrainingLog,
    D_EQUILIBRIUM, G_EQUILIBRIUM, LOSS_CURVE_FORMAT,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("need at least {needed} training windows, found {found}")]
    InsufficientData { found: usize, needed: usize },
    #[error("training loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("training window ending at {timestamp} is labeled {label}")]
    ContaminatedLabels { timestamp: usize, label: String },
    #[error("latent gradient became non-finite")]
    NonFiniteGradient,
    #[error("model has no score calibration")]
    UncalibratedModel,
    #[error("window has {found} values, model expects {expected}")]
    WindowShape { expected: usize, found: usize },
    #[error("window contains non-finite values")]
    NonFiniteInput,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("checkpoint version {found} is not supported (major {supported})")]
    VersionMismatch { found: String, supported: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
