//! Social-VRNN: three-channel features, a time-dependent variational
//! prior, a recurrent decoder with a Gaussian-mixture head, and the
//! STORN and deterministic baselines that share its feature extractor.

mod config;
mod gmm;
mod net;
mod train;

pub use config::{LossMode, ModelConfig, ModelKind, TrainConfig, TRAIN_KEYS};
pub use gmm::{
    anneal_lambda, anneal_lambda_with, log_normal_diag, loss_diversity, loss_kl, loss_reconstruction,
    loss_total, sample_diverse_inputs, GmmPrediction, LOG_DENSITY_FLOOR, SIGMA_FLOOR,
};
pub use net::{
    training_windows, window_batch, window_samples, CallCounts, LossOptions, Sample, SocialVrnn,
    StepBatch, WindowBatch, WindowLoss, ENCODER_PREFIX,
};
pub use train::{format_trace, full_loss_gradcheck, train, TraceRow, TrainReport};
