//! Layers, optimizer and checkpointing on top of [`crate::autodiff`].
//!
//! Layers are shape descriptors that hold [`ParamId`]s into a
//! [`ParamStore`]. Running a layer needs the store bound onto a graph
//! ([`ParamStore::bind`]), which is what lets the same layer run in `f32`
//! for training and in `f64` for gradient checks.

mod autoencoder;
mod checkpoint;
mod layers;
mod optim;
mod params;

pub use autoencoder::{pretrain_encoder, GridAutoencoder, PretrainConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use layers::{Linear, Lstm, LstmState};
pub use optim::{clip_gradients, lr_schedule, LrSchedule, RmsProp};
pub use params::{glorot_uniform, Bound, ParamId, ParamStore};
