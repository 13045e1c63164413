//! Multi-modal pedestrian trajectory prediction.
//!
//! The crate covers the whole pipeline: a Social-Forces crowd simulator
//! that produces training scenes, homotopy-class dataset augmentation,
//! a small reverse-mode autodiff engine with the layers built on it, the
//! Social-VRNN predictor with its Gaussian-mixture output, linear
//! uncertainty propagation and the displacement metrics used to score it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod model;
pub mod nn;
pub mod predict;
pub mod sim;
pub mod topo;

pub use data::{
    AgentState, Dataset, LocalGrid, Neighbor, OccupancyGrid, Provenance, QueryContext, Split,
    Trajectory,
};
pub use error::{Error, Result};
pub use geom::Vec2;
pub use model::{GmmPrediction, ModelConfig, ModelKind, SocialVrnn, TrainConfig};
pub use predict::PositionPrediction;

/// Fixed sampling step used throughout: 12 steps span 4.8 s.
pub const DEFAULT_DT: f64 = 0.4;
