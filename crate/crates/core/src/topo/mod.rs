//! Homotopy classes of planar paths among obstacles.
//!
//! Each 4-connected obstacle component gets a marker point. A path's class
//! is the reduced word of signed crossings of the downward vertical rays
//! cast from the markers; winding angles are reported alongside.

mod augment;
mod hastar;
mod signature;

pub use augment::{augment_dataset, AugmentConfig, AugmentStats};
pub use hastar::{ha_star, HaStarOptions, PlannedPath};
pub use signature::{
    append_crossings, homotopy_signature, obstacle_markers, reduce_word, HomotopySignature,
    Markers,
};
