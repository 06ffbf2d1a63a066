//! Channel-based spoofing detection for multi-antenna links.
//!
//! The crate synthesizes location-specific indoor channel responses with an
//! image-source ray model, applies a noisy phase-rotated estimation model,
//! runs the pairwise chi-square test between two frames, and sweeps system
//! parameters to produce average miss-rate curves and multi-antenna
//! security gains.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod detector;
pub mod experiment;
pub mod numerics;
pub mod raychannel;

pub use detector::{EstimatedResponse, NoiseModel, RadioConfig, TestOutcome};
pub use numerics::Probability;
pub use raychannel::{AntennaArray, BuildingBox, ChannelResponse, Ray, ToneGrid, Vec3};
