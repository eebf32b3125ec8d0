//! Cubic-kernel point convolution for point clouds.
//!
//! A continuous kernel MLP maps each neighbor's relative position to a
//! `v*v*v` cube of weights; weighting the neighbor features and summing
//! voxelizes the local point set in embedding space, and a small stack of
//! discrete 3-D convolutions collapses the cube to an output feature.
//! Local set attention, cubic-weight normalization, a two-stage
//! shape classifier, a synthetic shape dataset, and a train/verify
//! harness sit on top. Everything runs on a from-scratch f64 autodiff
//! engine and is deterministic under explicit seeds.

pub mod ablate;
pub mod error;
pub mod checkpoint;
pub mod ckconv;
pub mod config;
pub mod kernel;
pub mod lsa;
pub mod metrics;
pub mod network;
pub mod nn;
pub mod pointcloud;
pub mod seeds;
pub mod synth;
pub mod train;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
