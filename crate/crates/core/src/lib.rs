//! View n-gram aggregation for multi-view 3D shape retrieval.
//!
//! A shape is given as a sequence of per-view feature vectors in rendering
//! order. Each branch slides an `n × D` window over that sequence (an
//! n-gram learning unit), pools the resulting gram features with a
//! parameter-free attention step, and the branch outputs are concatenated and
//! fed to a two-layer head. The first head layer's output is the 512-d shape
//! descriptor used for retrieval.
//!
//! Modules:
//!
//! * [`numerics`]: dense tensors, a gradient tape, SGD with momentum, and a
//!   finite-difference gradient checker.
//! * [`vnn`]: the network itself.
//! * [`trainer`]: deterministic mini-batch training and checkpoints.
//! * [`metrics`]: ranking, PR/AP/AUC/F1/NDCG and micro/macro aggregation.
//! * [`data`]: view-feature and descriptor files, manifests, synthetic data.
//! * [`cli`]: the `vnn` command-line tool.

// `Real` is f64 or f32 by feature, so casts that look redundant are not.
#![allow(clippy::unnecessary_cast)]

pub mod cli;
pub mod data;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod trainer;
pub mod vnn;

pub use error::{Error, Result};
pub use numerics::{Real, Tensor};
