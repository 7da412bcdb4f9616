//! Hybrid malware classifier built from three independently pre-trained
//! feature extractors — a filepath 1D-CNN, an emulated-API-sequence 1D-CNN
//! and a static-feature FFNN — whose 128-dim representations are
//! concatenated and classified by a meta-model, plus the training and
//! FPR-anchored evaluation harness around them.

pub mod error;
pub mod hashing;
pub mod nn;
pub mod apiseq;
pub mod pathfeat;
pub mod staticfeat;
pub mod tokens;

pub use error::{Error, Result};
