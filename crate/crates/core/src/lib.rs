//! Multi-level ensemble classification framework.
//!
//! Frozen feature extractors (toy convolutional backbones or externally
//! computed feature tables) feed trainable dense classifier heads, which can
//! be composed at the feature, fully-connected, and output levels into four
//! ensemble topologies (FFC, FCO, FO, FFCO). The crate also contains the
//! data pipeline (normalization, resizing, flip/rotation augmentation, class
//! balancing, seeded 60/20/10/10 splits), a reverse-mode autodiff engine
//! with finite-difference verification, and a Monte Carlo cross-validation
//! harness with confusion-matrix metrics and report emission.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
