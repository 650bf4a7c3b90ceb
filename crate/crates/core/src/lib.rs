//! Domain adaptive semi-supervised training of a convolutional sentiment
//! classifier: feature adaptation between source and target batches,
//! entropy minimisation and self-ensemble bootstrapping on unlabeled data.

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{DasError, Result};
