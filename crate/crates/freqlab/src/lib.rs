//! Frequency-domain analysis and detection of GAN-style upsampling
//! artifacts: DCT feature extraction, spectrum statistics and heatmaps,
//! synthetic artifact generation, perturbation robustness, and a zoo of
//! classifiers (linear, kNN, Eigenfaces+SVM, shallow CNN) trained from
//! scratch.

pub mod classifier;
pub mod cnn;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod perturb;
pub mod recipes;
pub mod resample;
pub mod spectrum;
pub mod transform;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
