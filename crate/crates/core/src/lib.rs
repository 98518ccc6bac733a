//! Tracks per-example softmax confidence through training to tell rare
//! (atypical) examples apart from mislabelled (noisy) ones, and measures how
//! augmentation policies change that separation.

pub mod analysis;
pub mod augmentation;
pub mod config;
mod csvio;
pub mod dataset;
pub mod error;
pub mod model;
pub mod rng;
pub mod runner;
pub mod tensor;
pub mod tracking;
pub mod trainer;

pub use error::{Error, Result};
