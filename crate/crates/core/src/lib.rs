//! Training engine for class-conditional distribution alignment under
//! partial domain adaptation: a dense encoder/classifier stack, the five
//! objective terms, prototype-based pseudo-labeling with adaptive
//! confidence thresholds, synthetic data generation, and the training,
//! sweep, and ablation harness.

pub mod adam;
pub mod data;
pub mod error;
pub mod grad_check;
pub mod losses;
pub mod nn;
pub mod objective;
pub mod pseudo_label;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
