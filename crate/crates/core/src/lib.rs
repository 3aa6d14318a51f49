//! Multimodal generative pre-training laboratory.
//!
//! A compact decoder-only transformer trained over tokenized modalities with
//! commutative ordering, causal masked modeling and transitive pseudo-pair
//! steps, plus the synthetic tri-modal dataset and evaluation battery used
//! to study modality pairs that never co-occur during training.

pub mod assembly;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod tokenization;

pub use error::{Error, Result};
