//! Sensor-free force-distilled policy learning on a synthetic contact-rich
//! simulator: differentiable numerics, modality encoders, a force
//! distillation module, directional attention masking over a frozen
//! transformer, a flow-matching action expert, the simulator itself, and the
//! training/evaluation harness.

pub mod actionexpert;
pub mod checkpoint;
pub mod config;
pub mod contactsim;
pub mod embedding;
pub mod error;
pub mod fdm;
pub mod fusion;
pub mod numerics;
pub mod policy;
pub mod probe;
pub mod trainer;
pub mod verify;

pub use config::{ModelConfig, TrainConfig, Variant};
pub use error::{Error, Result};
