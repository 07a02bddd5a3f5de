//! Sensitivity-aware adaptive differential privacy for language-model training.
//!
//! The pipeline runs in three stages. PII spans are detected in the training
//! text ([`pii_detect`]), each PII type receives a sensitivity score
//! ([`scoring`]), and scores select a per-token Gaussian noise multiplier
//! ([`noise_policy`]) that [`dp_core`] applies to clipped per-token gradients
//! while [`trainer`] fits a small next-token model. [`accountant`] tracks the
//! cumulative Rényi-DP loss and [`evalx`] lays out the no-DP / uniform DP-SGD /
//! sensitivity-aware comparison.

pub mod accountant;
pub mod cli;
pub mod corpus;
pub mod dp_core;
pub mod evalx;
pub mod noise_policy;
pub mod pii_detect;
pub mod scoring;
pub mod trainer;
