//! Open-set detection of malicious activity sessions via two-stage
//! contrastive training.
//!
//! The pipeline: activity-token embeddings (skip-gram) feed an LSTM session
//! encoder. Stage 1 alternates supervised contrastive and hypersphere
//! compression steps so normal sessions share features inside a tight ball.
//! Stage 2 generates similar (convex mix) and diverse (affine mix, filtered
//! against the normal hypersphere) potential malicious points in encoded
//! space and trains the encoder contrastively against them, so malicious
//! behavior types never seen in training still land near the malicious
//! center at inference time.
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! type aliases below fix the `f64` instantiations the CLI uses.

pub mod augmentation;
pub mod cluster;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod losses;
pub mod metrics;
pub mod scalar;
pub mod seeding;
pub mod sessions;
pub mod split;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};

/// Default scalar type of the command-line pipeline.
pub type DefaultScalar = f64;

pub type EmbeddingTable64 = embedding::EmbeddingTable<f64>;
pub type Encoder64 = encoder::LstmEncoder<f64>;
pub type EncodedSession64 = encoder::EncodedSession<f64>;
pub type Hypersphere64 = augmentation::Hypersphere<f64>;
