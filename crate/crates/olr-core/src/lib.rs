//! Occlusion-based latent representations (OLR).
//!
//! Converts binary image labels into per-label embedding vectors: a Siamese
//! network with a label-grouped final layer is trained so that row-wise dot
//! products of two embeddings match the joint label probabilities produced by
//! a classifier on randomly occluded image pairs. The resulting `L x k`
//! embeddings are disentangled by construction — one row per label — and are
//! small enough to act as a compressed code: a decoder trained with a
//! combined SSIM + MSE objective maps them back to images, and per-label
//! Gaussians fitted over the rows support attribute editing (add a label by
//! sampling a row, remove one by zeroing it).
//!
//! The crate ships a minimal reverse-mode autodiff engine ([`tensor`]), a
//! deterministic synthetic multi-attribute dataset ([`dataset`]), the model
//! stages ([`classifier`], [`siamese`], [`decoder`]), the evaluation battery
//! ([`analytics`]), embedding editing ([`editing`]) and a pipeline driver
//! ([`pipeline`]) behind the `olr` command-line binary.

pub mod analytics;
pub mod classifier;
pub mod dataset;
pub mod decoder;
pub mod editing;
pub mod error;
pub mod pipeline;
pub mod rng;
pub mod siamese;
pub mod tensor;

pub use error::{OlrError, Result};
