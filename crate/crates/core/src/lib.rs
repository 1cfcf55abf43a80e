//! Probing 360-degree panoramic image-text alignment of contrastive
//! vision-language models.
//!
//! The pipeline reads an image-text manifest ([`corpus`]), materializes
//! flipped and circularly shifted panoramas ([`transforms`]), scores them
//! through an embedding provider ([`scoring`]) and runs one-sided Wilcoxon
//! signed-rank tests ([`stats`]) in two protocols ([`probes`]). [`finetune`]
//! holds the shift-invariance loss and its weight selection, [`report`]
//! renders results.

pub mod corpus;
pub mod error;
pub mod finetune;
pub mod probes;
pub mod report;
pub mod scoring;
pub mod stats;
pub mod synthetic;
pub mod transforms;

pub use error::{Error, Result};

pub(crate) fn sha256_hex(s: &str) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(s.as_bytes()))
}
