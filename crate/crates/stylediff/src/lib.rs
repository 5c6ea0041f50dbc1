//! Training-free attention-driven style transfer on a miniature latent
//! diffusion engine.
//!
//! The crate wires four mechanisms around a fixed-weight (seeded, untrained)
//! transformer denoiser and an exactly-invertible patch codec:
//!
//! * style-guided self-attention — live content queries attend over
//!   key/value snapshots captured during the style image's inversion;
//! * refined (resampled) inversion — each inversion step is re-solved as a
//!   fixed-point iteration instead of trusting the linear assumption;
//! * content-aware adaptive instance normalization — the sampling
//!   initialization blends content and style channel statistics;
//! * dual-feature cross-attention — text, content-image and style-image
//!   token streams are attended separately and summed.
//!
//! Everything is deterministic: seeds fully determine weights, prompts hash
//! to token embeddings, and the samplers are noise-free. An analytic linear
//! denoiser with a known spectral norm provides closed-form oracles for the
//! inversion math (see [`oracle`]).

#[cfg(feature = "cli")]
pub mod cli;
pub mod codec;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod ppm;
pub mod selftest;
pub mod style;
pub mod sweep;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{randn, SeededRng, Tensor};
