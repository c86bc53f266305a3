//! blip3-forge: desk-scale mechanics of a multimodal training stack.
//!
//! The crate covers the data path from raw images and interleaved documents
//! to packed training sequences, plus the small trainable pieces that sit on
//! top: any-resolution tiling, a frozen toy vision encoder, a perceiver
//! resampler with hand-written gradients, deterministic stream mixing,
//! OCR/grounding caption curation, a one-block causal decoder, and the DPO /
//! LoRA / safety post-training utilities. Everything is f64, seeded, and
//! exactly reproducible.

pub mod corpus;
pub mod curation;
pub mod decoder;
pub mod error;
pub mod imaging;
pub mod matrix;
pub mod mixer;
pub mod preference;
pub mod resampler;
pub mod sequencer;
pub mod training;
pub mod vision_stub;

pub use error::{ForgeError, Result};
pub use matrix::Matrix;
