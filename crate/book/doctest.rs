//! Runs every fenced Rust snippet in the guide as a doc-test, keeping the
//! book and the library in lockstep. Each chapter is attached to an empty
//! module via `include_str!`, so `cargo test --workspace` compiles and runs
//! the examples exactly as readers see them.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("src/tiling.md")]
pub mod tiling {}

#[doc = include_str!("src/vision-stub.md")]
pub mod vision_stub {}

#[doc = include_str!("src/resampler.md")]
pub mod resampler {}

#[doc = include_str!("src/sequences.md")]
pub mod sequences {}

#[doc = include_str!("src/mixing.md")]
pub mod mixing {}

#[doc = include_str!("src/curation.md")]
pub mod curation {}

#[doc = include_str!("src/training.md")]
pub mod training {}

#[doc = include_str!("src/preference.md")]
pub mod preference {}

#[doc = include_str!("src/cli.md")]
pub mod cli {}
