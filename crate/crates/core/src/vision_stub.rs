//! Frozen toy vision encoder: a single seeded linear projection standing in
//! for a real ViT so every downstream mechanism runs without model weights.
//!
//! A base×base RGB patch is cut into `vit_patch` × `vit_patch` cells (floor
//! division, remainder pixels dropped), each cell is flattened to
//! `vit_patch * vit_patch * 3` floats in [0, 1], and multiplied by one fixed
//! Gaussian projection into `d_model`. No bias, so encoding is linear in the
//! pixels. The weights never change after construction.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ForgeError, Result};
use crate::imaging::ImageBuffer;
use crate::matrix::Matrix;

/// Default embedding width at desk scale.
pub const D_MODEL: usize = 16;
/// Default ViT cell edge; 384/14 -> 27 cells per side -> 729 tokens.
pub const VIT_PATCH: u32 = 14;

/// Geometry and seed for the stub encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionStubConfig {
    pub base: u32,
    pub vit_patch: u32,
    pub d_model: usize,
    pub seed: u64,
}

impl Default for VisionStubConfig {
    fn default() -> Self {
        Self {
            base: crate::imaging::BASE_RESOLUTION,
            vit_patch: VIT_PATCH,
            d_model: D_MODEL,
            seed: 0,
        }
    }
}

impl VisionStubConfig {
    /// Cells per side: floor(base / vit_patch).
    pub fn grid_side(&self) -> u32 {
        self.base / self.vit_patch
    }

    /// Tokens per encoded patch: grid_side².
    pub fn tokens_per_patch(&self) -> usize {
        let side = self.grid_side() as usize;
        side * side
    }

    /// Flattened cell length: vit_patch² * 3 channels.
    pub fn fan_in(&self) -> usize {
        (self.vit_patch as usize) * (self.vit_patch as usize) * 3
    }
}

/// Embeddings for one encoded patch: `tokens_per_patch` rows of `d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionEmbeddings {
    pub tokens: Matrix,
}

/// The frozen encoder. Construction is the only place weights are written.
#[derive(Debug, Clone)]
pub struct VisionStub {
    cfg: VisionStubConfig,
    projection: Matrix,
}

impl VisionStub {
    pub fn new(cfg: VisionStubConfig) -> Result<Self> {
        if cfg.vit_patch == 0 || cfg.vit_patch > cfg.base {
            return Err(ForgeError::InvalidDims(format!(
                "vit_patch must be in 1..=base, got {} with base {}",
                cfg.vit_patch, cfg.base
            )));
        }
        if cfg.d_model == 0 {
            return Err(ForgeError::InvalidDims("d_model must be positive".into()));
        }
        let fan_in = cfg.fan_in();
        let scale = 1.0 / (fan_in as f64).sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let projection = Matrix::gaussian(fan_in, cfg.d_model, scale, &mut rng);
        Ok(Self { cfg, projection })
    }

    pub fn config(&self) -> &VisionStubConfig {
        &self.cfg
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    /// SHA-256 of the projection bytes; downstream training asserts this is
    /// untouched, making the frozen contract checkable.
    pub fn weight_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.projection.as_slice() {
            hasher.update(v.to_le_bytes());
        }
        format!("{:x}", hasher.finalize())
    }

    /// Encodes one base×base patch into `tokens_per_patch` embedding rows,
    /// cell-row-major.
    pub fn encode_patch(&self, buffer: &ImageBuffer) -> Result<VisionEmbeddings> {
        if buffer.width() != self.cfg.base || buffer.height() != self.cfg.base {
            return Err(ForgeError::ShapeMismatch(format!(
                "expected {0}x{0} patch, got {1}x{2}",
                self.cfg.base,
                buffer.width(),
                buffer.height()
            )));
        }
        let side = self.cfg.grid_side();
        let p = self.cfg.vit_patch;
        let fan_in = self.cfg.fan_in();
        let mut cells = Matrix::zeros(self.cfg.tokens_per_patch(), fan_in);
        for cy in 0..side {
            for cx in 0..side {
                let row = cells.row_mut((cy * side + cx) as usize);
                let mut i = 0;
                for y in 0..p {
                    for x in 0..p {
                        let px = buffer.pixel(cx * p + x, cy * p + y);
                        for ch in px {
                            row[i] = ch as f64 / 255.0;
                            i += 1;
                        }
                    }
                }
            }
        }
        Ok(VisionEmbeddings {
            tokens: cells.matmul(&self.projection),
        })
    }

    /// Encodes every buffer of a tiling plan in order.
    pub fn encode_all(&self, buffers: &[ImageBuffer]) -> Result<Vec<VisionEmbeddings>> {
        buffers.iter().map(|b| self.encode_patch(b)).collect()
    }
}
