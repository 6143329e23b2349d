use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the gate network turns its two logits into `(g₁, g₂)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    /// Independent sigmoids; fused rows sum to `g₁ + g₂`.
    #[default]
    Sigmoid,
    /// Two-way softmax; `g₁ + g₂ = 1` so fused rows stay stochastic.
    Convex,
}

impl GateMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GateMode::Sigmoid => "sigmoid",
            GateMode::Convex => "convex",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            GateMode::Sigmoid => 0,
            GateMode::Convex => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(GateMode::Sigmoid),
            1 => Some(GateMode::Convex),
            _ => None,
        }
    }
}

impl std::str::FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(GateMode::Sigmoid),
            "convex" => Ok(GateMode::Convex),
            other => Err(Error::invalid(format!("unknown gate mode `{other}`"))),
        }
    }
}

/// Architecture of an I-ViT.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
    pub gate_mode: GateMode,
    pub gcn_hidden: usize,
}

impl Default for ModelConfig {
    /// Desk-scale default: 32×32 grayscale, patch 4, D = 64, 4 heads, 6 layers.
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 4,
            channels: 1,
            embed_dim: 64,
            heads: 4,
            layers: 6,
            classes: 10,
            gate_mode: GateMode::Sigmoid,
            gcn_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.image_size == 0 {
            return fail("image_size and patch_size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "model.image_size {} is not divisible by model.patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "model.embed_dim {} is not divisible by model.heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.layers == 0 || self.classes == 0 || self.channels == 0 || self.gcn_hidden == 0 {
            return fail("layers, classes, channels and gcn_hidden must be positive".into());
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// `N`.
    pub fn patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// `T = N + 1` (class token at index 0).
    pub fn tokens(&self) -> usize {
        self.patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn mlp_hidden(&self) -> usize {
        4 * self.embed_dim
    }
}
