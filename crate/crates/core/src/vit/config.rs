use std::fmt;

use crate::error::{Error, Result};
use crate::grid::PatchGrid;
use crate::relpos::{learnable_param_count, PositionalConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub image_side: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    pub positional: PositionalConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_side: 8,
            channels: 1,
            patch_size: 2,
            embed_dim: 64,
            heads: 4,
            blocks: 2,
            mlp_ratio: 2,
            classes: 4,
            positional: PositionalConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Checks every structural invariant and returns the patch grid.
    pub fn validate(&self) -> Result<PatchGrid> {
        let invalid = |msg: String| Err(Error::InvalidConfig(msg));
        if self.patch_size == 0 || !self.image_side.is_multiple_of(self.patch_size) {
            return invalid(format!(
                "image side {} is not divisible by patch size {}",
                self.image_side, self.patch_size
            ));
        }
        if self.channels == 0 || self.embed_dim == 0 || self.blocks == 0 || self.mlp_ratio == 0 {
            return invalid("channels, embed_dim, blocks and mlp_ratio must be positive".into());
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return invalid(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            ));
        }
        if self.classes < 2 {
            return invalid(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.positional.unit_distance.is_nan() || self.positional.unit_distance <= 0.0 {
            return Err(Error::NonPositiveUnit(self.positional.unit_distance));
        }
        PatchGrid::from_side(self.image_side / self.patch_size)
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        self.validate()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Learnable scalars in the positional slot.
    pub fn positional_param_count(&self) -> Result<usize> {
        let grid = self.validate()?;
        Ok(learnable_param_count(&self.positional, grid.n(), self.embed_dim))
    }

    /// Learnable scalars of the model, computed from shapes alone.
    pub fn param_count(&self) -> Result<usize> {
        let (d, h) = (self.embed_dim, self.hidden_dim());
        let attention = 4 * (d * d + d);
        let mlp = d * h + h + h * d + d;
        let block = 4 * d + attention + mlp;
        let embed = self.patch_dim() * d + d + d;
        let head = 2 * d + d * self.classes + self.classes;
        let positional = self.positional_param_count()?;
        Ok(embed + positional + self.blocks * block + head)
    }
}

/// Canonical single-line rendering, used for checkpoint fingerprints.
impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "image_side={} channels={} patch_size={} embed_dim={} heads={} blocks={} mlp_ratio={} classes={} mode={} class_token_policy={} unit_distance={}",
            self.image_side,
            self.channels,
            self.patch_size,
            self.embed_dim,
            self.heads,
            self.blocks,
            self.mlp_ratio,
            self.classes,
            self.positional.mode,
            self.positional.class_token_policy,
            self.positional.unit_distance,
        )
    }
}
