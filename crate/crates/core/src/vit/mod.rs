//! A small standard vision transformer with a pluggable positional slot.
//!
//! Tokens are `[class; patch projections]`. The positional matrix from the
//! configured mode is added once before the first encoder block. Blocks are
//! pre-norm (layer-norm, attention, residual; layer-norm, GELU MLP,
//! residual) and the classifier reads the final class-token state.

mod checkpoint;
mod config;
mod model;
mod params;
mod patch;

pub use checkpoint::{config_hash, read_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use model::{
    argmax, bind_constants, bind_params, collect_grads, forward, forward_on_tape, gradcheck_model, loss, BoundParams,
};
pub use params::{BlockParams, ModelParams, Params};
pub use patch::{patchify, patchify_batch, permute_patches, unpatchify};
