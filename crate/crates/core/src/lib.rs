//! Sequence and circle relationship embeddings as positional signals for a
//! minimal vision transformer.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod grid;
pub mod relpos;
pub mod trainer;
pub mod vit;

pub use error::{Error, Result};
pub use grid::{GridCoord, PatchGrid, Symmetry};
