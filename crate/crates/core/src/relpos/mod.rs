//! Relationship embeddings: distance vectors over the patch lattice and the
//! rank-1 matrices they generate from a single learnable core vector.
//!
//! Two distance flavors exist. The *sequence* flavor lays every patch on one
//! line and measures the index offset to the nearest central patch. The
//! *circle* flavor groups patches into concentric rings around the grid
//! center; ring `k` (counting the center ring as 0) carries `d * sqrt(2)^k`,
//! with the center ring pinned at 1.

use std::collections::BTreeSet;
use std::f64::consts::SQRT_2;
use std::fmt;

use crate::error::{Error, Result};
use crate::grid::PatchGrid;

mod embedding;
pub(crate) mod text;

pub use embedding::{
    compose_positional, learnable_param_count, outer_embedding, ClassTokenPolicy, PeMatrix, PositionalConfig,
    PositionalMode, RelationCore, RelationEmbedding,
};
pub use text::{format_matrix, parse_matrix, MatrixHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DistanceKind {
    Sequence,
    Circle,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Sequence => "sequence",
            DistanceKind::Circle => "circle",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(DistanceKind::Sequence),
            "circle" => Ok(DistanceKind::Circle),
            other => Err(Error::InvalidConfig(format!(
                "unknown distance kind `{other}` (expected sequence or circle)"
            ))),
        }
    }
}

/// Per-patch distance to the central patch set.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVector {
    values: Vec<f64>,
    kind: DistanceKind,
    unit: f64,
}

impl DistanceVector {
    pub fn from_values(values: Vec<f64>, kind: DistanceKind, unit: f64) -> Self {
        Self { values, kind, unit }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> DistanceKind {
        self.kind
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_unit(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveUnit(d))
    }
}

/// `1 + d * |i - c|` with `c` the nearest central index.
pub fn sequence_distance_vector(grid: &PatchGrid, d: f64) -> Result<DistanceVector> {
    check_unit(d)?;
    let central = grid.central_indices();
    let values = (0..grid.n())
        .map(|i| {
            let offset = central.iter().map(|&c| i.abs_diff(c)).min().unwrap_or(0);
            1.0 + d * offset as f64
        })
        .collect();
    Ok(DistanceVector::from_values(values, DistanceKind::Sequence, d))
}

/// Ring membership of every patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CircleClasses {
    /// 0-based ring of each patch, rings ordered by increasing radius.
    pub ranks: Vec<usize>,
    /// Number of distinct rings, the central one included.
    pub class_count: usize,
}

/// Groups patches by exact Euclidean radius from the grid center.
pub fn circle_classes(grid: &PatchGrid) -> CircleClasses {
    // 4 r^2 is an integer for every patch, so grouping is exact.
    let radii: Vec<u64> = (0..grid.n()).map(|i| grid.quad_radius_sq(i)).collect();
    let distinct: Vec<u64> = radii.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let ranks = radii
        .iter()
        .map(|r| distinct.binary_search(r).expect("radius drawn from the same set"))
        .collect();
    CircleClasses {
        ranks,
        class_count: distinct.len(),
    }
}

/// `1` on the central ring, `d * sqrt(2)^k` on ring `k > 0`.
pub fn circle_distance_vector(grid: &PatchGrid, d: f64) -> Result<DistanceVector> {
    check_unit(d)?;
    let values = circle_classes(grid)
        .ranks
        .into_iter()
        .map(|rank| if rank == 0 { 1.0 } else { d * sqrt2_pow(rank) })
        .collect();
    Ok(DistanceVector::from_values(values, DistanceKind::Circle, d))
}

/// `sqrt(2)^k` with even powers kept exact.
fn sqrt2_pow(k: usize) -> f64 {
    let whole = 2f64.powi((k / 2) as i32);
    if k % 2 == 1 {
        whole * SQRT_2
    } else {
        whole
    }
}

pub fn distance_vector(grid: &PatchGrid, kind: DistanceKind, d: f64) -> Result<DistanceVector> {
    match kind {
        DistanceKind::Sequence => sequence_distance_vector(grid, d),
        DistanceKind::Circle => circle_distance_vector(grid, d),
    }
}

#[cfg(test)]
mod tests;
