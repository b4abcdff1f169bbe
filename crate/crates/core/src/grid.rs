//! Geometry of the square patch lattice.
//!
//! Patches are indexed row-major: `index = row * side + col`. The lattice
//! is always square with at least 3 patches per side.

use crate::error::{Error, Result};

/// A `side x side` lattice of `n` patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchGrid {
    n: usize,
    side: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCoord {
    pub row: usize,
    pub col: usize,
}

impl GridCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl PatchGrid {
    /// Validates `n` as a perfect square of at least 9.
    pub fn from_patch_count(n: usize) -> Result<Self> {
        let side = n.isqrt();
        if side * side != n {
            return Err(Error::NotPerfectSquare(n));
        }
        if n < 9 {
            return Err(Error::TooSmall(n));
        }
        Ok(Self { n, side })
    }

    pub fn from_side(side: usize) -> Result<Self> {
        Self::from_patch_count(side * side)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn is_odd(&self) -> bool {
        self.side % 2 == 1
    }

    pub fn index_to_coords(&self, index: usize) -> Result<GridCoord> {
        if index >= self.n {
            return Err(Error::IndexOutOfRange { index, n: self.n });
        }
        Ok(GridCoord::new(index / self.side, index % self.side))
    }

    pub fn coords_to_index(&self, coord: GridCoord) -> Result<usize> {
        if coord.row >= self.side || coord.col >= self.side {
            return Err(Error::IndexOutOfRange {
                index: coord.row.saturating_mul(self.side).saturating_add(coord.col),
                n: self.n,
            });
        }
        Ok(coord.row * self.side + coord.col)
    }

    /// Central patch indices in ascending order: one patch for an odd side,
    /// the 2x2 block around the center for an even side.
    pub fn central_indices(&self) -> Vec<usize> {
        let (n, s) = (self.n, self.side);
        if self.is_odd() {
            vec![(n - 1) / 2]
        } else {
            let (half_n, half_s) = (n / 2, s / 2);
            vec![
                half_n - half_s - 1,
                half_n - half_s,
                half_n + half_s - 1,
                half_n + half_s,
            ]
        }
    }

    /// Up, left, right and down neighbors of `index` that lie inside the
    /// lattice, ascending. Left/right never wrap onto another row.
    pub fn four_neighbors(&self, index: usize) -> Result<Vec<usize>> {
        let GridCoord { row, col } = self.index_to_coords(index)?;
        let s = self.side;
        let mut out = Vec::with_capacity(4);
        if row > 0 {
            out.push(index - s);
        }
        if col > 0 {
            out.push(index - 1);
        }
        if col + 1 < s {
            out.push(index + 1);
        }
        if row + 1 < s {
            out.push(index + s);
        }
        Ok(out)
    }

    /// Common center of the concentric rings, in (row, col) patch units.
    pub fn center_point(&self) -> (f64, f64) {
        let c = (self.side as f64 - 1.0) / 2.0;
        (c, c)
    }

    /// Four times the squared Euclidean distance from the patch at `index`
    /// to [`center_point`](Self::center_point). Always an integer.
    pub fn quad_radius_sq(&self, index: usize) -> u64 {
        let (row, col) = (index / self.side, index % self.side);
        let twice_center = self.side as i64 - 1;
        let dr = 2 * row as i64 - twice_center;
        let dc = 2 * col as i64 - twice_center;
        (dr * dr + dc * dc) as u64
    }

    /// Index permutation induced by a grid symmetry: `perm[i]` is where
    /// patch `i` lands.
    pub fn symmetry_permutation(&self, sym: Symmetry) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let c = sym.apply(self.side, GridCoord::new(i / self.side, i % self.side));
                c.row * self.side + c.col
            })
            .collect()
    }
}

/// The eight symmetries of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symmetry {
    Identity,
    Rotate90,
    Rotate180,
    Rotate270,
    FlipHorizontal,
    FlipVertical,
    Transpose,
    AntiTranspose,
}

impl Symmetry {
    pub const ALL: [Symmetry; 8] = [
        Symmetry::Identity,
        Symmetry::Rotate90,
        Symmetry::Rotate180,
        Symmetry::Rotate270,
        Symmetry::FlipHorizontal,
        Symmetry::FlipVertical,
        Symmetry::Transpose,
        Symmetry::AntiTranspose,
    ];

    pub fn apply(self, side: usize, c: GridCoord) -> GridCoord {
        let last = side - 1;
        let (r, k) = (c.row, c.col);
        let (row, col) = match self {
            Symmetry::Identity => (r, k),
            Symmetry::Rotate90 => (k, last - r),
            Symmetry::Rotate180 => (last - r, last - k),
            Symmetry::Rotate270 => (last - k, r),
            Symmetry::FlipHorizontal => (r, last - k),
            Symmetry::FlipVertical => (last - r, k),
            Symmetry::Transpose => (k, r),
            Symmetry::AntiTranspose => (last - k, last - r),
        };
        GridCoord::new(row, col)
    }
}
