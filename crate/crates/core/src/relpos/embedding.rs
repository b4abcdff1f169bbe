use std::fmt;
use std::str::FromStr;

use super::{distance_vector, DistanceKind, DistanceVector};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::grid::PatchGrid;

/// The single learnable length-`D` vector shared by every patch row of a
/// relationship embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationCore(Vec<f64>);

impl RelationCore {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// `N x D` outer product of a distance vector and a core.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationEmbedding {
    matrix: Tensor,
}

impl RelationEmbedding {
    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn into_matrix(self) -> Tensor {
        self.matrix
    }
}

/// Learnable absolute position embedding, one row per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PeMatrix(Tensor);

impl PeMatrix {
    pub fn new(matrix: Tensor) -> Result<Self> {
        if matrix.ndim() != 2 {
            return Err(Error::shape(format!("PE matrix must be 2-D, got {:?}", matrix.shape())));
        }
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.0
    }
}

pub fn outer_embedding(dis: &DistanceVector, core: &RelationCore) -> RelationEmbedding {
    let dim = core.dim();
    let data = dis
        .values()
        .iter()
        .flat_map(|&d| core.values().iter().map(move |&c| d * c))
        .collect();
    let matrix = Tensor::new(vec![dis.len(), dim], data).expect("outer product shape is consistent");
    RelationEmbedding { matrix }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PositionalMode {
    None,
    Pe,
    Sre,
    Cre,
    SrePlusPe,
    CrePlusPe,
}

impl PositionalMode {
    pub const ALL: [PositionalMode; 6] = [
        PositionalMode::None,
        PositionalMode::Pe,
        PositionalMode::Sre,
        PositionalMode::Cre,
        PositionalMode::SrePlusPe,
        PositionalMode::CrePlusPe,
    ];

    pub fn uses_pe(self) -> bool {
        matches!(
            self,
            PositionalMode::Pe | PositionalMode::SrePlusPe | PositionalMode::CrePlusPe
        )
    }

    /// Distance flavor of the relationship embedding, if the mode has one.
    pub fn relation(self) -> Option<DistanceKind> {
        match self {
            PositionalMode::Sre | PositionalMode::SrePlusPe => Some(DistanceKind::Sequence),
            PositionalMode::Cre | PositionalMode::CrePlusPe => Some(DistanceKind::Circle),
            PositionalMode::None | PositionalMode::Pe => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PositionalMode::None => "none",
            PositionalMode::Pe => "pe",
            PositionalMode::Sre => "sre",
            PositionalMode::Cre => "cre",
            PositionalMode::SrePlusPe => "sre_plus_pe",
            PositionalMode::CrePlusPe => "cre_plus_pe",
        }
    }
}

impl fmt::Display for PositionalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositionalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown positional mode `{s}`")))
    }
}

/// What the class token receives in the positional slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ClassTokenPolicy {
    #[default]
    ZeroRow,
    LearnableRow,
}

impl ClassTokenPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            ClassTokenPolicy::ZeroRow => "zero_row",
            ClassTokenPolicy::LearnableRow => "learnable_row",
        }
    }
}

impl fmt::Display for ClassTokenPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassTokenPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_row" => Ok(ClassTokenPolicy::ZeroRow),
            "learnable_row" => Ok(ClassTokenPolicy::LearnableRow),
            other => Err(Error::InvalidConfig(format!("unknown class token policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionalConfig {
    pub mode: PositionalMode,
    pub class_token_policy: ClassTokenPolicy,
    /// Unit distance between adjacent patches; a fixed hyperparameter.
    pub unit_distance: f64,
}

impl Default for PositionalConfig {
    fn default() -> Self {
        Self {
            mode: PositionalMode::Pe,
            class_token_policy: ClassTokenPolicy::ZeroRow,
            unit_distance: 1.0,
        }
    }
}

/// Builds the `(N + 1) x D` positional matrix added to the token sequence.
///
/// Row 0 belongs to the class token. Patch rows hold the PE, the
/// relationship embedding, or their elementwise sum, depending on the mode.
pub fn compose_positional(
    cfg: &PositionalConfig,
    grid: &PatchGrid,
    dim: usize,
    pe: Option<&PeMatrix>,
    core: Option<&RelationCore>,
    cls_row: Option<&[f64]>,
) -> Result<Tensor> {
    let n = grid.n();
    let mut out = vec![0.0; (n + 1) * dim];

    if cfg.class_token_policy == ClassTokenPolicy::LearnableRow {
        let row = cls_row.ok_or(Error::MissingParameter("class-token positional row"))?;
        if row.len() != dim {
            return Err(Error::shape(format!(
                "class-token row has {} entries, expected {dim}",
                row.len()
            )));
        }
        out[..dim].copy_from_slice(row);
    }

    let patches = &mut out[dim..];
    if cfg.mode.uses_pe() {
        let pe = pe.ok_or(Error::MissingParameter("position embedding matrix"))?;
        if pe.matrix().shape() != [n, dim] {
            return Err(Error::shape(format!(
                "PE matrix is {:?}, expected [{n}, {dim}]",
                pe.matrix().shape()
            )));
        }
        for (o, p) in patches.iter_mut().zip(pe.matrix().data()) {
            *o += p;
        }
    }
    if let Some(kind) = cfg.mode.relation() {
        let core = core.ok_or(Error::MissingParameter("relation core vector"))?;
        if core.dim() != dim {
            return Err(Error::shape(format!(
                "relation core has {} entries, expected {dim}",
                core.dim()
            )));
        }
        let dis = distance_vector(grid, kind, cfg.unit_distance)?;
        let embedding = outer_embedding(&dis, core);
        for (o, r) in patches.iter_mut().zip(embedding.matrix().data()) {
            *o += r;
        }
    }
    Tensor::new(vec![n + 1, dim], out)
}

/// Learnable parameters owned by the positional slot.
pub fn learnable_param_count(cfg: &PositionalConfig, n: usize, dim: usize) -> usize {
    let pe = if cfg.mode.uses_pe() { n * dim } else { 0 };
    let core = if cfg.mode.relation().is_some() { dim } else { 0 };
    let cls = match cfg.class_token_policy {
        ClassTokenPolicy::ZeroRow => 0,
        ClassTokenPolicy::LearnableRow => dim,
    };
    pe + core + cls
}
