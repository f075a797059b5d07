//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    #[error("{op}: vector length {found} does not match expected {expected}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid CSR structure: {0}")]
    InvalidCsr(String),

    #[error("singular pivot in row {row} during LU factorization")]
    SingularPivot { row: usize },

    #[error("composite node {node} is not claimed by any region")]
    NodeWithoutRegion { node: usize },

    #[error("region {region} declared size {declared} but {found} nodes are mapped to it")]
    RegionSizeMismatch {
        region: usize,
        declared: usize,
        found: usize,
    },

    #[error("matrix edge ({i},{j}) has no common region; the region layout is not conformal")]
    NonConformalEdge { i: usize, j: usize },

    #[error("interface coarse-point mismatch at composite node {composite}: selected by {selected} of {sharing} sharing regions")]
    InterfaceCoarseMismatch {
        composite: usize,
        selected: usize,
        sharing: usize,
    },

    #[error("interface stencil mismatch at composite node {composite} between regions {region_a} and {region_b}")]
    InterfaceStencilMismatch {
        composite: usize,
        region_a: usize,
        region_b: usize,
    },

    #[error("region vector is not interface-consistent at composite node {composite} (spread {spread:.3e})")]
    InconsistentInterface { composite: usize, spread: f64 },

    #[error("node {node} in region {region} was not assigned to any coarse point or aggregate")]
    UnassignedNode { node: usize, region: usize },

    #[error("interface node {node} in region {region} has no deducible structured root")]
    NoDeducibleRoot { node: usize, region: usize },

    #[error("zero diagonal entry at composite node {node}")]
    ZeroDiagonal { node: usize },

    #[error("coarsening exhausted at level {level}: no axis can be reduced further")]
    CoarseningExhausted { level: usize },

    #[error("power method breakdown: iterate vanished")]
    PowerMethodBreakdown,

    #[error("iteration diverged (relative residual grew past 10x): history {history:?}")]
    Divergence { history: Vec<f64> },

    #[error("stencil wider than {max_width} points at row {row}")]
    StencilTooWide { row: usize, max_width: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {what}: {detail}")]
    Parse { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
