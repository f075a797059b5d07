//! Region-oriented semi-structured multigrid.
//!
//! An assembled sparse system is dis-assembled into per-region matrices with
//! replicated interface unknowns, the multigrid hierarchy is built
//! region-locally (the Galerkin triple product never crosses region
//! boundaries), and the resulting solver is equivalent to a classical
//! composite-matrix multigrid solver for smoothers that only involve
//! matrix-vector products.

pub mod cycle;
pub mod disassembly;
pub mod error;
pub mod lu;
pub mod mm;
pub mod problems;
pub mod region;
pub mod sparse;
pub mod transfers;

pub use error::{Error, Result};
pub use lu::LuFactorization;
pub use region::{RegionDesc, RegionKind, RegionLayout, RegionVector};
pub use sparse::SparseMatrix;
