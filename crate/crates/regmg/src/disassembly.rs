//! Splitting an assembled composite matrix into per-region blocks and the
//! reverse reassembly, plus the region-local matrix-vector product.
//!
//! The split scales every off-diagonal entry by the number of regions sharing
//! its edge, and fixes the block diagonal so that each region row-sum equals
//! the composite row-sum divided by the node's sharing count. For operators
//! with zero row sums this reduces to choosing the diagonal so each region
//! row sums to zero, which preserves the constant nullspace block by block.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::region::{
    check_interface_consistent, interface_sum, RegionLayout, RegionVector,
};
use crate::sparse::SparseMatrix;

/// Storage convention of a region matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionMatrixForm {
    /// Blocks sum back to the composite operator under the layout map.
    Split,
    /// Co-located rows are identical copies of the composite stencil
    /// (grid-transfer convention); reassembly must not sum them.
    InterfaceReplicated,
}

/// Block-diagonal collection of per-region sparse blocks. Square operators
/// use the same layout for rows and columns; grid transfers pair a fine row
/// layout with a coarse column layout.
#[derive(Debug, Clone)]
pub struct RegionMatrix {
    row_layout: Arc<RegionLayout>,
    col_layout: Arc<RegionLayout>,
    blocks: Vec<SparseMatrix>,
    form: RegionMatrixForm,
}

impl RegionMatrix {
    pub fn new(
        row_layout: Arc<RegionLayout>,
        col_layout: Arc<RegionLayout>,
        blocks: Vec<SparseMatrix>,
        form: RegionMatrixForm,
    ) -> Result<Self> {
        if blocks.len() != row_layout.n_regions() || blocks.len() != col_layout.n_regions() {
            return Err(Error::InvalidConfig(
                "one block per region is required".into(),
            ));
        }
        for (r, b) in blocks.iter().enumerate() {
            if b.n_rows() != row_layout.region_size(r) || b.n_cols() != col_layout.region_size(r) {
                return Err(Error::ShapeMismatch {
                    op: "region_matrix",
                    lhs_rows: b.n_rows(),
                    lhs_cols: b.n_cols(),
                    rhs_rows: row_layout.region_size(r),
                    rhs_cols: col_layout.region_size(r),
                });
            }
        }
        Ok(Self {
            row_layout,
            col_layout,
            blocks,
            form,
        })
    }

    pub fn form(&self) -> RegionMatrixForm {
        self.form
    }

    pub fn row_layout(&self) -> &Arc<RegionLayout> {
        &self.row_layout
    }

    pub fn col_layout(&self) -> &Arc<RegionLayout> {
        &self.col_layout
    }

    pub fn block(&self, r: usize) -> &SparseMatrix {
        &self.blocks[r]
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Per-region transpose; turns an interpolation into its restriction.
    pub fn transpose_blocks(&self) -> RegionMatrix {
        RegionMatrix {
            row_layout: self.col_layout.clone(),
            col_layout: self.row_layout.clone(),
            blocks: self.blocks.iter().map(|b| b.transpose()).collect(),
            form: self.form,
        }
    }

    /// Per-block diagonals as a region vector (taken before any interface
    /// summation).
    pub fn diag_region_vector(&self) -> RegionVector {
        RegionVector::from_blocks(self.blocks.iter().map(|b| b.diag()).collect())
    }

    /// Blockwise matvec without any interface treatment. For transfers this
    /// is the whole product; for split operators it is the local half of
    /// [`RegionMatrix::region_matvec`].
    pub fn block_matvec(&self, u: &RegionVector) -> Result<RegionVector> {
        if u.n_blocks() != self.n_blocks() {
            return Err(Error::LengthMismatch {
                op: "block_matvec",
                expected: self.n_blocks(),
                found: u.n_blocks(),
            });
        }
        let blocks: Vec<Vec<f64>> = self
            .blocks
            .par_iter()
            .zip(u.blocks().par_iter())
            .map(|(a, x)| {
                let mut y = vec![0.0; a.n_rows()];
                a.spmv_into(x, &mut y);
                y
            })
            .collect();
        Ok(RegionVector::from_blocks(blocks))
    }

    /// Region matrix-vector product: blockwise matvec followed by interface
    /// summation. Equivalent to the composite matvec when the input is
    /// interface-consistent.
    pub fn region_matvec(&self, u: &RegionVector) -> Result<RegionVector> {
        debug_assert!(
            check_interface_consistent(&self.col_layout, u, 1e-12).is_ok(),
            "region_matvec input must be interface-consistent"
        );
        let mut y = self.block_matvec(u)?;
        interface_sum(&self.row_layout, &mut y)?;
        Ok(y)
    }

    /// Reassembles a split-form operator into its composite matrix by summing
    /// co-located rows and columns.
    pub fn to_composite_matrix(&self) -> Result<SparseMatrix> {
        if self.form != RegionMatrixForm::Split {
            return Err(Error::InvalidConfig(
                "to_composite_matrix is defined for split form only; \
                 interface-replicated operators need an explicit row-combination mode"
                    .into(),
            ));
        }
        let n_rows = self.row_layout.n_composite();
        let n_cols = self.col_layout.n_composite();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        row_ptr.push(0usize);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for i in 0..n_rows {
            entries.clear();
            // ascending region id, so duplicate summation order is fixed
            for &(r, li) in self.row_layout.slots_of(i) {
                let (cols, vals) = self.blocks[r].row(li);
                for (&lj, &v) in cols.iter().zip(vals) {
                    entries.push((self.col_layout.composite_of(r, lj), v));
                }
            }
            entries.sort_by_key(|e| e.0); // stable: keeps region order within a column
            let mut last = usize::MAX;
            for &(j, v) in entries.iter() {
                if j == last {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = j;
                }
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix::from_csr(n_rows, n_cols, row_ptr, col_idx, values)
    }

    /// Extracts the composite matrix implied by an interface-replicated
    /// transfer: each composite row is taken from its lowest containing
    /// region (co-located copies are identical by construction).
    pub fn replicated_to_composite(&self) -> Result<SparseMatrix> {
        if self.form != RegionMatrixForm::InterfaceReplicated {
            return Err(Error::InvalidConfig(
                "replicated_to_composite is defined for interface-replicated form".into(),
            ));
        }
        let n_rows = self.row_layout.n_composite();
        let n_cols = self.col_layout.n_composite();
        let mut triplets = Vec::new();
        for i in 0..n_rows {
            let &(r, li) = &self.row_layout.slots_of(i)[0];
            let (cols, vals) = self.blocks[r].row(li);
            for (&lj, &v) in cols.iter().zip(vals) {
                triplets.push((i, self.col_layout.composite_of(r, lj), v));
            }
        }
        Ok(SparseMatrix::from_triplets(n_rows, n_cols, &triplets))
    }
}

/// Splits a composite matrix into per-region blocks.
///
/// Every edge must lie inside at least one region; off-diagonals are divided
/// by the edge sharing count, and block diagonals are fixed so the region
/// row-sum equals the composite row-sum over the node sharing count.
pub fn split_matrix(a: &SparseMatrix, layout: Arc<RegionLayout>) -> Result<RegionMatrix> {
    let n = layout.n_composite();
    if a.n_rows() != n || a.n_cols() != n {
        return Err(Error::ShapeMismatch {
            op: "split_matrix",
            lhs_rows: a.n_rows(),
            lhs_cols: a.n_cols(),
            rhs_rows: n,
            rhs_cols: n,
        });
    }
    let m = layout.n_regions();
    let mut triplets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); m];
    let mut common: Vec<usize> = Vec::with_capacity(8);
    for i in 0..n {
        let q_i = layout.sharing(i) as f64;
        let slots_i = layout.slots_of(i);
        let (cols, vals) = a.row(i);
        let a_ii = a.get(i, i);
        // per containing region: diagonal correction accumulator
        let mut corr = vec![0.0f64; slots_i.len()];
        for (&j, &v) in cols.iter().zip(vals) {
            if j == i {
                continue;
            }
            // regions containing both endpoints (both lists are sorted)
            common.clear();
            let (ri, rj) = (layout.regions_of(i), layout.regions_of(j));
            let (mut p, mut q) = (0, 0);
            while p < ri.len() && q < rj.len() {
                match ri[p].cmp(&rj[q]) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        common.push(ri[p]);
                        p += 1;
                        q += 1;
                    }
                }
            }
            if common.is_empty() {
                return Err(Error::NonConformalEdge { i, j });
            }
            let q_ij = common.len() as f64;
            let split = v / q_ij;
            for (s, &(r, li)) in slots_i.iter().enumerate() {
                if common.contains(&r) {
                    let lj = layout.local_of(j, r).expect("edge region must contain j");
                    triplets[r].push((li, lj, split));
                    // exactly zero when the node and edge sharing counts agree
                    corr[s] += v / q_i - split;
                } else {
                    corr[s] += v / q_i;
                }
            }
        }
        for (s, &(r, li)) in slots_i.iter().enumerate() {
            triplets[r].push((li, li, a_ii / q_i + corr[s]));
        }
    }
    let blocks: Vec<SparseMatrix> = triplets
        .into_iter()
        .enumerate()
        .map(|(r, t)| SparseMatrix::from_triplets(layout.region_size(r), layout.region_size(r), &t))
        .collect();
    RegionMatrix::new(layout.clone(), layout, blocks, RegionMatrixForm::Split)
}
