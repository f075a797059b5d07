//! Grid-transfer construction: structured linear and piecewise-constant
//! interpolation, interface-first aggregation for unstructured regions, the
//! region-local Galerkin product, and a structured fast path for the
//! piecewise-constant triple product.
//!
//! Every builder works one region at a time with no cross-region data access.
//! The requirements that make the implied composite transfer well defined
//! (fine interface rows reference only interface coarse points, and
//! co-located rows carry identical stencils) hold by construction here, and
//! `verify_interface_replicated` re-checks them as a barrier step after
//! construction.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::disassembly::{RegionMatrix, RegionMatrixForm};
use crate::error::{Error, Result};
use crate::region::{RegionDesc, RegionKind, RegionLayout};
use crate::sparse::{triple_product, SparseMatrix};

/// Coarse local indices along one axis: multiples of the rate, with the last
/// index appended so endpoints are always coarse.
pub fn coarse_axis_indices(n: usize, rate: usize) -> Vec<usize> {
    assert!(rate >= 2, "coarsening rate must be at least 2");
    assert!(n >= 1, "axis must be nonempty");
    let mut idx: Vec<usize> = (0..n).step_by(rate).collect();
    if *idx.last().unwrap() != n - 1 {
        idx.push(n - 1);
    }
    idx
}

/// Position in `axis` of the coarse index nearest to `x`; equidistant fine
/// nodes go to the lower coarse index.
pub fn nearest_coarse_pos(axis: &[usize], x: usize) -> usize {
    match axis.binary_search(&x) {
        Ok(p) => p,
        Err(ins) => {
            // ins > 0 and ins < len because axis contains 0 and the last index
            let (lo, hi) = (axis[ins - 1], axis[ins]);
            if x - lo <= hi - x {
                ins - 1
            } else {
                ins
            }
        }
    }
}

/// Total aggregation of one unstructured region: node to aggregate id and
/// aggregate id to root node, with aggregates numbered by ascending root.
#[derive(Debug, Clone)]
pub struct Aggregation {
    pub agg_of_node: Vec<usize>,
    pub root_of_agg: Vec<usize>,
}

/// Per-region coarse selection: axis index lists for structured regions,
/// an aggregation for unstructured ones.
#[derive(Debug, Clone)]
pub enum RegionCoarse {
    Structured { axes: Vec<Vec<usize>> },
    Unstructured(Aggregation),
}

impl RegionCoarse {
    /// Sorted fine local indices selected as coarse points (aggregate roots
    /// for unstructured regions).
    pub fn selection(&self, fine_dims: Option<&[usize]>) -> Vec<usize> {
        match self {
            RegionCoarse::Structured { axes } => {
                let fd = fine_dims.expect("structured selection needs fine dims");
                let mut sel = Vec::new();
                let strides = axis_strides(fd);
                tensor_visit(axes, |coords| {
                    let mut l = 0;
                    for (d, &p) in coords.iter().enumerate() {
                        l += axes[d][p] * strides[d];
                    }
                    sel.push(l);
                });
                sel.sort_unstable();
                sel
            }
            RegionCoarse::Unstructured(agg) => agg.root_of_agg.clone(),
        }
    }

    pub fn coarse_desc(&self, id: usize) -> RegionDesc {
        match self {
            RegionCoarse::Structured { axes } => {
                RegionDesc::structured(id, axes.iter().map(|a| a.len()).collect())
            }
            RegionCoarse::Unstructured(agg) => {
                RegionDesc::unstructured(id, agg.root_of_agg.len())
            }
        }
    }
}

/// Coarse selections for all regions of a layout.
#[derive(Debug, Clone)]
pub struct CoarsePointSet {
    pub per_region: Vec<RegionCoarse>,
}

impl CoarsePointSet {
    pub fn selection_locals(&self, fine: &RegionLayout) -> Vec<Vec<usize>> {
        self.per_region
            .iter()
            .enumerate()
            .map(|(r, rc)| rc.selection(fine.region(r).dims()))
            .collect()
    }

    pub fn coarse_descs(&self) -> Vec<RegionDesc> {
        self.per_region
            .iter()
            .enumerate()
            .map(|(r, rc)| rc.coarse_desc(r))
            .collect()
    }
}

/// Structured coarse-point selection at a fixed rate per axis.
pub fn select_coarse_points(desc: &RegionDesc, rate: usize) -> Result<RegionCoarse> {
    match &desc.kind {
        RegionKind::Structured { dims } => Ok(RegionCoarse::Structured {
            axes: dims.iter().map(|&n| coarse_axis_indices(n, rate)).collect(),
        }),
        RegionKind::Unstructured => Err(Error::InvalidConfig(format!(
            "region {} is unstructured; structured coarse points are undefined",
            desc.id
        ))),
    }
}

fn axis_strides(dims: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(dims.len());
    let mut acc = 1;
    for &d in dims {
        s.push(acc);
        acc *= d;
    }
    s
}

/// Visits the tensor product of positions `0..axes[d].len()` in row-major
/// order (axis 0 fastest).
fn tensor_visit(axes: &[Vec<usize>], mut f: impl FnMut(&[usize])) {
    let dims: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let total: usize = dims.iter().product();
    let mut coords = vec![0usize; axes.len()];
    for flat in 0..total {
        let mut rem = flat;
        for d in 0..axes.len() {
            coords[d] = rem % dims[d];
            rem /= dims[d];
        }
        f(&coords);
    }
}

fn local_coords(l: usize, dims: &[usize]) -> [usize; 3] {
    let d3 = [dims[0], *dims.get(1).unwrap_or(&1), *dims.get(2).unwrap_or(&1)];
    [l % d3[0], (l / d3[0]) % d3[1], l / (d3[0] * d3[1])]
}

/// Tensor-product linear interpolation block for one structured region.
fn tensor_linear_interp(fine_dims: &[usize], axes: &[Vec<usize>]) -> SparseMatrix {
    let n_fine: usize = fine_dims.iter().product();
    let coarse_dims: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let n_coarse: usize = coarse_dims.iter().product();
    let cstrides = axis_strides(&coarse_dims);
    let dim = fine_dims.len();

    let mut row_ptr = Vec::with_capacity(n_fine + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();

    // per-axis weight stencils, one or two entries each
    let mut axis_w: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
    for l in 0..n_fine {
        let c = local_coords(l, fine_dims);
        for d in 0..dim {
            axis_w[d].clear();
            let ax = &axes[d];
            match ax.binary_search(&c[d]) {
                Ok(p) => axis_w[d].push((p, 1.0)),
                Err(ins) => {
                    let (lo, hi) = (ax[ins - 1], ax[ins]);
                    let len = (hi - lo) as f64;
                    axis_w[d].push((ins - 1, (hi - c[d]) as f64 / len));
                    axis_w[d].push((ins, (c[d] - lo) as f64 / len));
                }
            }
        }
        // highest axis outermost keeps the generated columns ascending
        let mut stack = vec![(0usize, 1.0f64)];
        for d in (0..dim).rev() {
            let mut next = Vec::with_capacity(stack.len() * 2);
            for &(base, w) in &stack {
                for &(p, aw) in &axis_w[d] {
                    next.push((base + p * cstrides[d], w * aw));
                }
            }
            stack = next;
        }
        stack.sort_by_key(|e| e.0);
        for (col, w) in stack {
            col_idx.push(col);
            values.push(w);
        }
        row_ptr.push(col_idx.len());
    }
    SparseMatrix::from_csr(n_fine, n_coarse, row_ptr, col_idx, values)
        .expect("tensor interpolation produces valid CSR")
}

/// Piecewise-constant interpolation block for one structured region: each
/// fine node maps to its nearest coarse tensor point, ties toward the lower
/// index.
fn tensor_constant_interp(fine_dims: &[usize], axes: &[Vec<usize>]) -> SparseMatrix {
    let n_fine: usize = fine_dims.iter().product();
    let coarse_dims: Vec<usize> = axes.iter().map(|a| a.len()).collect();
    let n_coarse: usize = coarse_dims.iter().product();
    let cstrides = axis_strides(&coarse_dims);
    let dim = fine_dims.len();

    let mut row_ptr = Vec::with_capacity(n_fine + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::with_capacity(n_fine);
    for l in 0..n_fine {
        let c = local_coords(l, fine_dims);
        let mut col = 0;
        for d in 0..dim {
            col += nearest_coarse_pos(&axes[d], c[d]) * cstrides[d];
        }
        col_idx.push(col);
        row_ptr.push(col_idx.len());
    }
    let values = vec![1.0; n_fine];
    SparseMatrix::from_csr(n_fine, n_coarse, row_ptr, col_idx, values)
        .expect("constant interpolation produces valid CSR")
}

fn constant_from_aggregation(agg: &Aggregation) -> SparseMatrix {
    let n_fine = agg.agg_of_node.len();
    let n_coarse = agg.root_of_agg.len();
    let mut row_ptr = Vec::with_capacity(n_fine + 1);
    row_ptr.push(0usize);
    let mut col_idx = Vec::with_capacity(n_fine);
    for &a in &agg.agg_of_node {
        col_idx.push(a);
        row_ptr.push(col_idx.len());
    }
    SparseMatrix::from_csr(n_fine, n_coarse, row_ptr, col_idx, vec![1.0; n_fine])
        .expect("aggregation rows are single entries")
}

/// Per-region tensor-product linear interpolation. All regions must be
/// structured; neighboring regions must select co-located coarse interface
/// points (enforced when the coarse layout is built).
pub fn build_linear_interp(
    fine: &Arc<RegionLayout>,
    cps: &CoarsePointSet,
    coarse: &Arc<RegionLayout>,
) -> Result<RegionMatrix> {
    let blocks: Result<Vec<SparseMatrix>> = fine
        .regions()
        .iter()
        .zip(&cps.per_region)
        .map(|(desc, rc)| match (&desc.kind, rc) {
            (RegionKind::Structured { dims }, RegionCoarse::Structured { axes }) => {
                Ok(tensor_linear_interp(dims, axes))
            }
            _ => Err(Error::InvalidConfig(format!(
                "linear interpolation requires structured regions; region {} is not",
                desc.id
            ))),
        })
        .collect();
    RegionMatrix::new(
        fine.clone(),
        coarse.clone(),
        blocks?,
        RegionMatrixForm::InterfaceReplicated,
    )
}

/// Per-region piecewise-constant interpolation; unstructured regions use
/// their aggregation.
pub fn build_constant_interp(
    fine: &Arc<RegionLayout>,
    cps: &CoarsePointSet,
    coarse: &Arc<RegionLayout>,
) -> Result<RegionMatrix> {
    let blocks: Result<Vec<SparseMatrix>> = fine
        .regions()
        .iter()
        .zip(&cps.per_region)
        .map(|(desc, rc)| match (&desc.kind, rc) {
            (RegionKind::Structured { dims }, RegionCoarse::Structured { axes }) => {
                Ok(tensor_constant_interp(dims, axes))
            }
            (RegionKind::Unstructured, RegionCoarse::Unstructured(agg)) => {
                if agg.agg_of_node.len() != desc.size {
                    return Err(Error::UnassignedNode {
                        node: agg.agg_of_node.len(),
                        region: desc.id,
                    });
                }
                Ok(constant_from_aggregation(agg))
            }
            _ => Err(Error::InvalidConfig(format!(
                "coarse selection kind does not match region {} kind",
                desc.id
            ))),
        })
        .collect();
    RegionMatrix::new(
        fine.clone(),
        coarse.clone(),
        blocks?,
        RegionMatrixForm::InterfaceReplicated,
    )
}

/// Barrier check for interface-replicated transfers: co-located fine rows
/// must carry identical stencils over co-located coarse points, and those
/// coarse points must themselves be shared by every region containing the
/// fine node. These are exactly the conditions under which the block
/// transfers imply a well-defined composite transfer.
pub fn verify_interface_replicated(p: &RegionMatrix) -> Result<()> {
    let fine = p.row_layout();
    let coarse = p.col_layout();
    for &i in fine.interface_nodes() {
        let slots = fine.slots_of(i);
        let (r0, l0) = slots[0];
        let canon: Vec<(usize, f64)> = {
            let (cols, vals) = p.block(r0).row(l0);
            cols.iter()
                .map(|&lj| coarse.composite_of(r0, lj))
                .zip(vals.iter().copied())
                .collect()
        };
        for &(cj, _) in &canon {
            // the referenced coarse node must live in every sharing region
            for &(r, _) in slots {
                if coarse.local_of(cj, r).is_none() {
                    return Err(Error::InterfaceStencilMismatch {
                        composite: i,
                        region_a: r0,
                        region_b: r,
                    });
                }
            }
        }
        for &(r, l) in &slots[1..] {
            let (cols, vals) = p.block(r).row(l);
            let row: Vec<(usize, f64)> = cols
                .iter()
                .map(|&lj| coarse.composite_of(r, lj))
                .zip(vals.iter().copied())
                .collect();
            if row != canon {
                return Err(Error::InterfaceStencilMismatch {
                    composite: i,
                    region_a: r0,
                    region_b: r,
                });
            }
        }
    }
    Ok(())
}

/// Interface-first aggregation for one unstructured region.
///
/// Phase 1 aggregates every interface node toward the structured coarse
/// lattice point implied by the region's (shadow) box dims and rate, so that
/// the roots coincide with the coarse points neighboring structured regions
/// select. Phase 2 is plain greedy aggregation of the remainder: the lowest
/// unaggregated node becomes a root and absorbs its unaggregated graph
/// neighbors.
pub fn hybrid_aggregation(
    region: usize,
    a_block: &SparseMatrix,
    is_interface: &[bool],
    coords: &[Option<[usize; 3]>],
    shadow_dims: &[usize],
    rate: usize,
) -> Result<Aggregation> {
    let n = a_block.n_rows();
    assert_eq!(is_interface.len(), n);
    assert_eq!(coords.len(), n);
    let axes: Vec<Vec<usize>> = shadow_dims
        .iter()
        .map(|&d| coarse_axis_indices(d, rate))
        .collect();
    let dim = shadow_dims.len();

    let mut coord_to_node: HashMap<[usize; 3], usize> = HashMap::new();
    for (i, c) in coords.iter().enumerate() {
        if let Some(c) = c {
            coord_to_node.insert(*c, i);
        }
    }

    const UNSET: usize = usize::MAX;
    let mut agg_of_node = vec![UNSET; n];
    let mut roots: Vec<usize> = Vec::new();
    let mut agg_index: HashMap<usize, usize> = HashMap::new(); // root -> agg id

    // phase 1: interface nodes toward lattice roots
    for i in 0..n {
        if !is_interface[i] {
            continue;
        }
        let c = coords[i].ok_or(Error::NoDeducibleRoot { node: i, region })?;
        let mut target = [0usize; 3];
        for d in 0..dim {
            target[d] = axes[d][nearest_coarse_pos(&axes[d], c[d])];
        }
        let root = *coord_to_node
            .get(&target)
            .ok_or(Error::NoDeducibleRoot { node: i, region })?;
        let agg = *agg_index.entry(root).or_insert_with(|| {
            roots.push(root);
            roots.len() - 1
        });
        agg_of_node[i] = agg;
    }
    debug_assert!(
        (0..n).filter(|&i| is_interface[i]).all(|i| agg_of_node[i] != UNSET),
        "no interface vertices may remain unaggregated after phase 1"
    );

    // phase 2: greedy plain aggregation of the interior
    for i in 0..n {
        if agg_of_node[i] != UNSET {
            continue;
        }
        let agg = roots.len();
        roots.push(i);
        agg_of_node[i] = agg;
        let (cols, _) = a_block.row(i);
        for &j in cols {
            if j != i && agg_of_node[j] == UNSET {
                agg_of_node[j] = agg;
            }
        }
    }

    // canonical numbering: ascending root local index
    let mut order: Vec<usize> = (0..roots.len()).collect();
    order.sort_by_key(|&a| roots[a]);
    let mut renumber = vec![0usize; roots.len()];
    for (new, &old) in order.iter().enumerate() {
        renumber[old] = new;
    }
    let root_of_agg: Vec<usize> = order.iter().map(|&a| roots[a]).collect();
    let agg_of_node: Vec<usize> = agg_of_node.into_iter().map(|a| renumber[a]).collect();
    Ok(Aggregation {
        agg_of_node,
        root_of_agg,
    })
}

/// Region-local Galerkin product: one triple product per region block, no
/// cross-block data access. The reassembly of the result equals the
/// composite R A P whenever the transfer blocks pass
/// [`verify_interface_replicated`].
pub fn region_rap(
    r: &RegionMatrix,
    a: &RegionMatrix,
    p: &RegionMatrix,
) -> Result<RegionMatrix> {
    if a.form() != RegionMatrixForm::Split {
        return Err(Error::InvalidConfig(
            "region_rap needs the operator in split form".into(),
        ));
    }
    if p.form() != RegionMatrixForm::InterfaceReplicated
        || r.form() != RegionMatrixForm::InterfaceReplicated
    {
        return Err(Error::InvalidConfig(
            "region_rap needs interface-replicated transfers".into(),
        ));
    }
    let blocks: Result<Vec<SparseMatrix>> = (0..a.n_blocks())
        .into_par_iter()
        .map(|k| triple_product(r.block(k), a.block(k), p.block(k)))
        .collect();
    RegionMatrix::new(
        p.col_layout().clone(),
        p.col_layout().clone(),
        blocks?,
        RegionMatrixForm::Split,
    )
}

/// Structured fast path for the piecewise-constant Galerkin product on a 2D
/// block with at most a 9-point stencil.
///
/// A one-time symbolic pass reads the integer arrays to validate the stencil
/// and record which of the nine offsets each row carries; the numeric loop
/// then walks `values` in order, inferring every index from the grid layout,
/// and scatters into the coarse operator at positions computed arithmetically.
pub fn fast_rap_2d_const(
    a: &SparseMatrix,
    nx: usize,
    ny: usize,
    rate: usize,
) -> Result<SparseMatrix> {
    if a.n_rows() != nx * ny || a.n_cols() != nx * ny {
        return Err(Error::ShapeMismatch {
            op: "fast_rap_2d_const",
            lhs_rows: a.n_rows(),
            lhs_cols: a.n_cols(),
            rhs_rows: nx * ny,
            rhs_cols: nx * ny,
        });
    }
    let cax = coarse_axis_indices(nx, rate);
    let cay = coarse_axis_indices(ny, rate);
    let (ncx, ncy) = (cax.len(), cay.len());
    let aggx: Vec<u32> = (0..nx).map(|x| nearest_coarse_pos(&cax, x) as u32).collect();
    let aggy: Vec<u32> = (0..ny).map(|y| nearest_coarse_pos(&cay, y) as u32).collect();

    // symbolic pass: per-row bitmask over the 9 stencil offsets, (dy+1)*3+(dx+1)
    let row_ptr = a.row_ptr();
    let col_idx = a.col_idx();
    let mut masks: Vec<u16> = Vec::with_capacity(nx * ny);
    for y in 0..ny {
        for x in 0..nx {
            let i = y * nx + x;
            let mut mask = 0u16;
            for k in row_ptr[i]..row_ptr[i + 1] {
                let j = col_idx[k] as i64;
                let (jx, jy) = (j % nx as i64, j / nx as i64);
                let (dx, dy) = (jx - x as i64, jy - y as i64);
                if dx.abs() > 1 || dy.abs() > 1 {
                    return Err(Error::StencilTooWide { row: i, max_width: 9 });
                }
                mask |= 1 << ((dy + 1) * 3 + (dx + 1));
            }
            masks.push(mask);
        }
    }

    // coarse operator: full 9-point truncated pattern, values accumulated
    let mut c_row_ptr = Vec::with_capacity(ncx * ncy + 1);
    c_row_ptr.push(0usize);
    let mut c_col_idx = Vec::new();
    for cy in 0..ncy {
        for cx in 0..ncx {
            for dy in -1i64..=1 {
                let jy = cy as i64 + dy;
                if jy < 0 || jy >= ncy as i64 {
                    continue;
                }
                for dx in -1i64..=1 {
                    let jx = cx as i64 + dx;
                    if jx < 0 || jx >= ncx as i64 {
                        continue;
                    }
                    c_col_idx.push(jx as usize + ncx * jy as usize);
                }
            }
            c_row_ptr.push(c_col_idx.len());
        }
    }
    let mut c_values = vec![0.0f64; c_col_idx.len()];

    // numeric pass: only `values` and the precomputed masks are read
    let values = a.values();
    let mut k = 0usize;
    for y in 0..ny {
        let cy = aggy[y] as usize;
        // valid coarse dy range and row lengths for this coarse y
        for x in 0..nx {
            let mask = masks[y * nx + x];
            if mask == 0 {
                continue;
            }
            let cx = aggx[x] as usize;
            let base = c_row_ptr[cy * ncx + cx];
            let lo_x = (cx > 0) as usize;
            let row_len = 1 + lo_x + (cx < ncx - 1) as usize;
            let lo_y = (cy > 0) as usize;
            for bit in 0..9u16 {
                if mask & (1 << bit) == 0 {
                    continue;
                }
                let dy = (bit / 3) as i64 - 1;
                let dx = (bit % 3) as i64 - 1;
                let v = values[k];
                k += 1;
                let jx = (x as i64 + dx) as usize;
                let jy = (y as i64 + dy) as usize;
                let cjx = aggx[jx] as usize;
                let cjy = aggy[jy] as usize;
                // position of (cjx, cjy) inside coarse row (cx, cy)
                let row_off = (cjy + lo_y - cy) * row_len + (cjx + lo_x - cx);
                c_values[base + row_off] += v;
            }
        }
    }
    debug_assert_eq!(k, values.len());

    SparseMatrix::from_csr(ncx * ncy, ncx * ncy, c_row_ptr, c_col_idx, c_values)
}

/// Composite-grid linear interpolation on a global structured grid; the
/// classical-reference counterpart of the per-region builder.
pub fn composite_linear_interp(dims: &[usize], rate: usize) -> SparseMatrix {
    let axes: Vec<Vec<usize>> = dims.iter().map(|&n| coarse_axis_indices(n, rate)).collect();
    tensor_linear_interp(dims, &axes)
}

/// Composite-grid piecewise-constant interpolation.
pub fn composite_constant_interp(dims: &[usize], rate: usize) -> SparseMatrix {
    let axes: Vec<Vec<usize>> = dims.iter().map(|&n| coarse_axis_indices(n, rate)).collect();
    tensor_constant_interp(dims, &axes)
}

/// Coarse grid dims implied by one coarsening step at the given rate.
pub fn coarse_grid_dims(dims: &[usize], rate: usize) -> Vec<usize> {
    dims.iter()
        .map(|&n| coarse_axis_indices(n, rate).len())
        .collect()
}
