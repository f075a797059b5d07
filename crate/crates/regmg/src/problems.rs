//! Test discretizations and region partitions: finite-difference Poisson
//! operators in 2D/3D and conforming grid-of-regions layouts.

use crate::error::{Error, Result};
use crate::region::{RegionDesc, RegionLayout};
use crate::sparse::SparseMatrix;

/// Finite-difference stencil choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stencil {
    /// 2D 5-point: axis neighbors only.
    FivePoint,
    /// 2D 9-point: axis plus diagonal neighbors.
    NinePoint,
    /// 3D 7-point: axis neighbors only.
    SevenPoint3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Boundary values eliminated; the diagonal keeps the full stencil weight.
    Dirichlet,
    /// Pure Neumann; every row sums to zero.
    Neumann,
}

impl std::str::FromStr for Stencil {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "5pt" => Ok(Stencil::FivePoint),
            "9pt" => Ok(Stencil::NinePoint),
            "7pt3d" => Ok(Stencil::SevenPoint3d),
            other => Err(Error::InvalidConfig(format!("unknown stencil '{other}'"))),
        }
    }
}

fn stencil_offsets(stencil: Stencil) -> Vec<[i64; 3]> {
    match stencil {
        Stencil::FivePoint => vec![[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0]],
        Stencil::NinePoint => {
            let mut o = Vec::new();
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx != 0 || dy != 0 {
                        o.push([dx, dy, 0]);
                    }
                }
            }
            o
        }
        Stencil::SevenPoint3d => vec![
            [-1, 0, 0],
            [1, 0, 0],
            [0, -1, 0],
            [0, 1, 0],
            [0, 0, -1],
            [0, 0, 1],
        ],
    }
}

/// Standard finite-difference Laplacian on a `dims` grid with unit off-diagonal
/// coupling. Degenerate axes (size 1) simply drop the corresponding stencil
/// legs, so `dims = (n, 1)` yields the 1D operator.
pub fn gen_poisson(dims: &[usize], stencil: Stencil, bc: BoundaryCondition) -> Result<SparseMatrix> {
    let expected_dim = match stencil {
        Stencil::FivePoint | Stencil::NinePoint => 2,
        Stencil::SevenPoint3d => 3,
    };
    if dims.len() != expected_dim {
        return Err(Error::InvalidConfig(format!(
            "stencil expects {expected_dim} dims, got {}",
            dims.len()
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidConfig("grid axes must be nonempty".into()));
    }
    let d3 = [
        dims[0],
        *dims.get(1).unwrap_or(&1),
        *dims.get(2).unwrap_or(&1),
    ];
    let n: usize = d3.iter().product();
    let offsets = stencil_offsets(stencil);
    // an offset exists in the lattice only if every axis it moves along extends
    let live: Vec<[i64; 3]> = offsets
        .into_iter()
        .filter(|o| (0..3).all(|a| o[a] == 0 || d3[a] > 1))
        .collect();

    let mut triplets = Vec::new();
    for z in 0..d3[2] {
        for y in 0..d3[1] {
            for x in 0..d3[0] {
                let i = x + d3[0] * (y + d3[1] * z);
                let mut in_grid = 0usize;
                for o in &live {
                    let nx = x as i64 + o[0];
                    let ny = y as i64 + o[1];
                    let nz = z as i64 + o[2];
                    if nx >= 0
                        && ny >= 0
                        && nz >= 0
                        && (nx as usize) < d3[0]
                        && (ny as usize) < d3[1]
                        && (nz as usize) < d3[2]
                    {
                        let j = nx as usize + d3[0] * (ny as usize + d3[1] * nz as usize);
                        triplets.push((i, j, -1.0));
                        in_grid += 1;
                    }
                }
                let diag = match bc {
                    BoundaryCondition::Dirichlet => live.len() as f64,
                    BoundaryCondition::Neumann => in_grid as f64,
                };
                triplets.push((i, i, diag));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(n, n, &triplets))
}

/// Partitions a `global_dims` point grid into a conforming grid of regions
/// (`region_counts` per axis). Interface planes are shared: nodes on them
/// belong to 2 regions, on edges to 4, on corners to 8.
///
/// Returns the per-node membership lists and the region descriptors
/// (row-major region ids, x fastest).
pub fn gen_region_grid(
    global_dims: &[usize],
    region_counts: &[usize],
) -> Result<(Vec<Vec<usize>>, Vec<RegionDesc>)> {
    if global_dims.len() != region_counts.len() || global_dims.is_empty() || global_dims.len() > 3 {
        return Err(Error::InvalidConfig(
            "region counts must match grid dimensionality (1-3 axes)".into(),
        ));
    }
    let dim = global_dims.len();
    let mut spans = Vec::with_capacity(dim);
    for a in 0..dim {
        let (n, c) = (global_dims[a], region_counts[a]);
        if c == 0 || n < 2 {
            return Err(Error::InvalidConfig(format!(
                "axis {a}: need at least 2 points and 1 region"
            )));
        }
        if (n - 1) % c != 0 {
            return Err(Error::InvalidConfig(format!(
                "axis {a}: {c} regions do not divide the {} intervals evenly",
                n - 1
            )));
        }
        spans.push((n - 1) / c);
    }

    // regions containing coordinate x along one axis
    let axis_regions = |x: usize, a: usize| -> Vec<usize> {
        let (s, c) = (spans[a], region_counts[a]);
        let k = x / s;
        if x % s == 0 {
            let mut v = Vec::new();
            if k > 0 {
                v.push(k - 1);
            }
            if k < c {
                v.push(k);
            }
            v
        } else {
            vec![k]
        }
    };

    let d3 = [
        global_dims[0],
        *global_dims.get(1).unwrap_or(&1),
        *global_dims.get(2).unwrap_or(&1),
    ];
    let c3 = [
        region_counts[0],
        *region_counts.get(1).unwrap_or(&1),
        *region_counts.get(2).unwrap_or(&1),
    ];
    let n: usize = d3.iter().product();
    let mut membership = Vec::with_capacity(n);
    for z in 0..d3[2] {
        let rz = if dim > 2 { axis_regions(z, 2) } else { vec![0] };
        for y in 0..d3[1] {
            let ry = if dim > 1 { axis_regions(y, 1) } else { vec![0] };
            for x in 0..d3[0] {
                let rx = axis_regions(x, 0);
                let mut ids = Vec::with_capacity(rx.len() * ry.len() * rz.len());
                for &kz in &rz {
                    for &ky in &ry {
                        for &kx in &rx {
                            ids.push(kx + c3[0] * (ky + c3[1] * kz));
                        }
                    }
                }
                ids.sort_unstable();
                membership.push(ids);
            }
        }
    }

    let n_regions: usize = region_counts.iter().product();
    let mut descs = Vec::with_capacity(n_regions);
    for id in 0..n_regions {
        let dims: Vec<usize> = (0..dim).map(|a| spans[a] + 1).collect();
        descs.push(RegionDesc::structured(id, dims));
    }
    Ok((membership, descs))
}

/// Marks the given regions as unstructured, dropping their grid dims to a
/// graph-only view. The membership and numbering are unchanged.
pub fn flag_regions(layout: &RegionLayout, unstructured_ids: &[usize]) -> Result<RegionLayout> {
    for &id in unstructured_ids {
        if id >= layout.n_regions() {
            return Err(Error::InvalidConfig(format!("unknown region id {id}")));
        }
    }
    let membership: Vec<Vec<usize>> = (0..layout.n_composite())
        .map(|i| layout.regions_of(i).to_vec())
        .collect();
    let descs: Vec<RegionDesc> = layout
        .regions()
        .iter()
        .map(|d| {
            if unstructured_ids.contains(&d.id) {
                RegionDesc::unstructured(d.id, d.size)
            } else {
                d.clone()
            }
        })
        .collect();
    RegionLayout::build(&membership, descs)
}

/// Global grid coordinates of a region's nodes, derived from the row-major
/// composite numbering. Used to recover box dims for flagged regions.
pub fn region_box_dims(layout: &RegionLayout, global_dims: &[usize], r: usize) -> Vec<usize> {
    let d3 = [
        global_dims[0],
        *global_dims.get(1).unwrap_or(&1),
        *global_dims.get(2).unwrap_or(&1),
    ];
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for &i in layout.local_ids(r) {
        let c = [i % d3[0], (i / d3[0]) % d3[1], i / (d3[0] * d3[1])];
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    (0..global_dims.len()).map(|a| hi[a] - lo[a] + 1).collect()
}
