//! Region layouts and vectors: the bookkeeping that relates replicated
//! per-region unknowns to composite unknowns.
//!
//! A layout plays the role of the boolean map between the two numberings. It
//! is never stored as an explicit matrix; instead the operations it induces
//! (replication, co-located summation, averaging, sharing-count scaling) are
//! implemented directly on the id tables.
//!
//! All co-located reductions run in ascending region-id order so that
//! floating-point results are schedule-independent: two runs, with any worker
//! count, produce bitwise-identical vectors.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Whether a region carries a structured tensor grid or only a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegionKind {
    Structured { dims: Vec<usize> },
    Unstructured,
}

/// One region of the domain decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionDesc {
    pub id: usize,
    pub kind: RegionKind,
    pub size: usize,
}

impl RegionDesc {
    pub fn structured(id: usize, dims: Vec<usize>) -> Self {
        let size = dims.iter().product();
        Self {
            id,
            kind: RegionKind::Structured { dims },
            size,
        }
    }

    pub fn unstructured(id: usize, size: usize) -> Self {
        Self {
            id,
            kind: RegionKind::Unstructured,
            size,
        }
    }

    pub fn dims(&self) -> Option<&[usize]> {
        match &self.kind {
            RegionKind::Structured { dims } => Some(dims),
            RegionKind::Unstructured => None,
        }
    }
}

/// The region layout: regions, node-to-region membership and the mutually
/// inverse composite <-> (region, local) id tables.
///
/// Local indices within a region are contiguous `0..size`, assigned in
/// ascending composite-id order; region `r`'s slots occupy the global slot
/// range `[offset(r), offset(r) + size(r))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLayout {
    n_composite: usize,
    n_region_dofs: usize,
    regions: Vec<RegionDesc>,
    /// per composite id: sorted region ids containing it
    regions_per_node: Vec<Vec<usize>>,
    /// per region: local index -> composite id (ascending)
    region_to_composite: Vec<Vec<usize>>,
    /// per composite id: (region, local) slots, sorted by region id
    composite_to_region: Vec<Vec<(usize, usize)>>,
    /// sharing count q per composite id
    sharing: Vec<usize>,
    /// global slot offset per region
    offsets: Vec<usize>,
    /// composite ids with sharing count >= 2
    interface_nodes: Vec<usize>,
}

impl RegionLayout {
    /// Builds a layout from per-node region membership lists and region
    /// descriptors (one per region id, in id order).
    pub fn build(membership: &[Vec<usize>], regions: Vec<RegionDesc>) -> Result<Self> {
        let n_composite = membership.len();
        let m = regions.len();
        for (r, desc) in regions.iter().enumerate() {
            if desc.id != r {
                return Err(Error::InvalidConfig(format!(
                    "region descriptors must be listed in id order; found id {} at position {r}",
                    desc.id
                )));
            }
            if let RegionKind::Structured { dims } = &desc.kind {
                let prod: usize = dims.iter().product();
                if prod != desc.size {
                    return Err(Error::RegionSizeMismatch {
                        region: r,
                        declared: desc.size,
                        found: prod,
                    });
                }
            }
        }

        let mut regions_per_node = Vec::with_capacity(n_composite);
        let mut region_to_composite = vec![Vec::new(); m];
        let mut composite_to_region = Vec::with_capacity(n_composite);
        for (i, members) in membership.iter().enumerate() {
            let mut ids = members.clone();
            ids.sort_unstable();
            ids.dedup();
            if ids.is_empty() {
                return Err(Error::NodeWithoutRegion { node: i });
            }
            if let Some(&bad) = ids.iter().find(|&&r| r >= m) {
                return Err(Error::InvalidConfig(format!(
                    "node {i} references unknown region {bad}"
                )));
            }
            let mut slots = Vec::with_capacity(ids.len());
            for &r in &ids {
                let local = region_to_composite[r].len();
                region_to_composite[r].push(i);
                slots.push((r, local));
            }
            composite_to_region.push(slots);
            regions_per_node.push(ids);
        }

        for (r, desc) in regions.iter().enumerate() {
            if region_to_composite[r].len() != desc.size {
                return Err(Error::RegionSizeMismatch {
                    region: r,
                    declared: desc.size,
                    found: region_to_composite[r].len(),
                });
            }
        }

        let sharing: Vec<usize> = regions_per_node.iter().map(|v| v.len()).collect();
        let n_region_dofs: usize = sharing.iter().sum();
        let mut offsets = Vec::with_capacity(m);
        let mut acc = 0;
        for desc in &regions {
            offsets.push(acc);
            acc += desc.size;
        }
        debug_assert_eq!(acc, n_region_dofs);
        let interface_nodes = (0..n_composite).filter(|&i| sharing[i] >= 2).collect();

        Ok(Self {
            n_composite,
            n_region_dofs,
            regions,
            regions_per_node,
            region_to_composite,
            composite_to_region,
            sharing,
            offsets,
            interface_nodes,
        })
    }

    pub fn n_composite(&self) -> usize {
        self.n_composite
    }

    pub fn n_region_dofs(&self) -> usize {
        self.n_region_dofs
    }

    pub fn n_regions(&self) -> usize {
        self.regions.len()
    }

    pub fn region(&self, r: usize) -> &RegionDesc {
        &self.regions[r]
    }

    pub fn regions(&self) -> &[RegionDesc] {
        &self.regions
    }

    pub fn region_size(&self, r: usize) -> usize {
        self.regions[r].size
    }

    pub fn offset(&self, r: usize) -> usize {
        self.offsets[r]
    }

    /// Sharing count of composite node `i`.
    pub fn sharing(&self, i: usize) -> usize {
        self.sharing[i]
    }

    /// Sorted region ids containing composite node `i`.
    pub fn regions_of(&self, i: usize) -> &[usize] {
        &self.regions_per_node[i]
    }

    /// (region, local) slots of composite node `i`, sorted by region id.
    pub fn slots_of(&self, i: usize) -> &[(usize, usize)] {
        &self.composite_to_region[i]
    }

    pub fn composite_of(&self, r: usize, local: usize) -> usize {
        self.region_to_composite[r][local]
    }

    pub fn local_ids(&self, r: usize) -> &[usize] {
        &self.region_to_composite[r]
    }

    /// Composite ids shared by at least two regions.
    pub fn interface_nodes(&self) -> &[usize] {
        &self.interface_nodes
    }

    /// Local index of composite node `i` within region `r`, if present.
    pub fn local_of(&self, i: usize, r: usize) -> Option<usize> {
        self.composite_to_region[i]
            .iter()
            .find(|&&(reg, _)| reg == r)
            .map(|&(_, l)| l)
    }

    /// Restricts the layout to per-region coarse selections, producing the
    /// coarse layout and the injection list (coarse composite id -> fine
    /// composite id).
    ///
    /// Selections of neighboring regions must agree on shared nodes: every
    /// composite node is selected either by all regions containing it or by
    /// none.
    pub fn coarsen(
        &self,
        selections: &[Vec<usize>],
        coarse_regions: Vec<RegionDesc>,
    ) -> Result<(RegionLayout, Vec<usize>)> {
        assert_eq!(selections.len(), self.n_regions());
        let mut sel_count = vec![0usize; self.n_composite];
        for (r, sel) in selections.iter().enumerate() {
            debug_assert!(sel.windows(2).all(|w| w[0] < w[1]), "selection not sorted");
            for &l in sel {
                sel_count[self.region_to_composite[r][l]] += 1;
            }
        }
        let mut injection = Vec::new();
        let mut membership = Vec::new();
        for i in 0..self.n_composite {
            if sel_count[i] == 0 {
                continue;
            }
            if sel_count[i] != self.sharing[i] {
                return Err(Error::InterfaceCoarseMismatch {
                    composite: i,
                    selected: sel_count[i],
                    sharing: self.sharing[i],
                });
            }
            injection.push(i);
            membership.push(self.regions_per_node[i].clone());
        }
        let coarse = RegionLayout::build(&membership, coarse_regions)?;
        Ok((coarse, injection))
    }

    /// Writes the line-oriented layout file format.
    pub fn write_layout<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "regions {}", self.n_regions())?;
        for desc in &self.regions {
            match &desc.kind {
                RegionKind::Structured { dims } => {
                    write!(w, "region {} structured", desc.id)?;
                    for d in dims {
                        write!(w, " {d}")?;
                    }
                    writeln!(w)?;
                }
                RegionKind::Unstructured => {
                    writeln!(w, "region {} unstructured {}", desc.id, desc.size)?;
                }
            }
        }
        for i in 0..self.n_composite {
            write!(w, "node {i} :")?;
            for &(r, l) in &self.composite_to_region[i] {
                write!(w, " {r} {l}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_layout_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_layout(&mut w)
    }

    /// Reads the layout file format and rebuilds the layout, verifying that
    /// the stored local indices match the canonical numbering.
    pub fn read_layout<R: BufRead>(r: &mut R) -> Result<Self> {
        let err = |detail: String| Error::Parse {
            what: "layout file",
            detail,
        };
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| err("empty file".into()))??;
        let m: usize = first
            .trim()
            .strip_prefix("regions ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("expected 'regions <m>', got '{first}'")))?;
        let mut regions = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines.next().ok_or_else(|| err("missing region line".into()))??;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() < 4 || tok[0] != "region" {
                return Err(err(format!("bad region line '{line}'")));
            }
            let id: usize = tok[1].parse().map_err(|_| err("bad region id".into()))?;
            match tok[2] {
                "structured" => {
                    let dims: Vec<usize> = tok[3..]
                        .iter()
                        .map(|t| t.parse().map_err(|_| err("bad dim".into())))
                        .collect::<Result<_>>()?;
                    if dims.is_empty() || dims.len() > 3 {
                        return Err(err("structured regions need 1-3 dims".into()));
                    }
                    regions.push(RegionDesc::structured(id, dims));
                }
                "unstructured" => {
                    let size: usize = tok[3].parse().map_err(|_| err("bad size".into()))?;
                    regions.push(RegionDesc::unstructured(id, size));
                }
                other => return Err(err(format!("unknown region kind '{other}'"))),
            }
        }
        let mut membership: Vec<Vec<usize>> = Vec::new();
        let mut stored_slots: Vec<Vec<(usize, usize)>> = Vec::new();
        for line in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            let tok: Vec<&str> = t.split_whitespace().collect();
            if tok.len() < 5 || tok[0] != "node" || tok[2] != ":" || tok.len() % 2 == 0 {
                return Err(err(format!("bad node line '{line}'")));
            }
            let id: usize = tok[1].parse().map_err(|_| err("bad node id".into()))?;
            if id != membership.len() {
                return Err(err(format!(
                    "node ids must be consecutive; expected {}, got {id}",
                    membership.len()
                )));
            }
            let mut members = Vec::new();
            let mut slots = Vec::new();
            for pair in tok[3..].chunks(2) {
                let r: usize = pair[0].parse().map_err(|_| err("bad region id".into()))?;
                let l: usize = pair[1].parse().map_err(|_| err("bad local idx".into()))?;
                members.push(r);
                slots.push((r, l));
            }
            membership.push(members);
            stored_slots.push(slots);
        }
        let layout = RegionLayout::build(&membership, regions)?;
        for (i, slots) in stored_slots.iter().enumerate() {
            if layout.composite_to_region[i] != *slots {
                return Err(err(format!(
                    "node {i}: stored local indices do not match the canonical \
                     ascending-composite numbering"
                )));
            }
        }
        Ok(layout)
    }

    pub fn read_layout_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_layout(&mut r)
    }
}

/// Per-region dense blocks with replicated interface entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionVector {
    blocks: Vec<Vec<f64>>,
}

impl RegionVector {
    pub fn zeros(layout: &RegionLayout) -> Self {
        Self {
            blocks: layout.regions.iter().map(|d| vec![0.0; d.size]).collect(),
        }
    }

    pub fn from_blocks(blocks: Vec<Vec<f64>>) -> Self {
        Self { blocks }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, r: usize) -> &[f64] {
        &self.blocks[r]
    }

    pub fn block_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.blocks[r]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn fill(&mut self, v: f64) {
        for b in &mut self.blocks {
            b.iter_mut().for_each(|x| *x = v);
        }
    }

    /// self += alpha * other, blockwise.
    pub fn add_scaled(&mut self, alpha: f64, other: &RegionVector) {
        debug_assert_eq!(self.n_blocks(), other.n_blocks());
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            debug_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    fn check(&self, layout: &RegionLayout, op: &'static str) -> Result<()> {
        if self.n_blocks() != layout.n_regions()
            || self
                .blocks
                .iter()
                .zip(&layout.regions)
                .any(|(b, d)| b.len() != d.size)
        {
            return Err(Error::LengthMismatch {
                op,
                expected: layout.n_region_dofs(),
                found: self.total_len(),
            });
        }
        Ok(())
    }
}

/// Replicates a composite vector into region form: every slot of composite
/// node `i` receives `v[i]`.
pub fn to_region(layout: &RegionLayout, v: &[f64]) -> Result<RegionVector> {
    if v.len() != layout.n_composite {
        return Err(Error::LengthMismatch {
            op: "to_region",
            expected: layout.n_composite,
            found: v.len(),
        });
    }
    let mut out = RegionVector::zeros(layout);
    for r in 0..layout.n_regions() {
        let ids = &layout.region_to_composite[r];
        let block = out.block_mut(r);
        for (l, &i) in ids.iter().enumerate() {
            block[l] = v[i];
        }
    }
    Ok(out)
}

/// How co-located entries are combined when going back to composite form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombineMode {
    /// Add co-located entries (the summation action of the layout map).
    Sum,
    /// Divide the sum by the sharing count (the averaging action).
    Average,
}

/// Collapses a region vector to composite form.
pub fn to_composite(layout: &RegionLayout, v: &RegionVector, mode: CombineMode) -> Result<Vec<f64>> {
    v.check(layout, "to_composite")?;
    let mut out = vec![0.0; layout.n_composite];
    for i in 0..layout.n_composite {
        let mut acc = 0.0;
        for &(r, l) in &layout.composite_to_region[i] {
            acc += v.block(r)[l];
        }
        out[i] = match mode {
            CombineMode::Sum => acc,
            CombineMode::Average => acc / layout.sharing[i] as f64,
        };
    }
    Ok(out)
}

/// Replaces every slot by the sum over its co-located slots; interior slots
/// are untouched. This is the interface summation of the layout map.
pub fn interface_sum(layout: &RegionLayout, v: &mut RegionVector) -> Result<()> {
    v.check(layout, "interface_sum")?;
    for &i in &layout.interface_nodes {
        let slots = &layout.composite_to_region[i];
        let mut acc = 0.0;
        for &(r, l) in slots {
            acc += v.block(r)[l];
        }
        for &(r, l) in slots {
            v.block_mut(r)[l] = acc;
        }
    }
    Ok(())
}

/// Divides every slot by its sharing count.
pub fn interface_scale(layout: &RegionLayout, v: &mut RegionVector) -> Result<()> {
    v.check(layout, "interface_scale")?;
    for &i in &layout.interface_nodes {
        let q = layout.sharing[i] as f64;
        for &(r, l) in &layout.composite_to_region[i] {
            v.block_mut(r)[l] /= q;
        }
    }
    Ok(())
}

/// Forces co-located entries to coincide by averaging them.
pub fn make_consistent(layout: &RegionLayout, v: &mut RegionVector) -> Result<()> {
    v.check(layout, "make_consistent")?;
    for &i in &layout.interface_nodes {
        let slots = &layout.composite_to_region[i];
        let mut acc = 0.0;
        for &(r, l) in slots {
            acc += v.block(r)[l];
        }
        let avg = acc / slots.len() as f64;
        for &(r, l) in slots {
            v.block_mut(r)[l] = avg;
        }
    }
    Ok(())
}

/// Checks that co-located entries agree within `tol` (absolute on the spread,
/// relative to the magnitude of the entries).
pub fn check_interface_consistent(
    layout: &RegionLayout,
    v: &RegionVector,
    tol: f64,
) -> Result<()> {
    v.check(layout, "check_interface_consistent")?;
    for &i in &layout.interface_nodes {
        let slots = &layout.composite_to_region[i];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &(r, l) in slots {
            let x = v.block(r)[l];
            lo = lo.min(x);
            hi = hi.max(x);
        }
        let spread = hi - lo;
        let scale = lo.abs().max(hi.abs()).max(1.0);
        if spread > tol * scale {
            return Err(Error::InconsistentInterface {
                composite: i,
                spread,
            });
        }
    }
    Ok(())
}
