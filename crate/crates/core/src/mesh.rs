//! Structured perforated fine grid over the unit square, its coarse block
//! partition and oversampled regions.
//!
//! Perforations are rasterized to whole fine cells: a cell is active iff its
//! center lies outside every (closed) perforation shape. Fine cells are
//! indexed `iy * nx + ix`. Biquadratic velocity nodes live on a
//! `(2 nx + 1)²` lattice with spacing `h / 2`; bilinear pressure nodes are the
//! even lattice points.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{Error, Result};

pub(crate) const NONE: u32 = u32::MAX;

/// A single perforation, in unit-square coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Circle { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    /// Closed-set membership test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Circle { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }

    fn strictly_inside_unit_square(&self) -> bool {
        let inside = |v: f64| v > 0.0 && v < 1.0;
        match *self {
            Shape::Circle { cx, cy, r } => {
                r > 0.0 && inside(cx - r) && inside(cx + r) && inside(cy - r) && inside(cy + r)
            }
            Shape::Rect { x0, y0, x1, y1 } => {
                x0 < x1 && y0 < y1 && inside(x0) && inside(x1) && inside(y0) && inside(y1)
            }
        }
    }
}

/// The set of perforations removed from the unit square.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerforationSpec {
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

impl PerforationSpec {
    pub fn new(shapes: Vec<Shape>) -> Self {
        PerforationSpec { shapes }
    }

    pub fn validate(&self) -> Result<()> {
        for (n, s) in self.shapes.iter().enumerate() {
            if !s.strictly_inside_unit_square() {
                return Err(Error::InvalidInput(format!(
                    "perforation {n} does not lie strictly inside the unit square: {s:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_perforated(&self, x: f64, y: f64) -> bool {
        self.shapes.iter().any(|s| s.contains(x, y))
    }
}

/// Uniform `nx × nx` fine grid with a perforation mask.
#[derive(Clone, Debug)]
pub struct PerforatedMesh {
    pub nx: usize,
    pub h: f64,
    active: Vec<bool>,
    active_cells: Vec<usize>,
    vnode_of_lattice: Vec<u32>,
    vnode_lattice: Vec<[u32; 2]>,
    pnode_of_lattice: Vec<u32>,
    pnode_lattice: Vec<[u32; 2]>,
}

impl PerforatedMesh {
    pub fn n_cells(&self) -> usize {
        self.nx * self.nx
    }

    pub fn is_active(&self, cell: usize) -> bool {
        self.active[cell]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    /// Active cells in increasing index order.
    pub fn active_cells(&self) -> &[usize] {
        &self.active_cells
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        let (ix, iy) = self.cell_ij(cell);
        [ix as f64 * self.h, iy as f64 * self.h]
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 2] {
        let o = self.cell_origin(cell);
        [o[0] + 0.5 * self.h, o[1] + 0.5 * self.h]
    }

    /// Area of the perforated domain (union of active cells).
    pub fn area(&self) -> f64 {
        self.active_cells.len() as f64 * self.h * self.h
    }

    pub fn n_vnodes(&self) -> usize {
        self.vnode_lattice.len()
    }

    pub fn n_pnodes(&self) -> usize {
        self.pnode_lattice.len()
    }

    fn vlattice_width(&self) -> usize {
        2 * self.nx + 1
    }

    /// Lattice position `(I, J)` of a velocity node; coordinates are `(I, J) * h / 2`.
    pub fn vnode_lattice(&self, node: usize) -> [usize; 2] {
        let [i, j] = self.vnode_lattice[node];
        [i as usize, j as usize]
    }

    pub fn vnode_coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.vnode_lattice(node);
        [i as f64 * 0.5 * self.h, j as f64 * 0.5 * self.h]
    }

    pub fn pnode_lattice(&self, node: usize) -> [usize; 2] {
        let [i, j] = self.pnode_lattice[node];
        [i as usize, j as usize]
    }

    pub fn pnode_coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.pnode_lattice(node);
        [i as f64 * self.h, j as f64 * self.h]
    }

    /// Velocity node at lattice position `(I, J)`, if it touches an active cell.
    pub fn vnode_at(&self, i: usize, j: usize) -> Option<usize> {
        let w = self.vlattice_width();
        if i >= w || j >= w {
            return None;
        }
        let id = self.vnode_of_lattice[j * w + i];
        (id != NONE).then_some(id as usize)
    }

    pub fn pnode_at(&self, i: usize, j: usize) -> Option<usize> {
        let w = self.nx + 1;
        if i >= w || j >= w {
            return None;
        }
        let id = self.pnode_of_lattice[j * w + i];
        (id != NONE).then_some(id as usize)
    }

    /// The nine biquadratic nodes of an active cell, local index `3 * jj + ii`.
    pub fn cell_vnodes(&self, cell: usize) -> [usize; 9] {
        let (ix, iy) = self.cell_ij(cell);
        let w = self.vlattice_width();
        let mut out = [0usize; 9];
        for jj in 0..3 {
            for ii in 0..3 {
                let id = self.vnode_of_lattice[(2 * iy + jj) * w + 2 * ix + ii];
                debug_assert!(id != NONE);
                out[3 * jj + ii] = id as usize;
            }
        }
        out
    }

    /// The four bilinear corner nodes of an active cell, local index `2 * jj + ii`.
    pub fn cell_pnodes(&self, cell: usize) -> [usize; 4] {
        let (ix, iy) = self.cell_ij(cell);
        let w = self.nx + 1;
        let mut out = [0usize; 4];
        for jj in 0..2 {
            for ii in 0..2 {
                let id = self.pnode_of_lattice[(iy + jj) * w + ix + ii];
                debug_assert!(id != NONE);
                out[2 * jj + ii] = id as usize;
            }
        }
        out
    }

    /// Cells (active or not) whose closure contains the velocity node. Entries
    /// are `None` for positions outside the unit square.
    pub fn cells_around_vnode(&self, node: usize) -> Vec<Option<usize>> {
        let [i, j] = self.vnode_lattice(node);
        let span = |k: usize| -> Vec<isize> {
            if k % 2 == 1 {
                vec![(k as isize - 1) / 2]
            } else {
                vec![k as isize / 2 - 1, k as isize / 2]
            }
        };
        let n = self.nx as isize;
        let mut out = Vec::with_capacity(4);
        for cy in span(j) {
            for cx in span(i) {
                if cx < 0 || cy < 0 || cx >= n || cy >= n {
                    out.push(None);
                } else {
                    out.push(Some(cy as usize * self.nx + cx as usize));
                }
            }
        }
        out
    }

    /// A velocity node lies on `∂Ω^ε` iff it touches an inactive cell or the outer boundary.
    pub fn vnode_on_boundary(&self, node: usize) -> bool {
        self.cells_around_vnode(node)
            .into_iter()
            .any(|c| c.map_or(true, |c| !self.active[c]))
    }

    /// Edge neighbors of a cell that are active.
    pub fn active_edge_neighbors(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (ix, iy) = self.cell_ij(cell);
        let nx = self.nx;
        let cand = [
            (ix > 0).then(|| cell - 1),
            (ix + 1 < nx).then(|| cell + 1),
            (iy > 0).then(|| cell - nx),
            (iy + 1 < nx).then(|| cell + nx),
        ];
        cand.into_iter().flatten().filter(move |&c| self.active[c])
    }

    /// FNV-1a fingerprint of `(nx, mask)`, stable across runs and platforms.
    pub fn fingerprint(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for b in (self.nx as u64).to_le_bytes() {
            eat(b);
        }
        for &a in &self.active {
            eat(a as u8);
        }
        hash
    }
}

/// Count connected components of `cells` under the given adjacency.
pub(crate) fn count_components<F, I>(cells: &[usize], universe: usize, neighbors: F) -> usize
where
    F: Fn(usize) -> I,
    I: IntoIterator<Item = usize>,
{
    let mut member = vec![false; universe];
    for &c in cells {
        member[c] = true;
    }
    let mut seen = vec![false; universe];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for &start in cells {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for nb in neighbors(c) {
                if member[nb] && !seen[nb] {
                    seen[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
    }
    components
}

/// Rasterize the perforations on an `nx × nx` grid and number the nodes.
pub fn build_fine_grid(nx: usize, spec: &PerforationSpec) -> Result<PerforatedMesh> {
    if nx < 4 {
        return Err(Error::InvalidInput(format!("nx must be at least 4, got {nx}")));
    }
    spec.validate()?;
    let h = 1.0 / nx as f64;
    let active: Vec<bool> = (0..nx * nx)
        .map(|c| {
            let (ix, iy) = (c % nx, c / nx);
            let x = (ix as f64 + 0.5) * h;
            let y = (iy as f64 + 0.5) * h;
            !spec.is_perforated(x, y)
        })
        .collect();
    let active_cells: Vec<usize> = (0..nx * nx).filter(|&c| active[c]).collect();
    if active_cells.is_empty() {
        return Err(Error::EmptyDomain);
    }

    let vw = 2 * nx + 1;
    let mut vnode_of_lattice = vec![NONE; vw * vw];
    let mut touched = vec![false; vw * vw];
    for &c in &active_cells {
        let (ix, iy) = (c % nx, c / nx);
        for jj in 0..3 {
            for ii in 0..3 {
                touched[(2 * iy + jj) * vw + 2 * ix + ii] = true;
            }
        }
    }
    let mut vnode_lattice = Vec::new();
    for j in 0..vw {
        for i in 0..vw {
            if touched[j * vw + i] {
                vnode_of_lattice[j * vw + i] = vnode_lattice.len() as u32;
                vnode_lattice.push([i as u32, j as u32]);
            }
        }
    }

    let pw = nx + 1;
    let mut pnode_of_lattice = vec![NONE; pw * pw];
    let mut pnode_lattice = Vec::new();
    for j in 0..pw {
        for i in 0..pw {
            if touched[(2 * j) * vw + 2 * i] {
                pnode_of_lattice[j * pw + i] = pnode_lattice.len() as u32;
                pnode_lattice.push([i as u32, j as u32]);
            }
        }
    }

    let mesh = PerforatedMesh {
        nx,
        h,
        active,
        active_cells,
        vnode_of_lattice,
        vnode_lattice,
        pnode_of_lattice,
        pnode_lattice,
    };
    let components = count_components(&mesh.active_cells, nx * nx, |c| {
        mesh.active_edge_neighbors(c).collect::<Vec<_>>()
    });
    if components != 1 {
        return Err(Error::DisconnectedDomain { components });
    }
    Ok(mesh)
}

/// One retained coarse block `K_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseElement {
    pub bx: usize,
    pub by: usize,
    /// Active fine cells of the block, increasing.
    pub cells: Vec<usize>,
}

/// Partition of the active fine cells into coarse blocks.
#[derive(Clone, Debug)]
pub struct CoarseGrid {
    /// Coarse blocks per axis.
    pub n_coarse: usize,
    /// Coarse mesh size `H`.
    pub h_coarse: f64,
    /// Fine cells per block edge.
    pub cells_per_block: usize,
    pub elements: Vec<CoarseElement>,
    /// Blocks `(bx, by)` with no active cell.
    pub dropped: Vec<(usize, usize)>,
    /// Coarse vertex coordinates, lexicographic over `(n_coarse + 1)²`.
    pub vertices: Vec<[f64; 2]>,
    element_of_cell: Vec<u32>,
    adjacency: Vec<Vec<usize>>,
}

impl CoarseGrid {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Retained element owning an active fine cell.
    pub fn element_of_cell(&self, cell: usize) -> Option<usize> {
        let e = self.element_of_cell[cell];
        (e != NONE).then_some(e as usize)
    }

    /// Retained elements sharing at least one fine node with element `i` (excluding `i`).
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// `K_{i,k}`: element indices of the `k`-layer oversampling region, sorted.
    pub fn oversample_region(&self, i: usize, k: usize) -> Vec<usize> {
        let mut member = vec![false; self.len()];
        member[i] = true;
        let mut frontier = vec![i];
        for _ in 0..k {
            let mut next = Vec::new();
            for &e in &frontier {
                for &nb in &self.adjacency[e] {
                    if !member[nb] {
                        member[nb] = true;
                        next.push(nb);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        (0..self.len()).filter(|&e| member[e]).collect()
    }

    /// Smallest `k` for which `K_{i,k}` covers every retained element.
    pub fn saturation_layers(&self, i: usize) -> usize {
        let mut k = 0;
        while self.oversample_region(i, k).len() < self.len() {
            k += 1;
        }
        k
    }

    /// Largest saturation layer count over all elements.
    pub fn max_saturation_layers(&self) -> usize {
        (0..self.len()).map(|i| self.saturation_layers(i)).max().unwrap_or(0)
    }

    /// Active fine cells of a union of elements, increasing.
    pub fn region_cells(&self, region: &[usize]) -> Vec<usize> {
        let mut cells: Vec<usize> = region
            .iter()
            .flat_map(|&e| self.elements[e].cells.iter().copied())
            .collect();
        cells.sort_unstable();
        cells
    }

    /// Index of the retained element at block position `(bx, by)`.
    pub fn element_at(&self, bx: usize, by: usize) -> Option<usize> {
        self.elements.iter().position(|e| e.bx == bx && e.by == by)
    }

    /// Whether the element's block touches the outer boundary of the unit square.
    pub fn touches_outer_boundary(&self, i: usize) -> bool {
        let e = &self.elements[i];
        e.bx == 0 || e.by == 0 || e.bx + 1 == self.n_coarse || e.by + 1 == self.n_coarse
    }
}

/// Partition the active cells of `mesh` into `n_coarse × n_coarse` blocks.
pub fn build_coarse_grid(mesh: &PerforatedMesh, n_coarse: usize) -> Result<CoarseGrid> {
    if n_coarse == 0 || mesh.nx % n_coarse != 0 {
        return Err(Error::IncompatibleRefinement { nx: mesh.nx, coarse: n_coarse });
    }
    let m = mesh.nx / n_coarse;
    let mut elements = Vec::new();
    let mut dropped = Vec::new();
    let mut element_of_cell = vec![NONE; mesh.n_cells()];
    for by in 0..n_coarse {
        for bx in 0..n_coarse {
            let mut cells = Vec::new();
            for iy in by * m..(by + 1) * m {
                for ix in bx * m..(bx + 1) * m {
                    let c = iy * mesh.nx + ix;
                    if mesh.is_active(c) {
                        cells.push(c);
                    }
                }
            }
            if cells.is_empty() {
                dropped.push((bx, by));
                continue;
            }
            let components = count_components(&cells, mesh.n_cells(), |c| {
                mesh.active_edge_neighbors(c).collect::<Vec<_>>()
            });
            if components != 1 {
                return Err(Error::DisconnectedBlock { bx, by, components });
            }
            for &c in &cells {
                element_of_cell[c] = elements.len() as u32;
            }
            elements.push(CoarseElement { bx, by, cells });
        }
    }

    // Two elements are adjacent when their closures share a fine node.
    let mut node_elems: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_pnodes()];
    for (e, el) in elements.iter().enumerate() {
        for &c in &el.cells {
            for p in mesh.cell_pnodes(c) {
                if node_elems[p].last() != Some(&e) {
                    node_elems[p].push(e);
                }
            }
        }
    }
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); elements.len()];
    for list in &node_elems {
        for &a in list {
            for &b in list {
                if a != b {
                    adjacency[a].push(b);
                }
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    let hc = 1.0 / n_coarse as f64;
    let vertices = (0..=n_coarse)
        .flat_map(|j| (0..=n_coarse).map(move |i| [i as f64 * hc, j as f64 * hc]))
        .collect();

    Ok(CoarseGrid {
        n_coarse,
        h_coarse: hc,
        cells_per_block: m,
        elements,
        dropped,
        vertices,
        element_of_cell,
        adjacency,
    })
}

/// Four circular perforations placed inside blocks that touch the outer
/// boundary of a 4×4 coarse grid, leaving the central blocks unperforated.
pub fn demo_perforations() -> PerforationSpec {
    let r = 0.08;
    PerforationSpec::new(vec![
        Shape::Circle { cx: 0.125, cy: 0.375, r },
        Shape::Circle { cx: 0.625, cy: 0.125, r },
        Shape::Circle { cx: 0.875, cy: 0.625, r },
        Shape::Circle { cx: 0.375, cy: 0.875, r },
    ])
}
