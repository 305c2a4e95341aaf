//! Constraint energy minimizing velocity basis functions.
//!
//! For block `i`, mode `j` and region `R = K_{i,k}` the basis function
//! `ψ` solves
//!
//! ```text
//! a(ψ, v) + s(πψ, πv) + b(v, ξ) = s(φ_j^i, πv)   for v ∈ V_0(R)
//! b(ψ, q)                       = 0              for q ∈ Q_0(R)
//! ```
//!
//! `V_0(R)` holds free velocity nodes whose surrounding cells all lie in `R`.
//! The `s(π·, π·)` term is the low-rank update `ΠᵀΠ` in auxiliary coordinates,
//! so the right-hand side is the `(i, j)` row of `Π`. One zero-mean row is
//! imposed per vertex-connected component of `R`.

use crate::auxiliary::AuxSpace;
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::fem::assembly::{pressure_weights, region_norms_squared};
use crate::linalg::ordering::nested_dissection_boxes;
use crate::linalg::saddle::{MeanRow, SaddleFactor, SaddleOperator, DEFAULT_TOL};
use crate::linalg::sparse::CsrMatrix;
use crate::mesh::NONE;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;

const ORDERING_LEAF: usize = 64;

/// Unknowns of one oversampling region.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionDofs {
    /// Coarse elements of the region, increasing.
    pub elements: Vec<usize>,
    /// Active fine cells, increasing.
    pub cells: Vec<usize>,
    /// Global free velocity unknown of each local unknown, increasing
    /// (component-major, like the global numbering).
    pub velocity: Vec<usize>,
    /// Pressure nodes touched by the region's cells, increasing.
    pub pnodes: Vec<usize>,
    /// Auxiliary coefficient rows of the blocks inside the region.
    pub aux_rows: Vec<usize>,
}

impl RegionDofs {
    pub fn new(d: &Discretization, aux: &AuxSpace, elements: &[usize]) -> Result<Self> {
        let mesh = d.mesh();
        let cells = d.grid.region_cells(elements);
        let mut in_region = vec![false; mesh.n_cells()];
        for &c in &cells {
            in_region[c] = true;
        }
        let mut interior = vec![false; mesh.n_vnodes()];
        for &c in &cells {
            for v in mesh.cell_vnodes(c) {
                if interior[v] || d.space.is_dirichlet(v) {
                    continue;
                }
                interior[v] = mesh.cells_around_vnode(v).into_iter().all(|c| c.is_some_and(|c| in_region[c]));
            }
        }
        let nf = d.space.n_free_nodes();
        let mut free: Vec<usize> = (0..mesh.n_vnodes())
            .filter(|&v| interior[v])
            .map(|v| d.space.free_index(v).expect("free node"))
            .collect();
        free.sort_unstable();
        if free.is_empty() {
            return Err(Error::EmptyRegion { block: elements.first().copied().unwrap_or(0) });
        }
        let velocity: Vec<usize> = (0..2).flat_map(|c| free.iter().map(move |&f| c * nf + f)).collect();
        let mut pmark = vec![false; mesh.n_pnodes()];
        for &c in &cells {
            for q in mesh.cell_pnodes(c) {
                pmark[q] = true;
            }
        }
        let pnodes = (0..pmark.len()).filter(|&q| pmark[q]).collect();
        let aux_rows = elements.iter().flat_map(|&l| aux.block_range(l)).collect();
        Ok(RegionDofs { elements: elements.to_vec(), cells, velocity, pnodes, aux_rows })
    }

    pub fn n_u(&self) -> usize {
        self.velocity.len()
    }

    pub fn n_p(&self) -> usize {
        self.pnodes.len()
    }

    /// Embeds local velocity values into a free global vector.
    pub fn scatter(&self, local: &[f64], n_u: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_u];
        for (&g, &v) in self.velocity.iter().zip(local) {
            out[g] = v;
        }
        out
    }

    /// Restricts a free global vector to the region's unknowns.
    pub fn gather(&self, global: &[f64]) -> Vec<f64> {
        self.velocity.iter().map(|&g| global[g]).collect()
    }

    /// Pressure node sets of the vertex-connected components of the region.
    pub fn components(&self, d: &Discretization) -> Vec<Vec<usize>> {
        let mesh = d.mesh();
        let mut local = vec![NONE; mesh.n_pnodes()];
        for (k, &q) in self.pnodes.iter().enumerate() {
            local[q] = k as u32;
        }
        let mut parent: Vec<usize> = (0..self.pnodes.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &c in &self.cells {
            let q = mesh.cell_pnodes(c).map(|q| local[q] as usize);
            for &r in &q[1..] {
                let (a, b) = (find(&mut parent, q[0]), find(&mut parent, r));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in 0..self.pnodes.len() {
            let r = find(&mut parent, k);
            groups.entry(r).or_default().push(k);
        }
        groups.into_values().collect()
    }
}

/// Factorized local CEM system of one region.
#[derive(Clone, Debug)]
pub struct RegionSystem {
    pub dofs: Arc<RegionDofs>,
    /// `Π` restricted to the region: aux rows of inner blocks × local unknowns.
    pub pi: CsrMatrix,
    factor: SaddleFactor,
}

impl RegionSystem {
    pub fn new(d: &Discretization, aux: &AuxSpace, elements: &[usize]) -> Result<Self> {
        let dofs = RegionDofs::new(d, aux, elements)?;
        let a = d.stiffness.select(&dofs.velocity, &dofs.velocity);
        let b = d.divergence.select(&dofs.pnodes, &dofs.velocity);
        let pi = aux.pi.select(&dofs.aux_rows, &dofs.velocity);

        let mesh = d.mesh();
        let mut pmap = vec![NONE; mesh.n_pnodes()];
        for (k, &q) in dofs.pnodes.iter().enumerate() {
            pmap[q] = k as u32;
        }
        let weights = pressure_weights(mesh, &dofs.cells, &pmap, dofs.n_p());
        let mean_rows = dofs
            .components(d)
            .into_iter()
            .map(|set| MeanRow { weights: set.into_iter().map(|k| (k, weights[k])).collect() })
            .collect();

        let ordering = Some(region_ordering(d, aux, &dofs));
        let op = SaddleOperator { a, b, low_rank: Some(pi.clone()), mean_rows, ordering };
        let factor = op.factorize()?;
        Ok(RegionSystem { dofs: Arc::new(dofs), pi, factor })
    }

    /// Solves for the basis function of auxiliary row `row` (global index).
    pub fn solve_mode(&self, row: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        let local = self
            .dofs
            .aux_rows
            .iter()
            .position(|&r| r == row)
            .ok_or_else(|| Error::InvalidInput(format!("auxiliary row {row} is not inside the region")))?;
        let rhs_u = self.pi.tr_mul_vec(&unit(self.pi.nrows(), local));
        let rhs_p = vec![0.0; self.dofs.n_p()];
        let sol = self.factor.solve(&rhs_u, &rhs_p, DEFAULT_TOL)?;
        Ok((sol.u, sol.p, sol.mean_multipliers, sol.residual))
    }

    /// Solves the local saddle system for an arbitrary velocity right-hand side.
    pub fn solve(&self, rhs_u: &[f64]) -> Result<crate::linalg::saddle::SaddleSolution> {
        self.factor.solve(rhs_u, &vec![0.0; self.dofs.n_p()], DEFAULT_TOL)
    }

    pub fn nnz_factor(&self) -> usize {
        self.factor.nnz_factor()
    }
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

/// Block-aware nested dissection over `[u; p; w]`: coarse block lines are
/// cut first, and the auxiliary rows of a block sit inside its interior.
fn region_ordering(d: &Discretization, aux: &AuxSpace, dofs: &RegionDofs) -> Vec<usize> {
    let mesh = d.mesh();
    let nf = d.space.n_free_nodes();
    let free = d.space.free_nodes();
    let cpb = d.grid.cells_per_block as u32;
    let mut boxes: Vec<Option<[[u32; 2]; 2]>> = Vec::with_capacity(dofs.n_u() + dofs.n_p() + dofs.aux_rows.len());
    for &g in &dofs.velocity {
        let [i, j] = mesh.vnode_lattice(free[g % nf]);
        let p = [i as u32, j as u32];
        boxes.push(Some([p, p]));
    }
    for &q in &dofs.pnodes {
        let [i, j] = mesh.pnode_lattice(q);
        let p = [2 * i as u32, 2 * j as u32];
        boxes.push(Some([p, p]));
    }
    for &l in &dofs.elements {
        let e = &d.grid.elements[l];
        let (bx, by) = (e.bx as u32, e.by as u32);
        let lo = [2 * cpb * bx + 1, 2 * cpb * by + 1];
        let hi = [2 * cpb * (bx + 1) - 1, 2 * cpb * (by + 1) - 1];
        for _ in aux.block_range(l) {
            boxes.push(Some([lo, hi]));
        }
    }
    nested_dissection_boxes(&boxes, &[2 * cpb, 2], ORDERING_LEAF)
}

/// One CEM basis function `ψ_j^i` on `K_{i,k}` (`k = None` for the global basis).
#[derive(Clone, Debug)]
pub struct CemBasisFunction {
    pub i: usize,
    pub j: usize,
    pub k: Option<usize>,
    pub region: Arc<RegionDofs>,
    /// Values on `region.velocity`.
    pub values: Vec<f64>,
    /// Multiplier `ξ` on `region.pnodes`.
    pub xi: Vec<f64>,
    pub mean_multipliers: Vec<f64>,
    pub residual: f64,
}

impl CemBasisFunction {
    /// The basis function as a free global velocity vector.
    pub fn to_global(&self, n_u: usize) -> Vec<f64> {
        self.region.scatter(&self.values, n_u)
    }

    /// `‖ψ‖_a` using the global stiffness.
    pub fn a_norm(&self, d: &Discretization) -> f64 {
        let g = self.to_global(d.space.n_u());
        crate::linalg::sparse::dot(&g, &d.stiffness.mul_vec(&g)).max(0.0).sqrt()
    }

    /// `max_q |b(ψ, q)| / ‖q‖_{L²}` over the nodal pressure basis of the region.
    pub fn max_divergence(&self, d: &Discretization) -> f64 {
        let g = self.to_global(d.space.n_u());
        let bpsi = d.divergence.mul_vec(&g);
        self.region
            .pnodes
            .iter()
            .map(|&q| bpsi[q].abs() / d.pressure_mass.get(q, q).sqrt())
            .fold(0.0, f64::max)
    }
}

/// A full set of basis functions ordered like the auxiliary coefficients.
#[derive(Clone, Debug)]
pub struct MsBasis {
    pub k: Option<usize>,
    pub functions: Vec<CemBasisFunction>,
}

impl MsBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// `Σ c_b ψ_b` as a free global vector.
    pub fn combine(&self, coeffs: &[f64], n_u: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_u];
        for (f, &c) in self.functions.iter().zip(coeffs) {
            for (&g, &v) in f.region.velocity.iter().zip(&f.values) {
                out[g] += c * v;
            }
        }
        out
    }
}

/// Oversampling region of block `i` for `k` layers (`None` for all of Ω^ε).
pub fn basis_region(d: &Discretization, i: usize, k: Option<usize>) -> Vec<usize> {
    match k {
        Some(k) => d.grid.oversample_region(i, k),
        None => (0..d.grid.len()).collect(),
    }
}

/// `ψ_{j,ms}^i` on `K_{i,k}`.
pub fn compute_ms_basis(d: &Discretization, aux: &AuxSpace, i: usize, j: usize, k: usize) -> Result<CemBasisFunction> {
    single_basis(d, aux, i, j, Some(k))
}

/// The global basis function `ψ_j^i`.
pub fn compute_global_basis(d: &Discretization, aux: &AuxSpace, i: usize, j: usize) -> Result<CemBasisFunction> {
    single_basis(d, aux, i, j, None)
}

fn single_basis(d: &Discretization, aux: &AuxSpace, i: usize, j: usize, k: Option<usize>) -> Result<CemBasisFunction> {
    if j >= aux.blocks[i].ell {
        return Err(Error::InvalidInput(format!("block {i} has {} modes, asked for mode {j}", aux.blocks[i].ell)));
    }
    let sys = RegionSystem::new(d, aux, &basis_region(d, i, k))?;
    build_function(&sys, aux, i, j, k)
}

fn build_function(sys: &RegionSystem, aux: &AuxSpace, i: usize, j: usize, k: Option<usize>) -> Result<CemBasisFunction> {
    let (values, xi, mean_multipliers, residual) = sys.solve_mode(aux.offsets[i] + j)?;
    Ok(CemBasisFunction { i, j, k, region: Arc::clone(&sys.dofs), values, xi, mean_multipliers, residual })
}

/// Every basis function for `k` layers (`None` for the global basis).
///
/// Blocks sharing a region share one factorization.
pub fn compute_basis(d: &Discretization, aux: &AuxSpace, k: Option<usize>) -> Result<MsBasis> {
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for i in 0..d.grid.len() {
        groups.entry(basis_region(d, i, k)).or_default().push(i);
    }
    let groups: Vec<(Vec<usize>, Vec<usize>)> = groups.into_iter().collect();
    let solved: Vec<Vec<CemBasisFunction>> = groups
        .par_iter()
        .map(|(region, blocks)| {
            let sys = RegionSystem::new(d, aux, region)?;
            let modes: Vec<(usize, usize)> = blocks.iter().flat_map(|&i| (0..aux.blocks[i].ell).map(move |j| (i, j))).collect();
            modes.par_iter().map(|&(i, j)| build_function(&sys, aux, i, j, k)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut functions: Vec<CemBasisFunction> = solved.into_iter().flatten().collect();
    functions.sort_by_key(|f| (f.i, f.j));
    Ok(MsBasis { k, functions })
}

/// Exterior energy `‖ψ‖²_{a(Ω∖K_{i,m})} + ‖πψ‖²_{s(Ω∖K_{i,m})}` for
/// `m = 0..=saturation`.
pub fn decay_profile(d: &Discretization, aux: &AuxSpace, psi: &CemBasisFunction, i: usize) -> Vec<(usize, f64)> {
    let n_u = d.space.n_u();
    let global = psi.to_global(n_u);
    let full = d.space.expand(&global);
    let coeffs = aux.project_coefficients(&global);
    let mesh = d.mesh();
    let saturation = d.grid.saturation_layers(i);
    (0..=saturation)
        .map(|m| {
            let region = d.grid.oversample_region(i, m);
            let mut inside = vec![false; d.grid.len()];
            for &e in &region {
                inside[e] = true;
            }
            let outside_cells: Vec<usize> = mesh
                .active_cells()
                .iter()
                .copied()
                .filter(|&c| d.grid.element_of_cell(c).is_some_and(|e| !inside[e]))
                .collect();
            let (a2, _) = region_norms_squared(&d.space, &d.pou, &full, &outside_cells);
            let s2 = aux.s_norm_squared_on(&coeffs, (0..d.grid.len()).filter(|&e| !inside[e]));
            (m, a2 + s2)
        })
        .collect()
}

/// `(‖ψ − ψ_ms‖_a, ‖π(ψ − ψ_ms)‖_s)`.
pub fn localization_error(d: &Discretization, aux: &AuxSpace, global: &CemBasisFunction, local: &CemBasisFunction) -> (f64, f64) {
    let n_u = d.space.n_u();
    let mut diff = global.to_global(n_u);
    for (&g, &v) in local.region.velocity.iter().zip(&local.values) {
        diff[g] -= v;
    }
    let a2 = crate::linalg::sparse::dot(&diff, &d.stiffness.mul_vec(&diff));
    let c = aux.project_coefficients(&diff);
    (a2.max(0.0).sqrt(), crate::linalg::sparse::norm2(&c))
}

/// Cache key `(mesh fingerprint, Nx, ℓ, k)` for a basis file.
pub fn cache_key(d: &Discretization, aux: &AuxSpace, k: Option<usize>) -> String {
    let ell = aux.blocks.iter().map(|b| b.ell).max().unwrap_or(0);
    let k = k.map_or_else(|| "global".to_string(), |k| k.to_string());
    format!("{:016x}-N{}-l{}-k{}", d.mesh().fingerprint(), d.grid.n_coarse, ell, k)
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    key: String,
    mesh_fingerprint: String,
    n_coarse: usize,
    ell: usize,
    k: Option<usize>,
    functions: Vec<StoredFunction>,
}

#[derive(Serialize, Deserialize)]
struct StoredFunction {
    i: usize,
    j: usize,
    elements: Vec<usize>,
    /// Free velocity unknowns (component-major global numbering).
    dofs: Vec<usize>,
    values: Vec<f64>,
}

/// Writes basis coefficients and metadata as JSON.
pub fn write_basis_json<W: Write>(d: &Discretization, aux: &AuxSpace, basis: &MsBasis, w: W) -> Result<()> {
    let file = BasisFile {
        key: cache_key(d, aux, basis.k),
        mesh_fingerprint: format!("{:016x}", d.mesh().fingerprint()),
        n_coarse: d.grid.n_coarse,
        ell: aux.blocks.iter().map(|b| b.ell).max().unwrap_or(0),
        k: basis.k,
        functions: basis
            .functions
            .iter()
            .map(|f| StoredFunction {
                i: f.i,
                j: f.j,
                elements: f.region.elements.clone(),
                dofs: f.region.velocity.clone(),
                values: f.values.clone(),
            })
            .collect(),
    };
    serde_json::to_writer(w, &file).map_err(|e| Error::Io(e.to_string()))
}

/// Reads a basis written by [`write_basis_json`], checking the cache key.
///
/// Multipliers are not stored; `xi` is left empty.
pub fn read_basis_json<R: Read>(d: &Discretization, aux: &AuxSpace, r: R) -> Result<MsBasis> {
    let file: BasisFile = serde_json::from_reader(r).map_err(|e| Error::Io(e.to_string()))?;
    let expected = cache_key(d, aux, file.k);
    if file.key != expected {
        return Err(Error::InvalidInput(format!("basis cache key {} does not match {expected}", file.key)));
    }
    let mut regions: BTreeMap<Vec<usize>, Arc<RegionDofs>> = BTreeMap::new();
    let mut functions = Vec::with_capacity(file.functions.len());
    for f in file.functions {
        let region = match regions.get(&f.elements) {
            Some(r) => Arc::clone(r),
            None => {
                let r = Arc::new(RegionDofs::new(d, aux, &f.elements)?);
                regions.insert(f.elements.clone(), Arc::clone(&r));
                r
            }
        };
        if region.velocity != f.dofs || f.values.len() != f.dofs.len() {
            return Err(Error::InvalidInput(format!("stored unknowns of basis ({}, {}) do not match the mesh", f.i, f.j)));
        }
        functions.push(CemBasisFunction {
            i: f.i,
            j: f.j,
            k: file.k,
            region,
            values: f.values,
            xi: Vec::new(),
            mean_multipliers: Vec::new(),
            residual: 0.0,
        });
    }
    Ok(MsBasis { k: file.k, functions })
}
