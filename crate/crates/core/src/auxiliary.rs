//! Local spectral spaces: the velocity auxiliary space with its projector
//! `π`, and the pressure space `Q_H`.
//!
//! Auxiliary fields live on single coarse blocks. A block field is stored on
//! the globally free velocity nodes touched by the block, component-major, so
//! values on interior coarse edges are independent per block.

use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_divergence_local, assemble_q1_scalar, assemble_q2_scalar, local_pnodes, pressure_weights, Q2Form};
use crate::linalg::dense::{eig_sym_generalized, null_space_basis, qr_rank, svd_rank, RANK_TOL};
use crate::linalg::subspace::smallest_eigenpairs;
use crate::linalg::sparse::{CsrMatrix, TripletBuilder};
use crate::mesh::NONE;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Eigenvalues at or below this count as zero when checking `λ_{ℓ+1}`.
pub const ZERO_EIGENVALUE: f64 = 1e-9;

/// Relative residual target for iterative local eigensolves.
pub const EIGEN_TOL: f64 = 1e-12;

/// Velocity spectral data of one coarse block.
#[derive(Clone, Debug)]
pub struct AuxBlock {
    pub element: usize,
    pub ell: usize,
    /// Globally free velocity nodes touched by the block, increasing.
    pub nodes: Vec<usize>,
    /// `λ_1 ≤ … ≤ λ_{ℓ+1}`.
    pub eigenvalues: Vec<f64>,
    /// `2 m × ℓ` block-local mode vectors, `s_i`-orthonormal.
    pub modes: DMatrix<f64>,
    /// Scalar local stiffness and weighted mass (`m × m`).
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
}

impl AuxBlock {
    pub fn n_local(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Applies the vector (two-component) form of a scalar local matrix.
    fn apply_vector(k: &CsrMatrix, v: &[f64]) -> Vec<f64> {
        let m = k.nrows();
        let mut out = k.mul_vec(&v[..m]);
        out.extend(k.mul_vec(&v[m..]));
        out
    }

    /// `a_i(u, v)` for block-local vectors.
    pub fn a_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::linalg::sparse::dot(u, &Self::apply_vector(&self.stiffness, v))
    }

    /// `s_i(u, v)` for block-local vectors.
    pub fn s_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        crate::linalg::sparse::dot(u, &Self::apply_vector(&self.mass, v))
    }

    /// `s_i(v, φ_j)` for every mode.
    pub fn coefficients(&self, v: &[f64]) -> Vec<f64> {
        let sv = DVector::from_vec(Self::apply_vector(&self.mass, v));
        (self.modes.transpose() * sv).iter().copied().collect()
    }

    /// `Σ_j c_j φ_j` as a block-local vector.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        (&self.modes * DVector::from_column_slice(coeffs)).iter().copied().collect()
    }
}

/// The global auxiliary space `V_aux = ⊕ V_aux^i`.
#[derive(Clone, Debug)]
pub struct AuxSpace {
    pub blocks: Vec<AuxBlock>,
    /// First coefficient index of each block.
    pub offsets: Vec<usize>,
    /// `π` coefficient map: row `(i, j)` is `s_i(·, φ_j^i)` on free velocity unknowns.
    pub pi: CsrMatrix,
    /// `Λ = min_i λ_{ℓ_i+1}^i`.
    pub lambda_min_excluded: f64,
    /// `Γ = max_i λ_{ℓ_i}^i`.
    pub gamma: f64,
}

impl AuxSpace {
    pub fn dim(&self) -> usize {
        self.pi.nrows()
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.blocks[i].ell
    }

    /// `π`-coefficients `s_i(v, φ_j^i)` of a free velocity vector.
    pub fn project_coefficients(&self, v: &[f64]) -> Vec<f64> {
        self.pi.mul_vec(v)
    }

    /// `π v` as block-local fields.
    pub fn project_pi(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let c = self.project_coefficients(v);
        self.blocks.iter().enumerate().map(|(i, b)| b.combine(&c[self.block_range(i)])).collect()
    }

    /// `‖π v‖²_s` restricted to the listed blocks.
    pub fn s_norm_squared_on(&self, coeffs: &[f64], blocks: impl IntoIterator<Item = usize>) -> f64 {
        blocks.into_iter().map(|i| coeffs[self.block_range(i)].iter().map(|c| c * c).sum::<f64>()).sum()
    }

    /// Restriction of a free velocity vector to block `i`'s local numbering.
    pub fn restrict_to_block(&self, d: &Discretization, i: usize, v: &[f64]) -> Vec<f64> {
        let nf = d.space.n_free_nodes();
        let b = &self.blocks[i];
        let mut out = Vec::with_capacity(b.n_local());
        for c in 0..2 {
            for &node in &b.nodes {
                out.push(v[c * nf + d.space.free_index(node).expect("free node")]);
            }
        }
        out
    }
}

/// Mode counts per block.
#[derive(Clone, Debug, PartialEq)]
pub enum ModeCount {
    Uniform(usize),
    PerElement(Vec<usize>),
}

impl ModeCount {
    pub fn get(&self, i: usize) -> usize {
        match self {
            ModeCount::Uniform(l) => *l,
            ModeCount::PerElement(v) => v[i],
        }
    }
}

/// Velocity eigenpairs of block `i`: the first `ell + 1` pairs of
/// `a_i(φ, v) = λ s_i(φ, v)` on the block-local space.
///
/// The vector pencil is two copies of the scalar one, so scalar pairs are
/// computed and each contributes an x-mode followed by a y-mode.
pub fn local_velocity_eigenbasis(d: &Discretization, i: usize, ell: usize) -> Result<AuxBlock> {
    let mesh = d.mesh();
    let cells = &d.grid.elements[i].cells;
    let mut map = vec![NONE; mesh.n_vnodes()];
    let mut nodes = Vec::new();
    for &c in cells {
        for v in mesh.cell_vnodes(c) {
            if !d.space.is_dirichlet(v) {
                map[v] = 0;
            }
        }
    }
    for v in 0..map.len() {
        if map[v] != NONE {
            map[v] = nodes.len() as u32;
            nodes.push(v);
        }
    }
    let m = nodes.len();
    if 2 * m < ell + 1 {
        return Err(Error::DegeneratePencil(format!("block {i} has {} velocity unknowns, {} modes requested", 2 * m, ell + 1)));
    }
    let stiffness = assemble_q2_scalar(mesh, cells, &map, m, Q2Form::Stiffness);
    let mass = assemble_q2_scalar(mesh, cells, &map, m, Q2Form::Weighted(&d.pou));
    let n_scalar = (ell + 2) / 2;
    let eig = smallest_eigenpairs(&stiffness, &mass, n_scalar, EIGEN_TOL, i as u64)?;
    let mut eigenvalues = Vec::with_capacity(ell + 1);
    let mut modes = DMatrix::zeros(2 * m, ell);
    for t in 0..=ell {
        let (k, comp) = (t / 2, t % 2);
        eigenvalues.push(eig.values[k]);
        if t < ell {
            modes.view_mut((comp * m, t), (m, 1)).copy_from(&eig.vectors.column(k));
        }
    }
    Ok(AuxBlock { element: i, ell, nodes, eigenvalues, modes, stiffness, mass })
}

/// Builds every block's eigenbasis, `π`, `Λ` and `Γ`.
pub fn build_aux_space(d: &Discretization, ell: &ModeCount) -> Result<AuxSpace> {
    let blocks: Vec<AuxBlock> = (0..d.grid.len())
        .into_par_iter()
        .map(|i| local_velocity_eigenbasis(d, i, ell.get(i)))
        .collect::<Result<_>>()?;
    for b in &blocks {
        if b.eigenvalues[b.ell] <= ZERO_EIGENVALUE {
            return Err(Error::ZeroLambda { block: b.element, index: b.ell + 1 });
        }
    }
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut n_aux = 0;
    for b in &blocks {
        offsets.push(n_aux);
        n_aux += b.ell;
    }
    let nf = d.space.n_free_nodes();
    let mut t = TripletBuilder::new(n_aux, d.space.n_u());
    for (b, &off) in blocks.iter().zip(&offsets) {
        let m = b.nodes.len();
        let globals: Vec<usize> = (0..2)
            .flat_map(|c| b.nodes.iter().map(move |&v| (c, v)))
            .map(|(c, v)| c * nf + d.space.free_index(v).expect("free node"))
            .collect();
        for j in 0..b.ell {
            let phi: Vec<f64> = b.modes.column(j).iter().copied().collect();
            let row = AuxBlock::apply_vector(&b.mass, &phi);
            debug_assert_eq!(row.len(), 2 * m);
            for (k, &val) in row.iter().enumerate() {
                t.push(off + j, globals[k], val);
            }
        }
    }
    let lambda_min_excluded = blocks.iter().map(|b| b.eigenvalues[b.ell]).fold(f64::INFINITY, f64::min);
    let gamma = blocks
        .iter()
        .filter(|b| b.ell > 0)
        .map(|b| b.eigenvalues[b.ell - 1])
        .fold(0.0, f64::max);
    Ok(AuxSpace { blocks, offsets, pi: t.build(), lambda_min_excluded, gamma })
}

/// How the divergence constraints of `W(K_i)` are imposed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PressureConstraint {
    /// Exact null space of the constraint matrix; fails when it is too small.
    Strict,
    /// Mean-free functions minimizing the constraint residual in the `𝒮_i`
    /// norm, followed by the `𝒜_i` eigenproblem on that subspace.
    #[default]
    Relaxed,
}

/// Pressure spectral data of one block.
#[derive(Clone, Debug)]
pub struct PressureBlock {
    pub element: usize,
    /// Pressure nodes of the block, increasing.
    pub pnodes: Vec<usize>,
    /// `ζ_1 ≤ … ≤ ζ_ℓ`.
    pub zeta: Vec<f64>,
    /// `n_q × ℓ`, `𝒮_i`-orthonormal.
    pub modes: DMatrix<f64>,
    /// Local divergence: block pressure nodes × block velocity unknowns.
    pub divergence: CsrMatrix,
    /// `∫_{K_i} q_k` per pressure node.
    pub weights: Vec<f64>,
    /// Largest `|b((I−π)w, q_j)|` over local basis fields `w` and modes, relative to `‖C‖`.
    pub constraint_residual: f64,
    /// Dimension of the exact constraint null space (computed in strict mode).
    pub constraint_null_dim: Option<usize>,
}

/// `Q_H = span{q_j^i}`.
#[derive(Clone, Debug)]
pub struct PressureAuxSpace {
    pub blocks: Vec<PressureBlock>,
    pub mode: PressureConstraint,
}

impl PressureAuxSpace {
    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.zeta.len()).sum()
    }
}

/// Constraint matrix rows `b((I−π) w_α, ·)` over the block's velocity
/// unknowns, followed by the mean row, plus the local divergence and weights.
pub fn pressure_constraints(d: &Discretization, aux: &AuxSpace, i: usize) -> (DMatrix<f64>, CsrMatrix, Vec<f64>, Vec<usize>) {
    let mesh = d.mesh();
    let block = &aux.blocks[i];
    let cells = &d.grid.elements[i].cells;
    let (pnodes, pmap) = local_pnodes(mesh, cells);
    let mut vmap = vec![NONE; mesh.n_vnodes()];
    for (k, &v) in block.nodes.iter().enumerate() {
        vmap[v] = k as u32;
    }
    let m = block.nodes.len();
    let nq = pnodes.len();
    let div = assemble_divergence_local(mesh, cells, &vmap, m, &pmap, nq);
    let weights = pressure_weights(mesh, cells, &pmap, nq);
    let bt = div.transpose().to_dense();
    let mut s_phi = DMatrix::zeros(2 * m, block.ell);
    for j in 0..block.ell {
        let phi: Vec<f64> = block.modes.column(j).iter().copied().collect();
        s_phi.set_column(j, &DVector::from_vec(AuxBlock::apply_vector(&block.mass, &phi)));
    }
    let c = &bt - &s_phi * (block.modes.transpose() * &bt);
    let mut full = DMatrix::zeros(2 * m + 1, nq);
    full.rows_mut(0, 2 * m).copy_from(&c);
    for k in 0..nq {
        full[(2 * m, k)] = weights[k];
    }
    (full, div, weights, pnodes)
}

/// Dimension of the exact constraint space of block `i`, from column-pivoted
/// QR and from the SVD.
pub fn constraint_space_dims(d: &Discretization, aux: &AuxSpace, i: usize) -> (usize, usize) {
    let (c, _, _, pnodes) = pressure_constraints(d, aux, i);
    let scaled = scale_rows(&c);
    (pnodes.len() - qr_rank(&scaled, RANK_TOL), pnodes.len() - svd_rank(&scaled, RANK_TOL))
}

/// Rows scaled to unit norm so the mean row and the divergence rows weigh alike.
fn scale_rows(c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = c.clone();
    for mut row in s.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    s
}

/// Pressure eigenpairs `𝒜_i(q, v) = ζ 𝒮_i(q, v)` on `W(K_i)`.
pub fn local_pressure_eigenbasis(d: &Discretization, aux: &AuxSpace, i: usize, ell: usize, mode: PressureConstraint) -> Result<PressureBlock> {
    let mesh = d.mesh();
    let cells = &d.grid.elements[i].cells;
    let (c_full, divergence, weights, pnodes) = pressure_constraints(d, aux, i);
    let nq = pnodes.len();
    let (_, pmap) = local_pnodes(mesh, cells);
    let a = assemble_q1_scalar(mesh, cells, &pmap, nq, Q2Form::Stiffness).to_dense();
    let s = assemble_q1_scalar(mesh, cells, &pmap, nq, Q2Form::Weighted(&d.pou)).to_dense();
    let n_rows = c_full.nrows() - 1;
    let mut constraint_null_dim = None;

    let (zeta, modes) = match mode {
        PressureConstraint::Strict => {
            let z = null_space_basis(&scale_rows(&c_full), RANK_TOL);
            constraint_null_dim = Some(z.ncols());
            if z.ncols() < ell {
                return Err(Error::EmptyConstraintSpace { block: i, dim: z.ncols(), required: ell });
            }
            let e = eig_sym_generalized(&(z.transpose() * &a * &z), &(z.transpose() * &s * &z), ell, RANK_TOL)?;
            (e.values, &z * e.vectors)
        }
        PressureConstraint::Relaxed => {
            let mean = DMatrix::from_row_slice(1, nq, &weights);
            let z = null_space_basis(&mean, RANK_TOL);
            if z.ncols() < ell {
                return Err(Error::EmptyConstraintSpace { block: i, dim: z.ncols(), required: ell });
            }
            let cz = c_full.rows(0, n_rows) * &z;
            let s_z = z.transpose() * &s * &z;
            let sub = eig_sym_generalized(&(cz.transpose() * &cz), &s_z, ell, RANK_TOL)?;
            let u = &z * sub.vectors;
            let rr = eig_sym_generalized(&(u.transpose() * &a * &u), &(u.transpose() * &s * &u), ell, RANK_TOL)?;
            (rr.values, &u * rr.vectors)
        }
    };
    let c_norm = c_full.rows(0, n_rows).norm().max(f64::MIN_POSITIVE);
    let constraint_residual = (c_full.rows(0, n_rows) * &modes).amax() / c_norm;
    Ok(PressureBlock { element: i, pnodes, zeta, modes, divergence, weights, constraint_residual, constraint_null_dim })
}

/// Builds `Q_H` with `ℓ_i` pressure modes per block.
pub fn build_qh(d: &Discretization, aux: &AuxSpace, mode: PressureConstraint) -> Result<PressureAuxSpace> {
    let blocks = (0..d.grid.len())
        .into_par_iter()
        .map(|i| local_pressure_eigenbasis(d, aux, i, aux.blocks[i].ell, mode))
        .collect::<Result<Vec<_>>>()?;
    Ok(PressureAuxSpace { blocks, mode })
}

/// Writes `block,bx,by,kind,index,value` rows for λ and ζ spectra, followed
/// by `Λ` and `Γ` summary rows.
pub fn write_eigen_csv<W: Write>(d: &Discretization, aux: &AuxSpace, qh: Option<&PressureAuxSpace>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "block,bx,by,kind,index,value")?;
    for b in &aux.blocks {
        let e = &d.grid.elements[b.element];
        for (j, l) in b.eigenvalues.iter().enumerate() {
            writeln!(w, "{},{},{},lambda,{},{:.12e}", b.element, e.bx, e.by, j + 1, l)?;
        }
        if let Some(qh) = qh {
            for (j, z) in qh.blocks[b.element].zeta.iter().enumerate() {
                writeln!(w, "{},{},{},zeta,{},{:.12e}", b.element, e.bx, e.by, j + 1, z)?;
            }
        }
    }
    writeln!(w, ",,,Lambda,,{:.12e}", aux.lambda_min_excluded)?;
    writeln!(w, ",,,Gamma,,{:.12e}", aux.gamma)?;
    Ok(())
}
