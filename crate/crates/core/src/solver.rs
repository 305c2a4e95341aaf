//! Fine reference solve, coarse CEM velocity solve, pressure recovery and
//! error metrics.

use crate::auxiliary::{AuxSpace, PressureAuxSpace};
use crate::basis::MsBasis;
use crate::discretization::Discretization;
use crate::error::{Error, Result};
use crate::fem::assembly::{assemble_load, assemble_q1_scalar, local_pnodes, pressure_l2, pressure_weights, Q2Form};
use crate::forcing::Forcing;
use crate::linalg::dense::{min_norm_lstsq, RANK_TOL};
use crate::linalg::ordering::nested_dissection_2d;
use crate::linalg::saddle::{solve_spd, MeanRow, SaddleOperator, DEFAULT_TOL};
use crate::linalg::sparse::{dot, norm2};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

const ORDERING_LEAF: usize = 64;

/// Pivot ratio below which the coarse matrix counts as singular.
const COARSE_SINGULAR: f64 = 1e-14;

/// `⟨f, v⟩` on free velocity unknowns.
pub fn free_load(d: &Discretization, f: &Forcing) -> Vec<f64> {
    d.space.restrict(&assemble_load(&d.space, &|x, y| f.eval(x, y)))
}

/// Fine Taylor–Hood solution.
#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    /// Velocity on free unknowns.
    pub u: Vec<f64>,
    /// Pressure on all pressure nodes, zero mean.
    pub p: Vec<f64>,
    pub residual: f64,
}

/// Solves `a(u, v) − b(v, p) = ⟨f, v⟩`, `b(u, q) = 0` with `∫ p = 0`.
pub fn solve_reference(d: &Discretization, load: &[f64]) -> Result<ReferenceSolution> {
    let mesh = d.mesh();
    let np = d.space.n_p();
    let identity: Vec<u32> = (0..np as u32).collect();
    let weights = pressure_weights(mesh, mesh.active_cells(), &identity, np);
    let op = SaddleOperator {
        a: d.stiffness.clone(),
        b: d.divergence.clone(),
        low_rank: None,
        mean_rows: vec![MeanRow { weights: weights.into_iter().enumerate().collect() }],
        ordering: Some(nested_dissection_2d(&d.space.unknown_lattice(), 2, ORDERING_LEAF)),
    };
    let sol = op.factorize()?.solve(load, &vec![0.0; np], DEFAULT_TOL)?;
    // The solver works with +Bᵀξ, so p = −ξ.
    let p = sol.p.iter().map(|v| -v).collect();
    Ok(ReferenceSolution { u: sol.u, p, residual: sol.residual })
}

/// `G_{ab} = a(ψ_a, ψ_b)` and `rhs_a = ⟨f, ψ_a⟩`.
pub fn assemble_coarse_system(d: &Discretization, basis: &MsBasis, load: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let n = basis.len();
    let n_u = d.space.n_u();
    let n_el = d.grid.len();
    let member: Vec<Vec<bool>> = basis
        .functions
        .iter()
        .map(|f| {
            let mut m = vec![false; n_el];
            for &e in &f.region.elements {
                m[e] = true;
            }
            m
        })
        .collect();
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let fb = &basis.functions[b];
            let y = d.stiffness.mul_vec(&fb.to_global(n_u));
            (0..n)
                .map(|a| {
                    let fa = &basis.functions[a];
                    if !fa.region.elements.iter().any(|&e| member[b][e]) {
                        return 0.0;
                    }
                    fa.region.velocity.iter().zip(&fa.values).map(|(&g, &v)| v * y[g]).sum()
                })
                .collect()
        })
        .collect();
    let mut g = DMatrix::from_fn(n, n, |a, b| columns[b][a]);
    let gt = g.transpose();
    g = (g + gt) * 0.5;
    let rhs = DVector::from_iterator(
        n,
        basis.functions.iter().map(|f| f.region.velocity.iter().zip(&f.values).map(|(&k, &v)| v * load[k]).sum::<f64>()),
    );
    (g, rhs)
}

/// Solves `G c = rhs` by Cholesky; a numerically singular `G` is reported
/// with its near-null combination.
pub fn solve_velocity(g: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<Vec<f64>> {
    let scale = g.diagonal().amax();
    if let Some(ch) = g.clone().cholesky() {
        let l = ch.l_dirty();
        let min_pivot = (0..g.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot > COARSE_SINGULAR * scale {
            return Ok(ch.solve(rhs).iter().copied().collect());
        }
    }
    let eig = g.clone().symmetric_eigen();
    let (k, min) = eig.eigenvalues.iter().enumerate().fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    Err(Error::RankDeficientBasis { min_eigenvalue: min, null_combination: eig.eigenvectors.column(k).iter().copied().collect() })
}

/// Recovered multiscale pressure, broken per coarse block.
#[derive(Clone, Debug)]
pub struct PressureRecovery {
    /// Coefficients in `Q_H`, ordered like the auxiliary coefficients.
    pub coefficients: Vec<f64>,
    /// Nodal values per block on `qh.blocks[i].pnodes`.
    pub blocks: Vec<Vec<f64>>,
    pub least_squares: bool,
    pub smallest_singular_value: f64,
    pub largest_singular_value: f64,
}

/// `M_{(lk),(ij)} = b(φ̂_k^l, q_j^i)`, where `φ̂_k^l` is the conforming fine
/// field with the mode's nodal values on the nodes of `K_l`.
pub fn pressure_matrix(d: &Discretization, aux: &AuxSpace, qh: &PressureAuxSpace) -> DMatrix<f64> {
    let n = aux.dim();
    let mut q_off = Vec::with_capacity(qh.blocks.len());
    let mut acc = 0;
    for b in &qh.blocks {
        q_off.push(acc);
        acc += b.zeta.len();
    }
    let entries: Vec<Vec<(usize, usize, f64)>> = (0..d.grid.len())
        .into_par_iter()
        .map(|i| {
            let bi = &aux.blocks[i];
            let qi = &qh.blocks[i];
            let m = bi.nodes.len();
            let mut out = Vec::new();
            let mut ls: Vec<usize> = d.grid.neighbors(i).to_vec();
            ls.push(i);
            ls.sort_unstable();
            for l in ls {
                let bl = &aux.blocks[l];
                let ml = bl.nodes.len();
                // Positions of block l's nodes inside block i's numbering.
                let shared: Vec<(usize, usize)> = bl
                    .nodes
                    .iter()
                    .enumerate()
                    .filter_map(|(kl, v)| bi.nodes.binary_search(v).ok().map(|ki| (kl, ki)))
                    .collect();
                if shared.is_empty() {
                    continue;
                }
                for k in 0..bl.ell {
                    let mut phi = vec![0.0; 2 * m];
                    for &(kl, ki) in &shared {
                        phi[ki] = bl.modes[(kl, k)];
                        phi[m + ki] = bl.modes[(ml + kl, k)];
                    }
                    let div = DVector::from_vec(qi.divergence.mul_vec(&phi));
                    let row = qi.modes.transpose() * div;
                    for (j, &v) in row.iter().enumerate() {
                        out.push((aux.offsets[l] + k, q_off[i] + j, v));
                    }
                }
            }
            out
        })
        .collect();
    let mut mat = DMatrix::zeros(n, qh.dim());
    for list in entries {
        for (r, c, v) in list {
            mat[(r, c)] += v;
        }
    }
    mat
}

/// Solves `b(v, p_ms) = a(u_ms, v) − ⟨f, v⟩` over the auxiliary test fields.
///
/// A singular system falls back to minimum-norm least squares (flagged)
/// unless `allow_least_squares` is false.
pub fn recover_pressure(
    d: &Discretization,
    aux: &AuxSpace,
    qh: &PressureAuxSpace,
    u_ms: &[f64],
    load: &[f64],
    allow_least_squares: bool,
) -> Result<PressureRecovery> {
    if qh.dim() != aux.dim() {
        return Err(Error::InvalidInput(format!("dim Q_H = {} differs from dim V_aux = {}", qh.dim(), aux.dim())));
    }
    let mat = pressure_matrix(d, aux, qh);
    let au = d.stiffness.mul_vec(u_ms);
    let residual: Vec<f64> = au.iter().zip(load).map(|(a, f)| a - f).collect();
    let nf = d.space.n_free_nodes();
    let mut rhs = DVector::zeros(aux.dim());
    for (l, b) in aux.blocks.iter().enumerate() {
        let m = b.nodes.len();
        let globals: Vec<usize> = b.nodes.iter().map(|&v| d.space.free_index(v).expect("free node")).collect();
        for k in 0..b.ell {
            let mut s = 0.0;
            for (kl, &g) in globals.iter().enumerate() {
                s += b.modes[(kl, k)] * residual[g] + b.modes[(m + kl, k)] * residual[nf + g];
            }
            rhs[aux.offsets[l] + k] = s;
        }
    }

    let sv = mat.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let singular = !(smin > RANK_TOL * smax);
    let x = if singular {
        if !allow_least_squares {
            return Err(Error::SingularPressureSystem { smallest_singular_value: smin });
        }
        min_norm_lstsq(&mat, &rhs, RANK_TOL)
    } else {
        mat.clone().lu().solve(&rhs).ok_or(Error::SingularPressureSystem { smallest_singular_value: smin })?
    };

    let mut blocks = Vec::with_capacity(qh.blocks.len());
    let mut off = 0;
    let (mut total, mut area) = (0.0, 0.0);
    for b in &qh.blocks {
        let l = b.zeta.len();
        let p: Vec<f64> = (&b.modes * x.rows(off, l)).iter().copied().collect();
        total += dot(&b.weights, &p);
        area += b.weights.iter().sum::<f64>();
        blocks.push(p);
        off += l;
    }
    let shift = total / area;
    for p in &mut blocks {
        for v in p.iter_mut() {
            *v -= shift;
        }
    }
    Ok(PressureRecovery {
        coefficients: x.iter().copied().collect(),
        blocks,
        least_squares: singular,
        smallest_singular_value: smin,
        largest_singular_value: smax,
    })
}

/// `‖p_h − p_ms‖_{L²}` with `p_ms` broken per block.
pub fn pressure_error(d: &Discretization, qh: &PressureAuxSpace, p_h: &[f64], p_ms: &[Vec<f64>]) -> f64 {
    let mesh = d.mesh();
    let mut e2 = 0.0;
    for (b, p) in qh.blocks.iter().zip(p_ms) {
        let cells = &d.grid.elements[b.element].cells;
        let (nodes, map) = local_pnodes(mesh, cells);
        let mass = assemble_q1_scalar(mesh, cells, &map, nodes.len(), Q2Form::Mass);
        let e: Vec<f64> = nodes.iter().zip(p).map(|(&q, v)| p_h[q] - v).collect();
        e2 += dot(&e, &mass.mul_vec(&e));
    }
    e2.max(0.0).sqrt()
}

/// Multiscale solution: coarse coefficients, fine velocity and pressure.
#[derive(Clone, Debug)]
pub struct MsSolution {
    pub coefficients: Vec<f64>,
    /// `Σ c_b ψ_b` on free unknowns.
    pub u: Vec<f64>,
    pub pressure: PressureRecovery,
    /// `a(ψ_b, ψ_b)` per basis function.
    pub basis_energy: Vec<f64>,
}

/// Coarse solve followed by pressure recovery.
pub fn solve_multiscale(
    d: &Discretization,
    aux: &AuxSpace,
    qh: &PressureAuxSpace,
    basis: &MsBasis,
    load: &[f64],
    allow_least_squares: bool,
) -> Result<MsSolution> {
    let (g, rhs) = assemble_coarse_system(d, basis, load);
    let coefficients = solve_velocity(&g, &rhs)?;
    let u = basis.combine(&coefficients, d.space.n_u());
    let pressure = recover_pressure(d, aux, qh, &u, load, allow_least_squares)?;
    Ok(MsSolution { coefficients, u, pressure, basis_energy: g.diagonal().iter().copied().collect() })
}

/// Error norms between the fine reference and a multiscale solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorReport {
    pub err_u_a: f64,
    pub err_u_s: f64,
    pub norm_u_a: f64,
    pub err_u_rel: f64,
    pub err_p: f64,
    pub norm_p: f64,
    pub err_p_rel: f64,
    /// `max_b |a(u_h − u_ms, ψ_b)| / (‖u_h‖_a ‖ψ_b‖_a)`.
    pub galerkin_defect: f64,
    /// `sup_v (⟨f, v⟩ − a(u_ms, v)) / ‖v‖_a` over all fine velocity fields.
    pub residual_dual_norm: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

pub fn error_report(
    d: &Discretization,
    qh: &PressureAuxSpace,
    basis: &MsBasis,
    reference: &ReferenceSolution,
    ms: &MsSolution,
    load: &[f64],
) -> Result<ErrorReport> {
    let e: Vec<f64> = reference.u.iter().zip(&ms.u).map(|(a, b)| a - b).collect();
    let ae = d.stiffness.mul_vec(&e);
    let err_u_a = dot(&e, &ae).max(0.0).sqrt();
    let err_u_s = dot(&e, &d.weighted_mass.mul_vec(&e)).max(0.0).sqrt();
    let norm_u_a = dot(&reference.u, &d.stiffness.mul_vec(&reference.u)).max(0.0).sqrt();
    let err_p = pressure_error(d, qh, &reference.p, &ms.pressure.blocks);
    let norm_p = pressure_l2(&d.space, &reference.p);
    let galerkin_defect = basis
        .functions
        .iter()
        .zip(&ms.basis_energy)
        .map(|(f, &energy)| {
            let v: f64 = f.region.velocity.iter().zip(&f.values).map(|(&g, &x)| x * ae[g]).sum();
            ratio(v.abs(), norm_u_a * energy.max(0.0).sqrt())
        })
        .fold(0.0, f64::max);
    let residual_dual_norm = if norm2(load) == 0.0 {
        let au = d.stiffness.mul_vec(&ms.u);
        dot(&ms.u, &au).max(0.0).sqrt()
    } else {
        let w = solve_spd(&d.stiffness, load, DEFAULT_TOL)?;
        let diff: Vec<f64> = w.iter().zip(&ms.u).map(|(a, b)| a - b).collect();
        dot(&diff, &d.stiffness.mul_vec(&diff)).max(0.0).sqrt()
    };
    Ok(ErrorReport {
        err_u_a,
        err_u_s,
        norm_u_a,
        err_u_rel: ratio(err_u_a, norm_u_a),
        err_p,
        norm_p,
        err_p_rel: ratio(err_p, norm_p),
        galerkin_defect,
        residual_dual_norm,
    })
}
