use super::reference::{q1_values, q2_grads, q2_values, ElementMatrices, QuadRule};
use super::space::FESpace;
use crate::linalg::sparse::{CsrMatrix, TripletBuilder};
use crate::mesh::{CoarseGrid, PerforatedMesh, NONE};
use std::sync::OnceLock;

/// Default Gauss order per axis for polynomial element integrals.
pub const QUAD_ORDER: usize = 3;
/// Gauss order for κ̃-weighted integrals (one degree higher integrand).
pub const WEIGHTED_QUAD_ORDER: usize = 4;

pub(crate) fn element_matrices() -> &'static ElementMatrices {
    static CELL: OnceLock<ElementMatrices> = OnceLock::new();
    CELL.get_or_init(|| ElementMatrices::new(QUAD_ORDER))
}

/// Bilinear coarse partition of unity and the weight `κ̃ = Σ_j |∇χ_j|²`.
#[derive(Clone, Debug)]
pub struct PouData {
    pub n_coarse: usize,
    pub h_coarse: f64,
    cells_per_block: usize,
    h: f64,
    /// Per coarse vertex, nonzero `(velocity node, χ_j)` pairs on `Ω^ε`.
    hats: Vec<Vec<(usize, f64)>>,
    /// κ̃-weighted element matrices per cell offset inside a block, scaled to the fine cell.
    weighted_q2: Vec<[[f64; 9]; 9]>,
    weighted_q1: Vec<[[f64; 4]; 4]>,
}

pub fn build_pou(grid: &CoarseGrid, space: &FESpace) -> PouData {
    build_pou_with_order(grid, space, WEIGHTED_QUAD_ORDER)
}

pub fn build_pou_with_order(grid: &CoarseGrid, space: &FESpace, order: usize) -> PouData {
    let mesh = &space.mesh;
    let nc = grid.n_coarse;
    let big_h = grid.h_coarse;
    let mut hats = vec![Vec::new(); (nc + 1) * (nc + 1)];
    for v in 0..mesh.n_vnodes() {
        let [x, y] = mesh.vnode_coords(v);
        for (j, hat) in hats.iter_mut().enumerate() {
            let val = hat_value(grid.vertices[j], big_h, x, y);
            if val > 0.0 {
                hat.push((v, val));
            }
        }
    }
    let cpb = grid.cells_per_block;
    let h = mesh.h;
    let rule = QuadRule::gauss(order);
    let mut weighted_q2 = Vec::with_capacity(cpb * cpb);
    let mut weighted_q1 = Vec::with_capacity(cpb * cpb);
    for ly in 0..cpb {
        for lx in 0..cpb {
            let mut m2 = [[0.0; 9]; 9];
            let mut m1 = [[0.0; 4]; 4];
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let xi = (lx as f64 + p[0]) / cpb as f64;
                let eta = (ly as f64 + p[1]) / cpb as f64;
                let wk = w * h * h * kappa_local(xi, eta, big_h);
                let n = q2_values(p[0], p[1]);
                for a in 0..9 {
                    for b in 0..9 {
                        m2[a][b] += wk * n[a] * n[b];
                    }
                }
                let q = q1_values(p[0], p[1]);
                for a in 0..4 {
                    for b in 0..4 {
                        m1[a][b] += wk * q[a] * q[b];
                    }
                }
            }
            weighted_q2.push(m2);
            weighted_q1.push(m1);
        }
    }
    PouData { n_coarse: nc, h_coarse: big_h, cells_per_block: cpb, h, hats, weighted_q2, weighted_q1 }
}

fn hat_value(vertex: [f64; 2], big_h: f64, x: f64, y: f64) -> f64 {
    let fx = (1.0 - (x - vertex[0]).abs() / big_h).max(0.0);
    let fy = (1.0 - (y - vertex[1]).abs() / big_h).max(0.0);
    fx * fy
}

/// κ̃ at local block coordinates `(ξ, η) ∈ [0,1]²`.
fn kappa_local(xi: f64, eta: f64, big_h: f64) -> f64 {
    2.0 * ((1.0 - xi).powi(2) + xi * xi + (1.0 - eta).powi(2) + eta * eta) / (big_h * big_h)
}

impl PouData {
    pub fn n_vertices(&self) -> usize {
        self.hats.len()
    }

    /// Nonzero nodal values `(velocity node, χ_j)` of hat `j`.
    pub fn hat(&self, j: usize) -> &[(usize, f64)] {
        &self.hats[j]
    }

    /// κ̃ at a point of fine cell `cell`.
    pub fn kappa(&self, mesh: &PerforatedMesh, cell: usize, x: f64, y: f64) -> f64 {
        let (ix, iy) = mesh.cell_ij(cell);
        let (bx, by) = (ix / self.cells_per_block, iy / self.cells_per_block);
        let xi = x / self.h_coarse - bx as f64;
        let eta = y / self.h_coarse - by as f64;
        kappa_local(xi, eta, self.h_coarse)
    }

    /// κ̃ at the Gauss points of a cell, with the physical points.
    pub fn kappa_at_quadrature(&self, mesh: &PerforatedMesh, cell: usize, order: usize) -> Vec<([f64; 2], f64)> {
        let o = mesh.cell_origin(cell);
        QuadRule::gauss(order)
            .points
            .iter()
            .map(|p| {
                let (x, y) = (o[0] + p[0] * self.h, o[1] + p[1] * self.h);
                ([x, y], self.kappa(mesh, cell, x, y))
            })
            .collect()
    }

    fn offset(&self, mesh: &PerforatedMesh, cell: usize) -> usize {
        let (ix, iy) = mesh.cell_ij(cell);
        let c = self.cells_per_block;
        (iy % c) * c + ix % c
    }

    pub(crate) fn weighted_q2(&self, mesh: &PerforatedMesh, cell: usize) -> &[[f64; 9]; 9] {
        &self.weighted_q2[self.offset(mesh, cell)]
    }

    pub(crate) fn weighted_q1(&self, mesh: &PerforatedMesh, cell: usize) -> &[[f64; 4]; 4] {
        &self.weighted_q1[self.offset(mesh, cell)]
    }
}

/// Scalar biquadratic bilinear forms.
#[derive(Clone, Copy, Debug)]
pub enum Q2Form<'a> {
    Stiffness,
    Mass,
    Weighted(&'a PouData),
}

/// Sorted velocity nodes touched by `cells` and the node → local index map.
pub fn local_vnodes(mesh: &PerforatedMesh, cells: &[usize]) -> (Vec<usize>, Vec<u32>) {
    let mut map = vec![NONE; mesh.n_vnodes()];
    for &c in cells {
        for v in mesh.cell_vnodes(c) {
            map[v] = 0;
        }
    }
    let nodes: Vec<usize> = (0..map.len()).filter(|&v| map[v] != NONE).collect();
    for (k, &v) in nodes.iter().enumerate() {
        map[v] = k as u32;
    }
    (nodes, map)
}

/// Sorted pressure nodes touched by `cells` and the node → local index map.
pub fn local_pnodes(mesh: &PerforatedMesh, cells: &[usize]) -> (Vec<usize>, Vec<u32>) {
    let mut map = vec![NONE; mesh.n_pnodes()];
    for &c in cells {
        for q in mesh.cell_pnodes(c) {
            map[q] = 0;
        }
    }
    let nodes: Vec<usize> = (0..map.len()).filter(|&q| map[q] != NONE).collect();
    for (k, &q) in nodes.iter().enumerate() {
        map[q] = k as u32;
    }
    (nodes, map)
}

/// Scalar Q2 matrix over `cells`, indexed through `map` (`NONE` entries are
/// eliminated), of size `n × n`.
pub fn assemble_q2_scalar(mesh: &PerforatedMesh, cells: &[usize], map: &[u32], n: usize, form: Q2Form) -> CsrMatrix {
    let em = element_matrices();
    let h2 = mesh.h * mesh.h;
    let mut t = TripletBuilder::with_capacity(n, n, 81 * cells.len());
    for &c in cells {
        let nodes = mesh.cell_vnodes(c);
        let (mat, scale) = match form {
            Q2Form::Stiffness => (&em.q2_stiffness, 1.0),
            Q2Form::Mass => (&em.q2_mass, h2),
            Q2Form::Weighted(pou) => (pou.weighted_q2(mesh, c), 1.0),
        };
        for a in 0..9 {
            let ia = map[nodes[a]];
            if ia == NONE {
                continue;
            }
            for b in 0..9 {
                let ib = map[nodes[b]];
                if ib != NONE {
                    t.push(ia as usize, ib as usize, scale * mat[a][b]);
                }
            }
        }
    }
    t.build()
}

/// Scalar Q1 forms over pressure nodes: stiffness, mass or κ̃-weighted mass.
pub fn assemble_q1_scalar(mesh: &PerforatedMesh, cells: &[usize], map: &[u32], n: usize, form: Q2Form) -> CsrMatrix {
    let em = element_matrices();
    let h2 = mesh.h * mesh.h;
    let mut t = TripletBuilder::with_capacity(n, n, 16 * cells.len());
    for &c in cells {
        let nodes = mesh.cell_pnodes(c);
        let (mat, scale) = match form {
            Q2Form::Stiffness => (&em.q1_stiffness, 1.0),
            Q2Form::Mass => (&em.q1_mass, h2),
            Q2Form::Weighted(pou) => (pou.weighted_q1(mesh, c), 1.0),
        };
        for a in 0..4 {
            let ia = map[nodes[a]];
            if ia == NONE {
                continue;
            }
            for b in 0..4 {
                let ib = map[nodes[b]];
                if ib != NONE {
                    t.push(ia as usize, ib as usize, scale * mat[a][b]);
                }
            }
        }
    }
    t.build()
}

/// `b(u, q) = ∫ q ∇·u` over `cells`; rows through `pmap` (size `np`),
/// columns are component-major through `vmap` (size `2 nv`).
pub fn assemble_divergence_local(
    mesh: &PerforatedMesh,
    cells: &[usize],
    vmap: &[u32],
    nv: usize,
    pmap: &[u32],
    np: usize,
) -> CsrMatrix {
    let em = element_matrices();
    let h = mesh.h;
    let mut t = TripletBuilder::with_capacity(np, 2 * nv, 72 * cells.len());
    for &c in cells {
        let vn = mesh.cell_vnodes(c);
        let pn = mesh.cell_pnodes(c);
        for r in 0..4 {
            let ir = pmap[pn[r]];
            if ir == NONE {
                continue;
            }
            for a in 0..9 {
                let ia = vmap[vn[a]];
                if ia != NONE {
                    t.push(ir as usize, ia as usize, h * em.div_x[r][a]);
                    t.push(ir as usize, nv + ia as usize, h * em.div_y[r][a]);
                }
            }
        }
    }
    t.build()
}

/// Two copies of a scalar matrix on the diagonal (one per velocity component).
pub fn block_diag2(k: &CsrMatrix) -> CsrMatrix {
    let (n, m) = (k.nrows(), k.ncols());
    let mut t = TripletBuilder::with_capacity(2 * n, 2 * m, 2 * k.nnz());
    for (i, j, v) in k.triplets() {
        t.push(i, j, v);
        t.push(n + i, m + j, v);
    }
    t.build()
}

fn identity_map(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

/// Vector stiffness `a(u, v) = ∫ ∇u : ∇v` on free velocity unknowns.
pub fn assemble_stiffness(space: &FESpace) -> CsrMatrix {
    let mesh = &space.mesh;
    block_diag2(&assemble_q2_scalar(mesh, mesh.active_cells(), space.free_map(), space.n_free_nodes(), Q2Form::Stiffness))
}

/// Vector stiffness over all velocity nodes, before boundary elimination.
pub fn assemble_stiffness_full(space: &FESpace) -> CsrMatrix {
    let mesh = &space.mesh;
    let n = mesh.n_vnodes();
    block_diag2(&assemble_q2_scalar(mesh, mesh.active_cells(), &identity_map(n), n, Q2Form::Stiffness))
}

/// Vector κ̃-weighted mass `s(u, v) = ∫ κ̃ u·v` on free velocity unknowns.
pub fn assemble_weighted_mass(space: &FESpace, pou: &PouData) -> CsrMatrix {
    let mesh = &space.mesh;
    block_diag2(&assemble_q2_scalar(mesh, mesh.active_cells(), space.free_map(), space.n_free_nodes(), Q2Form::Weighted(pou)))
}

pub fn assemble_weighted_mass_full(space: &FESpace, pou: &PouData) -> CsrMatrix {
    let mesh = &space.mesh;
    let n = mesh.n_vnodes();
    block_diag2(&assemble_q2_scalar(mesh, mesh.active_cells(), &identity_map(n), n, Q2Form::Weighted(pou)))
}

/// Divergence `B` with rows over pressure nodes and columns over free velocity unknowns.
pub fn assemble_divergence(space: &FESpace) -> CsrMatrix {
    let mesh = &space.mesh;
    let np = mesh.n_pnodes();
    assemble_divergence_local(mesh, mesh.active_cells(), space.free_map(), space.n_free_nodes(), &identity_map(np), np)
}

/// Divergence with columns over all velocity nodes (full vectors).
pub fn assemble_divergence_full(space: &FESpace) -> CsrMatrix {
    let mesh = &space.mesh;
    let (nv, np) = (mesh.n_vnodes(), mesh.n_pnodes());
    assemble_divergence_local(mesh, mesh.active_cells(), &identity_map(nv), nv, &identity_map(np), np)
}

/// Q1 pressure mass matrix over all pressure nodes.
pub fn assemble_pressure_mass(space: &FESpace) -> CsrMatrix {
    let mesh = &space.mesh;
    let np = mesh.n_pnodes();
    assemble_q1_scalar(mesh, mesh.active_cells(), &identity_map(np), np, Q2Form::Mass)
}

/// `∫ q_k` over `cells` for each pressure basis function, through `pmap`.
pub fn pressure_weights(mesh: &PerforatedMesh, cells: &[usize], pmap: &[u32], np: usize) -> Vec<f64> {
    let w = 0.25 * mesh.h * mesh.h;
    let mut out = vec![0.0; np];
    for &c in cells {
        for q in mesh.cell_pnodes(c) {
            let k = pmap[q];
            if k != NONE {
                out[k as usize] += w;
            }
        }
    }
    out
}

/// `𝒜_i` and `𝒮_i`: Q1 stiffness and κ̃-weighted mass on the pressure nodes
/// of element `i` (no boundary conditions), with the node list.
pub fn assemble_scalar_forms(space: &FESpace, grid: &CoarseGrid, pou: &PouData, i: usize) -> (CsrMatrix, CsrMatrix, Vec<usize>) {
    let mesh = &space.mesh;
    let cells = &grid.elements[i].cells;
    let (nodes, map) = local_pnodes(mesh, cells);
    let n = nodes.len();
    let a = assemble_q1_scalar(mesh, cells, &map, n, Q2Form::Stiffness);
    let s = assemble_q1_scalar(mesh, cells, &map, n, Q2Form::Weighted(pou));
    (a, s, nodes)
}

/// Load `⟨f, v⟩` as a full velocity vector.
pub fn assemble_load(space: &FESpace, f: &(dyn Fn(f64, f64) -> [f64; 2] + Sync)) -> Vec<f64> {
    let mesh = &space.mesh;
    let nv = mesh.n_vnodes();
    let rule = QuadRule::gauss(QUAD_ORDER + 1);
    let shapes: Vec<[f64; 9]> = rule.points.iter().map(|p| q2_values(p[0], p[1])).collect();
    let h = mesh.h;
    let mut load = vec![0.0; 2 * nv];
    for &c in mesh.active_cells() {
        let o = mesh.cell_origin(c);
        let nodes = mesh.cell_vnodes(c);
        for ((p, &w), n) in rule.points.iter().zip(&rule.weights).zip(&shapes) {
            let fv = f(o[0] + p[0] * h, o[1] + p[1] * h);
            let wh = w * h * h;
            for a in 0..9 {
                load[nodes[a]] += wh * fv[0] * n[a];
                load[nv + nodes[a]] += wh * fv[1] * n[a];
            }
        }
    }
    load
}

/// `(‖u‖_a, ‖u‖_s)` of a full velocity vector restricted to `cells`.
pub fn region_norms(space: &FESpace, pou: &PouData, field: &[f64], cells: &[usize]) -> (f64, f64) {
    let (a2, s2) = region_norms_squared(space, pou, field, cells);
    (a2.sqrt(), s2.sqrt())
}

pub fn region_norms_squared(space: &FESpace, pou: &PouData, field: &[f64], cells: &[usize]) -> (f64, f64) {
    let mesh = &space.mesh;
    let nv = mesh.n_vnodes();
    assert_eq!(field.len(), 2 * nv);
    let em = element_matrices();
    let (mut a2, mut s2) = (0.0, 0.0);
    for &c in cells {
        let nodes = mesh.cell_vnodes(c);
        let wm = pou.weighted_q2(mesh, c);
        for comp in 0..2 {
            let u: [f64; 9] = std::array::from_fn(|k| field[comp * nv + nodes[k]]);
            for a in 0..9 {
                if u[a] == 0.0 {
                    continue;
                }
                for b in 0..9 {
                    a2 += u[a] * em.q2_stiffness[a][b] * u[b];
                    s2 += u[a] * wm[a][b] * u[b];
                }
            }
        }
    }
    (a2.max(0.0), s2.max(0.0))
}

/// `‖p‖_{L²}` of a pressure field over the whole domain.
pub fn pressure_l2(space: &FESpace, p: &[f64]) -> f64 {
    let mesh = &space.mesh;
    let em = element_matrices();
    let h2 = mesh.h * mesh.h;
    let mut s = 0.0;
    for &c in mesh.active_cells() {
        let n = mesh.cell_pnodes(c);
        for a in 0..4 {
            for b in 0..4 {
                s += p[n[a]] * em.q1_mass[a][b] * p[n[b]] * h2;
            }
        }
    }
    s.max(0.0).sqrt()
}

/// `‖∇(u − u_h)‖_{L²}` for a full velocity vector against an exact gradient
/// `[[∂x u1, ∂y u1], [∂x u2, ∂y u2]]`, by Gauss quadrature.
pub fn velocity_energy_error(space: &FESpace, field: &[f64], grad: &dyn Fn(f64, f64) -> [[f64; 2]; 2]) -> f64 {
    let mesh = &space.mesh;
    let nv = mesh.n_vnodes();
    let rule = QuadRule::gauss(QUAD_ORDER + 2);
    let grads: Vec<[[f64; 2]; 9]> = rule.points.iter().map(|p| q2_grads(p[0], p[1])).collect();
    let h = mesh.h;
    let mut e2 = 0.0;
    for &c in mesh.active_cells() {
        let o = mesh.cell_origin(c);
        let nodes = mesh.cell_vnodes(c);
        for ((p, &w), g) in rule.points.iter().zip(&rule.weights).zip(&grads) {
            let exact = grad(o[0] + p[0] * h, o[1] + p[1] * h);
            for comp in 0..2 {
                let mut d = [0.0; 2];
                for a in 0..9 {
                    let u = field[comp * nv + nodes[a]];
                    d[0] += u * g[a][0] / h;
                    d[1] += u * g[a][1] / h;
                }
                e2 += w * h * h * ((exact[comp][0] - d[0]).powi(2) + (exact[comp][1] - d[1]).powi(2));
            }
        }
    }
    e2.sqrt()
}

/// `‖p − p_h‖_{L²}` against an exact pressure.
pub fn pressure_error_exact(space: &FESpace, p: &[f64], exact: &dyn Fn(f64, f64) -> f64) -> f64 {
    let mesh = &space.mesh;
    let rule = QuadRule::gauss(QUAD_ORDER + 2);
    let vals: Vec<[f64; 4]> = rule.points.iter().map(|q| q1_values(q[0], q[1])).collect();
    let h = mesh.h;
    let mut e2 = 0.0;
    for &c in mesh.active_cells() {
        let o = mesh.cell_origin(c);
        let nodes = mesh.cell_pnodes(c);
        for ((q, &w), v) in rule.points.iter().zip(&rule.weights).zip(&vals) {
            let ph: f64 = (0..4).map(|a| p[nodes[a]] * v[a]).sum();
            e2 += w * h * h * (exact(o[0] + q[0] * h, o[1] + q[1] * h) - ph).powi(2);
        }
    }
    e2.sqrt()
}
