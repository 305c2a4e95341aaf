use crate::mesh::{PerforatedMesh, NONE};

/// Taylor–Hood Q2/Q1 spaces on a perforated mesh.
///
/// Full velocity vectors are component-major over all velocity nodes
/// (`c * n_vnodes + node`). Free vectors are component-major over the
/// non-Dirichlet nodes (`c * n_free + free_index`). Pressure unknowns are the
/// pressure nodes in mesh order.
#[derive(Clone, Debug)]
pub struct FESpace {
    pub mesh: PerforatedMesh,
    dirichlet: Vec<bool>,
    free_of_node: Vec<u32>,
    free_nodes: Vec<usize>,
}

pub fn build_spaces(mesh: &PerforatedMesh) -> FESpace {
    let n = mesh.n_vnodes();
    let dirichlet: Vec<bool> = (0..n).map(|v| mesh.vnode_on_boundary(v)).collect();
    let mut free_of_node = vec![NONE; n];
    let mut free_nodes = Vec::new();
    for v in 0..n {
        if !dirichlet[v] {
            free_of_node[v] = free_nodes.len() as u32;
            free_nodes.push(v);
        }
    }
    FESpace { mesh: mesh.clone(), dirichlet, free_of_node, free_nodes }
}

impl FESpace {
    pub fn n_vnodes(&self) -> usize {
        self.mesh.n_vnodes()
    }

    pub fn n_free_nodes(&self) -> usize {
        self.free_nodes.len()
    }

    /// Free velocity unknowns (both components).
    pub fn n_u(&self) -> usize {
        2 * self.free_nodes.len()
    }

    pub fn n_p(&self) -> usize {
        self.mesh.n_pnodes()
    }

    /// Length of a full velocity vector.
    pub fn n_full(&self) -> usize {
        2 * self.mesh.n_vnodes()
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.dirichlet[node]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        let f = self.free_of_node[node];
        (f != NONE).then_some(f as usize)
    }

    pub(crate) fn free_map(&self) -> &[u32] {
        &self.free_of_node
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    /// Inserts zeros on Dirichlet nodes.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_u());
        let (nf, nv) = (self.n_free_nodes(), self.n_vnodes());
        let mut full = vec![0.0; 2 * nv];
        for c in 0..2 {
            for (k, &v) in self.free_nodes.iter().enumerate() {
                full[c * nv + v] = free[c * nf + k];
            }
        }
        full
    }

    /// Drops Dirichlet entries.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        assert_eq!(full.len(), self.n_full());
        let (nf, nv) = (self.n_free_nodes(), self.n_vnodes());
        let mut free = vec![0.0; 2 * nf];
        for c in 0..2 {
            for (k, &v) in self.free_nodes.iter().enumerate() {
                free[c * nf + k] = full[c * nv + v];
            }
        }
        free
    }

    /// Nodal interpolant of a vector field as a full velocity vector.
    pub fn interpolate(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        let nv = self.n_vnodes();
        let mut full = vec![0.0; 2 * nv];
        for v in 0..nv {
            let [x, y] = self.mesh.vnode_coords(v);
            let val = f(x, y);
            full[v] = val[0];
            full[nv + v] = val[1];
        }
        full
    }

    pub fn interpolate_pressure(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        (0..self.n_p())
            .map(|q| {
                let [x, y] = self.mesh.pnode_coords(q);
                f(x, y)
            })
            .collect()
    }

    /// Lattice coordinates (velocity lattice, spacing `h/2`) of each free
    /// velocity unknown followed by each pressure unknown.
    pub fn unknown_lattice(&self) -> Vec<Option<[u32; 2]>> {
        let mut out = Vec::with_capacity(self.n_u() + self.n_p());
        for _ in 0..2 {
            for &v in &self.free_nodes {
                let [i, j] = self.mesh.vnode_lattice(v);
                out.push(Some([i as u32, j as u32]));
            }
        }
        for q in 0..self.n_p() {
            let [i, j] = self.mesh.pnode_lattice(q);
            out.push(Some([2 * i as u32, 2 * j as u32]));
        }
        out
    }
}
