use super::assembly::*;
use super::space::build_spaces;
use crate::linalg::sparse::dot;
use crate::mesh::{build_coarse_grid, build_fine_grid, PerforationSpec, Shape};

fn open_mesh(nx: usize) -> crate::mesh::PerforatedMesh {
    build_fine_grid(nx, &PerforationSpec::default()).unwrap()
}

#[test]
fn unperforated_space_counts() {
    let space = build_spaces(&open_mesh(4));
    assert_eq!(space.n_vnodes(), 81);
    assert_eq!(space.n_p(), 25);
    let outer = (0..81).filter(|&v| {
        let [i, j] = space.mesh.vnode_lattice(v);
        i == 0 || j == 0 || i == 8 || j == 8
    });
    assert!(outer.clone().all(|v| space.is_dirichlet(v)));
    assert_eq!(outer.count(), 32);
    assert_eq!(space.n_free_nodes(), 81 - 32);
    assert_eq!(space.n_u(), 2 * 49);
}

#[test]
fn interior_hole_edges_are_dirichlet() {
    // One cell (3, 4) removed from an 8×8 grid.
    let spec = PerforationSpec::new(vec![Shape::Rect { x0: 0.38, y0: 0.51, x1: 0.49, y1: 0.6 }]);
    let mesh = build_fine_grid(8, &spec).unwrap();
    assert_eq!(mesh.active_cells().len(), 63);
    let space = build_spaces(&mesh);
    assert_eq!(space.n_vnodes(), 17 * 17 - 1);
    let ring: Vec<usize> = (6..=8)
        .flat_map(|i| (8..=10).map(move |j| (i, j)))
        .filter(|&(i, j)| (i, j) != (7, 9))
        .map(|(i, j)| mesh.vnode_at(i, j).unwrap())
        .collect();
    assert!(ring.iter().all(|&v| space.is_dirichlet(v)));
    let n_dir = (0..space.n_vnodes()).filter(|&v| space.is_dirichlet(v)).count();
    assert_eq!(n_dir, 64 + 8);
    assert_eq!(space.n_free_nodes(), space.n_vnodes() - n_dir);
}

#[test]
fn expanded_fields_vanish_on_boundary() {
    let space = build_spaces(&open_mesh(4));
    let free: Vec<f64> = (0..space.n_u()).map(|k| 1.0 + k as f64).collect();
    let full = space.expand(&free);
    let nv = space.n_vnodes();
    for v in 0..nv {
        if space.is_dirichlet(v) {
            assert_eq!(full[v], 0.0);
            assert_eq!(full[nv + v], 0.0);
        }
    }
    assert_eq!(space.restrict(&full), free);
}

#[test]
fn stiffness_kills_constants_and_is_symmetric() {
    let mesh = build_fine_grid(8, &crate::mesh::demo_perforations()).unwrap();
    let space = build_spaces(&mesh);
    let a = assemble_stiffness_full(&space);
    let ones = vec![1.0; space.n_full()];
    assert!(a.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
    assert!(a.symmetry_defect() < 1e-15);
    let af = assemble_stiffness(&space);
    assert_eq!(af.nrows(), space.n_u());
    assert!(af.symmetry_defect() < 1e-15);
}

#[test]
fn divergence_examples() {
    let spec = PerforationSpec::new(vec![Shape::Circle { cx: 0.5, cy: 0.5, r: 0.2 }]);
    let mesh = build_fine_grid(8, &spec).unwrap();
    let space = build_spaces(&mesh);
    let b = assemble_divergence_full(&space);
    assert!(b.mul_vec(&vec![0.0; space.n_full()]).iter().all(|&v| v == 0.0));
    let solenoidal = space.interpolate(|x, y| [x, -y]);
    assert!(b.mul_vec(&solenoidal).iter().all(|v| v.abs() < 1e-14));
    // Σ_q b(u, q) = ∫ ∇·u = |Ω^ε| for u = (x, 0).
    let stretch = space.interpolate(|x, _| [x, 0.0]);
    let total: f64 = b.mul_vec(&stretch).iter().sum();
    let area = mesh.active_cells().len() as f64 / 64.0;
    assert!((total - area).abs() < 1e-13);
}

#[test]
fn pou_sums_to_one_and_is_nodal() {
    let mesh = build_fine_grid(16, &crate::mesh::demo_perforations()).unwrap();
    let space = build_spaces(&mesh);
    let grid = build_coarse_grid(&mesh, 4).unwrap();
    let pou = build_pou(&grid, &space);
    let mut sum = vec![0.0; space.n_vnodes()];
    for j in 0..pou.n_vertices() {
        for &(v, val) in pou.hat(j) {
            assert!(val > 0.0 && val <= 1.0);
            sum[v] += val;
        }
    }
    assert!(sum.iter().all(|s| (s - 1.0).abs() < 1e-14));
    for (j, &[x, y]) in grid.vertices.iter().enumerate() {
        let lattice = |t: f64| (t / (0.5 * mesh.h)).round() as usize;
        if let Some(v) = mesh.vnode_at(lattice(x), lattice(y)) {
            for k in 0..pou.n_vertices() {
                let val = pou.hat(k).iter().find(|e| e.0 == v).map_or(0.0, |e| e.1);
                assert_eq!(val, if k == j { 1.0 } else { 0.0 });
            }
        }
    }
}

#[test]
fn kappa_matches_finite_difference_gradients() {
    let mesh = open_mesh(8);
    let space = build_spaces(&mesh);
    let grid = build_coarse_grid(&mesh, 2).unwrap();
    let pou = build_pou(&grid, &space);
    let big_h = 0.5;
    let hat = |vx: f64, vy: f64, x: f64, y: f64| {
        (1.0 - (x - vx).abs() / big_h).max(0.0) * (1.0 - (y - vy).abs() / big_h).max(0.0)
    };
    for &(x, y) in &[(0.5 - 1e-3, 0.5 - 1e-3), (0.3, 0.1), (0.9, 0.55)] {
        let d = 1e-6;
        let mut oracle = 0.0;
        for vx in [0.0, 0.5, 1.0] {
            for vy in [0.0, 0.5, 1.0] {
                let gx = (hat(vx, vy, x + d, y) - hat(vx, vy, x - d, y)) / (2.0 * d);
                let gy = (hat(vx, vy, x, y + d) - hat(vx, vy, x, y - d)) / (2.0 * d);
                oracle += gx * gx + gy * gy;
            }
        }
        let cell = ((y / mesh.h) as usize) * 8 + (x / mesh.h) as usize;
        assert!((pou.kappa(&mesh, cell, x, y) - oracle).abs() < 1e-6 * oracle, "({x},{y})");
    }
    // At the domain center the closed form gives 4 / H².
    let center_cell = 3 * 8 + 3;
    assert!((pou.kappa(&mesh, center_cell, 0.5, 0.5) - 16.0).abs() < 1e-12);
}

#[test]
fn kappa_scales_like_inverse_h_squared() {
    let mesh = open_mesh(16);
    let space = build_spaces(&mesh);
    let mut ratios = Vec::new();
    for nc in [2, 4, 8] {
        let grid = build_coarse_grid(&mesh, nc).unwrap();
        let pou = build_pou(&grid, &space);
        let max = mesh
            .active_cells()
            .iter()
            .flat_map(|&c| pou.kappa_at_quadrature(&mesh, c, 3))
            .map(|(_, k)| k)
            .fold(0.0, f64::max);
        ratios.push(max * grid.h_coarse * grid.h_coarse);
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    assert!(hi / lo < 2.0);
}

#[test]
fn weighted_mass_examples() {
    let mesh = open_mesh(8);
    let space = build_spaces(&mesh);
    let grid = build_coarse_grid(&mesh, 2).unwrap();
    let pou = build_pou(&grid, &space);
    let s = assemble_weighted_mass_full(&space, &pou);
    assert!(s.symmetry_defect() < 1e-14);
    assert_eq!(s.mul_vec(&vec![0.0; space.n_full()]).iter().sum::<f64>(), 0.0);
    // ‖c‖²_s over one block = c² ∫_K κ̃, integrand summed at 5×5 Gauss points.
    let c = 1.7;
    let field = space.interpolate(|_, _| [c, 0.0]);
    let block = &grid.elements[3].cells;
    let (_, s_norm) = region_norms(&space, &pou, &field, block);
    let (_, w5) = super::reference::gauss_1d(5);
    let w2: Vec<f64> = w5.iter().flat_map(|a| w5.iter().map(move |b| a * b)).collect();
    let integral: f64 = block
        .iter()
        .map(|&cell| {
            pou.kappa_at_quadrature(&mesh, cell, 5).iter().zip(&w2).map(|((_, k), w)| k * w).sum::<f64>()
                * mesh.h
                * mesh.h
        })
        .sum();
    assert!((integral - 8.0 / 3.0).abs() < 1e-12);
    assert!((s_norm * s_norm - c * c * integral).abs() < 1e-12);
}

#[test]
fn weighted_quadrature_is_saturated() {
    let mesh = open_mesh(8);
    let space = build_spaces(&mesh);
    let grid = build_coarse_grid(&mesh, 2).unwrap();
    let s4 = assemble_weighted_mass_full(&space, &build_pou_with_order(&grid, &space, 4));
    let s5 = assemble_weighted_mass_full(&space, &build_pou_with_order(&grid, &space, 5));
    let scale = s4.max_abs();
    for (i, j, v) in s4.triplets() {
        assert!((v - s5.get(i, j)).abs() <= 1e-12 * scale);
    }
    assert_eq!(s4.nnz(), s5.nnz());
}

#[test]
fn load_examples() {
    let mesh = build_fine_grid(8, &crate::mesh::demo_perforations()).unwrap();
    let space = build_spaces(&mesh);
    assert!(assemble_load(&space, &|_, _| [0.0, 0.0]).iter().all(|&v| v == 0.0));
    let load = assemble_load(&space, &|_, _| [1.0, 0.0]);
    let nv = space.n_vnodes();
    assert!(load[nv..].iter().all(|&v| v == 0.0));
    let area = mesh.active_cells().len() as f64 * mesh.h * mesh.h;
    assert!((load[..nv].iter().sum::<f64>() - area).abs() < 1e-13);
}

#[test]
fn scalar_forms_on_a_block() {
    let mesh = build_fine_grid(16, &crate::mesh::demo_perforations()).unwrap();
    let space = build_spaces(&mesh);
    let grid = build_coarse_grid(&mesh, 4).unwrap();
    let pou = build_pou(&grid, &space);
    for i in 0..grid.len() {
        let (a, s, nodes) = assemble_scalar_forms(&space, &grid, &pou, i);
        assert_eq!(a.nrows(), nodes.len());
        assert!(a.mul_vec(&vec![1.0; nodes.len()]).iter().all(|v| v.abs() < 1e-13));
        assert!(a.symmetry_defect() < 1e-15 && s.symmetry_defect() < 1e-14);
        let ones = vec![1.0; nodes.len()];
        assert!(dot(&ones, &s.mul_vec(&ones)) > 0.0);
    }
}

#[test]
fn region_norms_add_up() {
    let mesh = build_fine_grid(8, &crate::mesh::demo_perforations()).unwrap();
    let space = build_spaces(&mesh);
    let grid = build_coarse_grid(&mesh, 4).unwrap();
    let pou = build_pou(&grid, &space);
    let zero = vec![0.0; space.n_full()];
    assert_eq!(region_norms(&space, &pou, &zero, mesh.active_cells()), (0.0, 0.0));
    let field = space.interpolate(|x, y| [(3.0 * x).sin() * y, x * x - y]);
    let (a_all, s_all) = region_norms_squared(&space, &pou, &field, mesh.active_cells());
    let a = assemble_stiffness_full(&space);
    let s = assemble_weighted_mass_full(&space, &pou);
    assert!((a_all - dot(&field, &a.mul_vec(&field))).abs() < 1e-12 * a_all);
    assert!((s_all - dot(&field, &s.mul_vec(&field))).abs() < 1e-12 * s_all);
    let (mut a_sum, mut s_sum) = (0.0, 0.0);
    for e in &grid.elements {
        let (ai, si) = region_norms_squared(&space, &pou, &field, &e.cells);
        a_sum += ai;
        s_sum += si;
    }
    assert!((a_sum - a_all).abs() < 1e-12 * a_all && (s_sum - s_all).abs() < 1e-12 * s_all);
}
