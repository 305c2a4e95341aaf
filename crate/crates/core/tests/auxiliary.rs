use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stokes_cem::auxiliary::*;
use stokes_cem::discretization::Discretization;
use stokes_cem::linalg::dense::eig_sym_generalized;
use stokes_cem::linalg::sparse::dot;
use stokes_cem::mesh::{build_fine_grid, demo_perforations, PerforationSpec};
use stokes_cem::Error;

fn disc(nx: usize, n_coarse: usize, demo: bool) -> Discretization {
    let spec = if demo { demo_perforations() } else { PerforationSpec::default() };
    Discretization::new(&build_fine_grid(nx, &spec).unwrap(), n_coarse).unwrap()
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

#[test]
fn eigenpairs_are_accurate_sorted_and_orthonormal() {
    let d = disc(32, 4, true);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    for b in &aux.blocks {
        assert!(b.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        let a_norm = b.stiffness.norm_inf();
        let s_norm = b.mass.norm_inf();
        for j in 0..b.ell {
            let phi = column(&b.modes, j);
            let m = b.nodes.len();
            let lam = b.eigenvalues[j];
            for c in 0..2 {
                let ka = b.stiffness.mul_vec(&phi[c * m..(c + 1) * m]);
                let sa = b.mass.mul_vec(&phi[c * m..(c + 1) * m]);
                let r = ka.iter().zip(&sa).map(|(x, y)| (x - lam * y).abs()).fold(0.0, f64::max);
                assert!(r <= 1e-8 * (a_norm + lam.abs() * s_norm), "block {} mode {j}: {r}", b.element);
            }
            for k in 0..b.ell {
                let g = b.s_inner(&phi, &column(&b.modes, k));
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((g - want).abs() <= 1e-10, "gram ({j},{k}) = {g}");
            }
        }
    }
}

#[test]
fn interior_block_has_constant_null_modes() {
    let d = disc(32, 4, false);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    let i = d.grid.element_at(1, 2).unwrap();
    assert!(!d.grid.touches_outer_boundary(i));
    let b = &aux.blocks[i];
    assert!(b.eigenvalues[0].abs() <= 1e-10 && b.eigenvalues[1].abs() <= 1e-10);
    assert!(b.eigenvalues[3] > 1e-3);
    // The null modes are constant per component.
    for j in 0..2 {
        let phi = column(&b.modes, j);
        assert!(b.a_inner(&phi, &phi).abs() <= 1e-10);
    }
    let corner = d.grid.element_at(0, 0).unwrap();
    assert!(aux.blocks[corner].eigenvalues[0] > 1e-3);
}

#[test]
fn single_cell_blocks_match_dense_reference() {
    let d = disc(4, 4, false);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    for b in &aux.blocks {
        let e = eig_sym_generalized(&b.stiffness.to_dense(), &b.mass.to_dense(), 2, 1e-10).unwrap();
        for (t, &l) in b.eigenvalues.iter().enumerate() {
            let r = e.values[t / 2];
            assert!((l - r).abs() <= 1e-9 * (1.0 + r.abs()), "block {} {l} vs {r}", b.element);
        }
    }
}

#[test]
fn counts_lambda_and_gamma() {
    let d = disc(16, 2, false);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    assert_eq!(aux.dim(), 12);
    for b in &aux.blocks {
        assert!(aux.lambda_min_excluded <= b.eigenvalues[b.ell]);
        assert!(aux.gamma >= b.eigenvalues[b.ell - 1]);
    }
    assert!(aux.lambda_min_excluded > 0.0);
}

#[test]
fn one_mode_on_interior_block_is_rejected() {
    let d = disc(16, 4, false);
    match build_aux_space(&d, &ModeCount::Uniform(1)) {
        Err(Error::ZeroLambda { index: 2, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn projector_examples() {
    let d = disc(16, 4, true);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = d.space.n_u();
    let s = &d.weighted_mass;
    for _ in 0..5 {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = aux.project_coefficients(&v);
        for (i, b) in aux.blocks.iter().enumerate() {
            let pv = b.combine(&c[aux.block_range(i)]);
            let again = b.coefficients(&pv);
            for (x, y) in again.iter().zip(&c[aux.block_range(i)]) {
                assert!((x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
            let vi = aux.restrict_to_block(&d, i, &v);
            let diff: Vec<f64> = vi.iter().zip(&pv).map(|(a, b)| a - b).collect();
            for j in 0..b.ell {
                assert!(b.s_inner(&diff, &column(&b.modes, j)).abs() <= 1e-10 * (1.0 + b.s_inner(&vi, &vi).sqrt()));
            }
        }
        // s(πu, v) = s(u, πv) with the block-sum inner product.
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cu = aux.project_coefficients(&u);
        let lhs: f64 = aux.blocks.iter().enumerate().map(|(i, b)| b.s_inner(&b.combine(&cu[aux.block_range(i)]), &aux.restrict_to_block(&d, i, &v))).sum();
        let rhs: f64 = aux.blocks.iter().enumerate().map(|(i, b)| b.s_inner(&aux.restrict_to_block(&d, i, &u), &b.combine(&c[aux.block_range(i)]))).sum();
        assert!((lhs - rhs).abs() <= 1e-9 * (lhs.abs() + rhs.abs()));
        let total: f64 = dot(&v, &s.mul_vec(&v));
        let blocks: f64 = aux.blocks.iter().enumerate().map(|(i, b)| {
            let vi = aux.restrict_to_block(&d, i, &v);
            b.s_inner(&vi, &vi)
        }).sum();
        assert!((total - blocks).abs() <= 1e-10 * total);
    }
    // A mode's own coefficients are a unit vector.
    let b = &aux.blocks[5];
    let c = b.coefficients(&column(&b.modes, 2));
    assert!((c[2] - 1.0).abs() < 1e-10 && c[0].abs() < 1e-10 && c[1].abs() < 1e-10);
    // Fields supported away from block 0 have zero block-0 coefficients.
    let far = d.grid.element_at(3, 3).unwrap();
    let mut v = vec![0.0; n];
    let nf = d.space.n_free_nodes();
    for &node in &aux.blocks[far].nodes {
        let touches0 = d.mesh().cells_around_vnode(node).into_iter().flatten().any(|c| d.grid.element_of_cell(c) == Some(0));
        if !touches0 {
            v[d.space.free_index(node).unwrap()] = 1.0;
            v[nf + d.space.free_index(node).unwrap()] = -2.0;
        }
    }
    let c = aux.project_coefficients(&v);
    assert!(c[aux.block_range(0)].iter().all(|&x| x == 0.0));
}

#[test]
fn spectral_bounds_on_the_auxiliary_space() {
    let d = disc(16, 4, true);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Random elements of V_aux, block by block.
    for _ in 0..50 {
        let c: Vec<f64> = (0..aux.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut a2, mut s2) = (0.0, 0.0);
        for (i, b) in aux.blocks.iter().enumerate() {
            let v = b.combine(&c[aux.block_range(i)]);
            a2 += b.a_inner(&v, &v);
            s2 += b.s_inner(&v, &v);
        }
        assert!(a2.sqrt() <= (1.0 + 1e-8) * aux.gamma.sqrt() * s2.sqrt());
    }
    // Random fine fields with π v = 0.
    let pi = aux.pi.to_dense();
    let gram = (&pi * pi.transpose()).cholesky().unwrap();
    let n = d.space.n_u();
    for _ in 0..50 {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let v = &v - pi.transpose() * gram.solve(&(&pi * &v));
        let v: Vec<f64> = v.iter().copied().collect();
        assert!(aux.project_coefficients(&v).iter().all(|x| x.abs() < 1e-9));
        let a = dot(&v, &d.stiffness.mul_vec(&v)).sqrt();
        let s = dot(&v, &d.weighted_mass.mul_vec(&v)).sqrt();
        assert!(s <= (1.0 + 1e-8) * a / aux.lambda_min_excluded.sqrt(), "{s} {a}");
    }
}

#[test]
fn pressure_space_examples() {
    let d = disc(16, 4, true);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    let qh = build_qh(&d, &aux, PressureConstraint::Relaxed).unwrap();
    assert_eq!(qh.dim(), aux.dim());
    for b in &qh.blocks {
        assert!(b.zeta.windows(2).all(|w| w[0] <= w[1]));
        for j in 0..b.zeta.len() {
            let mean: f64 = b.weights.iter().zip(b.modes.column(j).iter()).map(|(w, q)| w * q).sum();
            assert!(mean.abs() <= 1e-10);
        }
    }
    for i in 0..d.grid.len() {
        let (qr, svd) = constraint_space_dims(&d, &aux, i);
        assert_eq!(qr, svd, "block {i}");
        match local_pressure_eigenbasis(&d, &aux, i, 3, PressureConstraint::Strict) {
            Err(Error::EmptyConstraintSpace { dim, required: 3, .. }) => assert_eq!(dim, qr),
            Ok(b) => {
                assert!(qr >= 3);
                assert!(b.constraint_residual <= 1e-8);
            }
            Err(e) => panic!("{e:?}"),
        }
    }
}

#[test]
fn eigen_report_has_header_and_summary() {
    let d = disc(8, 2, false);
    let aux = build_aux_space(&d, &ModeCount::Uniform(3)).unwrap();
    let qh = build_qh(&d, &aux, PressureConstraint::Relaxed).unwrap();
    let mut buf = Vec::new();
    write_eigen_csv(&d, &aux, Some(&qh), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "block,bx,by,kind,index,value");
    assert_eq!(lines.len(), 1 + 4 * (4 + 3) + 2);
    assert!(lines[lines.len() - 2].contains("Lambda"));
}
