//! Dense kernels: symmetric generalized eigenproblems, null spaces, ranks.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Default relative rank tolerance.
pub const RANK_TOL: f64 = 1e-10;

/// Smallest eigenpairs of a symmetric pencil `A x = λ S x`.
#[derive(Clone, Debug)]
pub struct GeneralizedEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// One S-orthonormal column per eigenvalue.
    pub vectors: DMatrix<f64>,
    /// Dimension of the S-positive subspace actually solved on.
    pub rank: usize,
}

fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &k) in idx.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(k));
    }
    (values, vectors)
}

/// Computes the `m` smallest eigenpairs of `A x = λ S x`.
///
/// `S` is reduced by Cholesky when it is safely positive definite; otherwise
/// the pencil is solved on the span of the eigenvectors of `S` whose
/// eigenvalues exceed `rank_tol · max eig(S)`.
pub fn eig_sym_generalized(a: &DMatrix<f64>, s: &DMatrix<f64>, m: usize, rank_tol: f64) -> Result<GeneralizedEigen> {
    let n = a.nrows();
    if a.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::InvalidInput("pencil matrices must be square and equal-sized".into()));
    }
    if m > n {
        return Err(Error::DegeneratePencil(format!("requested {m} eigenpairs of a size-{n} pencil")));
    }
    let s_sym = (s + s.transpose()) * 0.5;

    // T maps reduced coordinates to full ones with Tᵀ S T = I.
    let mut t: Option<DMatrix<f64>> = None;
    if let Some(chol) = s_sym.clone().cholesky() {
        let l = chol.l();
        let dmax = l.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let dmin = l.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
        if n == 0 || dmin * dmin > rank_tol * dmax * dmax {
            t = l.solve_lower_triangular(&DMatrix::identity(n, n)).map(|li| li.transpose());
        }
    }
    let t = match t {
        Some(t) => t,
        None => {
            let (d, v) = sorted_symmetric_eigen(s_sym);
            let dmax = d.iter().fold(0.0f64, |acc, x| acc.max(*x));
            let keep: Vec<usize> = (0..n).filter(|&k| d[k] > rank_tol * dmax).collect();
            if keep.len() < m {
                return Err(Error::DegeneratePencil(format!(
                    "weight matrix has rank {} but {m} eigenpairs were requested",
                    keep.len()
                )));
            }
            let mut t = DMatrix::zeros(n, keep.len());
            for (c, &k) in keep.iter().enumerate() {
                t.set_column(c, &(v.column(k) / d[k].sqrt()));
            }
            t
        }
    };
    let reduced = t.transpose() * a * &t;
    let (values, y) = sorted_symmetric_eigen(reduced);
    let rank = t.ncols();
    let vectors = &t * y.columns(0, m);
    Ok(GeneralizedEigen { values: values[..m].to_vec(), vectors, rank })
}

/// Orthonormal basis of `{x : C x = 0}` as matrix columns.
///
/// Singular values at or below `rank_tol · σ_max` count as zero.
pub fn null_space_basis(c: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let n = c.ncols();
    let (sv, v) = right_singular_system(c);
    let smax = sv.iter().fold(0.0f64, |acc, x| acc.max(*x));
    let null: Vec<usize> = (0..n).filter(|&k| sv[k] <= rank_tol * smax || smax == 0.0).collect();
    let mut basis = DMatrix::zeros(n, null.len());
    for (col, &k) in null.iter().enumerate() {
        basis.set_column(col, &v.column(k));
    }
    basis
}

/// Singular values and the full set of right singular vectors of `c`
/// (`n` of each; missing singular values are zero).
fn right_singular_system(c: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (m, n) = c.shape();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    // Tall matrices are compressed to R from QR; wide ones padded to square.
    let square = if m > n {
        c.clone().qr().r()
    } else {
        let mut p = DMatrix::zeros(n, n);
        p.rows_mut(0, m).copy_from(c);
        p
    };
    let svd = square.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    (svd.singular_values.iter().copied().collect(), vt.transpose())
}

/// Numerical rank from column-pivoted QR: diagonal entries of `R` above
/// `rank_tol · |R_00|`.
pub fn qr_rank(c: &DMatrix<f64>, rank_tol: f64) -> usize {
    if c.is_empty() {
        return 0;
    }
    let qr = c.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let d: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let top = d.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    d.iter().filter(|&&x| x > rank_tol * top).count()
}

/// Numerical rank from singular values above `rank_tol · σ_max`.
pub fn svd_rank(c: &DMatrix<f64>, rank_tol: f64) -> usize {
    if c.is_empty() {
        return 0;
    }
    let sv = c.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&x| x > rank_tol * smax).count()
}

/// Smallest singular value and its right singular vector.
pub fn smallest_singular_pair(c: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let (sv, v) = right_singular_system(c);
    let k = (0..sv.len()).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap_or(0);
    (sv.get(k).copied().unwrap_or(0.0), v.column(k).into_owned())
}

/// Minimum-norm least-squares solution of `M x = r`.
pub fn min_norm_lstsq(m: &DMatrix<f64>, r: &DVector<f64>, rank_tol: f64) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(r, rank_tol * smax).expect("both singular factors computed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gram_error(x: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
        let g = x.transpose() * s * x;
        (g - DMatrix::identity(x.ncols(), x.ncols())).amax()
    }

    #[test]
    fn diagonal_pencil() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let e = eig_sym_generalized(&a, &DMatrix::identity(3, 3), 2, RANK_TOL).unwrap();
        assert_eq!(e.values.len(), 2);
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] - 2.0).abs() < 1e-14);
        assert!((e.vectors[(1, 0)].abs() - 1.0).abs() < 1e-14);
        assert!((e.vectors[(2, 1)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_stiffness_still_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let s = m.transpose() * &m + DMatrix::identity(4, 4);
        let e = eig_sym_generalized(&DMatrix::zeros(4, 4), &s, 4, RANK_TOL).unwrap();
        assert!(e.values.iter().all(|v| v.abs() < 1e-12));
        assert!(gram_error(&e.vectors, &s) < 1e-10);
    }

    #[test]
    fn two_by_two_hand_pencil() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let e = eig_sym_generalized(&a, &s, 2, RANK_TOL).unwrap();
        assert!(e.values[0].abs() < 1e-14 && (e.values[1] - 2.0).abs() < 1e-14);
        assert!(e.vectors[(0, 0)].abs() < 1e-14);
        assert!((e.vectors[(1, 0)].abs() - 0.5f64.sqrt()).abs() < 1e-14);
        assert!((e.vectors[(0, 1)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn semidefinite_weight_uses_positive_subspace() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 2.0]));
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 1.0]));
        let e = eig_sym_generalized(&a, &s, 2, RANK_TOL).unwrap();
        assert_eq!(e.rank, 2);
        assert!((e.values[0] - 1.0).abs() < 1e-14 && (e.values[1] - 2.0).abs() < 1e-14);
        assert!(matches!(eig_sym_generalized(&a, &s, 3, RANK_TOL), Err(Error::DegeneratePencil(_))));
    }

    #[test]
    fn random_pencil_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 15;
        let ma = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let ms = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = ma.transpose() * &ma;
        let s = ms.transpose() * &ms + DMatrix::identity(n, n);
        let e = eig_sym_generalized(&a, &s, 6, RANK_TOL).unwrap();
        for k in 0..6 {
            let x = e.vectors.column(k);
            let r = &a * x - e.values[k] * (&s * x);
            assert!(r.norm() <= 1e-8 * (a.norm() + e.values[k].abs() * s.norm()));
            if k > 0 {
                assert!(e.values[k] >= e.values[k - 1]);
            }
        }
        assert!(gram_error(&e.vectors, &s) < 1e-10);
    }

    #[test]
    fn null_space_examples() {
        let z = null_space_basis(&DMatrix::zeros(2, 3), RANK_TOL);
        assert_eq!(z.ncols(), 3);
        let one = null_space_basis(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), RANK_TOL);
        assert_eq!(one.ncols(), 1);
        assert!((one[(0, 0)] + one[(1, 0)]).abs() < 1e-15);
        assert!((one.column(0).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_low_rank_null_space_and_rank_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (m, n, r) in [(5, 12, 5), (20, 8, 3), (6, 6, 4)] {
            let f = DMatrix::from_fn(m, r, |_, _| rng.gen_range(-1.0..1.0));
            let g = DMatrix::from_fn(r, n, |_, _| rng.gen_range(-1.0..1.0));
            let c = f * g;
            let z = null_space_basis(&c, RANK_TOL);
            assert_eq!(z.ncols(), n - r);
            assert!((&c * &z).norm() <= RANK_TOL * c.norm() * 10.0);
            assert!(gram_error(&z, &DMatrix::identity(n, n)) < 1e-12);
            assert_eq!(qr_rank(&c, 1e-9), r);
            assert_eq!(svd_rank(&c, 1e-9), r);
        }
    }

    #[test]
    fn least_squares_is_minimum_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = min_norm_lstsq(&m, &DVector::from_vec(vec![2.0, 2.0]), RANK_TOL);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let (s, v) = smallest_singular_pair(&m);
        assert!(s.abs() < 1e-14);
        assert!((v[0] + v[1]).abs() < 1e-14);
    }
}
