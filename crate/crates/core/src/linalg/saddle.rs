//! Direct solvers for SPD and symmetric saddle-point systems.
//!
//! A saddle system
//!
//! ```text
//! [ A + ΠᵀΠ   Bᵀ ] [u]   [f]
//! [ B         0  ] [p] = [g]      (plus optional mean rows mᵀ p = 0)
//! ```
//!
//! is factorized in the augmented quasi-definite form
//!
//! ```text
//! [ A   Πᵀ   Bᵀ  ]
//! [ Π   -I   0   ]
//! [ B   0    -εI ]
//! ```
//!
//! so the low-rank term never densifies `A`. The `-εI` regularization is
//! removed by iterative refinement against the exact operator. Mean rows are
//! supported on pressure sets whose indicator spans a null direction of `Bᵀ`;
//! their multipliers follow from compatibility and the pressure is shifted
//! afterwards.

use super::ldlt::LdlFactor;
use super::ordering::reverse_cuthill_mckee;
use super::sparse::{norm2, CsrMatrix, TripletBuilder};
use crate::error::{Error, Result};

/// Default relative tolerance for direct solves.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_REFINEMENT_STEPS: usize = 12;
const REGULARIZATION: f64 = 1e-10;

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let perm = reverse_cuthill_mckee(a);
    let factor = SpdFactor::new(a, Some(&perm))?;
    factor.solve_refined(a, b, tol)
}

/// Cholesky-type factorization of an SPD matrix.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    ldl: LdlFactor,
}

impl SpdFactor {
    pub fn new(a: &CsrMatrix, perm: Option<&[usize]>) -> Result<Self> {
        let ldl = LdlFactor::new(a, perm).map_err(|z| Error::NotSpd { row: z.original, pivot: 0.0 })?;
        if let Some((k, &d)) = ldl.pivots().iter().enumerate().find(|(_, &d)| d <= 0.0) {
            return Err(Error::NotSpd { row: ldl.perm()[k], pivot: d });
        }
        Ok(SpdFactor { ldl })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.ldl.solve(b)
    }

    /// Solve with iterative refinement until `‖Ax − b‖ ≤ tol·‖b‖`.
    pub fn solve_refined(&self, a: &CsrMatrix, b: &[f64], tol: f64) -> Result<Vec<f64>> {
        let bnorm = norm2(b);
        let mut x = self.ldl.solve(b);
        if bnorm == 0.0 {
            return Ok(x);
        }
        for _ in 0..MAX_REFINEMENT_STEPS {
            let r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ax)| bi - ax).collect();
            let rn = norm2(&r);
            if rn <= tol * bnorm {
                return Ok(x);
            }
            let dx = self.ldl.solve(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        let r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ax)| bi - ax).collect();
        let rn = norm2(&r);
        if rn <= tol * bnorm {
            Ok(x)
        } else {
            Err(Error::NotSpd { row: usize::MAX, pivot: rn / bnorm })
        }
    }
}

/// A zero-mean constraint `Σ_k w_k p_k = 0` on a set of pressure unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanRow {
    pub weights: Vec<(usize, f64)>,
}

/// The matrices of a symmetric saddle-point problem.
#[derive(Clone, Debug)]
pub struct SaddleOperator {
    /// `n_u × n_u`, symmetric positive definite.
    pub a: CsrMatrix,
    /// `n_p × n_u` constraint matrix.
    pub b: CsrMatrix,
    /// Optional `r × n_u` factor of a low-rank update `ΠᵀΠ` added to `A`.
    pub low_rank: Option<CsrMatrix>,
    pub mean_rows: Vec<MeanRow>,
    /// Elimination order (`perm[new] = old`) over `[u; p]`, with the
    /// low-rank unknowns appended last, or over all of `[u; p; w]`.
    pub ordering: Option<Vec<usize>>,
}

/// Right-hand side and operator together.
#[derive(Clone, Debug)]
pub struct SaddleSystem {
    pub operator: SaddleOperator,
    pub rhs_u: Vec<f64>,
    pub rhs_p: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    /// One multiplier per mean row.
    pub mean_multipliers: Vec<f64>,
    /// Final block residual relative to `1 + ‖rhs‖`.
    pub residual: f64,
}

/// Factorized saddle operator, reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct SaddleFactor {
    op: SaddleOperator,
    ldl: LdlFactor,
    eps: f64,
    n_u: usize,
    n_p: usize,
    n_r: usize,
    mean_supports: Vec<Vec<usize>>,
}

impl SaddleOperator {
    pub fn n_u(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.b.nrows()
    }

    /// Applies the exact (unregularized, unaugmented) operator.
    pub fn apply(&self, u: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut ru = self.a.mul_vec(u);
        if let Some(pi) = &self.low_rank {
            let w = pi.mul_vec(u);
            for (r, v) in ru.iter_mut().zip(pi.tr_mul_vec(&w)) {
                *r += v;
            }
        }
        for (r, v) in ru.iter_mut().zip(self.b.tr_mul_vec(p)) {
            *r += v;
        }
        let rp = self.b.mul_vec(u);
        (ru, rp)
    }

    pub fn factorize(&self) -> Result<SaddleFactor> {
        SaddleFactor::new(self.clone())
    }
}

impl SaddleFactor {
    fn new(op: SaddleOperator) -> Result<Self> {
        let n_u = op.n_u();
        let n_p = op.n_p();
        if op.a.ncols() != n_u || op.b.ncols() != n_u {
            return Err(Error::InvalidInput("saddle blocks have inconsistent sizes".into()));
        }
        let n_r = op.low_rank.as_ref().map_or(0, |pi| pi.nrows());
        if let Some(pi) = &op.low_rank {
            if pi.ncols() != n_u {
                return Err(Error::InvalidInput("low-rank factor has wrong width".into()));
            }
        }

        // Regularization scaled to the diagonal of B diag(A)⁻¹ Bᵀ.
        let mut adiag = op.a.diagonal();
        if let Some(pi) = &op.low_rank {
            for (_, j, v) in pi.triplets() {
                adiag[j] += v * v;
            }
        }
        let mut schur_scale: f64 = 0.0;
        for i in 0..n_p {
            let (c, v) = op.b.row(i);
            let s: f64 = c.iter().zip(v).map(|(&j, &x)| x * x / adiag[j].abs().max(f64::MIN_POSITIVE)).sum();
            schur_scale = schur_scale.max(s);
        }
        let eps = REGULARIZATION * if schur_scale > 0.0 { schur_scale } else { 1.0 };

        let n = n_u + n_p + n_r;
        let mut t = TripletBuilder::with_capacity(n, n, op.a.nnz() + 2 * op.b.nnz() + n);
        for (i, j, v) in op.a.triplets() {
            t.push(i, j, v);
        }
        for (i, j, v) in op.b.triplets() {
            t.push(n_u + i, j, v);
            t.push(j, n_u + i, v);
        }
        for i in 0..n_p {
            t.push(n_u + i, n_u + i, -eps);
        }
        if let Some(pi) = &op.low_rank {
            for (i, j, v) in pi.triplets() {
                t.push(n_u + n_p + i, j, v);
                t.push(j, n_u + n_p + i, v);
            }
            for i in 0..n_r {
                t.push(n_u + n_p + i, n_u + n_p + i, -1.0);
            }
        }
        let kkt = t.build();

        let perm: Vec<usize> = match &op.ordering {
            Some(order) => {
                if order.len() == n {
                    order.clone()
                } else if order.len() == n_u + n_p {
                    order.iter().copied().chain(n_u + n_p..n).collect()
                } else {
                    return Err(Error::InvalidInput("ordering must cover [u; p] or [u; p; w]".into()));
                }
            }
            None => {
                let mut order = reverse_cuthill_mckee(&op.a);
                order.extend(n_u..n);
                order
            }
        };
        let ldl = LdlFactor::new(&kkt, Some(&perm)).map_err(|_| Error::SingularSystem {
            rank_deficiency: 1,
            residual: f64::INFINITY,
        })?;

        let mut mean_supports = Vec::with_capacity(op.mean_rows.len());
        let bt_norm = op.b.norm_inf().max(f64::MIN_POSITIVE);
        for row in &op.mean_rows {
            let support: Vec<usize> = row.weights.iter().map(|&(k, _)| k).collect();
            let mut indicator = vec![0.0; n_p];
            for &k in &support {
                indicator[k] = 1.0;
            }
            let defect = op.b.tr_mul_vec(&indicator).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if defect > 1e-10 * bt_norm {
                return Err(Error::InvalidInput(format!(
                    "mean row support is not a null direction of Bᵀ (defect {defect:e})"
                )));
            }
            mean_supports.push(support);
        }

        Ok(SaddleFactor { op, ldl, eps, n_u, n_p, n_r, mean_supports })
    }

    pub fn operator(&self) -> &SaddleOperator {
        &self.op
    }

    pub fn regularization(&self) -> f64 {
        self.eps
    }

    pub fn nnz_factor(&self) -> usize {
        self.ldl.nnz_l()
    }

    /// Pressure pivots whose magnitude is within a small multiple of the
    /// regularization; these flag null directions of `Bᵀ`.
    pub fn estimated_null_pressure_modes(&self) -> usize {
        let perm = self.ldl.perm();
        self.ldl
            .pivots()
            .iter()
            .zip(perm)
            .filter(|&(&d, &old)| old >= self.n_u && old < self.n_u + self.n_p && d.abs() < 1e3 * self.eps)
            .count()
    }

    fn solve_regularized(&self, ru: &[f64], rp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut rhs = Vec::with_capacity(self.n_u + self.n_p + self.n_r);
        rhs.extend_from_slice(ru);
        rhs.extend_from_slice(rp);
        rhs.resize(self.n_u + self.n_p + self.n_r, 0.0);
        let x = self.ldl.solve(&rhs);
        (x[..self.n_u].to_vec(), x[self.n_u..self.n_u + self.n_p].to_vec())
    }

    /// Solves for one right-hand side; the block residual must reach
    /// `tol·(1 + ‖rhs‖)`.
    pub fn solve(&self, rhs_u: &[f64], rhs_p: &[f64], tol: f64) -> Result<SaddleSolution> {
        assert_eq!(rhs_u.len(), self.n_u);
        assert_eq!(rhs_p.len(), self.n_p);
        let mut g = rhs_p.to_vec();
        let mut multipliers = Vec::with_capacity(self.mean_supports.len());
        for (row, support) in self.op.mean_rows.iter().zip(&self.mean_supports) {
            let num: f64 = support.iter().map(|&k| g[k]).sum();
            let den: f64 = row.weights.iter().map(|&(_, w)| w).sum();
            let lambda = num / den;
            for &(k, w) in &row.weights {
                g[k] -= lambda * w;
            }
            multipliers.push(lambda);
        }

        let scale = 1.0 + (norm2(rhs_u).powi(2) + norm2(rhs_p).powi(2)).sqrt();
        let (mut u, mut p) = self.solve_regularized(rhs_u, &g);
        let mut residual = f64::INFINITY;
        for step in 0..=MAX_REFINEMENT_STEPS {
            let (au, ap) = self.op.apply(&u, &p);
            let ru: Vec<f64> = rhs_u.iter().zip(&au).map(|(b, a)| b - a).collect();
            let rp: Vec<f64> = g.iter().zip(&ap).map(|(b, a)| b - a).collect();
            residual = (norm2(&ru).powi(2) + norm2(&rp).powi(2)).sqrt() / scale;
            if residual <= tol * 1e-2 || step == MAX_REFINEMENT_STEPS {
                break;
            }
            let (du, dp) = self.solve_regularized(&ru, &rp);
            for (x, d) in u.iter_mut().zip(du) {
                *x += d;
            }
            for (x, d) in p.iter_mut().zip(dp) {
                *x += d;
            }
        }

        for (row, support) in self.op.mean_rows.iter().zip(&self.mean_supports) {
            let mean: f64 = row.weights.iter().map(|&(k, w)| w * p[k]).sum();
            let den: f64 = row.weights.iter().map(|&(_, w)| w).sum();
            let shift = mean / den;
            for &k in support {
                p[k] -= shift;
            }
        }

        // Full residual including the mean rows.
        let (au, ap) = self.op.apply(&u, &p);
        let mut ru: Vec<f64> = rhs_u.iter().zip(&au).map(|(b, a)| b - a).collect();
        let mut rp: Vec<f64> = rhs_p.iter().zip(&ap).map(|(b, a)| b - a).collect();
        for (row, &lambda) in self.op.mean_rows.iter().zip(&multipliers) {
            for &(k, w) in &row.weights {
                rp[k] -= lambda * w;
            }
        }
        let mut rm2 = 0.0;
        for row in &self.op.mean_rows {
            let m: f64 = row.weights.iter().map(|&(k, w)| w * p[k]).sum();
            rm2 += m * m;
        }
        ru.append(&mut rp);
        let final_residual = (norm2(&ru).powi(2) + rm2).sqrt() / scale;
        residual = residual.max(final_residual);
        if !(residual <= tol) {
            let deficiency = self.estimated_null_pressure_modes().saturating_sub(self.mean_supports.len());
            return Err(Error::SingularSystem { rank_deficiency: deficiency.max(1), residual });
        }
        Ok(SaddleSolution { u, p, mean_multipliers: multipliers, residual })
    }
}

/// One-shot factorize-and-solve.
pub fn solve_saddle(sys: &SaddleSystem, tol: f64) -> Result<SaddleSolution> {
    sys.operator.factorize()?.solve(&sys.rhs_u, &sys.rhs_p, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        m.transpose() * &m + DMatrix::identity(n, n)
    }

    #[test]
    fn spd_identity_and_diagonal() {
        let b = vec![1.0, -2.0, 3.0];
        assert_eq!(solve_spd(&CsrMatrix::identity(3), &b, DEFAULT_TOL).unwrap(), b);
        let mut d = CsrMatrix::identity(3);
        d.scale(2.0);
        let x = solve_spd(&d, &b, DEFAULT_TOL).unwrap();
        assert_eq!(x, vec![0.5, -1.0, 1.5]);
    }

    #[test]
    fn spd_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(20, &mut rng);
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sa = CsrMatrix::from_dense(&a);
        let x = solve_spd(&sa, &b, DEFAULT_TOL).unwrap();
        let r: Vec<f64> = sa.mul_vec(&x).iter().zip(&b).map(|(ax, bi)| ax - bi).collect();
        assert!(norm2(&r) <= 1e-10 * norm2(&b));
    }

    #[test]
    fn indefinite_matrix_is_not_spd() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(solve_spd(&a, &[1.0, 1.0], DEFAULT_TOL), Err(Error::NotSpd { .. })));
    }

    fn op(a: CsrMatrix, b: CsrMatrix) -> SaddleOperator {
        SaddleOperator { a, b, low_rank: None, mean_rows: vec![], ordering: None }
    }

    #[test]
    fn two_by_two_hand_solve() {
        // u + Bᵀp = (1, 1), u1 + u2 = 0  ⇒  p = 1, u = 0.
        let sys = SaddleSystem {
            operator: op(CsrMatrix::identity(2), CsrMatrix::from_triplets(1, 2, vec![(0, 0, 1.0), (0, 1, 1.0)])),
            rhs_u: vec![1.0, 1.0],
            rhs_p: vec![0.0],
        };
        let s = solve_saddle(&sys, DEFAULT_TOL).unwrap();
        assert!(s.u.iter().all(|v| v.abs() < 1e-14));
        assert!((s.p[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let sys = SaddleSystem {
            operator: op(CsrMatrix::identity(3), CsrMatrix::from_triplets(1, 3, vec![(0, 0, 1.0), (0, 2, 2.0)])),
            rhs_u: vec![0.0; 3],
            rhs_p: vec![0.0],
        };
        let s = solve_saddle(&sys, DEFAULT_TOL).unwrap();
        assert!(s.u.iter().chain(&s.p).all(|&v| v == 0.0));
    }

    fn random_saddle(rng: &mut ChaCha8Rng, with_low_rank: bool) -> (SaddleOperator, Vec<f64>, Vec<f64>) {
        let (nu, np) = (30, 10);
        let a = random_spd(nu, rng);
        let b = DMatrix::from_fn(np, nu, |_, _| rng.gen_range(-1.0..1.0));
        let low_rank = with_low_rank.then(|| {
            CsrMatrix::from_dense(&DMatrix::from_fn(4, nu, |_, _| rng.gen_range(-1.0..1.0)))
        });
        let op = SaddleOperator {
            a: CsrMatrix::from_dense(&a),
            b: CsrMatrix::from_dense(&b),
            low_rank,
            mean_rows: vec![],
            ordering: None,
        };
        let u: Vec<f64> = (0..nu).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..np).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (op, u, p)
    }

    #[test]
    fn random_well_posed_system_reproduces_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for low_rank in [false, true] {
            let (op, u_star, p_star) = random_saddle(&mut rng, low_rank);
            let (ru, rp) = op.apply(&u_star, &p_star);
            let s = op.factorize().unwrap().solve(&ru, &rp, DEFAULT_TOL).unwrap();
            assert!(s.residual <= 1e-10);
            let eu: f64 = s.u.iter().zip(&u_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let ep: f64 = s.p.iter().zip(&p_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(eu <= 1e-9 * norm2(&u_star), "u error {eu}");
            assert!(ep <= 1e-9 * norm2(&p_star), "p error {ep}");
        }
    }

    #[test]
    fn mean_row_fixes_constant_pressure() {
        // 1D flow: u_i - u_{i-1} constraints with both ends fixed make the
        // constant pressure a null direction of Bᵀ.
        let n = 5;
        let a = CsrMatrix::identity(n);
        let mut t = Vec::new();
        for i in 0..=n {
            if i < n {
                t.push((i, i, 1.0));
            }
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
        }
        let b = CsrMatrix::from_triplets(n + 1, n, t);
        let operator = SaddleOperator {
            a,
            b,
            low_rank: None,
            mean_rows: vec![MeanRow { weights: (0..=n).map(|k| (k, 1.0)).collect() }],
            ordering: None,
        };
        let rhs_u: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let s = operator.factorize().unwrap().solve(&rhs_u, &vec![0.0; n + 1], DEFAULT_TOL).unwrap();
        assert!(s.p.iter().sum::<f64>().abs() < 1e-12);
        assert!(s.u.iter().all(|v| v.abs() < 1e-12));
        assert!(s.mean_multipliers[0].abs() < 1e-14);
    }

    #[test]
    fn singular_constraint_is_reported() {
        // Duplicate constraint rows: B is rank deficient and no mean row covers it.
        let b = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 1.0)]);
        let sys = SaddleSystem { operator: op(CsrMatrix::identity(2), b), rhs_u: vec![1.0, 0.0], rhs_p: vec![0.0, 1.0] };
        assert!(matches!(solve_saddle(&sys, DEFAULT_TOL), Err(Error::SingularSystem { .. })));
    }
}
