//! Sparse `L D Lᵀ` factorization with static pivoting (up-looking, row by row).
//!
//! Suitable for symmetric positive definite and symmetric quasi-definite
//! matrices, which admit the factorization for every symmetric permutation.

use super::ordering::is_permutation;
use super::sparse::CsrMatrix;

const NONE: usize = usize::MAX;

#[derive(Clone, Debug)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    diag: Vec<f64>,
}

/// A zero pivot at (permuted) step `row`, original index `original`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroPivot {
    pub row: usize,
    pub original: usize,
}

impl LdlFactor {
    /// Factorizes `P A Pᵀ = L D Lᵀ` where `perm[new] = old`. Only the pattern
    /// and values of the lower triangle of the permuted matrix are read, so
    /// `a` must be stored with both triangles (it is assumed symmetric).
    pub fn new(a: &CsrMatrix, perm: Option<&[usize]>) -> Result<Self, ZeroPivot> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LDLᵀ needs a square matrix");
        let perm: Vec<usize> = match perm {
            Some(p) => {
                assert!(is_permutation(p, n), "invalid permutation");
                p.to_vec()
            }
            None => (0..n).collect(),
        };
        let mut pinv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }

        // Row k of the permuted matrix, restricted to columns <= k, sorted.
        let permuted_row = |k: usize, buf: &mut Vec<(usize, f64)>| {
            buf.clear();
            let (cols, vals) = a.row(perm[k]);
            for (&j, &v) in cols.iter().zip(vals) {
                let jj = pinv[j];
                if jj <= k {
                    buf.push((jj, v));
                }
            }
        };

        // Symbolic: elimination tree and column counts.
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut buf = Vec::new();
        for k in 0..n {
            flag[k] = k;
            permuted_row(k, &mut buf);
            for &(mut i, _) in buf.iter() {
                while i < k && flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + lnz[k];
        }
        let total = col_ptr[n];
        let mut row_idx = vec![0usize; total];
        let mut values = vec![0.0f64; total];
        let mut diag = vec![0.0f64; n];

        // Numeric.
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        flag.fill(NONE);
        lnz.fill(0);
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            permuted_row(k, &mut buf);
            for &(i0, v) in buf.iter() {
                y[i0] += v;
                let mut i = i0;
                let mut len = 0;
                while i < k && flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            let mut dk = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = col_ptr[i];
                let end = start + lnz[i];
                for p in start..end {
                    y[row_idx[p]] -= values[p] * yi;
                }
                let lki = yi / diag[i];
                dk -= lki * yi;
                row_idx[end] = k;
                values[end] = lki;
                lnz[i] += 1;
            }
            if dk == 0.0 || !dk.is_finite() {
                return Err(ZeroPivot { row: k, original: perm[k] });
            }
            diag[k] = dk;
        }
        Ok(LdlFactor { n, perm, col_ptr, row_idx, values, diag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz_l(&self) -> usize {
        self.values.len()
    }

    /// Pivots `D` in permuted order.
    pub fn pivots(&self) -> &[f64] {
        &self.diag
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                    x[self.row_idx[p]] -= self.values[p] * xj;
                }
            }
        }
        for (xj, d) in x.iter_mut().zip(&self.diag) {
            *xj /= d;
        }
        for j in (0..self.n).rev() {
            let mut s = x[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                s -= self.values[p] * x[self.row_idx[p]];
            }
            x[j] = s;
        }
        let mut out = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = x[new];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::norm2;

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn solves_tridiagonal_under_any_permutation() {
        let a = laplacian_1d(12);
        let b: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let reversed: Vec<usize> = (0..12).rev().collect();
        let scrambled: Vec<usize> = (0..12).map(|i| (i * 5) % 12).collect();
        for perm in [None, Some(reversed.as_slice()), Some(scrambled.as_slice())] {
            let f = LdlFactor::new(&a, perm).unwrap();
            let x = f.solve(&b);
            let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(ax, bi)| ax - bi).collect();
            assert!(norm2(&r) < 1e-12);
            assert!(f.pivots().iter().all(|&d| d > 0.0));
        }
    }

    #[test]
    fn quasi_definite_pivots_carry_signs() {
        // [[2, 1], [1, -1]]: one positive and one negative pivot.
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0)]);
        let f = LdlFactor::new(&a, None).unwrap();
        assert!(f.pivots()[0] > 0.0 && f.pivots()[1] < 0.0);
        let x = f.solve(&[3.0, 0.0]);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 1, 1.0), (1, 0, 1.0)]);
        assert_eq!(LdlFactor::new(&a, None).unwrap_err(), ZeroPivot { row: 0, original: 0 });
    }
}
