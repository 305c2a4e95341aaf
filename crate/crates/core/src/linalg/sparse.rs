use nalgebra::DMatrix;
use std::io::Write;

/// Compressed sparse row matrix of `f64`.
///
/// Column indices within a row are strictly increasing and no explicit
/// zeros are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed on build.
#[derive(Clone, Debug)]
pub struct TripletBuilder {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        TripletBuilder { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    pub fn extend(&mut self, other: TripletBuilder) {
        debug_assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        self.entries.extend(other.entries);
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.nrows, self.ncols, self.entries)
    }
}

impl CsrMatrix {
    /// Builds a matrix from triplets, summing duplicates in insertion order
    /// and dropping entries that sum to exactly zero.
    pub fn from_triplets(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        // Stable sort keeps the summation order deterministic.
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len());
        let mut it = entries.into_iter().peekable();
        let mut row_counts = vec![0usize; nrows];
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                indices.push(c);
                data.push(v);
                row_counts[r] += 1;
            }
        }
        for r in 0..nrows {
            indptr[r + 1] = indptr[r] + row_counts[r];
        }
        CsrMatrix { nrows, ncols, indptr, indices, data }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = TripletBuilder::new(m.nrows(), m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                t.push(i, j, m[(i, j)]);
            }
        }
        t.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[s..e], &self.data[s..e])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            *yi = c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum();
        }
    }

    /// `y = Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                y[j] += a * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                let p = next[j];
                indices[p] = i;
                data[p] = a;
                next[j] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, indptr, indices, data }
    }

    /// Submatrix `A[rows, cols]` with the given index lists (output order follows them).
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (k, &j) in cols.iter().enumerate() {
            col_map[j] = k;
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut buf: Vec<(usize, f64)> = Vec::new();
        for &i in rows {
            buf.clear();
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                let k = col_map[j];
                if k != usize::MAX {
                    buf.push((k, a));
                }
            }
            buf.sort_unstable_by_key(|e| e.0);
            for &(k, a) in &buf {
                indices.push(k);
                data.push(a);
            }
            indptr.push(indices.len());
        }
        CsrMatrix { nrows: rows.len(), ncols: cols.len(), indptr, indices, data }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let max = self.max_abs().max(f64::MIN_POSITIVE);
        let mut defect: f64 = 0.0;
        for (i, j, a) in self.triplets() {
            defect = defect.max((a - t.get(i, j)).abs());
        }
        for (i, j, a) in t.triplets() {
            defect = defect.max((a - self.get(i, j)).abs());
        }
        defect / max
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|i| self.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, a) in self.triplets() {
            m[(i, j)] = a;
        }
        m
    }

    /// Writes the matrix in MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, a) in self.triplets() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, a)?;
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
