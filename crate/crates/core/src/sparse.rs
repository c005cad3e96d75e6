//! Minimal CSR matrix used for message passing and sparse feature products.

use ndarray::Array2;

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub(crate) struct Csr {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Csr {
    /// Builds a CSR from row-sorted triplets. Triplets must be sorted by
    /// (row, col) and free of duplicates.
    pub fn from_sorted_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Self {
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for &(r, c, v) in triplets {
            debug_assert!(r < n_rows && c < n_cols);
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(dense: &Array2<f64>) -> Self {
        let (n_rows, n_cols) = dense.dim();
        let mut triplets = Vec::new();
        for i in 0..n_rows {
            for j in 0..n_cols {
                let v = dense[[i, j]];
                if v != 0.0 {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_sorted_triplets(n_rows, n_cols, &triplets)
    }

    #[cfg(test)]
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n_cols, rhs.nrows(), "spmm shape mismatch");
        let k = rhs.ncols();
        let mut out = Array2::<f64>::zeros((self.n_rows, k));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for c in 0..k {
                    out[[i, c]] += v * rhs[[j, c]];
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(self.n_rows, rhs.nrows(), "spmm shape mismatch");
        let k = rhs.ncols();
        let mut out = Array2::<f64>::zeros((self.n_cols, k));
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                for c in 0..k {
                    out[[j, c]] += v * rhs[[i, c]];
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matches_dense_products() {
        let dense = array![[1.0, 0.0, 2.0], [0.0, 0.0, 0.0], [0.0, 3.0, 4.0]];
        let csr = Csr::from_dense(&dense);
        assert_eq!(csr.nnz(), 4);
        let rhs = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let got = csr.matmul(&rhs);
        let want = dense.dot(&rhs);
        assert_eq!(got, want);
        let got_t = csr.t_matmul(&rhs);
        let want_t = dense.t().dot(&rhs);
        assert_eq!(got_t, want_t);
    }
}
