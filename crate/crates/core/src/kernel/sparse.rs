//! Constant sparse operators in CSR form.

use super::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicates are summed;
    /// columns within a row end up ascending.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; rows + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols_buf = vec![0usize; triplets.len()];
        let mut vals_buf = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let slot = next[r];
            cols_buf[slot] = c;
            vals_buf[slot] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for r in 0..rows {
            let mut row: Vec<(usize, f64)> = (counts[r]..counts[r + 1])
                .map(|i| (cols_buf[i], vals_buf[i]))
                .collect();
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Non-zeros of one row as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |i| (self.indices[i], self.values[i]))
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                triplets.push((c, r, v));
            }
        }
        Self::from_triplets(self.cols, self.rows, &triplets)
    }

    /// `self · dense`.
    pub fn mul_dense(&self, dense: &Tensor) -> Tensor {
        debug_assert_eq!(self.cols, dense.rows());
        let width = dense.cols();
        let mut out = Tensor::zeros(self.rows, width);
        for r in 0..self.rows {
            let out_row = out.row_mut(r);
            for i in self.indptr[r]..self.indptr[r + 1] {
                let v = self.values[i];
                for (o, x) in out_row.iter_mut().zip(dense.row(self.indices[i])) {
                    *o += v * x;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Tensor {
        let mut out = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                out.set(r, c, out.get(r, c) + v);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_merge_and_sort() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, 3.0)]);
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(0, 2.0), (2, 1.5)]);
        assert_eq!(m.nnz(), 3);
        let d = m.to_dense();
        assert_eq!(d.get(0, 2), 1.5);
        assert_eq!(m.transpose().to_dense(), d.transpose());
    }

    #[test]
    fn mul_dense_matches_dense_product() {
        let m = SparseMatrix::from_triplets(3, 3, &[(0, 1, 0.5), (1, 0, 2.0), (1, 2, -1.0)]);
        let x = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let want = m.to_dense().matmul(&x).unwrap();
        assert!(m.mul_dense(&x).max_abs_diff(&want) < 1e-15);
    }
}
