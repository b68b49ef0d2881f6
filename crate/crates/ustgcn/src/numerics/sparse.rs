use crate::error::{Error, Result};
use crate::numerics::tensor::DenseTensor;

/// Compressed sparse row matrix with f64 weights.
///
/// Invariants enforced by every constructor:
/// - `row_starts` is nondecreasing, starts at 0, ends at nnz
/// - column indices are strictly increasing within each row and < `n_cols`
/// - no stored zero weights
///
/// Storage is Θ(n_rows + nnz); a dense copy only ever exists inside test
/// oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_starts: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    /// Matrix with no stored entries.
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        SparseMatrix {
            n_rows,
            n_cols,
            row_starts: vec![0; n_rows + 1],
            col_indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_starts: (0..=n).collect(),
            col_indices: (0..n).collect(),
            weights: vec![1.0; n],
        }
    }

    /// Build from (row, col, weight) triplets. Zero weights are dropped;
    /// duplicate coordinates are rejected.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<&(usize, usize, f64)> =
            entries.iter().filter(|(_, _, w)| *w != 0.0).collect();
        sorted.sort_by_key(|(r, c, _)| (*r, *c));
        let mut row_starts = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut weights = Vec::with_capacity(sorted.len());
        let mut prev: Option<(usize, usize)> = None;
        for &&(r, c, w) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidSparse(format!(
                    "entry ({r},{c}) outside {n_rows}x{n_cols}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::InvalidSparse(format!(
                    "non-finite weight {w} at ({r},{c})"
                )));
            }
            if prev == Some((r, c)) {
                return Err(Error::InvalidSparse(format!("duplicate entry ({r},{c})")));
            }
            prev = Some((r, c));
            row_starts[r + 1] += 1;
            col_indices.push(c);
            weights.push(w);
        }
        for r in 0..n_rows {
            row_starts[r + 1] += row_starts[r];
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_starts,
            col_indices,
            weights,
        })
    }

    /// Build from raw CSR arrays, validating every invariant.
    pub fn from_parts(
        n_rows: usize,
        n_cols: usize,
        row_starts: Vec<usize>,
        col_indices: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if row_starts.len() != n_rows + 1 || row_starts[0] != 0 {
            return Err(Error::InvalidSparse("bad row_starts header".into()));
        }
        if *row_starts.last().unwrap() != col_indices.len() || col_indices.len() != weights.len() {
            return Err(Error::InvalidSparse("row_starts/nnz disagreement".into()));
        }
        for r in 0..n_rows {
            let (lo, hi) = (row_starts[r], row_starts[r + 1]);
            if lo > hi {
                return Err(Error::InvalidSparse("row_starts not nondecreasing".into()));
            }
            for k in lo..hi {
                if col_indices[k] >= n_cols {
                    return Err(Error::InvalidSparse(format!(
                        "column {} out of range in row {r}",
                        col_indices[k]
                    )));
                }
                if k > lo && col_indices[k] <= col_indices[k - 1] {
                    return Err(Error::InvalidSparse(format!(
                        "columns not strictly increasing in row {r}"
                    )));
                }
                if weights[k] == 0.0 || !weights[k].is_finite() {
                    return Err(Error::InvalidSparse(format!(
                        "bad stored weight {} in row {r}",
                        weights[k]
                    )));
                }
            }
        }
        Ok(SparseMatrix {
            n_rows,
            n_cols,
            row_starts,
            col_indices,
            weights,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// (column indices, weights) of row r.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_starts[r], self.row_starts[r + 1]);
        (&self.col_indices[lo..hi], &self.weights[lo..hi])
    }

    /// All stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, ws) = self.row(r);
            cols.iter().zip(ws.iter()).map(move |(&c, &w)| (r, c, w))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    /// Bytes held by the three storage arrays; used by the linear-space
    /// accounting checks.
    pub fn storage_bytes(&self) -> usize {
        self.row_starts.len() * std::mem::size_of::<usize>()
            + self.col_indices.len() * std::mem::size_of::<usize>()
            + self.weights.len() * std::mem::size_of::<f64>()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut row_starts = vec![0usize; self.n_cols + 1];
        for &c in &self.col_indices {
            row_starts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            row_starts[c + 1] += row_starts[c];
        }
        let mut fill = row_starts.clone();
        let mut col_indices = vec![0usize; self.nnz()];
        let mut weights = vec![0.0; self.nnz()];
        for (r, c, w) in self.iter() {
            let k = fill[c];
            col_indices[k] = r;
            weights[k] = w;
            fill[c] += 1;
        }
        SparseMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            row_starts,
            col_indices,
            weights,
        }
    }

    pub fn densify(&self) -> DenseTensor {
        let mut out = DenseTensor::zeros(&[self.n_rows, self.n_cols]);
        for (r, c, w) in self.iter() {
            out.set(r, c, w);
        }
        out
    }

    /// self · d for a dense right factor, accumulating each output row in
    /// ascending stored order.
    pub fn mul_dense(&self, d: &DenseTensor) -> Result<DenseTensor> {
        if d.shape().len() != 2 || d.rows() != self.n_cols {
            return Err(Error::ShapeMismatch {
                op: "sparse_dense_matmul",
                lhs: vec![self.n_rows, self.n_cols],
                rhs: d.shape().to_vec(),
            });
        }
        let p = d.cols();
        let mut out = DenseTensor::zeros(&[self.n_rows, p]);
        for r in 0..self.n_rows {
            let (cols, ws) = self.row(r);
            let orow = out.row_mut(r);
            for (&c, &w) in cols.iter().zip(ws) {
                let drow = d.row(c);
                for j in 0..p {
                    orow[j] += w * drow[j];
                }
            }
        }
        Ok(out)
    }

    /// selfᵀ · d, computed as a row scatter so no transposed copy is needed.
    pub fn tmul_dense(&self, d: &DenseTensor) -> Result<DenseTensor> {
        if d.shape().len() != 2 || d.rows() != self.n_rows {
            return Err(Error::ShapeMismatch {
                op: "sparse_dense_matmul_t",
                lhs: vec![self.n_cols, self.n_rows],
                rhs: d.shape().to_vec(),
            });
        }
        let p = d.cols();
        let mut out = DenseTensor::zeros(&[self.n_cols, p]);
        for r in 0..self.n_rows {
            let (cols, ws) = self.row(r);
            let drow = d.row(r);
            for (&c, &w) in cols.iter().zip(ws) {
                let orow = out.row_mut(c);
                for j in 0..p {
                    orow[j] += w * drow[j];
                }
            }
        }
        Ok(out)
    }
}

/// Incremental CSR assembly, one row at a time.
pub struct CsrBuilder {
    n_cols: usize,
    row_starts: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
}

impl CsrBuilder {
    pub fn new(n_cols: usize) -> Self {
        CsrBuilder {
            n_cols,
            row_starts: vec![0],
            col_indices: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Append a row given entries in strictly increasing column order.
    /// Zero weights are dropped.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<()> {
        let mut last: Option<usize> = None;
        for (c, w) in entries {
            if c >= self.n_cols {
                return Err(Error::InvalidSparse(format!(
                    "column {c} out of range for width {}",
                    self.n_cols
                )));
            }
            if let Some(prev) = last {
                if c <= prev {
                    return Err(Error::InvalidSparse(
                        "row entries not in increasing column order".into(),
                    ));
                }
            }
            last = Some(c);
            if w != 0.0 {
                self.col_indices.push(c);
                self.weights.push(w);
            }
        }
        self.row_starts.push(self.col_indices.len());
        Ok(())
    }

    pub fn finish(self) -> SparseMatrix {
        SparseMatrix {
            n_rows: self.row_starts.len() - 1,
            n_cols: self.n_cols,
            row_starts: self.row_starts,
            col_indices: self.col_indices,
            weights: self.weights,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sorted_and_zero_dropped() {
        let s =
            SparseMatrix::from_triplets(2, 3, &[(1, 2, 4.0), (0, 1, 2.0), (1, 0, 0.0)]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.row(0), (&[1usize][..], &[2.0][..]));
        assert_eq!(s.row(1), (&[2usize][..], &[4.0][..]));
    }

    #[test]
    fn duplicate_entries_rejected() {
        let r = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 1, 2.0)]);
        assert!(r.is_err());
    }

    #[test]
    fn mul_dense_matches_hand_swap() {
        // [[0,1],[1,0]] x [[5],[7]] = [[7],[5]]
        let s = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let d = DenseTensor::from_rows(&[&[5.0], &[7.0]]).unwrap();
        let out = s.mul_dense(&d).unwrap();
        assert_eq!(out.as_slice(), &[7.0, 5.0]);
    }

    #[test]
    fn empty_matrix_is_zero_operator() {
        let s = SparseMatrix::empty(3, 4);
        let d = DenseTensor::zeros(&[4, 2]);
        let out = s.mul_dense(&d).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(s.storage_bytes(), 4 * std::mem::size_of::<usize>());
    }

    #[test]
    fn transpose_round_trip() {
        let s = SparseMatrix::from_triplets(3, 2, &[(0, 1, 2.0), (2, 0, -1.5), (1, 1, 3.0)])
            .unwrap();
        let tt = s.transpose().transpose();
        assert_eq!(s, tt);
    }

    #[test]
    fn builder_enforces_column_order() {
        let mut b = CsrBuilder::new(4);
        b.push_row([(0, 1.0), (2, 2.0)]).unwrap();
        assert!(b.push_row([(3, 1.0), (1, 2.0)]).is_err());
    }
}
