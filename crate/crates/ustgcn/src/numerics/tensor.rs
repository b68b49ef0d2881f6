use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
///
/// Everything the network computes on is one of these. In practice the crate
/// only ever builds rank-1 and rank-2 tensors, so the matrix accessors below
/// assume two dimensions (a rank-1 tensor of length n is treated as 1×n where
/// it matters).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        DenseTensor {
            shape: vec![1],
            values: vec![v],
        }
    }

    /// Build from a flat row-major buffer, rejecting shape/value defects.
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument {
                op: "dense_tensor",
                msg: format!("zero-sized dimension in shape {shape:?}"),
            });
        }
        if n != values.len() {
            return Err(Error::InvalidArgument {
                op: "dense_tensor",
                msg: format!("shape {shape:?} wants {n} values, got {}", values.len()),
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument {
                op: "dense_tensor",
                msg: format!("non-finite value {} at flat index {bad}", values[bad]),
            });
        }
        Ok(DenseTensor {
            shape: shape.to_vec(),
            values,
        })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], values)
    }

    /// Convenience for literal test fixtures.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        let mut values = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::InvalidArgument {
                    op: "dense_tensor",
                    msg: "ragged rows".into(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_vec(&[r, c], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    /// Row count under the matrix view (rank-1 tensors are a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Column count under the matrix view.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1],
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.values[r * cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[r * c..(r + 1) * c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Max over entries of |a - b|; errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

fn check_2d(op: &'static str, t: &DenseTensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::InvalidArgument {
            op,
            msg: format!("expected a matrix, got shape {:?}", t.shape()),
        });
    }
    Ok(())
}

/// c = a · b with fixed ascending summation order (ikj loop).
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    check_2d("dense_matmul", a)?;
    check_2d("dense_matmul", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, p) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "dense_matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = DenseTensor::zeros(&[m, p]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (kk, &aik) in arow.iter().enumerate().take(k) {
            let brow = b.row(kk);
            for j in 0..p {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// c = a · bᵀ.
pub fn matmul_nt(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, k) = (a.rows(), a.cols());
    let (p, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "dense_matmul_nt",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = DenseTensor::zeros(&[m, p]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for j in 0..p {
            let brow = b.row(j);
            let mut acc = 0.0;
            for kk in 0..k {
                acc += arow[kk] * brow[kk];
            }
            orow[j] = acc;
        }
    }
    Ok(out)
}

/// c = aᵀ · b.
pub fn matmul_tn(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, k) = (a.rows(), a.cols());
    let (m2, p) = (b.rows(), b.cols());
    if m != m2 {
        return Err(Error::ShapeMismatch {
            op: "dense_matmul_tn",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = DenseTensor::zeros(&[k, p]);
    for r in 0..m {
        let arow = a.row(r);
        let brow = b.row(r);
        for (i, &ari) in arow.iter().enumerate().take(k) {
            let orow = out.row_mut(i);
            for j in 0..p {
                orow[j] += ari * brow[j];
            }
        }
    }
    Ok(out)
}
