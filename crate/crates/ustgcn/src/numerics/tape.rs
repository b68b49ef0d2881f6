use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::sparse::SparseMatrix;
use crate::numerics::tensor::{self, DenseTensor};

/// Handle to a value slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(ValueId, ValueId),
    SparseMatMul(Arc<SparseMatrix>, ValueId),
    BroadcastMulTemporal {
        x: ValueId,
        w: ValueId,
        n_per_block: usize,
    },
    Relu(ValueId),
    ConcatCols(Vec<ValueId>),
    AddRowBroadcast(ValueId, ValueId),
    RegroupTimestamps {
        x: ValueId,
        n_per_block: usize,
    },
    Add(ValueId, ValueId),
    Scale(ValueId, f64),
    Sum(ValueId),
    MseLoss(ValueId, ValueId),
}

struct Node {
    value: DenseTensor,
    op: Op,
}

/// Reverse-mode tape: forward calls record one node per primitive in
/// topological order, `backward` replays them once in reverse.
///
/// Values are immutable once recorded. Summation order inside every kernel is
/// fixed, so identical inputs give bit-identical outputs and gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &DenseTensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: DenseTensor, op: Op) -> ValueId {
        debug_assert!(value.all_finite(), "tape op produced non-finite values");
        self.nodes.push(Node { value, op });
        ValueId(self.nodes.len() - 1)
    }

    /// Record a non-parameter leaf (input data, targets).
    pub fn input(&mut self, value: DenseTensor) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// Record a learnable-parameter leaf. Identical to `input` on the forward
    /// path; the distinction is only for the caller's bookkeeping.
    pub fn param(&mut self, value: DenseTensor) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// c[i][j] = Σ_k a[i][k]·b[k][j], differentiable w.r.t. both factors.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// s · d with s held constant; differentiable w.r.t. d.
    pub fn sparse_matmul(&mut self, s: Arc<SparseMatrix>, d: ValueId) -> Result<ValueId> {
        let out = s.mul_dense(self.value(d))?;
        Ok(self.push(out, Op::SparseMatMul(s, d)))
    }

    /// out[t·N+i][j] = x[t·N+i][j] · w[t][j] for N = `n_per_block`.
    pub fn broadcast_mul_temporal(
        &mut self,
        x: ValueId,
        w: ValueId,
        n_per_block: usize,
    ) -> Result<ValueId> {
        let (xv, wv) = (self.value(x), self.value(w));
        let t_steps = wv.rows();
        if xv.cols() != wv.cols()
            || t_steps == 0
            || xv.rows() % t_steps != 0
            || xv.rows() / t_steps != n_per_block
        {
            return Err(Error::ShapeMismatch {
                op: "elementwise_mul_broadcast",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            });
        }
        let d = xv.cols();
        let mut out = DenseTensor::zeros(&[xv.rows(), d]);
        for t in 0..t_steps {
            let wrow = wv.row(t);
            for i in 0..n_per_block {
                let r = t * n_per_block + i;
                let xrow = xv.row(r);
                let orow = out.row_mut(r);
                for j in 0..d {
                    orow[j] = xrow[j] * wrow[j];
                }
            }
        }
        Ok(self.push(out, Op::BroadcastMulTemporal { x, w, n_per_block }))
    }

    /// max(0, x); the subgradient at exactly 0 is taken as 0.
    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let xv = self.value(x);
        let mut out = xv.clone();
        out.as_mut_slice().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0;
            }
        });
        self.push(out, Op::Relu(x))
    }

    /// Column-wise concatenation in argument order.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat_columns",
                msg: "no parts".into(),
            });
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0usize;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_columns",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
            total += v.cols();
        }
        let mut out = DenseTensor::zeros(&[rows, total]);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            let pc = v.cols();
            for r in 0..rows {
                out.row_mut(r)[off..off + pc].copy_from_slice(v.row(r));
            }
            off += pc;
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// x + b with the row vector b broadcast over rows of x.
    pub fn add_row(&mut self, x: ValueId, b: ValueId) -> Result<ValueId> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.numel() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row_broadcast",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        let cols = out.cols();
        let bs = bv.as_slice().to_vec();
        for r in 0..out.rows() {
            let orow = out.row_mut(r);
            for j in 0..cols {
                orow[j] += bs[j];
            }
        }
        Ok(self.push(out, Op::AddRowBroadcast(x, b)))
    }

    /// Reorder a timestamp-major NT×d matrix into N×(T·d): block t of the
    /// output columns holds timestamp t's rows.
    pub fn regroup_timestamps(&mut self, x: ValueId, n_per_block: usize) -> Result<ValueId> {
        let xv = self.value(x);
        if n_per_block == 0 || xv.rows() % n_per_block != 0 {
            return Err(Error::InvalidArgument {
                op: "regroup_timestamps",
                msg: format!(
                    "{} rows not divisible into blocks of {n_per_block}",
                    xv.rows()
                ),
            });
        }
        let t_steps = xv.rows() / n_per_block;
        let d = xv.cols();
        let mut out = DenseTensor::zeros(&[n_per_block, t_steps * d]);
        for t in 0..t_steps {
            for i in 0..n_per_block {
                let src = xv.row(t * n_per_block + i).to_vec();
                out.row_mut(i)[t * d..(t + 1) * d].copy_from_slice(&src);
            }
        }
        Ok(self.push(out, Op::RegroupTimestamps { x, n_per_block }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = av.clone();
        out.as_mut_slice()
            .iter_mut()
            .zip(bv.as_slice())
            .for_each(|(o, &b)| *o += b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let mut out = self.value(a).clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v *= c);
        self.push(out, Op::Scale(a, c))
    }

    /// Scalar sum of all entries.
    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let s: f64 = self.value(a).as_slice().iter().sum();
        self.push(DenseTensor::scalar(s), Op::Sum(a))
    }

    /// Mean over all entries of (pred − target)².
    pub fn mse_loss(&mut self, pred: ValueId, target: ValueId) -> Result<ValueId> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse_loss",
                lhs: pv.shape().to_vec(),
                rhs: tv.shape().to_vec(),
            });
        }
        let n = pv.numel() as f64;
        let s: f64 = pv
            .as_slice()
            .iter()
            .zip(tv.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(DenseTensor::scalar(s / n), Op::MseLoss(pred, target)))
    }

    /// Reverse sweep from a scalar loss slot. Returns ∂loss/∂slot for every
    /// slot the loss depends on; anything else reads back as zeros.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::LossNotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<DenseTensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseTensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = tensor::matmul_nt(&g, self.value(*b))?;
                    let gb = tensor::matmul_tn(self.value(*a), &g)?;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SparseMatMul(s, d) => {
                    let gd = s.tmul_dense(&g)?;
                    accumulate(&mut grads, *d, gd);
                }
                Op::BroadcastMulTemporal { x, w, n_per_block } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let d = xv.cols();
                    let mut gx = DenseTensor::zeros(xv.shape());
                    let mut gw = DenseTensor::zeros(wv.shape());
                    for t in 0..wv.rows() {
                        for i in 0..*n_per_block {
                            let r = t * n_per_block + i;
                            let grow = g.row(r);
                            let xrow = xv.row(r);
                            let wrow = wv.row(t);
                            let gxrow = gx.row_mut(r);
                            let gwrow = gw.row_mut(t);
                            for j in 0..d {
                                gxrow[j] = grow[j] * wrow[j];
                                gwrow[j] += grow[j] * xrow[j];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g.clone();
                    gx.as_mut_slice()
                        .iter_mut()
                        .zip(xv.as_slice())
                        .for_each(|(gv, &x)| {
                            if x <= 0.0 {
                                *gv = 0.0;
                            }
                        });
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut gp = DenseTensor::zeros(self.value(p).shape());
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + pc]);
                        }
                        off += pc;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::AddRowBroadcast(x, b) => {
                    let bv = self.value(*b);
                    let mut gb = DenseTensor::zeros(bv.shape());
                    let cols = g.cols();
                    for r in 0..g.rows() {
                        let grow = g.row(r);
                        let gbs = gb.as_mut_slice();
                        for j in 0..cols {
                            gbs[j] += grow[j];
                        }
                    }
                    accumulate(&mut grads, *x, g.clone());
                    accumulate(&mut grads, *b, gb);
                }
                Op::RegroupTimestamps { x, n_per_block } => {
                    let xv = self.value(*x);
                    let t_steps = xv.rows() / n_per_block;
                    let d = xv.cols();
                    let mut gx = DenseTensor::zeros(xv.shape());
                    for t in 0..t_steps {
                        for i in 0..*n_per_block {
                            gx.row_mut(t * n_per_block + i)
                                .copy_from_slice(&g.row(i)[t * d..(t + 1) * d]);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Scale(a, c) => {
                    let mut ga = g.clone();
                    ga.as_mut_slice().iter_mut().for_each(|v| *v *= c);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let av = self.value(*a);
                    let mut ga = DenseTensor::zeros(av.shape());
                    ga.fill(g.scalar_value());
                    accumulate(&mut grads, *a, ga);
                }
                Op::MseLoss(pred, target) => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let scale = 2.0 * g.scalar_value() / pv.numel() as f64;
                    let mut gp = DenseTensor::zeros(pv.shape());
                    let mut gt = DenseTensor::zeros(tv.shape());
                    for ((gp, gt), (p, t)) in gp
                        .as_mut_slice()
                        .iter_mut()
                        .zip(gt.as_mut_slice())
                        .zip(pv.as_slice().iter().zip(tv.as_slice()))
                    {
                        let d = scale * (p - t);
                        *gp = d;
                        *gt = -d;
                    }
                    accumulate(&mut grads, *pred, gp);
                    accumulate(&mut grads, *target, gt);
                }
            }
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<DenseTensor>], id: ValueId, delta: DenseTensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            existing
                .as_mut_slice()
                .iter_mut()
                .zip(delta.as_slice())
                .for_each(|(e, &d)| *e += d);
        }
        slot => *slot = Some(delta),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<DenseTensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for a slot; slots the loss never touched give exact zeros.
    pub fn get(&self, id: ValueId) -> DenseTensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => DenseTensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn take(&mut self, id: ValueId) -> DenseTensor {
        self.grads[id.0]
            .take()
            .unwrap_or_else(|| DenseTensor::zeros(&self.shapes[id.0]))
    }
}
