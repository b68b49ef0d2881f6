//! The USTGCN network: K unified spatio-temporal convolution layers over the
//! normalized block-triangular operator, followed by the concatenating
//! regression head.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ScalerParams, WindowMode};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyVariant, STAdjacency};
use crate::numerics::{DenseTensor, SparseMatrix, Tape, ValueId};

/// One convolution layer: the T×d temporal weights applied before
/// aggregation and the 2d×d combiner of the ego/aggregate concatenation.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub w_temp: DenseTensor,
    pub w_final: DenseTensor,
}

/// Regression head: the Td×Td combiner over concatenated timestamp
/// embeddings and a two-layer predictor.
#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w_f: DenseTensor,
    pub w1: DenseTensor,
    pub b1: DenseTensor,
    pub w2: DenseTensor,
    pub b2: DenseTensor,
}

/// All learnable parameters. Layer widths are constant (d = P+1) end to end.
#[derive(Debug, Clone)]
pub struct UstgcnParams {
    pub t_window: usize,
    pub feature_dim: usize,
    pub head_hidden: usize,
    pub horizon: usize,
    pub layers: Vec<LayerParams>,
    pub head: HeadParams,
}

/// Uniform Glorot init bound for a fan_in→fan_out linear map.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseTensor {
    let b = glorot_bound(rows, cols);
    let mut t = DenseTensor::zeros(&[rows, cols]);
    t.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-b..b));
    t
}

/// Initialize parameters: temporal weights start at exactly 1 (identity
/// weighting), matrices are Glorot-uniform, biases zero. Deterministic in
/// the seed.
pub fn init_params(
    t_window: usize,
    feature_dim: usize,
    k_layers: usize,
    head_hidden: usize,
    horizon: usize,
    seed: u64,
) -> UstgcnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = feature_dim;
    let td = t_window * d;
    let layers = (0..k_layers)
        .map(|_| {
            let mut w_temp = DenseTensor::zeros(&[t_window, d]);
            w_temp.fill(1.0);
            LayerParams {
                w_temp,
                w_final: glorot(&mut rng, 2 * d, d),
            }
        })
        .collect();
    let head = HeadParams {
        w_f: glorot(&mut rng, td, td),
        w1: glorot(&mut rng, td, head_hidden),
        b1: DenseTensor::zeros(&[head_hidden]),
        w2: glorot(&mut rng, head_hidden, horizon),
        b2: DenseTensor::zeros(&[horizon]),
    };
    UstgcnParams {
        t_window,
        feature_dim,
        head_hidden,
        horizon,
        layers,
        head,
    }
}

impl UstgcnParams {
    pub fn k_layers(&self) -> usize {
        self.layers.len()
    }

    /// Parameters in canonical order with stable names.
    pub fn named_params(&self) -> Vec<(String, &DenseTensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("w_temp_{}", l + 1), &layer.w_temp));
            out.push((format!("w_final_{}", l + 1), &layer.w_final));
        }
        out.push(("w_f".to_string(), &self.head.w_f));
        out.push(("w1".to_string(), &self.head.w1));
        out.push(("b1".to_string(), &self.head.b1));
        out.push(("w2".to_string(), &self.head.w2));
        out.push(("b2".to_string(), &self.head.b2));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut DenseTensor)> {
        let mut out: Vec<(String, &mut DenseTensor)> = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("w_temp_{}", l + 1), &mut layer.w_temp));
            out.push((format!("w_final_{}", l + 1), &mut layer.w_final));
        }
        out.push(("w_f".to_string(), &mut self.head.w_f));
        out.push(("w1".to_string(), &mut self.head.w1));
        out.push(("b1".to_string(), &mut self.head.b1));
        out.push(("w2".to_string(), &mut self.head.w2));
        out.push(("b2".to_string(), &mut self.head.b2));
        out
    }

    /// Exact scalar parameter count over all fields.
    pub fn count_parameters(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Tape slots for one registration of the parameters.
pub struct ModelBinding {
    pub layer_ids: Vec<(ValueId, ValueId)>,
    pub w_f: ValueId,
    pub w1: ValueId,
    pub b1: ValueId,
    pub w2: ValueId,
    pub b2: ValueId,
}

impl ModelBinding {
    /// Slots in the same canonical order as `UstgcnParams::named_params`.
    pub fn ordered_ids(&self) -> Vec<ValueId> {
        let mut out = Vec::new();
        for &(wt, wf) in &self.layer_ids {
            out.push(wt);
            out.push(wf);
        }
        out.extend([self.w_f, self.w1, self.b1, self.w2, self.b2]);
        out
    }
}

/// Register every parameter tensor on the tape.
pub fn bind_params(tape: &mut Tape, params: &UstgcnParams) -> ModelBinding {
    let layer_ids = params
        .layers
        .iter()
        .map(|l| {
            (
                tape.param(l.w_temp.clone()),
                tape.param(l.w_final.clone()),
            )
        })
        .collect();
    ModelBinding {
        layer_ids,
        w_f: tape.param(params.head.w_f.clone()),
        w1: tape.param(params.head.w1.clone()),
        b1: tape.param(params.head.b1.clone()),
        w2: tape.param(params.head.w2.clone()),
        b2: tape.param(params.head.b2.clone()),
    }
}

/// Tape slots of the intermediate activations of one forward pass.
pub struct TraceIds {
    /// Layer inputs; entry 0 is the raw features, entry K is Z_E.
    pub x_self: Vec<ValueId>,
    pub z_e: ValueId,
    pub z_f: ValueId,
    pub prediction: ValueId,
}

/// One unified convolution layer on the tape:
/// relu(concat(x, Ã_ST·(x ⊙ w_temp)) · w_final).
pub fn layer_forward_on_tape(
    tape: &mut Tape,
    normalized: &Arc<SparseMatrix>,
    n_nodes: usize,
    x: ValueId,
    w_temp: ValueId,
    w_final: ValueId,
) -> Result<ValueId> {
    let weighted = tape.broadcast_mul_temporal(x, w_temp, n_nodes)?;
    let aggregated = tape.sparse_matmul(Arc::clone(normalized), weighted)?;
    let combined = tape.concat_cols(&[x, aggregated])?;
    let mapped = tape.matmul(combined, w_final)?;
    Ok(tape.relu(mapped))
}

/// Full forward pass on the tape. `x` must be NT×d in timestamp-major row
/// order; the prediction comes back as N×horizon.
pub fn model_forward_on_tape(
    tape: &mut Tape,
    adj: &STAdjacency,
    normalized: &Arc<SparseMatrix>,
    x: ValueId,
    binding: &ModelBinding,
    params: &UstgcnParams,
) -> Result<TraceIds> {
    let n = adj.n_nodes;
    let xv = tape.value(x);
    if adj.t_window != params.t_window
        || xv.rows() != n * params.t_window
        || xv.cols() != params.feature_dim
    {
        return Err(Error::ShapeMismatch {
            op: "model_forward",
            lhs: xv.shape().to_vec(),
            rhs: vec![n * params.t_window, params.feature_dim],
        });
    }
    let mut x_self = vec![x];
    let mut cur = x;
    for &(w_temp, w_final) in &binding.layer_ids {
        cur = layer_forward_on_tape(tape, normalized, n, cur, w_temp, w_final)?;
        x_self.push(cur);
    }
    let z_e = cur;
    let regrouped = tape.regroup_timestamps(z_e, n)?;
    let z_f = tape.matmul(regrouped, binding.w_f)?;
    let pre1 = tape.matmul(z_f, binding.w1)?;
    let pre1b = tape.add_row(pre1, binding.b1)?;
    let hidden = tape.relu(pre1b);
    let pre2 = tape.matmul(hidden, binding.w2)?;
    let prediction = tape.add_row(pre2, binding.b2)?;
    Ok(TraceIds {
        x_self,
        z_e,
        z_f,
        prediction,
    })
}

/// Retained activations of one forward pass, for inspection and tests.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub x_self: Vec<DenseTensor>,
    pub z_e: DenseTensor,
    pub z_f: DenseTensor,
    pub prediction: DenseTensor,
}

/// Run one sample through the network. Convenience wrapper that builds a
/// private tape; training records onto its own tape instead.
pub fn model_forward(
    adj: &STAdjacency,
    x: &DenseTensor,
    params: &UstgcnParams,
) -> Result<(DenseTensor, ForwardTrace)> {
    let mut tape = Tape::new();
    let normalized = Arc::new(adj.normalized.clone());
    let x_id = tape.input(x.clone());
    let binding = bind_params(&mut tape, params);
    let ids = model_forward_on_tape(&mut tape, adj, &normalized, x_id, &binding, params)?;
    let trace = ForwardTrace {
        x_self: ids.x_self.iter().map(|&v| tape.value(v).clone()).collect(),
        z_e: tape.value(ids.z_e).clone(),
        z_f: tape.value(ids.z_f).clone(),
        prediction: tape.value(ids.prediction).clone(),
    };
    Ok((trace.prediction.clone(), trace))
}

/// One layer as a plain function of values.
pub fn layer_forward(
    adj: &STAdjacency,
    x: &DenseTensor,
    layer: &LayerParams,
) -> Result<DenseTensor> {
    let mut tape = Tape::new();
    let normalized = Arc::new(adj.normalized.clone());
    let x_id = tape.input(x.clone());
    let wt = tape.param(layer.w_temp.clone());
    let wf = tape.param(layer.w_final.clone());
    let out = layer_forward_on_tape(&mut tape, &normalized, adj.n_nodes, x_id, wt, wf)?;
    Ok(tape.value(out).clone())
}

/// Everything a checkpoint must agree on before its parameters may be
/// evaluated against a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub n_nodes: usize,
    pub t_window: usize,
    pub feature_dim: usize,
    pub k_layers: usize,
    pub head_hidden: usize,
    pub horizon: usize,
    pub variant: AdjacencyVariant,
    pub window_mode: WindowMode,
    pub scaler: ScalerParams,
}

impl std::fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(N={}, T={}, d0={}, K={}, h={}, n={}, variant={}, window={})",
            self.n_nodes,
            self.t_window,
            self.feature_dim,
            self.k_layers,
            self.head_hidden,
            self.horizon,
            self.variant,
            self.window_mode
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Versioned parameter container. JSON with shortest-round-trip floats, so
/// save/load is bit-exact for every finite f64.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub fingerprint: Fingerprint,
    tensors: Vec<NamedTensor>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn from_params(params: &UstgcnParams, fingerprint: Fingerprint) -> Self {
        let tensors = params
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.as_slice().to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            fingerprint,
            tensors,
        }
    }

    pub fn to_params(&self) -> Result<UstgcnParams> {
        let fp = &self.fingerprint;
        let mut params = init_params(
            fp.t_window,
            fp.feature_dim,
            fp.k_layers,
            fp.head_hidden,
            fp.horizon,
            0,
        );
        let expected: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
        let stored: Vec<&str> = self.tensors.iter().map(|t| t.name.as_str()).collect();
        if expected != stored {
            return Err(Error::CheckpointFormat(format!(
                "tensor list {stored:?} does not match expected {expected:?}"
            )));
        }
        for ((_, slot), tensor) in params.named_params_mut().into_iter().zip(&self.tensors) {
            if slot.shape() != tensor.shape.as_slice() {
                return Err(Error::CheckpointFormat(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    tensor.name,
                    tensor.shape,
                    slot.shape()
                )));
            }
            *slot = DenseTensor::from_vec(&tensor.shape, tensor.values.clone())?;
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&body)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_adjacency_gaussian_threshold, build_st_adjacency};

    fn small_adj(n: usize, t: usize) -> STAdjacency {
        let edges: Vec<(usize, usize, f64)> = (0..n - 1).map(|i| (i, i + 1, 0.1)).collect();
        let g = build_adjacency_gaussian_threshold(&edges, n, 0.1, 0.5).unwrap();
        build_st_adjacency(&g, t, AdjacencyVariant::NeighborsAndSelf).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_w_temp_is_ones() {
        let a = init_params(4, 3, 2, 5, 2, 9);
        let b = init_params(4, 3, 2, 5, 2, 9);
        for ((_, x), (_, y)) in a.named_params().iter().zip(b.named_params()) {
            assert_eq!(x.as_slice(), y.as_slice());
        }
        assert!(a.layers[0]
            .w_temp
            .as_slice()
            .iter()
            .all(|&v| v == 1.0));
        assert!(a.head.b1.as_slice().iter().all(|&v| v == 0.0));
        let c = init_params(4, 3, 2, 5, 2, 10);
        assert_ne!(a.head.w1.as_slice(), c.head.w1.as_slice());
    }

    #[test]
    fn glorot_bound_formula() {
        assert!((glorot_bound(16, 8) - 0.5).abs() < 1e-12);
        let p = init_params(4, 3, 1, 5, 2, 3);
        let bound = glorot_bound(6, 3);
        assert!(p.layers[0]
            .w_final
            .as_slice()
            .iter()
            .all(|&v| v.abs() < bound));
    }

    #[test]
    fn parameter_count_desk_config() {
        // T=12, d=8, K=3, h=64, n=12:
        // 3·(12·8) + 3·(16·8) + 96·96 + 96·64 + 64 + 64·12 + 12 = 16876
        let p = init_params(12, 8, 3, 64, 12, 0);
        assert_eq!(p.count_parameters(), 16876);
    }

    #[test]
    fn parameter_count_head_only_and_hidden_width() {
        let head_only = init_params(12, 8, 0, 64, 12, 0);
        assert_eq!(
            head_only.count_parameters(),
            96 * 96 + 96 * 64 + 64 + 64 * 12 + 12
        );
        let wider = init_params(12, 8, 3, 128, 12, 0);
        let base = init_params(12, 8, 3, 64, 12, 0);
        assert_eq!(
            wider.count_parameters() - base.count_parameters(),
            (96 * 128 + 128 + 128 * 12) - (96 * 64 + 64 + 64 * 12)
        );
    }

    #[test]
    fn forward_shapes_paper_config() {
        // N=228, T=12, d0=8, K=3: Z_E is 2736×8, Z_F is 228×96
        let adj = small_adj(228, 12);
        let params = init_params(12, 8, 3, 64, 12, 1);
        let x = DenseTensor::zeros(&[228 * 12, 8]);
        let (pred, trace) = model_forward(&adj, &x, &params).unwrap();
        assert_eq!(trace.z_e.shape(), &[2736, 8]);
        assert_eq!(trace.z_f.shape(), &[228, 96]);
        assert_eq!(pred.shape(), &[228, 12]);
    }

    #[test]
    fn zero_layer_model_runs_head_on_raw_features() {
        let adj = small_adj(4, 3);
        let params = init_params(3, 2, 0, 5, 2, 1);
        let mut x = DenseTensor::zeros(&[12, 2]);
        x.as_mut_slice()
            .iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v = (k % 5) as f64 * 0.1);
        let (pred, trace) = model_forward(&adj, &x, &params).unwrap();
        assert_eq!(trace.x_self.len(), 1);
        assert_eq!(trace.z_e.as_slice(), x.as_slice());
        assert_eq!(pred.shape(), &[4, 2]);
    }

    #[test]
    fn layer_with_ego_selector_recovers_relu_of_input() {
        // W_final = [I; 0] picks the ego block, so the layer is relu(x).
        let adj = small_adj(2, 2);
        let d = 3;
        let mut w_final = DenseTensor::zeros(&[2 * d, d]);
        for j in 0..d {
            w_final.set(j, j, 1.0);
        }
        let mut w_temp = DenseTensor::zeros(&[2, d]);
        w_temp.fill(1.0);
        let layer = LayerParams { w_temp, w_final };
        let mut x = DenseTensor::zeros(&[4, d]);
        x.as_mut_slice()
            .iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v = k as f64 - 5.0);
        let out = layer_forward(&adj, &x, &layer).unwrap();
        for (o, &xi) in out.as_slice().iter().zip(x.as_slice()) {
            assert_eq!(*o, xi.max(0.0));
        }
    }

    #[test]
    fn empty_graph_layer_is_ego_only() {
        // no edges and T=1: degrees are all zero, the aggregate path is 0
        let g = build_adjacency_gaussian_threshold(&[], 3, 0.1, 0.5).unwrap();
        let adj = build_st_adjacency(&g, 1, AdjacencyVariant::NeighborsAndSelf).unwrap();
        let params = init_params(1, 2, 1, 4, 1, 5);
        let x = DenseTensor::from_rows(&[&[1.0, -1.0], &[0.5, 2.0], &[-0.3, 0.8]]).unwrap();
        let (_, trace) = model_forward(&adj, &x, &params).unwrap();
        // recompute relu(concat(x, 0) · w_final) by hand
        let wf = &params.layers[0].w_final;
        for r in 0..3 {
            for c in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += x.at(r, k) * wf.at(k, c);
                }
                assert!((trace.x_self[1].at(r, c) - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let params = init_params(4, 3, 2, 5, 2, 123);
        let fp = Fingerprint {
            n_nodes: 6,
            t_window: 4,
            feature_dim: 3,
            k_layers: 2,
            head_hidden: 5,
            horizon: 2,
            variant: AdjacencyVariant::NeighborsAndSelf,
            window_mode: WindowMode::IncludePredictionWindow,
            scaler: ScalerParams {
                mean: 59.7321,
                std: 7.11,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint");
        Checkpoint::from_params(&params, fp.clone())
            .save(&path)
            .unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.fingerprint, fp);
        let restored = loaded.to_params().unwrap();
        for ((_, a), (_, b)) in params.named_params().iter().zip(restored.named_params()) {
            assert_eq!(a.as_slice(), b.as_slice(), "bit-exact round trip");
        }
    }
}
