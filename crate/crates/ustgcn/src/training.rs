//! Optimization loop with the staged learning-rate schedule, per-horizon
//! metrics, and the naive baselines used as sanity floors.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Sample, SampleLayout, ScalerParams, WindowMode};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyVariant, STAdjacency};
use crate::model::{bind_params, model_forward_on_tape, UstgcnParams};
use crate::numerics::{adam_step, AdamState, DenseTensor, Tape};

/// Everything a training run is parameterized by.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub decay_until: usize,
    pub floor_lr: f64,
    pub batch_size: usize,
    pub k_layers: usize,
    pub history_days: usize,
    pub t_window: usize,
    pub horizon: usize,
    pub window_mode: WindowMode,
    pub variant: AdjacencyVariant,
    pub head_hidden: usize,
    pub seed: u64,
    pub scaling: bool,
    /// Anchor stride when enumerating training samples; 1 uses every anchor.
    pub train_stride: usize,
    /// Anchor stride for the validation set used in per-epoch selection.
    pub val_stride: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            base_lr: 0.001,
            lr_decay: 0.5,
            decay_every: 8,
            decay_until: 24,
            floor_lr: 0.0001,
            batch_size: 32,
            k_layers: 3,
            history_days: 7,
            t_window: 12,
            horizon: 12,
            window_mode: WindowMode::IncludePredictionWindow,
            variant: AdjacencyVariant::NeighborsAndSelf,
            head_hidden: 64,
            seed: 1,
            scaling: true,
            train_stride: 1,
            val_stride: 1,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    /// Reject invalid values up front, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::InvalidConfig { key: key.into(), msg });
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.base_lr <= 0.0 || self.floor_lr <= 0.0 {
            return bad("lr", format!("rates must be positive, got base {} floor {}", self.base_lr, self.floor_lr));
        }
        if !(0.0..1.0).contains(&self.lr_decay) {
            return bad("lr-decay", format!("must lie in (0,1), got {}", self.lr_decay));
        }
        if self.t_window == 0 || self.horizon == 0 {
            return bad("window", "data window and horizon must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch", "must be at least 1".into());
        }
        if self.decay_every == 0 {
            return bad("decay-every", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.history_days + 1
    }
}

/// Staged schedule: base_lr halves every `decay_every` epochs until
/// `decay_until`, then the floor rate applies. With the defaults this is
/// 0.001 / 0.0005 / 0.00025 for epochs 0–7 / 8–15 / 16–23 and 0.0001 after.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    if epoch >= config.decay_until {
        config.floor_lr
    } else {
        config.base_lr * config.lr_decay.powi((epoch / config.decay_every) as i32)
    }
}

/// One `epoch,lr,train_mse,val_mae` record of the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub val_mae: f64,
}

impl EpochRecord {
    pub fn to_log_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.epoch, self.lr, self.train_mse, self.val_mae
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation MAE.
    pub params: UstgcnParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub clip_events: usize,
}

/// Minibatch Adam on the MSE of scaled targets. Per epoch the sample order is
/// reshuffled (seeded), the validation MAE at the last horizon step is
/// logged, and the best-validation parameters are the ones returned.
pub fn train(
    params: UstgcnParams,
    adj: &STAdjacency,
    train_samples: &[Sample],
    val_samples: &[Sample],
    scaler: &ScalerParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_samples.is_empty() && config.epochs > 0 {
        return Err(Error::InvalidArgument {
            op: "train",
            msg: "no training samples".into(),
        });
    }
    let mut params = params;
    let normalized = Arc::new(adj.normalized.clone());
    let names: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let shapes: Vec<Vec<usize>> = params
        .named_params()
        .into_iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut adam = AdamState::new(&shape_refs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, UstgcnParams)> = None;
    let mut clip_events = 0usize;

    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            let mut tape = Tape::new();
            let binding = bind_params(&mut tape, &params);
            let mut batch_loss = None;
            for &si in batch {
                let sample = &train_samples[si];
                let x = tape.input(scaler.apply_tensor(&sample.x));
                let y = tape.input(scaler.apply_tensor(&sample.y));
                let trace =
                    model_forward_on_tape(&mut tape, adj, &normalized, x, &binding, &params)?;
                let loss = tape.mse_loss(trace.prediction, y)?;
                batch_loss = Some(match batch_loss {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let total = batch_loss.expect("non-empty batch");
            let mean_loss = tape.scale(total, 1.0 / batch.len() as f64);
            let loss_value = tape.value(mean_loss).scalar_value();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss_value * batch.len() as f64;
            loss_count += batch.len();

            let mut grads = tape.backward(mean_loss)?;
            let ids = binding.ordered_ids();
            let mut grad_tensors: Vec<DenseTensor> =
                ids.iter().map(|&id| grads.take(id)).collect();
            if clip_global_norm(&mut grad_tensors, config.clip_norm) {
                clip_events += 1;
                log::debug!(
                    "gradient clipped at epoch {epoch}, batch {batch_idx} (norm > {})",
                    config.clip_norm
                );
            }
            let mut param_refs: Vec<&mut DenseTensor> = params
                .named_params_mut()
                .into_iter()
                .map(|(_, t)| t)
                .collect();
            adam_step(&name_refs, &mut param_refs, &grad_tensors, &mut adam, lr)?;
        }
        let train_mse = if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            f64::NAN
        };
        let val_mae = validation_mae(&params, adj, &normalized, val_samples, scaler)?;
        log.push(EpochRecord {
            epoch,
            lr,
            train_mse,
            val_mae,
        });
        let better = match &best {
            None => true,
            Some((_, best_mae, _)) => val_mae < *best_mae,
        };
        if better {
            best = Some((epoch, val_mae, params.clone()));
        }
    }

    let (best_epoch, best_val_mae, best_params) = match best {
        Some((e, m, p)) => (e, m, p),
        None => (0, f64::NAN, params),
    };
    Ok(TrainOutcome {
        params: best_params,
        log,
        best_epoch,
        best_val_mae,
        clip_events,
    })
}

/// Scale gradients to a global L2 norm of `max_norm` when they exceed it.
fn clip_global_norm(grads: &mut [DenseTensor], max_norm: f64) -> bool {
    let sq: f64 = grads
        .iter()
        .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
        true
    } else {
        false
    }
}

/// Mean absolute error at the last horizon step, in original units.
fn validation_mae(
    params: &UstgcnParams,
    adj: &STAdjacency,
    normalized: &Arc<crate::numerics::SparseMatrix>,
    samples: &[Sample],
    scaler: &ScalerParams,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let h = params.horizon - 1;
    let mut sum = 0.0;
    let mut count = 0usize;
    for sample in samples {
        let mut tape = Tape::new();
        let binding = bind_params(&mut tape, params);
        let x = tape.input(scaler.apply_tensor(&sample.x));
        let trace = model_forward_on_tape(&mut tape, adj, normalized, x, &binding, params)?;
        let pred = scaler.invert_tensor(tape.value(trace.prediction));
        for i in 0..pred.rows() {
            sum += (pred.at(i, h) - sample.y.at(i, h)).abs();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Per-horizon error summary.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMetrics {
    /// Horizon step (1-based number of intervals ahead).
    pub step: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every target at this step fell under the
    /// magnitude mask.
    pub mape: Option<f64>,
    pub n_entries: usize,
    pub n_masked: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub horizons: Vec<HorizonMetrics>,
    pub n_samples: usize,
}

/// Targets smaller than this (in original units) are excluded from MAPE.
pub const MAPE_MASK_THRESHOLD: f64 = 1.0;

/// Horizon steps a report covers: the 15/30/45/60-minute marks that fit the
/// configured horizon, or every step when the horizon is shorter than 3.
pub fn report_steps(horizon: usize) -> Vec<usize> {
    let wanted: Vec<usize> = [3, 6, 9, 12].into_iter().filter(|&s| s <= horizon).collect();
    if wanted.is_empty() {
        (1..=horizon).collect()
    } else {
        wanted
    }
}

/// MAE / RMSE / MAPE over paired entries, with the MAPE mask applied.
/// Returns (mae, rmse, mape, masked_count).
pub fn metric_triple(pred: &[f64], target: &[f64]) -> (f64, f64, Option<f64>, usize) {
    assert_eq!(pred.len(), target.len());
    let n = pred.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_count = 0usize;
    for (&p, &y) in pred.iter().zip(target) {
        let e = (p - y).abs();
        abs_sum += e;
        sq_sum += e * e;
        if y.abs() >= MAPE_MASK_THRESHOLD {
            pct_sum += e / y.abs();
            pct_count += 1;
        }
    }
    let mape = (pct_count > 0).then(|| 100.0 * pct_sum / pct_count as f64);
    (
        abs_sum / n,
        (sq_sum / n).sqrt(),
        mape,
        pred.len() - pct_count,
    )
}

struct ReportBuilder {
    steps: Vec<usize>,
    preds: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    n_samples: usize,
}

impl ReportBuilder {
    fn new(horizon: usize) -> Self {
        let steps = report_steps(horizon);
        ReportBuilder {
            preds: vec![Vec::new(); steps.len()],
            targets: vec![Vec::new(); steps.len()],
            steps,
            n_samples: 0,
        }
    }

    /// `pred` and `target` are N×horizon in original units.
    fn push(&mut self, pred: &DenseTensor, target: &DenseTensor) {
        self.n_samples += 1;
        for (k, &step) in self.steps.iter().enumerate() {
            for i in 0..pred.rows() {
                self.preds[k].push(pred.at(i, step - 1));
                self.targets[k].push(target.at(i, step - 1));
            }
        }
    }

    fn finish(self) -> MetricsReport {
        let horizons = self
            .steps
            .iter()
            .enumerate()
            .map(|(k, &step)| {
                let (mae, rmse, mape, n_masked) =
                    metric_triple(&self.preds[k], &self.targets[k]);
                HorizonMetrics {
                    step,
                    mae,
                    rmse,
                    mape,
                    n_entries: self.preds[k].len(),
                    n_masked,
                }
            })
            .collect();
        MetricsReport {
            horizons,
            n_samples: self.n_samples,
        }
    }
}

impl MetricsReport {
    /// Comma-separated table: `horizon_minutes,mae,rmse,mape` per row.
    /// An all-masked MAPE serializes as `undefined`.
    pub fn to_csv(&self, interval_minutes: u32) -> String {
        let mut out = String::from("horizon_minutes,mae,rmse,mape\n");
        for h in &self.horizons {
            let mape = h
                .mape
                .map(|m| format!("{m}"))
                .unwrap_or_else(|| "undefined".to_string());
            out.push_str(&format!(
                "{},{},{},{}\n",
                h.step as u32 * interval_minutes,
                h.mae,
                h.rmse,
                mape
            ));
        }
        out
    }

    pub fn to_table(&self, interval_minutes: u32) -> String {
        let mut out = format!(
            "{:>8}  {:>10}  {:>10}  {:>10}\n",
            "horizon", "MAE", "RMSE", "MAPE%"
        );
        for h in &self.horizons {
            let mape = h
                .mape
                .map(|m| format!("{m:.4}"))
                .unwrap_or_else(|| "undef".to_string());
            out.push_str(&format!(
                "{:>5}min  {:>10.4}  {:>10.4}  {:>10}\n",
                h.step as u32 * interval_minutes,
                h.mae,
                h.rmse,
                mape
            ));
        }
        out
    }

    pub fn at_step(&self, step: usize) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|h| h.step == step)
    }
}

/// Model predictions against original-unit targets: inputs are scaled for the
/// forward pass, predictions inverted back before any metric is computed.
pub fn evaluate(
    params: &UstgcnParams,
    adj: &STAdjacency,
    samples: &[Sample],
    scaler: &ScalerParams,
) -> Result<MetricsReport> {
    let normalized = Arc::new(adj.normalized.clone());
    let mut builder = ReportBuilder::new(params.horizon);
    for sample in samples {
        let mut tape = Tape::new();
        let binding = bind_params(&mut tape, params);
        let x = tape.input(scaler.apply_tensor(&sample.x));
        let trace = model_forward_on_tape(&mut tape, adj, &normalized, x, &binding, params)?;
        let pred = scaler.invert_tensor(tape.value(trace.prediction));
        builder.push(&pred, &sample.y);
    }
    Ok(builder.finish())
}

/// Repeat the last observed current-day value at every horizon.
pub fn persistence_baseline(samples: &[Sample], layout: &SampleLayout) -> Result<MetricsReport> {
    let n = layout.n_nodes;
    let p_col = layout.history_days;
    let last_row = (layout.t_window - 1) * n;
    let mut builder = ReportBuilder::new(layout.horizon);
    for sample in samples {
        let mut pred = DenseTensor::zeros(&[n, layout.horizon]);
        for i in 0..n {
            let v = sample.x.at(last_row + i, p_col);
            pred.row_mut(i).iter_mut().for_each(|o| *o = v);
        }
        builder.push(&pred, &sample.y);
    }
    Ok(builder.finish())
}

/// Mean of the P historical columns at the window position aligned with each
/// horizon step. Only meaningful in include-prediction-window mode.
pub fn historical_average_baseline(
    samples: &[Sample],
    layout: &SampleLayout,
) -> Result<MetricsReport> {
    if layout.mode != WindowMode::IncludePredictionWindow {
        return Err(Error::InvalidArgument {
            op: "historical_average_baseline",
            msg: "alignment is undefined in previous-hour mode".into(),
        });
    }
    if layout.history_days == 0 {
        return Err(Error::InvalidArgument {
            op: "historical_average_baseline",
            msg: "needs at least one historical day".into(),
        });
    }
    if layout.horizon > layout.t_window {
        return Err(Error::InvalidArgument {
            op: "historical_average_baseline",
            msg: format!(
                "horizon {} exceeds window {}; early steps have no aligned position",
                layout.horizon, layout.t_window
            ),
        });
    }
    let n = layout.n_nodes;
    let p = layout.history_days;
    let mut builder = ReportBuilder::new(layout.horizon);
    for sample in samples {
        let mut pred = DenseTensor::zeros(&[n, layout.horizon]);
        for h in 1..=layout.horizon {
            let w = h + layout.t_window - layout.horizon;
            for i in 0..n {
                let row = sample.x.row((w - 1) * n + i);
                let mean: f64 = row[..p].iter().sum::<f64>() / p as f64;
                pred.set(i, h - 1, mean);
            }
        }
        builder.push(&pred, &sample.y);
    }
    Ok(builder.finish())
}
