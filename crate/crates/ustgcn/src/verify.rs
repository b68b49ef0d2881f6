//! Executable invariant battery behind `ustgcn verify` and the acceptance
//! suite.
//!
//! The oracles here are deliberately naive reimplementations on plain nested
//! vectors: dense block assembly by loops, dense normalization, a loop-based
//! forward pass. They share no code with the sparse/tape production path they
//! check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{
    build_adjacency_gaussian_neighbor, build_st_adjacency, AdjacencyVariant, PhysicalGraph,
    STAdjacency,
};
use crate::model::{init_params, model_forward, UstgcnParams};
use crate::numerics::{finite_diff_check, DenseTensor, Tape};
use crate::training::{lr_at_epoch, metric_triple, TrainConfig};

pub const SUITE_NAMES: [&str; 7] = [
    "triangularity",
    "causality",
    "gradient-check",
    "dense-oracle",
    "normalization-oracle",
    "metric-unit",
    "schedule",
];

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub failure: Option<String>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }
}

/// Run one named suite at the given scale multiplier (1 = the default case
/// counts the acceptance criteria pin).
pub fn run_suite(name: &str, scale: usize) -> Result<SuiteOutcome> {
    let scale = scale.max(1);
    let (cases, failure) = match name {
        "triangularity" => triangularity_suite(100 * scale),
        "causality" => causality_suite(50 * scale),
        "gradient-check" => gradient_check_suite(),
        "dense-oracle" => dense_oracle_suite(25 * scale),
        "normalization-oracle" => normalization_oracle_suite(50 * scale),
        "metric-unit" => metric_unit_suite(),
        "schedule" => schedule_suite(),
        other => {
            return Err(Error::InvalidConfig {
                key: "suite".into(),
                msg: format!("unknown suite `{other}`; known: {}", SUITE_NAMES.join(", ")),
            })
        }
    };
    Ok(SuiteOutcome {
        name: name.to_string(),
        cases,
        failure,
    })
}

pub fn run_suites(filter: Option<&str>, scale: usize) -> Result<Vec<SuiteOutcome>> {
    match filter {
        Some(name) => Ok(vec![run_suite(name, scale)?]),
        None => SUITE_NAMES.iter().map(|n| run_suite(n, scale)).collect(),
    }
}

fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> PhysicalGraph {
    let n = rng.gen_range(2..=max_n);
    let density: f64 = rng.gen_range(0.05..0.6);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < density {
                edges.push((i, j, rng.gen_range(0.0..0.25)));
            }
        }
    }
    build_adjacency_gaussian_neighbor(&edges, n, 0.1).expect("valid random graph")
}

fn random_variant(rng: &mut ChaCha8Rng) -> AdjacencyVariant {
    if rng.gen::<bool>() {
        AdjacencyVariant::NeighborsAndSelf
    } else {
        AdjacencyVariant::SelfOnly
    }
}

/// Every stored entry of the normalized operator must sit in a block (t, t′)
/// with t′ ≤ t.
pub fn check_lower_triangular(adj: &STAdjacency) -> std::result::Result<(), String> {
    for (r, c, w) in adj.normalized.iter() {
        if c / adj.n_nodes > r / adj.n_nodes {
            return Err(format!(
                "stored entry ({r},{c})={w} lies in upper block ({},{})",
                r / adj.n_nodes,
                c / adj.n_nodes
            ));
        }
    }
    Ok(())
}

fn triangularity_suite(cases: usize) -> (usize, Option<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7151);
    for case in 0..cases {
        let g = random_graph(&mut rng, 20);
        let t = rng.gen_range(1..=12);
        let variant = random_variant(&mut rng);
        let adj = match build_st_adjacency(&g, t, variant) {
            Ok(a) => a,
            Err(e) => return (case, Some(format!("case {case}: build failed: {e}"))),
        };
        if let Err(msg) = check_lower_triangular(&adj) {
            return (
                case,
                Some(format!("case {case} (N={}, T={t}): {msg}", g.n_nodes)),
            );
        }
    }
    (cases, None)
}

/// Dense normalization oracle: densify A_ST, apply D^(-1/2)·A·D^(-1/2) by
/// brute force, compare entrywise against the sparse result.
pub fn check_normalization(adj: &STAdjacency) -> std::result::Result<(), String> {
    let nt = adj.n_nodes * adj.t_window;
    let raw = dense_of(&adj.raw);
    let mut degree = vec![0.0f64; nt];
    for (r, row) in raw.iter().enumerate() {
        degree[r] = row.iter().sum();
    }
    let inv: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let got = dense_of(&adj.normalized);
    for r in 0..nt {
        for c in 0..nt {
            let want = raw[r][c] * inv[r] * inv[c];
            let diff = (got[r][c] - want).abs();
            if diff > 1e-12 {
                return Err(format!(
                    "normalized[{r}][{c}] = {} but oracle says {} (diff {diff:e})",
                    got[r][c], want
                ));
            }
        }
    }
    Ok(())
}

fn normalization_oracle_suite(cases: usize) -> (usize, Option<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e02);
    for case in 0..cases {
        let g = random_graph(&mut rng, 12);
        let t = rng.gen_range(1..=8);
        let variant = random_variant(&mut rng);
        let adj = match build_st_adjacency(&g, t, variant) {
            Ok(a) => a,
            Err(e) => return (case, Some(format!("case {case}: build failed: {e}"))),
        };
        if let Err(msg) = check_normalization(&adj) {
            return (
                case,
                Some(format!("case {case} (N={}, T={t}): {msg}", g.n_nodes)),
            );
        }
    }
    (cases, None)
}

/// Perturbing features of timestamp `t_perturb` must leave all earlier
/// timestamps' Z_E rows bit-identical.
pub fn check_causality(
    adj: &STAdjacency,
    params: &UstgcnParams,
    x: &DenseTensor,
    t_perturb: usize,
) -> std::result::Result<(), String> {
    let n = adj.n_nodes;
    let (_, base) = model_forward(adj, x, params).map_err(|e| e.to_string())?;
    let mut x2 = x.clone();
    for i in 0..n {
        let row = x2.row_mut(t_perturb * n + i);
        row.iter_mut().for_each(|v| *v += 1.0 + (i as f64) * 0.25);
    }
    let (_, bumped) = model_forward(adj, &x2, params).map_err(|e| e.to_string())?;
    for t in 0..t_perturb {
        for i in 0..n {
            let r = t * n + i;
            if base.z_e.row(r) != bumped.z_e.row(r) {
                return Err(format!(
                    "Z_E row {r} (timestamp {t}) changed after perturbing timestamp {t_perturb}"
                ));
            }
        }
    }
    Ok(())
}

fn causality_suite(cases: usize) -> (usize, Option<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xca15);
    for case in 0..cases {
        let g = random_graph(&mut rng, 8);
        let t = rng.gen_range(2..=6);
        let d0 = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=3);
        let variant = random_variant(&mut rng);
        let adj = match build_st_adjacency(&g, t, variant) {
            Ok(a) => a,
            Err(e) => return (case, Some(format!("case {case}: build failed: {e}"))),
        };
        let params = init_params(t, d0, k, 5, 2, rng.gen());
        let mut x = DenseTensor::zeros(&[g.n_nodes * t, d0]);
        x.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-2.0..2.0));
        let t_perturb = rng.gen_range(1..t);
        if let Err(msg) = check_causality(&adj, &params, &x, t_perturb) {
            return (
                case,
                Some(format!(
                    "case {case} (N={}, T={t}, K={k}): {msg}",
                    g.n_nodes
                )),
            );
        }
    }
    (cases, None)
}

// ---------------------------------------------------------------------------
// Naive dense forward oracle
// ---------------------------------------------------------------------------

fn dense_of(s: &crate::numerics::SparseMatrix) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; s.n_cols()]; s.n_rows()];
    for (r, c, w) in s.iter() {
        out[r][c] = w;
    }
    out
}

/// Assemble the NT×NT operator directly from the block rules, densely.
fn dense_st_operator(
    g: &PhysicalGraph,
    t_window: usize,
    variant: AdjacencyVariant,
) -> Vec<Vec<f64>> {
    let n = g.n_nodes;
    let a = dense_of(&g.adjacency);
    let nt = n * t_window;
    let mut m = vec![vec![0.0; nt]; nt];
    for bt in 0..t_window {
        for bs in 0..=bt {
            for i in 0..n {
                for j in 0..n {
                    let v = if bs == bt {
                        a[i][j]
                    } else {
                        match variant {
                            AdjacencyVariant::NeighborsAndSelf => {
                                a[i][j] + if i == j { 1.0 } else { 0.0 }
                            }
                            AdjacencyVariant::SelfOnly => {
                                if i == j {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    };
                    m[bt * n + i][bs * n + j] = v;
                }
            }
        }
    }
    // symmetric normalization, densely
    let degree: Vec<f64> = m.iter().map(|row| row.iter().sum()).collect();
    let inv: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    for r in 0..nt {
        for c in 0..nt {
            m[r][c] *= inv[r] * inv[c];
        }
    }
    m
}

fn dense_matmul_naive(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (m, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; m];
    for i in 0..m {
        for j in 0..p {
            let mut acc = 0.0;
            for kk in 0..k {
                acc += a[i][kk] * b[kk][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

fn rows_of(t: &DenseTensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Loop-based reimplementation of the full forward pass on the dense
/// operator. Returns (prediction, Z_E).
pub fn naive_forward(
    g: &PhysicalGraph,
    t_window: usize,
    variant: AdjacencyVariant,
    x: &DenseTensor,
    params: &UstgcnParams,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = g.n_nodes;
    let op = dense_st_operator(g, t_window, variant);
    let mut cur = rows_of(x);
    for layer in &params.layers {
        let d = params.feature_dim;
        // temporal weighting
        let mut weighted = cur.clone();
        for (r, row) in weighted.iter_mut().enumerate() {
            let t = r / n;
            for (j, v) in row.iter_mut().enumerate() {
                *v *= layer.w_temp.at(t, j);
            }
        }
        let aggregated = dense_matmul_naive(&op, &weighted);
        // concat ego and aggregate, map by w_final, relu
        let mut next = vec![vec![0.0; d]; cur.len()];
        for r in 0..cur.len() {
            for c in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += cur[r][k] * layer.w_final.at(k, c);
                    acc += aggregated[r][k] * layer.w_final.at(d + k, c);
                }
                next[r][c] = acc.max(0.0);
            }
        }
        cur = next;
    }
    let z_e = cur.clone();
    // regroup NT×d -> N×Td
    let d = params.feature_dim;
    let mut grouped = vec![vec![0.0; t_window * d]; n];
    for t in 0..t_window {
        for i in 0..n {
            for j in 0..d {
                grouped[i][t * d + j] = cur[t * n + i][j];
            }
        }
    }
    let z_f = dense_matmul_naive(&grouped, &rows_of(&params.head.w_f));
    let mut hidden = dense_matmul_naive(&z_f, &rows_of(&params.head.w1));
    for row in hidden.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v + params.head.b1.as_slice()[j]).max(0.0);
        }
    }
    let mut pred = dense_matmul_naive(&hidden, &rows_of(&params.head.w2));
    for row in pred.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v += params.head.b2.as_slice()[j];
        }
    }
    (pred, z_e)
}

fn dense_oracle_suite(cases: usize) -> (usize, Option<String>) {
    for seed in 0..cases as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xde50 + seed);
        let g = random_graph(&mut rng, 6);
        let t = rng.gen_range(1..=4);
        let d0 = rng.gen_range(1..=4);
        let k = rng.gen_range(0..=3);
        let variant = random_variant(&mut rng);
        let adj = match build_st_adjacency(&g, t, variant) {
            Ok(a) => a,
            Err(e) => {
                return (
                    seed as usize,
                    Some(format!("seed {seed}: build failed: {e}")),
                )
            }
        };
        let horizon = rng.gen_range(1..=3);
        let params = init_params(t, d0, k, 4, horizon, rng.gen());
        let mut x = DenseTensor::zeros(&[g.n_nodes * t, d0]);
        x.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-2.0..2.0));
        let (pred, trace) = match model_forward(&adj, &x, &params) {
            Ok(p) => p,
            Err(e) => {
                return (
                    seed as usize,
                    Some(format!("seed {seed}: forward failed: {e}")),
                )
            }
        };
        let (want_pred, want_ze) = naive_forward(&g, t, variant, &x, &params);
        let mut max_diff = 0.0f64;
        for r in 0..trace.z_e.rows() {
            for c in 0..trace.z_e.cols() {
                max_diff = max_diff.max((trace.z_e.at(r, c) - want_ze[r][c]).abs());
            }
        }
        for r in 0..pred.rows() {
            for c in 0..pred.cols() {
                max_diff = max_diff.max((pred.at(r, c) - want_pred[r][c]).abs());
            }
        }
        if max_diff > 1e-10 {
            return (
                seed as usize,
                Some(format!(
                    "seed {seed} (N={}, T={t}, K={k}): max |sparse - dense oracle| = {max_diff:e}",
                    g.n_nodes
                )),
            );
        }
    }
    (cases, None)
}

/// Analytic gradients of the full 2-layer loss against central differences,
/// over every parameter, on the pinned small instance.
fn gradient_check_suite() -> (usize, Option<String>) {
    match model_gradient_check(4, 3, 3, 2, 5, 2, 0xad, 1e-5) {
        Ok(rel) if rel <= 1e-5 => (1, None),
        Ok(rel) => (1, Some(format!("max relative error {rel:e} > 1e-5"))),
        Err(e) => (1, Some(format!("gradient check failed to run: {e}"))),
    }
}

/// Max relative error between tape gradients and central differences for a
/// random instance of the given dimensions.
pub fn model_gradient_check(
    n_nodes: usize,
    t_window: usize,
    d0: usize,
    k_layers: usize,
    head_hidden: usize,
    horizon: usize,
    seed: u64,
    h: f64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n_nodes {
        for j in (i + 1)..n_nodes {
            if rng.gen::<f64>() < 0.5 {
                edges.push((i, j, rng.gen_range(0.0..0.2)));
            }
        }
    }
    let g = build_adjacency_gaussian_neighbor(&edges, n_nodes, 0.1)?;
    let adj = build_st_adjacency(&g, t_window, AdjacencyVariant::NeighborsAndSelf)?;
    let params = init_params(t_window, d0, k_layers, head_hidden, horizon, rng.gen());
    let mut x = DenseTensor::zeros(&[n_nodes * t_window, d0]);
    x.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-2.0..2.0));
    let mut y = DenseTensor::zeros(&[n_nodes, horizon]);
    y.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-2.0..2.0));

    let normalized = std::sync::Arc::new(adj.normalized.clone());
    let mut tape = Tape::new();
    let binding = crate::model::bind_params(&mut tape, &params);
    let x_id = tape.input(x.clone());
    let y_id = tape.input(y.clone());
    let ids = crate::model::model_forward_on_tape(&mut tape, &adj, &normalized, x_id, &binding, &params)?;
    let loss = tape.mse_loss(ids.prediction, y_id)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<DenseTensor> = binding
        .ordered_ids()
        .iter()
        .map(|&id| grads.get(id))
        .collect();
    let tensors: Vec<DenseTensor> = params
        .named_params()
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();

    let template = params.clone();
    let eval = |ps: &[DenseTensor]| -> Result<f64> {
        let mut trial = template.clone();
        for ((_, slot), src) in trial.named_params_mut().into_iter().zip(ps) {
            *slot = src.clone();
        }
        let mut tape = Tape::new();
        let binding = crate::model::bind_params(&mut tape, &trial);
        let x_id = tape.input(x.clone());
        let y_id = tape.input(y.clone());
        let ids = crate::model::model_forward_on_tape(
            &mut tape,
            &adj,
            &normalized,
            x_id,
            &binding,
            &trial,
        )?;
        let loss = tape.mse_loss(ids.prediction, y_id)?;
        Ok(tape.value(loss).scalar_value())
    };
    finite_diff_check(eval, &tensors, &analytic, h)
}

fn metric_unit_suite() -> (usize, Option<String>) {
    let (mae, rmse, mape, _) = metric_triple(&[3.0, 2.0], &[2.0, 4.0]);
    if (mae - 1.5).abs() > 1e-12 {
        return (1, Some(format!("MAE {mae} != 1.5")));
    }
    if (rmse - 1.58114).abs() > 1e-5 {
        return (1, Some(format!("RMSE {rmse} != 1.58114 ± 1e-5")));
    }
    match mape {
        Some(m) if (m - 50.0).abs() <= 1e-9 => (1, None),
        other => (1, Some(format!("MAPE {other:?} != 50.0 ± 1e-9"))),
    }
}

fn schedule_suite() -> (usize, Option<String>) {
    let cfg = TrainConfig::default();
    for epoch in 0..500usize {
        let want = match epoch {
            0..=7 => 0.001,
            8..=15 => 0.0005,
            16..=23 => 0.00025,
            _ => 0.0001,
        };
        let got = lr_at_epoch(&cfg, epoch);
        if got != want {
            return (epoch, Some(format!("epoch {epoch}: lr {got} != {want}")));
        }
    }
    (500, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SparseMatrix;

    #[test]
    fn all_suites_pass_at_default_scale() {
        for name in SUITE_NAMES {
            let outcome = run_suite(name, 1).unwrap();
            assert!(
                outcome.passed(),
                "suite {name} failed: {:?}",
                outcome.failure
            );
        }
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nonsense", 1).is_err());
    }

    #[test]
    fn corrupted_normalization_fails_with_coordinates() {
        // negative control: doctor one normalized entry and expect the check
        // to name it
        let g = build_adjacency_gaussian_neighbor(&[(0, 1, 0.1), (1, 2, 0.15)], 3, 0.1).unwrap();
        let mut adj = build_st_adjacency(&g, 2, AdjacencyVariant::NeighborsAndSelf).unwrap();
        let mut entries: Vec<(usize, usize, f64)> = adj.normalized.iter().collect();
        entries[0].2 *= 1.5;
        let (r, c, _) = entries[0];
        adj.normalized = SparseMatrix::from_triplets(
            adj.normalized.n_rows(),
            adj.normalized.n_cols(),
            &entries,
        )
        .unwrap();
        let err = check_normalization(&adj).unwrap_err();
        assert!(
            err.contains(&format!("[{r}][{c}]")),
            "failure should carry coordinates: {err}"
        );
    }

    #[test]
    fn causality_check_detects_anticausal_operator() {
        // negative control: the transposed operator propagates future into
        // past and must trip the check
        let g = build_adjacency_gaussian_neighbor(&[(0, 1, 0.05)], 2, 0.1).unwrap();
        let mut adj = build_st_adjacency(&g, 3, AdjacencyVariant::NeighborsAndSelf).unwrap();
        adj.normalized = adj.normalized.transpose();
        let params = init_params(3, 2, 1, 4, 1, 9);
        let mut x = DenseTensor::zeros(&[6, 2]);
        x.as_mut_slice()
            .iter_mut()
            .enumerate()
            .for_each(|(k, v)| *v = k as f64 * 0.1 + 0.3);
        assert!(check_causality(&adj, &params, &x, 2).is_err());
    }
}
