//! Speed-series ingestion, window/sample assembly, chronological splits,
//! standardization, and the synthetic generator used for desk-scale runs.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::PhysicalGraph;
use crate::numerics::DenseTensor;

pub const DEFAULT_STEPS_PER_DAY: usize = 288;
pub const DEFAULT_INTERVAL_MINUTES: u32 = 5;

/// Speed observations: rows are 5-minute intervals, columns are sensors.
/// Only whole days are accepted.
#[derive(Debug, Clone)]
pub struct SpeedSeries {
    values: Vec<f64>,
    n_sensors: usize,
    pub interval_minutes: u32,
    pub steps_per_day: usize,
    pub sensor_ids: Vec<String>,
}

impl SpeedSeries {
    pub fn new(
        n_sensors: usize,
        values: Vec<f64>,
        steps_per_day: usize,
        interval_minutes: u32,
    ) -> Result<Self> {
        if n_sensors == 0 || values.len() % n_sensors != 0 {
            return Err(Error::InvalidArgument {
                op: "speed_series",
                msg: format!("{} values do not tile {} sensors", values.len(), n_sensors),
            });
        }
        let rows = values.len() / n_sensors;
        if steps_per_day == 0 || rows % steps_per_day != 0 {
            return Err(Error::PartialDay {
                rows,
                steps_per_day,
            });
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument {
                op: "speed_series",
                msg: format!(
                    "speed {} at row {}, column {} must be finite and nonnegative",
                    values[bad],
                    bad / n_sensors,
                    bad % n_sensors
                ),
            });
        }
        Ok(SpeedSeries {
            values,
            n_sensors,
            interval_minutes,
            steps_per_day,
            sensor_ids: (0..n_sensors).map(|i| i.to_string()).collect(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.len() / self.n_sensors
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_days(&self) -> usize {
        self.n_rows() / self.steps_per_day
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_sensors..(t + 1) * self.n_sensors]
    }

    #[inline]
    pub fn value(&self, t: usize, sensor: usize) -> f64 {
        self.values[t * self.n_sensors + sensor]
    }

    /// Write in the same comma-separated format `load_speed_csv` reads,
    /// including a sensor-ID header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?,
        );
        let io_err = |e| Error::io(path.display().to_string(), e);
        writeln!(out, "{}", self.sensor_ids.join(",")).map_err(io_err)?;
        for t in 0..self.n_rows() {
            let row: Vec<String> = self.row(t).iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", row.join(",")).map_err(io_err)?;
        }
        Ok(())
    }
}

/// Load a comma-separated speed table. An optional first line of sensor IDs
/// is detected by any non-numeric field.
pub fn load_speed_csv(path: &Path) -> Result<SpeedSeries> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut n_sensors = 0usize;
    let mut values = Vec::new();
    let mut sensor_ids: Option<Vec<String>> = None;
    let mut data_rows = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if data_rows == 0 && sensor_ids.is_none() && fields.iter().any(|f| f.parse::<f64>().is_err())
        {
            sensor_ids = Some(fields.iter().map(|s| s.to_string()).collect());
            n_sensors = fields.len();
            continue;
        }
        if n_sensors == 0 {
            n_sensors = fields.len();
        }
        if fields.len() != n_sensors {
            return Err(Error::ParseError {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected {} columns, got {}", n_sensors, fields.len()),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| Error::ParseError {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("non-numeric cell `{f}` in column {}", col + 1),
            })?;
            values.push(v);
        }
        data_rows += 1;
    }
    if n_sensors == 0 {
        return Err(Error::ParseError {
            path: path.display().to_string(),
            line: 0,
            msg: "empty file".into(),
        });
    }
    let mut series = SpeedSeries::new(
        n_sensors,
        values,
        DEFAULT_STEPS_PER_DAY,
        DEFAULT_INTERVAL_MINUTES,
    )?;
    if let Some(ids) = sensor_ids {
        series.sensor_ids = ids;
    }
    Ok(series)
}

/// Where the historical daily columns are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WindowMode {
    /// The 12-step window aligned with (and including) the prediction window
    /// on each past day.
    IncludePredictionWindow,
    /// The same window position as the current-day data (past hour).
    PreviousHour,
}

impl std::fmt::Display for WindowMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WindowMode::IncludePredictionWindow => write!(f, "include"),
            WindowMode::PreviousHour => write!(f, "prev-hour"),
        }
    }
}

impl std::str::FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "include" | "include-prediction-window" => Ok(WindowMode::IncludePredictionWindow),
            "prev-hour" | "previous-hour" => Ok(WindowMode::PreviousHour),
            other => Err(Error::InvalidConfig {
                key: "window-mode".into(),
                msg: format!("unknown window mode `{other}`"),
            }),
        }
    }
}

/// Shape metadata shared by every sample drawn from one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleLayout {
    pub n_nodes: usize,
    pub t_window: usize,
    pub horizon: usize,
    pub history_days: usize,
    pub mode: WindowMode,
}

impl SampleLayout {
    pub fn feature_dim(&self) -> usize {
        self.history_days + 1
    }
}

/// One training instance: stacked features X (NT×(P+1), timestamp-major rows,
/// historical columns oldest→newest then the current-day column) and targets
/// Y (N×n). `anchor` is the global index of the last observed current-day
/// step.
#[derive(Debug, Clone)]
pub struct Sample {
    pub x: DenseTensor,
    pub y: DenseTensor,
    pub anchor: usize,
}

/// Assemble the sample anchored at t. Fails with `InsufficientHistory` when
/// fewer than P full days precede some referenced index.
pub fn assemble_sample(
    series: &SpeedSeries,
    anchor: usize,
    layout: &SampleLayout,
) -> Result<Sample> {
    let (t_window, horizon, p_days) = (layout.t_window, layout.horizon, layout.history_days);
    let n = series.n_sensors();
    if n != layout.n_nodes {
        return Err(Error::ShapeMismatch {
            op: "assemble_sample",
            lhs: vec![series.n_sensors()],
            rhs: vec![layout.n_nodes],
        });
    }
    if anchor + 1 < t_window {
        return Err(Error::InvalidArgument {
            op: "assemble_sample",
            msg: format!("anchor {anchor} leaves no room for a {t_window}-step window"),
        });
    }
    if anchor + horizon >= series.n_rows() {
        return Err(Error::InvalidArgument {
            op: "assemble_sample",
            msg: format!(
                "anchor {anchor} + horizon {horizon} escapes the {}-row series",
                series.n_rows()
            ),
        });
    }
    let spd = series.steps_per_day as i64;
    let base_for_history = |w: i64| -> i64 {
        match layout.mode {
            WindowMode::IncludePredictionWindow => {
                anchor as i64 + horizon as i64 - t_window as i64 + w
            }
            WindowMode::PreviousHour => anchor as i64 - t_window as i64 + w,
        }
    };
    if p_days > 0 {
        let earliest = base_for_history(1) - (p_days as i64) * spd;
        if earliest < 0 {
            return Err(Error::InsufficientHistory {
                anchor,
                needed: earliest,
            });
        }
    }

    let d = p_days + 1;
    let mut x = DenseTensor::zeros(&[n * t_window, d]);
    for w in 1..=t_window {
        let current_row = series.row(anchor + w - t_window);
        let hist_base = base_for_history(w as i64);
        for i in 0..n {
            let xrow = x.row_mut((w - 1) * n + i);
            // columns 0..P-1: oldest day first, so column P-p holds day p back
            for p in 1..=p_days {
                let idx = (hist_base - p as i64 * spd) as usize;
                xrow[p_days - p] = series.value(idx, i);
            }
            xrow[p_days] = current_row[i];
        }
    }
    let mut y = DenseTensor::zeros(&[n, horizon]);
    for h in 1..=horizon {
        let row = series.row(anchor + h);
        for i in 0..n {
            y.row_mut(i)[h - 1] = row[i];
        }
    }
    Ok(Sample { x, y, anchor })
}

/// Assemble every viable sample with anchors in `[first_anchor, last_anchor]`
/// stepping by `stride`; anchors lacking history are skipped and counted.
pub fn assemble_samples(
    series: &SpeedSeries,
    layout: &SampleLayout,
    first_anchor: usize,
    last_anchor: usize,
    stride: usize,
) -> Result<(Vec<Sample>, usize)> {
    let mut out = Vec::new();
    let mut skipped = 0usize;
    let mut t = first_anchor;
    while t <= last_anchor {
        match assemble_sample(series, t, layout) {
            Ok(s) => out.push(s),
            Err(Error::InsufficientHistory { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
        t += stride.max(1);
    }
    Ok((out, skipped))
}

/// Chronological split boundaries, always on day edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: usize,
    pub val_end: usize,
    pub n_rows: usize,
}

#[derive(Debug, Clone, Copy)]
pub enum SplitRule {
    /// 70% of days train, 15% test (both floored), remainder validation.
    Default,
    /// Explicit timestamp boundaries; both must fall on day edges.
    Explicit { train_end: usize, val_end: usize },
}

pub fn make_splits(series: &SpeedSeries, rule: SplitRule) -> Result<SplitSpec> {
    let spd = series.steps_per_day;
    let n_rows = series.n_rows();
    let (train_end, val_end) = match rule {
        SplitRule::Default => {
            let days = series.n_days();
            let train_days = (0.70 * days as f64).floor() as usize;
            let test_days = (0.15 * days as f64).floor() as usize;
            let val_days = days - train_days - test_days;
            (train_days * spd, (train_days + val_days) * spd)
        }
        SplitRule::Explicit { train_end, val_end } => {
            if train_end % spd != 0 || val_end % spd != 0 {
                return Err(Error::InvalidSplit(format!(
                    "boundaries ({train_end}, {val_end}) must fall on {spd}-step day edges"
                )));
            }
            (train_end, val_end)
        }
    };
    if train_end == 0 || train_end >= val_end || val_end > n_rows {
        return Err(Error::InvalidSplit(format!(
            "need 0 < train_end ({train_end}) < val_end ({val_end}) <= rows ({n_rows})"
        )));
    }
    Ok(SplitSpec {
        train_end,
        val_end,
        n_rows,
    })
}

/// Anchors whose current-day window and targets both lie inside
/// `[split_start, split_end)`. Historical columns may reach earlier splits;
/// that is the only permitted cross-boundary reference.
pub fn split_anchor_range(
    layout: &SampleLayout,
    split_start: usize,
    split_end: usize,
) -> Option<(usize, usize)> {
    let first = split_start + layout.t_window - 1;
    let last = split_end.checked_sub(layout.horizon + 1)?;
    (first <= last).then_some((first, last))
}

/// Z-score parameters fitted on the training split only.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScalerParams {
    pub mean: f64,
    pub std: f64,
}

impl ScalerParams {
    /// No-op scaler for unscaled runs.
    pub fn identity() -> Self {
        ScalerParams {
            mean: 0.0,
            std: 1.0,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }

    pub fn apply_tensor(&self, t: &DenseTensor) -> DenseTensor {
        let mut out = t.clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v = self.apply(*v));
        out
    }

    pub fn invert_tensor(&self, t: &DenseTensor) -> DenseTensor {
        let mut out = t.clone();
        out.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = self.invert(*v));
        out
    }
}

/// Fit mean/std over all sensors on rows before `split.train_end`. A constant
/// training split falls back to std = 1.
pub fn fit_scaler(series: &SpeedSeries, split: &SplitSpec) -> ScalerParams {
    let n = split.train_end * series.n_sensors();
    let mut mean = 0.0;
    for t in 0..split.train_end {
        mean += series.row(t).iter().sum::<f64>();
    }
    mean /= n as f64;
    let mut var = 0.0;
    for t in 0..split.train_end {
        var += series.row(t).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    var /= n as f64;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    ScalerParams { mean, std }
}

/// Knobs for the synthetic generator. The recursion is
/// x_{t+1} = ar_self·x_t + ar_neighbor·(R·x_t) + drift + forcing + noise,
/// clipped at 0, where R is the row-normalized adjacency (isolated nodes keep
/// their own state) and drift is chosen so the stationary mean is
/// `mean_level`.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub ar_self: f64,
    pub ar_neighbor: f64,
    pub noise_sigma: f64,
    /// Amplitude of the per-step sinusoidal forcing; the stationary daily
    /// swing is roughly an order of magnitude larger because the AR dynamics
    /// amplify slow forcing.
    pub daily_amplitude: f64,
    pub mean_level: f64,
    pub burn_in_days: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            ar_self: 0.55,
            ar_neighbor: 0.35,
            noise_sigma: 0.5,
            daily_amplitude: 3.0,
            mean_level: 60.0,
            burn_in_days: 1,
        }
    }
}

pub fn generate_synthetic(
    n_nodes: usize,
    days: usize,
    seed: u64,
    graph: &PhysicalGraph,
) -> Result<SpeedSeries> {
    generate_synthetic_with(&SyntheticConfig::default(), n_nodes, days, seed, graph)
}

pub fn generate_synthetic_with(
    cfg: &SyntheticConfig,
    n_nodes: usize,
    days: usize,
    seed: u64,
    graph: &PhysicalGraph,
) -> Result<SpeedSeries> {
    if graph.n_nodes != n_nodes {
        return Err(Error::ShapeMismatch {
            op: "generate_synthetic",
            lhs: vec![n_nodes],
            rhs: vec![graph.n_nodes],
        });
    }
    let spd = DEFAULT_STEPS_PER_DAY;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phases: Vec<f64> = (0..n_nodes)
        .map(|_| rng.gen::<f64>() * std::f64::consts::TAU)
        .collect();
    let degrees = graph.adjacency.row_sums();
    let drift = cfg.mean_level * (1.0 - cfg.ar_self - cfg.ar_neighbor);

    let mut state: Vec<f64> = (0..n_nodes)
        .map(|_| cfg.mean_level + normal.sample(&mut rng))
        .collect();
    let mut next = vec![0.0f64; n_nodes];
    let total = (days + cfg.burn_in_days) * spd;
    let keep_from = cfg.burn_in_days * spd;
    let mut values = Vec::with_capacity(days * spd * n_nodes);
    for t in 0..total {
        let angle = std::f64::consts::TAU * (((t + 1) % spd) as f64) / spd as f64;
        for i in 0..n_nodes {
            let coupled = if degrees[i] > 0.0 {
                let (cols, ws) = graph.adjacency.row(i);
                let s: f64 = cols.iter().zip(ws).map(|(&c, &w)| w * state[c]).sum();
                s / degrees[i]
            } else {
                state[i]
            };
            let forcing = cfg.daily_amplitude * (angle + phases[i]).sin();
            let noise = cfg.noise_sigma * normal.sample(&mut rng);
            next[i] =
                (cfg.ar_self * state[i] + cfg.ar_neighbor * coupled + drift + forcing + noise)
                    .max(0.0);
        }
        state.copy_from_slice(&next);
        if t >= keep_from {
            values.extend_from_slice(&state);
        }
    }
    SpeedSeries::new(n_nodes, values, spd, DEFAULT_INTERVAL_MINUTES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_adjacency_gaussian_neighbor;

    fn tiny_series(rows: usize, sensors: usize, spd: usize) -> SpeedSeries {
        let values: Vec<f64> = (0..rows * sensors).map(|k| k as f64).collect();
        SpeedSeries::new(sensors, values, spd, 5).unwrap()
    }

    #[test]
    fn load_accepts_whole_days_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("speeds.csv");
        let mut body = String::from("s1,s2,s3\n");
        for t in 0..288 {
            body.push_str(&format!("{t},{t},{t}\n"));
        }
        std::fs::write(&p, &body).unwrap();
        let s = load_speed_csv(&p).unwrap();
        assert_eq!(s.n_sensors(), 3);
        assert_eq!(s.n_days(), 1);
        assert_eq!(s.sensor_ids, vec!["s1", "s2", "s3"]);
    }

    #[test]
    fn load_rejects_partial_day() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("speeds.csv");
        let mut body = String::new();
        for t in 0..289 {
            body.push_str(&format!("{t},{t},{t}\n"));
        }
        std::fs::write(&p, &body).unwrap();
        assert!(matches!(load_speed_csv(&p), Err(Error::PartialDay { .. })));
    }

    #[test]
    fn load_rejects_ragged_and_nonnumeric() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "1,2,3\n4,5\n").unwrap();
        let err = load_speed_csv(&p).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");

        std::fs::write(&p, "1,2\n3,oops\n").unwrap();
        let err = load_speed_csv(&p).unwrap_err().to_string();
        assert!(err.contains("oops"), "{err}");
    }

    #[test]
    fn assemble_degenerate_history_free_sample() {
        let spd = 12;
        let series = tiny_series(3 * spd, 2, spd);
        let layout = SampleLayout {
            n_nodes: 2,
            t_window: 4,
            horizon: 2,
            history_days: 0,
            mode: WindowMode::IncludePredictionWindow,
        };
        let s = assemble_sample(&series, 10, &layout).unwrap();
        assert_eq!(s.x.shape(), &[8, 1]);
        // current window rows are series[7..=10]
        for w in 1..=4usize {
            for i in 0..2 {
                assert_eq!(s.x.at((w - 1) * 2 + i, 0), series.value(6 + w, i));
            }
        }
        assert_eq!(s.y.at(0, 0), series.value(11, 0));
        assert_eq!(s.y.at(1, 1), series.value(12, 1));
    }

    #[test]
    fn assemble_formulas_read_back_exactly() {
        let spd = 24;
        let series = tiny_series(6 * spd, 3, spd);
        for mode in [WindowMode::IncludePredictionWindow, WindowMode::PreviousHour] {
            let layout = SampleLayout {
                n_nodes: 3,
                t_window: 6,
                horizon: 4,
                history_days: 2,
                mode,
            };
            let t = 3 * spd + 7;
            let s = assemble_sample(&series, t, &layout).unwrap();
            for w in 1..=6usize {
                for i in 0..3 {
                    let r = (w - 1) * 3 + i;
                    assert_eq!(s.x.at(r, 2), series.value(t + w - 6, i));
                    for p in 1..=2usize {
                        let base = match mode {
                            WindowMode::IncludePredictionWindow => t + 4 - 6 + w,
                            WindowMode::PreviousHour => t - 6 + w,
                        };
                        assert_eq!(s.x.at(r, 2 - p), series.value(base - p * spd, i));
                    }
                }
            }
            for h in 1..=4usize {
                for i in 0..3 {
                    assert_eq!(s.y.at(i, h - 1), series.value(t + h, i));
                }
            }
        }
    }

    #[test]
    fn include_mode_history_is_prev_hour_shifted_by_horizon() {
        let spd = 24;
        let series = tiny_series(6 * spd, 2, spd);
        let mk = |mode| SampleLayout {
            n_nodes: 2,
            t_window: 5,
            horizon: 5,
            history_days: 2,
            mode,
        };
        let t = 4 * spd;
        let inc = assemble_sample(&series, t, &mk(WindowMode::IncludePredictionWindow)).unwrap();
        let prev = assemble_sample(&series, t, &mk(WindowMode::PreviousHour)).unwrap();
        // include-mode historical index = previous-hour index + n; with the
        // ramp series that means a constant offset of n in the stored value
        for r in 0..10 {
            for c in 0..2 {
                assert_eq!(inc.x.at(r, c), prev.x.at(r, c) + (5 * 2) as f64);
            }
        }
    }

    #[test]
    fn periodic_series_history_equals_targets() {
        // every day repeats the same pattern, so in include mode each
        // historical column equals the aligned target-period value
        let spd = 24;
        let days = 10;
        let n = 2;
        let mut values = Vec::new();
        for t in 0..days * spd {
            for i in 0..n {
                values.push(((t % spd) * 10 + i) as f64);
            }
        }
        let series = SpeedSeries::new(n, values, spd, 5).unwrap();
        let layout = SampleLayout {
            n_nodes: n,
            t_window: 6,
            horizon: 6,
            history_days: 7,
            mode: WindowMode::IncludePredictionWindow,
        };
        let t = 8 * spd + 11;
        let s = assemble_sample(&series, t, &layout).unwrap();
        // with T = n, aligned window position w corresponds to target h = w
        for w in 1..=6usize {
            for i in 0..n {
                let r = (w - 1) * n + i;
                for c in 0..7 {
                    assert_eq!(s.x.at(r, c), s.y.at(i, w - 1));
                }
            }
        }
    }

    #[test]
    fn insufficient_history_reported_and_skipped() {
        let spd = 24;
        let series = tiny_series(3 * spd, 2, spd);
        let layout = SampleLayout {
            n_nodes: 2,
            t_window: 4,
            horizon: 2,
            history_days: 2,
            mode: WindowMode::PreviousHour,
        };
        assert!(matches!(
            assemble_sample(&series, 10, &layout),
            Err(Error::InsufficientHistory { .. })
        ));
        let (samples, skipped) = assemble_samples(&series, &layout, 3, 3 * spd - 3, 1).unwrap();
        assert!(skipped > 0);
        assert!(!samples.is_empty());
        // all surviving samples have full history
        assert!(samples.iter().all(|s| s.anchor + 4 >= 2 * spd + 4));
    }

    #[test]
    fn default_split_rounding_matches_fixed_rule() {
        let spd = 12;
        let series = tiny_series(10 * spd, 1, spd);
        let split = make_splits(&series, SplitRule::Default).unwrap();
        // 10 days -> 7 train / 2 val / 1 test
        assert_eq!(split.train_end, 7 * spd);
        assert_eq!(split.val_end, 9 * spd);
    }

    #[test]
    fn explicit_split_boundaries() {
        let spd = 12;
        let series = tiny_series(10 * spd, 1, spd);
        let split = make_splits(
            &series,
            SplitRule::Explicit {
                train_end: 5 * spd,
                val_end: 8 * spd,
            },
        )
        .unwrap();
        assert_eq!(split.train_end, 5 * spd);
        // off-day-edge boundary rejected
        assert!(make_splits(
            &series,
            SplitRule::Explicit {
                train_end: 5 * spd + 3,
                val_end: 8 * spd,
            }
        )
        .is_err());
        // inverted boundaries rejected
        assert!(make_splits(
            &series,
            SplitRule::Explicit {
                train_end: 8 * spd,
                val_end: 5 * spd,
            }
        )
        .is_err());
    }

    #[test]
    fn scaler_basics_and_round_trip() {
        let spd = 4;
        let series = SpeedSeries::new(1, vec![50.0, 60.0, 70.0, 60.0], spd, 5).unwrap();
        let split = SplitSpec {
            train_end: 4,
            val_end: 4,
            n_rows: 4,
        };
        let sc = fit_scaler(&series, &split);
        assert!((sc.mean - 60.0).abs() < 1e-12);
        assert!((sc.apply(70.0) - (70.0 - 60.0) / sc.std).abs() < 1e-12);
        assert!((sc.invert(sc.apply(53.7)) - 53.7).abs() < 1e-12);

        let constant = SpeedSeries::new(1, vec![42.0; 4], spd, 5).unwrap();
        let sc = fit_scaler(&constant, &split);
        assert_eq!(sc.std, 1.0);
        assert_eq!(sc.apply(42.0), 0.0);
    }

    #[test]
    fn scaler_hand_example() {
        let sc = ScalerParams {
            mean: 60.0,
            std: 10.0,
        };
        assert_eq!(sc.apply(70.0), 1.0);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let g = build_adjacency_gaussian_neighbor(&[(0, 1, 0.1), (1, 2, 0.1)], 3, 0.1).unwrap();
        let a = generate_synthetic(3, 2, 7, &g).unwrap();
        let b = generate_synthetic(3, 2, 7, &g).unwrap();
        assert_eq!(a.row(100), b.row(100));
        let c = generate_synthetic(3, 2, 8, &g).unwrap();
        assert_ne!(a.row(100), c.row(100));
    }

    #[test]
    fn noiseless_flat_generator_converges_to_fixed_profile() {
        let g = build_adjacency_gaussian_neighbor(&[(0, 1, 0.1)], 2, 0.1).unwrap();
        let cfg = SyntheticConfig {
            noise_sigma: 0.0,
            daily_amplitude: 0.0,
            ..SyntheticConfig::default()
        };
        let s = generate_synthetic_with(&cfg, 2, 2, 1, &g).unwrap();
        let last = s.n_rows() - 1;
        // persistence error collapses once the transient has decayed
        for i in 0..2 {
            assert!((s.value(last, i) - s.value(last - 1, i)).abs() < 1e-9);
            assert!((s.value(last, i) - 60.0).abs() < 1e-6);
        }
    }

    #[test]
    fn adjacent_nodes_more_correlated_than_distant_ones() {
        // ring of 6: measure lag-1 cross-correlation on day-differenced
        // series (removes the deterministic daily component)
        let edges: Vec<(usize, usize, f64)> = (0..6).map(|i| (i, (i + 1) % 6, 0.1)).collect();
        let g = build_adjacency_gaussian_neighbor(&edges, 6, 0.1).unwrap();
        let s = generate_synthetic(6, 8, 11, &g).unwrap();
        let spd = s.steps_per_day;
        let rows = s.n_rows() - spd;
        let diff = |t: usize, i: usize| s.value(t + spd, i) - s.value(t, i);
        let corr = |i: usize, j: usize| {
            let (mut si, mut sj, mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0, 0.0, 0.0);
            let m = (rows - 1) as f64;
            for t in 0..rows - 1 {
                let (a, b) = (diff(t, i), diff(t + 1, j));
                si += a;
                sj += b;
                sij += a * b;
                sii += a * a;
                sjj += b * b;
            }
            (sij / m - si / m * (sj / m))
                / ((sii / m - (si / m) * (si / m)).sqrt() * (sjj / m - (sj / m) * (sj / m)).sqrt())
        };
        let mut adjacent = Vec::new();
        let mut distant = Vec::new();
        for i in 0..6usize {
            for j in 0..6usize {
                if i == j {
                    continue;
                }
                let hop = (i as i32 - j as i32).rem_euclid(6).min((j as i32 - i as i32).rem_euclid(6));
                if hop == 1 {
                    adjacent.push(corr(i, j));
                } else if hop == 3 {
                    distant.push(corr(i, j));
                }
            }
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        assert!(median(&mut adjacent) > median(&mut distant));
    }
}
