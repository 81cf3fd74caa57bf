//! Metrics (MAE, cumulative error tables), hidden-activation variance, and the
//! head × loss ablation grid.
//!
//! Computation happens in radians; degrees appear only in reports.

use std::fmt;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::head::{HeadKind, PoseAngles, ANGLE_NAMES, NUM_ANGLES};
use crate::losses::LossConfig;
use crate::network::ForwardTrace;
use crate::parallel::{self, Execution};
use crate::trainer::{self, TrainConfig, TrainState};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MaeReport {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub avg: f64,
}

impl MaeReport {
    pub fn from_angles(per_angle: [f64; NUM_ANGLES]) -> Self {
        Self {
            yaw: per_angle[0],
            pitch: per_angle[1],
            roll: per_angle[2],
            avg: (per_angle[0] + per_angle[1] + per_angle[2]) / 3.0,
        }
    }

    pub fn per_angle(&self) -> [f64; NUM_ANGLES] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn to_degrees(self) -> Self {
        Self {
            yaw: self.yaw.to_degrees(),
            pitch: self.pitch.to_degrees(),
            roll: self.roll.to_degrees(),
            avg: self.avg.to_degrees(),
        }
    }
}

fn check_lengths(predictions: &[PoseAngles], truths: &[PoseAngles]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            truths: truths.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Per-angle mean absolute error, radians. No wrap-around.
pub fn mae(predictions: &[PoseAngles], truths: &[PoseAngles]) -> Result<MaeReport> {
    check_lengths(predictions, truths)?;
    let mut sums = [0.0; NUM_ANGLES];
    for (p, t) in predictions.iter().zip(truths) {
        let (p, t) = (p.to_array(), t.to_array());
        for d in 0..NUM_ANGLES {
            sums[d] += (p[d] - t[d]).abs();
        }
    }
    let n = predictions.len() as f64;
    Ok(MaeReport::from_angles(sums.map(|s| s / n)))
}

/// Empirical CDF of absolute error per angle, sampled at degree thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct CedTable {
    pub thresholds_deg: Vec<f64>,
    /// `fractions[angle][k]`: share of samples with error ≤ `thresholds_deg[k]`.
    pub fractions: [Vec<f64>; NUM_ANGLES],
}

impl CedTable {
    pub fn is_monotone(&self) -> bool {
        self.fractions
            .iter()
            .all(|f| f.windows(2).all(|w| w[0] <= w[1]) && f.iter().all(|x| (0.0..=1.0).contains(x)))
    }
}

/// 1°, 2°, …, 30°.
pub fn default_thresholds() -> Vec<f64> {
    (1..=30).map(f64::from).collect()
}

pub fn ced(predictions: &[PoseAngles], truths: &[PoseAngles], thresholds_deg: &[f64]) -> Result<CedTable> {
    check_lengths(predictions, truths)?;
    if thresholds_deg.windows(2).any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less)) {
        return Err(Error::UnsortedThresholds);
    }
    let n = predictions.len() as f64;
    let mut errors: [Vec<f64>; NUM_ANGLES] = Default::default();
    for (p, t) in predictions.iter().zip(truths) {
        let (p, t) = (p.to_array(), t.to_array());
        for d in 0..NUM_ANGLES {
            errors[d].push((p[d] - t[d]).abs().to_degrees());
        }
    }
    let fractions = errors.map(|mut e| {
        e.sort_by(f64::total_cmp);
        thresholds_deg
            .iter()
            .map(|&th| e.partition_point(|&x| x <= th) as f64 / n)
            .collect()
    });
    Ok(CedTable {
        thresholds_deg: thresholds_deg.to_vec(),
        fractions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], bins: usize, upper: Option<f64>) -> Self {
        let bins = bins.max(1);
        let max = upper.unwrap_or_else(|| values.iter().copied().fold(0.0, f64::max));
        let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
        let edges: Vec<f64> = (0..=bins).map(|k| k as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let k = ((v / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        Self { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    /// One population variance per measured input.
    pub variances: Vec<f64>,
    pub histogram: Histogram,
}

impl ActivationStats {
    pub fn mean(&self) -> f64 {
        self.variances.iter().sum::<f64>() / self.variances.len() as f64
    }
}

/// Population variance `Σ (a_i - ā)² / n` of one activation vector.
///
/// Shifted by the first element, so a constant vector gives exactly 0.
pub fn population_variance(values: &[f64]) -> f64 {
    let Some(&shift) = values.first() else {
        return 0.0;
    };
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v - shift).sum::<f64>() / n;
    values.iter().map(|v| (v - shift - mean).powi(2)).sum::<f64>() / n
}

/// Variance of `layer`'s activation vector, one value per trace.
pub fn activation_variance(
    traces: &[ForwardTrace],
    layer: usize,
    bins: usize,
    upper: Option<f64>,
) -> Result<ActivationStats> {
    if traces.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut variances = Vec::with_capacity(traces.len());
    for t in traces {
        let acts = t.activations.get(layer).ok_or(Error::LayerOutOfRange {
            index: layer,
            layers: t.num_layers(),
        })?;
        if acts.is_empty() {
            return Err(Error::EmptyInput);
        }
        variances.push(population_variance(acts));
    }
    let histogram = Histogram::new(&variances, bins, upper);
    Ok(ActivationStats { variances, histogram })
}

/// Traces of every sample in `dataset` through the state's backbone.
pub fn collect_traces(state: &TrainState, dataset: &Dataset) -> Result<Vec<ForwardTrace>> {
    dataset
        .samples()
        .iter()
        .map(|s| Ok(state.model.backbone.forward(&s.features)?.1))
        .collect()
}

/// Predicts every sample in `dataset` in strict mode.
pub fn predict_dataset(state: &TrainState, dataset: &Dataset, exec: Execution) -> Result<Vec<PoseAngles>> {
    parallel::map_ordered(dataset.samples(), exec, |s| trainer::predict(state, &s.features))
        .into_iter()
        .collect()
}

pub fn evaluate(state: &TrainState, dataset: &Dataset, exec: Execution) -> Result<MaeReport> {
    let preds = predict_dataset(state, dataset, exec)?;
    mae(&preds, &dataset.poses())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// β = 1.
    Mse,
    /// β from the base configuration (default 0.5).
    RankingMse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationCell {
    pub head: HeadKind,
    pub loss: LossMode,
}

impl AblationCell {
    pub const fn new(head: HeadKind, loss: LossMode) -> Self {
        Self { head, loss }
    }

    pub fn label(&self) -> &'static str {
        match (self.loss, self.head) {
            (LossMode::Mse, HeadKind::Dot) => "MSE",
            (LossMode::Mse, HeadKind::Cosine) => "MSE+Cosine",
            (LossMode::Mse, HeadKind::Arccos) => "MSE+Arccos",
            (LossMode::RankingMse, HeadKind::Dot) => "Ranking loss+MSE",
            (LossMode::RankingMse, HeadKind::Cosine) => "Ranking loss+MSE + Cosine",
            (LossMode::RankingMse, HeadKind::Arccos) => "Ranking loss+MSE + Arccos",
        }
    }

    /// The cell with the same head trained on MSE alone.
    pub fn mse_counterpart(&self) -> Self {
        Self::new(self.head, LossMode::Mse)
    }
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The six rows of the head × loss ablation, in table order.
pub fn standard_grid() -> Vec<AblationCell> {
    let mut grid = Vec::with_capacity(6);
    for loss in [LossMode::Mse, LossMode::RankingMse] {
        for head in HeadKind::ALL {
            grid.push(AblationCell::new(head, loss));
        }
    }
    grid
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: AblationCell,
    /// `(test set name, report)` in the order the test sets were given.
    pub reports: Vec<(String, MaeReport)>,
    pub final_combined_loss: f64,
}

impl AblationRow {
    pub fn report(&self, test_set: &str) -> Option<&MaeReport> {
        self.reports.iter().find(|(n, _)| n == test_set).map(|(_, r)| r)
    }
}

/// The training configuration used for one ablation cell.
pub fn cell_config(base: &TrainConfig, cell: AblationCell) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.head = cell.head;
    cfg.loss = match cell.loss {
        LossMode::Mse => LossConfig::mse_only(),
        LossMode::RankingMse => base.loss,
    };
    cfg
}

/// Trains one model per cell with otherwise identical configuration and
/// reports MAE on each test set.
pub fn run_ablation(
    train_set: &Dataset,
    test_sets: &[(&str, &Dataset)],
    grid: &[AblationCell],
    base: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    Ok(run_ablation_with_states(train_set, test_sets, grid, base)?
        .into_iter()
        .map(|(row, _)| row)
        .collect())
}

/// As [`run_ablation`], also returning each cell's trained state.
pub fn run_ablation_with_states(
    train_set: &Dataset,
    test_sets: &[(&str, &Dataset)],
    grid: &[AblationCell],
    base: &TrainConfig,
) -> Result<Vec<(AblationRow, TrainState)>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("ablation grid is empty".into()));
    }
    let exec = base.execution;
    let rows = parallel::map_ordered(grid, exec, |&cell| -> Result<(AblationRow, TrainState)> {
        let cfg = cell_config(base, cell);
        let (state, history) = trainer::train(train_set, None, &cfg)?;
        let mut reports = Vec::with_capacity(test_sets.len());
        for (name, ds) in test_sets {
            reports.push((name.to_string(), evaluate(&state, ds, Execution::Sequential)?));
        }
        let row = AblationRow {
            cell,
            reports,
            final_combined_loss: history.records.last().map_or(f64::NAN, |r| r.loss.combined),
        };
        Ok((row, state))
    });
    rows.into_iter().collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Element-wise median of several ablation runs over the same grid and test
/// sets. Each angle and the average are reduced independently.
pub fn median_rows(runs: &[Vec<AblationRow>]) -> Result<Vec<AblationRow>> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    let mut out = Vec::with_capacity(first.len());
    for (k, row) in first.iter().enumerate() {
        let mut reports = Vec::with_capacity(row.reports.len());
        for (t, (name, _)) in row.reports.iter().enumerate() {
            let mut fields: [Vec<f64>; 4] = Default::default();
            for run in runs {
                let r = &run[k].reports[t].1;
                fields[0].push(r.yaw);
                fields[1].push(r.pitch);
                fields[2].push(r.roll);
                fields[3].push(r.avg);
            }
            let [yaw, pitch, roll, avg] = fields.map(|mut v| median(&mut v));
            reports.push((name.clone(), MaeReport { yaw, pitch, roll, avg }));
        }
        let mut losses: Vec<f64> = runs.iter().map(|r| r[k].final_combined_loss).collect();
        out.push(AblationRow {
            cell: row.cell,
            reports,
            final_combined_loss: median(&mut losses),
        });
    }
    Ok(out)
}

/// Plain-text MAE table in degrees.
pub fn format_mae_table(rows: &[(String, MaeReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    let mut s = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "Method", "Yaw", "Pitch", "Roll", "Avg. MAE"
    );
    for (name, r) in rows {
        let d = r.to_degrees();
        s += &format!(
            "{:<width$}  {:>8.3}  {:>8.3}  {:>8.3}  {:>8.3}\n",
            name, d.yaw, d.pitch, d.roll, d.avg
        );
    }
    s
}

/// CSV with one row per threshold: `threshold_deg,yaw,pitch,roll`.
pub fn format_ced_csv(table: &CedTable) -> String {
    let mut s = String::from("# rankpose-ced v1\nthreshold_deg,yaw,pitch,roll\n");
    for (k, th) in table.thresholds_deg.iter().enumerate() {
        s += &format!(
            "{},{},{},{}\n",
            th, table.fractions[0][k], table.fractions[1][k], table.fractions[2][k]
        );
    }
    s
}

pub fn format_ced_table(table: &CedTable) -> String {
    let mut s = format!("{:>9}", "error≤deg");
    for name in ANGLE_NAMES {
        s += &format!("  {name:>7}");
    }
    s.push('\n');
    for (k, th) in table.thresholds_deg.iter().enumerate() {
        s += &format!("{th:>9}");
        for f in &table.fractions {
            s += &format!("  {:>6.2}%", 100.0 * f[k]);
        }
        s.push('\n');
    }
    s
}
