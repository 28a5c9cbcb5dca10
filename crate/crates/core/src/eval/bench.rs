use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{roc_curve, RocResult};
use crate::error::{Error, Result};
use crate::ingest::{Dataset, LabelSet};
use crate::model::MetricSeries;
use crate::scoring::{score_series, Aggregator, DetectorConfig, SpikeMode};

pub const DEFAULT_L_GRID: [usize; 10] = [5, 10, 15, 20, 25, 30, 35, 40, 45, 50];
pub const DEFAULT_THRESHOLDS: [f64; 10] = [0.005, 0.01, 0.02, 0.04, 0.08, 0.16, 0.32, 0.64, 0.8, 0.95];
pub const DEFAULT_SCALE_LENGTHS: [usize; 7] = [100, 200, 300, 400, 500, 600, 700];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccuracyConfig {
    pub l_grid: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub aggregator: Aggregator,
    pub spike_mode: SpikeMode,
}

impl Default for AccuracyConfig {
    fn default() -> Self {
        AccuracyConfig {
            l_grid: DEFAULT_L_GRID.to_vec(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            aggregator: Aggregator::default(),
            spike_mode: SpikeMode::default(),
        }
    }
}

/// One history length of the accuracy bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRun {
    pub l: usize,
    pub thresholds: Vec<f64>,
    pub roc: Option<RocResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub runs: Vec<AccuracyRun>,
    /// Mean AUC over the runs that succeeded.
    pub mean_auc: Option<f64>,
}

/// Pooled aggregated scores and labels over every non-warmup index.
fn scored_points(dataset: &Dataset, labels: &LabelSet, config: &DetectorConfig) -> Result<(Vec<f64>, Vec<bool>)> {
    let (mut scores, mut flags) = (Vec::new(), Vec::new());
    for series in &dataset.series {
        let truth = labels.for_series(series);
        for r in score_series(series, config)? {
            if !r.warmup {
                scores.push(r.aggregated);
                flags.push(truth[r.timestamp_index]);
            }
        }
    }
    Ok((scores, flags))
}

/// Scores the dataset once per history length and sweeps the threshold
/// grid over the pooled scores. A failing length is recorded and skipped.
pub fn run_accuracy_bench(dataset: &Dataset, labels: &LabelSet, config: &AccuracyConfig) -> AccuracyReport {
    let runs: Vec<AccuracyRun> = config
        .l_grid
        .par_iter()
        .map(|&l| {
            let detector = DetectorConfig {
                history: l,
                aggregator: config.aggregator,
                spike_mode: config.spike_mode,
                ..DetectorConfig::default()
            };
            let outcome = scored_points(dataset, labels, &detector)
                .and_then(|(scores, flags)| roc_curve(&scores, &flags, &config.thresholds, l));
            let (roc, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            AccuracyRun {
                l,
                thresholds: config.thresholds.clone(),
                roc,
                error,
            }
        })
        .collect();
    let aucs: Vec<f64> = runs.iter().filter_map(|r| r.roc.as_ref().map(|r| r.auc)).collect();
    let mean_auc = (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64);
    AccuracyReport { runs, mean_auc }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the x or y values do not vary.
    pub r_squared: Option<f64>,
}

/// Least-squares line through `(x, y)`; needs two distinct x values.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = (syy > 0.0).then(|| (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0));
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub length: usize,
    /// Median wall time over the repetitions.
    pub seconds: f64,
    pub mean_seconds: f64,
    pub repetitions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub rows: Vec<ScaleRow>,
    /// Fit of median seconds against length; absent for a single length.
    pub fit: Option<LinearFit>,
}

/// Times `detector` on the first `length` points of `series` for each
/// length, sequentially.
pub fn run_scalability_bench<F>(
    series: &MetricSeries,
    lengths: &[usize],
    repetitions: usize,
    mut detector: F,
) -> Result<ScaleReport>
where
    F: FnMut(&MetricSeries) -> Result<()>,
{
    if repetitions == 0 {
        return Err(Error::InvalidParameter("repetitions must be positive".into()));
    }
    if let Some(&too_long) = lengths.iter().find(|&&l| l > series.len() || l == 0) {
        return Err(Error::InvalidParameter(format!(
            "length {too_long} outside 1..={}",
            series.len()
        )));
    }
    let prefixes: Vec<MetricSeries> = lengths
        .iter()
        .map(|&length| MetricSeries {
            values: series.values[..length].to_vec(),
            missing: series.missing[..length].to_vec(),
            ..series.clone()
        })
        .collect();
    // Repetitions run round-robin over the lengths so slow machine drift
    // spreads over every row instead of landing on one length.
    let mut times = vec![Vec::with_capacity(repetitions); lengths.len()];
    for _ in 0..repetitions {
        for (prefix, row_times) in prefixes.iter().zip(&mut times) {
            let start = Instant::now();
            detector(prefix)?;
            row_times.push(start.elapsed().as_secs_f64());
        }
    }
    let rows: Vec<ScaleRow> = lengths
        .iter()
        .zip(times)
        .map(|(&length, mut times)| {
            let mean_seconds = times.iter().sum::<f64>() / repetitions as f64;
            times.sort_by(f64::total_cmp);
            let mid = times.len() / 2;
            let seconds = if times.len() % 2 == 1 {
                times[mid]
            } else {
                (times[mid - 1] + times[mid]) / 2.0
            };
            ScaleRow {
                length,
                seconds,
                mean_seconds,
                repetitions,
            }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.length as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    Ok(ScaleReport {
        fit: linear_fit(&xs, &ys),
        rows,
    })
}
