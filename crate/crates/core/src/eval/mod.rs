//! ROC evaluation, the accuracy and scalability benches, and the synthetic
//! labeled-data generator.

mod bench;
mod synth;

pub use bench::{
    linear_fit, run_accuracy_bench, run_scalability_bench, AccuracyConfig, AccuracyReport, AccuracyRun, LinearFit,
    ScaleReport, ScaleRow, DEFAULT_L_GRID, DEFAULT_SCALE_LENGTHS, DEFAULT_THRESHOLDS,
};
pub use synth::{synth_generate, AnomalyKind, AnomalyMix, InjectedAnomaly, SynthOutput, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// `(fpr, tpr)` sorted by fpr, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub threshold_grid: Vec<f64>,
    /// History length the scores were produced with.
    pub param_value: usize,
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (rank-sum form).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut rank_sum, mut i) = (0.0, 0);
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // average 1-based rank of the tie block
        let rank = (i + j + 2) as f64 / 2.0;
        rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&b| b).count() as f64;
    let neg = labels.len() as f64 - pos;
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Misaligned(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&b| b).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// ROC points from flagging the top `ceil(q * N)` scores for each fraction
/// `q`; equal scores are ranked by index. The AUC comes from the full
/// score ordering, not from the sampled points.
pub fn roc_curve(scores: &[f64], labels: &[bool], thresholds: &[f64], param_value: usize) -> Result<RocResult> {
    check_inputs(scores, labels)?;
    if let Some(q) = thresholds.iter().find(|q| !(0.0..=1.0).contains(*q)) {
        return Err(Error::InvalidParameter(format!("threshold fraction {q} outside [0, 1]")));
    }
    let n = scores.len();
    let pos = labels.iter().filter(|&&b| b).count() as f64;
    let neg = n as f64 - pos;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // true positives among the first i flagged
    let mut tp_prefix = vec![0usize; n + 1];
    for (i, &k) in order.iter().enumerate() {
        tp_prefix[i + 1] = tp_prefix[i] + usize::from(labels[k]);
    }
    let mut points = vec![(0.0, 0.0), (1.0, 1.0)];
    for &q in thresholds {
        let flagged = ((q * n as f64).ceil() as usize).min(n);
        let tp = tp_prefix[flagged] as f64;
        let fp = flagged as f64 - tp;
        points.push((fp / neg, tp / pos));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(RocResult {
        points,
        auc: auc(scores, labels)?,
        threshold_grid: thresholds.to_vec(),
        param_value,
    })
}
