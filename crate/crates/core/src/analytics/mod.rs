//! Cross-node computations behind the monitoring views.

mod embed;
mod kde;
mod lof;
mod pca;
mod rollup;

pub use embed::{embed_2d, pca_2d, EmbedMethod, Embedding, TsneConfig};
pub use kde::{kde_density, kde_eval, DensityField, Kernel};
pub use lof::{lof_scores, normalize_lof, LofScores};
pub use pca::pca_project;
pub use rollup::{
    rank_nodes, spatial_rollup, temporal_rollup, CenterRollup, ClusterRollup, NodeRank,
    RollupPoint,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map of `values` onto `[-1, 1]` (min to -1, max to +1).
///
/// A constant series maps to all zeros.
pub fn normalize_series(values: &[f64]) -> Vec<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| 2.0 * (v - min) / span - 1.0).collect()
}

/// Flattened per-node feature vector, metric-major within each timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// Metric count.
    pub r: usize,
    /// Timestamp count.
    pub n: usize,
}

/// Interleaves aligned metric rows as `[m1_t1, m2_t1, ..., mr_t1, m1_t2, ...]`.
pub fn node_feature_vector(metrics: &[&[f64]]) -> Result<FeatureVector> {
    let r = metrics.len();
    let n = metrics.first().map_or(0, |m| m.len());
    if metrics.iter().any(|m| m.len() != n) {
        return Err(Error::Misaligned(
            "feature vector metrics have different lengths".into(),
        ));
    }
    let mut values = Vec::with_capacity(r * n);
    for t in 0..n {
        values.extend(metrics.iter().map(|m| m[t]));
    }
    Ok(FeatureVector { values, r, n })
}

/// Feature vectors for many nodes with every metric standardized across
/// all nodes and timestamps (zero mean, unit variance; constant metrics
/// become zero).
///
/// `nodes[i][m]` is metric `m` of node `i`; every node must carry the same
/// metrics over the same range.
pub fn standardized_feature_vectors(nodes: &[Vec<Vec<f64>>]) -> Result<Vec<FeatureVector>> {
    let Some(first) = nodes.first() else {
        return Ok(Vec::new());
    };
    let r = first.len();
    let n = first.first().map_or(0, |m| m.len());
    if nodes
        .iter()
        .any(|node| node.len() != r || node.iter().any(|m| m.len() != n))
    {
        return Err(Error::Misaligned(
            "nodes carry different metric sets or ranges".into(),
        ));
    }
    let mut scaled: Vec<Vec<Vec<f64>>> = nodes.to_vec();
    for m in 0..r {
        let count = (nodes.len() * n) as f64;
        let mean = nodes.iter().flat_map(|node| node[m].iter()).sum::<f64>() / count;
        let var = nodes
            .iter()
            .flat_map(|node| node[m].iter())
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / count;
        let std = var.sqrt();
        for node in scaled.iter_mut() {
            for v in node[m].iter_mut() {
                *v = if std > 0.0 { (*v - mean) / std } else { 0.0 };
            }
        }
    }
    scaled
        .iter()
        .map(|node| {
            let rows: Vec<&[f64]> = node.iter().map(Vec::as_slice).collect();
            node_feature_vector(&rows)
        })
        .collect()
}

/// Statistics shown by a collapsed (magnet) glyph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetSummary {
    pub max: f64,
    pub mean: f64,
    pub min: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn magnet_summary(values: &[f64]) -> Result<MagnetSummary> {
    if values.is_empty() {
        return Err(Error::EmptyRange("magnet summary over no values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MagnetSummary {
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        std: var.sqrt(),
    })
}

/// Mean of a metric over every carrying node and timestamp of a cluster.
///
/// Nodes without the metric are passed as empty slices and ignored.
pub fn cluster_baseline(series: &[&[f64]]) -> Option<f64> {
    let (sum, count) = series
        .iter()
        .flat_map(|s| s.iter())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}
