use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::Json;
use clouddet_core::analytics::{
    cluster_baseline, embed_2d, kde_density, lof_scores, magnet_summary, normalize_series, pca_project, rank_nodes,
    spatial_rollup, standardized_feature_vectors, temporal_rollup, CenterRollup, DensityField, EmbedMethod,
    MagnetSummary, NodeRank, TsneConfig,
};
use clouddet_core::ingest::{slice_range, DatasetManifest};
use clouddet_core::{Granularity, MetricSeries, NodePath, ScoreRecord};
use serde::Serialize;

use crate::jobs::JobResult;
use crate::{ApiError, AppState};

const DEFAULT_TOP: usize = 20;
const DEFAULT_RANK_LIMIT: usize = 50;
const DENSITY_RESOLUTION: usize = 50;
const MAX_LOF_K: usize = 20;

/// Raw query string, parsed field by field so bad values produce the
/// API's JSON error shape.
struct Params(HashMap<String, String>);

impl Params {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ApiError> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| ApiError::bad_request(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    fn float(&self, key: &str) -> Result<Option<f64>, ApiError> {
        match self.raw(key) {
            Some("∞" | "+∞") => Ok(Some(f64::INFINITY)),
            _ => {
                let v: Option<f64> = self.parse(key)?;
                if v.is_some_and(f64::is_nan) {
                    return Err(ApiError::bad_request(format!("`{key}` must be a number")));
                }
                Ok(v)
            }
        }
    }

    fn job<'a>(&'a self, state: &AppState) -> Result<Arc<JobResult>, ApiError> {
        state.jobs.resolve(self.raw("job"))
    }

    /// `[from, to)` in epoch seconds; an inverted range is rejected.
    fn range(&self) -> Result<(Option<i64>, Option<i64>), ApiError> {
        let from: Option<i64> = self.parse("from")?;
        let to: Option<i64> = self.parse("to")?;
        if let (Some(f), Some(t)) = (from, to) {
            if t <= f {
                return Err(ApiError::bad_request(format!("empty time range [{f}, {t})")));
            }
        }
        Ok((from, to))
    }
}

fn records_in<'a>(result: &'a JobResult, from: Option<i64>, to: Option<i64>) -> impl Iterator<Item = &'a ScoreRecord> {
    let (lo, hi) = result.index_range(from, to);
    result
        .records
        .iter()
        .filter(move |r| (lo..hi).contains(&r.timestamp_index))
}

fn sliced(series: &MetricSeries, from: Option<i64>, to: Option<i64>) -> MetricSeries {
    slice_range(series, from.unwrap_or(i64::MIN / 4), to.unwrap_or(i64::MAX / 4))
}

pub(crate) async fn datasets(State(state): State<Arc<AppState>>) -> Json<Vec<DatasetManifest>> {
    Json(state.store.manifests())
}

#[derive(Serialize)]
pub(crate) struct SpatialResponse {
    job_id: String,
    centers: Vec<CenterRollup>,
}

pub(crate) async fn spatial(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<SpatialResponse>, ApiError> {
    let q = Params(q);
    let top = q.parse::<usize>("top")?.unwrap_or(DEFAULT_TOP);
    let threshold = q.float("threshold")?.unwrap_or(0.0);
    let (from, to) = q.range()?;
    let result = q.job(&state)?;
    let records: Vec<ScoreRecord> = records_in(&result, from, to).cloned().collect();
    let mut centers = spatial_rollup(&records, &result.dataset.manifest.nodes, threshold);
    centers.truncate(top);
    Ok(Json(SpatialResponse {
        job_id: result.job_id.clone(),
        centers,
    }))
}

#[derive(Serialize)]
pub(crate) struct TemporalPoint {
    timestamp_index: usize,
    timestamp: i64,
    per_metric_sum: BTreeMap<String, f64>,
    is_top5: BTreeMap<String, bool>,
}

#[derive(Serialize)]
pub(crate) struct TemporalResponse {
    job_id: String,
    granularity: Granularity,
    points: Vec<TemporalPoint>,
}

pub(crate) async fn temporal(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<TemporalResponse>, ApiError> {
    let q = Params(q);
    let (from, to) = q.range()?;
    let result = q.job(&state)?;
    let source = result.params.granularity;
    let target: Granularity = q.parse("granularity")?.unwrap_or(source);
    if source.factor_to(target).is_none() {
        return Err(ApiError::bad_request(format!(
            "granularity {target} is finer than the job's {source}"
        )));
    }
    // re-anchor the grid so target buckets start on calendar boundaries
    let target_step = target.step_seconds();
    let anchored = result.origin.div_euclid(target_step) * target_step;
    let shift = ((result.origin - anchored) / result.step()) as usize;
    let records: Vec<ScoreRecord> = records_in(&result, from, to)
        .map(|r| ScoreRecord {
            timestamp_index: r.timestamp_index + shift,
            ..r.clone()
        })
        .collect();
    if records.is_empty() {
        return Err(ApiError::bad_request("time range holds no scored timestamps"));
    }
    let points = temporal_rollup(&records, source, target)?
        .into_iter()
        .map(|p| TemporalPoint {
            timestamp: anchored + p.timestamp_index as i64 * target_step,
            timestamp_index: p.timestamp_index,
            per_metric_sum: p.per_metric_sum,
            is_top5: p.is_top5,
        })
        .collect();
    Ok(Json(TemporalResponse {
        job_id: result.job_id.clone(),
        granularity: target,
        points,
    }))
}

#[derive(Serialize)]
pub(crate) struct RankResponse {
    job_id: String,
    total: usize,
    items: Vec<NodeRank>,
}

pub(crate) async fn rank(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<RankResponse>, ApiError> {
    let q = Params(q);
    let offset = q.parse::<usize>("offset")?.unwrap_or(0);
    let limit = q.parse::<usize>("limit")?.unwrap_or(DEFAULT_RANK_LIMIT);
    let (from, to) = q.range()?;
    let result = q.job(&state)?;
    let records: Vec<ScoreRecord> = records_in(&result, from, to).cloned().collect();
    let ranks = rank_nodes(&records);
    Ok(Json(RankResponse {
        job_id: result.job_id.clone(),
        total: ranks.len(),
        items: ranks.into_iter().skip(offset).take(limit).collect(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Periodic,
    Trend,
    Spike,
    None,
}

/// Largest component; ties resolve periodic, then trend, then spike.
/// All-zero scores have no cause.
pub fn dominant_cause(periodic: f64, trend: f64, spike: f64) -> Cause {
    if periodic <= 0.0 && trend <= 0.0 && spike <= 0.0 {
        Cause::None
    } else if periodic >= trend && periodic >= spike {
        Cause::Periodic
    } else if trend >= spike {
        Cause::Trend
    } else {
        Cause::Spike
    }
}

#[derive(Serialize)]
pub(crate) struct ScorePoint {
    timestamp: i64,
    periodic: f64,
    trend: f64,
    spike: f64,
    aggregated: f64,
    warmup: bool,
    dominant: Cause,
}

#[derive(Serialize)]
pub(crate) struct MetricView {
    metric: String,
    start_timestamp: i64,
    values: Vec<f64>,
    summary: MagnetSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    baseline: Option<f64>,
    scores: Vec<ScorePoint>,
}

#[derive(Serialize)]
pub(crate) struct DominantPoint {
    timestamp: i64,
    cause: Cause,
}

#[derive(Serialize)]
pub(crate) struct PerformanceResponse {
    job_id: String,
    node: NodePath,
    mode: String,
    granularity: Granularity,
    metrics: Vec<MetricView>,
    /// First principal component of the node's metrics (pca mode only).
    #[serde(skip_serializing_if = "Option::is_none")]
    projection: Option<Vec<f64>>,
    /// Node-level cause per timestamp from component scores summed over
    /// metrics.
    dominant: Vec<DominantPoint>,
}

pub(crate) async fn performance(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<PerformanceResponse>, ApiError> {
    let q = Params(q);
    let mode = q.raw("mode").unwrap_or("raw").to_string();
    if !matches!(mode.as_str(), "raw" | "deviation" | "normalized" | "pca") {
        return Err(ApiError::bad_request(format!("unknown mode `{mode}`")));
    }
    let (from, to) = q.range()?;
    let result = q.job(&state)?;
    let matches_node = |n: &NodePath| {
        (n.node_id == id || n.to_string() == id)
            && q.raw("center").is_none_or(|c| c == n.center_id)
            && q.raw("cluster").is_none_or(|c| c == n.cluster_id)
    };
    let node = result
        .series
        .iter()
        .map(|s| &s.node)
        .find(|n| matches_node(n))
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown node `{id}`")))?;
    let own: Vec<MetricSeries> = result
        .series
        .iter()
        .filter(|s| s.node == node)
        .map(|s| sliced(s, from, to))
        .collect();
    if own.iter().all(MetricSeries::is_empty) {
        return Err(ApiError::bad_request("time range holds no samples for this node"));
    }

    let mut records: HashMap<&str, Vec<&ScoreRecord>> = HashMap::new();
    for r in records_in(&result, from, to).filter(|r| r.node == node) {
        records.entry(r.metric.as_str()).or_default().push(r);
    }
    let mut totals: BTreeMap<usize, [f64; 3]> = BTreeMap::new();
    let mut metrics = Vec::with_capacity(own.len());
    for s in own.iter().filter(|s| !s.is_empty()) {
        let summary = magnet_summary(&s.values)?;
        let (values, baseline) = match mode.as_str() {
            "deviation" => {
                let peers: Vec<MetricSeries> = result
                    .series
                    .iter()
                    .filter(|p| p.metric == s.metric && p.node.center_id == node.center_id && p.node.cluster_id == node.cluster_id)
                    .map(|p| sliced(p, from, to))
                    .collect();
                let slices: Vec<&[f64]> = peers.iter().map(|p| p.values.as_slice()).collect();
                let base = cluster_baseline(&slices).unwrap_or(0.0);
                (s.values.iter().map(|v| v - base).collect(), Some(base))
            }
            "normalized" => (normalize_series(&s.values), None),
            _ => (s.values.clone(), None),
        };
        let mut scores: Vec<ScorePoint> = records
            .get(s.metric.as_str())
            .map(|rs| {
                rs.iter()
                    .map(|r| {
                        let slot = totals.entry(r.timestamp_index).or_default();
                        slot[0] += r.periodic;
                        slot[1] += r.trend;
                        slot[2] += r.spike;
                        ScorePoint {
                            timestamp: result.timestamp_of(r.timestamp_index),
                            periodic: r.periodic,
                            trend: r.trend,
                            spike: r.spike,
                            aggregated: r.aggregated,
                            warmup: r.warmup,
                            dominant: dominant_cause(r.periodic, r.trend, r.spike),
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();
        scores.sort_by_key(|p| p.timestamp);
        metrics.push(MetricView {
            metric: s.metric.clone(),
            start_timestamp: s.start_timestamp,
            values,
            summary,
            baseline,
            scores,
        });
    }
    metrics.sort_by(|a, b| a.metric.cmp(&b.metric));

    let projection = if mode == "pca" {
        let refs: Vec<&MetricSeries> = own.iter().filter(|s| !s.is_empty()).collect();
        let aligned = clouddet_core::ingest::align(&refs, None)?;
        let rows: Vec<&[f64]> = aligned.rows.iter().map(Vec::as_slice).collect();
        Some(pca_project(&rows)?)
    } else {
        None
    };
    let dominant = totals
        .into_iter()
        .map(|(i, [p, t, s])| DominantPoint {
            timestamp: result.timestamp_of(i),
            cause: dominant_cause(p, t, s),
        })
        .collect();
    Ok(Json(PerformanceResponse {
        job_id: result.job_id.clone(),
        node,
        mode,
        granularity: result.params.granularity,
        metrics,
        projection,
        dominant,
    }))
}

#[derive(Serialize)]
pub(crate) struct ClusterPoint {
    node: NodePath,
    x: f64,
    y: f64,
    /// LOF mapped to `[-1, 1]`.
    lof: f64,
    lof_raw: f64,
    /// Summed anomaly score over the range.
    score: f64,
}

#[derive(Serialize)]
pub(crate) struct GlyphMetric {
    metric: String,
    /// Values mapped to `[-1, 1]` using the metric's range across all nodes.
    normalized: Vec<f64>,
    mean: f64,
}

#[derive(Serialize)]
pub(crate) struct Glyph {
    node: NodePath,
    metrics: Vec<GlyphMetric>,
}

#[derive(Serialize)]
pub(crate) struct ClusterResponse {
    job_id: String,
    method: EmbedMethod,
    fallback: bool,
    k: Option<usize>,
    start_timestamp: i64,
    points: Vec<ClusterPoint>,
    density: DensityField,
    glyphs: Vec<Glyph>,
}

pub(crate) async fn cluster(
    State(state): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<ClusterResponse>, ApiError> {
    let q = Params(q);
    let (from, to) = q.range()?;
    let method: EmbedMethod = q.parse("method")?.unwrap_or(EmbedMethod::Tsne);
    let mut tsne = TsneConfig::default();
    if let Some(p) = q.float("perplexity")? {
        if !(p > 0.0 && p.is_finite()) {
            return Err(ApiError::bad_request("perplexity must be positive"));
        }
        tsne.perplexity = p;
    }
    if let Some(seed) = q.parse("seed")? {
        tsne.seed = seed;
    }
    let requested_k: Option<usize> = q.parse("k")?;
    let result = q.job(&state)?;

    let selected: Vec<&MetricSeries> = result
        .series
        .iter()
        .filter(|s| q.raw("center").is_none_or(|c| c == s.node.center_id))
        .filter(|s| q.raw("cluster").is_none_or(|c| c == s.node.cluster_id))
        .collect();
    // keep nodes carrying every selected metric
    let metric_names: Vec<String> = {
        let mut m: Vec<String> = selected.iter().map(|s| s.metric.clone()).collect();
        m.sort();
        m.dedup();
        m
    };
    let mut by_node: BTreeMap<NodePath, BTreeMap<&str, &MetricSeries>> = BTreeMap::new();
    for s in &selected {
        by_node.entry(s.node.clone()).or_default().insert(s.metric.as_str(), s);
    }
    by_node.retain(|_, m| m.len() == metric_names.len());
    if by_node.is_empty() {
        return Err(ApiError::bad_request("no nodes match the selection"));
    }

    // common range across every kept series
    let all: Vec<&MetricSeries> = by_node.values().flat_map(|m| m.values().copied()).collect();
    let mut start = all.iter().map(|s| s.start_timestamp).max().unwrap_or(0);
    let mut end = all.iter().map(|s| s.end_timestamp()).min().unwrap_or(0);
    if let Some(f) = from {
        start = start.max(f);
    }
    if let Some(t) = to {
        end = end.min(t);
    }
    if end <= start {
        return Err(ApiError::bad_request("selected nodes share no samples in the time range"));
    }
    let nodes: Vec<NodePath> = by_node.keys().cloned().collect();
    let raw: Vec<Vec<Vec<f64>>> = by_node
        .values()
        .map(|m| m.values().map(|s| slice_range(s, start, end).values).collect())
        .collect();
    let n_common = raw[0][0].len();
    if raw.iter().flatten().any(|v| v.len() != n_common) || n_common == 0 {
        return Err(ApiError::bad_request("selected series are not aligned"));
    }

    let features: Vec<Vec<f64>> = standardized_feature_vectors(&raw)?.into_iter().map(|f| f.values).collect();
    let embedding = embed_2d(&features, method, &tsne)?;

    let n = nodes.len();
    let k = match requested_k {
        Some(k) if k < 2 || k >= n => {
            return Err(ApiError::bad_request(format!("k must lie in 2..{n} for {n} nodes")));
        }
        Some(k) => Some(k),
        None if n >= 3 => Some(MAX_LOF_K.min(n - 1)),
        None => None,
    };
    let (lof, lof_raw) = match k {
        Some(k) => {
            let s = lof_scores(&features, k)?;
            (s.normalized, s.raw)
        }
        None => (vec![0.0; n], vec![1.0; n]),
    };
    let density = kde_density(&embedding.positions, DENSITY_RESOLUTION, None)?;

    let (lo, hi) = result.index_range(Some(start), Some(end));
    let mut totals: HashMap<&NodePath, f64> = HashMap::new();
    for r in result.records.iter().filter(|r| (lo..hi).contains(&r.timestamp_index)) {
        *totals.entry(&r.node).or_default() += r.aggregated;
    }
    let points = nodes
        .iter()
        .enumerate()
        .map(|(i, node)| ClusterPoint {
            node: node.clone(),
            x: embedding.positions[i][0],
            y: embedding.positions[i][1],
            lof: lof[i],
            lof_raw: lof_raw[i],
            score: totals.get(node).copied().unwrap_or(0.0),
        })
        .collect();

    let glyph_ranges: Vec<(f64, f64)> = (0..metric_names.len())
        .map(|m| {
            raw.iter()
                .flat_map(|node| node[m].iter())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .collect();
    let glyphs = nodes
        .iter()
        .zip(&raw)
        .map(|(node, rows)| Glyph {
            node: node.clone(),
            metrics: metric_names
                .iter()
                .zip(rows)
                .zip(&glyph_ranges)
                .map(|((metric, values), &(lo, hi))| GlyphMetric {
                    metric: metric.clone(),
                    normalized: values
                        .iter()
                        .map(|v| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })
                        .collect(),
                    mean: values.iter().sum::<f64>() / values.len() as f64,
                })
                .collect(),
        })
        .collect();

    Ok(Json(ClusterResponse {
        job_id: result.job_id.clone(),
        method: embedding.method,
        fallback: embedding.fallback,
        k,
        start_timestamp: start,
        points,
        density,
        glyphs,
    }))
}
