//! CSV ingestion, gap repair, resampling, alignment and the in-memory store.

mod csv_input;
mod labels;
mod snapshot;
mod store;

pub use csv_input::{parse_timestamp, read_csv, SchemaMap};
pub use labels::{read_labels, LabelSet};
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use store::{query, Selector, Store};

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Granularity, MetricSeries, NodePath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub centers: Vec<String>,
    /// Every node path present in the dataset, sorted.
    pub nodes: Vec<NodePath>,
    pub metrics: Vec<String>,
    pub native_granularity: Granularity,
    pub row_count: usize,
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub series: Vec<MetricSeries>,
}

impl Dataset {
    /// Builds a dataset (and its manifest) from already-gridded series.
    pub fn from_series(dataset_id: impl Into<String>, series: Vec<MetricSeries>) -> Result<Self> {
        let first = series
            .first()
            .ok_or_else(|| Error::InvalidParameter("dataset has no series".into()))?;
        let granularity = first.granularity;
        if series.iter().any(|s| s.granularity != granularity) {
            return Err(Error::Misaligned("series have different granularities".into()));
        }
        let mut nodes: Vec<NodePath> = series.iter().map(|s| s.node.clone()).collect();
        nodes.sort();
        nodes.dedup();
        let mut centers: Vec<String> = nodes.iter().map(|n| n.center_id.clone()).collect();
        centers.dedup();
        let mut metrics: Vec<String> = series.iter().map(|s| s.metric.clone()).collect();
        metrics.sort();
        metrics.dedup();
        let row_count = series.iter().map(MetricSeries::len).max().unwrap_or(0) * nodes.len();
        Ok(Dataset {
            manifest: DatasetManifest {
                dataset_id: dataset_id.into(),
                centers,
                nodes,
                metrics,
                native_granularity: granularity,
                row_count,
                skipped_rows: 0,
            },
            series,
        })
    }

    pub fn id(&self) -> &str {
        &self.manifest.dataset_id
    }

    /// Earliest start over all series.
    pub fn start_timestamp(&self) -> Option<i64> {
        self.series.iter().map(|s| s.start_timestamp).min()
    }

    /// Latest (exclusive) end over all series.
    pub fn end_timestamp(&self) -> Option<i64> {
        self.series.iter().map(MetricSeries::end_timestamp).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMethod {
    #[default]
    Mean,
    Max,
    Last,
}

impl FromStr for ResampleMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(ResampleMethod::Mean),
            "max" => Ok(ResampleMethod::Max),
            "last" => Ok(ResampleMethod::Last),
            other => Err(Error::Parse(format!("unknown resample method `{other}`"))),
        }
    }
}

/// Fills every `None` by linear interpolation between the nearest present
/// neighbours; leading and trailing gaps take the nearest present value.
///
/// Returns the dense values and a mask marking the filled positions, or
/// `None` when nothing is present.
pub fn repair_gaps(values: &[Option<f64>]) -> Option<(Vec<f64>, Vec<bool>)> {
    let present: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    let (&first, &last) = (present.first()?, present.last()?);
    let mut out = vec![0.0; values.len()];
    let mask: Vec<bool> = values.iter().map(Option::is_none).collect();
    for i in 0..first {
        out[i] = values[first].unwrap();
    }
    for i in last..values.len() {
        out[i] = values[last].unwrap();
    }
    for pair in present.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (values[a].unwrap(), values[b].unwrap());
        for i in a..=b {
            let t = (i - a) as f64 / (b - a).max(1) as f64;
            out[i] = va + (vb - va) * t;
        }
    }
    Some((out, mask))
}

/// Re-buckets `series` onto the coarser `target` grid.
///
/// Only observed samples feed a bucket; buckets without any are filled by
/// interpolation and flagged in the missing mask.
pub fn resample(series: &MetricSeries, target: Granularity, method: ResampleMethod) -> Result<MetricSeries> {
    if series.granularity.factor_to(target).is_none() {
        return Err(Error::InvalidParameter(format!(
            "cannot resample {} data to finer granularity {target}",
            series.granularity
        )));
    }
    if series.is_empty() {
        return Ok(MetricSeries {
            granularity: target,
            ..series.clone()
        });
    }
    let step = target.step_seconds();
    let first_bucket = series.start_timestamp.div_euclid(step);
    let last_bucket = series.timestamp_at(series.len() - 1).div_euclid(step);
    let buckets = (last_bucket - first_bucket + 1) as usize;
    let mut acc: Vec<(f64, usize, f64, f64)> = vec![(0.0, 0, f64::NEG_INFINITY, 0.0); buckets];
    for (i, (&v, &missing)) in series.values.iter().zip(&series.missing).enumerate() {
        if missing {
            continue;
        }
        let b = (series.timestamp_at(i).div_euclid(step) - first_bucket) as usize;
        let slot = &mut acc[b];
        slot.0 += v;
        slot.1 += 1;
        slot.2 = slot.2.max(v);
        slot.3 = v;
    }
    let raw: Vec<Option<f64>> = acc
        .iter()
        .map(|&(sum, count, max, last)| {
            (count > 0).then(|| match method {
                ResampleMethod::Mean => sum / count as f64,
                ResampleMethod::Max => max,
                ResampleMethod::Last => last,
            })
        })
        .collect();
    let (values, missing) = repair_gaps(&raw).ok_or_else(|| {
        Error::InvalidParameter(format!("series {}:{} has no observed values", series.node, series.metric))
    })?;
    Ok(MetricSeries {
        node: series.node.clone(),
        metric: series.metric.clone(),
        granularity: target,
        start_timestamp: first_bucket * step,
        values,
        missing,
    })
}

/// Sub-series covering `[from, to)` (epoch seconds), clipped to the data.
pub fn slice_range(series: &MetricSeries, from: i64, to: i64) -> MetricSeries {
    let lo = series.index_of(from).clamp(0, series.len() as i64) as usize;
    let hi = series.index_of(to + series.granularity.step_seconds() - 1).clamp(lo as i64, series.len() as i64) as usize;
    MetricSeries {
        node: series.node.clone(),
        metric: series.metric.clone(),
        granularity: series.granularity,
        start_timestamp: series.timestamp_at(lo),
        values: series.values[lo..hi].to_vec(),
        missing: series.missing[lo..hi].to_vec(),
    }
}

/// Values of several series over their common time range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedMatrix {
    /// Row labels, ascending.
    pub metrics: Vec<String>,
    pub granularity: Granularity,
    pub start_timestamp: i64,
    /// `rows[m][t]`.
    pub rows: Vec<Vec<f64>>,
}

impl AlignedMatrix {
    pub fn columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Aligns series on the intersection of their ranges (and of `range`, when
/// given), one row per series ordered by metric label.
pub fn align(series: &[&MetricSeries], range: Option<(i64, i64)>) -> Result<AlignedMatrix> {
    let first = series
        .first()
        .ok_or_else(|| Error::EmptyRange("no series to align".into()))?;
    let granularity = first.granularity;
    let step = granularity.step_seconds();
    if series.iter().any(|s| s.granularity != granularity) {
        return Err(Error::Misaligned("series have different granularities".into()));
    }
    if series
        .iter()
        .any(|s| s.start_timestamp.rem_euclid(step) != first.start_timestamp.rem_euclid(step))
    {
        return Err(Error::Misaligned("series grids are offset from each other".into()));
    }
    let mut start = series.iter().map(|s| s.start_timestamp).max().unwrap();
    let mut end = series.iter().map(|s| s.end_timestamp()).min().unwrap();
    if let Some((from, to)) = range {
        // snap the requested range onto the shared grid
        let phase = first.start_timestamp.rem_euclid(step);
        let from = from + (phase - from).rem_euclid(step);
        start = start.max(from);
        end = end.min(to);
    }
    if end <= start {
        return Err(Error::EmptyRange(format!(
            "series do not overlap in [{start}, {end})"
        )));
    }
    let n = ((end - start + step - 1) / step) as usize;
    let mut ordered: Vec<&MetricSeries> = series.to_vec();
    ordered.sort_by(|a, b| a.metric.cmp(&b.metric));
    Ok(AlignedMatrix {
        metrics: ordered.iter().map(|s| s.metric.clone()).collect(),
        granularity,
        start_timestamp: start,
        rows: ordered
            .iter()
            .map(|s| {
                let lo = s.index_of(start) as usize;
                s.values[lo..lo + n].to_vec()
            })
            .collect(),
    })
}
