//! Domain types shared by the detector, analytics and service layers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling resolution of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Minute,
    Hour,
    Day,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Minute, Granularity::Hour, Granularity::Day];

    pub fn step_seconds(self) -> i64 {
        match self {
            Granularity::Minute => 60,
            Granularity::Hour => 3_600,
            Granularity::Day => 86_400,
        }
    }

    /// Number of `self` steps that make up one `coarser` step.
    pub fn factor_to(self, coarser: Granularity) -> Option<usize> {
        (coarser >= self).then(|| (coarser.step_seconds() / self.step_seconds()) as usize)
    }

    pub fn code(self) -> u8 {
        match self {
            Granularity::Minute => 0,
            Granularity::Hour => 1,
            Granularity::Day => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.code() == code)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Minute => "minute",
            Granularity::Hour => "hour",
            Granularity::Day => "day",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "min" | "minute" | "minutes" => Ok(Granularity::Minute),
            "h" | "hour" | "hours" | "hourly" => Ok(Granularity::Hour),
            "d" | "day" | "days" | "daily" => Ok(Granularity::Day),
            other => Err(Error::Parse(format!("unknown granularity `{other}`"))),
        }
    }
}

/// Location of a compute node: data center, data cluster, node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodePath {
    pub center_id: String,
    pub cluster_id: String,
    pub node_id: String,
}

impl NodePath {
    pub fn new(
        center_id: impl Into<String>,
        cluster_id: impl Into<String>,
        node_id: impl Into<String>,
    ) -> Result<Self> {
        let path = NodePath {
            center_id: center_id.into(),
            cluster_id: cluster_id.into(),
            node_id: node_id.into(),
        };
        if path.center_id.is_empty() || path.cluster_id.is_empty() || path.node_id.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "node path has an empty component: {path}"
            )));
        }
        Ok(path)
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.center_id, self.cluster_id, self.node_id)
    }
}

/// One metric's values for one node on a regular time grid.
///
/// `missing[i]` is `true` when `values[i]` was filled in by gap repair rather
/// than observed. Filled values are still finite, so the detector always
/// sees a dense series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub node: NodePath,
    pub metric: String,
    pub granularity: Granularity,
    /// Epoch seconds of `values[0]`.
    pub start_timestamp: i64,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl MetricSeries {
    /// Dense series with every value observed.
    pub fn new(
        node: NodePath,
        metric: impl Into<String>,
        granularity: Granularity,
        start_timestamp: i64,
        values: Vec<f64>,
    ) -> Self {
        let missing = vec![false; values.len()];
        MetricSeries {
            node,
            metric: metric.into(),
            granularity,
            start_timestamp,
            values,
            missing,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp_at(&self, index: usize) -> i64 {
        self.start_timestamp + index as i64 * self.granularity.step_seconds()
    }

    /// Exclusive end timestamp.
    pub fn end_timestamp(&self) -> i64 {
        self.timestamp_at(self.len())
    }

    /// Index of `timestamp` on this series' grid (may be out of bounds).
    pub fn index_of(&self, timestamp: i64) -> i64 {
        (timestamp - self.start_timestamp).div_euclid(self.granularity.step_seconds())
    }
}

/// The `length + 1` most recent values ending at `end_index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryWindow<'a> {
    pub end_index: usize,
    pub length: usize,
    pub data: &'a [f64],
}

impl<'a> HistoryWindow<'a> {
    /// Window over `values[end_index - length ..= end_index]`.
    pub fn new(values: &'a [f64], end_index: usize, length: usize) -> Result<Self> {
        if end_index < length || end_index >= values.len() {
            return Err(Error::InvalidParameter(format!(
                "window end {end_index} with length {length} does not fit a series of {}",
                values.len()
            )));
        }
        Ok(HistoryWindow {
            end_index,
            length,
            data: &values[end_index - length..=end_index],
        })
    }

    /// Number of points in the window (`length + 1`).
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn last(&self) -> f64 {
        self.data[self.data.len() - 1]
    }
}

/// All history windows of `series`, one per index `n` in `length..len`.
///
/// A series shorter than `length + 1` yields no windows; the scorer treats
/// every index of such a series as warmup.
pub fn make_windows(series: &MetricSeries, length: usize) -> Result<Vec<HistoryWindow<'_>>> {
    if length < 2 {
        return Err(Error::InvalidParameter(format!(
            "history length must be at least 2, got {length}"
        )));
    }
    let values = series.values.as_slice();
    Ok((length..values.len())
        .map(|end| HistoryWindow {
            end_index: end,
            length,
            data: &values[end - length..=end],
        })
        .collect())
}

/// Per-node, per-metric, per-timestamp anomaly scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub node: NodePath,
    pub metric: String,
    pub timestamp_index: usize,
    pub periodic: f64,
    pub trend: f64,
    pub spike: f64,
    pub aggregated: f64,
    pub warmup: bool,
}

impl ScoreRecord {
    pub fn warmup(node: NodePath, metric: String, timestamp_index: usize) -> Self {
        ScoreRecord {
            node,
            metric,
            timestamp_index,
            periodic: 0.0,
            trend: 0.0,
            spike: 0.0,
            aggregated: 0.0,
            warmup: true,
        }
    }
}
