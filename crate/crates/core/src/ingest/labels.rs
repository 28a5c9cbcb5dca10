use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_timestamp, Dataset};
use crate::error::{Error, Result};
use crate::model::{MetricSeries, NodePath};

/// Per-index anomaly labels for the series of one dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    entries: BTreeMap<(NodePath, String), Vec<bool>>,
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Labels for `series`, all false when none were given.
    pub fn for_series(&self, series: &MetricSeries) -> Vec<bool> {
        self.entries
            .get(&(series.node.clone(), series.metric.clone()))
            .cloned()
            .unwrap_or_else(|| vec![false; series.len()])
    }

    pub fn get(&self, node: &NodePath, metric: &str) -> Option<&[bool]> {
        self.entries.get(&(node.clone(), metric.to_string())).map(Vec::as_slice)
    }

    /// Stores labels for `series`; the length must match.
    pub fn insert(&mut self, series: &MetricSeries, labels: Vec<bool>) -> Result<()> {
        if labels.len() != series.len() {
            return Err(Error::Misaligned(format!(
                "{} labels for a series of length {}",
                labels.len(),
                series.len()
            )));
        }
        self.entries.insert((series.node.clone(), series.metric.clone()), labels);
        Ok(())
    }

    pub fn positives(&self) -> usize {
        self.entries.values().flatten().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rows of the label CSV, one per labeled index, in series order.
    pub fn write_csv(&self, path: &Path, dataset: &Dataset) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["node", "metric", "timestamp", "is_anomaly"])?;
        for s in &dataset.series {
            if let Some(labels) = self.get(&s.node, &s.metric) {
                for (i, &flag) in labels.iter().enumerate() {
                    w.write_record([
                        s.node.node_id.as_str(),
                        s.metric.as_str(),
                        &s.timestamp_at(i).to_string(),
                        if flag { "1" } else { "0" },
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a `node,metric,timestamp,is_anomaly` CSV against `dataset`.
///
/// `node` may be a bare node id or a full `center/cluster/node` path. Rows
/// naming unknown series or timestamps outside the series are ignored.
pub fn read_labels(path: &Path, dataset: &Dataset) -> Result<LabelSet> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut set = LabelSet::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let bad = || Error::Parse(format!("label row {}: {record:?}", row + 2));
        let (node, metric) = (record.get(0).ok_or_else(bad)?, record.get(1).ok_or_else(bad)?);
        let ts = record.get(2).and_then(parse_timestamp).ok_or_else(bad)?;
        let flag = match record.get(3).ok_or_else(bad)? {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(bad()),
        };
        let Some(series) = dataset
            .series
            .iter()
            .find(|s| s.metric == metric && (s.node.node_id == node || s.node.to_string() == node))
        else {
            continue;
        };
        let index = series.index_of(ts);
        if index < 0 || index as usize >= series.len() {
            continue;
        }
        let entry = set
            .entries
            .entry((series.node.clone(), series.metric.clone()))
            .or_insert_with(|| vec![false; series.len()]);
        entry[index as usize] |= flag;
    }
    Ok(set)
}
