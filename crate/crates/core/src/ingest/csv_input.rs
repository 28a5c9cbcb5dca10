use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::{repair_gaps, Dataset};
use crate::error::{Error, Result};
use crate::model::{Granularity, MetricSeries, NodePath};

/// Share of unparseable rows tolerated before ingest fails.
const MAX_SKIPPED_FRACTION: f64 = 0.10;

/// Binds CSV columns to the fields of a metric trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaMap {
    pub timestamp: String,
    pub center: String,
    pub cluster: String,
    pub node: String,
    /// Metric columns to read; `None` takes every column not bound above.
    pub metrics: Option<Vec<String>>,
    /// Optional renames from column header to metric label.
    pub labels: BTreeMap<String, String>,
    /// Values used when the center/cluster column is absent from the file.
    pub default_center: Option<String>,
    pub default_cluster: Option<String>,
    /// Overrides granularity inference.
    pub granularity: Option<Granularity>,
    pub dataset_id: Option<String>,
}

impl Default for SchemaMap {
    fn default() -> Self {
        SchemaMap {
            timestamp: "timestamp".into(),
            center: "center".into(),
            cluster: "cluster".into(),
            node: "node".into(),
            metrics: None,
            labels: BTreeMap::new(),
            default_center: None,
            default_cluster: None,
            granularity: None,
            dataset_id: None,
        }
    }
}

impl SchemaMap {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("schema map {}: {e}", path.display())))
    }
}

/// Accepts integer or fractional epoch seconds, RFC 3339, and the common
/// `YYYY-MM-DD[ T]HH:MM[:SS]` / `YYYY-MM-DD` forms (read as UTC).
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let s = raw.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then(|| v.round() as i64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

fn detect_delimiter(header: &str) -> u8 {
    if header.matches(';').count() > header.matches(',').count() {
        b';'
    } else {
        b','
    }
}

/// Coarsest granularity whose step does not exceed the median sampling gap.
fn infer_granularity(gaps: &mut [i64]) -> Granularity {
    if gaps.is_empty() {
        return Granularity::Minute;
    }
    gaps.sort_unstable();
    let median = gaps[gaps.len() / 2];
    [Granularity::Day, Granularity::Hour, Granularity::Minute]
        .into_iter()
        .find(|g| g.step_seconds() <= median)
        .unwrap_or(Granularity::Minute)
}

struct Column {
    index: usize,
    label: String,
}

/// Reads a metric CSV into gridded, gap-repaired series.
pub fn read_csv(path: &Path, schema: &SchemaMap) -> Result<Dataset> {
    let mut file = File::open(path)?;
    let mut header = String::new();
    BufReader::new(&mut file).read_line(&mut header)?;
    file.seek(SeekFrom::Start(0))?;
    let delimiter = detect_delimiter(&header);
    let dataset_id = schema.dataset_id.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    read_csv_from(file, delimiter, &dataset_id, schema)
}

fn read_csv_from(input: impl Read, delimiter: u8, dataset_id: &str, schema: &SchemaMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let missing_column = |name: &str| Error::Parse(format!("CSV has no `{name}` column"));

    let ts_col = find(&schema.timestamp).ok_or_else(|| missing_column(&schema.timestamp))?;
    let node_col = find(&schema.node).ok_or_else(|| missing_column(&schema.node))?;
    let center_col = find(&schema.center);
    let cluster_col = find(&schema.cluster);
    if center_col.is_none() && schema.default_center.is_none() {
        return Err(missing_column(&schema.center));
    }
    if cluster_col.is_none() && schema.default_cluster.is_none() {
        return Err(missing_column(&schema.cluster));
    }
    let bound: BTreeSet<usize> = [Some(ts_col), Some(node_col), center_col, cluster_col]
        .into_iter()
        .flatten()
        .collect();
    let metric_indices: Vec<usize> = match &schema.metrics {
        Some(names) => names
            .iter()
            .map(|m| find(m).ok_or_else(|| missing_column(m)))
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|i| !bound.contains(i)).collect(),
    };
    if metric_indices.is_empty() {
        return Err(Error::Parse("CSV has no metric columns".into()));
    }
    let columns: Vec<Column> = metric_indices
        .into_iter()
        .map(|index| {
            let header = &headers[index];
            let label = schema.labels.get(header).cloned().unwrap_or_else(|| header.to_string());
            Column { index, label }
        })
        .collect();

    let mut samples: BTreeMap<(NodePath, String), BTreeMap<i64, Option<f64>>> = BTreeMap::new();
    let (mut total, mut skipped) = (0usize, 0usize);
    for record in reader.records() {
        total += 1;
        let Ok(record) = record else {
            skipped += 1;
            continue;
        };
        let field = |col: Option<usize>, fallback: &Option<String>| {
            col.and_then(|c| record.get(c)).map(str::to_string).or_else(|| fallback.clone())
        };
        let parsed = (|| {
            let ts = parse_timestamp(record.get(ts_col)?)?;
            let node = NodePath::new(
                field(center_col, &schema.default_center)?,
                field(cluster_col, &schema.default_cluster)?,
                record.get(node_col)?.to_string(),
            )
            .ok()?;
            let values = columns
                .iter()
                .map(|c| match record.get(c.index).unwrap_or("") {
                    "" => Some(None),
                    raw => raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
                })
                .collect::<Option<Vec<_>>>()?;
            Some((ts, node, values))
        })();
        let Some((ts, node, values)) = parsed else {
            skipped += 1;
            continue;
        };
        for (col, value) in columns.iter().zip(values) {
            // later rows overwrite earlier ones at the same timestamp
            samples
                .entry((node.clone(), col.label.clone()))
                .or_default()
                .insert(ts, value);
        }
    }
    if total > 0 && skipped as f64 > MAX_SKIPPED_FRACTION * total as f64 {
        return Err(Error::TooManyBadRows { skipped, total });
    }
    if samples.is_empty() {
        return Err(Error::Parse("CSV contains no parseable rows".into()));
    }

    let granularity = schema.granularity.unwrap_or_else(|| {
        let mut gaps: Vec<i64> = samples
            .values()
            .flat_map(|s| s.keys().collect::<Vec<_>>().windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
            .collect();
        infer_granularity(&mut gaps)
    });
    let step = granularity.step_seconds();

    let mut series = Vec::with_capacity(samples.len());
    for ((node, metric), points) in samples {
        let first = points.keys().next().expect("non-empty").div_euclid(step);
        let last = points.keys().next_back().expect("non-empty").div_euclid(step);
        let mut slots: Vec<(f64, usize)> = vec![(0.0, 0); (last - first + 1) as usize];
        for (&ts, value) in &points {
            if let Some(v) = value {
                let slot = &mut slots[(ts.div_euclid(step) - first) as usize];
                slot.0 += v;
                slot.1 += 1;
            }
        }
        let raw: Vec<Option<f64>> = slots
            .iter()
            .map(|&(sum, count)| (count > 0).then(|| sum / count as f64))
            .collect();
        let Some((values, missing)) = repair_gaps(&raw) else {
            continue;
        };
        series.push(MetricSeries {
            node,
            metric,
            granularity,
            start_timestamp: first * step,
            values,
            missing,
        });
    }
    let mut dataset = Dataset::from_series(dataset_id, series)?;
    dataset.manifest.row_count = total - skipped;
    dataset.manifest.skipped_rows = skipped;
    Ok(dataset)
}
