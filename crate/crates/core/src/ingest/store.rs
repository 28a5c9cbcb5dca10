use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{read_csv, read_snapshot, resample, slice_range, write_snapshot, Dataset, DatasetManifest, ResampleMethod, SchemaMap};
use crate::error::{Error, Result};
use crate::model::{Granularity, MetricSeries};

/// Environment variable naming the snapshot directory.
pub const DATA_DIR_ENV: &str = "CLOUDDET_DATA_DIR";
const SNAPSHOT_EXT: &str = "cds";

/// Filter over a dataset; unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Selector {
    pub center: Option<String>,
    pub cluster: Option<String>,
    pub node: Option<String>,
    pub metric: Option<String>,
    /// `[from, to)` in epoch seconds.
    pub range: Option<(i64, i64)>,
    pub granularity: Option<Granularity>,
}

impl Selector {
    fn matches(&self, s: &MetricSeries) -> bool {
        let eq = |want: &Option<String>, have: &str| want.as_deref().is_none_or(|w| w == have);
        eq(&self.center, &s.node.center_id)
            && eq(&self.cluster, &s.node.cluster_id)
            && eq(&self.node, &s.node.node_id)
            && eq(&self.metric, &s.metric)
    }
}

/// Series of `dataset` matching `selector`, resampled (mean) to the
/// requested granularity and clipped to the requested range.
pub fn query(dataset: &Dataset, selector: &Selector) -> Result<Vec<MetricSeries>> {
    dataset
        .series
        .iter()
        .filter(|s| selector.matches(s))
        .map(|s| {
            let s = match selector.granularity {
                Some(g) if g != s.granularity => resample(s, g, ResampleMethod::Mean)?,
                _ => s.clone(),
            };
            Ok(match selector.range {
                Some((from, to)) => slice_range(&s, from, to),
                None => s,
            })
        })
        .collect()
}

/// In-memory dataset registry. Readers get an `Arc` to an immutable
/// dataset, so a concurrent ingest only ever swaps whole datasets.
#[derive(Debug, Default)]
pub struct Store {
    datasets: RwLock<BTreeMap<String, Arc<Dataset>>>,
    data_dir: Option<PathBuf>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store persisting snapshots under `dir`.
    pub fn with_data_dir(dir: impl Into<PathBuf>) -> Self {
        Store {
            datasets: RwLock::default(),
            data_dir: Some(dir.into()),
        }
    }

    /// Uses `CLOUDDET_DATA_DIR` when set.
    pub fn from_env() -> Self {
        match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::with_data_dir(dir),
            _ => Self::new(),
        }
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.data_dir.as_deref()
    }

    pub fn insert(&self, dataset: Dataset) -> Arc<Dataset> {
        let dataset = Arc::new(dataset);
        self.datasets
            .write()
            .expect("store lock poisoned")
            .insert(dataset.id().to_string(), Arc::clone(&dataset));
        dataset
    }

    pub fn get(&self, id: &str) -> Option<Arc<Dataset>> {
        self.datasets.read().expect("store lock poisoned").get(id).cloned()
    }

    pub fn manifests(&self) -> Vec<DatasetManifest> {
        self.datasets
            .read()
            .expect("store lock poisoned")
            .values()
            .map(|d| d.manifest.clone())
            .collect()
    }

    /// Parses `path` fully before publishing it, then snapshots it when a
    /// data directory is configured.
    pub fn ingest_csv(&self, path: &Path, schema: &SchemaMap) -> Result<DatasetManifest> {
        let dataset = read_csv(path, schema)?;
        let manifest = dataset.manifest.clone();
        if self.data_dir.is_some() {
            self.persist_dataset(&dataset)?;
        }
        self.insert(dataset);
        Ok(manifest)
    }

    pub fn snapshot_path(&self, id: &str) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(format!("{id}.{SNAPSHOT_EXT}")))
    }

    fn persist_dataset(&self, dataset: &Dataset) -> Result<PathBuf> {
        let path = self
            .snapshot_path(dataset.id())
            .ok_or_else(|| Error::Snapshot("no data directory configured".into()))?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        write_snapshot(dataset, &path)?;
        Ok(path)
    }

    /// Writes the snapshot of dataset `id`.
    pub fn persist(&self, id: &str) -> Result<PathBuf> {
        let dataset = self
            .get(id)
            .ok_or_else(|| Error::Snapshot(format!("unknown dataset `{id}`")))?;
        self.persist_dataset(&dataset)
    }

    /// Loads dataset `id` from the data directory if it is not in memory.
    pub fn load(&self, id: &str) -> Result<Arc<Dataset>> {
        if let Some(d) = self.get(id) {
            return Ok(d);
        }
        let path = self
            .snapshot_path(id)
            .ok_or_else(|| Error::Snapshot(format!("unknown dataset `{id}`")))?;
        Ok(self.insert(read_snapshot(&path)?))
    }

    /// Loads every snapshot in the data directory; returns how many.
    pub fn load_all(&self) -> Result<usize> {
        let Some(dir) = &self.data_dir else {
            return Ok(0);
        };
        if !dir.exists() {
            return Ok(0);
        }
        let mut count = 0;
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == SNAPSHOT_EXT) {
                self.insert(read_snapshot(&path)?);
                count += 1;
            }
        }
        Ok(count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NodePath;

    fn dataset() -> Dataset {
        let mut series = Vec::new();
        for (c, k, n) in [("c1", "k1", "n1"), ("c1", "k2", "n2"), ("c2", "k1", "n3")] {
            for metric in ["cpu", "mem"] {
                series.push(MetricSeries::new(
                    NodePath::new(c, k, n).unwrap(),
                    metric,
                    Granularity::Minute,
                    0,
                    (0..120).map(f64::from).collect(),
                ));
            }
        }
        Dataset::from_series("d", series).unwrap()
    }

    #[test]
    fn selector_examples() {
        let d = dataset();
        let c1 = query(&d, &Selector { center: Some("c1".into()), ..Default::default() }).unwrap();
        assert_eq!(c1.len(), 4);
        assert!(c1.iter().all(|s| s.node.center_id == "c1"));
        assert_eq!(query(&d, &Selector::default()).unwrap().len(), 6);
        let none = query(&d, &Selector { node: Some("absent".into()), ..Default::default() }).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn centers_partition_the_dataset() {
        let d = dataset();
        let mut seen = Vec::new();
        for c in &d.manifest.centers {
            for s in query(&d, &Selector { center: Some(c.clone()), ..Default::default() }).unwrap() {
                seen.push((s.node.clone(), s.metric.clone()));
            }
        }
        let mut all: Vec<_> = d.series.iter().map(|s| (s.node.clone(), s.metric.clone())).collect();
        seen.sort();
        all.sort();
        assert_eq!(seen, all);
    }

    #[test]
    fn query_resamples_and_clips() {
        let d = dataset();
        let sel = Selector {
            node: Some("n1".into()),
            metric: Some("cpu".into()),
            granularity: Some(Granularity::Hour),
            ..Default::default()
        };
        let s = query(&d, &sel).unwrap();
        assert_eq!(s[0].values, vec![29.5, 89.5]);
        let clipped = query(&d, &Selector { range: Some((600, 1200)), ..sel.clone() }).unwrap();
        assert_eq!(clipped[0].values, vec![29.5]);
        let finer = Selector { granularity: Some(Granularity::Minute), ..Default::default() };
        let h = Dataset::from_series("h", s).unwrap();
        assert!(query(&h, &finer).is_err());
    }

    #[test]
    fn store_persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::with_data_dir(dir.path());
        store.insert(dataset());
        store.persist("d").unwrap();
        let fresh = Store::with_data_dir(dir.path());
        assert_eq!(fresh.load_all().unwrap(), 1);
        assert_eq!(*fresh.get("d").unwrap(), dataset());
        assert!(fresh.get("other").is_none());
    }

    #[test]
    fn readers_keep_their_snapshot() {
        let store = Store::new();
        store.insert(dataset());
        let before = store.get("d").unwrap();
        let mut replacement = dataset();
        replacement.series.truncate(1);
        store.insert(replacement);
        assert_eq!(before.series.len(), 6);
        assert_eq!(store.get("d").unwrap().series.len(), 1);
    }
}
