//! Binary dataset snapshots.
//!
//! Layout (all integers little-endian, strings as `u32` byte length then
//! UTF-8):
//!
//! ```text
//! magic "CDS1" | u16 version
//! manifest: dataset_id | u32 metric count, metrics | u8 granularity
//!           | u64 row_count | u64 skipped_rows | u32 series count
//! series:   center | cluster | node | metric | i64 start | u8 granularity
//!           | u64 length | length x f64 | ceil(length / 8) bytes of
//!           missing-mask bits, least significant bit first
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{Granularity, MetricSeries, NodePath};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CDS1";
pub const SNAPSHOT_VERSION: u16 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b)?;
        Ok(())
    }

    fn str(&mut self, s: &str) -> Result<()> {
        let len = u32::try_from(s.len()).map_err(|_| Error::Snapshot("string too long".into()))?;
        self.bytes(&len.to_le_bytes())?;
        self.bytes(s.as_bytes())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Snapshot(format!("truncated snapshot: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Snapshot(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let mut buf = vec![0u8; n];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Snapshot(format!("truncated snapshot: {e}")))?;
        String::from_utf8(buf).map_err(|e| Error::Snapshot(format!("invalid UTF-8: {e}")))
    }

    fn granularity(&mut self) -> Result<Granularity> {
        let code = self.u8()?;
        Granularity::from_code(code).ok_or_else(|| Error::Snapshot(format!("bad granularity code {code}")))
    }
}

/// Largest element count accepted when reading, as a corruption guard.
const MAX_LEN: u64 = 1 << 32;

pub fn write_snapshot(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = Writer(BufWriter::new(File::create(path)?));
    let m = &dataset.manifest;
    w.bytes(SNAPSHOT_MAGIC)?;
    w.bytes(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.str(&m.dataset_id)?;
    w.bytes(&(m.metrics.len() as u32).to_le_bytes())?;
    for metric in &m.metrics {
        w.str(metric)?;
    }
    w.bytes(&[m.native_granularity.code()])?;
    w.bytes(&(m.row_count as u64).to_le_bytes())?;
    w.bytes(&(m.skipped_rows as u64).to_le_bytes())?;
    w.bytes(&(dataset.series.len() as u32).to_le_bytes())?;
    for s in &dataset.series {
        w.str(&s.node.center_id)?;
        w.str(&s.node.cluster_id)?;
        w.str(&s.node.node_id)?;
        w.str(&s.metric)?;
        w.bytes(&s.start_timestamp.to_le_bytes())?;
        w.bytes(&[s.granularity.code()])?;
        w.bytes(&(s.values.len() as u64).to_le_bytes())?;
        for v in &s.values {
            w.bytes(&v.to_le_bytes())?;
        }
        let mut mask = vec![0u8; s.missing.len().div_ceil(8)];
        for (i, _) in s.missing.iter().enumerate().filter(|(_, &m)| m) {
            mask[i / 8] |= 1 << (i % 8);
        }
        w.bytes(&mask)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Dataset> {
    let mut r = Reader(BufReader::new(File::open(path)?));
    if &r.array::<4>()? != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot(format!("{} is not a dataset snapshot", path.display())));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
    }
    let dataset_id = r.str()?;
    let metric_count = r.u32()?;
    let metrics = (0..metric_count).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let native_granularity = r.granularity()?;
    let row_count = r.len(u64::MAX)?;
    let skipped_rows = r.len(u64::MAX)?;
    let series_count = r.u32()?;
    let mut series = Vec::with_capacity(series_count.min(1 << 16) as usize);
    for _ in 0..series_count {
        let (center, cluster, node, metric) = (r.str()?, r.str()?, r.str()?, r.str()?);
        let node = NodePath::new(center, cluster, node).map_err(|e| Error::Snapshot(e.to_string()))?;
        let start_timestamp = i64::from_le_bytes(r.array()?);
        let granularity = r.granularity()?;
        let len = r.len(MAX_LEN)?;
        let values = (0..len)
            .map(|_| Ok(f64::from_le_bytes(r.array()?)))
            .collect::<Result<Vec<_>>>()?;
        let mut mask = vec![0u8; len.div_ceil(8)];
        r.0.read_exact(&mut mask)
            .map_err(|e| Error::Snapshot(format!("truncated snapshot: {e}")))?;
        let missing = (0..len).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
        series.push(MetricSeries {
            node,
            metric,
            granularity,
            start_timestamp,
            values,
            missing,
        });
    }
    let mut dataset = Dataset::from_series(dataset_id, series)?;
    dataset.manifest.metrics = metrics;
    dataset.manifest.native_granularity = native_granularity;
    dataset.manifest.row_count = row_count;
    dataset.manifest.skipped_rows = skipped_rows;
    Ok(dataset)
}
