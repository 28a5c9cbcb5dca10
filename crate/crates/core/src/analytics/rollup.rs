//! Node ranking and spatial / temporal score rollups.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Granularity, NodePath, ScoreRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRank {
    pub node: NodePath,
    pub total_score: f64,
    pub per_metric_mean: BTreeMap<String, f64>,
    pub rank: usize,
}

/// Ranks nodes by the sum of their aggregated scores over all metrics and
/// timestamps, most anomalous first. Ties go to the smaller node id.
pub fn rank_nodes(records: &[ScoreRecord]) -> Vec<NodeRank> {
    let mut per_node: HashMap<&NodePath, (f64, BTreeMap<&str, (f64, usize)>)> = HashMap::new();
    for rec in records {
        let entry = per_node.entry(&rec.node).or_default();
        entry.0 += rec.aggregated;
        let m = entry.1.entry(rec.metric.as_str()).or_default();
        m.0 += rec.aggregated;
        m.1 += 1;
    }
    let mut ranks: Vec<NodeRank> = per_node
        .into_iter()
        .map(|(node, (total, metrics))| NodeRank {
            node: node.clone(),
            total_score: total,
            per_metric_mean: metrics
                .into_iter()
                .map(|(m, (sum, count))| (m.to_string(), sum / count as f64))
                .collect(),
            rank: 0,
        })
        .collect();
    ranks.sort_by(|a, b| {
        b.total_score
            .total_cmp(&a.total_score)
            .then_with(|| a.node.node_id.cmp(&b.node.node_id))
            .then_with(|| a.node.cmp(&b.node))
    });
    for (i, r) in ranks.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRollup {
    pub cluster_id: String,
    pub score: f64,
    pub node_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterRollup {
    pub center_id: String,
    pub score: f64,
    pub node_count: usize,
    /// Only clusters whose summed score exceeds the threshold, descending.
    pub clusters: Vec<ClusterRollup>,
}

/// Sums node scores per data center and per data cluster.
///
/// `hierarchy` lists nodes that should appear even without records; nodes
/// seen only in `records` are added automatically.
pub fn spatial_rollup(
    records: &[ScoreRecord],
    hierarchy: &[NodePath],
    cluster_threshold: f64,
) -> Vec<CenterRollup> {
    // center -> cluster -> (score, nodes)
    let mut tree: BTreeMap<&str, BTreeMap<&str, (f64, BTreeSet<&str>)>> = BTreeMap::new();
    for node in hierarchy.iter().chain(records.iter().map(|r| &r.node)) {
        tree.entry(&node.center_id)
            .or_default()
            .entry(&node.cluster_id)
            .or_default()
            .1
            .insert(&node.node_id);
    }
    for rec in records {
        if let Some(c) = tree
            .get_mut(rec.node.center_id.as_str())
            .and_then(|c| c.get_mut(rec.node.cluster_id.as_str()))
        {
            c.0 += rec.aggregated;
        }
    }
    let mut centers: Vec<CenterRollup> = tree
        .into_iter()
        .map(|(center, clusters)| {
            let score = clusters.values().map(|c| c.0).sum();
            let node_count = clusters.values().map(|c| c.1.len()).sum();
            let mut kept: Vec<ClusterRollup> = clusters
                .into_iter()
                .filter(|(_, c)| c.0 > cluster_threshold)
                .map(|(id, c)| ClusterRollup {
                    cluster_id: id.to_string(),
                    score: c.0,
                    node_count: c.1.len(),
                })
                .collect();
            kept.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.cluster_id.cmp(&b.cluster_id)));
            CenterRollup {
                center_id: center.to_string(),
                score,
                node_count,
                clusters: kept,
            }
        })
        .collect();
    centers.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.center_id.cmp(&b.center_id)));
    centers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollupPoint {
    /// Index on the target-granularity grid.
    pub timestamp_index: usize,
    pub per_metric_sum: BTreeMap<String, f64>,
    pub is_top5: BTreeMap<String, bool>,
}

const TOP_MARKS: usize = 5;

/// Per-timestamp, per-metric score sums across all nodes.
///
/// Records indexed at `source` granularity are bucketed onto the coarser
/// `target` grid. For every metric the five largest sums are flagged; ties
/// at the cut go to the earliest timestamp.
pub fn temporal_rollup(
    records: &[ScoreRecord],
    source: Granularity,
    target: Granularity,
) -> Result<Vec<RollupPoint>> {
    let factor = source.factor_to(target).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "cannot roll {source} records up to finer granularity {target}"
        ))
    })?;
    let metrics: BTreeSet<&str> = records.iter().map(|r| r.metric.as_str()).collect();
    let mut sums: BTreeMap<usize, BTreeMap<&str, f64>> = BTreeMap::new();
    for rec in records {
        *sums
            .entry(rec.timestamp_index / factor)
            .or_default()
            .entry(rec.metric.as_str())
            .or_default() += rec.aggregated;
    }
    let mut points: Vec<RollupPoint> = sums
        .into_iter()
        .map(|(ts, per)| RollupPoint {
            timestamp_index: ts,
            per_metric_sum: metrics
                .iter()
                .map(|m| (m.to_string(), per.get(m).copied().unwrap_or(0.0)))
                .collect(),
            is_top5: metrics.iter().map(|m| (m.to_string(), false)).collect(),
        })
        .collect();
    for m in &metrics {
        let mut order: Vec<usize> = (0..points.len()).collect();
        // points are already in timestamp order, so a stable sort keeps the
        // earliest of equal sums first
        order.sort_by(|&a, &b| points[b].per_metric_sum[*m].total_cmp(&points[a].per_metric_sum[*m]));
        for &i in order.iter().take(TOP_MARKS) {
            points[i].is_top5.insert(m.to_string(), true);
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(center: &str, cluster: &str, node: &str, metric: &str, ts: usize, score: f64) -> ScoreRecord {
        ScoreRecord {
            node: NodePath::new(center, cluster, node).unwrap(),
            metric: metric.into(),
            timestamp_index: ts,
            periodic: 0.0,
            trend: 0.0,
            spike: score,
            aggregated: score,
            warmup: false,
        }
    }

    #[test]
    fn single_node_ranks_first() {
        let r = rank_nodes(&[rec("c", "k", "n1", "cpu", 0, 0.5)]);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].rank, 1);
        assert_eq!(r[0].per_metric_mean["cpu"], 0.5);
    }

    #[test]
    fn ranks_descend_with_tie_break() {
        let recs = vec![
            rec("c", "k", "B", "cpu", 0, 3.0),
            rec("c", "k", "A", "cpu", 0, 2.0),
            rec("c", "k", "A", "mem", 0, 3.0),
        ];
        let r = rank_nodes(&recs);
        assert_eq!(r[0].node.node_id, "A");
        assert_eq!(r[0].total_score, 5.0);
        assert_eq!(r[1].node.node_id, "B");

        let tie = rank_nodes(&[rec("c", "k", "n2", "cpu", 0, 2.0), rec("c", "k", "n1", "cpu", 0, 2.0)]);
        let ids: Vec<&str> = tie.iter().map(|r| r.node.node_id.as_str()).collect();
        assert_eq!(ids, ["n1", "n2"]);
        assert_eq!(tie.iter().map(|r| r.rank).collect::<Vec<_>>(), [1, 2]);
    }

    #[test]
    fn spatial_examples() {
        let one = spatial_rollup(&[rec("c1", "k", "a", "cpu", 0, 1.0), rec("c1", "k", "b", "cpu", 0, 2.0)], &[], 0.0);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].score, 3.0);
        assert_eq!(one[0].node_count, 2);

        let recs = vec![
            rec("c1", "k1", "a", "cpu", 0, 4.0),
            rec("c2", "k2", "b", "cpu", 0, 7.0),
        ];
        let r = spatial_rollup(&recs, &[], 10.0);
        assert_eq!(r.iter().map(|c| c.score).collect::<Vec<_>>(), [7.0, 4.0]);
        assert!(r.iter().all(|c| c.clusters.is_empty()));
        let r = spatial_rollup(&recs, &[], 5.0);
        assert!(r[1].clusters.is_empty());
        assert_eq!(r[0].clusters[0].cluster_id, "k2");
    }

    #[test]
    fn spatial_includes_silent_nodes() {
        let extra = NodePath::new("c9", "k9", "quiet").unwrap();
        let r = spatial_rollup(&[rec("c1", "k1", "a", "cpu", 0, 1.0)], &[extra], 0.0);
        assert_eq!(r.len(), 2);
        assert_eq!(r[1].center_id, "c9");
        assert_eq!(r[1].score, 0.0);
    }

    #[test]
    fn temporal_examples() {
        let recs: Vec<_> = [0.0, 1.0, 0.0]
            .iter()
            .enumerate()
            .map(|(t, s)| rec("c", "k", "n", "cpu", t, *s))
            .collect();
        let pts = temporal_rollup(&recs, Granularity::Hour, Granularity::Hour).unwrap();
        assert_eq!(pts.iter().map(|p| p.per_metric_sum["cpu"]).collect::<Vec<_>>(), [0.0, 1.0, 0.0]);
        assert!(pts.iter().all(|p| p.is_top5["cpu"]));

        let recs = vec![
            rec("c", "k", "a", "cpu", 0, 1.0),
            rec("c", "k", "a", "cpu", 1, 2.0),
            rec("c", "k", "b", "cpu", 0, 3.0),
            rec("c", "k", "b", "cpu", 1, 4.0),
        ];
        let pts = temporal_rollup(&recs, Granularity::Hour, Granularity::Hour).unwrap();
        assert_eq!(pts.iter().map(|p| p.per_metric_sum["cpu"]).collect::<Vec<_>>(), [4.0, 6.0]);
    }

    #[test]
    fn exactly_five_flags() {
        let recs: Vec<_> = (0..10).map(|t| rec("c", "k", "n", "cpu", t, (t * 7 % 10) as f64)).collect();
        let pts = temporal_rollup(&recs, Granularity::Hour, Granularity::Hour).unwrap();
        let flagged: Vec<usize> = pts.iter().filter(|p| p.is_top5["cpu"]).map(|p| p.timestamp_index).collect();
        assert_eq!(flagged.len(), 5);
        let mut top: Vec<usize> = (0..10).collect();
        top.sort_by_key(|t| std::cmp::Reverse(t * 7 % 10));
        let mut expected = top[..5].to_vec();
        expected.sort();
        assert_eq!(flagged, expected);
    }

    #[test]
    fn ties_at_cut_prefer_earliest() {
        let recs: Vec<_> = (0..8).map(|t| rec("c", "k", "n", "cpu", t, 1.0)).collect();
        let pts = temporal_rollup(&recs, Granularity::Hour, Granularity::Hour).unwrap();
        let flagged: Vec<usize> = pts.iter().filter(|p| p.is_top5["cpu"]).map(|p| p.timestamp_index).collect();
        assert_eq!(flagged, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn coarser_buckets_sum() {
        let recs: Vec<_> = (0..48).map(|t| rec("c", "k", "n", "cpu", t, 0.5)).collect();
        let pts = temporal_rollup(&recs, Granularity::Hour, Granularity::Day).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].per_metric_sum["cpu"], 12.0);
        assert!(temporal_rollup(&recs, Granularity::Day, Granularity::Hour).is_err());
    }
}
