//! Local outlier factor over Euclidean feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reachability averages below this count as zero (duplicate clusters).
const MIN_MEAN_REACH: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofScores {
    pub raw: Vec<f64>,
    /// `raw` mapped affinely so the minimum is -1 and the maximum +1.
    pub normalized: Vec<f64>,
}

/// Maps raw LOF values onto `[-1, 1]`; indistinguishable values map to 0.
pub fn normalize_lof(raw: &[f64]) -> Vec<f64> {
    let (min, max) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = max - min;
    if raw.is_empty() || !(span > 1e-12 * max.abs().max(1.0)) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|v| 2.0 * (v - min) / span - 1.0).collect()
}

/// LOF with `k` neighbours.
///
/// The neighbourhood of a point holds every other point within its
/// k-distance, so ties at the k-th distance are all included. Exact
/// duplicates are ordinary neighbours at distance zero; a mean reachability
/// of zero is floored at `1e-10` so densities stay finite.
pub fn lof_scores(vectors: &[Vec<f64>], k: usize) -> Result<LofScores> {
    let n = vectors.len();
    if k < 2 {
        return Err(Error::InvalidParameter(format!("LOF needs k >= 2, got {k}")));
    }
    if n < k + 1 {
        return Err(Error::InvalidParameter(format!(
            "LOF with k = {k} needs at least {} points, got {n}",
            k + 1
        )));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Misaligned("feature vectors differ in length".into()));
    }

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }

    let mut k_distance = vec![0.0; n];
    let mut neighbours: Vec<Vec<usize>> = Vec::with_capacity(n);
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let kd = row[others[k - 1]];
        k_distance[i] = kd;
        others.retain(|&j| row[j] <= kd);
        neighbours.push(others);
    }

    let lrd: Vec<f64> = (0..n)
        .map(|i| {
            let nb = &neighbours[i];
            let reach: f64 = nb.iter().map(|&o| k_distance[o].max(dist[i * n + o])).sum();
            1.0 / (reach / nb.len() as f64).max(MIN_MEAN_REACH)
        })
        .collect();

    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let nb = &neighbours[i];
            nb.iter().map(|&o| lrd[o] / lrd[i]).sum::<f64>() / nb.len() as f64
        })
        .collect();
    let normalized = normalize_lof(&raw);
    Ok(LofScores { raw, normalized })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_outlier_is_most_anomalous() {
        let mut pts: Vec<Vec<f64>> = (0..25).map(|i| vec![(i % 5) as f64, (i / 5) as f64]).collect();
        pts.push(vec![100.0, 100.0]);
        let s = lof_scores(&pts, 5).unwrap();
        let argmax = (0..pts.len()).max_by(|&a, &b| s.raw[a].total_cmp(&s.raw[b])).unwrap();
        assert_eq!(argmax, 25);
        assert_eq!(s.normalized[25], 1.0);
        assert!(s.raw[25] > 10.0);
    }

    #[test]
    fn equilateral_triangle_is_uniform() {
        let h = 3f64.sqrt() / 2.0;
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]];
        let s = lof_scores(&pts, 2).unwrap();
        assert!(s.raw.iter().all(|v| (v - 1.0).abs() < 1e-9));
        assert_eq!(s.normalized, vec![0.0; 3]);
    }

    #[test]
    fn duplicates_stay_finite() {
        let pts = vec![vec![0.0], vec![0.0], vec![0.0], vec![5.0]];
        let s = lof_scores(&pts, 2).unwrap();
        assert!(s.raw.iter().all(|v| v.is_finite()));
        assert_eq!(s.normalized[3], 1.0);
    }

    #[test]
    fn argument_checks() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(lof_scores(&pts, 1).is_err());
        assert!(lof_scores(&pts, 3).is_err());
        assert!(lof_scores(&[vec![0.0], vec![1.0, 2.0], vec![3.0]], 2).is_err());
    }
}
