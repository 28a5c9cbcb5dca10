//! 2-D embeddings of node feature vectors: exact t-SNE or PCA.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMethod {
    Tsne,
    Pca,
}

impl std::str::FromStr for EmbedMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tsne" | "t-sne" => Ok(EmbedMethod::Tsne),
            "pca" => Ok(EmbedMethod::Pca),
            other => Err(Error::Parse(format!("unknown embedding method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub positions: Vec<[f64; 2]>,
    /// Method actually used.
    pub method: EmbedMethod,
    /// Set when t-SNE was requested but PCA was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            seed: 0,
        }
    }
}

fn check_rows(vectors: &[Vec<f64>]) -> Result<usize> {
    let d = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Misaligned("feature vectors differ in length".into()));
    }
    Ok(d)
}

/// First two principal-component scores of the rows of `vectors`.
///
/// Each axis is signed so its largest-magnitude coordinate is positive.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let d = check_rows(vectors)?;
    let n = vectors.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut x = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
    for j in 0..d {
        let mean = x.column(j).sum() / n as f64;
        x.column_mut(j).add_scalar_mut(-mean);
    }
    // Work in the smaller of the Gram (n x n) and covariance (d x d) spaces.
    let scores: Vec<Vec<f64>> = if n <= d {
        let eig = SymmetricEigen::new(&x * x.transpose());
        top_two(&eig)
            .into_iter()
            .map(|k| {
                let lambda = eig.eigenvalues[k].max(0.0);
                eig.eigenvectors.column(k).iter().map(|u| u * lambda.sqrt()).collect()
            })
            .collect()
    } else {
        let eig = SymmetricEigen::new(x.transpose() * &x);
        top_two(&eig)
            .into_iter()
            .map(|k| {
                if eig.eigenvalues[k] <= 0.0 {
                    return vec![0.0; n];
                }
                (&x * eig.eigenvectors.column(k)).iter().copied().collect()
            })
            .collect()
    };
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut axes: Vec<Vec<f64>> = scores;
    for axis in axes.iter_mut() {
        // numerically zero axes collapse to exact zeros
        if axis.iter().all(|v| v.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            axis.iter_mut().for_each(|v| *v = 0.0);
        }
        let max_abs = axis.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if let Some(p) = axis.iter().position(|v| v.abs() >= max_abs * (1.0 - 1e-9)) {
            if axis[p] < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
    while axes.len() < 2 {
        axes.push(vec![0.0; n]);
    }
    Ok((0..n).map(|i| [axes[0][i], axes[1][i]]).collect())
}

fn top_two(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    idx.truncate(2);
    idx
}

fn squared_distances(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = vectors[i]
                .iter()
                .zip(&vectors[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Conditional probabilities p_{j|i} with a per-point Gaussian bandwidth
/// found by bisection so that each row's perplexity matches the target.
fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
        for _ in 0..100 {
            let min_d = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
            let mut sum = 0.0;
            for j in 0..n {
                row[j] = if j == i { 0.0 } else { (-(d[j] - min_d) * beta).exp() };
                sum += row[j];
            }
            let mut weighted = 0.0;
            for j in 0..n {
                row[j] /= sum;
                weighted += row[j] * (d[j] - min_d);
            }
            // Shannon entropy (nats) of the row
            let entropy = sum.ln() + beta * weighted;
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        p[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    p
}

fn tsne(vectors: &[Vec<f64>], config: &TsneConfig) -> Vec<[f64; 2]> {
    let n = vectors.len();
    let dist = squared_distances(vectors);
    let cond = conditional_affinities(&dist, n, config.perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0_f64; 2]; n];
    let mut gains = vec![[1.0_f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0_f64; 2]; n];

    for iter in 0..config.iterations {
        let exaggerate = iter < config.exaggeration_iters;
        let momentum = if exaggerate { 0.5 } else { 0.8 };
        let factor = if exaggerate { config.exaggeration } else { 1.0 };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let mult = 4.0 * (factor * p[i * n + j] - q / z) * q;
                g[0] += mult * (y[i][0] - y[j][0]);
                g[1] += mult * (y[i][1] - y[j][1]);
            }
            grad[i] = g;
        }
        for i in 0..n {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (velocity[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(0.01);
                velocity[i][k] = momentum * velocity[i][k] - config.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += velocity[i][k];
            }
        }
        for k in 0..2 {
            let mean = y.iter().map(|p| p[k]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|p| p[k] -= mean);
        }
    }
    y
}

/// Embeds feature vectors in the plane.
///
/// t-SNE needs at least four points (perplexity is capped at `(n - 1) / 3`
/// and must stay at or above 1) and some spread; otherwise PCA is used and
/// `fallback` is set.
pub fn embed_2d(vectors: &[Vec<f64>], method: EmbedMethod, config: &TsneConfig) -> Result<Embedding> {
    check_rows(vectors)?;
    let n = vectors.len();
    let pca = |fallback| {
        Ok(Embedding {
            positions: pca_2d(vectors)?,
            method: EmbedMethod::Pca,
            fallback,
        })
    };
    if method == EmbedMethod::Pca {
        return pca(false);
    }
    let cap = (n as f64 - 1.0) / 3.0;
    let spread = vectors.iter().any(|v| v != &vectors[0]);
    if cap < 1.0 || !spread {
        return pca(true);
    }
    if !(config.perplexity > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "perplexity must be positive, got {}",
            config.perplexity
        )));
    }
    let mut cfg = *config;
    // keep strictly below (n - 1) / 3
    cfg.perplexity = cfg.perplexity.min(cap * (1.0 - 1e-9)).max(1.0);
    Ok(Embedding {
        positions: tsne(vectors, &cfg),
        method: EmbedMethod::Tsne,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// Mean silhouette of the given labels on 2-D points.
    fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
        let n = points.len();
        let mut total = 0.0;
        for i in 0..n {
            let mut same = (0.0, 0);
            let mut other = (0.0, 0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = dist(points[i], points[j]);
                if labels[i] == labels[j] {
                    same = (same.0 + d, same.1 + 1);
                } else {
                    other = (other.0 + d, other.1 + 1);
                }
            }
            let a = same.0 / same.1 as f64;
            let b = other.0 / other.1 as f64;
            total += (b - a) / a.max(b);
        }
        total / n as f64
    }

    fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for (label, center) in [(0usize, 0.0), (1, 10.0)] {
            for _ in 0..20 {
                vectors.push((0..5).map(|_| center + normal.sample(&mut rng)).collect());
                labels.push(label);
            }
        }
        (vectors, labels)
    }

    #[test]
    fn tsne_separates_blobs() {
        let (vectors, labels) = blobs();
        let cfg = TsneConfig { perplexity: 10.0, seed: 3, ..TsneConfig::default() };
        let e = embed_2d(&vectors, EmbedMethod::Tsne, &cfg).unwrap();
        assert_eq!(e.method, EmbedMethod::Tsne);
        assert!(!e.fallback);
        assert!(e.positions.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        let s = silhouette(&e.positions, &labels);
        assert!(s >= 0.5, "silhouette {s}");
    }

    #[test]
    fn tsne_is_deterministic_for_a_seed() {
        let (vectors, _) = blobs();
        let cfg = TsneConfig { perplexity: 5.0, iterations: 300, seed: 11, ..TsneConfig::default() };
        let a = embed_2d(&vectors, EmbedMethod::Tsne, &cfg).unwrap();
        let b = embed_2d(&vectors, EmbedMethod::Tsne, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perplexity_is_matched() {
        let (vectors, _) = blobs();
        let n = vectors.len();
        let dist = squared_distances(&vectors);
        let p = conditional_affinities(&dist, n, 8.0);
        for i in 0..n {
            let row = &p[i * n..(i + 1) * n];
            let h: f64 = row.iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
            assert!((h.exp() - 8.0).abs() < 1e-2, "row {i} perplexity {}", h.exp());
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_vectors_fall_back_to_origin() {
        let vectors = vec![vec![2.0, 3.0, 4.0]; 6];
        let e = embed_2d(&vectors, EmbedMethod::Tsne, &TsneConfig::default()).unwrap();
        assert!(e.fallback);
        assert_eq!(e.method, EmbedMethod::Pca);
        assert!(e.positions.iter().all(|p| *p == [0.0, 0.0]));
    }

    #[test]
    fn too_few_points_fall_back() {
        let vectors = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![3.0, 3.0]];
        let e = embed_2d(&vectors, EmbedMethod::Tsne, &TsneConfig::default()).unwrap();
        assert!(e.fallback);
        assert_eq!(e.positions.len(), 3);
    }

    #[test]
    fn pca_preserves_rank_two_distances() {
        // points on a tilted plane in 4-D
        let a = [1.0, 2.0, -1.0, 0.5];
        let b = [0.0, -1.0, 3.0, 2.0];
        let coeffs = [(0.0, 0.0), (1.0, 0.5), (-2.0, 1.0), (3.0, -1.5), (0.5, 2.5), (-1.0, -1.0)];
        let vectors: Vec<Vec<f64>> = coeffs
            .iter()
            .map(|(s, t)| (0..4).map(|k| 7.0 + s * a[k] + t * b[k]).collect())
            .collect();
        for subset in [vectors.clone(), [vectors.clone(), vectors.clone()].concat()] {
            let pos = pca_2d(&subset).unwrap();
            for i in 0..subset.len() {
                for j in 0..subset.len() {
                    let orig: f64 = subset[i].iter().zip(&subset[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    assert!((orig - dist(pos[i], pos[j])).abs() < 1e-6);
                }
            }
        }
        // also exercise the covariance branch (n > d)
        let tall: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0, (i % 3) as f64]).collect();
        let pos = pca_2d(&tall).unwrap();
        let e = embed_2d(&tall, EmbedMethod::Pca, &TsneConfig::default()).unwrap();
        assert_eq!(pos, e.positions);
    }
}
