use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Projects `r` aligned metric series onto their first principal component.
///
/// Each metric is standardized first and zero-variance metrics are dropped.
/// The component's sign is fixed so its largest-magnitude loading is
/// positive (first such loading on ties).
pub fn pca_project(metrics: &[&[f64]]) -> Result<Vec<f64>> {
    let n = metrics.first().map_or(0, |m| m.len());
    if metrics.iter().any(|m| m.len() != n) {
        return Err(Error::Misaligned("metric series differ in length".into()));
    }
    let standardized: Vec<Vec<f64>> = metrics
        .iter()
        .filter_map(|m| {
            let mean = m.iter().sum::<f64>() / n as f64;
            let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            (std > 1e-12 * mean.abs().max(1.0)).then(|| m.iter().map(|v| (v - mean) / std).collect())
        })
        .collect();
    let r = standardized.len();
    if r == 0 {
        return Ok(vec![0.0; n]);
    }
    let z = DMatrix::from_fn(n, r, |t, j| standardized[j][t]);
    let cov = z.transpose() * &z / n as f64;
    let eig = SymmetricEigen::new(cov);
    let top = (0..r)
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(b.cmp(&a)))
        .expect("r > 0");
    let mut loading: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let max_abs = loading.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let pivot = loading
        .iter()
        .position(|v| v.abs() >= max_abs * (1.0 - 1e-9))
        .expect("r > 0");
    if loading[pivot] < 0.0 {
        loading.iter_mut().for_each(|v| *v = -*v);
    }
    Ok((0..n)
        .map(|t| (0..r).map(|j| z[(t, j)] * loading[j]).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn standardize(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let s = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        x.iter().map(|v| (v - m) / s).collect()
    }

    #[test]
    fn identical_metrics_give_rank_one_projection() {
        let m: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin() * 4.0 + 1.0).collect();
        let p = pca_project(&[&m, &m]).unwrap();
        assert!(corr(&p, &m).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn opposite_metrics_fold_to_same_projection() {
        // 2x2 correlation matrix [[1, -1], [-1, 1]]: top eigenvalue 2 with
        // eigenvector (1, -1) / sqrt(2); scores are sqrt(2) * z.
        let m: Vec<f64> = (0..40).map(|t| (t as f64).powf(1.3)).collect();
        let neg: Vec<f64> = m.iter().map(|v| -v).collect();
        let z = standardize(&m);
        let expected: Vec<f64> = z.iter().map(|v| 2f64.sqrt() * v).collect();
        let p = pca_project(&[&m, &neg]).unwrap();
        let same = pca_project(&[&m, &m]).unwrap();
        for ((a, b), c) in p.iter().zip(&expected).zip(&same) {
            assert!((a - b).abs() < 1e-9);
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_metric_does_not_dominate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let sine: Vec<f64> = (0..200).map(|t| (2.0 * PI * t as f64 / 24.0).sin()).collect();
        let noise: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
        let p = pca_project(&[&noise, &sine, &sine]).unwrap();
        assert!(corr(&p, &sine).abs() >= 0.95);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(pca_project(&[&[3.0; 5], &[1.0; 5]]).unwrap(), vec![0.0; 5]);
        assert!(pca_project(&[&[1.0, 2.0], &[1.0]]).is_err());
    }
}
