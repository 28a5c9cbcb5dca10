//! Gaussian kernel density over 2-D embedding positions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Gaussian,
}

/// Density sampled at the centers of a `resolution x resolution` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    /// `grid[row][col]`, rows along y, columns along x.
    pub grid: Vec<Vec<f64>>,
    /// Per-axis bandwidth `(h_x, h_y)`.
    pub bandwidth: [f64; 2],
    pub kernel: Kernel,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
}

impl DensityField {
    pub fn cell_area(&self) -> f64 {
        let res = self.grid.len() as f64;
        (self.x_range[1] - self.x_range[0]) / res * (self.y_range[1] - self.y_range[0]) / res
    }
}

/// Grid padding in bandwidths on every side.
const PAD: f64 = 4.0;

/// `f(x) = 1 / (n h_x h_y) * sum_i K((x - x_i) / h)` with the standard
/// bivariate normal kernel.
pub fn kde_eval(positions: &[[f64; 2]], bandwidth: [f64; 2], at: [f64; 2]) -> f64 {
    let [hx, hy] = bandwidth;
    let norm = 1.0 / (2.0 * PI * positions.len() as f64 * hx * hy);
    positions
        .iter()
        .map(|p| {
            let u = (at[0] - p[0]) / hx;
            let v = (at[1] - p[1]) / hy;
            (-(u * u + v * v) / 2.0).exp()
        })
        .sum::<f64>()
        * norm
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n < 2 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Density field over the bounding box of `positions`, padded by four
/// bandwidths. Without an explicit bandwidth, Scott's rule
/// `n^(-1/6) * sigma_axis` is used per axis, floored at `1e-3` of the data
/// extent (or of a unit box when all points coincide).
pub fn kde_density(
    positions: &[[f64; 2]],
    grid_resolution: usize,
    bandwidth: Option<f64>,
) -> Result<DensityField> {
    if positions.is_empty() {
        return Err(Error::InvalidParameter("KDE needs at least one position".into()));
    }
    if grid_resolution == 0 {
        return Err(Error::InvalidParameter("grid resolution must be positive".into()));
    }
    if let Some(h) = bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {h}")));
        }
    }
    let axis = |k: usize| positions.iter().map(move |p| p[k]);
    let bounds = |k: usize| {
        axis(k).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x_lo, x_hi) = bounds(0);
    let (y_lo, y_hi) = bounds(1);
    let extent = (x_hi - x_lo).max(y_hi - y_lo);
    let floor = 1e-3 * if extent > 0.0 { extent } else { 1.0 };
    let n = positions.len() as f64;
    let h = match bandwidth {
        Some(h) => [h, h],
        None => [0, 1].map(|k| (n.powf(-1.0 / 6.0) * std_dev(axis(k))).max(floor)),
    };
    let x_range = [x_lo - PAD * h[0], x_hi + PAD * h[0]];
    let y_range = [y_lo - PAD * h[1], y_hi + PAD * h[1]];
    let res = grid_resolution;
    let dx = (x_range[1] - x_range[0]) / res as f64;
    let dy = (y_range[1] - y_range[0]) / res as f64;
    let grid = (0..res)
        .map(|row| {
            let y = y_range[0] + (row as f64 + 0.5) * dy;
            (0..res)
                .map(|col| {
                    let x = x_range[0] + (col as f64 + 0.5) * dx;
                    kde_eval(positions, h, [x, y])
                })
                .collect()
        })
        .collect();
    Ok(DensityField {
        grid,
        bandwidth: h,
        kernel: Kernel::Gaussian,
        x_range,
        y_range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_peak() {
        let h = 0.7;
        let v = kde_eval(&[[1.0, -2.0]], [h, h], [1.0, -2.0]);
        assert!((v - 1.0 / (2.0 * PI * h * h)).abs() < 1e-12);
    }

    #[test]
    fn single_point_field_uses_floor() {
        let f = kde_density(&[[3.0, 3.0]], 8, None).unwrap();
        assert_eq!(f.bandwidth, [1e-3, 1e-3]);
        assert!(f.grid.iter().flatten().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn symmetric_points_have_equal_density() {
        let pts = [[-1.0, 0.0], [1.0, 0.0]];
        let a = kde_eval(&pts, [0.5, 0.5], pts[0]);
        let b = kde_eval(&pts, [0.5, 0.5], pts[1]);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn grid_integrates_to_one() {
        let pts: Vec<[f64; 2]> = (0..30).map(|i| [(i as f64 * 0.37).sin() * 3.0, (i as f64 * 1.3).cos()]).collect();
        let f = kde_density(&pts, 120, None).unwrap();
        let mass: f64 = f.grid.iter().flatten().sum::<f64>() * f.cell_area();
        assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(kde_density(&[], 10, None).is_err());
        assert!(kde_density(&[[0.0, 0.0]], 0, None).is_err());
        assert!(kde_density(&[[0.0, 0.0]], 10, Some(0.0)).is_err());
    }
}
