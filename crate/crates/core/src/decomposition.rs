//! Seasonal-trend decomposition by loess (STL), additive form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Granularity;
use crate::periodicity::PeriodEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StlParams {
    /// Observations per cycle.
    pub n_p: usize,
    /// Inner-loop passes.
    pub n_i: usize,
    /// Robustness iterations of the outer loop.
    pub n_o: usize,
    /// Low-pass filter width (odd).
    pub n_l: usize,
    /// Cycle-subseries smoother width.
    pub n_s: usize,
    /// Trend smoother width (odd).
    pub n_t: usize,
}

impl StlParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(format!("{msg}: {self:?}")));
        if self.n_p < 2 {
            return bad("n_p must be at least 2");
        }
        if self.n_i < 1 {
            return bad("n_i must be at least 1");
        }
        if self.n_l < 3 || self.n_l % 2 == 0 {
            return bad("n_l must be odd and at least 3");
        }
        if self.n_t < 3 || self.n_t % 2 == 0 {
            return bad("n_t must be odd and at least 3");
        }
        if self.n_s < 3 {
            return bad("n_s must be at least 3");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlComponents {
    pub seasonal: Vec<f64>,
    pub trend: Vec<f64>,
    pub residual: Vec<f64>,
}

/// Smallest odd integer `>= x`.
fn odd_ceil(x: f64) -> usize {
    // Guard against 1.67 * n landing a hair above an integer.
    let c = (x - 1e-9).ceil().max(1.0) as usize;
    if c % 2 == 0 {
        c + 1
    } else {
        c
    }
}

/// STL parameters for a detected period.
///
/// The period is already measured in samples of the working granularity,
/// so `n_p` is the rounded period whatever the granularity; for hourly data
/// a period of `T` days arrives here as `24 T` samples.
pub fn default_stl_params(period: &PeriodEstimate, _granularity: Granularity) -> Result<StlParams> {
    let t = period.period.filter(|_| period.validated).ok_or(Error::NoPeriod)?;
    let n_p = (t.round() as usize).max(2);
    Ok(StlParams {
        n_p,
        n_i: 1,
        n_o: 5,
        n_l: odd_ceil(n_p as f64).max(3),
        n_s: 15,
        n_t: odd_ceil(1.67 * n_p as f64).max(3),
    })
}

fn tricube(u: f64) -> f64 {
    let v = 1.0 - u * u * u;
    v * v * v
}

/// Weighted polynomial fit of degree 0 or 1 evaluated at `x0`.
///
/// Returns `None` when the weights sum to zero.
fn weighted_fit(y: &[f64], w: &[f64], x0: f64, degree: usize) -> Option<f64> {
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return None;
    }
    let mean_x = w.iter().enumerate().map(|(j, wj)| wj * j as f64).sum::<f64>() / sw;
    let mut fit = 0.0;
    if degree == 0 {
        for (yj, wj) in y.iter().zip(w) {
            fit += wj * yj;
        }
        return Some(fit / sw);
    }
    // Variance of positions under the normalized weights.
    let var_x: f64 = w
        .iter()
        .enumerate()
        .map(|(j, wj)| wj / sw * (j as f64 - mean_x).powi(2))
        .sum();
    let range = (y.len().max(2) - 1) as f64;
    let use_slope = var_x.sqrt() > 1e-3 * range;
    for (j, (yj, wj)) in y.iter().zip(w).enumerate() {
        let mut coef = wj / sw;
        if use_slope {
            coef *= 1.0 + (x0 - mean_x) * (j as f64 - mean_x) / var_x;
        }
        fit += coef * yj;
    }
    Some(fit)
}

/// Loess estimate at position `x0` (which may lie outside `0..n`).
fn loess_at(
    y: &[f64],
    rw: Option<&[f64]>,
    x0: f64,
    width: usize,
    degree: usize,
    buf: &mut Vec<f64>,
) -> Option<f64> {
    let n = y.len();
    let (lo, hi, h) = if width >= n {
        let far = x0.abs().max(((n - 1) as f64 - x0).abs());
        (0, n - 1, far + (width - n) as f64 / 2.0)
    } else {
        // q nearest neighbours of x0 on the integer grid
        let center = x0.round().clamp(0.0, (n - 1) as f64) as usize;
        let half = width / 2;
        let lo = center.saturating_sub(half).min(n - width);
        let hi = lo + width - 1;
        let h = (x0 - lo as f64).abs().max((hi as f64 - x0).abs());
        (lo, hi, h)
    };
    let h = h.max(f64::MIN_POSITIVE);
    buf.clear();
    for j in lo..=hi {
        let r = (j as f64 - x0).abs();
        let mut w = if r <= 1e-3 * h {
            1.0
        } else if r <= 0.999 * h {
            tricube(r / h)
        } else {
            0.0
        };
        if let Some(rw) = rw {
            w *= rw[j];
        }
        buf.push(w);
    }
    weighted_fit(&y[lo..=hi], buf, x0 - lo as f64, degree)
}

fn check_loess_args(len: usize, width: usize, degree: usize, weights: Option<&[f64]>) -> Result<()> {
    if width < 3 || width % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "loess width must be odd and at least 3, got {width}"
        )));
    }
    if degree > 1 {
        return Err(Error::InvalidParameter(format!(
            "loess degree must be 0 or 1, got {degree}"
        )));
    }
    if let Some(w) = weights {
        if w.len() != len {
            return Err(Error::InvalidParameter(format!(
                "weights length {} does not match values length {len}",
                w.len()
            )));
        }
        if w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
    }
    Ok(())
}

/// Evaluate the smoother at arbitrary positions.
fn loess_eval(
    y: &[f64],
    width: usize,
    degree: usize,
    rw: Option<&[f64]>,
    positions: impl Iterator<Item = f64>,
) -> Vec<f64> {
    let n = y.len();
    let ones;
    let global_w = match rw {
        Some(w) => w,
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let global = width > 2 * n;
    let mut buf = Vec::with_capacity(width.min(n));
    positions
        .map(|x0| {
            let est = if global {
                weighted_fit(y, global_w, x0, degree)
            } else {
                loess_at(y, rw, x0, width, degree, &mut buf)
                    .or_else(|| weighted_fit(y, global_w, x0, degree))
            };
            est.unwrap_or_else(|| {
                let idx = x0.round().clamp(0.0, (n - 1) as f64) as usize;
                y[idx]
            })
        })
        .collect()
}

/// Locally weighted regression with tricube weights, evaluated at every index.
///
/// A `width` larger than twice the input length degrades to a single global
/// fit of the requested degree.
pub fn loess_smooth(
    values: &[f64],
    width: usize,
    degree: usize,
    robustness_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    check_loess_args(values.len(), width, degree, robustness_weights)?;
    if values.is_empty() {
        return Ok(Vec::new());
    }
    Ok(loess_eval(
        values,
        width,
        degree,
        robustness_weights,
        (0..values.len()).map(|i| i as f64),
    ))
}

fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    if x.len() < len {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(x.len() - len + 1);
    let mut sum: f64 = x[..len].iter().sum();
    out.push(sum / len as f64);
    for i in len..x.len() {
        sum += x[i] - x[i - len];
        out.push(sum / len as f64);
    }
    out
}

/// Smooths every cycle-subseries and extends each by one value at both ends.
///
/// Output has `n + 2 * n_p` values, laid out on the grid `-n_p .. n + n_p`.
fn cycle_subseries(y: &[f64], rw: Option<&[f64]>, params: &StlParams) -> Vec<f64> {
    let n = y.len();
    let np = params.n_p;
    let mut out = vec![0.0; n + 2 * np];
    let mut sub = Vec::new();
    let mut sub_w = Vec::new();
    for phase in 0..np {
        sub.clear();
        sub_w.clear();
        for i in (phase..n).step_by(np) {
            sub.push(y[i]);
            sub_w.push(rw.map_or(1.0, |w| w[i]));
        }
        let m = sub.len();
        let smoothed: Vec<f64> = if params.n_s > m {
            // Too few cycles for the smoother: use the (robust) subseries mean.
            let sw: f64 = sub_w.iter().sum();
            let mean = if sw > 0.0 {
                sub.iter().zip(&sub_w).map(|(v, w)| v * w).sum::<f64>() / sw
            } else {
                sub.iter().sum::<f64>() / m as f64
            };
            vec![mean; m + 2]
        } else {
            let w = rw.map(|_| sub_w.as_slice());
            loess_eval(&sub, params.n_s, 1, w, (-1..=m as i64).map(|p| p as f64))
        };
        for (j, v) in smoothed.into_iter().enumerate() {
            // j = 0 is position -1 of the subseries
            out[phase + j * np] = v;
        }
    }
    out
}

fn robustness_weights(residual: &[f64]) -> Vec<f64> {
    let mut abs: Vec<f64> = residual.iter().map(|r| r.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let median = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let h = 6.0 * median;
    residual
        .iter()
        .map(|r| {
            let u = r.abs();
            if u <= 1e-3 * h {
                1.0
            } else if u <= 0.999 * h {
                let v = 1.0 - (u / h).powi(2);
                v * v
            } else {
                0.0
            }
        })
        .collect()
}

fn inner_loop(y: &[f64], rw: Option<&[f64]>, params: &StlParams, seasonal: &mut [f64], trend: &mut [f64]) {
    let n = y.len();
    let np = params.n_p;
    for _ in 0..params.n_i {
        let detrended: Vec<f64> = y.iter().zip(trend.iter()).map(|(a, b)| a - b).collect();
        let cycle = cycle_subseries(&detrended, rw, params);
        let ma = moving_average(&moving_average(&moving_average(&cycle, np), np), 3);
        debug_assert_eq!(ma.len(), n);
        let low = loess_eval(&ma, params.n_l, 1, None, (0..n).map(|i| i as f64));
        for i in 0..n {
            seasonal[i] = cycle[np + i] - low[i];
        }
        let deseason: Vec<f64> = y.iter().zip(seasonal.iter()).map(|(a, s)| a - s).collect();
        let t = loess_eval(&deseason, params.n_t, 1, rw, (0..n).map(|i| i as f64));
        trend.copy_from_slice(&t);
    }
}

pub fn stl_decompose(data: &[f64], params: &StlParams) -> Result<StlComponents> {
    params.validate()?;
    let n = data.len();
    if n < 2 * params.n_p {
        return Err(Error::InsufficientCycles {
            len: n,
            period: params.n_p,
        });
    }
    let mut seasonal = vec![0.0; n];
    let mut trend = vec![0.0; n];
    let mut weights: Option<Vec<f64>> = None;
    for pass in 0..=params.n_o {
        inner_loop(data, weights.as_deref(), params, &mut seasonal, &mut trend);
        if pass == params.n_o {
            break;
        }
        let fit_residual: Vec<f64> = (0..n).map(|i| data[i] - seasonal[i] - trend[i]).collect();
        weights = Some(robustness_weights(&fit_residual));
    }
    // Residual is whatever is left, so `d - s - t - r == 0` holds exactly
    // when evaluated left to right.
    let residual = (0..n).map(|i| data[i] - seasonal[i] - trend[i]).collect();
    Ok(StlComponents {
        seasonal,
        trend,
        residual,
    })
}
