//! Periodic, trend and spike anomaly scores and their aggregation.
//!
//! [`score_series`] runs the full incremental pipeline over one metric
//! series: every history window is period-checked, decomposed, and compared
//! with the window one step earlier.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decomposition::{default_stl_params, loess_smooth, stl_decompose};
use crate::error::{Error, Result};
use crate::model::{MetricSeries, ScoreRecord};
use crate::periodicity::{detect_period, DEFAULT_MAX_CANDIDATES};

/// Smallest accepted history length.
pub const MIN_HISTORY: usize = 8;
/// Absolute slope below which a trend always counts as flat.
pub const SLOPE_EPS: f64 = 1e-9;
/// Relative floor for the residual standard deviation.
pub const SIGMA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendState {
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl ResidualStats {
    /// Population mean and standard deviation of `residuals`.
    pub fn from_residuals(residuals: &[f64]) -> Self {
        let count = residuals.len();
        let mean = residuals.iter().sum::<f64>() / count.max(1) as f64;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / count.max(1) as f64;
        ResidualStats {
            mean,
            std: var.sqrt(),
            count,
        }
    }
}

/// How the spike score treats residuals inside the `3 sigma` band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeMode {
    /// `min(|R - mu - 3 sigma| / 3 sigma, 1)` exactly as written; a residual
    /// equal to the mean scores 1.
    Verbatim,
    /// `min(max(|R - mu| - 3 sigma, 0) / 3 sigma, 1)`: zero inside the band,
    /// symmetric for low and high spikes.
    #[default]
    Hinge,
}

impl FromStr for SpikeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hinge" => Ok(SpikeMode::Hinge),
            "verbatim" => Ok(SpikeMode::Verbatim),
            other => Err(Error::Parse(format!("unknown spike mode `{other}`"))),
        }
    }
}

impl fmt::Display for SpikeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpikeMode::Verbatim => "verbatim",
            SpikeMode::Hinge => "hinge",
        })
    }
}

/// Combines the three component scores into one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Aggregator {
    Min,
    Max,
    /// Weights for (periodic, trend, spike); nonnegative, summing to 1.
    WeightedAverage { weights: [f64; 3] },
}

impl Default for Aggregator {
    fn default() -> Self {
        Aggregator::WeightedAverage {
            weights: [1.0 / 3.0; 3],
        }
    }
}

impl Aggregator {
    pub fn weighted(weights: [f64; 3]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "aggregator weights must be nonnegative and sum to 1, got {weights:?}"
            )));
        }
        Ok(Aggregator::WeightedAverage { weights })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Aggregator::WeightedAverage { weights } => Aggregator::weighted(weights).map(|_| ()),
            _ => Ok(()),
        }
    }
}

/// Parses `min`, `max`, `avg`, or `avg:w1,w2,w3`.
impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "min" => return Ok(Aggregator::Min),
            "max" => return Ok(Aggregator::Max),
            "avg" | "mean" | "weighted_average" => return Ok(Aggregator::default()),
            _ => {}
        }
        let Some(rest) = s.strip_prefix("avg:") else {
            return Err(Error::Parse(format!("unknown aggregator `{s}`")));
        };
        let parts: Vec<f64> = rest
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("aggregator weights `{rest}`: {e}")))?;
        let weights: [f64; 3] = parts
            .try_into()
            .map_err(|_| Error::Parse(format!("expected three weights, got `{rest}`")))?;
        Aggregator::weighted(weights)
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregator::Min => f.write_str("min"),
            Aggregator::Max => f.write_str("max"),
            Aggregator::WeightedAverage { weights: [a, b, c] } => write!(f, "avg:{a},{b},{c}"),
        }
    }
}

pub fn score_periodic(period: f64, previous: f64) -> f64 {
    debug_assert!(previous > 0.0);
    ((period - previous).abs() / previous).min(1.0)
}

/// Least-squares slope of `trend` against its sample index.
pub fn estimate_slope(trend: &[f64]) -> Result<TrendState> {
    let n = trend.len();
    if n < 2 {
        return Err(Error::DegenerateWindow { len: n, min: 2 });
    }
    let nf = n as f64;
    let mean_x = (nf - 1.0) / 2.0;
    let mean_y = trend.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in trend.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    Ok(TrendState { slope: sxy / sxx })
}

pub fn score_trend(slope: f64, previous: f64, eps: f64) -> f64 {
    if previous.abs() > eps {
        ((slope - previous) / previous).abs().min(1.0)
    } else if slope.abs() <= eps {
        0.0
    } else {
        1.0
    }
}

pub fn score_spike(residual: f64, stats: &ResidualStats, mode: SpikeMode, eps: f64) -> f64 {
    let sigma = stats.std.max(eps * stats.mean.abs().max(1.0));
    let band = 3.0 * sigma;
    let raw = match mode {
        SpikeMode::Verbatim => ((residual - stats.mean - band) / band).abs(),
        SpikeMode::Hinge => ((residual - stats.mean).abs() - band).max(0.0) / band,
    };
    raw.min(1.0)
}

pub fn aggregate(periodic: f64, trend: f64, spike: f64, agg: &Aggregator) -> f64 {
    let v = match *agg {
        Aggregator::Min => periodic.min(trend).min(spike),
        Aggregator::Max => periodic.max(trend).max(spike),
        Aggregator::WeightedAverage { weights: [a, b, c] } => a * periodic + b * trend + c * spike,
    };
    v.clamp(0.0, 1.0)
}

/// Settings of the per-series scoring pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// History length `L`; each window holds `L + 1` points.
    pub history: usize,
    pub aggregator: Aggregator,
    pub spike_mode: SpikeMode,
    pub max_candidates: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            history: 96,
            aggregator: Aggregator::default(),
            spike_mode: SpikeMode::Hinge,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        }
    }
}

/// Decomposition of one window used for scoring.
struct WindowFit {
    period: Option<f64>,
    slope: f64,
    current_residual: f64,
    stats: ResidualStats,
}

/// Trend width used when no period validates: the trend smoother STL would
/// use for a period of half the window.
fn fallback_width(len: usize) -> usize {
    let w = ((1.67 * len as f64 / 2.0).ceil() as usize).max(3);
    w | 1
}

fn fit_window(window: &[f64], config: &DetectorConfig, granularity: crate::Granularity) -> Result<WindowFit> {
    let estimate = detect_period(window, config.max_candidates);
    let params = default_stl_params(&estimate, granularity)
        .ok()
        .filter(|p| window.len() >= 2 * p.n_p);
    let (period, trend, residual) = match params {
        Some(p) => {
            let c = stl_decompose(window, &p)?;
            (estimate.period, c.trend, c.residual)
        }
        None => {
            let trend = loess_smooth(window, fallback_width(window.len()), 1, None)?;
            let residual = window.iter().zip(&trend).map(|(v, t)| v - t).collect();
            (None, trend, residual)
        }
    };
    let slope = estimate_slope(&trend)?.slope;
    let last = residual.len() - 1;
    Ok(WindowFit {
        period,
        slope,
        current_residual: residual[last],
        stats: ResidualStats::from_residuals(&residual[..last]),
    })
}

/// Slope threshold for the trend score: a trend that drifts by less than one
/// residual standard deviation across the window is treated as flat.
pub fn flat_slope(stats: &ResidualStats, history: usize) -> f64 {
    (stats.std / history as f64).max(SLOPE_EPS)
}

/// Scores every index of `series`.
///
/// Indices before `history`, and the first scored index (which has no
/// previous window to compare with), are emitted as warmup records.
pub fn score_series(series: &MetricSeries, config: &DetectorConfig) -> Result<Vec<ScoreRecord>> {
    if config.history < MIN_HISTORY {
        return Err(Error::InvalidParameter(format!(
            "history length must be at least {MIN_HISTORY}, got {}",
            config.history
        )));
    }
    config.aggregator.validate()?;
    let l = config.history;
    let values = &series.values;
    let mut out = Vec::with_capacity(values.len());
    let warm = |i: usize| ScoreRecord::warmup(series.node.clone(), series.metric.clone(), i);
    let mut previous: Option<WindowFit> = None;
    for n in 0..values.len() {
        if n < l {
            out.push(warm(n));
            continue;
        }
        let fit = fit_window(&values[n - l..=n], config, series.granularity)?;
        let Some(prev) = previous.replace(fit) else {
            out.push(warm(n));
            continue;
        };
        let fit = previous.as_ref().expect("just stored");
        let periodic = match (fit.period, prev.period) {
            (Some(t), Some(t_prev)) => score_periodic(t, t_prev),
            _ => 0.0,
        };
        let trend = score_trend(fit.slope, prev.slope, flat_slope(&prev.stats, l));
        let spike = score_spike(fit.current_residual, &fit.stats, config.spike_mode, SIGMA_EPS);
        out.push(ScoreRecord {
            node: series.node.clone(),
            metric: series.metric.clone(),
            timestamp_index: n,
            periodic,
            trend,
            spike,
            aggregated: aggregate(periodic, trend, spike, &config.aggregator),
            warmup: false,
        });
    }
    Ok(out)
}

/// Scores many series concurrently; output order follows input order.
pub fn score_all(series: &[MetricSeries], config: &DetectorConfig) -> Vec<Result<Vec<ScoreRecord>>> {
    series.par_iter().map(|s| score_series(s, config)).collect()
}
