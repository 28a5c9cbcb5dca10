use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Dataset, LabelSet};
use crate::model::{Granularity, MetricSeries, NodePath};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMix {
    pub spike: f64,
    pub trend_shift: f64,
    pub period_shift: f64,
}

impl Default for AnomalyMix {
    fn default() -> Self {
        AnomalyMix {
            spike: 1.0 / 3.0,
            trend_shift: 1.0 / 3.0,
            period_shift: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub length: usize,
    pub base_period: usize,
    pub amplitude: f64,
    pub noise_std: f64,
    /// Slope of the underlying linear trend, per sample.
    pub trend_slope: f64,
    pub anomaly_rate: f64,
    pub mix: AnomalyMix,
    /// Anomaly-free prefix; defaults to five base periods.
    pub burn_in: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            length: 1427,
            base_period: 24,
            amplitude: 1.0,
            noise_std: 0.1,
            trend_slope: 0.0,
            anomaly_rate: 0.017,
            mix: AnomalyMix::default(),
            burn_in: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    TrendShift,
    PeriodShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedAnomaly {
    pub kind: AnomalyKind,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub series: MetricSeries,
    pub labels: Vec<bool>,
    pub anomalies: Vec<InjectedAnomaly>,
}

impl SynthOutput {
    pub fn into_dataset(self, dataset_id: &str) -> Result<(Dataset, LabelSet)> {
        let mut labels = LabelSet::new();
        labels.insert(&self.series, self.labels)?;
        Ok((Dataset::from_series(dataset_id, vec![self.series])?, labels))
    }
}

impl SynthSpec {
    fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(5 * self.base_period)
    }

    fn anomaly_count(&self) -> usize {
        (self.anomaly_rate * self.length as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mix;
        let fractions = [m.spike, m.trend_shift, m.period_shift];
        if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter("anomaly mix fractions must be non-negative and sum to 1".into()));
        }
        if !(self.anomaly_rate > 0.0 && self.anomaly_rate <= 0.1) {
            return Err(Error::InvalidParameter(format!(
                "anomaly rate must lie in (0, 0.1], got {}",
                self.anomaly_rate
            )));
        }
        if self.base_period < 4 {
            return Err(Error::InvalidParameter("base period must be at least 4".into()));
        }
        if !(self.noise_std >= 0.0 && self.amplitude > 0.0) {
            return Err(Error::InvalidParameter("noise must be non-negative and amplitude positive".into()));
        }
        // each anomaly plus its separation gap has to fit after the burn-in
        let room = self.length.saturating_sub(self.burn_in());
        if room < self.anomaly_count() * (self.gap() + 1) * 2 {
            return Err(Error::InvalidParameter(format!(
                "length {} leaves too little room after a burn-in of {}",
                self.length,
                self.burn_in()
            )));
        }
        Ok(())
    }

    /// Minimum number of clean samples between two anomalies.
    fn gap(&self) -> usize {
        self.base_period / 2
    }
}

/// Sine plus noise with injected spikes, trend shifts and period shifts.
///
/// Exactly `round(anomaly_rate * length)` indices are labeled. Trend and
/// period anomalies are segments of at most half a base period, spikes are
/// single points of at least six noise deviations.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.anomaly_count();
    let spikes = ((total as f64 * spec.mix.spike).round() as usize).min(total);
    let trends = ((total as f64 * spec.mix.trend_shift).round() as usize).min(total - spikes);
    let periods = total - spikes - trends;

    let max_segment = (spec.base_period / 2).max(2);
    let mut pieces: Vec<(AnomalyKind, usize)> = Vec::new();
    for (kind, mut count) in [(AnomalyKind::TrendShift, trends), (AnomalyKind::PeriodShift, periods)] {
        while count > 0 {
            let len = count.min(max_segment);
            pieces.push((kind, len));
            count -= len;
        }
    }
    pieces.extend(std::iter::repeat_n((AnomalyKind::Spike, 1), spikes));
    pieces.shuffle(&mut rng);

    let (lo, hi) = (spec.burn_in(), spec.length);
    let gap = spec.gap();
    let mut anomalies: Vec<InjectedAnomaly> = Vec::with_capacity(pieces.len());
    for (kind, len) in pieces {
        let mut placed = false;
        for _ in 0..10_000 {
            let start = rng.random_range(lo..=hi - len);
            let clear = anomalies
                .iter()
                .all(|a| start + len + gap <= a.start || a.start + a.len + gap <= start);
            if clear {
                anomalies.push(InjectedAnomaly { kind, start, len });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidParameter("could not place every anomaly; lower the rate".into()));
        }
    }
    anomalies.sort_by_key(|a| a.start);

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let base_step = 2.0 * PI / spec.base_period as f64;
    let residual_sd = spec.noise_std.max(0.05 * spec.amplitude);
    let extra_slope = (2.0 * spec.trend_slope.abs()).max(0.25 * spec.amplitude);

    let mut values = Vec::with_capacity(spec.length);
    let mut labels = vec![false; spec.length];
    let (mut phase, mut offset) = (0.0_f64, 0.0_f64);
    let mut active: Option<(&InjectedAnomaly, f64)> = None;
    let mut next = anomalies.iter().peekable();
    for t in 0..spec.length {
        if let Some(a) = next.next_if(|a| a.start == t) {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let param = match a.kind {
                AnomalyKind::Spike => sign * 6.0 * residual_sd * (1.0 + rng.random_range(0.0..0.5)),
                AnomalyKind::TrendShift => sign * extra_slope,
                // halve or double the period
                AnomalyKind::PeriodShift => {
                    if sign > 0.0 {
                        2.0
                    } else {
                        0.5
                    }
                }
            };
            active = Some((a, param));
        }
        let mut step = base_step;
        let mut spike = 0.0;
        if let Some((a, param)) = active {
            labels[t] = true;
            match a.kind {
                AnomalyKind::Spike => spike = param,
                AnomalyKind::TrendShift => offset += param,
                AnomalyKind::PeriodShift => step = base_step * param,
            }
            if t + 1 == a.start + a.len {
                active = None;
            }
        }
        let value = spec.amplitude * phase.sin() + spec.trend_slope * t as f64 + offset + spike + noise.sample(&mut rng);
        values.push(value);
        phase += step;
    }

    Ok(SynthOutput {
        series: MetricSeries::new(
            NodePath::new("synth", "cluster-0", "node-0")?,
            "value",
            Granularity::Hour,
            0,
            values,
        ),
        labels,
        anomalies,
    })
}
