//! Two-tier period detection.
//!
//! Periodogram peaks propose candidate periods `N / k`; a candidate is kept
//! only if the autocorrelation function has a hill (local maximum) close to
//! it that rises above the white-noise band `2 / sqrt(N)`. A validated
//! candidate is then refined by a least-squares sinusoid fit within half a
//! frequency bin of `k` and rounded to the nearest lag.

use rustfft::num_complex::Complex64;
use nalgebra::{Matrix3, Vector3};
use rustfft::FftPlanner;
use std::f64::consts::PI;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of periodogram peaks checked against the ACF.
pub const DEFAULT_MAX_CANDIDATES: usize = 5;

const MIN_SPECTRAL_LEN: usize = 4;
const MIN_DETECT_LEN: usize = 8;

/// Half-spectrum periodogram of a mean-centered window.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// `powers[k] = |dft[k]|^2` for `k = 0 ..= ceil((n - 1) / 2)`.
    pub powers: Vec<f64>,
    pub dft: Vec<Complex64>,
    pub n: usize,
}

/// Normalized sample autocorrelation for lags `0 ..= ceil((n - 1) / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcfSeries {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEstimate {
    /// Period in samples, if a candidate validated.
    pub period: Option<f64>,
    /// Frequency bin of the candidate that produced `period` (0 if none).
    pub candidate_k: usize,
    pub validated: bool,
}

impl PeriodEstimate {
    pub const ABSENT: PeriodEstimate = PeriodEstimate {
        period: None,
        candidate_k: 0,
        validated: false,
    };
}

fn half_len(n: usize) -> usize {
    // ceil((n - 1) / 2)
    n / 2
}

fn centered(data: &[f64]) -> Vec<f64> {
    let mean = data.iter().sum::<f64>() / data.len() as f64;
    data.iter().map(|v| v - mean).collect()
}

fn dft_full(data: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = centered(data)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(buf.len());
    fft.process(&mut buf);
    buf
}

/// Power at every frequency bin `0..n` of the mean-centered window.
pub fn full_periodogram(data: &[f64]) -> Result<Vec<f64>> {
    if data.len() < MIN_SPECTRAL_LEN {
        return Err(Error::DegenerateWindow {
            len: data.len(),
            min: MIN_SPECTRAL_LEN,
        });
    }
    Ok(dft_full(data).iter().map(|c| c.norm_sqr()).collect())
}

pub fn periodogram(data: &[f64]) -> Result<Spectrum> {
    if data.len() < MIN_SPECTRAL_LEN {
        return Err(Error::DegenerateWindow {
            len: data.len(),
            min: MIN_SPECTRAL_LEN,
        });
    }
    let n = data.len();
    let mut dft = dft_full(data);
    dft.truncate(half_len(n) + 1);
    let powers = dft.iter().map(|c| c.norm_sqr()).collect();
    Ok(Spectrum { powers, dft, n })
}

pub fn autocorrelation(data: &[f64]) -> Result<AcfSeries> {
    let n = data.len();
    if n < MIN_SPECTRAL_LEN {
        return Err(Error::DegenerateWindow {
            len: n,
            min: MIN_SPECTRAL_LEN,
        });
    }
    let d = centered(data);
    let energy: f64 = d.iter().map(|v| v * v).sum();
    let scale = data.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if energy <= (1e-12 * scale).powi(2) * n as f64 {
        return Err(Error::ZeroVariance);
    }
    let values = (0..=half_len(n))
        .map(|lag| {
            let s: f64 = d[..n - lag].iter().zip(&d[lag..]).map(|(a, b)| a * b).sum();
            s / energy
        })
        .collect();
    Ok(AcfSeries { values })
}

/// Lags that are hills of the ACF: `acf[t - 1] < acf[t] >= acf[t + 1]`.
///
/// The non-strict right comparison makes a plateau report its first lag.
fn hills(acf: &[f64]) -> Vec<usize> {
    (1..acf.len().saturating_sub(1))
        .filter(|&t| acf[t] > acf[t - 1] && acf[t] >= acf[t + 1])
        .collect()
}

/// Energy captured by the least-squares fit of `a + b cos(wt) + c sin(wt)`
/// with `w = 2 pi kf / n`, i.e. total energy minus the residual sum of
/// squares. `d` must be mean-centered.
fn sinusoid_fit_energy(d: &[f64], kf: f64) -> f64 {
    let n = d.len();
    let w = 2.0 * PI * kf / n as f64;
    let step = Complex64::from_polar(1.0, w);
    let mut z = Complex64::new(1.0, 0.0);
    let (mut sc, mut ss, mut scc, mut scs, mut sx_c, mut sx_s) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, &x) in d.iter().enumerate() {
        if t % 64 == 0 {
            // re-anchor the rotation to keep rounding drift bounded
            z = Complex64::from_polar(1.0, w * t as f64);
        }
        let (c, s) = (z.re, z.im);
        sc += c;
        ss += s;
        scc += c * c;
        scs += c * s;
        sx_c += x * c;
        sx_s += x * s;
        z *= step;
    }
    let nf = n as f64;
    let sss = nf - scc;
    // normal equations for [1, cos, sin]; sum(d) = 0
    let m = Matrix3::new(nf, sc, ss, sc, scc, scs, ss, scs, sss);
    let r = Vector3::new(0.0, sx_c, sx_s);
    match m.lu().solve(&r) {
        Some(beta) => beta.dot(&r),
        None => 0.0,
    }
}

/// Frequency (in bins) in `[k - 1/2, k + 1/2]` whose sinusoid fits `d` best.
fn refine_frequency(d: &[f64], k: usize) -> f64 {
    const GRID: usize = 16;
    const ITERATIONS: usize = 24;
    let lo = k as f64 - 0.5;
    let cell = 1.0 / GRID as f64;
    let best = (0..=GRID)
        .map(|g| lo + g as f64 * cell)
        .map(|kf| (kf, sinusoid_fit_energy(d, kf)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(k as f64, |(kf, _)| kf);
    // golden-section search around the best grid point
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = ((best - cell).max(lo), (best + cell).min(lo + 1.0));
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (sinusoid_fit_energy(d, x1), sinusoid_fit_energy(d, x2));
    for _ in 0..ITERATIONS {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = sinusoid_fit_energy(d, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = sinusoid_fit_energy(d, x2);
        }
    }
    (a + b) / 2.0
}

/// Best validated period of `data`, or [`PeriodEstimate::ABSENT`].
pub fn detect_period(data: &[f64], max_candidates: usize) -> PeriodEstimate {
    let n = data.len();
    if n < MIN_DETECT_LEN || max_candidates == 0 {
        return PeriodEstimate::ABSENT;
    }
    let (Ok(spectrum), Ok(acf)) = (periodogram(data), autocorrelation(data)) else {
        return PeriodEstimate::ABSENT;
    };

    let mut candidates: Vec<usize> = (2..spectrum.powers.len())
        .filter(|&k| spectrum.powers[k] > 0.0)
        .collect();
    // Strongest first; equal powers fall back to the lower frequency.
    candidates.sort_by(|&a, &b| spectrum.powers[b].total_cmp(&spectrum.powers[a]).then(a.cmp(&b)));
    candidates.truncate(max_candidates);

    let bound = 2.0 / (n as f64).sqrt();
    let hill_lags = hills(&acf.values);
    let nf = n as f64;

    for k in candidates {
        let kf = k as f64;
        let candidate = nf / kf;
        let radius = nf / (kf * (kf + 1.0));
        let best = hill_lags
            .iter()
            .copied()
            .filter(|&lag| lag >= 2 && (lag as f64) <= nf / 2.0)
            .filter(|&lag| (lag as f64 - candidate).abs() <= radius)
            .filter(|&lag| acf.values[lag] > bound)
            .min_by(|&a, &b| {
                (a as f64 - candidate)
                    .abs()
                    .total_cmp(&(b as f64 - candidate).abs())
                    .then(a.cmp(&b))
            });
        if let Some(lag) = best {
            let refined = (nf / refine_frequency(&centered(data), k)).round();
            let period = if refined >= 2.0 && refined <= nf / 2.0 { refined } else { lag as f64 };
            return PeriodEstimate {
                period: Some(period),
                candidate_k: k,
                validated: true,
            };
        }
    }
    PeriodEstimate::ABSENT
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Direct O(N^2) DFT power of the centered input.
    fn oracle_powers(data: &[f64]) -> Vec<f64> {
        let n = data.len();
        let mean = data.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in data.iter().enumerate() {
                    let ang = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += (v - mean) * ang.cos();
                    im += (v - mean) * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    /// Brute-force convolution: sum_n d(n) d(n + lag) / sum_n d(n)^2.
    fn oracle_acf(data: &[f64]) -> Vec<f64> {
        let n = data.len();
        let mean = data.iter().sum::<f64>() / n as f64;
        let mut out = Vec::new();
        let mut denom = 0.0;
        for i in 0..n {
            denom += (data[i] - mean) * (data[i] - mean);
        }
        for lag in 0..=((n - 1) + 1) / 2 {
            let mut s = 0.0;
            for i in 0..n {
                if i + lag < n {
                    s += (data[i] - mean) * (data[i + lag] - mean);
                }
            }
            out.push(s / denom);
        }
        out
    }

    fn sine(period: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * t as f64 / period).sin()).collect()
    }

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap()
    }

    #[test]
    fn constant_window_has_no_power() {
        let s = periodogram(&[3.0; 16]).unwrap();
        assert_eq!(s.powers.len(), 9);
        assert!(s.powers.iter().all(|&p| p.abs() < 1e-20));
    }

    #[test]
    fn periodogram_matches_direct_dft() {
        let x = sine(16.0, 64);
        let s = periodogram(&x).unwrap();
        let oracle = oracle_powers(&x);
        assert_eq!(argmax(&oracle[..33]), 4);
        assert_eq!(argmax(&s.powers), 4);
        for (a, b) in s.powers.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9 * (1.0 + b));
        }
    }

    #[test]
    fn two_sine_peaks() {
        let x: Vec<f64> = sine(8.0, 64).iter().zip(sine(32.0, 64)).map(|(a, b)| a + b).collect();
        let s = periodogram(&x).unwrap();
        let oracle = oracle_powers(&x);
        let mut peaks: Vec<usize> = (0..s.powers.len()).collect();
        peaks.sort_by(|&a, &b| s.powers[b].total_cmp(&s.powers[a]));
        let mut top: Vec<usize> = peaks[..2].to_vec();
        top.sort();
        assert_eq!(top, vec![2, 8]);
        assert!((s.powers[2] - oracle[2]).abs() < 1e-9 * oracle[2]);
        assert!((s.powers[8] - oracle[8]).abs() < 1e-9 * oracle[8]);
    }

    #[test]
    fn periodogram_rejects_short_window() {
        assert!(matches!(periodogram(&[1.0, 2.0, 3.0]), Err(Error::DegenerateWindow { .. })));
        assert!(autocorrelation(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn acf_matches_convolution_and_has_hill_at_period() {
        let x: Vec<f64> = (0..168).map(|t| (2.0 * PI * t as f64 / 24.0).cos()).collect();
        let acf = autocorrelation(&x).unwrap();
        let oracle = oracle_acf(&x);
        assert_eq!(acf.values.len(), oracle.len());
        for (a, b) in acf.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((acf.values[0] - 1.0).abs() < 1e-12);
        assert!(hills(&acf.values).contains(&24));
    }

    #[test]
    fn white_noise_has_no_significant_hill() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<f64> = (0..256).map(|_| normal.sample(&mut rng)).collect();
        let acf = autocorrelation(&x).unwrap();
        assert!(acf.values[2..].iter().all(|v| v.abs() < 0.3));
        assert_eq!(detect_period(&x, DEFAULT_MAX_CANDIDATES), PeriodEstimate::ABSENT);
    }

    #[test]
    fn constant_acf_is_undefined() {
        assert!(matches!(autocorrelation(&[5.0; 32]), Err(Error::ZeroVariance)));
        assert_eq!(detect_period(&[5.0; 32], 5), PeriodEstimate::ABSENT);
    }

    #[test]
    fn detects_daily_period() {
        let x = sine(24.0, 168);
        let est = detect_period(&x, DEFAULT_MAX_CANDIDATES);
        assert!(est.validated);
        // Oracle: exhaustive ACF argmax within the spectral candidate's range.
        let acf = oracle_acf(&x);
        let oracle_lag = (20..=28).max_by(|&a, &b| acf[a].total_cmp(&acf[b])).unwrap();
        assert_eq!(est.period, Some(oracle_lag as f64));
        assert!((est.period.unwrap() - 24.0).abs() <= 1.0);
        assert_eq!(est.candidate_k, 7);
    }

    #[test]
    fn ramp_has_no_period() {
        let x: Vec<f64> = (0..100).map(|t| 0.5 * t as f64).collect();
        let acf = oracle_acf(&x);
        assert!(acf.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(detect_period(&x, DEFAULT_MAX_CANDIDATES), PeriodEstimate::ABSENT);
    }

    #[test]
    fn short_window_is_absent() {
        assert_eq!(detect_period(&sine(2.0, 7), 5), PeriodEstimate::ABSENT);
    }

    #[test]
    fn fit_refinement_locates_off_bin_frequency() {
        // period 50 sits between bins 5 (60.0) and 6 (50.0 exactly) for n = 300;
        // use n = 310 so the true frequency 6.2 is off-grid
        let x: Vec<f64> = (0..310).map(|t| (2.0 * PI * t as f64 / 50.0 + 0.3).sin()).collect();
        let kf = refine_frequency(&centered(&x), 6);
        assert!((kf - 6.2).abs() < 1e-3, "kf {kf}");
    }

    #[test]
    fn long_period_within_one_lag() {
        let normal = Normal::new(0.0, (0.05f64).sqrt()).unwrap();
        let mut hits = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..672)
                .map(|t| (2.0 * PI * t as f64 / 168.0 + seed as f64).sin() + normal.sample(&mut rng))
                .collect();
            if detect_period(&x, DEFAULT_MAX_CANDIDATES).period.is_some_and(|p| (p - 168.0).abs() <= 1.0) {
                hits += 1;
            }
        }
        assert!(hits >= 39, "{hits}/40");
    }

    #[test]
    fn plateau_resolves_to_first_lag() {
        assert_eq!(hills(&[1.0, 0.0, 0.5, 0.5, 0.1]), vec![2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn noisy_sine(period: f64, n: usize, seed: u64) -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 0.2).unwrap();
            (0..n)
                .map(|t| (2.0 * PI * t as f64 / period).sin() + normal.sample(&mut rng))
                .collect()
        }

        proptest! {
            #[test]
            fn parseval(values in prop::collection::vec(-1e3f64..1e3, 4..200)) {
                let powers = full_periodogram(&values).unwrap();
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                let energy: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
                let total: f64 = powers.iter().sum();
                let expected = values.len() as f64 * energy;
                prop_assert!((total - expected).abs() <= 1e-6 * expected.max(1e-12));
            }

            #[test]
            fn scale_and_shift_invariance(seed in 0u64..1000, period in 6u32..30,
                                          c in 0.01f64..100.0, shift in -1e3f64..1e3) {
                let x = noisy_sine(period as f64, 4 * period as usize, seed);
                let base = detect_period(&x, DEFAULT_MAX_CANDIDATES).period;
                let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
                let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
                prop_assert_eq!(detect_period(&scaled, DEFAULT_MAX_CANDIDATES).period, base);
                prop_assert_eq!(detect_period(&shifted, DEFAULT_MAX_CANDIDATES).period, base);
            }
        }
    }
}
