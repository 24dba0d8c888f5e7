//! Per-segment signal statistics: RMS envelope, drift scores, Hjorth
//! parameters, and the 1-Wasserstein distance between sample sets.

use serde::{Deserialize, Serialize};

use crate::eval::spectral::least_squares_slope;
use crate::eval::{EvalError, Result};
use crate::signal::EegSegment;

/// Channel-aggregated RMS envelope e(t) = sqrt(mean_c x^2).
pub fn rms_envelope(segment: &EegSegment) -> Vec<f64> {
    let (c, t) = (segment.channels(), segment.samples());
    (0..t)
        .map(|i| {
            let sum: f64 = (0..c).map(|ch| {
                let v = segment.data()[ch * t + i];
                v * v
            })
            .sum();
            (sum / c as f64).sqrt()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftStats {
    /// Least-squares slope of the RMS envelope against normalized time.
    pub slope: f64,
    /// Mean absolute per-channel mean shift between first and last quarter.
    pub d_mu: f64,
    /// Same for the per-channel standard deviation.
    pub d_sigma: f64,
}

fn mean_and_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn drift_stats(segment: &EegSegment) -> Result<DriftStats> {
    let t = segment.samples();
    if t < 8 {
        return Err(EvalError::BadConfig(format!(
            "drift statistics need T >= 8, got {t}"
        )));
    }
    let env = rms_envelope(segment);
    let times: Vec<f64> = (0..t).map(|i| i as f64 / (t - 1) as f64).collect();
    let slope = least_squares_slope(&times, &env);

    let q = t / 4;
    let mut d_mu = 0.0;
    let mut d_sigma = 0.0;
    for c in 0..segment.channels() {
        let ch = segment.channel(c);
        let (mu_first, sd_first) = mean_and_sd(&ch[..q]);
        let (mu_last, sd_last) = mean_and_sd(&ch[t - q..]);
        d_mu += (mu_first - mu_last).abs();
        d_sigma += (sd_first - sd_last).abs();
    }
    let c = segment.channels() as f64;
    Ok(DriftStats {
        slope,
        d_mu: d_mu / c,
        d_sigma: d_sigma / c,
    })
}

/// Standard deviation of the RMS envelope over time; the per-segment
/// temporal-envelope statistic.
pub fn envelope_spread(segment: &EegSegment) -> f64 {
    let env = rms_envelope(segment);
    mean_and_sd(&env).1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hjorth {
    pub activity: f64,
    pub mobility: f64,
    pub complexity: f64,
}

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn diff(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Standard Hjorth parameters of one channel: activity = var(x),
/// mobility = sqrt(var(dx)/var(x)), complexity = mobility(dx)/mobility(x).
pub fn hjorth(x: &[f64]) -> Result<Hjorth> {
    if x.len() < 3 {
        return Err(EvalError::BadConfig(format!(
            "hjorth needs T >= 3, got {}",
            x.len()
        )));
    }
    let var0 = variance(x);
    if var0 <= 0.0 {
        return Err(EvalError::Degenerate("zero variance signal".into()));
    }
    let d1 = diff(x);
    let var1 = variance(&d1);
    if var1 <= 0.0 {
        return Err(EvalError::Degenerate("zero variance first difference".into()));
    }
    let d2 = diff(&d1);
    let var2 = variance(&d2);
    let mobility = (var1 / var0).sqrt();
    let mobility_d = (var2 / var1).sqrt();
    Ok(Hjorth {
        activity: var0,
        mobility,
        complexity: mobility_d / mobility,
    })
}

/// Channel-averaged Hjorth triple of a segment.
pub fn hjorth_segment(segment: &EegSegment) -> Result<Hjorth> {
    let mut acc = Hjorth {
        activity: 0.0,
        mobility: 0.0,
        complexity: 0.0,
    };
    for c in 0..segment.channels() {
        let h = hjorth(segment.channel(c))?;
        acc.activity += h.activity;
        acc.mobility += h.mobility;
        acc.complexity += h.complexity;
    }
    let n = segment.channels() as f64;
    Ok(Hjorth {
        activity: acc.activity / n,
        mobility: acc.mobility / n,
        complexity: acc.complexity / n,
    })
}

/// Quantile-grid 1-Wasserstein distance: both samples are resampled to a
/// common `grid`-point quantile function by linear interpolation of the
/// sorted values; the distance is the mean absolute difference.
pub fn wasserstein1(samples_a: &[f64], samples_b: &[f64], grid: usize) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(EvalError::Degenerate(
            "wasserstein1 needs non-empty samples".into(),
        ));
    }
    let qa = quantile_grid(samples_a, grid);
    let qb = quantile_grid(samples_b, grid);
    Ok(qa
        .iter()
        .zip(&qb)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / grid as f64)
}

fn quantile_grid(samples: &[f64], grid: usize) -> Vec<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    (0..grid)
        .map(|j| {
            let q = (j as f64 + 0.5) / grid as f64;
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            if lo == hi {
                sorted[lo]
            } else {
                let w = pos - lo as f64;
                sorted[lo] * (1.0 - w) + sorted[hi] * w
            }
        })
        .collect()
}
