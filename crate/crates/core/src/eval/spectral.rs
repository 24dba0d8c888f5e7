//! Spectral machinery: Welch PSD, band powers, log-spectral pooled
//! features, and the aperiodic slope fit.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::eval::{EvalConfig, EvalError, Result};
use crate::signal::EegSegment;

/// The five standard bands in Hz: delta, theta, alpha, beta, gamma.
pub const BANDS: [(&str, f64, f64); 5] = [
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma", 30.0, 45.0),
];

/// Hann-windowed, 50%-overlap averaged periodogram with density
/// normalization: sum(psd) * df approximates the signal variance up to the
/// window-loss factor. Returns (freqs, psd), one-sided.
pub fn welch_psd(x: &[f64], fs: f64, nperseg: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if nperseg == 0 || nperseg > x.len() {
        return Err(EvalError::BadConfig(format!(
            "welch window {nperseg} longer than series {}",
            x.len()
        )));
    }
    let n = nperseg;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect();
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let hop = (n / 2).max(1);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);

    let half = n / 2;
    let mut psd = vec![0.0; half + 1];
    let mut count = 0usize;
    let mut start = 0usize;
    while start + n <= x.len() {
        let mut buf: Vec<Complex<f64>> = x[start..start + n]
            .iter()
            .zip(&window)
            .map(|(&v, &w)| Complex::new(v * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, slot) in psd.iter_mut().enumerate() {
            let mag2 = buf[k].norm_sqr();
            let mut p = mag2 / (fs * win_power);
            if k != 0 && !(n % 2 == 0 && k == half) {
                p *= 2.0; // one-sided spectrum
            }
            *slot += p;
        }
        count += 1;
        start += hop;
    }
    for p in &mut psd {
        *p /= count as f64;
    }
    let freqs = (0..=half).map(|k| k as f64 * fs / n as f64).collect();
    Ok((freqs, psd))
}

fn effective_nperseg(samples: usize, config: &EvalConfig) -> usize {
    config.welch_nperseg.min(samples)
}

/// Integrated power per standard band, per channel, then channel-averaged
/// into a 5-vector. White noise therefore yields powers proportional to
/// bandwidth.
pub fn bandpower_features(segment: &EegSegment, config: &EvalConfig) -> Result<Vec<f64>> {
    let fs = segment.sample_rate();
    if fs < 90.0 {
        return Err(EvalError::BadConfig(format!(
            "sample rate {fs} Hz cannot resolve the gamma band up to 45 Hz"
        )));
    }
    let nperseg = effective_nperseg(segment.samples(), config);
    let df = fs / nperseg as f64;
    let mut pooled = vec![0.0; BANDS.len()];
    for c in 0..segment.channels() {
        let (freqs, psd) = welch_psd(segment.channel(c), fs, nperseg)?;
        for (bi, (_, lo, hi)) in BANDS.iter().enumerate() {
            let power: f64 = freqs
                .iter()
                .zip(&psd)
                .filter(|(f, _)| **f >= *lo && **f < *hi)
                .map(|(_, p)| p * df)
                .sum();
            pooled[bi] += power;
        }
    }
    for p in &mut pooled {
        *p /= segment.channels() as f64;
    }
    Ok(pooled)
}

/// Contiguous pooling of `m` items into at most `k` groups, mean per group.
fn pool_contiguous(values: &[f64], k: usize) -> Vec<f64> {
    let m = values.len();
    let groups = k.min(m);
    (0..groups)
        .map(|g| {
            let lo = g * m / groups;
            let hi = (g + 1) * m / groups;
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Frequency-domain feature vector: per-channel DFT magnitude truncated at
/// `f_cut`, mean-pooled into `k_feat` spectral bins and `k_spat` channel
/// groups, log(1+.), flattened (spatial-major), standardized per sample.
/// An all-zero sample maps to the all-zero vector.
pub fn ts_fid_features(segment: &EegSegment, config: &EvalConfig) -> Result<Vec<f64>> {
    let fs = segment.sample_rate();
    let t = segment.samples();
    if config.f_cut > fs / 2.0 {
        return Err(EvalError::BadConfig(format!(
            "f_cut {} Hz above Nyquist {}",
            config.f_cut,
            fs / 2.0
        )));
    }
    let k_cut = ((config.f_cut * t as f64 / fs).floor() as usize).min(t / 2);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(t);

    // Spectral pooling per channel.
    let mut spectra: Vec<Vec<f64>> = Vec::with_capacity(segment.channels());
    for c in 0..segment.channels() {
        let mut buf: Vec<Complex<f64>> = segment
            .channel(c)
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..=k_cut].iter().map(|z| z.norm()).collect();
        spectra.push(pool_contiguous(&mags, config.k_feat));
    }

    // Spatial pooling over contiguous channel groups.
    let feat_len = spectra[0].len();
    let groups = config.k_spat.min(segment.channels());
    let mut features = Vec::with_capacity(groups * feat_len);
    for g in 0..groups {
        let lo = g * segment.channels() / groups;
        let hi = (g + 1) * segment.channels() / groups;
        for fi in 0..feat_len {
            let mean = spectra[lo..hi].iter().map(|s| s[fi]).sum::<f64>() / (hi - lo) as f64;
            features.push(mean.ln_1p());
        }
    }

    // Per-sample standardization with a zero-vector guard.
    let n = features.len() as f64;
    let mean = features.iter().sum::<f64>() / n;
    let var = features.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var > 0.0 {
        let sd = var.sqrt();
        for v in &mut features {
            *v = (*v - mean) / sd;
        }
    } else if features.iter().all(|&v| v == 0.0) {
        // all-zero input stays all-zero
    } else {
        for v in &mut features {
            *v = 0.0;
        }
    }
    Ok(features)
}

/// Least-squares slope of log10(PSD) against log10(f) over [1, 45] Hz,
/// channel-averaged. Rejects inputs whose PSD vanishes in the fit range.
pub fn psd_slope(segment: &EegSegment, config: &EvalConfig) -> Result<f64> {
    let fs = segment.sample_rate();
    if fs < 90.0 {
        return Err(EvalError::BadConfig(format!(
            "sample rate {fs} Hz cannot resolve the 1-45 Hz fit range"
        )));
    }
    let nperseg = effective_nperseg(segment.samples(), config);
    let mut slopes = Vec::with_capacity(segment.channels());
    for c in 0..segment.channels() {
        let (freqs, psd) = welch_psd(segment.channel(c), fs, nperseg)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (f, p) in freqs.iter().zip(&psd) {
            if *f >= 1.0 && *f <= 45.0 {
                if *p <= 0.0 {
                    return Err(EvalError::Degenerate(format!(
                        "zero spectral power at {f} Hz in channel {c}"
                    )));
                }
                xs.push(f.log10());
                ys.push(p.log10());
            }
        }
        slopes.push(least_squares_slope(&xs, &ys));
    }
    Ok(slopes.iter().sum::<f64>() / slopes.len() as f64)
}

pub(crate) fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
