//! Class-conditional synthetic EEG corpus: colored-noise backgrounds,
//! narrow-band oscillations, heavy-tailed transient bursts, slow amplitude
//! modulation, plus dataset persistence and a class-balanced sampler.

mod dataset;
mod sampler;

pub use dataset::{
    manifest_path, read_dataset, read_manifest, write_dataset, Dataset, DatasetHeader, Manifest,
    FORMAT_VERSION,
};
pub use sampler::ClassBalancedSampler;

use rand::Rng as _;
use rand_distr::{Distribution, Pareto, Poisson, Uniform};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Geometry;
use crate::rng::{self, Rng};
use crate::signal::{normalize, LabeledSegment, SignalError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("spectral exponent chi={0} outside [0, 4]")]
    BadChi(f64),
    #[error("class `{class}` invalid: {what}")]
    BadClassSpec { class: String, what: String },
    #[error("corpus needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("per-class count for `{0}` must be at least 1")]
    EmptyClass(String),
    #[error("series length {0} too short (need >= 16)")]
    TooShort(usize),
    #[error("sampler alpha={0} outside [0, 1]")]
    BadAlpha(f64),
    #[error("sampler requires at least one sample")]
    NoSamples,
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset {path}: {what}")]
    Malformed { path: String, what: String },
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Narrow-band oscillatory component of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakSpec {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    /// Component variance relative to the unit-variance background.
    pub rel_power: f64,
}

/// Transient burst model: Poisson event times with Pareto amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstSpec {
    pub rate_hz: f64,
    pub amp_scale: f64,
}

/// Slow multiplicative amplitude modulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub depth: f64,
    pub rate_hz: f64,
}

/// Statistical recipe for one class of segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Power-law exponent of the 1/f^chi background.
    pub chi: f64,
    #[serde(default)]
    pub peak: Option<PeakSpec>,
    #[serde(default)]
    pub burst: Option<BurstSpec>,
    pub envelope: EnvelopeSpec,
    /// Raw amplitude multiplier applied before normalization.
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    100.0
}

impl ClassSpec {
    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let bad = |what: String| SynthError::BadClassSpec {
            class: self.name.clone(),
            what,
        };
        if !(0.5..=3.0).contains(&self.chi) {
            return Err(bad(format!("chi={} outside [0.5, 3]", self.chi)));
        }
        if let Some(p) = &self.peak {
            if p.center_hz >= sample_rate / 2.0 {
                return Err(bad(format!(
                    "peak center {} Hz at or above Nyquist {}",
                    p.center_hz,
                    sample_rate / 2.0
                )));
            }
            if p.bandwidth_hz <= 0.0 || p.rel_power < 0.0 {
                return Err(bad("peak bandwidth must be > 0 and rel_power >= 0".into()));
            }
        }
        if let Some(b) = &self.burst {
            if b.rate_hz < 0.0 || b.amp_scale < 0.0 {
                return Err(bad("burst rate and amplitude must be >= 0".into()));
            }
        }
        if !(0.0..1.0).contains(&self.envelope.depth) || self.envelope.rate_hz < 0.0 {
            return Err(bad("envelope depth must be in [0,1), rate >= 0".into()));
        }
        if !(self.amplitude > 0.0) {
            return Err(bad("amplitude must be positive".into()));
        }
        Ok(())
    }
}

/// Full corpus description; generation is deterministic given `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub classes: Vec<ClassSpec>,
    pub counts: Vec<u64>,
    pub geometry: Geometry,
    pub seed: u64,
    /// Normalization scale applied to raw amplitudes at build time.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_scale() -> f64 {
    0.01
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(SynthError::TooFewClasses(self.classes.len()));
        }
        if self.counts.len() != self.classes.len() {
            return Err(SynthError::Malformed {
                path: String::new(),
                what: format!(
                    "{} counts for {} classes",
                    self.counts.len(),
                    self.classes.len()
                ),
            });
        }
        for (spec, &n) in self.classes.iter().zip(&self.counts) {
            spec.validate(self.geometry.sample_rate)?;
            if n == 0 {
                return Err(SynthError::EmptyClass(spec.name.clone()));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Three-class default (background / spike-wave / artifact) with a
    /// 10:3:1 imbalance, 600 segments.
    pub fn default_desk(geometry: Geometry, seed: u64) -> Self {
        CorpusSpec {
            classes: vec![
                ClassSpec {
                    name: "background".into(),
                    chi: 1.7,
                    peak: Some(PeakSpec {
                        center_hz: 10.0,
                        bandwidth_hz: 1.5,
                        rel_power: 1.2,
                    }),
                    burst: Some(BurstSpec {
                        rate_hz: 0.2,
                        amp_scale: 6.0,
                    }),
                    envelope: EnvelopeSpec {
                        depth: 0.25,
                        rate_hz: 0.3,
                    },
                    amplitude: 100.0,
                },
                ClassSpec {
                    name: "spike-wave".into(),
                    chi: 1.2,
                    peak: Some(PeakSpec {
                        center_hz: 3.0,
                        bandwidth_hz: 0.7,
                        rel_power: 2.0,
                    }),
                    burst: Some(BurstSpec {
                        rate_hz: 2.0,
                        amp_scale: 8.0,
                    }),
                    envelope: EnvelopeSpec {
                        depth: 0.3,
                        rate_hz: 0.5,
                    },
                    amplitude: 120.0,
                },
                ClassSpec {
                    name: "artifact".into(),
                    chi: 0.8,
                    peak: Some(PeakSpec {
                        center_hz: 22.0,
                        bandwidth_hz: 4.0,
                        rel_power: 1.0,
                    }),
                    burst: Some(BurstSpec {
                        rate_hz: 1.0,
                        amp_scale: 10.0,
                    }),
                    envelope: EnvelopeSpec {
                        depth: 0.5,
                        rate_hz: 1.0,
                    },
                    amplitude: 150.0,
                },
            ],
            counts: vec![429, 128, 43],
            geometry,
            seed,
            scale: 0.01,
        }
    }
}

/// Spectrally shaped Gaussian noise: white spectrum scaled by `f^(-chi/2)`,
/// inverse-transformed, standardized to zero mean and unit variance.
pub fn gen_colored_noise(chi: f64, t: usize, fs: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..=4.0).contains(&chi) {
        return Err(SynthError::BadChi(chi));
    }
    if t < 16 {
        return Err(SynthError::TooShort(t));
    }
    shaped_noise(t, fs, rng, |f| f.powf(-chi / 2.0))
}

/// Band-limited Gaussian noise with a Gaussian magnitude bump at
/// `center_hz`, standardized to unit variance.
fn gen_band_noise(center_hz: f64, bandwidth_hz: f64, t: usize, fs: f64, rng: &mut Rng) -> Vec<f64> {
    shaped_noise(t, fs, rng, |f| {
        let d = (f - center_hz) / bandwidth_hz;
        (-0.5 * d * d).exp()
    })
    .expect("band noise shaping cannot fail")
}

fn shaped_noise(
    t: usize,
    fs: f64,
    rng: &mut Rng,
    magnitude: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    use rand_distr::StandardNormal;
    let mut buf: Vec<Complex<f64>> = (0..t)
        .map(|_| Complex::new(StandardNormal.sample(rng), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(t).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        // Mirrored bin frequency keeps the spectrum Hermitian.
        let f = k.min(t - k) as f64 * fs / t as f64;
        *c *= magnitude(f);
    }
    planner.plan_fft_inverse(t).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re / t as f64).collect();
    standardize(&mut out);
    Ok(out)
}

/// In-place shift to zero mean and scale to unit population variance.
fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    for v in x.iter_mut() {
        *v -= mean;
    }
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    if var > 0.0 {
        let s = var.sqrt();
        for v in x.iter_mut() {
            *v /= s;
        }
    }
}

/// Biphasic transient kernel (Mexican hat), width in seconds.
fn burst_kernel(tau: f64, width: f64) -> f64 {
    let u = tau / width;
    (1.0 - u * u) * (-0.5 * u * u).exp()
}

const BURST_WIDTH_S: f64 = 0.025;
const BURST_SUPPORT_WIDTHS: f64 = 4.0;

/// One segment of a class. Burst times are shared across channels with
/// per-channel gains (volume conduction); returns them in seconds for the
/// corpus manifest.
pub fn gen_class_segment(
    spec: &ClassSpec,
    class_id: usize,
    geometry: Geometry,
    scale: f64,
    rng: &mut Rng,
) -> Result<(LabeledSegment, Vec<f64>)> {
    spec.validate(geometry.sample_rate)?;
    let (c, t, fs) = (geometry.channels, geometry.samples, geometry.sample_rate);
    let duration = t as f64 / fs;

    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut burst_times = Vec::new();
    let mut burst_amps = Vec::new();
    if let Some(b) = &spec.burst {
        if b.rate_hz > 0.0 && b.amp_scale > 0.0 {
            let n = Poisson::new(b.rate_hz * duration)
                .map(|p| p.sample(rng) as usize)
                .unwrap_or(0);
            let u_time = Uniform::new(0.0, duration).expect("positive duration");
            let pareto = Pareto::new(b.amp_scale, 3.0).expect("valid pareto");
            for _ in 0..n {
                let time = u_time.sample(rng);
                let amp: f64 = pareto.sample(rng);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                burst_times.push(time);
                burst_amps.push(sign * amp);
            }
        }
    }

    let mut raw = vec![0.0f64; c * t];
    let gain_dist = Uniform::new(0.5, 1.0).expect("valid gain range");
    for ch in 0..c {
        let mut x = gen_colored_noise(spec.chi, t, fs, rng)?;
        if let Some(p) = &spec.peak {
            if p.rel_power > 0.0 {
                let band = gen_band_noise(p.center_hz, p.bandwidth_hz, t, fs, rng);
                let g = p.rel_power.sqrt();
                for (xv, bv) in x.iter_mut().zip(&band) {
                    *xv += g * bv;
                }
            }
        }
        for (&time, &amp) in burst_times.iter().zip(&burst_amps) {
            let gain: f64 = gain_dist.sample(rng);
            let center = time * fs;
            let half = (BURST_SUPPORT_WIDTHS * BURST_WIDTH_S * fs).ceil() as i64;
            let lo = ((center as i64) - half).max(0) as usize;
            let hi = (((center as i64) + half) as usize).min(t - 1);
            for (i, xv) in x.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let tau = (i as f64 - center) / fs;
                *xv += amp * gain * burst_kernel(tau, BURST_WIDTH_S);
            }
        }
        if spec.envelope.depth > 0.0 {
            for (i, xv) in x.iter_mut().enumerate() {
                let env = 1.0
                    + spec.envelope.depth
                        * (std::f64::consts::TAU * spec.envelope.rate_hz * i as f64 / fs + phase)
                            .sin();
                *xv *= env;
            }
        }
        for (slot, v) in raw[ch * t..(ch + 1) * t].iter_mut().zip(&x) {
            *slot = v * spec.amplitude;
        }
    }

    let segment = normalize(&raw, c, t, fs, scale)?;
    Ok((
        LabeledSegment {
            segment,
            class_id,
        },
        burst_times,
    ))
}

/// Deterministic proportional interleave of class ids: the k-th segment of
/// class c gets key (k + 0.5) / N_c, and segments are emitted in key order.
/// Any prefix of the corpus is then approximately class-proportional.
pub fn interleave_order(counts: &[u64]) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize, u64)> = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for k in 0..n {
            keyed.push(((k as f64 + 0.5) / n as f64, c, k));
        }
    }
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, c, _)| c).collect()
}

/// Builds the full corpus in memory. Segment i draws from stream i of the
/// master seed, so generation is order-independent and reproducible.
pub fn build_corpus(spec: &CorpusSpec) -> Result<(Dataset, Manifest)> {
    spec.validate()?;
    let order = interleave_order(&spec.counts);
    let mut segments = Vec::with_capacity(order.len());
    let mut events = Vec::with_capacity(order.len());
    for (i, &class_id) in order.iter().enumerate() {
        let mut seg_rng = rng::stream(spec.seed, i as u64);
        let (labeled, times) = gen_class_segment(
            &spec.classes[class_id],
            class_id,
            spec.geometry,
            spec.scale,
            &mut seg_rng,
        )?;
        segments.push(labeled);
        events.push(times);
    }
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        channels: spec.geometry.channels,
        samples: spec.geometry.samples,
        sample_rate: spec.geometry.sample_rate,
        scale: spec.scale,
        classes: spec.classes.iter().map(|c| c.name.clone()).collect(),
        counts: spec.counts.clone(),
        seed: spec.seed,
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: spec.seed,
        counts: spec.counts.clone(),
        corpus: Some(spec.clone()),
        events: Some(events),
    };
    Ok((Dataset { header, segments }, manifest))
}
