//! Quantitative evaluation: spectral Frechet distance, clustering
//! silhouette, drift and Hjorth diagnostics compared as W1 distances
//! between per-segment statistic distributions, event morphology, and the
//! downstream-utility proxy. Every diagnostic also gets a real-vs-real
//! floor from an even/odd split of the real set.

mod cluster;
mod dtw;
mod frechet;
mod proxy;
mod spectral;
mod stats;

pub use cluster::{kmeans, silhouette_coefficient, silhouette_from_features};
pub use dtw::{dtw, event_morphology, extract_event_windows, EventMorphology};
pub use frechet::frechet_distance;
pub use proxy::proxy_delta_acc;
pub use spectral::{bandpower_features, psd_slope, ts_fid_features, welch_psd, BANDS};
pub use stats::{
    drift_stats, envelope_spread, hjorth, hjorth_segment, rms_envelope, wasserstein1, DriftStats,
    Hjorth,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::LabeledSegment;
use crate::synth::Dataset;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation input: {0}")]
    BadConfig(String),
    #[error("feature dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Spectral pooling bins of the Frechet feature extractor.
    pub k_feat: usize,
    /// Spatial pooling groups.
    pub k_spat: usize,
    /// Spectral truncation frequency in Hz (the gamma upper edge).
    pub f_cut: f64,
    /// Diagonal regularizer of the feature covariances.
    pub eps_cov: f64,
    /// Welch segment length (clamped to the signal length at use).
    pub welch_nperseg: usize,
    /// Quantile grid of the W1 distance.
    pub w1_grid: usize,
    /// Event-centered window length in seconds.
    pub event_window_s: f64,
    /// Whether to run the downstream-utility proxy classifier.
    pub proxy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_feat: 64,
            k_spat: 4,
            f_cut: 45.0,
            eps_cov: 1e-6,
            welch_nperseg: 256,
            w1_grid: 512,
            event_window_s: 0.25,
            proxy: true,
        }
    }
}

impl EvalConfig {
    /// Full-scale feature geometry (256 spectral bins).
    pub fn full_scale() -> Self {
        EvalConfig {
            k_feat: 256,
            ..EvalConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1Triple {
    pub slope: f64,
    pub d_mu: f64,
    pub d_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjorthW1 {
    pub activity: f64,
    pub mobility: f64,
    pub complexity: f64,
}

/// Real-vs-real baseline from splitting the real set into even/odd halves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorReport {
    pub ts_fid: f64,
    pub drift: W1Triple,
    pub hjorth: Option<HjorthW1>,
    pub psd_slope: Option<f64>,
    pub temporal_envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ts_fid: f64,
    pub silhouette: f64,
    pub drift_w1: W1Triple,
    pub hjorth_w1: Option<HjorthW1>,
    pub psd_slope_w1: Option<f64>,
    pub temporal_envelope_w1: f64,
    pub event_morphology: Option<EventMorphology>,
    pub proxy_delta_acc: Option<f64>,
    pub real_count: usize,
    pub gen_count: usize,
    /// Segments whose diagnostics were degenerate (skipped), per side.
    pub degenerate_real: usize,
    pub degenerate_gen: usize,
    pub config_hash: String,
    pub floor: FloorReport,
}

/// Per-segment statistic distributions of one set.
struct SegmentStats {
    slope: Vec<f64>,
    d_mu: Vec<f64>,
    d_sigma: Vec<f64>,
    activity: Vec<f64>,
    mobility: Vec<f64>,
    complexity: Vec<f64>,
    psd_slope: Vec<f64>,
    envelope: Vec<f64>,
    degenerate: usize,
}

fn collect_stats(segments: &[&LabeledSegment], config: &EvalConfig) -> Result<SegmentStats> {
    let mut out = SegmentStats {
        slope: Vec::new(),
        d_mu: Vec::new(),
        d_sigma: Vec::new(),
        activity: Vec::new(),
        mobility: Vec::new(),
        complexity: Vec::new(),
        psd_slope: Vec::new(),
        envelope: Vec::new(),
        degenerate: 0,
    };
    for s in segments {
        let drift = drift_stats(&s.segment)?;
        out.slope.push(drift.slope);
        out.d_mu.push(drift.d_mu);
        out.d_sigma.push(drift.d_sigma);
        out.envelope.push(envelope_spread(&s.segment));
        let mut ok = true;
        match hjorth_segment(&s.segment) {
            Ok(h) => {
                out.activity.push(h.activity);
                out.mobility.push(h.mobility);
                out.complexity.push(h.complexity);
            }
            Err(EvalError::Degenerate(_)) => ok = false,
            Err(e) => return Err(e),
        }
        match psd_slope(&s.segment, config) {
            Ok(v) => out.psd_slope.push(v),
            Err(EvalError::Degenerate(_)) => ok = false,
            Err(e) => return Err(e),
        }
        if !ok {
            out.degenerate += 1;
        }
    }
    Ok(out)
}

fn w1_triple(a: &SegmentStats, b: &SegmentStats, grid: usize) -> Result<W1Triple> {
    Ok(W1Triple {
        slope: wasserstein1(&a.slope, &b.slope, grid)?,
        d_mu: wasserstein1(&a.d_mu, &b.d_mu, grid)?,
        d_sigma: wasserstein1(&a.d_sigma, &b.d_sigma, grid)?,
    })
}

fn w1_hjorth(a: &SegmentStats, b: &SegmentStats, grid: usize) -> Result<Option<HjorthW1>> {
    if a.activity.is_empty() || b.activity.is_empty() {
        return Ok(None);
    }
    Ok(Some(HjorthW1 {
        activity: wasserstein1(&a.activity, &b.activity, grid)?,
        mobility: wasserstein1(&a.mobility, &b.mobility, grid)?,
        complexity: wasserstein1(&a.complexity, &b.complexity, grid)?,
    }))
}

fn w1_opt(a: &[f64], b: &[f64], grid: usize) -> Result<Option<f64>> {
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    Ok(Some(wasserstein1(a, b, grid)?))
}

fn fid_between(
    a: &[&LabeledSegment],
    b: &[&LabeledSegment],
    config: &EvalConfig,
) -> Result<f64> {
    let fa: Vec<Vec<f64>> = a
        .iter()
        .map(|s| ts_fid_features(&s.segment, config))
        .collect::<Result<_>>()?;
    let fb: Vec<Vec<f64>> = b
        .iter()
        .map(|s| ts_fid_features(&s.segment, config))
        .collect::<Result<_>>()?;
    frechet_distance(&fa, &fb, config.eps_cov)
}

/// FNV-1a of the serialized eval config, recorded in every report.
fn config_hash(config: &EvalConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in json.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

const SILHOUETTE_SEED: u64 = 17;

/// Full evaluation of a generated set against a real set. Event times, when
/// available, come from the corpus manifests; a generated set without
/// recorded events falls back to envelope-peak detection.
pub fn evaluate(
    real: &Dataset,
    gen: &Dataset,
    real_events: Option<&[Vec<f64>]>,
    gen_events: Option<&[Vec<f64>]>,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let (hr, hg) = (&real.header, &gen.header);
    if hr.channels != hg.channels || hr.samples != hg.samples || hr.sample_rate != hg.sample_rate {
        return Err(EvalError::Geometry(format!(
            "real {}x{}@{} vs generated {}x{}@{}",
            hr.channels, hr.samples, hr.sample_rate, hg.channels, hg.samples, hg.sample_rate
        )));
    }
    if real.segments.is_empty() || gen.segments.is_empty() {
        return Err(EvalError::Degenerate("empty segment set".into()));
    }
    if real.segments.len() < 4 {
        return Err(EvalError::Degenerate(
            "real set too small for the real-vs-real floor".into(),
        ));
    }

    let real_refs: Vec<&LabeledSegment> = real.segments.iter().collect();
    let gen_refs: Vec<&LabeledSegment> = gen.segments.iter().collect();

    let ts_fid = fid_between(&real_refs, &gen_refs, config)?;

    // Pooled bandpower features, k-means with k = class count.
    let k = hr.classes.len().max(2);
    let mut pooled: Vec<Vec<f64>> = Vec::with_capacity(real_refs.len() + gen_refs.len());
    for s in real_refs.iter().chain(gen_refs.iter()) {
        pooled.push(bandpower_features(&s.segment, config)?);
    }
    let silhouette = silhouette_from_features(&pooled, k, SILHOUETTE_SEED)?;

    let stats_real = collect_stats(&real_refs, config)?;
    let stats_gen = collect_stats(&gen_refs, config)?;
    let grid = config.w1_grid;

    // Even/odd split of the real set for the floor.
    let half_a: Vec<&LabeledSegment> = real_refs.iter().step_by(2).copied().collect();
    let half_b: Vec<&LabeledSegment> = real_refs.iter().skip(1).step_by(2).copied().collect();
    let floor_stats_a = collect_stats(&half_a, config)?;
    let floor_stats_b = collect_stats(&half_b, config)?;
    let floor = FloorReport {
        ts_fid: fid_between(&half_a, &half_b, config)?,
        drift: w1_triple(&floor_stats_a, &floor_stats_b, grid)?,
        hjorth: w1_hjorth(&floor_stats_a, &floor_stats_b, grid)?,
        psd_slope: w1_opt(&floor_stats_a.psd_slope, &floor_stats_b.psd_slope, grid)?,
        temporal_envelope: wasserstein1(&floor_stats_a.envelope, &floor_stats_b.envelope, grid)?,
    };

    // Event morphology only when the real side has recorded event times.
    let event = match real_events {
        Some(revs) => {
            let window = (config.event_window_s * hr.sample_rate).round() as usize;
            let real_segments: Vec<&crate::signal::EegSegment> =
                real_refs.iter().map(|s| &s.segment).collect();
            let gen_segments: Vec<&crate::signal::EegSegment> =
                gen_refs.iter().map(|s| &s.segment).collect();
            let rw = extract_event_windows(&real_segments, Some(revs), window);
            let gw = extract_event_windows(&gen_segments, gen_events, window);
            event_morphology(&rw, &gw)?
        }
        None => None,
    };

    // Proxy classifier: even real indices train, odd test, gen augments.
    let proxy = if config.proxy {
        match proxy_delta_acc(&half_a, &gen_refs, &half_b, config) {
            Ok(v) => Some(v),
            Err(EvalError::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    Ok(MetricReport {
        ts_fid,
        silhouette,
        drift_w1: w1_triple(&stats_real, &stats_gen, grid)?,
        hjorth_w1: w1_hjorth(&stats_real, &stats_gen, grid)?,
        psd_slope_w1: w1_opt(&stats_real.psd_slope, &stats_gen.psd_slope, grid)?,
        temporal_envelope_w1: wasserstein1(&stats_real.envelope, &stats_gen.envelope, grid)?,
        event_morphology: event,
        proxy_delta_acc: proxy,
        real_count: real.segments.len(),
        gen_count: gen.segments.len(),
        degenerate_real: stats_real.degenerate,
        degenerate_gen: stats_gen.degenerate,
        config_hash: config_hash(config),
        floor,
    })
}
