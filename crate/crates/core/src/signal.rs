//! The EEG data model: segments, normalization, and patch tokenization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("non-finite sample at channel {channel}, sample {sample}")]
    NonFinite { channel: usize, sample: usize },
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("segment length {samples} is not divisible by patch size {patch}")]
    PatchMismatch { samples: usize, patch: usize },
    #[error("data length {len} does not match {channels} x {samples}")]
    DataLength {
        len: usize,
        channels: usize,
        samples: usize,
    },
    #[error("channel count and sample count must be positive")]
    EmptyGeometry,
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// A C x T multi-channel signal with sample rate, stored row-major
/// (channel-major). Values are in post-normalization units, i.e. raw
/// amplitude times `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegSegment {
    channels: usize,
    samples: usize,
    sample_rate: f64,
    scale: f64,
    data: Vec<f64>,
}

impl EegSegment {
    pub fn new(channels: usize, samples: usize, sample_rate: f64, data: Vec<f64>) -> Result<Self> {
        Self::with_scale(channels, samples, sample_rate, 1.0, data)
    }

    pub fn with_scale(
        channels: usize,
        samples: usize,
        sample_rate: f64,
        scale: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if channels == 0 || samples == 0 {
            return Err(SignalError::EmptyGeometry);
        }
        if data.len() != channels * samples {
            return Err(SignalError::DataLength {
                len: data.len(),
                channels,
                samples,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite {
                channel: pos / samples,
                sample: pos % samples,
            });
        }
        Ok(EegSegment {
            channels,
            samples,
            sample_rate,
            scale,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.samples], self.data.clone())
            .expect("segment data length matches geometry")
    }

    /// Recover raw amplitudes by dividing out the recorded scale.
    pub fn de_normalize(&self) -> Vec<f64> {
        self.data.iter().map(|v| v / self.scale).collect()
    }
}

/// Scales raw amplitudes into model units and records the scale so it stays
/// invertible.
pub fn normalize(
    raw: &[f64],
    channels: usize,
    samples: usize,
    sample_rate: f64,
    scale: f64,
) -> Result<EegSegment> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(SignalError::BadScale(scale));
    }
    if raw.len() != channels * samples {
        return Err(SignalError::DataLength {
            len: raw.len(),
            channels,
            samples,
        });
    }
    if let Some(pos) = raw.iter().position(|v| !v.is_finite()) {
        return Err(SignalError::NonFinite {
            channel: pos / samples,
            sample: pos % samples,
        });
    }
    let data = raw.iter().map(|v| v * scale).collect();
    EegSegment::with_scale(channels, samples, sample_rate, scale, data)
}

/// A segment with its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub segment: EegSegment,
    pub class_id: usize,
}

/// Non-overlapping temporal patches, C x N x P with N = T / P. Token
/// (c, n) holds samples [nP, (n+1)P) of channel c; the flat token order is
/// channel-major, so patch rows concatenate into a C*N sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    channels: usize,
    patches_per_channel: usize,
    patch_size: usize,
    tokens: Vec<f64>,
    sample_rate: f64,
    scale: f64,
}

impl PatchSequence {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patches_per_channel(&self) -> usize {
        self.patches_per_channel
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Total flat token count, C * N.
    pub fn token_count(&self) -> usize {
        self.channels * self.patches_per_channel
    }

    /// Token (c, n) in flat channel-major order.
    pub fn token(&self, c: usize, n: usize) -> &[f64] {
        let flat = c * self.patches_per_channel + n;
        &self.tokens[flat * self.patch_size..(flat + 1) * self.patch_size]
    }

    pub fn tokens(&self) -> &[f64] {
        &self.tokens
    }

    /// (C*N) x P tensor in flat token order.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.token_count(), self.patch_size],
            self.tokens.clone(),
        )
        .expect("token buffer matches geometry")
    }
}

/// Splits a segment into non-overlapping patches of length `patch_size`.
pub fn patchify(segment: &EegSegment, patch_size: usize) -> Result<PatchSequence> {
    if patch_size == 0 || segment.samples % patch_size != 0 {
        return Err(SignalError::PatchMismatch {
            samples: segment.samples,
            patch: patch_size,
        });
    }
    let n = segment.samples / patch_size;
    // Channel-major layout means tokenization is a straight copy.
    Ok(PatchSequence {
        channels: segment.channels,
        patches_per_channel: n,
        patch_size,
        tokens: segment.data.clone(),
        sample_rate: segment.sample_rate,
        scale: segment.scale,
    })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(patches: &PatchSequence) -> EegSegment {
    EegSegment {
        channels: patches.channels,
        samples: patches.patches_per_channel * patches.patch_size,
        sample_rate: patches.sample_rate,
        scale: patches.scale,
        data: patches.tokens.clone(),
    }
}
