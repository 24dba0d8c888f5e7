//! Class-balanced sampling: p_i proportional to N_c^(-alpha), so the
//! expected class frequency follows N_c^(1-alpha).

use rand::Rng as _;

use crate::rng::Rng;
use crate::synth::{Result, SynthError};

#[derive(Debug, Clone)]
pub struct ClassBalancedSampler {
    alpha: f64,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ClassBalancedSampler {
    /// `class_ids[i]` is the class of sample i. `alpha` = 0 keeps the
    /// empirical distribution; `alpha` = 1 equalizes class mass.
    pub fn new(class_ids: &[usize], alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SynthError::BadAlpha(alpha));
        }
        if class_ids.is_empty() {
            return Err(SynthError::NoSamples);
        }
        let num_classes = class_ids.iter().max().unwrap() + 1;
        let mut counts = vec![0u64; num_classes];
        for &c in class_ids {
            counts[c] += 1;
        }
        let weights: Vec<f64> = class_ids
            .iter()
            .map(|&c| (counts[c] as f64).powf(-alpha))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            cumulative.push(acc);
        }
        let tail = cumulative.last_mut().unwrap();
        debug_assert!((*tail - 1.0).abs() <= 1e-12);
        *tail = 1.0;
        Ok(ClassBalancedSampler {
            alpha,
            weights: weights.iter().map(|w| w / total).collect(),
            cumulative,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Draws one sample index with probability p_i.
    pub fn next(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u)
    }

    /// Expected class frequencies N_c^(1-alpha) / sum_k N_k^(1-alpha).
    pub fn expected_class_frequencies(class_counts: &[u64], alpha: f64) -> Vec<f64> {
        let masses: Vec<f64> = class_counts
            .iter()
            .map(|&n| (n as f64).powf(1.0 - alpha))
            .collect();
        let total: f64 = masses.iter().sum();
        masses.into_iter().map(|m| m / total).collect()
    }
}
