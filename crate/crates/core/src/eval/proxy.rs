//! Downstream-utility proxy: a multinomial logistic regression on
//! bandpower features, trained by full-batch gradient descent. Reports the
//! accuracy change on held-out real data when generated data augments the
//! training set.

use crate::eval::spectral::bandpower_features;
use crate::eval::{EvalConfig, EvalError, Result};
use crate::signal::LabeledSegment;

const GD_ITERS: usize = 500;
const GD_LR: f64 = 0.5;

struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
}

impl Standardizer {
    fn fit(features: &[Vec<f64>]) -> Self {
        let d = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut sd = vec![0.0; d];
        for f in features {
            for ((s, v), m) in sd.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in &mut sd {
            *s = (*s / n).sqrt().max(1e-12);
        }
        Standardizer { mean, sd }
    }

    fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Weights (num_classes x (d+1)), last column the bias.
struct Logistic {
    weights: Vec<f64>,
    classes: usize,
    dim: usize,
}

impl Logistic {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let row = &self.weights[k * (self.dim + 1)..(k + 1) * (self.dim + 1)];
                row[..self.dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + row[self.dim]
            })
            .collect()
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.scores(x);
        let mx = s.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for v in &mut s {
            *v = (*v - mx).exp();
            total += *v;
        }
        for v in &mut s {
            *v /= total;
        }
        s
    }

    fn predict(&self, x: &[f64]) -> usize {
        let s = self.scores(x);
        let mut best = 0;
        for (k, v) in s.iter().enumerate() {
            if *v > s[best] {
                best = k;
            }
        }
        best
    }

    /// Full-batch gradient descent from zero initialization; deterministic.
    fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize) -> Self {
        let dim = features[0].len();
        let mut model = Logistic {
            weights: vec![0.0; classes * (dim + 1)],
            classes,
            dim,
        };
        let n = features.len() as f64;
        for _ in 0..GD_ITERS {
            let mut grad = vec![0.0; classes * (dim + 1)];
            for (x, &y) in features.iter().zip(labels) {
                let p = model.probabilities(x);
                for k in 0..classes {
                    let err = p[k] - if k == y { 1.0 } else { 0.0 };
                    let row = &mut grad[k * (dim + 1)..(k + 1) * (dim + 1)];
                    for (g, v) in row[..dim].iter_mut().zip(x) {
                        *g += err * v;
                    }
                    row[dim] += err;
                }
            }
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= GD_LR * g / n;
            }
        }
        model
    }
}

fn featurize(segments: &[&LabeledSegment], config: &EvalConfig) -> Result<Vec<Vec<f64>>> {
    segments
        .iter()
        .map(|s| bandpower_features(&s.segment, config))
        .collect()
}

fn accuracy(
    train: &[&LabeledSegment],
    test: &[&LabeledSegment],
    classes: usize,
    config: &EvalConfig,
) -> Result<f64> {
    let train_feats = featurize(train, config)?;
    let std = Standardizer::fit(&train_feats);
    let train_x: Vec<Vec<f64>> = train_feats.iter().map(|f| std.apply(f)).collect();
    let train_y: Vec<usize> = train.iter().map(|s| s.class_id).collect();
    let model = Logistic::fit(&train_x, &train_y, classes);
    let mut correct = 0usize;
    for s in test {
        let f = std.apply(&bandpower_features(&s.segment, config)?);
        if model.predict(&f) == s.class_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Acc(train ∪ gen) - Acc(train) on the held-out real test set. An empty
/// generated set yields exactly zero. Every class must appear in the base
/// training set.
pub fn proxy_delta_acc(
    train_real: &[&LabeledSegment],
    gen: &[&LabeledSegment],
    test_real: &[&LabeledSegment],
    config: &EvalConfig,
) -> Result<f64> {
    if train_real.is_empty() || test_real.is_empty() {
        return Err(EvalError::Degenerate(
            "proxy classifier needs non-empty train and test sets".into(),
        ));
    }
    let classes = train_real
        .iter()
        .chain(gen.iter())
        .chain(test_real.iter())
        .map(|s| s.class_id)
        .max()
        .unwrap()
        + 1;
    if classes < 2 {
        return Err(EvalError::Degenerate(
            "proxy classifier needs at least 2 classes".into(),
        ));
    }
    for k in 0..classes {
        if !train_real.iter().any(|s| s.class_id == k) {
            return Err(EvalError::Degenerate(format!(
                "class {k} missing from the training set"
            )));
        }
    }
    if gen.is_empty() {
        return Ok(0.0);
    }
    let base = accuracy(train_real, test_real, classes, config)?;
    let mut augmented: Vec<&LabeledSegment> = train_real.to_vec();
    augmented.extend_from_slice(gen);
    let aug = accuracy(&augmented, test_real, classes, config)?;
    Ok(aug - base)
}
