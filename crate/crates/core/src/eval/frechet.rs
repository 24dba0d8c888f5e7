//! Frechet distance between Gaussian fits of two feature clouds.

use nalgebra::{DMatrix, DVector};

use crate::eval::{EvalError, Result};

fn mean_and_cov(features: &[Vec<f64>], eps: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = features.len();
    let d = features[0].len();
    let mut mean = DVector::zeros(d);
    for f in features {
        for (i, v) in f.iter().enumerate() {
            mean[i] += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let diff = DVector::from_iterator(d, f.iter().copied()) - &mean;
        cov += &diff * diff.transpose();
    }
    cov /= (n - 1) as f64; // unbiased sample covariance
    for i in 0..d {
        cov[(i, i)] += eps;
    }
    (mean, cov)
}

/// Symmetric PSD square root via eigendecomposition; negative round-off
/// eigenvalues are clamped to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let d = eig.eigenvalues.len();
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..d {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..d {
            scaled[(i, j)] *= s;
        }
    }
    &scaled * eig.eigenvectors.transpose()
}

/// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2)), with the trace
/// term computed from the symmetric product S_r^(1/2) S_g S_r^(1/2) and the
/// result clamped at zero against round-off.
pub fn frechet_distance(
    features_a: &[Vec<f64>],
    features_b: &[Vec<f64>],
    eps_cov: f64,
) -> Result<f64> {
    for (side, f) in [("first", features_a), ("second", features_b)] {
        if f.len() < 2 {
            return Err(EvalError::Degenerate(format!(
                "{side} feature set has {} samples, need at least 2",
                f.len()
            )));
        }
    }
    let d = features_a[0].len();
    if features_b[0].len() != d
        || features_a.iter().any(|f| f.len() != d)
        || features_b.iter().any(|f| f.len() != d)
    {
        return Err(EvalError::Dimension(format!(
            "feature dimension mismatch: {} vs {}",
            d,
            features_b[0].len()
        )));
    }

    let (mu_a, cov_a) = mean_and_cov(features_a, eps_cov);
    let (mu_b, cov_b) = mean_and_cov(features_b, eps_cov);

    let diff = &mu_a - &mu_b;
    let mean_term = diff.dot(&diff);

    let root_a = sym_sqrt(&cov_a);
    let product = &root_a * &cov_b * &root_a;
    let sym = (&product + product.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let trace_sqrt: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();

    let value = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}
