//! The composite training objective: L1 reconstruction, per-channel moment
//! consistency, temporal total variation, and Pearson waveform alignment,
//! plus the scalar identities behind them (soft-thresholding, sphere
//! projection).
//!
//! All loss functions operate on tape variables shaped `(..., T)` with time
//! last, so the whole objective is differentiable end-to-end.

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tensor, TensorError, Var};

/// Smoothing inside sqrt() when turning variance into a standard deviation.
const SIGMA_EPS: f64 = 1e-12;
/// Denominator smoothing of the training-time Pearson term. Keeps gradients
/// finite on a constant channel; agrees with the exact form to 1e-8 when
/// channel variance exceeds 1e-6.
const CORR_SMOOTH_EPS: f64 = 1e-14;
/// Below this per-channel variance the exact Pearson term is an error.
pub const VAR_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_cons: f64,
    pub lambda_tv: f64,
    pub lambda_corr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cons: 1.0,
            lambda_tv: 0.1,
            lambda_corr: 0.1,
        }
    }
}

impl LossWeights {
    pub fn recon_only() -> Self {
        LossWeights {
            lambda_cons: 0.0,
            lambda_tv: 0.0,
            lambda_corr: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cons", self.lambda_cons),
            ("lambda_tv", self.lambda_tv),
            ("lambda_corr", self.lambda_corr),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TensorError::Domain {
                    op: "loss weights",
                    what: format!("{name}={v} must be finite and >= 0"),
                });
            }
        }
        Ok(())
    }
}

/// All loss terms of one step. `cons`, `tv` and `corr` carry their lambda
/// weights; `total` is their sum plus `recon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub cons: f64,
    pub tv: f64,
    pub corr: f64,
    pub total: f64,
}

fn time_extent(op: &'static str, x: &Var<'_>, min: usize) -> Result<usize> {
    let shape = x.shape();
    let t = *shape.last().ok_or(TensorError::Domain {
        op,
        what: "rank-0 input".into(),
    })?;
    if t < min {
        return Err(TensorError::Domain {
            op,
            what: format!("time extent {t} below minimum {min}"),
        });
    }
    Ok(t)
}

/// Rows-by-time view: every leading axis is folded into rows.
fn as_rows<'t>(x: &Var<'t>) -> Result<(Var<'t>, usize, usize)> {
    let shape = x.shape();
    let t = *shape.last().unwrap();
    let rows = x.len() / t;
    Ok((x.reshape(&[rows, t])?, rows, t))
}

/// Mean absolute error over every entry.
pub fn l_recon<'t>(x1: &Var<'t>, x1_hat: &Var<'t>) -> Result<Var<'t>> {
    x1.sub(x1_hat)?.abs()?.mean_all()
}

/// Per-channel temporal mean and standard deviation (population convention),
/// both compared by mean absolute difference over batch and channels.
pub fn l_cons<'t>(x1: &Var<'t>, x1_hat: &Var<'t>, lambda: f64) -> Result<Var<'t>> {
    time_extent("l_cons", x1, 2)?;
    let (a, _, _) = as_rows(x1)?;
    let (b, _, _) = as_rows(x1_hat)?;
    let mu_a = a.mean_axis(1)?;
    let mu_b = b.mean_axis(1)?;
    let sd_a = a.var_axis(1)?.add_scalar(SIGMA_EPS)?.sqrt()?;
    let sd_b = b.var_axis(1)?.add_scalar(SIGMA_EPS)?.sqrt()?;
    let mean_term = mu_a.sub(&mu_b)?.abs()?.mean_all()?;
    let sd_term = sd_a.sub(&sd_b)?.abs()?.mean_all()?;
    mean_term.add(&sd_term)?.scalar_mul(lambda)
}

/// Temporal total variation: (1/T) * sum_t mean_{batch,channels} of forward
/// absolute differences; T-1 terms normalized by T.
pub fn l_tv<'t>(x1_hat: &Var<'t>, lambda: f64) -> Result<Var<'t>> {
    let t = time_extent("l_tv", x1_hat, 2)?;
    let (x, rows, _) = as_rows(x1_hat)?;
    let head = x.slice(&[(0, rows), (1, t - 1)])?;
    let tail = x.slice(&[(0, rows), (0, t - 1)])?;
    let mean_abs_diff = head.sub(&tail)?.abs()?.mean_all()?;
    mean_abs_diff.scalar_mul(lambda * (t as f64 - 1.0) / t as f64)
}

fn centered<'t>(rows: &Var<'t>, n_rows: usize, t: usize) -> Result<Var<'t>> {
    let mu = rows.mean_axis(1)?.reshape(&[n_rows, 1])?;
    let ones = rows.tape().leaf(Tensor::ones(&[1, t]));
    rows.sub(&mu.matmul(&ones)?)
}

fn pearson_rows<'t>(x1: &Var<'t>, x1_hat: &Var<'t>, eps: f64) -> Result<Var<'t>> {
    let (a, rows, t) = as_rows(x1)?;
    let (b, _, _) = as_rows(x1_hat)?;
    let ca = centered(&a, rows, t)?;
    let cb = centered(&b, rows, t)?;
    let cov = ca.mul(&cb)?.mean_axis(1)?;
    let va = a.var_axis(1)?.add_scalar(eps)?;
    let vb = b.var_axis(1)?.add_scalar(eps)?;
    let denom = va.mul(&vb)?.sqrt()?;
    cov.mul(&denom.recip_positive()?)
}

/// Exact Pearson alignment term lambda * (1 - rho), averaged over batch and
/// channels. A channel with variance below [`VAR_GUARD`] is rejected,
/// naming the flat (batch*channel) row.
pub fn l_corr<'t>(x1: &Var<'t>, x1_hat: &Var<'t>, lambda: f64) -> Result<Var<'t>> {
    time_extent("l_corr", x1, 2)?;
    for (name, v) in [("x1", x1), ("x1_hat", x1_hat)] {
        let (r, _, _) = as_rows(v)?;
        let vars = r.var_axis(1)?.value();
        if let Some(row) = vars.data().iter().position(|&x| x <= VAR_GUARD) {
            return Err(TensorError::Domain {
                op: "l_corr",
                what: format!("zero-variance channel: {name} row {row}"),
            });
        }
    }
    let rho = pearson_rows(x1, x1_hat, 0.0)?;
    one_minus_mean(rho, lambda)
}

/// Training-time Pearson term with a smoothed denominator; gradients stay
/// finite even on constant channels.
pub fn l_corr_smoothed<'t>(x1: &Var<'t>, x1_hat: &Var<'t>, lambda: f64) -> Result<Var<'t>> {
    time_extent("l_corr", x1, 2)?;
    let rho = pearson_rows(x1, x1_hat, CORR_SMOOTH_EPS)?;
    one_minus_mean(rho, lambda)
}

fn one_minus_mean<'t>(rho: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    let mean_rho = rho.mean_all()?;
    let one = rho.tape().leaf(Tensor::scalar(1.0));
    one.sub(&mean_rho)?.scalar_mul(lambda)
}

/// Full objective. Returns the differentiable total plus the value of every
/// term. The Pearson term uses the smoothed denominator.
pub fn total_loss<'t>(
    x1: &Var<'t>,
    x1_hat: &Var<'t>,
    weights: &LossWeights,
) -> Result<(Var<'t>, LossBreakdown)> {
    weights.validate()?;
    let recon = l_recon(x1, x1_hat)?;
    let cons = l_cons(x1, x1_hat, weights.lambda_cons)?;
    let tv = l_tv(x1_hat, weights.lambda_tv)?;
    let corr = l_corr_smoothed(x1, x1_hat, weights.lambda_corr)?;
    let total = recon.add(&cons)?.add(&tv)?.add(&corr)?;
    let breakdown = LossBreakdown {
        recon: recon.item()?,
        cons: cons.item()?,
        tv: tv.item()?,
        corr: corr.item()?,
        total: total.item()?,
    };
    Ok((total, breakdown))
}

/// S_lambda(y) = sign(y) * max(|y| - lambda, 0); the proximal operator of
/// lambda*|.| and the analytic fixture for the total-variation property.
pub fn soft_threshold(y: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    y.signum() * (y.abs() - lambda).max(0.0)
}

/// Center a series and scale to unit L2 norm. `None` for a constant input.
pub fn project_to_sphere(x: &[f64]) -> Option<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return None;
    }
    Some(centered.into_iter().map(|v| v / norm).collect())
}

/// Plain Pearson correlation of two equal-length series. `None` when either
/// side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let pa = project_to_sphere(a)?;
    let pb = project_to_sphere(b)?;
    Some(pa.iter().zip(&pb).map(|(x, y)| x * y).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn pair<'t>(tape: &'t Tape, a: Tensor, b: Tensor) -> (Var<'t>, Var<'t>) {
        (tape.leaf(a), tape.leaf(b))
    }

    fn t3(data: Vec<f64>, c: usize, t: usize) -> Tensor {
        Tensor::new(vec![1, c, t], data).unwrap()
    }

    #[test]
    fn recon_zero_at_identity_and_mean_abs() {
        let tape = Tape::new();
        let (x, same) = pair(
            &tape,
            t3(vec![1.0, 2.0, 3.0, 4.0], 2, 2),
            t3(vec![1.0, 2.0, 3.0, 4.0], 2, 2),
        );
        assert_eq!(l_recon(&x, &same).unwrap().item().unwrap(), 0.0);

        let (x, y) = pair(&tape, t3(vec![0.0, 0.0], 1, 2), t3(vec![1.0, -3.0], 1, 2));
        assert_eq!(l_recon(&x, &y).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn cons_constant_shift_hits_mean_term_only() {
        let tape = Tape::new();
        let base = vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        let shifted: Vec<f64> = base.iter().map(|v| v + 1.0).collect();
        let (x, y) = pair(&tape, t3(base, 2, 3), t3(shifted, 2, 3));
        let v = l_cons(&x, &y, 2.0).unwrap().item().unwrap();
        assert!((v - 2.0).abs() < 1e-9, "got {v}");
    }

    #[test]
    fn cons_doubled_std_hits_sd_term() {
        let tape = Tape::new();
        let base = vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        // y = 2(x - mu) + mu per channel doubles sigma, keeps the mean.
        let mut y = base.clone();
        for ch in 0..2 {
            let row = &mut y[ch * 3..(ch + 1) * 3];
            let mu = row.iter().sum::<f64>() / 3.0;
            for v in row.iter_mut() {
                *v = 2.0 * (*v - mu) + mu;
            }
        }
        let mut expected = 0.0;
        for ch in 0..2 {
            let row = &base[ch * 3..(ch + 1) * 3];
            let mu = row.iter().sum::<f64>() / 3.0;
            let sd = (row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 3.0).sqrt();
            expected += sd / 2.0;
        }
        let (x, yv) = pair(&tape, t3(base, 2, 3), t3(y, 2, 3));
        let v = l_cons(&x, &yv, 1.5).unwrap().item().unwrap();
        assert!((v - 1.5 * expected).abs() < 1e-8, "got {v} want {expected}");
    }

    #[test]
    fn tv_examples() {
        let tape = Tape::new();
        let constant = tape.leaf(t3(vec![2.0; 4], 1, 4));
        assert_eq!(l_tv(&constant, 1.0).unwrap().item().unwrap(), 0.0);

        let alternating = tape.leaf(t3(vec![0.0, 1.0, 0.0, 1.0], 1, 4));
        let v = l_tv(&alternating, 2.0).unwrap().item().unwrap();
        assert!((v - 2.0 * 0.75).abs() < 1e-12);

        // A ramp has the same TV as the alternating series: magnitude, not
        // sign changes.
        let ramp = tape.leaf(t3(vec![0.0, 1.0, 2.0, 3.0], 1, 4));
        let v = l_tv(&ramp, 2.0).unwrap().item().unwrap();
        assert!((v - 2.0 * 0.75).abs() < 1e-12);
    }

    #[test]
    fn corr_identity_affine_and_flip() {
        let tape = Tape::new();
        let base = vec![0.1, -0.4, 0.9, -1.3, 0.6, 0.2];
        let (x, same) = pair(&tape, t3(base.clone(), 2, 3), t3(base.clone(), 2, 3));
        let v = l_corr(&x, &same, 1.0).unwrap().item().unwrap();
        assert!(v.abs() < 1e-12);

        let affine: Vec<f64> = base.iter().map(|v| 3.5 * v + 0.7).collect();
        let (x, y) = pair(&tape, t3(base.clone(), 2, 3), t3(affine, 2, 3));
        let v = l_corr(&x, &y, 1.0).unwrap().item().unwrap();
        assert!(v.abs() < 1e-12, "affine invariance violated: {v}");

        let neg: Vec<f64> = base.iter().map(|v| -v).collect();
        let (x, y) = pair(&tape, t3(base, 2, 3), t3(neg, 2, 3));
        let v = l_corr(&x, &y, 0.5).unwrap().item().unwrap();
        assert!((v - 1.0).abs() < 1e-12, "rho=-1 should give 2*lambda: {v}");
    }

    #[test]
    fn corr_rejects_zero_variance_naming_row() {
        let tape = Tape::new();
        let (x, y) = pair(
            &tape,
            t3(vec![1.0, 1.0, 1.0, 0.0, 1.0, 2.0], 2, 3),
            t3(vec![0.0, 0.5, 1.0, 0.0, 0.5, 1.0], 2, 3),
        );
        let err = l_corr(&x, &y, 1.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 0"), "message should name the row: {msg}");
    }

    #[test]
    fn smoothed_matches_exact_when_variance_is_healthy() {
        let tape = Tape::new();
        let mut rng = crate::rng::stream(5, 0);
        let a = Tensor::randn(&[2, 3, 16], &mut rng);
        let b = Tensor::randn(&[2, 3, 16], &mut rng);
        let (x, y) = (tape.leaf(a), tape.leaf(b));
        let exact = l_corr(&x, &y, 1.0).unwrap().item().unwrap();
        let smooth = l_corr_smoothed(&x, &y, 1.0).unwrap().item().unwrap();
        assert!((exact - smooth).abs() < 1e-8);
    }

    #[test]
    fn total_collapses_to_recon_with_zero_weights() {
        let tape = Tape::new();
        let mut rng = crate::rng::stream(6, 0);
        let a = Tensor::randn(&[1, 2, 8], &mut rng);
        let b = Tensor::randn(&[1, 2, 8], &mut rng);
        let (x, y) = (tape.leaf(a), tape.leaf(b));
        let (_, breakdown) = total_loss(&x, &y, &LossWeights::recon_only()).unwrap();
        assert_eq!(breakdown.total, breakdown.recon);
        assert_eq!(breakdown.cons, 0.0);
        assert_eq!(breakdown.tv, 0.0);
        assert_eq!(breakdown.corr, 0.0);
    }

    #[test]
    fn total_zero_at_identity() {
        // The TV term penalizes x1_hat itself, so only the comparison
        // terms vanish at identity; with lambda_tv = 0 the total is 0.
        let tape = Tape::new();
        let mut rng = crate::rng::stream(7, 0);
        let a = Tensor::randn(&[1, 2, 8], &mut rng);
        let (x, y) = (tape.leaf(a.clone()), tape.leaf(a));
        let weights = LossWeights {
            lambda_tv: 0.0,
            ..LossWeights::default()
        };
        let (_, breakdown) = total_loss(&x, &y, &weights).unwrap();
        assert!(breakdown.total.abs() < 1e-9, "total={}", breakdown.total);
        assert_eq!(breakdown.recon, 0.0);
        assert!(breakdown.cons.abs() < 1e-12);
    }

    #[test]
    fn every_term_non_negative() {
        let mut rng = crate::rng::stream(8, 0);
        for _ in 0..20 {
            let tape = Tape::new();
            let a = Tensor::randn(&[2, 2, 10], &mut rng);
            let b = Tensor::randn(&[2, 2, 10], &mut rng);
            let (x, y) = (tape.leaf(a), tape.leaf(b));
            let (_, d) = total_loss(&x, &y, &LossWeights::default()).unwrap();
            assert!(d.recon >= 0.0 && d.cons >= 0.0 && d.tv >= 0.0 && d.corr >= 0.0);
            let sum = d.recon + d.cons + d.tv + d.corr;
            assert!((d.total - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_threshold_examples() {
        assert_eq!(soft_threshold(0.3, 0.5), 0.0); // dead zone
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5); // odd symmetry
    }
}
