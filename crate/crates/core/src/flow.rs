//! Conditional flow-matching mechanics: the linear interpolation path, its
//! target vector field, training-time sampling of t and the base
//! distribution, and Euler ODE generation.


use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid flow config: {0}")]
    BadConfig(String),
    #[error("non-finite state at ODE step {step} (max |x| = {max_abs:.3e})")]
    NonFiniteState { step: usize, max_abs: f64 },
    #[error("vector field evaluation failed: {0}")]
    Field(String),
}

pub type Result<T> = std::result::Result<T, FlowError>;

/// Base distribution for the flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BaseMode {
    #[default]
    Gaussian,
    /// Degenerate point mass at zero; the mode-collapse control case.
    Zero,
}

impl std::fmt::Display for BaseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaseMode::Gaussian => write!(f, "gaussian"),
            BaseMode::Zero => write!(f, "zero"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    /// Lower clamp on training times; ODE integration still spans [0, 1].
    pub t_eps: f64,
    /// Logit-normal time law: t = sigmoid(z), z ~ Normal(time_mu, time_sigma).
    pub time_mu: f64,
    pub time_sigma: f64,
    pub base_mode: BaseMode,
    pub ode_steps: usize,
    /// Classifier-free guidance scale; 1 = pure conditional sampling.
    pub guidance: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            t_eps: 5e-2,
            time_mu: -0.8,
            time_sigma: 0.8,
            base_mode: BaseMode::Gaussian,
            ode_steps: 50,
            guidance: 1.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_eps > 0.0 && self.t_eps < 0.5) {
            return Err(FlowError::BadConfig(format!(
                "t_eps={} outside (0, 0.5)",
                self.t_eps
            )));
        }
        if self.ode_steps < 1 {
            return Err(FlowError::BadConfig("ode_steps must be >= 1".into()));
        }
        if !(self.guidance >= 0.0) {
            return Err(FlowError::BadConfig(format!(
                "guidance={} must be >= 0",
                self.guidance
            )));
        }
        if !(self.time_sigma >= 0.0) {
            return Err(FlowError::BadConfig("time_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// The (x_t, t, class) triple fed to the vector-field model.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub x_t: Tensor,
    pub t: f64,
    /// `None` is the unconditional (null-token) branch.
    pub class: Option<usize>,
}

/// Training-time draw: t = sigmoid(z) with z ~ Normal(mu, sigma), clamped
/// below at `t_eps`.
pub fn sample_time(config: &FlowConfig, rng: &mut Rng) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    let t = sigmoid(config.time_mu + config.time_sigma * n);
    t.max(config.t_eps)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(FlowError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// x_t = t*x1 + (1-t)*x0.
pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    check_shapes("interpolate", x0, x1)?;
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(&a, &b)| t * b + (1.0 - t) * a)
        .collect();
    Ok(Tensor::new(x0.shape().to_vec(), data).expect("same shape"))
}

/// The path derivative u = x1 - x0, independent of t.
pub fn target_field(x0: &Tensor, x1: &Tensor) -> Result<Tensor> {
    check_shapes("target_field", x0, x1)?;
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .map(|(&a, &b)| b - a)
        .collect();
    Ok(Tensor::new(x0.shape().to_vec(), data).expect("same shape"))
}

/// x1_hat = x_t + (1-t)*v.
pub fn reconstruct_x1(x_t: &Tensor, v: &Tensor, t: f64) -> Result<Tensor> {
    check_shapes("reconstruct_x1", x_t, v)?;
    let data = x_t
        .data()
        .iter()
        .zip(v.data())
        .map(|(&x, &vi)| x + (1.0 - t) * vi)
        .collect();
    Ok(Tensor::new(x_t.shape().to_vec(), data).expect("same shape"))
}

/// Draws x0 from the configured base distribution.
pub fn sample_base(shape: &[usize], mode: BaseMode, rng: &mut Rng) -> Tensor {
    match mode {
        BaseMode::Gaussian => Tensor::randn(shape, rng),
        BaseMode::Zero => Tensor::zeros(shape),
    }
}

/// A conditional vector field v(x, t, c). `class = None` is the
/// unconditional branch.
pub trait VectorField {
    fn eval(&self, x: &Tensor, t: f64, class: Option<usize>) -> Result<Tensor>;
}

impl<F> VectorField for F
where
    F: Fn(&Tensor, f64, Option<usize>) -> Result<Tensor>,
{
    fn eval(&self, x: &Tensor, t: f64, class: Option<usize>) -> Result<Tensor> {
        self(x, t, class)
    }
}

/// Explicit Euler integration of dx/dt = v(x, t, c) from t=0 to t=1 on a
/// uniform grid. With guidance w != 1 the effective field is
/// v(x,t,None) + w*(v(x,t,c) - v(x,t,None)); at w == 1 the unconditional
/// branch is never evaluated.
pub fn ode_sample(
    field: &impl VectorField,
    class: usize,
    shape: &[usize],
    config: &FlowConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    config.validate()?;
    let mut x = sample_base(shape, config.base_mode, rng);
    let n = config.ode_steps;
    let dt = 1.0 / n as f64;
    for step in 0..n {
        let t = step as f64 * dt;
        let v = if (config.guidance - 1.0).abs() < f64::EPSILON {
            field.eval(&x, t, Some(class))?
        } else {
            let v_cond = field.eval(&x, t, Some(class))?;
            let v_uncond = field.eval(&x, t, None)?;
            let w = config.guidance;
            let data = v_uncond
                .data()
                .iter()
                .zip(v_cond.data())
                .map(|(&u, &c)| u + w * (c - u))
                .collect();
            Tensor::new(v_cond.shape().to_vec(), data).expect("same shape")
        };
        check_shapes("ode_sample", &x, &v)?;
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(v.data())
            .map(|(&xv, &vv)| xv + dt * vv)
            .collect();
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            let _ = bad;
            return Err(FlowError::NonFiniteState {
                step,
                max_abs: x.max_abs(),
            });
        }
        x = Tensor::new(x.shape().to_vec(), data).expect("same shape");
    }
    Ok(x)
}
