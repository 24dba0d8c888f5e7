//! The optimization loop: AdamW with decoupled weight decay, linear
//! warmup, EMA weights, classifier-free label dropout, class-balanced
//! batches, and bit-reproducible checkpointing.

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::flow::{self, FlowError};
use crate::model::{self, JetConfig, JetParams, ModelError};
use crate::objectives::{self, LossBreakdown};
use crate::rng::{self, Rng, RngState};
use crate::synth::{ClassBalancedSampler, Dataset, SynthError};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("dataset does not match config: {0}")]
    DataMismatch(String),
    #[error("non-finite loss at step {step}: {what}")]
    NonFinite { step: u64, what: String },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {what}")]
    Malformed { path: String, what: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Linear ramp from 0 to the base rate across this many epochs.
    pub warmup_epochs: f64,
    pub ema_decay: f64,
    /// Class-balancing exponent of the batch sampler.
    pub sampler_alpha: f64,
    /// Optional hard cap on optimization steps (desk-scale runs).
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    /// Full-scale defaults; see [`TrainConfig::desk`] for the CPU preset.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            batch_size: 256,
            epochs: 200,
            warmup_epochs: 5.0,
            ema_decay: 0.9999,
            sampler_alpha: 1.0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Desk-scale overrides: small batches, a faster rate, and an EMA decay
    /// that actually moves within a few thousand steps.
    pub fn desk() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            batch_size: 32,
            ema_decay: 0.999,
            max_steps: Some(2000),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be > 0".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::BadConfig(format!("{name}={b} outside [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(TrainError::BadConfig(format!(
                "ema_decay={} outside [0, 1)",
                self.ema_decay
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::BadConfig(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if self.weight_decay < 0.0 || self.warmup_epochs < 0.0 {
            return Err(TrainError::BadConfig(
                "weight_decay and warmup_epochs must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.sampler_alpha) {
            return Err(TrainError::BadConfig(format!(
                "sampler_alpha={} outside [0, 1]",
                self.sampler_alpha
            )));
        }
        Ok(())
    }
}

/// Per-parameter Adam moment accumulators, in canonical parameter order.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimState {
    pub fn new(params: &JetParams) -> Self {
        let zeros: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        OptimState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// Decoupled weight decay applies only to dense weight matrices; embedding
/// tables (positional, class) and modulation parameters are exempt, as are
/// all biases.
fn decays(name: &str, tensor: &Tensor) -> bool {
    tensor.rank() == 2 && !name.contains("mod.") && name != "pos" && name != "class_table"
}

/// One AdamW update with bias correction. `grads` must carry one finite
/// gradient per parameter.
pub fn adamw_step(
    params: &mut JetParams,
    grads: &crate::tensor::Gradients,
    state: &mut OptimState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (slot, (name, param)) in params.named_mut().into_iter().enumerate() {
        let grad = grads
            .get(&name)
            .ok_or_else(|| TrainError::NonFiniteGrad(format!("{name} (missing)")))?;
        if !grad.all_finite() {
            return Err(TrainError::NonFiniteGrad(name.clone()));
        }
        let decay = if decays(&name, param) {
            config.weight_decay
        } else {
            0.0
        };
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let mut new_m = Vec::with_capacity(param.len());
        let mut new_v = Vec::with_capacity(param.len());
        let mut new_p = Vec::with_capacity(param.len());
        for i in 0..param.len() {
            let g = grad.data()[i];
            let mi = config.beta1 * m.data()[i] + (1.0 - config.beta1) * g;
            let vi = config.beta2 * v.data()[i] + (1.0 - config.beta2) * g * g;
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let p = param.data()[i];
            new_p.push(p - lr * (m_hat / (v_hat.sqrt() + config.adam_eps) + decay * p));
            new_m.push(mi);
            new_v.push(vi);
        }
        *m = Tensor::new(m.shape().to_vec(), new_m).expect("same shape");
        *v = Tensor::new(v.shape().to_vec(), new_v).expect("same shape");
        *param = Tensor::new(param.shape().to_vec(), new_p).expect("same shape");
    }
    Ok(())
}

/// Linear warmup to the base rate, constant afterwards. `epoch` may be
/// fractional (step / steps-per-epoch).
pub fn lr_schedule(epoch: f64, config: &TrainConfig) -> f64 {
    if config.warmup_epochs <= 0.0 {
        return config.learning_rate;
    }
    config.learning_rate * (epoch / config.warmup_epochs).min(1.0)
}

/// ema <- decay * ema + (1 - decay) * params.
pub fn ema_update(ema: &mut JetParams, params: &JetParams, decay: f64) {
    let sources: Vec<Tensor> = params.named().iter().map(|(_, t)| (*t).clone()).collect();
    for ((_, e), src) in ema.named_mut().into_iter().zip(sources) {
        let data: Vec<f64> = e
            .data()
            .iter()
            .zip(src.data())
            .map(|(&a, &b)| decay * a + (1.0 - decay) * b)
            .collect();
        *e = Tensor::new(e.shape().to_vec(), data).expect("same shape");
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub recon: f64,
    pub cons: f64,
    pub tv: f64,
    pub corr: f64,
    pub total: f64,
    pub lr: f64,
}

impl LossRow {
    pub fn csv_header() -> &'static str {
        "step,recon,cons,tv,corr,total,lr"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step, self.recon, self.cons, self.tv, self.corr, self.total, self.lr
        )
    }
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub rows: Vec<LossRow>,
}

fn check_dataset(run: &RunConfig, dataset: &Dataset) -> Result<()> {
    let h = &dataset.header;
    let g = run.geometry;
    if h.channels != g.channels || h.samples != g.samples || h.sample_rate != g.sample_rate {
        return Err(TrainError::DataMismatch(format!(
            "dataset geometry {}x{}@{} vs config {}x{}@{}",
            h.channels, h.samples, h.sample_rate, g.channels, g.samples, g.sample_rate
        )));
    }
    if dataset.segments.is_empty() {
        return Err(TrainError::DataMismatch("dataset is empty".into()));
    }
    Ok(())
}

/// Runs the training loop. Fully deterministic given the run seed: the
/// per-step draw order is batch indices, label drops, times, then base
/// noise. Resuming from a checkpoint continues the uninterrupted run
/// bit-for-bit.
pub fn train(run: &RunConfig, dataset: &Dataset, resume: Option<Checkpoint>) -> Result<TrainOutput> {
    run.train.validate()?;
    run.flow.validate()?;
    objectives::LossWeights::validate(&run.loss)?;
    check_dataset(run, dataset)?;

    let num_classes = dataset.header.classes.len();
    let jet_cfg = JetConfig::new(run.geometry, run.model, num_classes);
    jet_cfg.validate()?;

    let class_ids = dataset.class_ids();
    let sampler = ClassBalancedSampler::new(&class_ids, run.train.sampler_alpha)?;

    let n = dataset.segments.len();
    let batch = run.train.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch) as u64;
    let mut total_steps = steps_per_epoch * run.train.epochs as u64;
    if let Some(cap) = run.train.max_steps {
        total_steps = total_steps.min(cap);
    }

    let (mut params, mut ema, mut optim, mut train_rng, start_step) = match resume {
        Some(ck) => {
            if ck.run != *run {
                return Err(TrainError::BadConfig(
                    "checkpoint config does not match the requested run config".into(),
                ));
            }
            (
                ck.params,
                ck.ema,
                ck.optim,
                ck.rng_state.restore(),
                ck.step,
            )
        }
        None => {
            let mut init_rng = rng::stream(run.seed, 100);
            let params = JetParams::init(jet_cfg, &mut init_rng)?;
            let ema = params.clone();
            let optim = OptimState::new(&params);
            (params, ema, optim, rng::stream(run.seed, 101), 0)
        }
    };

    let (c, t) = (jet_cfg.channels, jet_cfg.samples);
    let mut rows = Vec::with_capacity((total_steps - start_step) as usize);

    for step in start_step..total_steps {
        let lr = lr_schedule((step + 1) as f64 / steps_per_epoch as f64, &run.train);

        // Batch assembly; the draw order here is part of the contract.
        let indices: Vec<usize> = (0..batch).map(|_| sampler.next(&mut train_rng)).collect();
        let classes: Vec<Option<usize>> = indices
            .iter()
            .map(|&i| {
                let dropped = train_rng.random::<f64>() < jet_cfg.label_drop;
                if dropped {
                    None
                } else {
                    Some(dataset.segments[i].class_id)
                }
            })
            .collect();
        let ts: Vec<f64> = (0..batch)
            .map(|_| flow::sample_time(&run.flow, &mut train_rng))
            .collect();
        let x0 = flow::sample_base(&[batch, c, t], run.flow.base_mode, &mut train_rng);

        let mut x1_data = Vec::with_capacity(batch * c * t);
        for &i in &indices {
            x1_data.extend_from_slice(dataset.segments[i].segment.data());
        }
        let x1 = Tensor::new(vec![batch, c, t], x1_data).expect("batch geometry");

        let mut xt_data = Vec::with_capacity(batch * c * t);
        let mut coef_data = Vec::with_capacity(batch * c * t);
        for (bi, &tb) in ts.iter().enumerate() {
            for j in 0..c * t {
                let idx = bi * c * t + j;
                xt_data.push(tb * x1.data()[idx] + (1.0 - tb) * x0.data()[idx]);
                coef_data.push(1.0 - tb);
            }
        }
        let x_t = Tensor::new(vec![batch, c, t], xt_data).expect("batch geometry");
        let coef = Tensor::new(vec![batch, c, t], coef_data).expect("batch geometry");

        let tape = crate::tensor::Tape::new();
        let vars = params.register(&tape, true);
        let step_result: Result<(crate::tensor::Gradients, LossBreakdown)> = (|| {
            let v = model::forward_batch(&tape, &vars, &jet_cfg, &x_t, &ts, &classes)?;
            let x1_hat = v.mul(&tape.leaf(coef))?.add(&tape.leaf(x_t.clone()))?;
            let x1_var = tape.leaf(x1.clone());
            let (total, breakdown) = objectives::total_loss(&x1_var, &x1_hat, &run.loss)?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::NonFinite {
                    step,
                    what: format!("breakdown {breakdown:?}"),
                });
            }
            let grads = tape.backward(total)?;
            Ok((grads, breakdown))
        })();
        let (grads, breakdown) = step_result.map_err(|e| annotate_non_finite(e, step, &x_t))?;

        adamw_step(&mut params, &grads, &mut optim, lr, &run.train)?;
        ema_update(&mut ema, &params, run.train.ema_decay);

        rows.push(LossRow {
            step: step + 1,
            recon: breakdown.recon,
            cons: breakdown.cons,
            tv: breakdown.tv,
            corr: breakdown.corr,
            total: breakdown.total,
            lr,
        });
    }

    let checkpoint = Checkpoint {
        run: run.clone(),
        classes: dataset.header.classes.clone(),
        scale: dataset.header.scale,
        step: total_steps,
        params,
        ema,
        optim,
        rng_state: RngState::capture(&train_rng),
    };
    Ok(TrainOutput { checkpoint, rows })
}

fn annotate_non_finite(e: TrainError, step: u64, x_t: &Tensor) -> TrainError {
    match e {
        TrainError::Model(ModelError::NonFiniteActivation { stage }) => TrainError::NonFinite {
            step,
            what: format!("activation in {stage}; max |x_t| = {:.3e}", x_t.max_abs()),
        },
        TrainError::Tensor(TensorError::NonFinite { op }) => TrainError::NonFinite {
            step,
            what: format!("op {op}; max |x_t| = {:.3e}", x_t.max_abs()),
        },
        other => other,
    }
}

/// Batched Euler sampling with shared class and per-sample base draws; the
/// workhorse behind dataset generation. Draws base noise for every sample
/// first (sequentially from `rng`), then integrates the whole batch.
pub fn sample_batch(
    params: &JetParams,
    flow_cfg: &crate::flow::FlowConfig,
    class: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Tensor>> {
    flow_cfg.validate()?;
    let cfg = &params.config;
    let (c, t) = (cfg.channels, cfg.samples);
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut x_data = Vec::with_capacity(count * c * t);
    for _ in 0..count {
        let x0 = flow::sample_base(&[c, t], flow_cfg.base_mode, rng);
        x_data.extend_from_slice(x0.data());
    }
    let mut x = Tensor::new(vec![count, c, t], x_data).expect("batch geometry");
    let n = flow_cfg.ode_steps;
    let dt = 1.0 / n as f64;
    let guided = (flow_cfg.guidance - 1.0).abs() >= f64::EPSILON;
    for step in 0..n {
        let tt = step as f64 * dt;
        let ts = vec![tt; count];
        let cond: Vec<Option<usize>> = vec![Some(class); count];
        let v = if guided {
            let v_c = model::eval_field_batch(params, &x, &ts, &cond)?;
            let uncond: Vec<Option<usize>> = vec![None; count];
            let v_u = model::eval_field_batch(params, &x, &ts, &uncond)?;
            let w = flow_cfg.guidance;
            let data = v_u
                .data()
                .iter()
                .zip(v_c.data())
                .map(|(&u, &cv)| u + w * (cv - u))
                .collect();
            Tensor::new(vec![count, c, t], data).expect("batch geometry")
        } else {
            model::eval_field_batch(params, &x, &ts, &cond)?
        };
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(v.data())
            .map(|(&xv, &vv)| xv + dt * vv)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Flow(FlowError::NonFiniteState {
                step,
                max_abs: x.max_abs(),
            }));
        }
        x = Tensor::new(vec![count, c, t], data).expect("batch geometry");
    }
    Ok((0..count)
        .map(|i| {
            Tensor::new(
                vec![c, t],
                x.data()[i * c * t..(i + 1) * c * t].to_vec(),
            )
            .expect("segment geometry")
        })
        .collect())
}
