//! The vector-field transformer: patch embedding that preserves channel
//! identity, blocks of self-attention and feed-forward layers modulated by
//! adaptive layer norm from (time, class) conditioning, and an output head
//! projecting back to signal space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Geometry;
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorError, Var};

const LN_EPS: f64 = 1e-6;
/// Times in [0,1] are scaled before the sinusoidal embedding so the
/// frequency bank covers a useful dynamic range.
const TIME_SCALE: f64 = 1000.0;
const TIME_MAX_PERIOD: f64 = 10000.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("non-finite activation in {stage}")]
    NonFiniteActivation { stage: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Architecture block of a run config (geometry and class count join in
/// [`JetConfig`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub ff_mult: usize,
    /// Include the gate term in the modulation triple; without it residual
    /// branches are ungated (gate = 1).
    pub gated: bool,
    pub time_features: usize,
    pub label_drop: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            depth: 4,
            heads: 4,
            patch_size: 50,
            ff_mult: 4,
            gated: true,
            time_features: 64,
            label_drop: 0.1,
        }
    }
}

/// Full model configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JetConfig {
    pub channels: usize,
    pub samples: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub num_classes: usize,
    pub label_drop: f64,
    pub gated: bool,
    pub time_features: usize,
}

impl JetConfig {
    pub fn new(geometry: Geometry, model: ModelConfig, num_classes: usize) -> Self {
        JetConfig {
            channels: geometry.channels,
            samples: geometry.samples,
            patch_size: model.patch_size,
            embed_dim: model.embed_dim,
            depth: model.depth,
            heads: model.heads,
            ff_mult: model.ff_mult,
            num_classes,
            label_drop: model.label_drop,
            gated: model.gated,
            time_features: model.time_features,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.patch_size == 0 || self.samples % self.patch_size != 0 {
            return Err(ModelError::BadConfig(format!(
                "samples {} not divisible by patch size {}",
                self.samples, self.patch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.label_drop) {
            return Err(ModelError::BadConfig(format!(
                "label_drop {} outside [0, 1]",
                self.label_drop
            )));
        }
        if self.time_features < 2 || self.time_features % 2 != 0 {
            return Err(ModelError::BadConfig(
                "time_features must be an even count >= 2".into(),
            ));
        }
        if self.num_classes == 0 || self.depth == 0 || self.ff_mult == 0 {
            return Err(ModelError::BadConfig(
                "num_classes, depth and ff_mult must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn patches_per_channel(&self) -> usize {
        self.samples / self.patch_size
    }

    /// Flat token count C * N.
    pub fn tokens(&self) -> usize {
        self.channels * self.patches_per_channel()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    fn modulation_dim(&self) -> usize {
        if self.gated {
            6 * self.embed_dim
        } else {
            4 * self.embed_dim
        }
    }

    /// Null (unconditional) row of the class table.
    pub fn null_class(&self) -> usize {
        self.num_classes
    }

    /// Closed-form parameter census; must equal runtime enumeration.
    pub fn count_params(&self) -> usize {
        let d = self.embed_dim;
        let p = self.patch_size;
        let s = self.tokens();
        let ff = self.ff_mult * d;
        let md = self.modulation_dim();
        let block = 4 * (d * d + d) + (d * ff + ff) + (ff * d + d) + (d * md + md);
        (p * d + d)                       // patch embedding
            + s * d                       // positional table
            + self.depth * block
            + (self.time_features * d + d) + (d * d + d) // time MLP
            + (self.num_classes + 1) * d  // class table incl. null token
            + (d * p + p) // output head
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub mod_w: Tensor,
    pub mod_b: Tensor,
}

/// All learnable parameters, addressable by name in a canonical order.
#[derive(Debug, Clone)]
pub struct JetParams {
    pub config: JetConfig,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub pos: Tensor,
    pub blocks: Vec<BlockParams>,
    pub time_w1: Tensor,
    pub time_b1: Tensor,
    pub time_w2: Tensor,
    pub time_b2: Tensor,
    pub class_table: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

fn xavier(shape: [usize; 2], rng: &mut Rng) -> Tensor {
    use rand::Rng as _;
    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    Tensor::from_fn(&shape, |_| rng.random_range(-limit..limit))
}

fn small_normal(shape: &[usize], rng: &mut Rng) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        0.02 * z
    })
}

impl JetParams {
    /// Draws fresh parameters. Modulation heads and the output head start
    /// at zero, so the initial vector field is identically zero and
    /// reconstruction starts from x_t.
    pub fn init(config: JetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let p = config.patch_size;
        let ff = config.ff_mult * d;
        let md = config.modulation_dim();
        let embed_w = xavier([p, d], rng);
        let embed_b = Tensor::zeros(&[d]);
        let pos = small_normal(&[config.tokens(), d], rng);
        let mut blocks = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            blocks.push(BlockParams {
                wq: xavier([d, d], rng),
                bq: Tensor::zeros(&[d]),
                wk: xavier([d, d], rng),
                bk: Tensor::zeros(&[d]),
                wv: xavier([d, d], rng),
                bv: Tensor::zeros(&[d]),
                wo: xavier([d, d], rng),
                bo: Tensor::zeros(&[d]),
                ff_w1: xavier([d, ff], rng),
                ff_b1: Tensor::zeros(&[ff]),
                ff_w2: xavier([ff, d], rng),
                ff_b2: Tensor::zeros(&[d]),
                mod_w: Tensor::zeros(&[d, md]),
                mod_b: Tensor::zeros(&[md]),
            });
        }
        let time_w1 = xavier([config.time_features, d], rng);
        let time_b1 = Tensor::zeros(&[d]);
        let time_w2 = xavier([d, d], rng);
        let time_b2 = Tensor::zeros(&[d]);
        let class_table = small_normal(&[config.num_classes + 1, d], rng);
        let head_w = Tensor::zeros(&[d, p]);
        let head_b = Tensor::zeros(&[p]);
        Ok(JetParams {
            config,
            embed_w,
            embed_b,
            pos,
            blocks,
            time_w1,
            time_b1,
            time_w2,
            time_b2,
            class_table,
            head_w,
            head_b,
        })
    }

    /// All-zero parameter skeleton, used when loading checkpoints.
    pub fn zeros(config: JetConfig) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let p = config.patch_size;
        let ff = config.ff_mult * d;
        let md = config.modulation_dim();
        let blocks = (0..config.depth)
            .map(|_| BlockParams {
                wq: Tensor::zeros(&[d, d]),
                bq: Tensor::zeros(&[d]),
                wk: Tensor::zeros(&[d, d]),
                bk: Tensor::zeros(&[d]),
                wv: Tensor::zeros(&[d, d]),
                bv: Tensor::zeros(&[d]),
                wo: Tensor::zeros(&[d, d]),
                bo: Tensor::zeros(&[d]),
                ff_w1: Tensor::zeros(&[d, ff]),
                ff_b1: Tensor::zeros(&[ff]),
                ff_w2: Tensor::zeros(&[ff, d]),
                ff_b2: Tensor::zeros(&[d]),
                mod_w: Tensor::zeros(&[d, md]),
                mod_b: Tensor::zeros(&[md]),
            })
            .collect();
        Ok(JetParams {
            config,
            embed_w: Tensor::zeros(&[p, d]),
            embed_b: Tensor::zeros(&[d]),
            pos: Tensor::zeros(&[config.tokens(), d]),
            blocks,
            time_w1: Tensor::zeros(&[config.time_features, d]),
            time_b1: Tensor::zeros(&[d]),
            time_w2: Tensor::zeros(&[d, d]),
            time_b2: Tensor::zeros(&[d]),
            class_table: Tensor::zeros(&[config.num_classes + 1, d]),
            head_w: Tensor::zeros(&[d, p]),
            head_b: Tensor::zeros(&[p]),
        })
    }

    /// Canonical (name, tensor) listing; the order defines checkpoint and
    /// optimizer traversal.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed.w".into(), &self.embed_w),
            ("embed.b".into(), &self.embed_b),
            ("pos".into(), &self.pos),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.attn.wq"), &b.wq));
            out.push((format!("block{i}.attn.bq"), &b.bq));
            out.push((format!("block{i}.attn.wk"), &b.wk));
            out.push((format!("block{i}.attn.bk"), &b.bk));
            out.push((format!("block{i}.attn.wv"), &b.wv));
            out.push((format!("block{i}.attn.bv"), &b.bv));
            out.push((format!("block{i}.attn.wo"), &b.wo));
            out.push((format!("block{i}.attn.bo"), &b.bo));
            out.push((format!("block{i}.ff.w1"), &b.ff_w1));
            out.push((format!("block{i}.ff.b1"), &b.ff_b1));
            out.push((format!("block{i}.ff.w2"), &b.ff_w2));
            out.push((format!("block{i}.ff.b2"), &b.ff_b2));
            out.push((format!("block{i}.mod.w"), &b.mod_w));
            out.push((format!("block{i}.mod.b"), &b.mod_b));
        }
        out.push(("time.w1".into(), &self.time_w1));
        out.push(("time.b1".into(), &self.time_b1));
        out.push(("time.w2".into(), &self.time_w2));
        out.push(("time.b2".into(), &self.time_b2));
        out.push(("class_table".into(), &self.class_table));
        out.push(("head.w".into(), &self.head_w));
        out.push(("head.b".into(), &self.head_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embed.w".into(), &mut self.embed_w),
            ("embed.b".into(), &mut self.embed_b),
            ("pos".into(), &mut self.pos),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.attn.wq"), &mut b.wq));
            out.push((format!("block{i}.attn.bq"), &mut b.bq));
            out.push((format!("block{i}.attn.wk"), &mut b.wk));
            out.push((format!("block{i}.attn.bk"), &mut b.bk));
            out.push((format!("block{i}.attn.wv"), &mut b.wv));
            out.push((format!("block{i}.attn.bv"), &mut b.bv));
            out.push((format!("block{i}.attn.wo"), &mut b.wo));
            out.push((format!("block{i}.attn.bo"), &mut b.bo));
            out.push((format!("block{i}.ff.w1"), &mut b.ff_w1));
            out.push((format!("block{i}.ff.b1"), &mut b.ff_b1));
            out.push((format!("block{i}.ff.w2"), &mut b.ff_w2));
            out.push((format!("block{i}.ff.b2"), &mut b.ff_b2));
            out.push((format!("block{i}.mod.w"), &mut b.mod_w));
            out.push((format!("block{i}.mod.b"), &mut b.mod_b));
        }
        out.push(("time.w1".into(), &mut self.time_w1));
        out.push(("time.b1".into(), &mut self.time_b1));
        out.push(("time.w2".into(), &mut self.time_w2));
        out.push(("time.b2".into(), &mut self.time_b2));
        out.push(("class_table".into(), &mut self.class_table));
        out.push(("head.w".into(), &mut self.head_w));
        out.push(("head.b".into(), &mut self.head_b));
        out
    }

    /// Runtime parameter count by enumeration.
    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Puts every parameter on a tape. Trainable registration names each
    /// tensor so gradients come back keyed; frozen registration records
    /// plain leaves for inference.
    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> JetVars<'t> {
        let reg = |name: &str, t: &Tensor| -> Var<'t> {
            if trainable {
                tape.param(name, t.clone())
            } else {
                tape.leaf(t.clone())
            }
        };
        JetVars {
            embed_w: reg("embed.w", &self.embed_w),
            embed_b: reg("embed.b", &self.embed_b),
            pos: reg("pos", &self.pos),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| BlockVars {
                    wq: reg(&format!("block{i}.attn.wq"), &b.wq),
                    bq: reg(&format!("block{i}.attn.bq"), &b.bq),
                    wk: reg(&format!("block{i}.attn.wk"), &b.wk),
                    bk: reg(&format!("block{i}.attn.bk"), &b.bk),
                    wv: reg(&format!("block{i}.attn.wv"), &b.wv),
                    bv: reg(&format!("block{i}.attn.bv"), &b.bv),
                    wo: reg(&format!("block{i}.attn.wo"), &b.wo),
                    bo: reg(&format!("block{i}.attn.bo"), &b.bo),
                    ff_w1: reg(&format!("block{i}.ff.w1"), &b.ff_w1),
                    ff_b1: reg(&format!("block{i}.ff.b1"), &b.ff_b1),
                    ff_w2: reg(&format!("block{i}.ff.w2"), &b.ff_w2),
                    ff_b2: reg(&format!("block{i}.ff.b2"), &b.ff_b2),
                    mod_w: reg(&format!("block{i}.mod.w"), &b.mod_w),
                    mod_b: reg(&format!("block{i}.mod.b"), &b.mod_b),
                })
                .collect(),
            time_w1: reg("time.w1", &self.time_w1),
            time_b1: reg("time.b1", &self.time_b1),
            time_w2: reg("time.w2", &self.time_w2),
            time_b2: reg("time.b2", &self.time_b2),
            class_table: reg("class_table", &self.class_table),
            head_w: reg("head.w", &self.head_w),
            head_b: reg("head.b", &self.head_b),
        }
    }
}

pub struct BlockVars<'t> {
    pub wq: Var<'t>,
    pub bq: Var<'t>,
    pub wk: Var<'t>,
    pub bk: Var<'t>,
    pub wv: Var<'t>,
    pub bv: Var<'t>,
    pub wo: Var<'t>,
    pub bo: Var<'t>,
    pub ff_w1: Var<'t>,
    pub ff_b1: Var<'t>,
    pub ff_w2: Var<'t>,
    pub ff_b2: Var<'t>,
    pub mod_w: Var<'t>,
    pub mod_b: Var<'t>,
}

pub struct JetVars<'t> {
    pub embed_w: Var<'t>,
    pub embed_b: Var<'t>,
    pub pos: Var<'t>,
    pub blocks: Vec<BlockVars<'t>>,
    pub time_w1: Var<'t>,
    pub time_b1: Var<'t>,
    pub time_w2: Var<'t>,
    pub time_b2: Var<'t>,
    pub class_table: Var<'t>,
    pub head_w: Var<'t>,
    pub head_b: Var<'t>,
}

/// Sinusoidal features of the scaled time values, (B, F).
pub fn time_feature_tensor(ts: &[f64], features: usize) -> Tensor {
    let half = features / 2;
    let mut data = Vec::with_capacity(ts.len() * features);
    for &t in ts {
        let tt = t * TIME_SCALE;
        for i in 0..half {
            let freq = (-(TIME_MAX_PERIOD.ln()) * i as f64 / half as f64).exp();
            data.push((tt * freq).cos());
        }
        for i in 0..half {
            let freq = (-(TIME_MAX_PERIOD.ln()) * i as f64 / half as f64).exp();
            data.push((tt * freq).sin());
        }
    }
    Tensor::new(vec![ts.len(), features], data).expect("feature buffer matches geometry")
}

/// y = x @ w + b on a 2-D `(rows, d_in)` input.
fn linear<'t>(x: &Var<'t>, w: &Var<'t>, b: &Var<'t>) -> crate::tensor::Result<Var<'t>> {
    let rows = x.shape()[0];
    let d_out = b.len();
    let h = x.matmul(w)?;
    let ones = x.tape().leaf(Tensor::ones(&[rows, 1]));
    h.add(&ones.matmul(&b.reshape(&[1, d_out])?)?)
}

/// Non-affine layer norm over the last axis of a 2-D input.
fn layer_norm<'t>(x: &Var<'t>) -> crate::tensor::Result<Var<'t>> {
    let shape = x.shape();
    let (rows, d) = (shape[0], shape[1]);
    let ones_row = x.tape().leaf(Tensor::ones(&[1, d]));
    let mu = x.mean_axis(1)?.reshape(&[rows, 1])?;
    let centered = x.sub(&mu.matmul(&ones_row)?)?;
    let inv_sd = x
        .var_axis(1)?
        .add_scalar(LN_EPS)?
        .sqrt()?
        .recip_positive()?
        .reshape(&[rows, 1])?;
    centered.mul(&inv_sd.matmul(&ones_row)?)
}

/// Tile a per-sample `(B, D)` vector across `s` tokens, giving `(B*s, D)`.
fn expand_tokens<'t>(v: &Var<'t>, s: usize) -> crate::tensor::Result<Var<'t>> {
    let shape = v.shape();
    let (b, d) = (shape[0], shape[1]);
    let ones = v.tape().leaf(Tensor::ones(&[b, s, 1]));
    ones.matmul(&v.reshape(&[b, 1, d])?)?.reshape(&[b * s, d])
}

fn modulate<'t>(
    x: &Var<'t>,
    scale: &Var<'t>,
    shift: &Var<'t>,
    s: usize,
) -> crate::tensor::Result<Var<'t>> {
    let scale1 = expand_tokens(scale, s)?.add_scalar(1.0)?;
    let shift_bc = expand_tokens(shift, s)?;
    x.mul(&scale1)?.add(&shift_bc)
}

struct Modulation<'t> {
    scale_attn: Var<'t>,
    shift_attn: Var<'t>,
    gate_attn: Option<Var<'t>>,
    scale_ff: Var<'t>,
    shift_ff: Var<'t>,
    gate_ff: Option<Var<'t>>,
}

/// The per-block conditioning head: cond -> (scale, shift[, gate]) for both
/// sub-layers.
fn modulation<'t>(
    cond: &Var<'t>,
    block: &BlockVars<'t>,
    gated: bool,
    d: usize,
) -> crate::tensor::Result<Modulation<'t>> {
    let b = cond.shape()[0];
    let out = linear(&cond.silu()?, &block.mod_w, &block.mod_b)?;
    let part = |i: usize| out.slice(&[(0, b), (i * d, d)]);
    if gated {
        Ok(Modulation {
            scale_attn: part(0)?,
            shift_attn: part(1)?,
            gate_attn: Some(part(2)?),
            scale_ff: part(3)?,
            shift_ff: part(4)?,
            gate_ff: Some(part(5)?),
        })
    } else {
        Ok(Modulation {
            scale_attn: part(0)?,
            shift_attn: part(1)?,
            gate_attn: None,
            scale_ff: part(2)?,
            shift_ff: part(3)?,
            gate_ff: None,
        })
    }
}

fn attention<'t>(
    y: &Var<'t>,
    block: &BlockVars<'t>,
    cfg: &JetConfig,
    b: usize,
    s: usize,
) -> crate::tensor::Result<Var<'t>> {
    let d = cfg.embed_dim;
    let h = cfg.heads;
    let dh = cfg.head_dim();
    let q = linear(y, &block.wq, &block.bq)?
        .reshape(&[b, s, h, dh])?
        .transpose(&[0, 2, 1, 3])?;
    let k = linear(y, &block.wk, &block.bk)?
        .reshape(&[b, s, h, dh])?
        .transpose(&[0, 2, 3, 1])?;
    let v = linear(y, &block.wv, &block.bv)?
        .reshape(&[b, s, h, dh])?
        .transpose(&[0, 2, 1, 3])?;
    let scores = q.matmul(&k)?.scalar_mul(1.0 / (dh as f64).sqrt())?;
    let weights = scores.softmax_last()?;
    let ctx = weights
        .matmul(&v)?
        .transpose(&[0, 2, 1, 3])?
        .reshape(&[b * s, d])?;
    linear(&ctx, &block.wo, &block.bo)
}

fn apply_gate<'t>(
    branch: &Var<'t>,
    gate: &Option<Var<'t>>,
    s: usize,
) -> crate::tensor::Result<Var<'t>> {
    match gate {
        Some(g) => branch.mul(&expand_tokens(g, s)?),
        None => Ok(*branch),
    }
}

/// Batched forward pass: `x_t` is (B, C, T), `ts` one time per sample,
/// `classes` one label per sample with `None` mapping to the null token.
/// Returns the predicted field as a (B, C, T) variable on `tape`.
pub fn forward_batch<'t>(
    tape: &'t Tape,
    vars: &JetVars<'t>,
    cfg: &JetConfig,
    x_t: &Tensor,
    ts: &[f64],
    classes: &[Option<usize>],
) -> Result<Var<'t>> {
    cfg.validate()?;
    let expect = [ts.len(), cfg.channels, cfg.samples];
    if x_t.shape() != expect {
        return Err(ModelError::Geometry(format!(
            "input shape {:?}, config expects {:?}",
            x_t.shape(),
            expect
        )));
    }
    if classes.len() != ts.len() {
        return Err(ModelError::Geometry(format!(
            "{} class labels for {} samples",
            classes.len(),
            ts.len()
        )));
    }
    for c in classes.iter().flatten() {
        if *c > cfg.num_classes {
            return Err(ModelError::Geometry(format!(
                "class id {c} out of range 0..={}",
                cfg.num_classes
            )));
        }
    }
    for &t in ts {
        if !(0.0..=1.0).contains(&t) {
            return Err(ModelError::Geometry(format!("time {t} outside [0, 1]")));
        }
    }

    let b = ts.len();
    let s = cfg.tokens();
    let d = cfg.embed_dim;
    let stage = |name: &str, r: crate::tensor::Result<Var<'t>>| -> Result<Var<'t>> {
        r.map_err(|e| match e {
            TensorError::NonFinite { .. } => ModelError::NonFiniteActivation { stage: name.into() },
            other => ModelError::Tensor(other),
        })
    };

    // Patch tokens, channel identity preserved: (B, C, T) -> (B*S, P).
    let tokens = stage(
        "embed",
        tape.leaf(x_t.clone()).reshape(&[b * s, cfg.patch_size]),
    )?;
    let mut h = stage("embed", {
        let embedded = linear(&tokens, &vars.embed_w, &vars.embed_b);
        embedded.and_then(|e| {
            // One positional vector per flat token, tiled over the batch.
            let ones_b = tape.leaf(Tensor::ones(&[b, 1]));
            let pos_rows = vars.pos.reshape(&[1, s * d])?;
            let pos_bc = ones_b.matmul(&pos_rows)?.reshape(&[b * s, d])?;
            e.add(&pos_bc)
        })
    })?;

    // Conditioning vector: time embedding MLP plus class embedding row.
    let cond = stage("conditioning", {
        (|| {
            let feats = tape.leaf(time_feature_tensor(ts, cfg.time_features));
            let t_emb = linear(
                &linear(&feats, &vars.time_w1, &vars.time_b1)?.silu()?,
                &vars.time_w2,
                &vars.time_b2,
            )?;
            let rows: Vec<Var<'t>> = classes
                .iter()
                .map(|c| {
                    let idx = c.unwrap_or(cfg.null_class());
                    vars.class_table.slice(&[(idx, 1), (0, d)])
                })
                .collect::<crate::tensor::Result<_>>()?;
            let class_emb = tape.concat(&rows, 0)?;
            t_emb.add(&class_emb)
        })()
    })?;

    for (i, block) in vars.blocks.iter().enumerate() {
        h = stage(&format!("block {i}"), {
            (|| {
                let m = modulation(&cond, block, cfg.gated, d)?;
                let normed = modulate(&layer_norm(&h)?, &m.scale_attn, &m.shift_attn, s)?;
                let attn = attention(&normed, block, cfg, b, s)?;
                let h1 = h.add(&apply_gate(&attn, &m.gate_attn, s)?)?;
                let normed2 = modulate(&layer_norm(&h1)?, &m.scale_ff, &m.shift_ff, s)?;
                let ff = linear(
                    &linear(&normed2, &block.ff_w1, &block.ff_b1)?.gelu()?,
                    &block.ff_w2,
                    &block.ff_b2,
                )?;
                h1.add(&apply_gate(&ff, &m.gate_ff, s)?)
            })()
        })?;
    }

    // Final norm, projection to patch space, unpatchify.
    stage("output head", {
        (|| {
            let out = linear(&layer_norm(&h)?, &vars.head_w, &vars.head_b)?;
            out.reshape(&[b, cfg.channels, cfg.samples])
        })()
    })
}

/// Single-segment forward pass; see [`forward_batch`].
pub fn forward<'t>(
    tape: &'t Tape,
    vars: &JetVars<'t>,
    cfg: &JetConfig,
    x_t: &Tensor,
    t: f64,
    class: Option<usize>,
) -> Result<Var<'t>> {
    let mut shape = vec![1];
    shape.extend_from_slice(x_t.shape());
    let batched = Tensor::new(shape, x_t.data().to_vec()).expect("same data");
    let v = forward_batch(tape, vars, cfg, &batched, &[t], &[class])?;
    Ok(v.reshape(&[cfg.channels, cfg.samples])?)
}

/// Tape-free single evaluation of the field; used by the ODE sampler.
pub fn eval_field(
    params: &JetParams,
    x_t: &Tensor,
    t: f64,
    class: Option<usize>,
) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = params.register(&tape, false);
    let v = forward(&tape, &vars, &params.config, x_t, t, class)?;
    Ok(v.value())
}

/// Batched tape-free evaluation for sampling whole batches per ODE step.
pub fn eval_field_batch(
    params: &JetParams,
    x_t: &Tensor,
    ts: &[f64],
    classes: &[Option<usize>],
) -> Result<Tensor> {
    let tape = Tape::new();
    let vars = params.register(&tape, false);
    let v = forward_batch(&tape, &vars, &params.config, x_t, ts, classes)?;
    Ok(v.value())
}
