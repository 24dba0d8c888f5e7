//! Transformer contracts: shapes, zero-init behavior, determinism,
//! permutation coherence, parameter census, and gradient correctness of
//! the full model.

use jet_core::config::Geometry;
use jet_core::model::{
    eval_field, forward, forward_batch, JetConfig, JetParams, ModelConfig, ModelError,
};
use jet_core::rng;
use jet_core::tensor::{as_loss_fn, grad_check, Tape, Tensor};

fn tiny_config() -> JetConfig {
    JetConfig {
        channels: 2,
        samples: 64,
        patch_size: 16,
        embed_dim: 16,
        depth: 2,
        heads: 2,
        ff_mult: 4,
        num_classes: 2,
        label_drop: 0.1,
        gated: true,
        time_features: 16,
    }
}

fn desk_config() -> JetConfig {
    JetConfig::new(Geometry::default(), ModelConfig::default(), 3)
}

#[test]
fn embed_shape_matches_desk_geometry() {
    // C=4, T=400, P=50, D=64 -> 32 x 64 token state, surfaced here through
    // the full forward output shape and the token count.
    let cfg = desk_config();
    assert_eq!(cfg.tokens(), 32);
    let mut r = rng::stream(1, 0);
    let params = JetParams::init(cfg, &mut r).unwrap();
    let x = Tensor::randn(&[cfg.channels, cfg.samples], &mut r);
    let tape = Tape::new();
    let vars = params.register(&tape, false);
    let v = forward(&tape, &vars, &cfg, &x, 0.5, Some(1)).unwrap();
    assert_eq!(v.shape(), vec![4, 400]);
}

#[test]
fn zero_output_head_gives_zero_field() {
    // adaLN-Zero initialization: the output head starts at zero, so the
    // initial field is identically zero for any input.
    let cfg = tiny_config();
    let mut r = rng::stream(2, 0);
    let params = JetParams::init(cfg, &mut r).unwrap();
    let x = Tensor::randn(&[cfg.channels, cfg.samples], &mut r);
    let v = eval_field(&params, &x, 0.3, Some(0)).unwrap();
    assert!(v.data().iter().all(|&u| u == 0.0));
}

#[test]
fn forward_is_deterministic() {
    let cfg = tiny_config();
    let mut r = rng::stream(3, 0);
    let mut params = JetParams::init(cfg, &mut r).unwrap();
    // break the zero head so the output is non-trivial
    params.head_w = Tensor::randn(&[cfg.embed_dim, cfg.patch_size], &mut r);
    let x = Tensor::randn(&[cfg.channels, cfg.samples], &mut r);
    let a = eval_field(&params, &x, 0.7, Some(1)).unwrap();
    let b = eval_field(&params, &x, 0.7, Some(1)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn null_class_and_explicit_null_token_agree() {
    let cfg = tiny_config();
    let mut r = rng::stream(4, 0);
    let mut params = JetParams::init(cfg, &mut r).unwrap();
    params.head_w = Tensor::randn(&[cfg.embed_dim, cfg.patch_size], &mut r);
    let x = Tensor::randn(&[cfg.channels, cfg.samples], &mut r);
    let a = eval_field(&params, &x, 0.4, None).unwrap();
    let b = eval_field(&params, &x, 0.4, Some(cfg.null_class())).unwrap();
    assert_eq!(a, b);
}

#[test]
fn geometry_and_class_bounds_are_rejected() {
    let cfg = tiny_config();
    let mut r = rng::stream(5, 0);
    let params = JetParams::init(cfg, &mut r).unwrap();
    let tape = Tape::new();
    let vars = params.register(&tape, false);
    let wrong = Tensor::zeros(&[1, 3, 64]);
    assert!(matches!(
        forward_batch(&tape, &vars, &cfg, &wrong, &[0.5], &[Some(0)]).unwrap_err(),
        ModelError::Geometry(_)
    ));
    let x = Tensor::zeros(&[1, 2, 64]);
    assert!(forward_batch(&tape, &vars, &cfg, &x, &[0.5], &[Some(7)]).is_err());
    assert!(forward_batch(&tape, &vars, &cfg, &x, &[1.5], &[Some(0)]).is_err());
}

#[test]
fn permutation_coherence_over_channels() {
    // Swapping two input channels while swapping their positional rows
    // permutes the output channels the same way.
    let cfg = tiny_config();
    let mut r = rng::stream(6, 0);
    let mut params = JetParams::init(cfg, &mut r).unwrap();
    params.head_w = Tensor::randn(&[cfg.embed_dim, cfg.patch_size], &mut r);
    let x = Tensor::randn(&[cfg.channels, cfg.samples], &mut r);
    let base = eval_field(&params, &x, 0.6, Some(1)).unwrap();

    let t = cfg.samples;
    let mut swapped = x.data().to_vec();
    let (a, b) = swapped.split_at_mut(t);
    a.swap_with_slice(&mut b[..t]);
    let x_swapped = Tensor::new(vec![2, t], swapped).unwrap();

    let n = cfg.patches_per_channel();
    let d = cfg.embed_dim;
    let mut pos = params.pos.data().to_vec();
    let (pa, pb) = pos.split_at_mut(n * d);
    pa.swap_with_slice(&mut pb[..n * d]);
    params.pos = Tensor::new(vec![cfg.tokens(), d], pos).unwrap();

    let out = eval_field(&params, &x_swapped, 0.6, Some(1)).unwrap();
    // un-permute the output channels and compare
    for c in 0..2 {
        let src = &out.data()[(1 - c) * t..(2 - c) * t];
        let dst = &base.data()[c * t..(c + 1) * t];
        for (u, v) in src.iter().zip(dst) {
            assert!(
                (u - v).abs() <= 1e-10 * v.abs().max(1.0),
                "channel {c}: {u} vs {v}"
            );
        }
    }
}

#[test]
fn count_params_formula_matches_enumeration() {
    for cfg in [tiny_config(), desk_config()] {
        let mut r = rng::stream(7, 0);
        let params = JetParams::init(cfg, &mut r).unwrap();
        assert_eq!(params.count(), cfg.count_params(), "{cfg:?}");
    }
}

#[test]
fn doubling_depth_adds_exactly_one_block_of_params() {
    let cfg = tiny_config();
    let deeper = JetConfig {
        depth: cfg.depth * 2,
        ..cfg
    };
    let single = JetConfig { depth: 1, ..cfg };
    let zero = JetConfig { depth: 2, ..cfg };
    let per_block = zero.count_params() - single.count_params();
    assert_eq!(
        deeper.count_params(),
        cfg.count_params() + cfg.depth * per_block
    );
}

#[test]
fn full_scale_census_lands_near_130m() {
    // Recorded full-scale configuration: D=768, 12 blocks, 12 heads, x4
    // feed-forward, 256 time features on 16x2000 @ 200 Hz with P=200.
    let cfg = JetConfig {
        channels: 16,
        samples: 2000,
        patch_size: 200,
        embed_dim: 768,
        depth: 12,
        heads: 12,
        ff_mult: 4,
        num_classes: 2,
        label_drop: 0.1,
        gated: true,
        time_features: 256,
    };
    let count = cfg.count_params() as f64;
    let target = 129.9e6;
    assert!(
        (count - target).abs() / target < 0.05,
        "census {count} vs {target}"
    );
}

#[test]
fn ungated_modulation_is_supported() {
    let cfg = JetConfig {
        gated: false,
        ..tiny_config()
    };
    let mut r = rng::stream(8, 0);
    let params = JetParams::init(cfg, &mut r).unwrap();
    assert_eq!(params.count(), cfg.count_params());
    let x = Tensor::randn(&[cfg.channels, cfg.samples], &mut r);
    eval_field(&params, &x, 0.2, Some(0)).unwrap();
}

#[test]
fn config_validation_rejects_bad_geometry() {
    let bad = JetConfig {
        embed_dim: 15,
        ..tiny_config()
    };
    assert!(bad.validate().is_err());
    let bad = JetConfig {
        patch_size: 17,
        ..tiny_config()
    };
    assert!(bad.validate().is_err());
    let bad = JetConfig {
        label_drop: 1.4,
        ..tiny_config()
    };
    assert!(bad.validate().is_err());
}

/// Gradients of a smooth functional of the field on a 2-block, D=16 model
/// against central finite differences at 64-bit.
#[test]
fn full_model_gradient_check() {
    let cfg = tiny_config();
    let mut r = rng::stream(9, 0);
    let mut params = JetParams::init(cfg, &mut r).unwrap();
    // Perturb the zero-initialized heads so every parameter participates.
    let scaled = |t: Tensor, s: f64| {
        Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * s).collect()).unwrap()
    };
    params.head_w = scaled(
        Tensor::randn(&[cfg.embed_dim, cfg.patch_size], &mut r),
        0.1,
    );
    for b in &mut params.blocks {
        b.mod_w = scaled(
            Tensor::randn(&[cfg.embed_dim, 6 * cfg.embed_dim], &mut r),
            0.1,
        );
    }
    let x = Tensor::randn(&[1, cfg.channels, cfg.samples], &mut r);

    let leaves: Vec<Tensor> = params.named().iter().map(|(_, t)| (*t).clone()).collect();
    let f = as_loss_fn(move |tape, vars| {
        RebuiltVars { vars }.forward(tape, cfg, &x)
    });
    let report = grad_check(&f, &leaves, 1e-5).unwrap();
    assert!(
        report.fraction_below(1e-4) >= 0.999,
        "fraction {} max {}",
        report.fraction_below(1e-4),
        report.max_rel_error
    );
}

/// Helper that reuses already-registered vars for the forward pass inside
/// grad_check closures (grad_check registers the leaves itself).
struct RebuiltVars<'s, 'a> {
    vars: &'s [jet_core::tensor::Var<'a>],
}

impl<'s, 'a> RebuiltVars<'s, 'a> {
    fn forward(
        &self,
        tape: &'a Tape,
        cfg: JetConfig,
        x: &Tensor,
    ) -> jet_core::tensor::Result<jet_core::tensor::Var<'a>> {
        let mut it = self.vars.iter().copied();
        let vars = jet_core::model::JetVars {
            embed_w: it.next().unwrap(),
            embed_b: it.next().unwrap(),
            pos: it.next().unwrap(),
            blocks: (0..cfg.depth)
                .map(|_| jet_core::model::BlockVars {
                    wq: it.next().unwrap(),
                    bq: it.next().unwrap(),
                    wk: it.next().unwrap(),
                    bk: it.next().unwrap(),
                    wv: it.next().unwrap(),
                    bv: it.next().unwrap(),
                    wo: it.next().unwrap(),
                    bo: it.next().unwrap(),
                    ff_w1: it.next().unwrap(),
                    ff_b1: it.next().unwrap(),
                    ff_w2: it.next().unwrap(),
                    ff_b2: it.next().unwrap(),
                    mod_w: it.next().unwrap(),
                    mod_b: it.next().unwrap(),
                })
                .collect(),
            time_w1: it.next().unwrap(),
            time_b1: it.next().unwrap(),
            time_w2: it.next().unwrap(),
            time_b2: it.next().unwrap(),
            class_table: it.next().unwrap(),
            head_w: it.next().unwrap(),
            head_b: it.next().unwrap(),
        };
        let v = forward_batch(tape, &vars, &cfg, x, &[0.35], &[Some(1)])
            .map_err(|e| match e {
                ModelError::Tensor(t) => t,
                other => jet_core::tensor::TensorError::Domain {
                    op: "forward",
                    what: other.to_string(),
                },
            })?;
        // a smooth scalar functional of the field
        v.gelu()?.mean_all()
    }
}
