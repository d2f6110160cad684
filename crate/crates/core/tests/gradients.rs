//! Back-propagated gradients against central finite differences in f64.

mod common;

use btunet::autodiff::{Graph, ParamStore};
use btunet::blocks::{
    hybrid_pool, AttentionGate, BatchNorm, ConvBnRelu, DepthwiseSeparableConv, InceptionBlock, InitRng,
    MultiScaleAttention, Pointwise, ResidualMiniskip,
};
use btunet::losses::{bce_loss, combined_loss, combined_loss_node, dice_loss, MaskPair};
use btunet::models::{build_model, ModelArchConfig, Variant};
use btunet::selfsup::{
    augment_pair, bt_loss_embeddings, siamese_loss, BTConfig, CorrelationMode, EmbeddingBatch, ProjectionHead,
};
use btunet::{Shape, Tensor};
use common::*;
use rand::{Rng, SeedableRng};

const TOL: f64 = 1e-6;

fn init_rng() -> InitRng {
    InitRng::seed_from_u64(11)
}

fn input(store: &mut ParamStore<f64>, name: &str, shape: Shape, seed: u64) {
    let mut r = rng(seed);
    with_input(store, name, random_tensor(shape, &mut r, 1.0));
}

#[test]
fn pointwise_and_separable_conv() {
    let mut s = ParamStore::new();
    input(&mut s, "x", Shape::new(2, 5, 4, 3), 1);
    let pw = Pointwise::new("pw", 3, 4);
    let sep = DepthwiseSeparableConv::new("sep", 4, 2, 3).unwrap();
    pw.declare(&mut s, &mut init_rng()).unwrap();
    sep.declare(&mut s, &mut init_rng()).unwrap();
    let c = check_param_grads(&s, true, 400, |g| {
        let x = g.param("x")?;
        let h = pw.forward(g, x)?;
        sep.forward(g, h)
    });
    assert!(c.rel_err < TOL, "rel err {}", c.rel_err);
}

#[test]
fn conv_bn_relu_training_and_eval() {
    let mut s = ParamStore::new();
    input(&mut s, "x", Shape::new(3, 4, 4, 2), 2);
    let unit = ConvBnRelu::separable("u", 2, 3, 3).unwrap();
    unit.declare(&mut s, &mut init_rng()).unwrap();
    for training in [true, false] {
        let c = check_param_grads(&s, training, 400, |g| {
            let x = g.param("x")?;
            unit.forward(g, x)
        });
        assert!(c.rel_err < TOL, "training={training}: rel err {}", c.rel_err);
    }
}

#[test]
fn batch_norm_gamma_beta_and_input() {
    let mut s = ParamStore::new();
    input(&mut s, "x", Shape::new(4, 2, 3, 3), 3);
    let bn = BatchNorm::new("bn", 3);
    bn.declare(&mut s).unwrap();
    s.get_mut("bn/gamma").unwrap().data_mut().copy_from_slice(&[0.5, 1.5, -1.0]);
    let c = check_param_grads(&s, true, 1000, |g| {
        let x = g.param("x")?;
        bn.forward(g, x)
    });
    assert!(c.rel_err < TOL, "rel err {}", c.rel_err);
}

#[test]
fn inception_block() {
    let mut s = ParamStore::new();
    input(&mut s, "x", Shape::new(2, 4, 4, 3), 4);
    let b = InceptionBlock::new("inc", 3, 8).unwrap();
    b.declare(&mut s, &mut init_rng()).unwrap();
    let c = check_param_grads(&s, true, 400, |g| {
        let x = g.param("x")?;
        b.forward(g, x)
    });
    assert!(c.rel_err < TOL, "rel err {}", c.rel_err);
}

#[test]
fn hybrid_pooling_input_gradient() {
    let mut s = ParamStore::new();
    input(&mut s, "x", Shape::new(2, 6, 4, 2), 5);
    let c = check_param_grads(&s, true, 1000, |g| {
        let x = g.param("x")?;
        hybrid_pool(g, x)
    });
    assert!(c.rel_err < TOL, "rel err {}", c.rel_err);
}

#[test]
fn attention_gate() {
    let mut s = ParamStore::new();
    input(&mut s, "skip", Shape::new(2, 4, 4, 4), 6);
    input(&mut s, "gate", Shape::new(2, 2, 2, 6), 7);
    let ag = AttentionGate::new("ag", 4, 6);
    ag.declare(&mut s, &mut init_rng()).unwrap();
    let c = check_param_grads(&s, true, 600, |g| {
        let (sk, gt) = (g.param("skip")?, g.param("gate")?);
        ag.forward(g, sk, gt)
    });
    assert!(c.rel_err < TOL, "rel err {}", c.rel_err);
}

#[test]
fn multi_scale_attention_both_paths() {
    // 8x8 uses a real quarter-scale branch; 2x2 takes the odd-size fallback.
    for (hw, ghw) in [(8, 4), (2, 1)] {
        let mut s = ParamStore::new();
        input(&mut s, "skip", Shape::new(2, hw, hw, 4), 8);
        input(&mut s, "gate", Shape::new(2, ghw, ghw, 6), 9);
        let msa = MultiScaleAttention::new("msa", 4, 6);
        msa.declare(&mut s, &mut init_rng()).unwrap();
        let c = check_param_grads(&s, true, 600, |g| {
            let (sk, gt) = (g.param("skip")?, g.param("gate")?);
            msa.forward(g, sk, gt)
        });
        assert!(c.rel_err < TOL, "{hw}x{hw}: rel err {}", c.rel_err);
    }
}

#[test]
fn residual_miniskip_with_projection() {
    let mut s = ParamStore::new();
    input(&mut s, "x", Shape::new(2, 3, 3, 2), 10);
    let unit = ConvBnRelu::separable("u", 2, 4, 3).unwrap();
    let skip = ResidualMiniskip::new("m", 2, 4);
    unit.declare(&mut s, &mut init_rng()).unwrap();
    skip.declare(&mut s, &mut init_rng()).unwrap();
    let c = check_param_grads(&s, true, 400, |g| {
        let x = g.param("x")?;
        let h = unit.forward(g, x)?;
        skip.forward(g, x, h)
    });
    assert!(c.rel_err < TOL, "rel err {}", c.rel_err);
}

#[test]
fn full_models_with_combined_loss() {
    let mut r = rng(12);
    let x = random_tensor(Shape::new(2, 16, 16, 1), &mut r, 1.0);
    let mask_data = (0..2 * 16 * 16).map(|_| if r.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
    let mask = Tensor::from_vec(Shape::new(2, 16, 16, 1), mask_data).unwrap();
    for variant in Variant::ALL {
        let arch = ModelArchConfig::new(variant, 16, 1, 3).with_base_channels(4);
        let model = build_model::<f64>(&arch).unwrap();
        let c = check_param_grads(&model.params, true, 150, |g| {
            let xv = g.input(x.clone());
            let logits = model.forward_graph(g, xv)?;
            combined_loss_node(g, logits, &mask)
        });
        assert!(c.rel_err < 1e-5, "{variant}: rel err {} over {} coords", c.rel_err, c.checked);
    }
}

#[test]
fn siamese_encoder_and_projection_head() {
    let arch = ModelArchConfig::new(Variant::Unet, 16, 1, 4).with_base_channels(4);
    let enc = btunet::models::build_encoder::<f64>(&arch).unwrap();
    let head = ProjectionHead::new(&arch, 2);
    let mut params = enc.params.clone();
    params.extend(head.init(5).unwrap()).unwrap();
    let mut r = rng(13);
    let x = random_tensor(Shape::new(4, 16, 16, 1), &mut r, 1.0);
    let pair = augment_pair(&x, &BTConfig::default(), 1).unwrap();
    let c = check_param_grads(&params, true, 200, |g| siamese_loss(g, &enc, &head, &pair, 0.2));
    assert!(c.rel_err < 1e-5, "rel err {}", c.rel_err);

    // One shared weight moves both embeddings.
    let embed = |p: &ParamStore<f64>, v: &Tensor<f64>| {
        let mut g = Graph::new(p, true);
        let xv = g.input(v.clone());
        let f = enc.forward_graph(&mut g, xv).unwrap().bottleneck;
        let z = head.forward(&mut g, f).unwrap();
        g.value(z).clone()
    };
    let mut bumped = params.clone();
    bumped.get_mut("encoder/stage0/conv1/conv/depthwise").unwrap().data_mut()[0] += 0.1;
    assert_ne!(embed(&params, &pair.view_a), embed(&bumped, &pair.view_a));
    assert_ne!(embed(&params, &pair.view_b), embed(&bumped, &pair.view_b));
}

fn probs_and_mask(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let p = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
    let y = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    (p, y)
}

#[test]
fn segmentation_losses() {
    for seed in 0..5 {
        let (p, y) = probs_and_mask(seed, 16);
        for (name, f) in [
            ("bce", bce_loss::<f64> as fn(&MaskPair<f64>) -> _),
            ("dice", dice_loss::<f64>),
            ("combined", combined_loss::<f64>),
        ] {
            let analytic = f(&MaskPair::new(&y, &p).unwrap()).grad;
            let numeric = numeric_grad(&p, 1e-6, |q| f(&MaskPair::new(&y, q).unwrap()).value);
            let e = normwise_rel_err(&analytic, &numeric);
            assert!(e < 1e-6, "{name} seed {seed}: {e}");
        }
    }
}

#[test]
fn barlow_twins_loss_wrt_embeddings() {
    for (seed, (n, d)) in [(2, 2), (3, 4), (4, 8), (4, 3)].into_iter().enumerate() {
        let mut r = rng(seed as u64 + 100);
        let za: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let zb: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        for mode in [CorrelationMode::Standardized, CorrelationMode::Raw] {
            let loss = |a: &[f64], b: &[f64]| {
                let ea = EmbeddingBatch::new(n, d, a.to_vec()).unwrap();
                let eb = EmbeddingBatch::new(n, d, b.to_vec()).unwrap();
                bt_loss_embeddings(&ea, &eb, 0.2, mode).unwrap()
            };
            let (_, ga, gb) = loss(&za, &zb);
            let na = numeric_grad(&za, 1e-6, |a| loss(a, &zb).0);
            let nb = numeric_grad(&zb, 1e-6, |b| loss(&za, b).0);
            let (analytic, numeric) = ([ga, gb].concat(), [na, nb].concat());
            if n == 2 && mode == CorrelationMode::Standardized {
                // Two standardized samples are always +-1, so the loss is locally flat.
                let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm(&analytic) < 1e-6 && norm(&numeric) < 1e-6, "{analytic:?} {numeric:?}");
                continue;
            }
            let e = normwise_rel_err(&analytic, &numeric);
            assert!(e < 1e-6, "n={n} d={d} {mode:?}: {e}");
        }
    }
}
