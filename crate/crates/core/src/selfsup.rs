//! Barlow Twins pre-training of the encoder: two augmented views pass through
//! one shared encoder and a projection head, and the cross-correlation of the
//! two embedding batches is pushed toward the identity.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{apply_stat_updates, Graph, ParamStore, Var};
use crate::blocks::{BatchNorm, InitRng, Pointwise, BN_MOMENTUM};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{Checkpoint, Phase};
use crate::harness::optim::Adam;
use crate::harness::schedule::PlateauTracker;
use crate::harness::TrainConfig;
use crate::models::{EncoderOnly, ModelArchConfig, ENCODER_PREFIX};
use crate::tensor::{Real, Shape, Tensor};

pub const DEFAULT_LAMBDA: f64 = 0.2;
pub const PROJECTION_PREFIX: &str = "projection/";
/// Added to the variance when standardising embedding dimensions.
pub const STANDARDIZE_EPS: f64 = 1e-12;
/// Added to the norm product in the cross-correlation denominator.
pub const CORR_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BTConfig {
    pub lambda: f64,
    /// Range of the crop area as a fraction of the image area.
    pub crop_scale: [f64; 2],
    pub rotation_degrees: [f64; 2],
    pub batch_size: usize,
    pub epochs: usize,
    pub projection_blocks: usize,
    pub seed: u64,
}

impl Default for BTConfig {
    fn default() -> Self {
        BTConfig {
            lambda: DEFAULT_LAMBDA,
            crop_scale: [0.6, 1.0],
            rotation_degrees: [-30.0, 30.0],
            batch_size: 16,
            epochs: 100,
            projection_blocks: 2,
            seed: 0,
        }
    }
}

impl BTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        let [lo, hi] = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop_scale must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"));
        }
        let [rlo, rhi] = self.rotation_degrees;
        if !(rlo.is_finite() && rhi.is_finite() && rlo <= rhi) {
            return bad(format!("invalid rotation range [{rlo}, {rhi}]"));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "pre-training batch_size must be >= 2, got {}",
                self.batch_size
            ));
        }
        if self.epochs == 0 {
            return bad("pre-training epochs must be >= 1".into());
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Augmentation

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair<T> {
    pub view_a: Tensor<T>,
    pub view_b: Tensor<T>,
}

/// Maps a continuous pixel coordinate into `[0, len-1]` by reflecting about
/// the image border (`d c b a | a b c d`).
fn reflect(p: f64, len: usize) -> f64 {
    let l = len as f64;
    let period = 2.0 * l;
    let mut e = (p + 0.5).rem_euclid(period);
    if e > l {
        e = period - e;
    }
    (e - 0.5).clamp(0.0, l - 1.0)
}

/// Samples one random crop + rotation and applies it to image `idx` of
/// `batch`, writing into `out`.
fn distort<T: Real>(
    batch: &Tensor<T>,
    idx: usize,
    cfg: &BTConfig,
    rng: &mut ChaCha8Rng,
    out: &mut [T],
) -> Result<()> {
    let sh = batch.shape();
    let (h, w, c) = (sh.h(), sh.w(), sh.c());
    let [lo, hi] = cfg.crop_scale;
    let area = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let scale = area.sqrt();
    let (ch, cw) = (scale * h as f64, scale * w as f64);
    if ch < 1.0 || cw < 1.0 {
        return Err(Error::Config(format!(
            "crop of {ch:.3}x{cw:.3} pixels is smaller than one pixel"
        )));
    }
    let oy = if h as f64 > ch { rng.random_range(0.0..=(h as f64 - ch)) } else { 0.0 };
    let ox = if w as f64 > cw { rng.random_range(0.0..=(w as f64 - cw)) } else { 0.0 };
    let [rlo, rhi] = cfg.rotation_degrees;
    let deg = if rlo < rhi { rng.random_range(rlo..=rhi) } else { rlo };
    let (sin, cos) = deg.to_radians().sin_cos();
    let (sy, sx) = (ch / h as f64, cw / w as f64);
    let (hy, hx) = (h as f64 / 2.0, w as f64 / 2.0);

    let src = &batch.data()[idx * h * w * c..(idx + 1) * h * w * c];
    for y in 0..h {
        for x in 0..w {
            // Rotate the output grid about its centre, then map into the crop.
            let (dy, dx) = (y as f64 + 0.5 - hy, x as f64 + 0.5 - hx);
            let ry = sin * dx + cos * dy + hy;
            let rx = cos * dx - sin * dy + hx;
            let py = reflect(oy + ry * sy - 0.5, h);
            let px = reflect(ox + rx * sx - 0.5, w);
            let (y0, x0) = (py.floor() as usize, px.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (py - y0 as f64, px - x0 as f64);
            let o = (y * w + x) * c;
            for k in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + k].to_f64();
                let mut v = (1.0 - fy) * (1.0 - fx) * at(y0, x0);
                if fx > 0.0 {
                    v += (1.0 - fy) * fx * at(y0, x1);
                }
                if fy > 0.0 {
                    v += fy * (1.0 - fx) * at(y1, x0);
                    if fx > 0.0 {
                        v += fy * fx * at(y1, x1);
                    }
                }
                out[o + k] = T::from_f64(v);
            }
        }
    }
    Ok(())
}

/// Two independently distorted views of every image in `batch`. Image `i`
/// of view `v` draws from ChaCha stream `2i + v` of `seed`, so the result is
/// a pure function of `(batch, cfg, seed)`.
pub fn augment_pair<T: Real>(batch: &Tensor<T>, cfg: &BTConfig, seed: u64) -> Result<AugmentedPair<T>> {
    if batch.is_empty() {
        return Err(Error::Shape("cannot augment an empty batch".into()));
    }
    let sh = batch.shape();
    let per = sh.h() * sh.w() * sh.c();
    let mut views = [Tensor::zeros(sh), Tensor::zeros(sh)];
    for (v, view) in views.iter_mut().enumerate() {
        for (i, out) in view.data_mut().chunks_mut(per).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((2 * i + v) as u64);
            distort(batch, i, cfg, &mut rng, out)?;
        }
    }
    let [view_a, view_b] = views;
    Ok(AugmentedPair { view_a, view_b })
}

// ---------------------------------------------------------------------------
// Projection head

/// `GAP -> [FC(d) + ReLU + BN] x blocks -> FC(d)` with `d = s/2`.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    blocks: Vec<(Pointwise, BatchNorm)>,
    out: Pointwise,
    dim: usize,
}

impl ProjectionHead {
    pub fn new(arch: &ModelArchConfig, blocks: usize) -> Self {
        let dim = Self::embedding_dim(arch.input_size);
        let mut c_in = arch.bottleneck_width();
        let blocks = (0..blocks)
            .map(|i| {
                let fc = Pointwise::new(format!("{PROJECTION_PREFIX}fc{i}"), c_in, dim);
                c_in = dim;
                (fc, BatchNorm::new(format!("{PROJECTION_PREFIX}bn{i}"), dim))
            })
            .collect();
        ProjectionHead {
            blocks,
            out: Pointwise::new(format!("{PROJECTION_PREFIX}out"), c_in, dim),
            dim,
        }
    }

    pub fn embedding_dim(input_size: usize) -> usize {
        input_size / 2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fresh head parameters drawn from `seed`.
    pub fn init<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut rng = InitRng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (fc, bn) in &self.blocks {
            fc.declare(&mut store, &mut rng)?;
            bn.declare(&mut store)?;
        }
        self.out.declare(&mut store, &mut rng)?;
        Ok(store)
    }

    /// Records the head on `g`; returns embeddings of shape `(n,1,1,d)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, features: Var) -> Result<Var> {
        let n = g.shape(features).n();
        if n < 2 && g.training() {
            return Err(Error::Shape(format!(
                "projection head needs a batch of at least 2, got {n}"
            )));
        }
        let mut x = g.tape.global_avg_pool(features);
        for (fc, bn) in &self.blocks {
            x = fc.forward(g, x)?;
            x = g.tape.relu(x);
            x = bn.forward(g, x)?;
        }
        self.out.forward(g, x)
    }
}

/// A batch of embeddings `(n, d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    n: usize,
    d: usize,
    z: Vec<f64>,
}

impl EmbeddingBatch {
    pub fn new(n: usize, d: usize, z: Vec<f64>) -> Result<Self> {
        if n * d != z.len() || d == 0 {
            return Err(Error::Shape(format!(
                "{} values do not form a ({n}, {d}) embedding batch",
                z.len()
            )));
        }
        if n < 2 {
            return Err(Error::Shape(format!("embedding batch needs n >= 2, got {n}")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding batch contains NaN/inf".into()));
        }
        Ok(EmbeddingBatch { n, d, z })
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        Self::new(s.n(), s.h() * s.w() * s.c(), t.data().iter().map(|v| v.to_f64()).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.z
    }
}

/// Embeddings for a batch through a forward-only graph.
pub fn project<T: Real>(
    head: &ProjectionHead,
    head_params: &ParamStore<T>,
    features: &Tensor<T>,
    training: bool,
) -> Result<EmbeddingBatch> {
    let mut g = Graph::new(head_params, training);
    let f = g.input(features.clone());
    let z = head.forward(&mut g, f)?;
    EmbeddingBatch::from_tensor(g.value(z))
}

// ---------------------------------------------------------------------------
// Cross-correlation and loss

/// Whether embedding dimensions are standardised over the batch before the
/// normalised inner products are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrelationMode {
    Standardized,
    Raw,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossCorrMatrix {
    d: usize,
    c: Vec<f64>,
}

impl CrossCorrMatrix {
    pub fn new(d: usize, c: Vec<f64>) -> Result<Self> {
        if d == 0 || c.len() != d * d {
            return Err(Error::Shape(format!("{} entries do not form a {d}x{d} matrix", c.len())));
        }
        Ok(CrossCorrMatrix { d, c })
    }

    pub fn identity(d: usize) -> Self {
        let mut c = vec![0.0; d * d];
        for i in 0..d {
            c[i * d + i] = 1.0;
        }
        CrossCorrMatrix { d, c }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.d + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.c
    }
}

/// Per-column `(z - mean) / sqrt(var + eps)` over the batch, plus the
/// per-column `sqrt(var + eps)`.
fn standardize(z: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; n * d];
    let mut sig = vec![0.0; d];
    for j in 0..d {
        let mean = (0..n).map(|b| z[b * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|b| (z[b * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let s = (var + STANDARDIZE_EPS).sqrt();
        sig[j] = s;
        for b in 0..n {
            out[b * d + j] = (z[b * d + j] - mean) / s;
        }
    }
    (out, sig)
}

fn standardize_backward(g: &[f64], zhat: &[f64], sig: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for j in 0..d {
        let mg = (0..n).map(|b| g[b * d + j]).sum::<f64>() / n as f64;
        let mgz = (0..n).map(|b| g[b * d + j] * zhat[b * d + j]).sum::<f64>() / n as f64;
        for b in 0..n {
            out[b * d + j] = (g[b * d + j] - mg - zhat[b * d + j] * mgz) / sig[j];
        }
    }
    out
}

fn column_norms(z: &[f64], n: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| (0..n).map(|b| z[b * d + j].powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Intermediate state of one cross-correlation evaluation, kept for the
/// backward pass.
struct Correlation {
    n: usize,
    d: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    na: Vec<f64>,
    nb: Vec<f64>,
    /// Raw inner products `S_ij = sum_b a_bi b_bj`.
    s: Vec<f64>,
    c: Vec<f64>,
    std_a: Option<Vec<f64>>,
    std_b: Option<Vec<f64>>,
}

fn correlate(za: &EmbeddingBatch, zb: &EmbeddingBatch, mode: CorrelationMode) -> Result<Correlation> {
    if (za.n, za.d) != (zb.n, zb.d) {
        return Err(Error::Shape(format!(
            "embedding batches differ: ({}, {}) vs ({}, {})",
            za.n, za.d, zb.n, zb.d
        )));
    }
    let (n, d) = (za.n, za.d);
    let ((a, std_a), (b, std_b)) = match mode {
        CorrelationMode::Standardized => {
            let (a, sa) = standardize(&za.z, n, d);
            let (b, sb) = standardize(&zb.z, n, d);
            ((a, Some(sa)), (b, Some(sb)))
        }
        CorrelationMode::Raw => ((za.z.clone(), None), (zb.z.clone(), None)),
    };
    let na = column_norms(&a, n, d);
    let nb = column_norms(&b, n, d);
    let mut s = vec![0.0; d * d];
    for r in 0..n {
        let (ar, br) = (&a[r * d..(r + 1) * d], &b[r * d..(r + 1) * d]);
        for i in 0..d {
            let ai = ar[i];
            for (sij, &bj) in s[i * d..(i + 1) * d].iter_mut().zip(br) {
                *sij += ai * bj;
            }
        }
    }
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            c[i * d + j] = s[i * d + j] / (na[i] * nb[j] + CORR_EPS);
        }
    }
    Ok(Correlation {
        n,
        d,
        a,
        b,
        na,
        nb,
        s,
        c,
        std_a,
        std_b,
    })
}

impl Correlation {
    /// Gradients w.r.t. the original embeddings given `dL/dC`.
    fn backward(&self, gc: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (self.n, self.d);
        let mut ga = vec![0.0; n * d];
        let mut gb = vec![0.0; n * d];
        for i in 0..d {
            for j in 0..d {
                let g = gc[i * d + j];
                if g == 0.0 {
                    continue;
                }
                let den = self.na[i] * self.nb[j] + CORR_EPS;
                let sij = self.s[i * d + j];
                let ka = if self.na[i] > 0.0 {
                    sij * self.nb[j] / (self.na[i] * den * den)
                } else {
                    0.0
                };
                let kb = if self.nb[j] > 0.0 {
                    sij * self.na[i] / (self.nb[j] * den * den)
                } else {
                    0.0
                };
                for r in 0..n {
                    let (ai, bj) = (self.a[r * d + i], self.b[r * d + j]);
                    ga[r * d + i] += g * (bj / den - ka * ai);
                    gb[r * d + j] += g * (ai / den - kb * bj);
                }
            }
        }
        if let Some(sa) = &self.std_a {
            ga = standardize_backward(&ga, &self.a, sa, n, d);
        }
        if let Some(sb) = &self.std_b {
            gb = standardize_backward(&gb, &self.b, sb, n, d);
        }
        (ga, gb)
    }
}

/// Cross-correlation of two embedding batches after per-dimension batch
/// standardisation.
pub fn cross_correlation(za: &EmbeddingBatch, zb: &EmbeddingBatch) -> Result<CrossCorrMatrix> {
    cross_correlation_with(za, zb, CorrelationMode::Standardized)
}

pub fn cross_correlation_with(
    za: &EmbeddingBatch,
    zb: &EmbeddingBatch,
    mode: CorrelationMode,
) -> Result<CrossCorrMatrix> {
    let corr = correlate(za, zb, mode)?;
    CrossCorrMatrix::new(corr.d, corr.c)
}

/// `sum_i (1 - C_ii)^2 + lambda * sum_{i != j} C_ij^2`.
pub fn bt_loss(c: &CrossCorrMatrix, lambda: f64) -> Result<f64> {
    let (value, _) = bt_loss_grad(c, lambda)?;
    Ok(value)
}

/// Loss value and `dL/dC`.
pub fn bt_loss_grad(c: &CrossCorrMatrix, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let d = c.d;
    let mut value = 0.0;
    let mut grad = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let v = c.c[i * d + j];
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("C[{i},{j}] = {v}")));
            }
            if i == j {
                value += (1.0 - v).powi(2);
                grad[i * d + j] = -2.0 * (1.0 - v);
            } else {
                value += lambda * v * v;
                grad[i * d + j] = 2.0 * lambda * v;
            }
        }
    }
    Ok((value, grad))
}

/// Loss of `bt_loss(cross_correlation(za, zb))` and its gradients w.r.t.
/// both embedding batches.
pub fn bt_loss_embeddings(
    za: &EmbeddingBatch,
    zb: &EmbeddingBatch,
    lambda: f64,
    mode: CorrelationMode,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let corr = correlate(za, zb, mode)?;
    let (value, gc) = bt_loss_grad(&CrossCorrMatrix::new(corr.d, corr.c.clone())?, lambda)?;
    let (ga, gb) = corr.backward(&gc);
    Ok((value, ga, gb))
}

/// Records the Barlow Twins loss of two embedding nodes on the graph.
pub fn bt_loss_node<T: Real>(g: &mut Graph<T>, za: Var, zb: Var, lambda: f64) -> Result<Var> {
    let ea = EmbeddingBatch::from_tensor(g.value(za))?;
    let eb = EmbeddingBatch::from_tensor(g.value(zb))?;
    let (value, ga, gb) = bt_loss_embeddings(&ea, &eb, lambda, CorrelationMode::Standardized)?;
    let to_t = |v: Vec<f64>, s: Shape| Tensor::from_vec(s, v.into_iter().map(T::from_f64).collect());
    let ga = to_t(ga, g.shape(za))?;
    let gb = to_t(gb, g.shape(zb))?;
    Ok(g.tape.scalar_with_grads(T::from_f64(value), &[za, zb], vec![ga, gb]))
}

// ---------------------------------------------------------------------------
// Pre-training loop

/// Records the full siamese forward (both views through the same encoder and
/// head parameters) and returns the loss node.
pub fn siamese_loss<T: Real>(
    g: &mut Graph<T>,
    encoder: &EncoderOnly<T>,
    head: &ProjectionHead,
    pair: &AugmentedPair<T>,
    lambda: f64,
) -> Result<Var> {
    let embed = |g: &mut Graph<T>, x: &Tensor<T>| -> Result<Var> {
        let xv = g.input(x.clone());
        let f = encoder.forward_graph(g, xv)?.bottleneck;
        head.forward(g, f)
    };
    let za = embed(g, &pair.view_a)?;
    let zb = embed(g, &pair.view_b)?;
    bt_loss_node(g, za, zb, lambda)
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    /// Loss of every optimisation step, in order.
    pub step_losses: Vec<f64>,
    /// Mean step loss per epoch (the monitored quantity).
    pub epoch_losses: Vec<f64>,
    pub best_epoch: usize,
}

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b);
    rng.random()
}

/// Trains `encoder` (plus a fresh projection head) on unlabeled `images`
/// `(N,s,s,c)`. Epoch count and batch size come from `cfg`; the learning
/// rate, plateau decay and early stopping from `train_cfg`, monitoring the
/// mean training loss of each epoch. On return `encoder` holds the best
/// epoch's weights and the checkpoint contains only encoder tensors.
pub fn pretrain(
    encoder: &mut EncoderOnly<f32>,
    images: &Tensor<f32>,
    cfg: &BTConfig,
    train_cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    train_cfg.validate()?;
    let n = images.shape().n();
    if n < 2 {
        return Err(Error::Data(format!("pre-training needs at least 2 images, got {n}")));
    }
    let arch = encoder.arch;
    let head = ProjectionHead::new(&arch, cfg.projection_blocks);
    let mut params = encoder.params.clone();
    params.extend(head.init(derive_seed(cfg.seed, u64::MAX, 0))?)?;
    let batch = cfg.batch_size.min(n);

    let mut adam = Adam::new();
    let mut tracker = PlateauTracker::new(train_cfg);
    let mut best = params.clone();
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 1));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for (step, idx) in order.chunks(batch).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let x = images.select_batch(idx)?;
            let pair = augment_pair(&x, cfg, derive_seed(cfg.seed, epoch as u64, 2 + step as u64))?;
            // The graph binds weights from `params` by name; `encoder` only
            // supplies the layout.
            let (loss, grads, stats) = {
                let mut g = Graph::new(&params, true);
                let l = siamese_loss(&mut g, encoder, &head, &pair, cfg.lambda)?;
                let loss = g.value(l).data()[0].to_f64();
                (loss, g.param_grads(l)?, g.take_stat_updates())
            };
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "pre-training loss became {loss} at epoch {} step {step}",
                    epoch + 1
                )));
            }
            adam.step(&mut params, &grads, tracker.lr())?;
            apply_stat_updates(&mut params, &stats, BN_MOMENTUM)?;
            log::debug!("pretrain epoch {} step {step}: loss {loss:.6}", epoch + 1);
            step_losses.push(loss);
            sum += loss;
            count += 1;
        }
        let epoch_loss = sum / count.max(1) as f64;
        epoch_losses.push(epoch_loss);
        let obs = tracker.observe(epoch_loss);
        log::info!(
            "pretrain epoch {}: loss {epoch_loss:.6} lr {:.1e}",
            epoch + 1,
            obs.lr
        );
        if obs.improved {
            best = params.clone();
        }
        if obs.stop {
            break;
        }
    }
    let encoder_params = best.subset(ENCODER_PREFIX);
    *encoder = EncoderOnly::from_params(&arch, encoder_params.clone())?;
    Ok(PretrainOutcome {
        checkpoint: Checkpoint::new(Phase::Pretrain, cfg.seed, arch, encoder_params),
        step_losses,
        epoch_losses,
        best_epoch: tracker.best_epoch(),
    })
}
