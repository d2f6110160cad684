//! Network building blocks shared by every architecture variant.
//!
//! Each block is a small description (names + channel widths). `declare`
//! registers its tensors in a [`ParamStore`]; `forward` records it on a
//! [`Graph`]. Convolutions use 'same' padding and are followed by batch
//! normalisation and ReLU (conv -> BN -> ReLU).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamKind, ParamStore, StatUpdate, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// RNG used for weight initialisation.
pub type InitRng = ChaCha8Rng;

/// He-uniform fan-in initialisation: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
/// Samples are drawn in `f64` so every precision sees the same weights.
pub fn he_uniform<T: Real>(shape: Shape, fan_in: usize, rng: &mut InitRng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

fn weight<T: Real>(store: &mut ParamStore<T>, name: String, t: Tensor<T>) -> Result<()> {
    store.insert(name, t, ParamKind::Weight)
}

// ---------------------------------------------------------------------------

/// 1x1 convolution with optional bias. Also serves as a dense layer on
/// `(n,1,1,d)` inputs.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub bias: bool,
}

impl Pointwise {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        Pointwise {
            name: name.into(),
            c_in,
            c_out,
            bias: true,
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        weight(
            store,
            format!("{}/w", self.name),
            he_uniform(Shape::new(self.c_in, 1, 1, self.c_out), self.c_in, rng),
        )?;
        if self.bias {
            weight(
                store,
                format!("{}/b", self.name),
                Tensor::zeros(Shape::new(1, 1, 1, self.c_out)),
            )?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.c_in * self.c_out + if self.bias { self.c_out } else { 0 }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(&format!("{}/w", self.name))?;
        let b = if self.bias {
            Some(g.param(&format!("{}/b", self.name))?)
        } else {
            None
        };
        g.tape.pointwise(x, w, b)
    }
}

/// Depthwise `k x k` convolution followed by a pointwise channel mix.
/// Parameters: `k*k*c_in` (depthwise) + `c_in*c_out` (pointwise) + `c_out` bias.
#[derive(Clone, Debug)]
pub struct DepthwiseSeparableConv {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl DepthwiseSeparableConv {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size must be odd, got {kernel}")));
        }
        Ok(DepthwiseSeparableConv {
            name: name.into(),
            c_in,
            c_out,
            kernel,
        })
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        let k = self.kernel;
        weight(
            store,
            format!("{}/depthwise", self.name),
            he_uniform(Shape::new(1, k, k, self.c_in), k * k, rng),
        )?;
        weight(
            store,
            format!("{}/pointwise", self.name),
            he_uniform(Shape::new(self.c_in, 1, 1, self.c_out), self.c_in, rng),
        )?;
        weight(
            store,
            format!("{}/bias", self.name),
            Tensor::zeros(Shape::new(1, 1, 1, self.c_out)),
        )
    }

    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.c_in + self.c_in * self.c_out + self.c_out
    }

    /// Weights of a standard convolution with the same geometry (with bias).
    pub fn standard_conv_param_count(&self) -> usize {
        self.kernel * self.kernel * self.c_in * self.c_out + self.c_out
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let c = g.shape(x).c();
        if c != self.c_in {
            return Err(Error::Config(format!(
                "{}: input has {c} channels, block expects {}",
                self.name, self.c_in
            )));
        }
        let dw = g.param(&format!("{}/depthwise", self.name))?;
        let pw = g.param(&format!("{}/pointwise", self.name))?;
        let b = g.param(&format!("{}/bias", self.name))?;
        let h = g.tape.depthwise_conv(x, dw)?;
        g.tape.pointwise(h, pw, Some(b))
    }
}

/// Per-channel batch normalisation with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm {
            name: name.into(),
            channels,
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let s = Shape::new(1, 1, 1, self.channels);
        weight(store, format!("{}/gamma", self.name), Tensor::full(s, T::ONE))?;
        weight(store, format!("{}/beta", self.name), Tensor::zeros(s))?;
        store.insert(
            format!("{}/running_mean", self.name),
            Tensor::zeros(s),
            ParamKind::Buffer,
        )?;
        store.insert(
            format!("{}/running_var", self.name),
            Tensor::full(s, T::ONE),
            ParamKind::Buffer,
        )
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    /// Batch statistics in training mode (batch >= 2 required), running
    /// statistics otherwise.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let gamma = g.param(&format!("{}/gamma", self.name))?;
        let beta = g.param(&format!("{}/beta", self.name))?;
        if g.training() {
            let (v, mean, var) = g.tape.batch_norm_train(x, gamma, beta, BN_EPS)?;
            g.record_stats(StatUpdate {
                prefix: self.name.clone(),
                mean,
                var,
            });
            Ok(v)
        } else {
            let params = g.params();
            let rm = params.require(&format!("{}/running_mean", self.name))?;
            let rv = params.require(&format!("{}/running_var", self.name))?;
            Ok(g
                .tape
                .batch_norm_eval(x, gamma, beta, rm.data(), rv.data(), BN_EPS))
        }
    }
}

/// Convolution kinds used inside a conv unit.
#[derive(Clone, Debug)]
pub enum Conv {
    Separable(DepthwiseSeparableConv),
    Pointwise(Pointwise),
}

impl Conv {
    fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        match self {
            Conv::Separable(c) => c.declare(store, rng),
            Conv::Pointwise(c) => c.declare(store, rng),
        }
    }
    fn param_count(&self) -> usize {
        match self {
            Conv::Separable(c) => c.param_count(),
            Conv::Pointwise(c) => c.param_count(),
        }
    }
    fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Conv::Separable(c) => c.forward(g, x),
            Conv::Pointwise(c) => c.forward(g, x),
        }
    }
}

/// conv -> BN -> ReLU
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    /// Depthwise-separable 3x3 unit.
    pub fn separable(name: &str, c_in: usize, c_out: usize, kernel: usize) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv::Separable(DepthwiseSeparableConv::new(
                format!("{name}/conv"),
                c_in,
                c_out,
                kernel,
            )?),
            bn: BatchNorm::new(format!("{name}/bn"), c_out),
        })
    }

    pub fn pointwise(name: &str, c_in: usize, c_out: usize) -> Self {
        ConvBnRelu {
            conv: Conv::Pointwise(Pointwise::new(format!("{name}/conv"), c_in, c_out)),
            bn: BatchNorm::new(format!("{name}/bn"), c_out),
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        self.conv.declare(store, rng)?;
        self.bn.declare(store)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.conv.forward(g, x)?;
        let h = self.bn.forward(g, h)?;
        Ok(g.tape.relu(h))
    }
}

/// Multi-scale block: parallel 1x1, 3x3, 5x5 and pooled-1x1 branches of equal
/// width, concatenated along channels.
#[derive(Clone, Debug)]
pub struct InceptionBlock {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    branch1: ConvBnRelu,
    branch3: ConvBnRelu,
    branch5: ConvBnRelu,
    branch_pool: ConvBnRelu,
}

impl InceptionBlock {
    pub const BRANCHES: usize = 4;

    pub fn new(name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        if c_out % Self::BRANCHES != 0 || c_out == 0 {
            return Err(Error::Config(format!(
                "{name}: inception width {c_out} not divisible by {} branches",
                Self::BRANCHES
            )));
        }
        let q = c_out / Self::BRANCHES;
        Ok(InceptionBlock {
            name: name.to_string(),
            c_in,
            c_out,
            branch1: ConvBnRelu::pointwise(&format!("{name}/b1x1"), c_in, q),
            branch3: ConvBnRelu::separable(&format!("{name}/b3x3"), c_in, q, 3)?,
            branch5: ConvBnRelu::separable(&format!("{name}/b5x5"), c_in, q, 5)?,
            branch_pool: ConvBnRelu::pointwise(&format!("{name}/bpool"), c_in, q),
        })
    }

    pub fn branch_width(&self) -> usize {
        self.c_out / Self::BRANCHES
    }

    fn branches(&self) -> [&ConvBnRelu; 4] {
        [&self.branch1, &self.branch3, &self.branch5, &self.branch_pool]
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        self.branches()
            .into_iter()
            .try_for_each(|b| b.declare(store, rng))
    }

    pub fn param_count(&self) -> usize {
        self.branches().iter().map(|b| b.param_count()).sum()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let a = self.branch1.forward(g, x)?;
        let b = self.branch3.forward(g, x)?;
        let c = self.branch5.forward(g, x)?;
        let pooled = g.tape.max_pool3_same(x);
        let d = self.branch_pool.forward(g, pooled)?;
        g.tape.concat_channels(&[a, b, c, d])
    }
}

/// Average of 2x2 max pooling and spectral (DFT low-pass) pooling.
pub fn hybrid_pool<T: Real>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let m = g.tape.max_pool2(x)?;
    let s = g.tape.spectral_pool(x)?;
    g.tape.average(m, s)
}

/// Additive attention gate on a skip connection:
/// `alpha = sigmoid(psi(ReLU(W_s * skip_down + W_g * gate)))`, upsampled to
/// the skip resolution; output `skip * alpha`.
#[derive(Clone, Debug)]
pub struct AttentionGate {
    pub name: String,
    pub skip_channels: usize,
    pub gate_channels: usize,
    pub inter_channels: usize,
    theta: Pointwise,
    phi: Pointwise,
    psi: Pointwise,
}

impl AttentionGate {
    pub fn new(name: &str, skip_channels: usize, gate_channels: usize) -> Self {
        let inter = (skip_channels / 2).max(1);
        AttentionGate {
            name: name.to_string(),
            skip_channels,
            gate_channels,
            inter_channels: inter,
            theta: Pointwise::new(format!("{name}/theta"), skip_channels, inter),
            phi: Pointwise::new(format!("{name}/phi"), gate_channels, inter),
            psi: Pointwise::new(format!("{name}/psi"), inter, 1),
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        self.theta.declare(store, rng)?;
        self.phi.declare(store, rng)?;
        self.psi.declare(store, rng)
    }

    pub fn param_count(&self) -> usize {
        self.theta.param_count() + self.phi.param_count() + self.psi.param_count()
    }

    /// Attention map at skip resolution, shape `(n, h, w, 1)`.
    pub fn attention<T: Real>(&self, g: &mut Graph<T>, skip: Var, gate: Var) -> Result<Var> {
        check_gate_ratio(g, skip, gate)?;
        let down = g.tape.subsample2(skip)?;
        let ts = self.theta.forward(g, down)?;
        let tg = self.phi.forward(g, gate)?;
        let q = g.tape.add(ts, tg)?;
        let q = g.tape.relu(q);
        let psi = self.psi.forward(g, q)?;
        let alpha = g.tape.sigmoid(psi);
        Ok(g.tape.upsample2(alpha))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, skip: Var, gate: Var) -> Result<Var> {
        let alpha = self.attention(g, skip, gate)?;
        g.tape.mul_channel_map(skip, alpha)
    }
}

fn check_gate_ratio<T: Real>(g: &Graph<T>, skip: Var, gate: Var) -> Result<()> {
    let (s, t) = (g.shape(skip), g.shape(gate));
    if s.n() != t.n() || s.h() != 2 * t.h() || s.w() != 2 * t.w() {
        return Err(Error::Shape(format!(
            "attention: skip {s} must be twice the spatial size of gate {t}"
        )));
    }
    Ok(())
}

/// Multi-scale cross-spatial attention for skip connections. The skip is
/// hybrid-pooled to half and quarter resolution, each scale projected to a
/// common width and added to the projected gating signal; the resulting
/// sigmoid map gates the skip, and the gated skip is added back to the raw
/// skip: `out = skip + skip * alpha`.
///
/// When the half-resolution map has odd size, the quarter scale cannot be
/// pooled and the half-resolution map stands in for it.
#[derive(Clone, Debug)]
pub struct MultiScaleAttention {
    pub name: String,
    pub skip_channels: usize,
    pub gate_channels: usize,
    pub inter_channels: usize,
    theta_half: Pointwise,
    theta_quarter: Pointwise,
    phi: Pointwise,
    psi: Pointwise,
}

impl MultiScaleAttention {
    pub fn new(name: &str, skip_channels: usize, gate_channels: usize) -> Self {
        let inter = (skip_channels / 2).max(1);
        MultiScaleAttention {
            name: name.to_string(),
            skip_channels,
            gate_channels,
            inter_channels: inter,
            theta_half: Pointwise::new(format!("{name}/theta_half"), skip_channels, inter),
            theta_quarter: Pointwise::new(format!("{name}/theta_quarter"), skip_channels, inter),
            phi: Pointwise::new(format!("{name}/phi"), gate_channels, inter),
            psi: Pointwise::new(format!("{name}/psi"), inter, 1),
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        self.theta_half.declare(store, rng)?;
        self.theta_quarter.declare(store, rng)?;
        self.phi.declare(store, rng)?;
        self.psi.declare(store, rng)
    }

    pub fn param_count(&self) -> usize {
        self.theta_half.param_count()
            + self.theta_quarter.param_count()
            + self.phi.param_count()
            + self.psi.param_count()
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, skip: Var, gate: Var) -> Result<Var> {
        check_gate_ratio(g, skip, gate)?;
        let half = hybrid_pool(g, skip)?;
        let hs = g.shape(half);
        let quarter = if hs.h() % 2 == 0 && hs.w() % 2 == 0 {
            let q = hybrid_pool(g, half)?;
            g.tape.upsample2(q)
        } else {
            half
        };
        let a = self.theta_half.forward(g, half)?;
        let b = self.theta_quarter.forward(g, quarter)?;
        let c = self.phi.forward(g, gate)?;
        let s = g.tape.add(a, b)?;
        let s = g.tape.add(s, c)?;
        let s = g.tape.relu(s);
        let psi = self.psi.forward(g, s)?;
        let alpha = g.tape.sigmoid(psi);
        let alpha = g.tape.upsample2(alpha);
        let gated = g.tape.mul_channel_map(skip, alpha)?;
        g.tape.add(skip, gated)
    }
}

/// Residual mini-skip around an encoder stage: `out = block_out + project(block_in)`,
/// with a 1x1 projection when channel counts differ and identity otherwise.
#[derive(Clone, Debug)]
pub struct ResidualMiniskip {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    projection: Option<Pointwise>,
}

impl ResidualMiniskip {
    pub fn new(name: &str, c_in: usize, c_out: usize) -> Self {
        ResidualMiniskip {
            name: name.to_string(),
            c_in,
            c_out,
            projection: (c_in != c_out).then(|| Pointwise::new(format!("{name}/proj"), c_in, c_out)),
        }
    }

    pub fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        match &self.projection {
            Some(p) => p.declare(store, rng),
            None => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.projection.as_ref().map_or(0, |p| p.param_count())
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, block_in: Var, block_out: Var) -> Result<Var> {
        let (si, so) = (g.shape(block_in), g.shape(block_out));
        if si.with_c(1) != so.with_c(1) {
            return Err(Error::Shape(format!(
                "{}: spatial mismatch between {si} and {so}",
                self.name
            )));
        }
        let projected = match &self.projection {
            Some(p) => p.forward(g, block_in)?,
            None => block_in,
        };
        g.tape.add(block_out, projected)
    }
}
