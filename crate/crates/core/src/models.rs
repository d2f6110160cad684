//! The four encoder-decoder segmentation variants and the encoder-only
//! sub-network used for pre-training and weight transfer.
//!
//! Every variant has four encoder stages of width `base * 2^i`, each made of
//! two conv units wrapped in a residual mini-skip and followed by 2x pooling,
//! then a bottleneck at width `base * 8`. The decoder mirrors the encoder
//! with nearest-neighbour upsampling + separable 3x3 conv, a (possibly
//! filtered) skip concatenation and two conv units. A 1x1 head emits one
//! logit channel.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Var};
use crate::blocks::{
    hybrid_pool, AttentionGate, ConvBnRelu, InceptionBlock, InitRng, MultiScaleAttention,
    Pointwise, ResidualMiniskip,
};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub const ENCODER_PREFIX: &str = "encoder/";
pub const STAGES: usize = 4;
pub const DEFAULT_BASE_CHANNELS: usize = 16;
pub const DEFAULT_INPUT_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "UNET")]
    Unet,
    #[serde(rename = "A_UNET")]
    AUnet,
    #[serde(rename = "I_UNET")]
    IUnet,
    #[serde(rename = "RCA_IUNET")]
    RcaIunet,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Unet, Variant::AUnet, Variant::IUnet, Variant::RcaIunet];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Unet => "UNET",
            Variant::AUnet => "A_UNET",
            Variant::IUnet => "I_UNET",
            Variant::RcaIunet => "RCA_IUNET",
        }
    }

    fn uses_inception(self) -> bool {
        matches!(self, Variant::IUnet | Variant::RcaIunet)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArchConfig {
    pub variant: Variant,
    pub input_size: usize,
    pub input_channels: usize,
    pub stages: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl ModelArchConfig {
    pub fn new(variant: Variant, input_size: usize, input_channels: usize, seed: u64) -> Self {
        ModelArchConfig {
            variant,
            input_size,
            input_channels,
            stages: STAGES,
            base_channels: DEFAULT_BASE_CHANNELS,
            seed,
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages != STAGES {
            return Err(Error::Config(format!(
                "stages must be {STAGES}, got {}",
                self.stages
            )));
        }
        let div = 1 << self.stages;
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of {div}",
                self.input_size
            )));
        }
        if self.input_channels == 0 {
            return Err(Error::Config("input_channels must be >= 1".into()));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if self.variant.uses_inception() && self.base_channels % InceptionBlock::BRANCHES != 0 {
            return Err(Error::Config(format!(
                "{} needs base_channels divisible by {}",
                self.variant,
                InceptionBlock::BRANCHES
            )));
        }
        Ok(())
    }

    /// Channel width of encoder stage `i`.
    pub fn stage_width(&self, i: usize) -> usize {
        self.base_channels << i
    }

    pub fn bottleneck_width(&self) -> usize {
        self.stage_width(self.stages - 1)
    }

    /// Spatial size of the bottleneck feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.stages
    }

    /// Architecture identity ignoring the seed.
    pub fn same_architecture(&self, other: &ModelArchConfig) -> bool {
        (
            self.variant,
            self.input_size,
            self.input_channels,
            self.stages,
            self.base_channels,
        ) == (
            other.variant,
            other.input_size,
            other.input_channels,
            other.stages,
            other.base_channels,
        )
    }
}

/// Conv unit flavour used by a variant.
#[derive(Clone, Debug)]
enum Unit {
    Plain(ConvBnRelu),
    Inception(InceptionBlock),
}

impl Unit {
    fn new(variant: Variant, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(if variant.uses_inception() {
            Unit::Inception(InceptionBlock::new(name, c_in, c_out)?)
        } else {
            Unit::Plain(ConvBnRelu::separable(name, c_in, c_out, 3)?)
        })
    }
    fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        match self {
            Unit::Plain(u) => u.declare(store, rng),
            Unit::Inception(u) => u.declare(store, rng),
        }
    }
    fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Unit::Plain(u) => u.forward(g, x),
            Unit::Inception(u) => u.forward(g, x),
        }
    }
}

#[derive(Clone, Debug)]
struct DoubleConv(Unit, Unit);

impl DoubleConv {
    fn new(variant: Variant, prefix: &str, c_in: usize, c_out: usize) -> Result<Self> {
        Ok(DoubleConv(
            Unit::new(variant, &format!("{prefix}/conv1"), c_in, c_out)?,
            Unit::new(variant, &format!("{prefix}/conv2"), c_out, c_out)?,
        ))
    }
    fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        self.0.declare(store, rng)?;
        self.1.declare(store, rng)
    }
    fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let h = self.0.forward(g, x)?;
        self.1.forward(g, h)
    }
}

#[derive(Clone, Debug)]
enum Pool {
    Max,
    Hybrid,
}

#[derive(Clone, Debug)]
struct EncoderStage {
    convs: DoubleConv,
    miniskip: ResidualMiniskip,
}

/// Structure of the encoder (stages + bottleneck). Parameter names carry the
/// `encoder/` prefix.
#[derive(Clone, Debug)]
pub struct EncoderLayout {
    stages: Vec<EncoderStage>,
    bottleneck: DoubleConv,
    pool: Pool,
}

/// Intermediate encoder activations.
pub struct EncoderOutput {
    /// Pre-pooling stage outputs, finest first (skip connections).
    pub skips: Vec<Var>,
    /// Post-pooling stage outputs, finest first.
    pub pooled: Vec<Var>,
    pub bottleneck: Var,
}

impl EncoderLayout {
    fn new(arch: &ModelArchConfig) -> Result<Self> {
        let v = arch.variant;
        let mut stages = Vec::with_capacity(arch.stages);
        let mut c_in = arch.input_channels;
        for i in 0..arch.stages {
            let w = arch.stage_width(i);
            let prefix = format!("{ENCODER_PREFIX}stage{i}");
            stages.push(EncoderStage {
                convs: DoubleConv::new(v, &prefix, c_in, w)?,
                miniskip: ResidualMiniskip::new(&format!("{prefix}/miniskip"), c_in, w),
            });
            c_in = w;
        }
        let bw = arch.bottleneck_width();
        Ok(EncoderLayout {
            stages,
            bottleneck: DoubleConv::new(v, &format!("{ENCODER_PREFIX}bottleneck"), c_in, bw)?,
            pool: if v.uses_inception() {
                Pool::Hybrid
            } else {
                Pool::Max
            },
        })
    }

    fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        for s in &self.stages {
            s.convs.declare(store, rng)?;
            s.miniskip.declare(store, rng)?;
        }
        self.bottleneck.declare(store, rng)
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<EncoderOutput> {
        let mut skips = Vec::with_capacity(self.stages.len());
        let mut pooled = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for s in &self.stages {
            let y = s.convs.forward(g, h)?;
            let y = s.miniskip.forward(g, h, y)?;
            skips.push(y);
            h = match self.pool {
                Pool::Max => g.tape.max_pool2(y)?,
                Pool::Hybrid => hybrid_pool(g, y)?,
            };
            pooled.push(h);
        }
        let bottleneck = self.bottleneck.forward(g, h)?;
        Ok(EncoderOutput {
            skips,
            pooled,
            bottleneck,
        })
    }
}

#[derive(Clone, Debug)]
enum SkipFilter {
    None,
    Gate(AttentionGate),
    MultiScale(MultiScaleAttention),
}

#[derive(Clone, Debug)]
struct DecoderStage {
    up: ConvBnRelu,
    filter: SkipFilter,
    convs: DoubleConv,
}

#[derive(Clone, Debug)]
struct DecoderLayout {
    /// Coarsest first (stage 3 down to stage 0).
    stages: Vec<DecoderStage>,
    head: Pointwise,
}

impl DecoderLayout {
    fn new(arch: &ModelArchConfig) -> Result<Self> {
        let v = arch.variant;
        let mut stages = Vec::with_capacity(arch.stages);
        let mut c_prev = arch.bottleneck_width();
        for i in (0..arch.stages).rev() {
            let w = arch.stage_width(i);
            let prefix = format!("decoder/stage{i}");
            let filter = match v {
                Variant::Unet | Variant::IUnet => SkipFilter::None,
                Variant::AUnet => {
                    SkipFilter::Gate(AttentionGate::new(&format!("{prefix}/attention"), w, c_prev))
                }
                Variant::RcaIunet => SkipFilter::MultiScale(MultiScaleAttention::new(
                    &format!("{prefix}/attention"),
                    w,
                    c_prev,
                )),
            };
            stages.push(DecoderStage {
                up: ConvBnRelu::separable(&format!("{prefix}/up"), c_prev, w, 3)?,
                filter,
                convs: DoubleConv::new(v, &prefix, 2 * w, w)?,
            });
            c_prev = w;
        }
        Ok(DecoderLayout {
            stages,
            head: Pointwise::new("head", arch.base_channels, 1),
        })
    }

    fn declare<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut InitRng) -> Result<()> {
        for s in &self.stages {
            s.up.declare(store, rng)?;
            match &s.filter {
                SkipFilter::None => {}
                SkipFilter::Gate(a) => a.declare(store, rng)?,
                SkipFilter::MultiScale(a) => a.declare(store, rng)?,
            }
            s.convs.declare(store, rng)?;
        }
        self.head.declare(store, rng)
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, enc: &EncoderOutput) -> Result<Var> {
        let mut d = enc.bottleneck;
        for (s, &skip) in self.stages.iter().zip(enc.skips.iter().rev()) {
            let up = g.tape.upsample2(d);
            let up = s.up.forward(g, up)?;
            let skip = match &s.filter {
                SkipFilter::None => skip,
                SkipFilter::Gate(a) => a.forward(g, skip, d)?,
                SkipFilter::MultiScale(a) => a.forward(g, skip, d)?,
            };
            let cat = g.tape.concat_channels(&[skip, up])?;
            d = s.convs.forward(g, cat)?;
        }
        self.head.forward(g, d)
    }
}

fn check_input<T: Real>(arch: &ModelArchConfig, x: &Tensor<T>) -> Result<()> {
    let s = x.shape();
    let want = Shape::new(s.n(), arch.input_size, arch.input_size, arch.input_channels);
    if s != want {
        return Err(Error::Shape(format!(
            "model expects (n,{},{},{}), got {s}",
            arch.input_size, arch.input_size, arch.input_channels
        )));
    }
    x.check_finite("model input")
}

/// Full encoder-decoder model with its parameters.
#[derive(Clone, Debug)]
pub struct SegmentationModel<T> {
    pub arch: ModelArchConfig,
    encoder: EncoderLayout,
    decoder: DecoderLayout,
    pub params: ParamStore<T>,
}

/// Builds and initialises a model. Encoder parameters are declared first from
/// the same seeded stream as [`build_encoder`], so both produce identical
/// encoder weights.
pub fn build_model<T: Real>(arch: &ModelArchConfig) -> Result<SegmentationModel<T>> {
    arch.validate()?;
    let encoder = EncoderLayout::new(arch)?;
    let decoder = DecoderLayout::new(arch)?;
    let mut rng = InitRng::seed_from_u64(arch.seed);
    let mut params = ParamStore::new();
    encoder.declare(&mut params, &mut rng)?;
    decoder.declare(&mut params, &mut rng)?;
    Ok(SegmentationModel {
        arch: *arch,
        encoder,
        decoder,
        params,
    })
}

/// Builds only the encoder (stages + bottleneck).
pub fn build_encoder<T: Real>(arch: &ModelArchConfig) -> Result<EncoderOnly<T>> {
    arch.validate()?;
    let layout = EncoderLayout::new(arch)?;
    let mut rng = InitRng::seed_from_u64(arch.seed);
    let mut params = ParamStore::new();
    layout.declare(&mut params, &mut rng)?;
    Ok(EncoderOnly {
        arch: *arch,
        layout,
        params,
    })
}

impl<T: Real> SegmentationModel<T> {
    /// Records the forward pass and returns the logits node `(n,s,s,1)`.
    pub fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        check_input(&self.arch, g.value(x))?;
        let enc = self.encoder.forward(g, x)?;
        self.decoder.forward(g, &enc)
    }

    /// Logits for a batch. Running statistics are not updated.
    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params, training);
        let xv = g.input(x.clone());
        let out = self.forward_graph(&mut g, xv)?;
        Ok(g.value(out).clone())
    }

    /// Bottleneck features computed through the model's encoder path.
    pub fn encode(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        check_input(&self.arch, x)?;
        let mut g = Graph::new(&self.params, training);
        let xv = g.input(x.clone());
        let enc = self.encoder.forward(&mut g, xv)?;
        Ok(g.value(enc.bottleneck).clone())
    }

    /// Encoder parameters (the `encoder/` subset).
    pub fn encoder_params(&self) -> ParamStore<T> {
        self.params.subset(ENCODER_PREFIX)
    }

    pub fn num_weights(&self) -> usize {
        self.params.num_weights()
    }
}

/// Encoder sub-network with names and shapes identical to the encoder subset
/// of the corresponding [`SegmentationModel`].
#[derive(Clone, Debug)]
pub struct EncoderOnly<T> {
    pub arch: ModelArchConfig,
    layout: EncoderLayout,
    pub params: ParamStore<T>,
}

impl<T: Real> EncoderOnly<T> {
    /// Wraps existing encoder parameters (e.g. loaded from a checkpoint).
    pub fn from_params(arch: &ModelArchConfig, params: ParamStore<T>) -> Result<Self> {
        let fresh = build_encoder::<T>(arch)?;
        let mismatched = diff_names_shapes(&fresh.params, &params);
        if !mismatched.is_empty() {
            return Err(Error::Transfer(format!(
                "encoder parameters do not match architecture: {}",
                mismatched.join(", ")
            )));
        }
        Ok(EncoderOnly {
            arch: *arch,
            layout: fresh.layout,
            params,
        })
    }

    pub fn forward_graph(&self, g: &mut Graph<T>, x: Var) -> Result<EncoderOutput> {
        check_input(&self.arch, g.value(x))?;
        self.layout.forward(g, x)
    }

    /// Bottleneck features `(n, s/16, s/16, 8*base)`.
    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let mut g = Graph::new(&self.params, training);
        let xv = g.input(x.clone());
        let out = self.forward_graph(&mut g, xv)?;
        Ok(g.value(out.bottleneck).clone())
    }

    /// Pooled output of every encoder stage, finest first.
    pub fn stage_outputs(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new(&self.params, false);
        let xv = g.input(x.clone());
        let out = self.forward_graph(&mut g, xv)?;
        Ok(out.pooled.iter().map(|&v| g.value(v).clone()).collect())
    }
}

/// Names whose presence or shape differs between two stores, in the order
/// they are encountered.
pub fn diff_names_shapes<T: Real>(expected: &ParamStore<T>, actual: &ParamStore<T>) -> Vec<String> {
    let mut out = Vec::new();
    for (name, e) in expected.iter() {
        match actual.get(name) {
            None => out.push(format!("{name} (missing)")),
            Some(t) if t.shape() != e.tensor.shape() => out.push(format!(
                "{name} (shape {} vs {})",
                t.shape(),
                e.tensor.shape()
            )),
            _ => {}
        }
    }
    for name in actual.names() {
        if !expected.contains(name) {
            out.push(format!("{name} (unexpected)"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(v: Variant, s: usize) -> ModelArchConfig {
        ModelArchConfig::new(v, s, 1, 3)
    }

    #[test]
    fn config_validation() {
        assert!(cfg(Variant::Unet, 64).validate().is_ok());
        assert!(cfg(Variant::Unet, 40).validate().is_err());
        let mut c = cfg(Variant::Unet, 64);
        c.stages = 5;
        assert!(c.validate().is_err());
        assert!(cfg(Variant::IUnet, 64).with_base_channels(6).validate().is_err());
        assert!(cfg(Variant::Unet, 64).with_base_channels(6).validate().is_ok());
    }

    #[test]
    fn unet_stage_schedule() {
        let enc = build_encoder::<f32>(&cfg(Variant::Unet, 64)).unwrap();
        let x = Tensor::zeros(Shape::new(1, 64, 64, 1));
        let outs = enc.stage_outputs(&x).unwrap();
        let shapes: Vec<Shape> = outs.iter().map(|t| t.shape()).collect();
        assert_eq!(
            shapes,
            vec![
                Shape::new(1, 32, 32, 16),
                Shape::new(1, 16, 16, 32),
                Shape::new(1, 8, 8, 64),
                Shape::new(1, 4, 4, 128)
            ]
        );
    }

    #[test]
    fn zero_head_outputs_bias() {
        let mut m = build_model::<f64>(&cfg(Variant::Unet, 16).with_base_channels(4)).unwrap();
        m.params.get_mut("head/w").unwrap().data_mut().fill(0.0);
        m.params.get_mut("head/b").unwrap().data_mut()[0] = 0.3;
        let x = Tensor::full(Shape::new(2, 16, 16, 1), 0.5);
        let y = m.forward(&x, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn rejects_wrong_input() {
        let m = build_model::<f32>(&cfg(Variant::Unet, 16).with_base_channels(4)).unwrap();
        let x = Tensor::zeros(Shape::new(1, 32, 32, 1));
        assert!(matches!(m.forward(&x, false), Err(Error::Shape(_))));
        let mut bad = Tensor::zeros(Shape::new(1, 16, 16, 1));
        bad.data_mut()[3] = f32::NAN;
        assert!(matches!(m.forward(&bad, false), Err(Error::NonFinite(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            let j = serde_json::to_string(&v).unwrap();
            assert_eq!(j, format!("\"{}\"", v.as_str()));
        }
    }
}
