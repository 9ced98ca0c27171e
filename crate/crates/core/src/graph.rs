//! TRU-Net topology: 1D-CNN encoder, FGRU block, TGRU block and 1D-TrCNN
//! decoder with mirrored skip connections, evaluated one frame at a time.
//!
//! Tensor naming schema (the contract between [`random_init`], the TRUW file
//! and [`Network::build`]):
//!
//! | tensor | shape |
//! |---|---|
//! | `pcen.{s,alpha,delta,r}` | `[F]` |
//! | `enc.1.conv.w` | `[5, 4, 64]` |
//! | `enc.L.pw.w` (L = 2..6) | `[1, Cin, Cout]` |
//! | `enc.L.dw.w` | `[k, C]` |
//! | `fgru.{fw,bw}.W` / `.U` | `[128, 192]` / `[64, 192]` |
//! | `fgru.{fw,bw}.b_ih` / `.b_hh` | `[192]` |
//! | `fgru.pw.w` | `[1, 128, 128]` |
//! | `tgru.cell.W` / `.U` | `[128, 384]` / `[128, 384]` |
//! | `tgru.cell.b_ih` / `.b_hh` | `[384]` |
//! | `tgru.pw.w` | `[1, 128, 64]` |
//! | `dec.L.proj.w` (L = 1..6) | `[1, Cin, 64]` |
//! | `dec.L.tconv.w` | `[k, 64, c]` |
//!
//! Every conv layer `X` also has `X.b` (`[Cout]`) and, in f32 stores,
//! `X.bn.{gamma,beta,mean,var}`. Quantized stores replace `X.w` with an i8
//! tensor, fold the batch norm into `X.w`/`X.b`, and add `qscale.X` (`[1]`),
//! the static scale of the layer's input activation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, PcenParams, FEATURE_CHANNELS};
use crate::nn::{
    conv1d_freq, fold_batch_norm, transposed_conv1d_freq, BatchNorm, ConvMode, GruCell,
    GruWeights, LayerSpec, StoredTensor, TensorData, Tensor, WeightStore,
};
use crate::quant::{
    qconv1d_freq, qtransposed_conv1d_freq, quantize_dynamic, transpose_kernel_layout,
    CalibrationStats, QGruWeights, QuantizedTensor,
};

pub const HEAD_CHANNELS: usize = 10;
const ENCODER_FREQS: [usize; 6] = [128, 128, 64, 64, 32, 16];
const DECODER_FREQS: [usize; 6] = [32, 64, 64, 128, 128, 256];

#[derive(Debug, Clone, PartialEq)]
pub struct TrunetConfig {
    pub encoder: [LayerSpec; 6],
    pub decoder: [LayerSpec; 6],
    pub fgru_hidden: usize,
    pub tgru_hidden: usize,
    pub input_channels: usize,
    pub freq_bins: usize,
    /// Include the FGRU block (disabled for the ablation variant).
    pub use_fgru: bool,
    /// Pointwise output width after the FGRU layer.
    pub fgru_channels: usize,
    /// Pointwise output width after the TGRU layer.
    pub tgru_channels: usize,
    /// Width of the decoder's concat-then-project pointwise convolutions.
    pub proj_channels: usize,
}

impl Default for TrunetConfig {
    fn default() -> Self {
        Self {
            encoder: [
                LayerSpec::new(5, 2, 64),
                LayerSpec::new(3, 1, 128),
                LayerSpec::new(5, 2, 128),
                LayerSpec::new(3, 1, 128),
                LayerSpec::new(5, 2, 128),
                LayerSpec::new(3, 2, 128),
            ],
            decoder: [
                LayerSpec::new(3, 2, 64),
                LayerSpec::new(5, 2, 64),
                LayerSpec::new(3, 1, 64),
                LayerSpec::new(5, 2, 64),
                LayerSpec::new(3, 1, 64),
                LayerSpec::new(5, 2, HEAD_CHANNELS),
            ],
            fgru_hidden: 64,
            tgru_hidden: 128,
            input_channels: FEATURE_CHANNELS,
            freq_bins: 256,
            use_fgru: true,
            fgru_channels: 128,
            tgru_channels: 64,
            proj_channels: 64,
        }
    }
}

impl TrunetConfig {
    /// Ablation variant without the FGRU block.
    pub fn without_fgru() -> Self {
        Self {
            use_fgru: false,
            ..Self::default()
        }
    }

    /// Default topology, with the FGRU block only if the store contains it.
    pub fn infer(store: &WeightStore) -> Result<Self> {
        Ok(Self {
            use_fgru: store.contains("fgru.fw.W"),
            ..Self::default()
        })
    }

    fn bottleneck_channels(&self) -> usize {
        self.encoder[5].channels
    }

    /// Check the frequency ladder and channel plumbing.
    pub fn validate(&self) -> Result<()> {
        let topo = |detail: String| Err(Error::InvalidArgument(format!("topology: {detail}")));
        if self.freq_bins != 256 {
            return topo(format!(
                "the encoder/decoder ladder requires 256 frequency bins, got {}",
                self.freq_bins
            ));
        }
        if self.input_channels != FEATURE_CHANNELS {
            return topo(format!("expected {FEATURE_CHANNELS} input channels"));
        }
        let mut f = self.freq_bins;
        for (i, l) in self.encoder.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.channels == 0 {
                return topo(format!("encoder layer {} has a zero field", i + 1));
            }
            f = f.div_ceil(l.stride);
            if f != ENCODER_FREQS[i] {
                return topo(format!(
                    "encoder layer {} yields {f} bins, expected {}",
                    i + 1,
                    ENCODER_FREQS[i]
                ));
            }
        }
        for (i, l) in self.decoder.iter().enumerate() {
            if l.kernel < l.stride || l.stride == 0 || l.channels == 0 {
                return topo(format!("decoder layer {} needs kernel >= stride > 0", i + 1));
            }
            f *= l.stride;
            if f != DECODER_FREQS[i] {
                return topo(format!(
                    "decoder layer {} yields {f} bins, expected {}",
                    i + 1,
                    DECODER_FREQS[i]
                ));
            }
            // the skip joined at the next block must match this resolution
            if i < 5 && ENCODER_FREQS[4 - i] != f {
                return topo(format!("decoder layer {} cannot join its skip", i + 2));
            }
        }
        if self.decoder[5].channels != HEAD_CHANNELS {
            return topo(format!("final decoder layer must emit {HEAD_CHANNELS} channels"));
        }
        if 2 * self.fgru_hidden != self.bottleneck_channels() && self.use_fgru {
            return topo("bidirectional FGRU width must equal the bottleneck width".into());
        }
        Ok(())
    }

    /// Conv and GRU layers in execution order.
    pub fn schema(&self) -> Schema {
        let mut convs = Vec::new();
        let mut grus = Vec::new();
        let e = &self.encoder;
        convs.push(ConvSpec::new("enc.1.conv", ConvKind::Standard, e[0].kernel, e[0].stride, self.input_channels, e[0].channels, true));
        for l in 1..6 {
            let cin = e[l - 1].channels;
            let c = e[l].channels;
            convs.push(ConvSpec::new(format!("enc.{}.pw", l + 1), ConvKind::Pointwise, 1, 1, cin, c, true));
            convs.push(ConvSpec::new(format!("enc.{}.dw", l + 1), ConvKind::Depthwise, e[l].kernel, e[l].stride, c, c, true));
        }
        let mut width = self.bottleneck_channels();
        if self.use_fgru {
            for dir in ["fw", "bw"] {
                grus.push(GruSpec {
                    name: format!("fgru.{dir}"),
                    input: width,
                    hidden: self.fgru_hidden,
                });
            }
            convs.push(ConvSpec::new("fgru.pw", ConvKind::Pointwise, 1, 1, 2 * self.fgru_hidden, self.fgru_channels, true));
            width = self.fgru_channels;
        }
        grus.push(GruSpec {
            name: "tgru.cell".into(),
            input: width,
            hidden: self.tgru_hidden,
        });
        convs.push(ConvSpec::new("tgru.pw", ConvKind::Pointwise, 1, 1, self.tgru_hidden, self.tgru_channels, true));
        let mut prev = self.tgru_channels;
        for (i, l) in self.decoder.iter().enumerate() {
            let skip = e[5 - i].channels;
            let n = i + 1;
            convs.push(ConvSpec::new(format!("dec.{n}.proj"), ConvKind::Pointwise, 1, 1, prev + skip, self.proj_channels, true));
            convs.push(ConvSpec::new(format!("dec.{n}.tconv"), ConvKind::Transposed, l.kernel, l.stride, self.proj_channels, l.channels, n != 6));
            prev = l.channels;
        }
        Schema { convs, grus }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Standard,
    Pointwise,
    Depthwise,
    Transposed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub kind: ConvKind,
    pub kernel: usize,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
    pub relu: bool,
}

impl ConvSpec {
    fn new(name: impl Into<String>, kind: ConvKind, kernel: usize, stride: usize, cin: usize, cout: usize, relu: bool) -> Self {
        Self {
            name: name.into(),
            kind,
            kernel,
            stride,
            cin,
            cout,
            relu,
        }
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            ConvKind::Depthwise => vec![self.kernel, self.cout],
            _ => vec![self.kernel, self.cin, self.cout],
        }
    }

    pub fn fan_in(&self) -> usize {
        match self.kind {
            ConvKind::Depthwise => self.kernel,
            _ => self.kernel * self.cin,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruSpec {
    pub name: String,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub convs: Vec<ConvSpec>,
    pub grus: Vec<GruSpec>,
}

const PCEN_NAMES: [&str; 4] = ["pcen.s", "pcen.alpha", "pcen.delta", "pcen.r"];

/// Deterministic uniform fan-in initialisation of the default topology.
pub fn random_init(seed: u64) -> WeightStore {
    random_init_with(&TrunetConfig::default(), seed).expect("default config is valid")
}

/// Deterministic initialisation: every weight and bias uniform in
/// `[-k, k]`, `k = 1/sqrt(fan_in)`; batch norms start as identity and PCEN at
/// its canonical defaults.
pub fn random_init_with(cfg: &TrunetConfig, seed: u64) -> Result<WeightStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    let mut uniform = |n: usize, fan_in: usize| -> Vec<f32> {
        let k = 1.0 / (fan_in as f32).sqrt();
        (0..n).map(|_| rng.random_range(-k..=k)).collect()
    };
    let f = cfg.freq_bins;
    let pcen = PcenParams::with_defaults(f);
    for (name, v) in PCEN_NAMES.iter().zip([&pcen.s, &pcen.alpha, &pcen.delta, &pcen.r]) {
        store.insert_f32(*name, &[f], v.iter().map(|&x| x as f32).collect())?;
    }
    let schema = cfg.schema();
    let insert_conv = |store: &mut WeightStore, c: &ConvSpec, uniform: &mut dyn FnMut(usize, usize) -> Vec<f32>| -> Result<()> {
        let shape = c.weight_shape();
        store.insert_f32(format!("{}.w", c.name), &shape, uniform(shape.iter().product(), c.fan_in()))?;
        store.insert_f32(format!("{}.b", c.name), &[c.cout], uniform(c.cout, c.fan_in()))?;
        let bn = BatchNorm::identity(c.cout);
        for (p, v) in [("gamma", bn.gamma), ("beta", bn.beta), ("mean", bn.mean), ("var", bn.var)] {
            store.insert_f32(format!("{}.bn.{p}", c.name), &[c.cout], v)?;
        }
        Ok(())
    };
    let insert_gru = |store: &mut WeightStore, g: &GruSpec, uniform: &mut dyn FnMut(usize, usize) -> Vec<f32>| -> Result<()> {
        let gates = 3 * g.hidden;
        store.insert_f32(format!("{}.W", g.name), &[g.input, gates], uniform(g.input * gates, g.input))?;
        store.insert_f32(format!("{}.U", g.name), &[g.hidden, gates], uniform(g.hidden * gates, g.hidden))?;
        store.insert_f32(format!("{}.b_ih", g.name), &[gates], uniform(gates, g.hidden))?;
        store.insert_f32(format!("{}.b_hh", g.name), &[gates], uniform(gates, g.hidden))?;
        Ok(())
    };
    // GRU tensors are written just before the pointwise conv of their block.
    for c in &schema.convs {
        let block = c.name.split('.').next().unwrap_or_default();
        if c.name.ends_with(".pw") && (block == "fgru" || block == "tgru") {
            for g in schema.grus.iter().filter(|g| g.name.starts_with(block)) {
                insert_gru(&mut store, g, &mut uniform)?;
            }
        }
        insert_conv(&mut store, c, &mut uniform)?;
    }
    Ok(store)
}

pub fn parameter_count(store: &WeightStore) -> usize {
    store.parameter_count()
}

#[derive(Debug, Clone)]
enum LayerWeight {
    F32(Tensor),
    /// `weight` is in the conv layout, or `Cin x (k*Cout)` for transposed convs.
    I8 { weight: QuantizedTensor, act_scale: f32 },
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    spec: ConvSpec,
    weight: LayerWeight,
    bias: Vec<f32>,
    bn: Option<BatchNorm>,
    bn_affine: Option<(Vec<f32>, Vec<f32>)>,
}

impl ConvLayer {
    fn load(spec: &ConvSpec, store: &WeightStore) -> Result<Self> {
        let wname = format!("{}.w", spec.name);
        let shape = spec.weight_shape();
        let stored = store.require(&wname)?;
        if stored.shape != shape {
            return Err(Error::BadTensor {
                name: wname,
                detail: format!("expected shape {shape:?}, found {:?}", stored.shape),
            });
        }
        let bias = store.f32_exact(&format!("{}.b", spec.name), &[spec.cout])?.to_vec();
        let weight = match &stored.data {
            TensorData::F32(v) => LayerWeight::F32(Tensor::new(shape, v.clone())?),
            TensorData::I8 { .. } => {
                let mut q = QuantizedTensor::from_stored(&wname, stored)?;
                if spec.kind == ConvKind::Transposed {
                    q.values = transpose_kernel_layout(&q.values, spec.kernel, spec.cin, spec.cout);
                    q.shape = vec![spec.cin, spec.kernel * spec.cout];
                }
                let sname = format!("qscale.{}", spec.name);
                let act_scale = store.f32_exact(&sname, &[1])?[0];
                if !(act_scale > 0.0 && act_scale.is_finite()) {
                    return Err(Error::BadTensor {
                        name: sname,
                        detail: "activation scale must be positive".into(),
                    });
                }
                LayerWeight::I8 { weight: q, act_scale }
            }
        };
        let bn_name = |p: &str| format!("{}.bn.{p}", spec.name);
        let bn = if matches!(weight, LayerWeight::I8 { .. }) && !store.contains(&bn_name("gamma")) {
            None
        } else {
            let get = |p: &str| store.f32_exact(&bn_name(p), &[spec.cout]).map(<[f32]>::to_vec);
            let bn = BatchNorm {
                gamma: get("gamma")?,
                beta: get("beta")?,
                mean: get("mean")?,
                var: get("var")?,
            };
            if bn.var.iter().any(|&v| v < 0.0) {
                return Err(Error::BadTensor {
                    name: bn_name("var"),
                    detail: "negative variance".into(),
                });
            }
            Some(bn)
        };
        let bn_affine = bn.as_ref().map(BatchNorm::affine);
        Ok(Self {
            spec: spec.clone(),
            weight,
            bias,
            bn,
            bn_affine,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = &self.spec;
        let mode = match s.kind {
            ConvKind::Standard => ConvMode::Standard,
            ConvKind::Pointwise => ConvMode::Pointwise,
            ConvKind::Depthwise | ConvKind::Transposed => ConvMode::Depthwise,
        };
        let mut y = match (&self.weight, s.kind) {
            (LayerWeight::F32(w), ConvKind::Transposed) => transposed_conv1d_freq(x, w, &self.bias, s.stride, &s.name)?,
            (LayerWeight::F32(w), _) => conv1d_freq(x, w, &self.bias, s.stride, mode, &s.name)?,
            (LayerWeight::I8 { weight, act_scale }, ConvKind::Transposed) => {
                qtransposed_conv1d_freq(x, *act_scale, weight, s.kernel, &self.bias, s.stride)?
            }
            (LayerWeight::I8 { weight, act_scale }, _) => {
                qconv1d_freq(x, *act_scale, weight, &self.bias, s.stride, mode)?
            }
        };
        let c = s.cout;
        if let Some((scale, shift)) = &self.bn_affine {
            for row in y.data_mut().chunks_exact_mut(c) {
                for ((v, a), b) in row.iter_mut().zip(scale).zip(shift) {
                    *v = *v * a + b;
                }
            }
        }
        if s.relu {
            for v in y.data_mut() {
                *v = v.max(0.0);
            }
        }
        Ok(y)
    }

    /// BN-folded, per-tensor quantized copy of this layer's tensors.
    fn quantized_tensors(&self, act_scale: f32) -> Result<Vec<(String, StoredTensor)>> {
        let LayerWeight::F32(w) = &self.weight else {
            return Err(Error::AlreadyQuantized);
        };
        let (w, b) = match &self.bn {
            Some(bn) => fold_batch_norm(w, &self.bias, bn)?,
            None => (w.clone(), self.bias.clone()),
        };
        let name = &self.spec.name;
        let q = quantize_dynamic(&w);
        Ok(vec![
            (format!("{name}.w"), q.to_stored()),
            (format!("{name}.b"), StoredTensor::f32(vec![b.len()], b)),
            (format!("qscale.{name}"), StoredTensor::f32(vec![1], vec![act_scale])),
        ])
    }
}

#[derive(Debug, Clone)]
enum GruLayer {
    F32(GruWeights),
    I8(QGruWeights),
}

impl GruLayer {
    fn load(spec: &GruSpec, store: &WeightStore) -> Result<Self> {
        let g = 3 * spec.hidden;
        let wname = format!("{}.W", spec.name);
        let uname = format!("{}.U", spec.name);
        let b_input = store.f32_exact(&format!("{}.b_ih", spec.name), &[g])?.to_vec();
        let b_hidden = store.f32_exact(&format!("{}.b_hh", spec.name), &[g])?.to_vec();
        let w = store.require(&wname)?;
        let check = |name: &str, t: &StoredTensor, shape: [usize; 2]| {
            if t.shape != shape {
                Err(Error::BadTensor {
                    name: name.to_string(),
                    detail: format!("expected shape {shape:?}, found {:?}", t.shape),
                })
            } else {
                Ok(())
            }
        };
        check(&wname, w, [spec.input, g])?;
        let u = store.require(&uname)?;
        check(&uname, u, [spec.hidden, g])?;
        Ok(match (&w.data, &u.data) {
            (TensorData::F32(wv), TensorData::F32(uv)) => GruLayer::F32(GruWeights {
                input_size: spec.input,
                hidden_size: spec.hidden,
                w: wv.clone(),
                u: uv.clone(),
                b_input,
                b_hidden,
            }),
            (TensorData::I8 { .. }, TensorData::I8 { .. }) => GruLayer::I8(QGruWeights {
                input_size: spec.input,
                hidden_size: spec.hidden,
                w: QuantizedTensor::from_stored(&wname, w)?,
                u: QuantizedTensor::from_stored(&uname, u)?,
                b_input,
                b_hidden,
            }),
            _ => {
                return Err(Error::BadTensor {
                    name: wname,
                    detail: "W and U must share a dtype".into(),
                })
            }
        })
    }

    fn cell(&self) -> &dyn GruCell {
        match self {
            GruLayer::F32(c) => c,
            GruLayer::I8(c) => c,
        }
    }
}

impl GruCell for GruLayer {
    fn input_size(&self) -> usize {
        self.cell().input_size()
    }

    fn hidden_size(&self) -> usize {
        self.cell().hidden_size()
    }

    fn step(&self, x: &[f32], h: &[f32]) -> Vec<f32> {
        self.cell().step(x, h)
    }
}

/// Per-stream TGRU hidden state, one vector per bottleneck frequency index.
#[derive(Debug, Clone, PartialEq)]
pub struct TgruState {
    pub h: Vec<f32>,
    pub freqs: usize,
    pub hidden: usize,
}

impl TgruState {
    pub fn zeros(freqs: usize, hidden: usize) -> Self {
        Self {
            h: vec![0.0; freqs * hidden],
            freqs,
            hidden,
        }
    }
}

/// Raw head outputs of one frame, `F x 10`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub heads: Vec<f32>,
}

pub type Observer<'a> = &'a mut dyn FnMut(&str, &Tensor);

/// Validated, immutable network. Share it across streams; each stream owns
/// its [`TgruState`].
#[derive(Debug, Clone)]
pub struct Network {
    config: TrunetConfig,
    pcen: PcenParams,
    convs: Vec<ConvLayer>,
    fgru: Option<(GruLayer, GruLayer)>,
    tgru: GruLayer,
    quantized: bool,
}

impl Network {
    pub fn build(config: TrunetConfig, store: &WeightStore) -> Result<Self> {
        config.validate()?;
        let schema = config.schema();
        let f = config.freq_bins;
        let mut pv = Vec::with_capacity(4);
        for name in PCEN_NAMES {
            pv.push(store.f32_exact(name, &[f])?.iter().map(|&x| x as f64).collect::<Vec<_>>());
        }
        let mut pv = pv.into_iter();
        let mut next = || pv.next().expect("four pcen tensors");
        let pcen = PcenParams {
            s: next(),
            alpha: next(),
            delta: next(),
            r: next(),
            eps: PcenParams::DEFAULT_EPS,
        };
        pcen.validate()?;
        let convs = schema
            .convs
            .iter()
            .map(|c| ConvLayer::load(c, store))
            .collect::<Result<Vec<_>>>()?;
        let mut grus = schema
            .grus
            .iter()
            .map(|g| GruLayer::load(g, store))
            .collect::<Result<Vec<_>>>()?;
        let tgru = grus.pop().expect("tgru cell");
        let fgru = if config.use_fgru {
            let bw = grus.pop().expect("fgru backward");
            let fw = grus.pop().expect("fgru forward");
            Some((fw, bw))
        } else {
            None
        };
        let quantized = convs.iter().any(|c| matches!(c.weight, LayerWeight::I8 { .. }));
        Ok(Self {
            config,
            pcen,
            convs,
            fgru,
            tgru,
            quantized,
        })
    }

    /// Build from a store, inferring whether the FGRU block is present.
    pub fn from_store(store: &WeightStore) -> Result<Self> {
        Self::build(TrunetConfig::infer(store)?, store)
    }

    pub fn config(&self) -> &TrunetConfig {
        &self.config
    }

    pub fn pcen(&self) -> &PcenParams {
        &self.pcen
    }

    pub fn is_quantized(&self) -> bool {
        self.quantized
    }

    pub fn stft_config(&self) -> StftConfig {
        StftConfig::default()
    }

    pub fn conv_layers(&self) -> &[ConvLayer] {
        &self.convs
    }

    pub fn new_tgru_state(&self) -> TgruState {
        TgruState::zeros(ENCODER_FREQS[5], self.config.tgru_hidden)
    }

    fn layer(&self, name: &str) -> &ConvLayer {
        self.convs
            .iter()
            .find(|c| c.spec.name == name)
            .expect("layer exists by construction")
    }

    fn apply(&self, name: &str, x: &Tensor, obs: &mut Option<Observer<'_>>) -> Result<Tensor> {
        if let Some(o) = obs.as_mut() {
            o(name, x);
        }
        self.layer(name).forward(x)
    }

    /// Encoder: returns the bottleneck and the six block outputs (skips).
    pub fn encode_frame(&self, features: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.encode(features, &mut None)
    }

    fn encode(&self, features: &Tensor, obs: &mut Option<Observer<'_>>) -> Result<(Tensor, Vec<Tensor>)> {
        let want = [self.config.freq_bins, self.config.input_channels];
        if features.shape() != want {
            return Err(Error::shape("encoder input", format!("{:?} vs {want:?}", features.shape())));
        }
        let mut skips = Vec::with_capacity(6);
        let mut x = self.apply("enc.1.conv", features, obs)?;
        skips.push(x.clone());
        for l in 2..=6 {
            x = self.apply(&format!("enc.{l}.pw"), &x, obs)?;
            x = self.apply(&format!("enc.{l}.dw"), &x, obs)?;
            skips.push(x.clone());
        }
        Ok((x, skips))
    }

    /// Bidirectional GRU along frequency, then pointwise + BN + ReLU.
    /// Identity when the network was built without the FGRU block.
    pub fn fgru_block(&self, x: &Tensor) -> Result<Tensor> {
        self.fgru(x, &mut None)
    }

    fn fgru(&self, x: &Tensor, obs: &mut Option<Observer<'_>>) -> Result<Tensor> {
        match &self.fgru {
            Some((fw, bw)) => {
                let y = crate::nn::bigru_sequence(x, fw, bw)?;
                self.apply("fgru.pw", &y, obs)
            }
            None => Ok(x.clone()),
        }
    }

    /// One TGRU step per frequency index with the shared cell, then
    /// pointwise + BN + ReLU. Updates `state` in place.
    pub fn tgru_block(&self, x: &Tensor, state: &mut TgruState) -> Result<Tensor> {
        self.tgru(x, state, &mut None)
    }

    fn tgru(&self, x: &Tensor, state: &mut TgruState, obs: &mut Option<Observer<'_>>) -> Result<Tensor> {
        let hidden = self.config.tgru_hidden;
        if state.h.len() != x.rows() * hidden {
            return Err(Error::shape("tgru", format!("state holds {} values", state.h.len())));
        }
        let mut out = vec![0.0f32; x.rows() * hidden];
        for i in 0..x.rows() {
            let h = &state.h[i * hidden..(i + 1) * hidden];
            let next = self.tgru.step(x.row(i), h);
            out[i * hidden..(i + 1) * hidden].copy_from_slice(&next);
        }
        state.h.copy_from_slice(&out);
        let y = Tensor::from_rows(x.rows(), hidden, out)?;
        self.apply("tgru.pw", &y, obs)
    }

    /// Decoder: concat with the mirrored skip, project, upsample.
    pub fn decode_frame(&self, x: &Tensor, skips: &[Tensor]) -> Result<FrameOutput> {
        self.decode(x, skips, &mut None)
    }

    fn decode(&self, x: &Tensor, skips: &[Tensor], obs: &mut Option<Observer<'_>>) -> Result<FrameOutput> {
        if skips.len() != 6 {
            return Err(Error::shape("decoder", format!("{} skips, expected 6", skips.len())));
        }
        let mut x = x.clone();
        for n in 1..=6 {
            let cat = Tensor::concat_channels(&x, &skips[6 - n])?;
            let p = self.apply(&format!("dec.{n}.proj"), &cat, obs)?;
            x = self.apply(&format!("dec.{n}.tconv"), &p, obs)?;
        }
        Ok(FrameOutput {
            heads: x.into_data(),
        })
    }

    /// Full per-frame pass. Only `state` carries information across frames.
    pub fn forward_frame(&self, features: &[f32], state: &mut TgruState) -> Result<FrameOutput> {
        self.run(features, state, &mut None)
    }

    /// As [`forward_frame`](Self::forward_frame), reporting every conv
    /// layer's input to `observer` first.
    pub fn forward_frame_observed(
        &self,
        features: &[f32],
        state: &mut TgruState,
        observer: &mut dyn FnMut(&str, &Tensor),
    ) -> Result<FrameOutput> {
        self.run(features, state, &mut Some(observer))
    }

    fn run(&self, features: &[f32], state: &mut TgruState, obs: &mut Option<Observer<'_>>) -> Result<FrameOutput> {
        let x = Tensor::from_rows(self.config.freq_bins, self.config.input_channels, features.to_vec())
            .map_err(|_| Error::shape("forward_frame", format!("{} feature values", features.len())))?;
        let (bottleneck, skips) = self.encode(&x, obs)?;
        let y = self.fgru(&bottleneck, obs)?;
        let y = self.tgru(&y, state, obs)?;
        self.decode(&y, &skips, obs)
    }

    /// All frames from a zero state; returns `T x F x 10` heads.
    pub fn forward_offline(&self, features: &FeatureTensor) -> Result<Vec<f32>> {
        let mut state = self.new_tgru_state();
        let mut out = Vec::with_capacity(features.frames * features.bins * HEAD_CHANNELS);
        for t in 0..features.frames {
            out.extend(self.forward_frame(features.frame(t), &mut state)?.heads);
        }
        Ok(out)
    }

    /// INT8 store for this f32 network given calibrated activation scales.
    pub fn quantized_store(&self, stats: &CalibrationStats) -> Result<WeightStore> {
        if self.quantized {
            return Err(Error::AlreadyQuantized);
        }
        let mut store = WeightStore::new();
        let f = self.config.freq_bins;
        for (name, v) in PCEN_NAMES.iter().zip([&self.pcen.s, &self.pcen.alpha, &self.pcen.delta, &self.pcen.r]) {
            store.insert_f32(*name, &[f], v.iter().map(|&x| x as f32).collect())?;
        }
        let gru_tensors = |store: &mut WeightStore, name: &str, g: &GruLayer| -> Result<()> {
            let GruLayer::F32(c) = g else {
                return Err(Error::AlreadyQuantized);
            };
            let q = QGruWeights::from_f32(c);
            store.insert(format!("{name}.W"), q.w.to_stored())?;
            store.insert(format!("{name}.U"), q.u.to_stored())?;
            store.insert_f32(format!("{name}.b_ih"), &[q.b_input.len()], q.b_input)?;
            store.insert_f32(format!("{name}.b_hh"), &[q.b_hidden.len()], q.b_hidden)?;
            Ok(())
        };
        for layer in &self.convs {
            let name = &layer.spec.name;
            if name == "fgru.pw" {
                if let Some((fw, bw)) = &self.fgru {
                    gru_tensors(&mut store, "fgru.fw", fw)?;
                    gru_tensors(&mut store, "fgru.bw", bw)?;
                }
            }
            if name == "tgru.pw" {
                gru_tensors(&mut store, "tgru.cell", &self.tgru)?;
            }
            let scale = stats
                .scale(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no calibration data for {name}")))?;
            for (n, t) in layer.quantized_tensors(scale)? {
                store.insert(n, t)?;
            }
        }
        Ok(store)
    }
}
