//! Uniform symmetric INT8 quantization (zero-point 0, codes in [-127, 127]).
//!
//! Convolution inputs use static activation scales fixed from calibration;
//! GRU inputs and hidden states are quantized per step from their own range.
//! Products accumulate in i32 and are rescaled to f32 before the f32 bias is
//! added. Feature extraction and masking stay in full precision.

use std::sync::OnceLock;

use indexmap::IndexMap;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::nn::conv::{same_padding, transpose_crop};
use crate::nn::gru::{gru_combine, GruCell};
use crate::nn::{ConvMode, StoredTensor, Tensor, WeightStore};

pub const QMAX: i32 = 127;
/// Lower bound on any scale, for all-zero tensors.
pub const MIN_SCALE: f32 = 1e-8;
/// Longest accumulation for which i32 cannot overflow with |q| <= 127.
pub const MAX_ACCUMULATION: usize = 1 << 16;

#[derive(Debug, Clone)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub values: Vec<i8>,
    pub scale: f32,
    /// Row-pair layout for [`int_matmul`], built on first use as a weight.
    packed: OnceLock<Vec<i16>>,
}

impl PartialEq for QuantizedTensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.values == other.values && self.scale == other.scale
    }
}

impl QuantizedTensor {
    pub fn new(shape: Vec<usize>, values: Vec<i8>, scale: f32) -> Self {
        Self {
            shape,
            values,
            scale,
            packed: OnceLock::new(),
        }
    }

    /// Interleave rows `2p` and `2p + 1` of the `K x N` view (last axis is
    /// N): element `(p, j)` is the pair `(w[2p][j], w[2p+1][j])`, zero-padded
    /// for odd K.
    fn row_pairs(&self) -> &[i16] {
        self.packed.get_or_init(|| {
            let n = *self.shape.last().unwrap_or(&1);
            let k = self.values.len() / n.max(1);
            let mut out = vec![0i16; k.div_ceil(2) * n * 2];
            for (kk, row) in self.values.chunks_exact(n).enumerate() {
                let base = (kk / 2) * n * 2 + kk % 2;
                for (j, &w) in row.iter().enumerate() {
                    out[base + 2 * j] = w as i16;
                }
            }
            out
        })
    }

    pub fn from_stored(name: &str, t: &StoredTensor) -> Result<Self> {
        match &t.data {
            crate::nn::TensorData::I8 { values, scale } => Ok(Self::new(t.shape.clone(), values.clone(), *scale as f32)),
            crate::nn::TensorData::F32(_) => Err(Error::BadTensor {
                name: name.to_string(),
                detail: "expected i8 tensor".into(),
            }),
        }
    }

    pub fn to_stored(&self) -> StoredTensor {
        StoredTensor::i8(self.shape.clone(), self.values.clone(), self.scale as f64)
    }
}

/// `max|x| / 127`, floored at [`MIN_SCALE`].
pub fn symmetric_scale(max_abs: f32) -> f32 {
    (max_abs / QMAX as f32).max(MIN_SCALE)
}

/// Round half away from zero, then clamp. `|y| + 0.5` is exact in f64 and
/// the cast truncates, so this matches `f32::round` without a libm call.
#[inline]
fn quantize_value(x: f32, inv_scale: f32) -> i8 {
    let y = (x * inv_scale).clamp(-(QMAX as f32), QMAX as f32);
    let a = (y.abs() as f64 + 0.5) as i32 as i8;
    if y < 0.0 {
        -a
    } else {
        a
    }
}

/// Quantize a slice in place into `out`; returns how many values clipped.
pub fn quantize_into(x: &[f32], scale: f32, out: &mut [i8]) -> usize {
    let inv = 1.0 / scale;
    let limit = QMAX as f32 + 0.5;
    let mut clipped = 0;
    for (o, &v) in out.iter_mut().zip(x) {
        if (v * inv).abs() >= limit {
            clipped += 1;
        }
        *o = quantize_value(v, inv);
    }
    clipped
}

pub fn quantize(x: &Tensor, scale: f32) -> Result<QuantizedTensor> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("quantization scale {scale} must be positive")));
    }
    let mut values = vec![0i8; x.len()];
    quantize_into(x.data(), scale, &mut values);
    Ok(QuantizedTensor::new(x.shape().to_vec(), values, scale))
}

pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let data = q.values.iter().map(|&v| v as f32 * q.scale).collect();
    Tensor::new(q.shape.clone(), data).expect("quantized tensor shape is consistent")
}

/// Quantize with a scale derived from the tensor's own range.
pub fn quantize_dynamic(x: &Tensor) -> QuantizedTensor {
    quantize(x, symmetric_scale(x.max_abs())).expect("symmetric scale is positive")
}

/// Running averages of per-observation minima and maxima for each site.
#[derive(Debug, Clone, Default)]
pub struct CalibrationStats {
    sites: IndexMap<String, SiteStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SiteStats {
    pub min_avg: f64,
    pub max_avg: f64,
    pub count: usize,
}

impl SiteStats {
    pub fn scale(&self) -> f32 {
        symmetric_scale(self.min_avg.abs().max(self.max_avg.abs()) as f32)
    }
}

impl CalibrationStats {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one observation (one batch) of the activation at `site`.
    pub fn observe(&mut self, site: &str, activation: &[f32]) {
        if activation.is_empty() {
            return;
        }
        let (lo, hi) = activation
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        self.observe_range(site, lo as f64, hi as f64);
    }

    pub fn observe_range(&mut self, site: &str, lo: f64, hi: f64) {
        let s = self.sites.entry(site.to_string()).or_default();
        s.count += 1;
        let n = s.count as f64;
        s.min_avg += (lo - s.min_avg) / n;
        s.max_avg += (hi - s.max_avg) / n;
    }

    pub fn get(&self, site: &str) -> Option<&SiteStats> {
        self.sites.get(site)
    }

    pub fn scale(&self, site: &str) -> Option<f32> {
        self.get(site).map(SiteStats::scale)
    }

    pub fn sites(&self) -> impl Iterator<Item = (&str, &SiteStats)> {
        self.sites.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// `out[j] += x0 * pairs[2j] + x1 * pairs[2j + 1]`.
#[cfg(target_arch = "x86_64")]
fn madd_row(out: &mut [i32], x0: i8, x1: i8, pairs: &[i16]) {
    use std::arch::x86_64::{__m128i, _mm_add_epi32, _mm_loadu_si128, _mm_madd_epi16, _mm_set1_epi32, _mm_storeu_si128};
    let n = out.len();
    assert!(pairs.len() >= 2 * n);
    let lanes = n / 4;
    let xv = (x0 as i16 as u16 as u32 | (x1 as i16 as u16 as u32) << 16) as i32;
    // SAFETY: SSE2 is part of the x86_64 baseline; every access stays
    // within `out[..4 * lanes]` and `pairs[..8 * lanes]`, checked above.
    unsafe {
        let xv = _mm_set1_epi32(xv);
        for c in 0..lanes {
            let w = _mm_loadu_si128(pairs.as_ptr().add(8 * c) as *const __m128i);
            let o = out.as_mut_ptr().add(4 * c) as *mut __m128i;
            _mm_storeu_si128(o, _mm_add_epi32(_mm_loadu_si128(o), _mm_madd_epi16(xv, w)));
        }
    }
    for j in 4 * lanes..n {
        out[j] += x0 as i32 * pairs[2 * j] as i32 + x1 as i32 * pairs[2 * j + 1] as i32;
    }
}

#[cfg(not(target_arch = "x86_64"))]
fn madd_row(out: &mut [i32], x0: i8, x1: i8, pairs: &[i16]) {
    for (o, p) in out.iter_mut().zip(pairs.chunks_exact(2)) {
        *o += x0 as i32 * p[0] as i32 + x1 as i32 * p[1] as i32;
    }
}

/// Accumulate `rows x K` codes by the `K x N` weight into `acc` (i32),
/// two weight rows per step.
fn int_matmul(input: &[i8], rows: usize, k: usize, weight: &QuantizedTensor, n: usize, acc: &mut [i32]) {
    assert!(k <= MAX_ACCUMULATION, "accumulation length {k} could overflow i32");
    debug_assert_eq!(weight.values.len(), k * n);
    let pairs = weight.row_pairs();
    acc.fill(0);
    for r in 0..rows {
        let out = &mut acc[r * n..(r + 1) * n];
        let x = &input[r * k..(r + 1) * k];
        for p in 0..k.div_ceil(2) {
            let x0 = x[2 * p];
            let x1 = x.get(2 * p + 1).copied().unwrap_or(0);
            if x0 == 0 && x1 == 0 {
                continue;
            }
            madd_row(out, x0, x1, &pairs[p * 2 * n..(p + 1) * 2 * n]);
        }
    }
}

/// Integer matrix product `input (M x K) . weight (K x N)` with i32
/// accumulation, rescaled by `s_in * s_w`, plus a full-precision bias.
pub fn qlinear(input: &QuantizedTensor, weight: &QuantizedTensor, bias: &[f32]) -> Result<Tensor> {
    let (rows, k) = match input.shape.as_slice() {
        &[k] => (1, k),
        &[m, k] => (m, k),
        s => return Err(Error::shape("qlinear", format!("input shape {s:?}"))),
    };
    let n = match weight.shape.as_slice() {
        &[wk, n] if wk == k => n,
        s => {
            return Err(Error::shape(
                "qlinear",
                format!("weight shape {s:?} incompatible with input {:?}", input.shape),
            ))
        }
    };
    if bias.len() != n {
        return Err(Error::shape("qlinear", format!("bias {} vs {n} outputs", bias.len())));
    }
    let data = qlinear_rows(&input.values, rows, k, input.scale * weight.scale, weight, n, bias);
    let shape = if input.shape.len() == 1 { vec![n] } else { vec![rows, n] };
    Tensor::new(shape, data)
}

fn qlinear_rows(input: &[i8], rows: usize, k: usize, scale: f32, weight: &QuantizedTensor, n: usize, bias: &[f32]) -> Vec<f32> {
    let mut acc = vec![0i32; rows * n];
    int_matmul(input, rows, k, weight, n, &mut acc);
    acc.chunks_exact(n)
        .flat_map(|row| row.iter().zip(bias).map(move |(&a, &b)| a as f32 * scale + b))
        .collect()
}

/// Quantized frequency-axis convolution. The f32 input is quantized with the
/// static activation scale, unfolded (im2col), and multiplied through
/// [`qlinear`]. Depthwise layers accumulate per channel instead.
pub fn qconv1d_freq(
    input: &Tensor,
    act_scale: f32,
    weight: &QuantizedTensor,
    bias: &[f32],
    stride: usize,
    mode: ConvMode,
) -> Result<Tensor> {
    let (f, cin) = (input.rows(), input.cols());
    let xq = quantize(input, act_scale)?;
    match (mode, weight.shape.as_slice()) {
        (ConvMode::Depthwise, &[kernel, c]) if c == cin => {
            let (f_out, lo) = same_padding(f, kernel, stride);
            let mut acc = vec![0i32; c];
            let mut out = Vec::with_capacity(f_out * c);
            let s = act_scale * weight.scale;
            for o in 0..f_out {
                acc.fill(0);
                for k in 0..kernel {
                    let Some(idx) = (o * stride + k).checked_sub(lo).filter(|&i| i < f) else {
                        continue;
                    };
                    let xs = &xq.values[idx * c..(idx + 1) * c];
                    let ws = &weight.values[k * c..(k + 1) * c];
                    for ((a, &x), &w) in acc.iter_mut().zip(xs).zip(ws) {
                        *a += (x as i16 * w as i16) as i32;
                    }
                }
                out.extend(acc.iter().zip(bias).map(|(&a, &b)| a as f32 * s + b));
            }
            Tensor::from_rows(f_out, c, out)
        }
        (ConvMode::Standard | ConvMode::Pointwise, &[kernel, wc, cout]) if wc == cin => {
            let (f_out, lo) = same_padding(f, kernel, stride);
            let kc = kernel * cin;
            let mut cols = vec![0i8; f_out * kc];
            for o in 0..f_out {
                for k in 0..kernel {
                    if let Some(idx) = (o * stride + k).checked_sub(lo).filter(|&i| i < f) {
                        cols[o * kc + k * cin..o * kc + (k + 1) * cin]
                            .copy_from_slice(&xq.values[idx * cin..(idx + 1) * cin]);
                    }
                }
            }
            if bias.len() != cout {
                return Err(Error::shape("qconv1d_freq", format!("bias {} vs {cout} outputs", bias.len())));
            }
            let data = qlinear_rows(&cols, f_out, kc, act_scale * weight.scale, weight, cout, bias);
            Tensor::from_rows(f_out, cout, data)
        }
        (_, s) => Err(Error::shape("qconv1d_freq", format!("weight shape {s:?} for {mode:?}"))),
    }
}

/// Quantized transposed convolution. `weight_t` is the `Cin x (k * Cout)`
/// rearrangement of the `k x Cin x Cout` kernel so each input row is one
/// [`qlinear`] row; the partial rows are then scattered (col2im) and cropped.
pub fn qtransposed_conv1d_freq(
    input: &Tensor,
    act_scale: f32,
    weight_t: &QuantizedTensor,
    kernel: usize,
    bias: &[f32],
    stride: usize,
) -> Result<Tensor> {
    let (f, cin) = (input.rows(), input.cols());
    let cout = bias.len();
    if weight_t.shape != [cin, kernel * cout] {
        return Err(Error::shape(
            "qtransposed_conv1d_freq",
            format!("weight shape {:?} vs Cin {cin}, k {kernel}, Cout {cout}", weight_t.shape),
        ));
    }
    if kernel < stride {
        return Err(Error::InvalidArgument("transposed convolution needs kernel >= stride".into()));
    }
    let xq = quantize(input, act_scale)?;
    let parts = qlinear(&xq, weight_t, &vec![0.0; kernel * cout])?;
    let crop = transpose_crop(kernel, stride);
    let f_out = f * stride;
    let mut out = vec![0.0f32; f_out * cout];
    for (o, row) in out.chunks_exact_mut(cout).enumerate() {
        row.copy_from_slice(bias);
        let p = o + crop;
        for k in (p % stride..kernel).step_by(stride) {
            if k > p {
                break;
            }
            let i = (p - k) / stride;
            if i >= f {
                continue;
            }
            let src = &parts.data()[i * kernel * cout + k * cout..i * kernel * cout + (k + 1) * cout];
            for (r, v) in row.iter_mut().zip(src) {
                *r += v;
            }
        }
    }
    Tensor::from_rows(f_out, cout, out)
}

/// Rearrange `k x Cin x Cout` into `Cin x (k * Cout)`.
pub fn transpose_kernel_layout<T: Copy>(w: &[T], kernel: usize, cin: usize, cout: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(w.len());
    for ci in 0..cin {
        for k in 0..kernel {
            out.extend_from_slice(&w[(k * cin + ci) * cout..(k * cin + ci + 1) * cout]);
        }
    }
    out
}

/// GRU cell with i8 `W`/`U` and f32 biases.
#[derive(Debug, Clone, PartialEq)]
pub struct QGruWeights {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: QuantizedTensor,
    pub u: QuantizedTensor,
    pub b_input: Vec<f32>,
    pub b_hidden: Vec<f32>,
}

impl QGruWeights {
    pub fn from_f32(cell: &crate::nn::GruWeights) -> Self {
        let g = 3 * cell.hidden_size;
        let wq = |m: &[f32], rows: usize| {
            let t = Tensor::new(vec![rows, g], m.to_vec()).expect("gru matrix shape");
            quantize_dynamic(&t)
        };
        Self {
            input_size: cell.input_size,
            hidden_size: cell.hidden_size,
            w: wq(&cell.w, cell.input_size),
            u: wq(&cell.u, cell.hidden_size),
            b_input: cell.b_input.clone(),
            b_hidden: cell.b_hidden.clone(),
        }
    }
}

/// One GRU step with per-step dynamic quantization of `x` and `h`; gates in f32.
pub fn dynamic_quant_gru_step(x: &[f32], h: &[f32], q: &QGruWeights) -> Vec<f32> {
    let xq = quantize_dynamic(&Tensor::new(vec![x.len()], x.to_vec()).expect("vector"));
    let hq = quantize_dynamic(&Tensor::new(vec![h.len()], h.to_vec()).expect("vector"));
    let gi = qlinear(&xq, &q.w, &q.b_input).expect("GRU input projection shape");
    let gh = qlinear(&hq, &q.u, &q.b_hidden).expect("GRU hidden projection shape");
    gru_combine(gi.data(), gh.data(), h)
}

impl GruCell for QGruWeights {
    fn input_size(&self) -> usize {
        self.input_size
    }

    fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    fn step(&self, x: &[f32], h: &[f32]) -> Vec<f32> {
        dynamic_quant_gru_step(x, h, self)
    }
}

/// Convert an f32 store to INT8 using forward-pass calibration over `clips`.
///
/// Each clip is one calibration observation per activation site. Conv
/// weights are BN-folded and quantized per tensor, GRU matrices are
/// quantized per tensor, biases and PCEN parameters stay f32, and each conv
/// input site gets a `qscale.<layer>` scalar.
pub fn quantize_model(store: &WeightStore, clips: &[AudioBuffer]) -> Result<WeightStore> {
    if store.is_quantized() {
        return Err(Error::AlreadyQuantized);
    }
    if clips.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let network = crate::graph::Network::build(crate::graph::TrunetConfig::infer(store)?, store)?;
    let stats = calibrate_network(&network, clips)?;
    network.quantized_store(&stats)
}

/// Run `clips` through the f32 network and collect per-site statistics.
pub fn calibrate_network(network: &crate::graph::Network, clips: &[AudioBuffer]) -> Result<CalibrationStats> {
    let mut stats = CalibrationStats::new();
    for clip in clips {
        let feats = crate::engine::stream_features(clip, network)?;
        let mut ranges: IndexMap<String, (f32, f32)> = IndexMap::new();
        let mut state = network.new_tgru_state();
        for t in 0..feats.frames {
            network.forward_frame_observed(feats.frame(t), &mut state, &mut |site, x| {
                let e = ranges
                    .entry(site.to_string())
                    .or_insert((f32::INFINITY, f32::NEG_INFINITY));
                for &v in x.data() {
                    e.0 = e.0.min(v);
                    e.1 = e.1.max(v);
                }
            })?;
        }
        for (site, (lo, hi)) in ranges {
            stats.observe_range(&site, lo as f64, hi as f64);
        }
    }
    Ok(stats)
}
