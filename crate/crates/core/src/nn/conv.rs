//! Frequency-axis convolutions, inference batch norm and ReLU.
//!
//! Activations are `F x C` (frequency rows, channels contiguous). Kernels
//! never span time.

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Weight `k x Cin x Cout`.
    Standard,
    /// Weight `k x C`.
    Depthwise,
    /// Weight `1 x Cin x Cout`.
    Pointwise,
}

/// Output length and low-side padding for 'same'-style strided convolution.
/// Total padding is split with the floor on the low side.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let pad = ((out - 1) * stride + kernel).saturating_sub(len);
    (out, pad / 2)
}

/// Low-side crop applied to the full transposed-convolution output.
pub fn transpose_crop(kernel: usize, stride: usize) -> usize {
    (kernel - stride) / 2
}

#[inline]
pub(crate) fn axpy(out: &mut [f32], a: f32, x: &[f32]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

fn check_input(input: &Tensor, channels: usize, layer: &str) -> Result<()> {
    if input.shape().len() != 2 || input.cols() != channels {
        return Err(Error::shape(
            layer,
            format!("input {:?} does not have {channels} channels", input.shape()),
        ));
    }
    Ok(())
}

/// 'Same'-padded strided convolution along frequency. Output has
/// `ceil(F / stride)` rows.
pub fn conv1d_freq(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    stride: usize,
    mode: ConvMode,
    layer: &str,
) -> Result<Tensor> {
    let ws = weight.shape();
    let (kernel, cin, cout) = match (mode, ws) {
        (ConvMode::Standard, &[k, ci, co]) => (k, ci, co),
        (ConvMode::Pointwise, &[1, ci, co]) => (1, ci, co),
        (ConvMode::Depthwise, &[k, c]) => (k, c, c),
        _ => {
            return Err(Error::shape(
                layer,
                format!("weight shape {ws:?} invalid for {mode:?} convolution"),
            ))
        }
    };
    if stride == 0 || kernel == 0 {
        return Err(Error::shape(layer, "kernel and stride must be positive"));
    }
    check_input(input, cin, layer)?;
    if bias.len() != cout {
        return Err(Error::shape(layer, format!("bias has {} values, expected {cout}", bias.len())));
    }
    let f = input.rows();
    let (f_out, pad_lo) = same_padding(f, kernel, stride);
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0f32; f_out * cout];
    for (o, row) in out.chunks_exact_mut(cout).enumerate() {
        row.copy_from_slice(bias);
        for k in 0..kernel {
            let Some(idx) = (o * stride + k).checked_sub(pad_lo).filter(|&i| i < f) else {
                continue;
            };
            let xin = &x[idx * cin..(idx + 1) * cin];
            match mode {
                ConvMode::Depthwise => {
                    let wk = &w[k * cin..(k + 1) * cin];
                    for ((r, xv), wv) in row.iter_mut().zip(xin).zip(wk) {
                        *r += xv * wv;
                    }
                }
                _ => {
                    let wk = &w[k * cin * cout..(k + 1) * cin * cout];
                    for (ci, &xv) in xin.iter().enumerate() {
                        axpy(row, xv, &wk[ci * cout..(ci + 1) * cout]);
                    }
                }
            }
        }
    }
    Tensor::from_rows(f_out, cout, out)
}

/// Fractional-stride transposed convolution cropped to exactly `stride * F`
/// rows. Weight `k x Cin x Cout`.
pub fn transposed_conv1d_freq(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f32],
    stride: usize,
    layer: &str,
) -> Result<Tensor> {
    let &[kernel, cin, cout] = weight.shape() else {
        return Err(Error::shape(
            layer,
            format!("transposed weight shape {:?} is not k x Cin x Cout", weight.shape()),
        ));
    };
    if stride == 0 || kernel < stride {
        return Err(Error::InvalidArgument(format!(
            "{layer}: transposed convolution needs kernel >= stride (got {kernel} < {stride})"
        )));
    }
    check_input(input, cin, layer)?;
    if bias.len() != cout {
        return Err(Error::shape(layer, format!("bias has {} values, expected {cout}", bias.len())));
    }
    let f = input.rows();
    let crop = transpose_crop(kernel, stride);
    let f_out = f * stride;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0f32; f_out * cout];
    for (o, row) in out.chunks_exact_mut(cout).enumerate() {
        row.copy_from_slice(bias);
        // full-output position p = o + crop receives input i through tap k = p - i*stride
        let p = o + crop;
        for k in (p % stride..kernel).step_by(stride) {
            if k > p {
                break;
            }
            let i = (p - k) / stride;
            if i >= f {
                continue;
            }
            let xin = &x[i * cin..(i + 1) * cin];
            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
            for (ci, &xv) in xin.iter().enumerate() {
                axpy(row, xv, &wk[ci * cout..(ci + 1) * cout]);
            }
        }
    }
    Tensor::from_rows(f_out, cout, out)
}

/// Inference batch norm with stored statistics, one set per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` so that `bn(x) = scale * x + shift`.
    pub fn affine(&self) -> (Vec<f32>, Vec<f32>) {
        let scale: Vec<f32> = self
            .gamma
            .iter()
            .zip(&self.var)
            .map(|(g, v)| g / (v + BN_EPS).sqrt())
            .collect();
        let shift = self
            .beta
            .iter()
            .zip(&self.mean)
            .zip(&scale)
            .map(|((b, m), s)| b - m * s)
            .collect();
        (scale, shift)
    }
}

pub fn batch_norm_inference(x: &Tensor, bn: &BatchNorm) -> Result<Tensor> {
    let c = bn.channels();
    if x.shape().len() != 2 || x.cols() != c {
        return Err(Error::shape("batch_norm", format!("{:?} vs {c} channels", x.shape())));
    }
    if bn.var.iter().any(|&v| v < 0.0) {
        return Err(Error::NegativeInput("batch_norm variance"));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for ch in 0..c {
            row[ch] = bn.gamma[ch] * (row[ch] - bn.mean[ch]) / (bn.var[ch] + BN_EPS).sqrt()
                + bn.beta[ch];
        }
    }
    Ok(out)
}

pub fn relu_inplace(x: &mut Tensor) {
    for v in x.data_mut() {
        *v = v.max(0.0);
    }
}

/// Fold a batch norm into the preceding convolution. Works for any weight
/// layout whose last axis is the output channel (standard, pointwise,
/// depthwise and transposed).
pub fn fold_batch_norm(weight: &Tensor, bias: &[f32], bn: &BatchNorm) -> Result<(Tensor, Vec<f32>)> {
    let c = bn.channels();
    if weight.shape().last() != Some(&c) || bias.len() != c {
        return Err(Error::shape(
            "fold_batch_norm",
            format!("weight {:?} / bias {} vs {c} channels", weight.shape(), bias.len()),
        ));
    }
    let (scale, shift) = bn.affine();
    let mut w = weight.clone();
    for chunk in w.data_mut().chunks_exact_mut(c) {
        for (v, s) in chunk.iter_mut().zip(&scale) {
            *v *= s;
        }
    }
    let b = bias
        .iter()
        .zip(scale.iter().zip(&shift))
        .map(|(b, (s, t))| b * s + t)
        .collect();
    Ok((w, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct-definition oracle: explicit zero-padded input, no index tricks.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f32], s: usize) -> Vec<f32> {
        let (f, cin) = (x.rows(), x.cols());
        let (k, cout) = (w.shape()[0], w.shape()[2]);
        let f_out = (f + s - 1) / s;
        let pad = ((f_out - 1) * s + k).saturating_sub(f);
        let lo = pad / 2;
        let mut padded = vec![0.0f32; (f + pad) * cin];
        padded[lo * cin..(lo + f) * cin].copy_from_slice(x.data());
        let mut out = vec![0.0; f_out * cout];
        for o in 0..f_out {
            for co in 0..cout {
                let mut acc = b[co];
                for kk in 0..k {
                    for ci in 0..cin {
                        acc += padded[(o * s + kk) * cin + ci] * w.data()[(kk * cin + ci) * cout + co];
                    }
                }
                out[o * cout + co] = acc;
            }
        }
        out
    }

    /// Scatter form of the transposed convolution, then crop.
    fn tconv_oracle(x: &Tensor, w: &Tensor, b: &[f32], s: usize) -> Vec<f32> {
        let (f, cin) = (x.rows(), x.cols());
        let (k, cout) = (w.shape()[0], w.shape()[2]);
        let full_len = (f - 1) * s + k;
        let mut full = vec![0.0f32; full_len * cout];
        for i in 0..f {
            for kk in 0..k {
                for ci in 0..cin {
                    for co in 0..cout {
                        full[(i * s + kk) * cout + co] +=
                            x.data()[i * cin + ci] * w.data()[(kk * cin + ci) * cout + co];
                    }
                }
            }
        }
        let lo = (k - s) / 2;
        let mut out = full[lo * cout..(lo + f * s) * cout].to_vec();
        for row in out.chunks_exact_mut(cout) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
        out
    }

    #[test]
    fn encoder_downsampling_lengths() {
        assert_eq!(same_padding(256, 5, 2).0, 128);
        assert_eq!(same_padding(128, 3, 1).0, 128);
        assert_eq!(same_padding(32, 3, 2).0, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[256, 4], &mut rng);
        let w = rand_tensor(&[5, 4, 64], &mut rng);
        let y = conv1d_freq(&x, &w, &[0.0; 64], 2, ConvMode::Standard, "enc.1.conv").unwrap();
        assert_eq!(y.shape(), &[128, 64]);
    }

    #[test]
    fn standard_conv_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (f, k, s) in [(16, 5, 2), (17, 3, 1), (32, 3, 2), (9, 5, 2), (8, 1, 1)] {
            let x = rand_tensor(&[f, 3], &mut rng);
            let w = rand_tensor(&[k, 3, 5], &mut rng);
            let b: Vec<f32> = (0..5).map(|i| i as f32 * 0.1).collect();
            let y = conv1d_freq(&x, &w, &b, s, ConvMode::Standard, "t").unwrap();
            let o = conv_oracle(&x, &w, &b, s);
            for (a, e) in y.data().iter().zip(&o) {
                assert!((a - e).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn pointwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[10, 6], &mut rng);
        let mut w = vec![0.0; 36];
        for i in 0..6 {
            w[i * 6 + i] = 1.0;
        }
        let w = Tensor::new(vec![1, 6, 6], w).unwrap();
        let y = conv1d_freq(&x, &w, &[0.0; 6], 1, ConvMode::Pointwise, "pw").unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_identity_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&[12, 4], &mut rng);
        let mut w = vec![0.0; 12];
        w[4..8].fill(1.0);
        let w = Tensor::new(vec![3, 4], w).unwrap();
        let y = conv1d_freq(&x, &w, &[0.0; 4], 1, ConvMode::Depthwise, "dw").unwrap();
        assert_eq!(y, x);

        // A depthwise conv equals a standard conv with a diagonal weight.
        let wd = rand_tensor(&[5, 4], &mut rng);
        let mut full = vec![0.0; 5 * 4 * 4];
        for k in 0..5 {
            for c in 0..4 {
                full[(k * 4 + c) * 4 + c] = wd.data()[k * 4 + c];
            }
        }
        let full = Tensor::new(vec![5, 4, 4], full).unwrap();
        let b = [0.1, 0.2, -0.3, 0.0];
        let y = conv1d_freq(&x, &wd, &b, 2, ConvMode::Depthwise, "dw").unwrap();
        let o = conv_oracle(&x, &full, &b, 2);
        for (a, e) in y.data().iter().zip(&o) {
            assert!((a - e).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let x = Tensor::zeros(&[8, 3]);
        let w = Tensor::zeros(&[3, 4, 2]);
        let err = conv1d_freq(&x, &w, &[0.0; 2], 1, ConvMode::Standard, "enc.2.pw").unwrap_err();
        assert!(err.to_string().contains("enc.2.pw"));
        let err = conv1d_freq(&x, &w, &[0.0; 2], 1, ConvMode::Depthwise, "enc.2.dw").unwrap_err();
        assert!(err.to_string().contains("enc.2.dw"));
    }

    #[test]
    fn transposed_lengths_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (f, k, s) in [(16, 3, 2), (32, 5, 2), (64, 3, 1), (64, 5, 2), (128, 3, 1), (128, 5, 2), (7, 4, 2), (5, 6, 3)] {
            let x = rand_tensor(&[f, 3], &mut rng);
            let w = rand_tensor(&[k, 3, 4], &mut rng);
            let b = [0.5, -0.5, 0.25, 0.0];
            let y = transposed_conv1d_freq(&x, &w, &b, s, "dec").unwrap();
            assert_eq!(y.rows(), s * f);
            let o = tconv_oracle(&x, &w, &b, s);
            for (a, e) in y.data().iter().zip(&o) {
                assert!((a - e).abs() < 1e-5, "f={f} k={k} s={s}");
            }
        }
    }

    #[test]
    fn transposed_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = rand_tensor(&[9, 3], &mut rng);
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let w = Tensor::new(vec![1, 3, 3], w).unwrap();
        assert_eq!(transposed_conv1d_freq(&x, &w, &[0.0; 3], 1, "t").unwrap(), x);

        let w = rand_tensor(&[5, 3, 2], &mut rng);
        let z = transposed_conv1d_freq(&Tensor::zeros(&[16, 3]), &w, &[0.0; 2], 2, "t").unwrap();
        assert_eq!(z.shape(), &[32, 2]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_rejects_kernel_below_stride() {
        let err = transposed_conv1d_freq(&Tensor::zeros(&[4, 1]), &Tensor::zeros(&[1, 1, 1]), &[0.0], 2, "t");
        assert!(err.is_err());
    }

    #[test]
    fn batch_norm_examples() {
        let x = Tensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let y = batch_norm_inference(&x, &BatchNorm::identity(2)).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b / (1.0f32 + 1e-5).sqrt()).abs() < 1e-7);
        }
        let bn = BatchNorm {
            gamma: vec![2.0, 0.5],
            beta: vec![0.3, -0.7],
            mean: vec![1.5, -1.0],
            var: vec![4.0, 0.1],
        };
        let at_mean = Tensor::new(vec![1, 2], vec![1.5, -1.0]).unwrap();
        let y = batch_norm_inference(&at_mean, &bn).unwrap();
        assert_eq!(y.data(), &[0.3, -0.7]);
    }

    #[test]
    fn folded_conv_matches_conv_then_bn() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_tensor(&[32, 8], &mut rng);
        let w = rand_tensor(&[5, 8, 6], &mut rng);
        let b: Vec<f32> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bn = BatchNorm {
            gamma: (0..6).map(|_| rng.random_range(0.5..1.5)).collect(),
            beta: (0..6).map(|_| rng.random_range(-0.5..0.5)).collect(),
            mean: (0..6).map(|_| rng.random_range(-0.5..0.5)).collect(),
            var: (0..6).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        let reference = batch_norm_inference(
            &conv1d_freq(&x, &w, &b, 2, ConvMode::Standard, "c").unwrap(),
            &bn,
        )
        .unwrap();
        let (wf, bf) = fold_batch_norm(&w, &b, &bn).unwrap();
        let folded = conv1d_freq(&x, &wf, &bf, 2, ConvMode::Standard, "c").unwrap();
        for (a, e) in folded.data().iter().zip(reference.data()) {
            assert!((a - e).abs() < 1e-5 * e.abs().max(1.0));
        }
    }
}
