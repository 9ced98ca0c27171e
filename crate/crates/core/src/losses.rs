//! Training objectives (evaluated, not optimised here) and evaluation metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{power_compress, stft_samples, AudioBuffer, StftConfig};
use crate::error::{Error, Result};

/// Norms below this make a cosine term contribute 0.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub segment_lengths: Vec<usize>,
    pub fft_sizes: Vec<usize>,
    pub compress_exponent: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            segment_lengths: vec![4064, 2032, 1016, 508],
            fft_sizes: vec![1024, 512, 256],
            compress_exponent: 0.3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_lengths.contains(&0) || self.fft_sizes.iter().any(|&n| n < 4) {
            return Err(Error::InvalidArgument("loss scales must be positive".into()));
        }
        if !(self.compress_exponent > 0.0) {
            return Err(Error::InvalidArgument("compression exponent must be positive".into()));
        }
        Ok(())
    }
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(what, format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine_from_stats(dot: f64, yy: f64, hh: f64) -> f64 {
    let (ny, nh) = (yy.sqrt(), hh.sqrt());
    if ny < NORM_FLOOR || nh < NORM_FLOOR {
        0.0
    } else {
        -dot / (ny * nh)
    }
}

/// `-<y, yhat> / (|y| |yhat|)`, or 0 if either norm is negligible.
pub fn cosine_similarity_loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    same_len(y, yhat, "cosine_similarity_loss")?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty signal".into()));
    }
    Ok(cosine_from_stats(dot(y, yhat), dot(y, y), dot(yhat, yhat)))
}

/// Sum over segment lengths of the mean cosine loss over full segments.
/// Trailing samples past the last full segment are ignored.
pub fn multiscale_wav_loss(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> Result<f64> {
    same_len(y, yhat, "multiscale_wav_loss")?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("empty signal".into()));
    }
    let mut total = 0.0;
    for &g in &cfg.segment_lengths {
        let m = y.len() / g;
        if m == 0 {
            continue;
        }
        let sum: f64 = y
            .chunks_exact(g)
            .zip(yhat.chunks_exact(g))
            .map(|(a, b)| cosine_from_stats(dot(a, b), dot(a, a), dot(b, b)))
            .sum();
        total += sum / m as f64;
    }
    Ok(total)
}

/// Analytic gradient of [`multiscale_wav_loss`] with respect to `yhat`.
pub fn wav_loss_gradient(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> Result<Vec<f64>> {
    same_len(y, yhat, "wav_loss_gradient")?;
    let mut grad = vec![0.0; y.len()];
    for &g in &cfg.segment_lengths {
        let m = y.len() / g;
        for s in 0..m {
            let r = s * g..(s + 1) * g;
            let (a, b) = (&y[r.clone()], &yhat[r.clone()]);
            let nh = dot(b, b).sqrt();
            if nh < NORM_FLOOR {
                return Err(Error::Degenerate(format!(
                    "estimate segment {s} of length {g} has zero norm"
                )));
            }
            let ny = dot(a, a).sqrt();
            if ny < NORM_FLOOR {
                continue;
            }
            let ab = dot(a, b);
            let c1 = 1.0 / (ny * nh * m as f64);
            let c2 = ab / (ny * nh * nh * nh * m as f64);
            for ((o, &av), &bv) in grad[r].iter_mut().zip(a).zip(b) {
                *o -= av * c1 - c2 * bv;
            }
        }
    }
    Ok(grad)
}

fn compressed_magnitudes(x: &[f64], n: usize, exponent: f64) -> Result<Vec<f64>> {
    let cfg = StftConfig::new(n, n / 4, 16_000)?.with_nyquist();
    let spec = stft_samples(x, &cfg)?;
    power_compress(&spec.magnitudes(), exponent)
}

/// Sum over FFT sizes of the squared Frobenius distance between
/// power-compressed magnitude spectrograms.
pub fn multiscale_spec_loss(y: &[f64], yhat: &[f64], cfg: &LossConfig) -> Result<f64> {
    same_len(y, yhat, "multiscale_spec_loss")?;
    let largest = cfg.fft_sizes.iter().copied().max().unwrap_or(0);
    if y.len() < largest {
        return Err(Error::InsufficientSamples {
            needed: largest,
            got: y.len(),
        });
    }
    let mut total = 0.0;
    for &n in &cfg.fft_sizes {
        let a = compressed_magnitudes(y, n, cfg.compress_exponent)?;
        let b = compressed_magnitudes(yhat, n, cfg.compress_exponent)?;
        total += a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    }
    Ok(total)
}

/// Waveform plus spectral loss summed over the three sources.
pub fn final_loss(targets: [&[f64]; 3], estimates: [&[f64]; 3], cfg: &LossConfig) -> Result<f64> {
    let n = targets[0].len();
    if targets.iter().chain(&estimates).any(|s| s.len() != n) {
        return Err(Error::shape("final_loss", "all six signals must share a length"));
    }
    let mut total = 0.0;
    for (y, yhat) in targets.iter().zip(&estimates) {
        total += multiscale_wav_loss(y, yhat, cfg)? + multiscale_spec_loss(y, yhat, cfg)?;
    }
    Ok(total)
}

/// Outcome of the finite-difference check of [`wav_loss_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_LEN: usize = 4064;

/// Central differences of the wav loss at `yhat`, one coordinate at a time.
///
/// A perturbation of sample `i` changes one segment per scale, so each probe
/// re-evaluates only the cosine terms of those segments from their updated
/// inner products.
pub fn finite_difference_gradient(y: &[f64], yhat: &[f64], cfg: &LossConfig, h: f64) -> Result<Vec<f64>> {
    same_len(y, yhat, "finite_difference_gradient")?;
    let n = y.len();
    struct Scale {
        g: usize,
        m: f64,
        stats: Vec<(f64, f64, f64)>,
    }
    let scales: Vec<Scale> = cfg
        .segment_lengths
        .iter()
        .filter(|&&g| n / g > 0)
        .map(|&g| Scale {
            g,
            m: (n / g) as f64,
            stats: y
                .chunks_exact(g)
                .zip(yhat.chunks_exact(g))
                .map(|(a, b)| (dot(a, b), dot(a, a), dot(b, b)))
                .collect(),
        })
        .collect();
    let mut grad = vec![0.0; n];
    for (i, o) in grad.iter_mut().enumerate() {
        let mut diff = 0.0;
        for sc in &scales {
            let s = i / sc.g;
            let Some(&(ab, aa, bb)) = sc.stats.get(s) else {
                continue;
            };
            let at = |step: f64| {
                let v = yhat[i] + step;
                let bb2 = bb - yhat[i] * yhat[i] + v * v;
                cosine_from_stats(ab + step * y[i], aa, bb2)
            };
            diff += (at(h) - at(-h)) / sc.m;
        }
        *o = diff / (2.0 * h);
    }
    Ok(grad)
}

/// Norm-wise relative error between two vectors.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = dot(a, a).sqrt().max(dot(b, b).sqrt());
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Compare analytic and finite-difference gradients on `trials` random
/// Gaussian pairs of length 4064.
pub fn gradcheck(trials: usize, seed: u64) -> Result<GradcheckReport> {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let y: Vec<f64> = (0..GRADCHECK_LEN).map(|_| gaussian(&mut rng)).collect();
        let yhat: Vec<f64> = (0..GRADCHECK_LEN).map(|_| gaussian(&mut rng)).collect();
        let analytic = wav_loss_gradient(&y, &yhat, &cfg)?;
        let numeric = finite_difference_gradient(&y, &yhat, &cfg, GRADCHECK_STEP)?;
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(GradcheckReport {
        trials,
        max_relative_error: worst,
        tolerance: GRADCHECK_TOLERANCE,
        passed: worst.is_finite() && worst < GRADCHECK_TOLERANCE,
    })
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Scale-invariant SDR in dB, capped at +-100.
pub fn si_sdr(y: &[f64], yhat: &[f64]) -> Result<f64> {
    same_len(y, yhat, "si_sdr")?;
    let yy = dot(y, y);
    if yy == 0.0 {
        return Err(Error::InvalidArgument("si_sdr target has zero energy".into()));
    }
    let alpha = dot(yhat, y) / yy;
    let target = alpha * alpha * yy;
    let residual: f64 = y.iter().zip(yhat).map(|(a, b)| (b - alpha * a).powi(2)).sum();
    if residual < 1e-20 {
        return Ok(100.0);
    }
    if target == 0.0 {
        return Ok(-100.0);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-100.0, 100.0))
}

/// Energy ratio in dB.
pub fn energy_ratio_db(a: &[f64], b: &[f64]) -> f64 {
    10.0 * (dot(a, a) / dot(b, b)).log10()
}

/// `clean + g * noise` with `g` chosen for the requested SNR.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<AudioBuffer> {
    same_len(&clean.samples, &noise.samples, "mix_at_snr")?;
    let (ec, en) = (clean.energy(), noise.energy());
    if ec == 0.0 || en == 0.0 {
        return Err(Error::InvalidArgument("mix_at_snr needs nonzero clean and noise".into()));
    }
    let g = (ec / (en * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = clean.samples.iter().zip(&noise.samples).map(|(c, n)| c + g * n).collect();
    Ok(AudioBuffer::new(samples, clean.sample_rate))
}
