//! Phase-aware beta-sigmoid masks and quadrilateral completion.
//!
//! Head channels per (t, f), in order:
//! `[z_d, z_not_d, beta_raw_1, sign0_1, sign1_1, z_n, z_not_n, beta_raw_2, sign0_2, sign1_2]`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};
use crate::graph::HEAD_CHANNELS;

/// Below this magnitude a mask's phase is reported as the mixture phase.
pub const MAG_GUARD: f64 = 1e-8;

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_pair(z_k: f64, z_notk: f64) -> f64 {
    logistic(z_k - z_notk)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `min(1 + softplus(beta_raw), 1 / |2 sigma - 1|)`.
pub fn compute_beta(beta_raw: f64, sigma_k: f64) -> f64 {
    let beta0 = 1.0 + softplus(beta_raw);
    let gap = (2.0 * sigma_k - 1.0).abs();
    if gap == 0.0 {
        beta0
    } else {
        beta0.min(1.0 / gap)
    }
}

/// Law of cosines on the triangle with sides `1`, `mag_k`, `mag_notk`:
/// cosine and |sine| of the angle between mask `k` and the mixture.
pub fn phase_from_magnitudes(mag_k: f64, mag_notk: f64) -> (f64, f64) {
    if mag_k < MAG_GUARD {
        return (1.0, 0.0);
    }
    let cos = ((1.0 + mag_k * mag_k - mag_notk * mag_notk) / (2.0 * mag_k)).clamp(-1.0, 1.0);
    (cos, (1.0 - cos * cos).max(0.0).sqrt())
}

/// Height of the triangle with sides `1`, `b`, `c` over the unit side
/// (Heron's formula, factors clamped against rounding).
fn unit_height(b: f64, c: f64) -> f64 {
    let p = (1.0 + b + c) * (b + c - 1.0).max(0.0) * (1.0 - b + c).max(0.0) * (1.0 + b - c).max(0.0);
    0.5 * p.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignMode {
    Hard,
    /// Argmax of the logits plus `tau`-scaled Gumbel(0, 1) noise.
    Gumbel { tau: f64 },
}

/// Sign selection mode with its own random stream.
#[derive(Debug, Clone)]
pub struct SignSampler {
    mode: SignMode,
    rng: ChaCha8Rng,
}

impl SignSampler {
    pub fn hard() -> Self {
        Self {
            mode: SignMode::Hard,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn new(mode: SignMode, seed: u64) -> Result<Self> {
        if let SignMode::Gumbel { tau } = mode {
            check_tau(tau)?;
        }
        Ok(Self {
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn mode(&self) -> SignMode {
        self.mode
    }

    pub fn sample(&mut self, logits: [f64; 2]) -> f64 {
        match self.mode {
            SignMode::Hard => hard_sign(logits),
            SignMode::Gumbel { tau } => gumbel_sign(logits, tau, &mut self.rng),
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gumbel temperature must be > 0, got {tau}")))
    }
}

fn hard_sign(l: [f64; 2]) -> f64 {
    if l[1] > l[0] {
        -1.0
    } else {
        1.0
    }
}

fn gumbel_sign<R: RngCore + ?Sized>(l: [f64; 2], tau: f64, rng: &mut R) -> f64 {
    let mut g = || {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    };
    let a = l[0] + tau * g();
    let b = l[1] + tau * g();
    hard_sign([a, b])
}

/// Class 0 maps to `+1`, class 1 to `-1`; ties go to `+1`.
pub fn select_sign<R: RngCore + ?Sized>(logits: [f64; 2], mode: SignMode, rng: &mut R) -> Result<f64> {
    match mode {
        SignMode::Hard => Ok(hard_sign(logits)),
        SignMode::Gumbel { tau } => {
            check_tau(tau)?;
            Ok(gumbel_sign(logits, tau, rng))
        }
    }
}

/// Raw heads of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairHeads {
    pub z_k: f64,
    pub z_notk: f64,
    pub beta_raw: f64,
    pub sign_logits: [f64; 2],
}

/// The ten head values of one (t, f).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhmHeads {
    pub direct: PairHeads,
    pub noise: PairHeads,
}

impl PhmHeads {
    pub fn from_slice(h: &[f32]) -> Self {
        assert_eq!(h.len(), HEAD_CHANNELS);
        let pair = |o: usize| PairHeads {
            z_k: h[o] as f64,
            z_notk: h[o + 1] as f64,
            beta_raw: h[o + 2] as f64,
            sign_logits: [h[o + 3] as f64, h[o + 4] as f64],
        };
        Self {
            direct: pair(0),
            noise: pair(5),
        }
    }

    pub fn to_array(&self) -> [f32; HEAD_CHANNELS] {
        let mut out = [0.0; HEAD_CHANNELS];
        for (o, p) in [(0, &self.direct), (5, &self.noise)] {
            out[o] = p.z_k as f32;
            out[o + 1] = p.z_notk as f32;
            out[o + 2] = p.beta_raw as f32;
            out[o + 3] = p.sign_logits[0] as f32;
            out[o + 4] = p.sign_logits[1] as f32;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhmPair {
    pub sigma_k: f64,
    pub beta: f64,
    pub mag_k: f64,
    pub mag_notk: f64,
    pub cos_k: f64,
    pub sin_k: f64,
    pub cos_notk: f64,
    pub sin_notk: f64,
    pub xi: f64,
    mask: Complex64,
}

impl PhmPair {
    pub fn mask_k(&self) -> Complex64 {
        self.mask
    }

    pub fn mask_notk(&self) -> Complex64 {
        Complex64::new(1.0 - self.mask.re, -self.mask.im)
    }
}

/// Assemble one pair's complex masks for a fixed sign `xi`.
pub fn assemble_pair_with_sign(z_k: f64, z_notk: f64, beta_raw: f64, xi: f64) -> PhmPair {
    let sigma_k = sigmoid_pair(z_k, z_notk);
    let beta = compute_beta(beta_raw, sigma_k);
    let mag_k = beta * sigma_k;
    let mag_notk = beta * (1.0 - sigma_k);
    let (cos_k, sin_k) = phase_from_magnitudes(mag_k, mag_notk);
    let (cos_notk, sin_notk) = phase_from_magnitudes(mag_notk, mag_k);
    // Real part from the law of cosines, imaginary part the triangle height:
    // equal to mag_k * e^{j xi theta} but exact in the pair sum.
    let re = 0.5 * (1.0 + mag_k * mag_k - mag_notk * mag_notk);
    let mask = Complex64::new(re, xi * unit_height(mag_k, mag_notk));
    PhmPair {
        sigma_k,
        beta,
        mag_k,
        mag_notk,
        cos_k,
        sin_k,
        cos_notk,
        sin_notk,
        xi,
        mask,
    }
}

pub fn assemble_pair(heads: &PairHeads, sampler: &mut SignSampler) -> PhmPair {
    let xi = sampler.sample(heads.sign_logits);
    assemble_pair_with_sign(heads.z_k, heads.z_notk, heads.beta_raw, xi)
}

/// Direct, reverberant and noise estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub direct: ComplexSpectrogram,
    pub reverb: ComplexSpectrogram,
    pub noise: ComplexSpectrogram,
}

/// Separate one frame. `heads` is `F x 10`; the Nyquist value is split with
/// the real parts of the top bin's masks. Outputs are written to `d`, `r`,
/// `n` and the returned Nyquist triple.
pub fn separate_frame(
    x: &[Complex64],
    x_nyquist: f64,
    heads: &[f32],
    sampler: &mut SignSampler,
    d: &mut [Complex64],
    r: &mut [Complex64],
    n: &mut [Complex64],
) -> Result<[f64; 3]> {
    let bins = x.len();
    if heads.len() != bins * HEAD_CHANNELS || d.len() != bins || r.len() != bins || n.len() != bins {
        return Err(Error::shape(
            "separate",
            format!("{} bins vs {} head values", bins, heads.len()),
        ));
    }
    let (mut md_top, mut mn_top) = (0.0, 0.0);
    for f in 0..bins {
        let h = PhmHeads::from_slice(&heads[f * HEAD_CHANNELS..(f + 1) * HEAD_CHANNELS]);
        let md = assemble_pair(&h.direct, sampler).mask_k();
        let mn = assemble_pair(&h.noise, sampler).mask_k();
        d[f] = md * x[f];
        n[f] = mn * x[f];
        r[f] = x[f] - d[f] - n[f];
        if f + 1 == bins {
            md_top = md.re;
            mn_top = mn.re;
        }
    }
    let dn = md_top * x_nyquist;
    let nn = mn_top * x_nyquist;
    Ok([dn, x_nyquist - dn - nn, nn])
}

/// Apply the heads (`T x F x 10`) to the mixture spectrogram.
pub fn separate(x: &ComplexSpectrogram, heads: &[f32], sampler: &mut SignSampler) -> Result<SeparationResult> {
    let per_frame = x.bins * HEAD_CHANNELS;
    if heads.len() != x.frames * per_frame {
        return Err(Error::shape(
            "separate",
            format!("{} head values for {}x{} spectrogram", heads.len(), x.frames, x.bins),
        ));
    }
    let mut direct = ComplexSpectrogram::zeros(x.frames, x.bins);
    let mut reverb = ComplexSpectrogram::zeros(x.frames, x.bins);
    let mut noise = ComplexSpectrogram::zeros(x.frames, x.bins);
    let keep_nyquist = !x.nyquist.is_empty();
    if keep_nyquist {
        for s in [&mut direct, &mut reverb, &mut noise] {
            s.nyquist = vec![0.0; x.frames];
        }
    }
    for t in 0..x.frames {
        let nyq = separate_frame(
            x.frame(t),
            x.nyquist_at(t),
            &heads[t * per_frame..(t + 1) * per_frame],
            sampler,
            direct.frame_mut(t),
            reverb.frame_mut(t),
            noise.frame_mut(t),
        )?;
        if keep_nyquist {
            direct.nyquist[t] = nyq[0];
            reverb.nyquist[t] = nyq[1];
            noise.nyquist[t] = nyq[2];
        }
    }
    Ok(SeparationResult { direct, reverb, noise })
}
