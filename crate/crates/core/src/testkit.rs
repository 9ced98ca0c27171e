//! Synthetic scenes `x = y_d + y_r + y_n` with known components, and the
//! analytic head inversion used by mask-expressiveness checks.

use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::{energy, AudioBuffer, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::graph::HEAD_CHANNELS;
use crate::phm::{PairHeads, PhmHeads};

/// Probability that a tail sample after the first carries a reflection.
pub const TAP_DENSITY: f64 = 0.25;

/// Convolve `dry` with a sparse random-sign tail whose taps decay as
/// `exp(-n / (decay_tau * sr))`, the first tap at lag `max(delay, 1)`.
/// The output has full convolution length.
pub fn synth_reverb<R: Rng + ?Sized>(dry: &AudioBuffer, decay_tau: f64, delay: usize, rng: &mut R) -> Result<AudioBuffer> {
    if !(decay_tau > 0.0 && decay_tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("decay_tau must be > 0, got {decay_tau}")));
    }
    let start = delay.max(1);
    let rate = decay_tau * dry.sample_rate as f64;
    // taps beyond -80 dB are dropped
    let end = ((rate * 80.0 / 20.0 * std::f64::consts::LN_10).ceil() as usize).max(start);
    let mut taps = Vec::new();
    for lag in start..=end {
        if lag == start || rng.random_bool(TAP_DENSITY) {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            taps.push((lag, sign * (-(lag as f64) / rate).exp()));
        }
    }
    let mut out = vec![0.0; dry.len() + end];
    for &(lag, a) in &taps {
        for (o, &x) in out[lag..lag + dry.len()].iter_mut().zip(&dry.samples) {
            *o += a * x;
        }
    }
    Ok(AudioBuffer::new(out, dry.sample_rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub y_d: AudioBuffer,
    pub y_r: AudioBuffer,
    pub y_n: AudioBuffer,
    pub x: AudioBuffer,
    pub snr_db: f64,
    pub drr_db: f64,
}

pub const DEFAULT_DECAY_TAU: f64 = 0.05;
pub const DEFAULT_DELAY: usize = 48;

/// Scene with the default toy reverb (50 ms decay, 3 ms pre-delay).
pub fn make_scene<R: Rng + ?Sized>(dry: &AudioBuffer, noise: &AudioBuffer, snr_db: f64, drr_db: f64, rng: &mut R) -> Result<SyntheticScene> {
    make_scene_with(dry, noise, snr_db, drr_db, DEFAULT_DECAY_TAU, DEFAULT_DELAY, rng)
}

/// `y_d = dry`; `y_r` is the reverb tail truncated to the dry length and
/// scaled to `drr_db` below `y_d`; `y_n` is `noise` scaled so that
/// `SNR(y_d + y_r, y_n) = snr_db`.
pub fn make_scene_with<R: Rng + ?Sized>(
    dry: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    drr_db: f64,
    decay_tau: f64,
    delay: usize,
    rng: &mut R,
) -> Result<SyntheticScene> {
    if noise.len() < dry.len() {
        return Err(Error::InvalidArgument(format!(
            "noise has {} samples, dry {}",
            noise.len(),
            dry.len()
        )));
    }
    let ed = dry.energy();
    if ed == 0.0 || energy(&noise.samples[..dry.len()]) == 0.0 {
        return Err(Error::InvalidArgument("make_scene needs nonzero dry and noise".into()));
    }
    let mut tail = synth_reverb(dry, decay_tau, delay, rng)?.samples;
    tail.truncate(dry.len());
    let er = energy(&tail);
    let gr = if er == 0.0 {
        0.0
    } else {
        (ed / (er * 10f64.powf(drr_db / 10.0))).sqrt()
    };
    let y_r: Vec<f64> = tail.iter().map(|v| gr * v).collect();
    let signal: Vec<f64> = dry.samples.iter().zip(&y_r).map(|(a, b)| a + b).collect();
    let raw = &noise.samples[..dry.len()];
    let gn = (energy(&signal) / (energy(raw) * 10f64.powf(snr_db / 10.0))).sqrt();
    let y_n: Vec<f64> = raw.iter().map(|v| gn * v).collect();
    let x: Vec<f64> = signal.iter().zip(&y_n).map(|(s, n)| s + n).collect();
    let sr = dry.sample_rate;
    Ok(SyntheticScene {
        y_d: dry.clone(),
        y_r: AudioBuffer::new(y_r, sr),
        y_n: AudioBuffer::new(y_n, sr),
        x: AudioBuffer::new(x, sr),
        snr_db,
        drr_db,
    })
}

/// `Y / X` per bin, 0 where the mixture bin is negligible.
pub fn ideal_mask(y: &ComplexSpectrogram, x: &ComplexSpectrogram) -> Vec<Complex64> {
    y.data
        .iter()
        .zip(&x.data)
        .map(|(a, b)| {
            if b.norm() < 1e-12 {
                Complex64::new(0.0, 0.0)
            } else {
                a / b
            }
        })
        .collect()
}

const SIGMA_CLAMP: f64 = 1e-12;

/// Heads of one pair whose target mask is `m` (and whose complement is
/// `1 - m`): `beta = |m| + |1 - m|`, `sigma = |m| / beta`, sign from `Im m`.
pub fn invert_pair(m: Complex64) -> PairHeads {
    let mk = m.norm();
    let mn = (Complex64::new(1.0, 0.0) - m).norm();
    let beta = mk + mn;
    let sigma = (mk / beta).clamp(SIGMA_CLAMP, 1.0 - SIGMA_CLAMP);
    let excess = (beta - 1.0).max(SIGMA_CLAMP);
    PairHeads {
        z_k: (sigma / (1.0 - sigma)).ln(),
        z_notk: 0.0,
        beta_raw: excess.exp_m1().ln(),
        sign_logits: if m.im >= 0.0 { [1.0, 0.0] } else { [0.0, 1.0] },
    }
}

/// Heads (`T x F x 10`) reproducing the given direct and noise masks.
pub fn invert_heads(direct: &[Complex64], noise: &[Complex64]) -> Vec<f32> {
    let mut out = Vec::with_capacity(direct.len() * HEAD_CHANNELS);
    for (d, n) in direct.iter().zip(noise) {
        let h = PhmHeads {
            direct: invert_pair(*d),
            noise: invert_pair(*n),
        };
        out.extend_from_slice(&h.to_array());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::energy_ratio_db;
    use crate::phm::assemble_pair_with_sign;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 16_000)
    }

    #[test]
    fn reverb_is_linear_and_delayed() {
        let a = noise(400, 1);
        let b = noise(400, 2);
        let sum = AudioBuffer::new(a.samples.iter().zip(&b.samples).map(|(p, q)| p + 2.0 * q).collect(), 16_000);
        let run = |x: &AudioBuffer| synth_reverb(x, 0.01, 30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let (ra, rb, rs) = (run(&a), run(&b), run(&sum));
        for i in 0..rs.len() {
            assert!((rs.samples[i] - ra.samples[i] - 2.0 * rb.samples[i]).abs() < 1e-12);
        }
        assert!(ra.samples[..30].iter().all(|&v| v == 0.0));
        assert!(ra.samples[30] != 0.0);
    }

    #[test]
    fn long_delay_never_overlaps() {
        let x = noise(100, 3);
        let r = synth_reverb(&x, 0.001, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(r.samples[..200].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vanishing_decay_vanishing_energy() {
        let x = noise(500, 4);
        let e = |tau| synth_reverb(&x, tau, 0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().energy();
        assert!(e(1e-6) < 1e-40);
        assert!(e(1e-4) < e(1e-2));
        assert!(synth_reverb(&x, 0.0, 0, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    #[test]
    fn scene_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = make_scene(&noise(8000, 6), &noise(9000, 7), 5.0, 8.0, &mut rng).unwrap();
        assert!((energy_ratio_db(&s.y_d.samples, &s.y_r.samples) - 8.0).abs() < 1e-9);
        let sig: Vec<f64> = s.y_d.samples.iter().zip(&s.y_r.samples).map(|(a, b)| a + b).collect();
        assert!((energy_ratio_db(&sig, &s.y_n.samples) - 5.0).abs() < 1e-9);
        for i in 0..s.x.len() {
            assert_eq!(s.x.samples[i], (s.y_d.samples[i] + s.y_r.samples[i]) + s.y_n.samples[i]);
        }
        let far = make_scene(&noise(2000, 6), &noise(2000, 7), 5.0, 400.0, &mut rng).unwrap();
        assert!(far.y_r.samples.iter().all(|v| v.abs() < 1e-15));
        let silent = AudioBuffer::new(vec![0.0; 2000], 16_000);
        assert!(make_scene(&silent, &noise(2000, 1), 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn inversion_reproduces_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let m = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let h = invert_pair(m);
            let xi = if h.sign_logits[1] > h.sign_logits[0] { -1.0 } else { 1.0 };
            let p = assemble_pair_with_sign(h.z_k, h.z_notk, h.beta_raw, xi);
            assert!((p.mask_k() - m).norm() < 1e-6, "{m} -> {}", p.mask_k());
        }
    }
}
