#![allow(dead_code)]

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trunet_core::testkit::{make_scene, SyntheticScene};
use trunet_core::{random_init, AudioBuffer, Network, WeightStore};

pub const SR: u32 = 16_000;

pub fn store() -> &'static WeightStore {
    static S: OnceLock<WeightStore> = OnceLock::new();
    S.get_or_init(|| random_init(0))
}

pub fn network() -> &'static Network {
    static N: OnceLock<Network> = OnceLock::new();
    N.get_or_init(|| Network::from_store(store()).unwrap())
}

pub fn white(n: usize, amp: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioBuffer::new((0..n).map(|_| rng.random_range(-amp..amp)).collect(), SR)
}

/// Voiced-speech stand-in: a few harmonics of a gliding pitch under a
/// syllable-rate envelope.
pub fn voiced(n: usize, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = rng.random_range(90.0..220.0);
    let glide = rng.random_range(-0.3..0.3);
    let rate = rng.random_range(3.0..6.0);
    let amps: Vec<f64> = (1..=12).map(|h| rng.random_range(0.2..1.0) / h as f64).collect();
    let mut phase = 0.0f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            phase += 2.0 * std::f64::consts::PI * f0 * (1.0 + glide * t) / SR as f64;
            let env = (0.5 - 0.5 * (2.0 * std::f64::consts::PI * rate * t).cos()).powi(2);
            let s: f64 = amps.iter().enumerate().map(|(h, a)| a * ((h + 1) as f64 * phase).sin()).sum();
            0.1 * env * s
        })
        .collect();
    AudioBuffer::new(samples, SR)
}

pub fn scene(n: usize, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let snr = rng.random_range(0.0..15.0);
    let drr = rng.random_range(0.0..12.0);
    make_scene(&voiced(n, seed), &white(n, 1.0, seed + 1000), snr, drr, &mut rng).unwrap()
}
