//! STFT analysis/synthesis, phase demodulation and power-law compression.
//!
//! Frames are left-aligned (frame `t` covers samples `[t*hop, t*hop + window)`),
//! there is no centre padding. With the default configuration the real FFT's
//! Nyquist bin is split off the time-frequency grid so that the grid has
//! `window/2` bins; the Nyquist column is carried alongside the grid and put
//! back on synthesis so that analysis followed by synthesis is exact.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
    /// Drop the Nyquist bin from the grid (network domain). Off for the
    /// multi-resolution loss, which uses all `window/2 + 1` bins.
    pub drop_nyquist: bool,
    window: Vec<f64>,
    cola_sum: f64,
}

impl StftConfig {
    pub fn new(window_size: usize, hop_size: usize, sample_rate: u32) -> Result<Self> {
        if !window_size.is_power_of_two() || window_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "window size {window_size} is not a power of two"
            )));
        }
        if hop_size == 0 || window_size % hop_size != 0 {
            return Err(Error::InvalidArgument(format!(
                "hop size {hop_size} does not divide window size {window_size}"
            )));
        }
        let window = periodic_hann(window_size);
        // Sum of squared windows at every sample position; constant when COLA holds.
        let cola_at = |n: usize| -> f64 {
            (0..window_size / hop_size)
                .map(|k| window[(n + k * hop_size) % window_size].powi(2))
                .sum()
        };
        let cola_sum = cola_at(0);
        if (0..hop_size).any(|n| (cola_at(n) - cola_sum).abs() > 1e-12 * cola_sum.max(1.0)) {
            return Err(Error::InvalidArgument(format!(
                "Hann window {window_size} with hop {hop_size} does not satisfy COLA"
            )));
        }
        Ok(Self {
            window_size,
            hop_size,
            sample_rate,
            drop_nyquist: true,
            window,
            cola_sum,
        })
    }

    pub fn with_nyquist(mut self) -> Self {
        self.drop_nyquist = false;
        self
    }

    /// Number of bins on the time-frequency grid.
    pub fn bins(&self) -> usize {
        if self.drop_nyquist {
            self.window_size / 2
        } else {
            self.window_size / 2 + 1
        }
    }

    pub fn fft_size(&self) -> usize {
        self.window_size
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.hop_size + 1
        }
    }

    /// Hop duration in milliseconds.
    pub fn hop_ms(&self) -> f64 {
        1000.0 * self.hop_size as f64 / self.sample_rate as f64
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::new(512, 128, 16_000).expect("default STFT config is valid")
    }
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Time x frequency grid of complex STFT values, row-major by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
    /// Real-valued Nyquist column split off the grid, one value per frame.
    /// Empty when the grid already holds the Nyquist bin or it was discarded.
    pub nyquist: Vec<f64>,
}

impl ComplexSpectrogram {
    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            frames,
            bins,
            data: vec![Complex64::new(0.0, 0.0); frames * bins],
            nyquist: Vec::new(),
        }
    }

    #[inline]
    pub fn get(&self, t: usize, f: usize) -> Complex64 {
        self.data[t * self.bins + f]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        &mut self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn nyquist_at(&self, t: usize) -> f64 {
        self.nyquist.get(t).copied().unwrap_or(0.0)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Reusable FFT plans for one [`StftConfig`].
pub struct Stft {
    cfg: StftConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(cfg.window_size);
        let inverse = planner.plan_fft_inverse(cfg.window_size);
        Self {
            cfg,
            forward,
            inverse,
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Windowed FFT of one `window_size` frame. Writes `cfg.bins()` bins and
    /// returns the Nyquist value (real for real input).
    pub fn analyze_frame(&self, frame: &[f64], out: &mut [Complex64]) -> f64 {
        let n = self.cfg.window_size;
        debug_assert_eq!(frame.len(), n);
        debug_assert_eq!(out.len(), self.cfg.bins());
        let mut buf: Vec<Complex64> = frame
            .iter()
            .zip(&self.cfg.window)
            .map(|(x, w)| Complex64::new(x * w, 0.0))
            .collect();
        self.forward.process(&mut buf);
        out.copy_from_slice(&buf[..out.len()]);
        buf[n / 2].re
    }

    /// Inverse FFT of one frame's bins, multiplied by the synthesis window and
    /// divided by the COLA sum so that plain overlap-add reconstructs.
    pub fn synthesize_frame(&self, bins: &[Complex64], nyquist: f64, out: &mut [f64]) {
        let n = self.cfg.window_size;
        let half = n / 2;
        debug_assert_eq!(out.len(), n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        // Hermitian completion: DC and Nyquist real, k and n-k conjugate.
        buf[0] = Complex64::new(bins[0].re, 0.0);
        for k in 1..half {
            buf[k] = bins[k];
            buf[n - k] = bins[k].conj();
        }
        let nyq = if self.cfg.drop_nyquist {
            nyquist
        } else {
            bins[half].re
        };
        buf[half] = Complex64::new(nyq, 0.0);
        self.inverse.process(&mut buf);
        let scale = 1.0 / (n as f64 * self.cfg.cola_sum);
        for ((o, b), w) in out.iter_mut().zip(&buf).zip(&self.cfg.window) {
            *o = b.re * w * scale;
        }
    }
}

/// Short-time Fourier transform with left-aligned frames.
pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    stft_samples(&audio.samples, cfg)
}

pub(crate) fn stft_samples(samples: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    if samples.len() < cfg.window_size {
        return Err(Error::InsufficientSamples {
            needed: cfg.window_size,
            got: samples.len(),
        });
    }
    let plan = Stft::new(cfg.clone());
    let frames = cfg.num_frames(samples.len());
    let bins = cfg.bins();
    let mut spec = ComplexSpectrogram::zeros(frames, bins);
    if cfg.drop_nyquist {
        spec.nyquist = vec![0.0; frames];
    }
    for t in 0..frames {
        let start = t * cfg.hop_size;
        let frame = &samples[start..start + cfg.window_size];
        let nyq = plan.analyze_frame(frame, spec.frame_mut(t));
        if cfg.drop_nyquist {
            spec.nyquist[t] = nyq;
        }
    }
    Ok(spec)
}

/// Inverse STFT by windowed overlap-add. Output has
/// `(frames - 1) * hop + window` samples.
pub fn istft(spec: &ComplexSpectrogram, cfg: &StftConfig) -> Result<AudioBuffer> {
    if spec.bins != cfg.bins() {
        return Err(Error::shape(
            "istft",
            format!("spectrogram has {} bins, config expects {}", spec.bins, cfg.bins()),
        ));
    }
    if !spec.nyquist.is_empty() && spec.nyquist.len() != spec.frames {
        return Err(Error::shape(
            "istft",
            format!(
                "nyquist column has {} values for {} frames",
                spec.nyquist.len(),
                spec.frames
            ),
        ));
    }
    let plan = Stft::new(cfg.clone());
    let len = if spec.frames == 0 {
        0
    } else {
        (spec.frames - 1) * cfg.hop_size + cfg.window_size
    };
    let mut out = vec![0.0; len];
    let mut frame = vec![0.0; cfg.window_size];
    for t in 0..spec.frames {
        plan.synthesize_frame(spec.frame(t), spec.nyquist_at(t), &mut frame);
        let start = t * cfg.hop_size;
        for (o, v) in out[start..start + cfg.window_size].iter_mut().zip(&frame) {
            *o += v;
        }
    }
    Ok(AudioBuffer::new(out, cfg.sample_rate))
}

/// Cosine and sine of the hop-demodulated phase of one frame.
///
/// The expected phase advance `2*pi*f*hop*t/N` is reduced modulo `N` in
/// integers before converting to radians so large frame indices stay exact.
pub fn demodulate_frame(
    bins: &[Complex64],
    frame_index: u64,
    cfg: &StftConfig,
    cos_out: &mut [f64],
    sin_out: &mut [f64],
) {
    let n = cfg.window_size as u64;
    let advance = (cfg.hop_size as u64 % n) * (frame_index % n) % n;
    for (f, x) in bins.iter().enumerate() {
        let mag = x.norm();
        if mag == 0.0 {
            cos_out[f] = 1.0;
            sin_out[f] = 0.0;
            continue;
        }
        let cycles = (f as u64 % n) * advance % n;
        let theta = wrap_phase(x.arg() - 2.0 * PI * cycles as f64 / n as f64);
        cos_out[f] = theta.cos();
        sin_out[f] = theta.sin();
    }
}

/// Returns `(cos, sin)` maps, each `T x F`, of the demodulated phase.
pub fn demodulate_phase(spec: &ComplexSpectrogram, cfg: &StftConfig) -> (Vec<f64>, Vec<f64>) {
    let mut cos = vec![0.0; spec.data.len()];
    let mut sin = vec![0.0; spec.data.len()];
    for t in 0..spec.frames {
        let range = t * spec.bins..(t + 1) * spec.bins;
        demodulate_frame(
            spec.frame(t),
            t as u64,
            cfg,
            &mut cos[range.clone()],
            &mut sin[range],
        );
    }
    (cos, sin)
}

/// Wrap to `(-pi, pi]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut w = theta % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Elementwise `mag^exponent`.
pub fn power_compress(mag: &[f64], exponent: f64) -> Result<Vec<f64>> {
    if mag.iter().any(|&m| m < 0.0) {
        return Err(Error::NegativeInput("power_compress"));
    }
    Ok(mag.iter().map(|&m| m.powf(exponent)).collect())
}
