//! Frame-by-frame enhancement with zero lookahead, its offline twin, remixing
//! and the RTF benchmark.
//!
//! Call `j` of [`StreamState::process_frame`] analyses the window ending at
//! input sample `(j + 1) * hop`; the analysis buffer starts out as zeros. The
//! emitted hop is the first fully overlap-added block, so output sample `m`
//! corresponds to input sample `m - (window - hop)`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use crate::dsp::{istft, stft_samples, AudioBuffer, ComplexSpectrogram, Stft, StftConfig};
use crate::error::{Error, Result};
use crate::features::{build_feature_tensor, build_features_into, FeatureTensor, PcenState, FEATURE_CHANNELS};
use crate::graph::{Network, TgruState};
use crate::losses::gaussian;
use crate::phm::{separate, separate_frame, SignSampler};

/// Direct, reverberant and noise signals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    pub direct: AudioBuffer,
    pub reverb: AudioBuffer,
    pub noise: AudioBuffer,
}

impl Sources {
    pub fn as_array(&self) -> [&AudioBuffer; 3] {
        [&self.direct, &self.reverb, &self.noise]
    }
}

/// One hop of output per source.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceChunk {
    pub direct: Vec<f64>,
    pub reverb: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Everything one stream carries between frames. Fixed size.
#[derive(Debug)]
pub struct StreamState {
    stft: Stft,
    analysis: Vec<f64>,
    ola: [Vec<f64>; 3],
    pcen: PcenState,
    tgru: TgruState,
    sampler: SignSampler,
    frame_index: u64,
    bins: Vec<Complex64>,
    features: Vec<f32>,
    sep: [Vec<Complex64>; 3],
    synth: Vec<f64>,
}

impl StreamState {
    pub fn new(network: &Network, sampler: SignSampler) -> Self {
        let cfg = network.stft_config();
        let (w, b) = (cfg.window_size, cfg.bins());
        Self {
            stft: Stft::new(cfg),
            analysis: vec![0.0; w],
            ola: [vec![0.0; w], vec![0.0; w], vec![0.0; w]],
            pcen: PcenState::new(),
            tgru: network.new_tgru_state(),
            sampler,
            frame_index: 0,
            bins: vec![Complex64::new(0.0, 0.0); b],
            features: vec![0.0; b * FEATURE_CHANNELS],
            sep: [
                vec![Complex64::new(0.0, 0.0); b],
                vec![Complex64::new(0.0, 0.0); b],
                vec![Complex64::new(0.0, 0.0); b],
            ],
            synth: vec![0.0; w],
        }
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn hop_size(&self) -> usize {
        self.stft.config().hop_size
    }

    /// Samples of algorithmic delay between input and output.
    pub fn latency(&self) -> usize {
        let c = self.stft.config();
        c.window_size - c.hop_size
    }

    /// Number of `f64`/`f32`/complex slots held; constant over a stream.
    pub fn footprint(&self) -> usize {
        self.analysis.len()
            + self.ola.iter().map(Vec::len).sum::<usize>()
            + self.pcen.smoother().map_or(0, <[f64]>::len)
            + self.tgru.h.len()
            + self.bins.len()
            + self.features.len()
            + self.sep.iter().map(Vec::len).sum::<usize>()
            + self.synth.len()
    }

    /// Consume one hop of input and emit one hop per source.
    pub fn process_frame(&mut self, network: &Network, input: &[f64]) -> Result<SourceChunk> {
        let hop = self.hop_size();
        if input.len() != hop {
            return Err(Error::InvalidArgument(format!(
                "process_frame expects exactly {hop} samples, got {}",
                input.len()
            )));
        }
        let w = self.analysis.len();
        self.analysis.copy_within(hop.., 0);
        self.analysis[w - hop..].copy_from_slice(input);
        let nyq = self.stft.analyze_frame(&self.analysis, &mut self.bins);
        build_features_into(
            &self.bins,
            self.frame_index,
            self.stft.config(),
            &mut self.pcen,
            network.pcen(),
            &mut self.features,
        )?;
        let heads = network.forward_frame(&self.features, &mut self.tgru)?;
        let [d, r, n] = &mut self.sep;
        let nyqs = separate_frame(&self.bins, nyq, &heads.heads, &mut self.sampler, d, r, n)?;
        let mut out: [Vec<f64>; 3] = Default::default();
        for s in 0..3 {
            self.stft.synthesize_frame(&self.sep[s], nyqs[s], &mut self.synth);
            let ola = &mut self.ola[s];
            for (o, v) in ola.iter_mut().zip(&self.synth) {
                *o += v;
            }
            out[s] = ola[..hop].to_vec();
            ola.copy_within(hop.., 0);
            ola[w - hop..].fill(0.0);
        }
        self.frame_index += 1;
        let [direct, reverb, noise] = out;
        Ok(SourceChunk { direct, reverb, noise })
    }
}

/// Number of calls needed so every input sample is fully reconstructed.
/// Number of `process_frame` calls that flush a clip of `len` samples.
pub fn calls_for(len: usize, cfg: &StftConfig) -> usize {
    (len + cfg.window_size - cfg.hop_size).div_ceil(cfg.hop_size)
}

/// The stream's input as one signal: leading `window - hop` zeros, the
/// clip, and trailing zeros to a whole number of hops.
fn padded_signal(x: &[f64], cfg: &StftConfig) -> Vec<f64> {
    let lead = cfg.window_size - cfg.hop_size;
    let calls = calls_for(x.len(), cfg);
    let mut p = vec![0.0; (calls - 1) * cfg.hop_size + cfg.window_size];
    p[lead..lead + x.len()].copy_from_slice(x);
    p
}

fn check_rate(x: &AudioBuffer, cfg: &StftConfig) -> Result<()> {
    if x.sample_rate != cfg.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "expected {} Hz audio, got {} Hz",
            cfg.sample_rate, x.sample_rate
        )));
    }
    if x.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    Ok(())
}

/// Run a whole clip through [`StreamState::process_frame`] and realign the
/// outputs with the input.
pub fn enhance_streaming(network: &Network, x: &AudioBuffer, sampler: SignSampler) -> Result<Sources> {
    let cfg = network.stft_config();
    check_rate(x, &cfg)?;
    let hop = cfg.hop_size;
    let mut state = StreamState::new(network, sampler);
    let calls = calls_for(x.len(), &cfg);
    let mut input = x.samples.clone();
    input.resize(calls * hop, 0.0);
    let mut acc: [Vec<f64>; 3] = Default::default();
    for chunk in input.chunks_exact(hop) {
        let c = state.process_frame(network, chunk)?;
        acc[0].extend(c.direct);
        acc[1].extend(c.reverb);
        acc[2].extend(c.noise);
    }
    let lat = state.latency();
    let cut = |v: &Vec<f64>| AudioBuffer::new(v[lat..lat + x.len()].to_vec(), x.sample_rate);
    Ok(Sources {
        direct: cut(&acc[0]),
        reverb: cut(&acc[1]),
        noise: cut(&acc[2]),
    })
}

/// Features of the padded stream signal, frame `t` demodulated with index `t`.
pub fn stream_features(x: &AudioBuffer, network: &Network) -> Result<FeatureTensor> {
    let cfg = network.stft_config();
    check_rate(x, &cfg)?;
    let spec = stft_samples(&padded_signal(&x.samples, &cfg), &cfg)?;
    build_feature_tensor(&spec, &cfg, network.pcen())
}

/// Spectrogram of the padded stream signal, one frame per `process_frame` call.
pub fn stream_spectrogram(x: &AudioBuffer, network: &Network) -> Result<ComplexSpectrogram> {
    let cfg = network.stft_config();
    check_rate(x, &cfg)?;
    stft_samples(&padded_signal(&x.samples, &cfg), &cfg)
}

/// Separate `spec` (from [`stream_spectrogram`]) with precomputed heads and
/// cut the sources back to the input alignment of `len` samples.
pub fn sources_from_heads(
    network: &Network,
    spec: &ComplexSpectrogram,
    heads: &[f32],
    len: usize,
    sampler: &mut SignSampler,
) -> Result<Sources> {
    let cfg = network.stft_config();
    let sep = separate(spec, heads, sampler)?;
    let lead = cfg.window_size - cfg.hop_size;
    let cut = |s| -> Result<AudioBuffer> {
        let y = istft(s, &cfg)?;
        Ok(AudioBuffer::new(y.samples[lead..lead + len].to_vec(), cfg.sample_rate))
    };
    Ok(Sources {
        direct: cut(&sep.direct)?,
        reverb: cut(&sep.reverb)?,
        noise: cut(&sep.noise)?,
    })
}

/// Whole-clip path: STFT, features and heads for all frames, separation,
/// inverse STFT. Matches [`enhance_streaming`].
pub fn enhance_offline(network: &Network, x: &AudioBuffer, mut sampler: SignSampler) -> Result<Sources> {
    let spec = stream_spectrogram(x, network)?;
    let feats = build_feature_tensor(&spec, &network.stft_config(), network.pcen())?;
    let heads = network.forward_offline(&feats)?;
    sources_from_heads(network, &spec, &heads, x.len(), &mut sampler)
}

/// Gain applied to `reverb` so that direct-to-reverb energy is `target_db`.
pub fn remix_gain(direct: &AudioBuffer, reverb: &AudioBuffer, target_db: f64) -> f64 {
    let (ed, er) = (direct.energy(), reverb.energy());
    if er == 0.0 {
        return 0.0;
    }
    (ed / (er * 10f64.powf(target_db / 10.0))).sqrt()
}

/// `direct + g * reverb` at the requested direct-to-reverb ratio.
pub fn remix(direct: &AudioBuffer, reverb: &AudioBuffer, target_db: f64) -> Result<AudioBuffer> {
    if direct.len() != reverb.len() {
        return Err(Error::shape(
            "remix",
            format!("direct has {} samples, reverb {}", direct.len(), reverb.len()),
        ));
    }
    let g = remix_gain(direct, reverb, target_db);
    let samples = direct.samples.iter().zip(&reverb.samples).map(|(d, r)| d + g * r).collect();
    Ok(AudioBuffer::new(samples, direct.sample_rate))
}

pub const WARMUP_FRAMES: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RtfReport {
    pub mean_frame_ms: f64,
    pub p95_frame_ms: f64,
    pub rtf: f64,
    pub frames_measured: usize,
    pub int8: bool,
}

/// Time `process_frame` on Gaussian noise; the first 16 frames are warm-up.
pub fn benchmark_rtf(network: &Network, n_frames: usize, seed: u64) -> Result<RtfReport> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one frame".into()));
    }
    let cfg = network.stft_config();
    let hop = cfg.hop_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = StreamState::new(network, SignSampler::hard());
    let mut chunk = vec![0.0; hop];
    let mut times = Vec::with_capacity(n_frames);
    for i in 0..WARMUP_FRAMES + n_frames {
        chunk.iter_mut().for_each(|v| *v = 0.1 * gaussian(&mut rng));
        let start = Instant::now();
        state.process_frame(network, &chunk)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if i >= WARMUP_FRAMES {
            times.push(ms);
        }
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let mut sorted = times.clone();
    sorted.sort_by(f64::total_cmp);
    let idx = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    Ok(RtfReport {
        mean_frame_ms: mean,
        p95_frame_ms: sorted[idx],
        rtf: mean / cfg.hop_ms(),
        frames_measured: times.len(),
        int8: network.is_quantized(),
    })
}
