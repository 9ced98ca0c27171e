//! Synchronous bodies of the service operations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trunet_api::*;
use trunet_core::engine::{benchmark_rtf, calls_for, remix};
use trunet_core::graph::{parameter_count, random_init_with};
use trunet_core::quant::calibrate_network;
use trunet_core::wav::{decode_wav, encode_wav, WavFormat, SAMPLE_RATE};
use trunet_core::{enhance_streaming, AudioBuffer, Network, SignMode, SignSampler, TrunetConfig, WeightStore};

use crate::error::ApiError;

/// Seed of the synthetic clips used to calibrate for `bench --int8`.
const BENCH_CALIB_SEED: u64 = 0x0b3c;

pub fn init_weights(req: &InitRequest) -> Result<WeightsBlob, ApiError> {
    let cfg = if req.without_fgru {
        TrunetConfig::without_fgru()
    } else {
        TrunetConfig::default()
    };
    let store = random_init_with(&cfg, req.seed)?;
    Ok(WeightsBlob {
        weights: Blob(store.to_bytes()),
    })
}

pub fn inspect(bytes: &[u8]) -> Result<InspectReport, ApiError> {
    let store = WeightStore::from_bytes(bytes)?;
    Ok(InspectReport {
        tensors: store
            .iter()
            .map(|(name, t)| TensorInfo {
                name: name.to_string(),
                dtype: t.dtype().as_str().to_string(),
                shape: t.shape.clone(),
                numel: t.numel(),
            })
            .collect(),
        total_parameters: parameter_count(&store),
        quantized: store.is_quantized(),
        size_bytes: bytes.len(),
    })
}

fn decode_audio(blob: &Blob, what: &str) -> Result<AudioBuffer, ApiError> {
    decode_wav(&blob.0).map_err(|e| ApiError::data(format!("{what}: {e}")))
}

pub fn quantize(req: &QuantizeRequest) -> Result<WeightsBlob, ApiError> {
    let store = WeightStore::from_bytes(&req.weights.0)?;
    let clips = req
        .calibration
        .iter()
        .enumerate()
        .map(|(i, b)| decode_audio(b, &format!("calibration clip {i}")))
        .collect::<Result<Vec<_>, _>>()?;
    let q = trunet_core::quantize_model(&store, &clips)?;
    Ok(WeightsBlob { weights: Blob(q.to_bytes()) })
}

pub fn load_network(bytes: &[u8]) -> Result<(Network, usize, bool), ApiError> {
    let store = WeightStore::from_bytes(bytes)?;
    let net = Network::from_store(&store)?;
    Ok((net, parameter_count(&store), store.is_quantized()))
}

pub fn sampler(opts: &SignOptions) -> Result<SignSampler, ApiError> {
    match *opts {
        SignOptions::Hard => Ok(SignSampler::hard()),
        SignOptions::Gumbel { tau, seed } => {
            SignSampler::new(SignMode::Gumbel { tau }, seed).map_err(|e| ApiError::usage(e.to_string()))
        }
    }
}

/// INT8 twin of an f32 network calibrated on `clips`; quantized networks
/// are returned as they are.
fn as_int8(net: &Network, clips: &[AudioBuffer]) -> Result<Option<Network>, ApiError> {
    if net.is_quantized() {
        return Ok(None);
    }
    let stats = calibrate_network(net, clips)?;
    Ok(Some(Network::from_store(&net.quantized_store(&stats)?)?))
}

pub fn enhance(net: &Network, req: &EnhanceRequest) -> Result<EnhanceResponse, ApiError> {
    if req.emit.is_empty() {
        return Err(ApiError::usage("nothing to emit"));
    }
    if !req.remix_db.is_finite() {
        return Err(ApiError::usage("remix level must be finite"));
    }
    let x = decode_audio(&req.audio, "input")?;
    if x.is_empty() {
        return Err(ApiError::data("input has no samples"));
    }
    let sampler = sampler(&req.sign)?;
    let converted = if req.int8 { as_int8(net, std::slice::from_ref(&x))? } else { None };
    let net = converted.as_ref().unwrap_or(net);
    let sources = enhance_streaming(net, &x, sampler)?;
    let mut outputs = Vec::with_capacity(req.emit.len());
    for &out in &req.emit {
        let audio = match out {
            Output::Direct => sources.direct.clone(),
            Output::Reverb => sources.reverb.clone(),
            Output::Noise => sources.noise.clone(),
            Output::Mix => remix(&sources.direct, &sources.reverb, req.remix_db)?,
        };
        outputs.push(NamedAudio {
            output: out,
            wav: Blob(encode_wav(&audio, WavFormat::Float32)),
        });
    }
    let cfg = net.stft_config();
    Ok(EnhanceResponse {
        outputs,
        int8: net.is_quantized(),
        samples: x.len(),
        frames: calls_for(x.len(), &cfg) as u64,
        latency_samples: cfg.window_size - cfg.hop_size,
    })
}

fn bench_calibration() -> Vec<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_CALIB_SEED);
    (0..2)
        .map(|_| {
            let s = (0..SAMPLE_RATE as usize).map(|_| rng.random_range(-0.3..0.3)).collect();
            AudioBuffer::new(s, SAMPLE_RATE)
        })
        .collect()
}

pub fn bench(net: &Network, req: &BenchRequest) -> Result<RtfReport, ApiError> {
    if req.frames == 0 {
        return Err(ApiError::usage("frames must be at least 1"));
    }
    let converted = if req.int8 { as_int8(net, &bench_calibration())? } else { None };
    let net = converted.as_ref().unwrap_or(net);
    let r = benchmark_rtf(net, req.frames, req.seed)?;
    Ok(RtfReport {
        mean_frame_ms: r.mean_frame_ms,
        p95_frame_ms: r.p95_frame_ms,
        rtf: r.rtf,
        frames_measured: r.frames_measured,
        int8: r.int8,
    })
}

pub fn gradcheck(req: &GradcheckRequest) -> Result<GradcheckReport, ApiError> {
    if req.trials == 0 {
        return Err(ApiError::usage("trials must be at least 1"));
    }
    let r = trunet_core::losses::gradcheck(req.trials, req.seed)?;
    Ok(GradcheckReport {
        trials: r.trials,
        max_relative_error: r.max_relative_error,
        tolerance: r.tolerance,
        passed: r.passed,
    })
}
