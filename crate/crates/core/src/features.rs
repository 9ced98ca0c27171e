//! Four-channel input features: log-magnitude, PCEN, and the cosine/sine of
//! the demodulated phase.

use rustfft::num_complex::Complex64;

use crate::dsp::{demodulate_frame, ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};

pub const FEATURE_CHANNELS: usize = 4;
pub const LOG_EPS: f64 = 1e-7;

/// Per-frequency PCEN parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PcenParams {
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub r: Vec<f64>,
    pub eps: f64,
}

impl PcenParams {
    pub const DEFAULT_S: f64 = 0.025;
    pub const DEFAULT_ALPHA: f64 = 0.98;
    pub const DEFAULT_DELTA: f64 = 2.0;
    pub const DEFAULT_R: f64 = 0.5;
    pub const DEFAULT_EPS: f64 = 1e-6;

    pub fn uniform(bins: usize, s: f64, alpha: f64, delta: f64, r: f64, eps: f64) -> Self {
        Self {
            s: vec![s; bins],
            alpha: vec![alpha; bins],
            delta: vec![delta; bins],
            r: vec![r; bins],
            eps,
        }
    }

    pub fn with_defaults(bins: usize) -> Self {
        Self::uniform(
            bins,
            Self::DEFAULT_S,
            Self::DEFAULT_ALPHA,
            Self::DEFAULT_DELTA,
            Self::DEFAULT_R,
            Self::DEFAULT_EPS,
        )
    }

    pub fn bins(&self) -> usize {
        self.s.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.s.len();
        if self.alpha.len() != n || self.delta.len() != n || self.r.len() != n {
            return Err(Error::shape("pcen", "parameter vectors differ in length"));
        }
        let bad = |what: &str, f: usize| {
            Err(Error::InvalidArgument(format!("pcen.{what}[{f}] out of range")))
        };
        for f in 0..n {
            if !(self.s[f] > 0.0 && self.s[f] <= 1.0) {
                return bad("s", f);
            }
            if !(self.alpha[f] >= 0.0 && self.alpha[f] <= 1.0) {
                return bad("alpha", f);
            }
            if !(self.delta[f] > 0.0 && self.delta[f].is_finite()) {
                return bad("delta", f);
            }
            if !(self.r[f] > 0.0 && self.r[f] <= 1.0) {
                return bad("r", f);
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument("pcen eps must be positive".into()));
        }
        Ok(())
    }
}

/// First-order IIR smoother state, one value per frequency.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PcenState {
    /// `None` until the first frame arrives; the smoother then starts at that
    /// frame's energy.
    m: Option<Vec<f64>>,
}

impl PcenState {
    pub fn new() -> Self {
        Self { m: None }
    }

    pub fn smoother(&self) -> Option<&[f64]> {
        self.m.as_deref()
    }

    pub fn reset(&mut self) {
        self.m = None;
    }
}

/// One causal PCEN step. `energy` is the magnitude spectrum of the frame.
pub fn pcen_step(energy: &[f64], state: &mut PcenState, params: &PcenParams) -> Result<Vec<f64>> {
    let mut out = vec![0.0; energy.len()];
    pcen_step_into(energy, state, params, &mut out)?;
    Ok(out)
}

pub(crate) fn pcen_step_into(
    energy: &[f64],
    state: &mut PcenState,
    params: &PcenParams,
    out: &mut [f64],
) -> Result<()> {
    if energy.len() != params.bins() {
        return Err(Error::shape(
            "pcen",
            format!("{} energy bins vs {} parameter bins", energy.len(), params.bins()),
        ));
    }
    if energy.iter().any(|&e| e < 0.0) {
        return Err(Error::NegativeInput("pcen_step"));
    }
    let m = state.m.get_or_insert_with(|| energy.to_vec());
    for f in 0..energy.len() {
        let e = energy[f];
        let s = params.s[f];
        m[f] = (1.0 - s) * m[f] + s * e;
        let (delta, r) = (params.delta[f], params.r[f]);
        out[f] = (e / (params.eps + m[f]).powf(params.alpha[f]) + delta).powf(r) - delta.powf(r);
    }
    Ok(())
}

/// `ln(|X| + 1e-7)` over the whole grid.
pub fn log_magnitude(spec: &ComplexSpectrogram) -> Vec<f64> {
    spec.data.iter().map(|c| (c.norm() + LOG_EPS).ln()).collect()
}

/// `T x F x 4` network input, channel order
/// `[log-magnitude, PCEN, cos(phase), sin(phase)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<f32>,
}

impl FeatureTensor {
    pub fn frame(&self, t: usize) -> &[f32] {
        let stride = self.bins * FEATURE_CHANNELS;
        &self.data[t * stride..(t + 1) * stride]
    }
}

/// Build one frame of features (`F x 4`, channel-minor) and advance the PCEN
/// state exactly once.
pub fn build_features(
    frame: &[Complex64],
    frame_index: u64,
    stft: &StftConfig,
    pcen_state: &mut PcenState,
    params: &PcenParams,
) -> Result<Vec<f32>> {
    let mut out = vec![0.0; frame.len() * FEATURE_CHANNELS];
    build_features_into(frame, frame_index, stft, pcen_state, params, &mut out)?;
    Ok(out)
}

pub(crate) fn build_features_into(
    frame: &[Complex64],
    frame_index: u64,
    stft: &StftConfig,
    pcen_state: &mut PcenState,
    params: &PcenParams,
    out: &mut [f32],
) -> Result<()> {
    let bins = frame.len();
    if out.len() != bins * FEATURE_CHANNELS {
        return Err(Error::shape("features", "output buffer has wrong length"));
    }
    let mag: Vec<f64> = frame.iter().map(|c| c.norm()).collect();
    let mut pcen = vec![0.0; bins];
    pcen_step_into(&mag, pcen_state, params, &mut pcen)?;
    let mut cos = vec![0.0; bins];
    let mut sin = vec![0.0; bins];
    demodulate_frame(frame, frame_index, stft, &mut cos, &mut sin);
    for f in 0..bins {
        let o = &mut out[f * FEATURE_CHANNELS..(f + 1) * FEATURE_CHANNELS];
        o[0] = (mag[f] + LOG_EPS).ln() as f32;
        o[1] = pcen[f] as f32;
        o[2] = cos[f] as f32;
        o[3] = sin[f] as f32;
    }
    Ok(())
}

/// Features for a whole spectrogram, frame `t` demodulated with index `t`.
pub fn build_feature_tensor(
    spec: &ComplexSpectrogram,
    stft: &StftConfig,
    params: &PcenParams,
) -> Result<FeatureTensor> {
    let mut state = PcenState::new();
    let stride = spec.bins * FEATURE_CHANNELS;
    let mut data = vec![0.0; spec.frames * stride];
    for t in 0..spec.frames {
        build_features_into(
            spec.frame(t),
            t as u64,
            stft,
            &mut state,
            params,
            &mut data[t * stride..(t + 1) * stride],
        )?;
    }
    Ok(FeatureTensor {
        frames: spec.frames,
        bins: spec.bins,
        data,
    })
}
