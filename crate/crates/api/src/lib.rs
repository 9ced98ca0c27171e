//! JSON wire types shared by the enhancement service and its client.

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Binary payload carried as a base64 string.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct Blob(pub Vec<u8>);

impl fmt::Debug for Blob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Blob({} bytes)", self.0.len())
    }
}

impl Serialize for Blob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Blob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map(Blob).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    /// Bad request shape, argument or unknown resource.
    Usage,
    /// Malformed or unsupported input data.
    Data,
    /// A verification did not pass.
    Check,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitRequest {
    pub seed: u64,
    #[serde(default)]
    pub without_fgru: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsBlob {
    pub weights: Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub numel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    pub tensors: Vec<TensorInfo>,
    pub total_parameters: usize,
    pub quantized: bool,
    pub size_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeRequest {
    pub weights: Blob,
    /// WAV files.
    pub calibration: Vec<Blob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub id: String,
    pub quantized: bool,
    pub parameters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    Direct,
    Reverb,
    Noise,
    Mix,
}

impl Output {
    pub const ALL: [Output; 4] = [Output::Direct, Output::Reverb, Output::Noise, Output::Mix];

    pub fn name(self) -> &'static str {
        match self {
            Output::Direct => "direct",
            Output::Reverb => "reverb",
            Output::Noise => "noise",
            Output::Mix => "mix",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SignOptions {
    #[default]
    Hard,
    Gumbel { tau: f64, seed: u64 },
}

pub const DEFAULT_REMIX_DB: f64 = 15.0;

fn default_remix_db() -> f64 {
    DEFAULT_REMIX_DB
}

fn default_outputs() -> Vec<Output> {
    Output::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceRequest {
    /// WAV file: mono, 16 kHz, PCM16 or float32.
    pub audio: Blob,
    #[serde(default)]
    pub int8: bool,
    #[serde(default = "default_remix_db")]
    pub remix_db: f64,
    #[serde(default = "default_outputs")]
    pub emit: Vec<Output>,
    #[serde(default)]
    pub sign: SignOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedAudio {
    pub output: Output,
    /// float32 WAV.
    pub wav: Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceResponse {
    pub outputs: Vec<NamedAudio>,
    pub int8: bool,
    pub samples: usize,
    pub frames: u64,
    pub latency_samples: usize,
}

fn default_frames() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRequest {
    #[serde(default)]
    pub int8: bool,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    pub mean_frame_ms: f64,
    pub p95_frame_ms: f64,
    pub rtf: f64,
    pub frames_measured: usize,
    pub int8: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OpenStreamRequest {
    #[serde(default)]
    pub sign: SignOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub id: String,
    pub model: String,
    pub hop_size: usize,
    pub latency_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRequest {
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResponse {
    pub frame_index: u64,
    pub direct: Vec<f64>,
    pub reverb: Vec<f64>,
    pub noise: Vec<f64>,
}

fn default_trials() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckRequest {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}
