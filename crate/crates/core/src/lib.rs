//! Streaming TRU-Net speech enhancement: STFT front end, PCEN features, a
//! recurrent U-Net evaluated frame by frame, phase-aware beta-sigmoid masks,
//! INT8 inference, losses and metrics.

pub mod dsp;
pub mod engine;
pub mod error;
pub mod features;
pub mod graph;
pub mod losses;
pub mod nn;
pub mod phm;
pub mod quant;
pub mod testkit;
pub mod wav;

pub use dsp::{istft, stft, AudioBuffer, ComplexSpectrogram, StftConfig};
pub use engine::{enhance_offline, enhance_streaming, remix, RtfReport, Sources, StreamState};
pub use error::{Error, Result, WeightFileError};
pub use graph::{random_init, Network, TrunetConfig};
pub use nn::WeightStore;
pub use phm::{SignMode, SignSampler};
pub use quant::quantize_model;
