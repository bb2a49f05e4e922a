//! Speech-enhancement signal processing built around the corpus-channel
//! view of recording conditions: STFT analysis/synthesis, ideal-ratio-mask
//! enhancement, corpus-channel estimation and removal, per-utterance
//! normalizations (LSMS, SMS, RASTA), SNR-exact mixing with seeded
//! manifests, a small trainable mask estimator, and the cross-channel
//! generalization experiment that ties them together.

pub mod audio;
pub mod channel;
pub mod container;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod mask;
pub mod metrics;
pub mod mix;
pub mod rng;
pub mod stft;
pub mod synth;

pub use audio::Waveform;
pub use error::{Error, Result};
pub use stft::{ComplexSpectrogram, LogSpectrogram, StftConfig, Window};
