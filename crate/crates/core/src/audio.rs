//! Waveform ingestion, validation, trimming and level normalization.
//!
//! The boundary between WAV files and the numeric pipeline. Samples live as
//! `f64` internally; PCM16 decodes as `sample / 32768`, float32 passes
//! through.

use std::path::Path;

use crate::error::{Error, Result};

/// The pipeline runs at 16 kHz only; inputs must already be resampled.
pub const SAMPLE_RATE: u32 = 16_000;

/// Default silence-trimming threshold relative to the maximum frame energy.
pub const DEFAULT_TRIM_THRESHOLD_DB: f64 = 20.0;

/// Default silence-trimming frame length.
pub const DEFAULT_TRIM_FRAME_MS: f64 = 20.0;

/// A mono 16 kHz sample sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl Waveform {
    /// Validates finiteness, non-emptiness and the fixed sample rate.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::RateMismatch {
                expected: SAMPLE_RATE,
                found: sample_rate,
            });
        }
        if samples.is_empty() {
            return Err(Error::DegenerateSignal("empty sample buffer"));
        }
        if !samples.iter().all(|s| s.is_finite()) {
            return Err(Error::DegenerateSignal("non-finite sample"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Constructor for internally computed signals whose invariants hold by
    /// construction.
    pub(crate) fn from_samples_unchecked(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Mean-square power.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    /// A contiguous sub-waveform of `len` samples starting at `offset`.
    pub fn segment(&self, offset: usize, len: usize) -> Result<Waveform> {
        if len == 0 || offset + len > self.samples.len() {
            return Err(Error::ConfigError(format!(
                "segment [{offset}, {}) outside waveform of {} samples",
                offset + len,
                self.samples.len()
            )));
        }
        Ok(Waveform::from_samples_unchecked(
            self.samples[offset..offset + len].to_vec(),
            self.sample_rate,
        ))
    }
}

fn map_hound(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::Unsupported => Error::UnsupportedEncoding("not a supported format".into()),
        other => Error::ParseError(other.to_string()),
    }
}

/// Read a mono 16 kHz WAV file (PCM16 or IEEE float32).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::ChannelMismatch {
            channels: spec.channels,
        });
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::RateMismatch {
            expected: SAMPLE_RATE,
            found: spec.sample_rate,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{bits}-bit {format:?}"
            )))
        }
    };
    Waveform::new(samples, SAMPLE_RATE)
}

/// Write a waveform as mono WAV. PCM16 quantizes with a symmetric clamp,
/// float32 narrows each sample to `f32`.
pub fn write_wav(path: &Path, waveform: &Waveform, encoding: WavEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: waveform.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    match encoding {
        WavEncoding::Pcm16 => {
            for &s in &waveform.samples {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(map_hound)?;
            }
        }
        WavEncoding::Float32 => {
            for &s in &waveform.samples {
                writer.write_sample(s as f32).map_err(map_hound)?;
            }
        }
    }
    writer.finalize().map_err(map_hound)
}

/// Scale so the peak magnitude is exactly 1. Returns the scaled waveform and
/// the gain `1 / peak` so a paired signal can be scaled identically.
pub fn peak_normalize(waveform: &Waveform) -> Result<(Waveform, f64)> {
    let peak = waveform.peak();
    if peak == 0.0 {
        return Err(Error::DegenerateSignal("all-zero signal"));
    }
    let samples = waveform.samples.iter().map(|s| s / peak).collect();
    Ok((
        Waveform::from_samples_unchecked(samples, waveform.sample_rate),
        1.0 / peak,
    ))
}

/// Drop leading and trailing whole frames whose energy is more than
/// `threshold_db` below the maximum frame energy. Frames are non-overlapping,
/// interior frames are never touched, and a trailing partial frame survives
/// only while no trailing whole frame was removed.
pub fn trim_silence(waveform: &Waveform, frame_ms: f64, threshold_db: f64) -> Result<Waveform> {
    let frame_len = ((frame_ms / 1000.0) * waveform.sample_rate as f64).round() as usize;
    if frame_len == 0 {
        return Err(Error::ConfigError(format!(
            "trim frame of {frame_ms} ms is empty at {} Hz",
            waveform.sample_rate
        )));
    }
    if frame_len > waveform.len() {
        return Err(Error::SignalTooShort {
            needed: frame_len,
            got: waveform.len(),
        });
    }
    let energies: Vec<f64> = waveform
        .samples
        .chunks_exact(frame_len)
        .map(|frame| frame.iter().map(|s| s * s).sum())
        .collect();
    let max_energy = energies.iter().fold(0.0f64, |m, &e| m.max(e));
    let threshold = max_energy * 10f64.powf(-threshold_db / 10.0);
    // The max-energy frame always satisfies the rule, so both bounds exist.
    let first = energies.iter().position(|&e| e >= threshold).unwrap();
    let last = energies.iter().rposition(|&e| e >= threshold).unwrap();
    let start = first * frame_len;
    let end = if last == energies.len() - 1 {
        waveform.len()
    } else {
        (last + 1) * frame_len
    };
    Ok(Waveform::from_samples_unchecked(
        waveform.samples[start..end].to_vec(),
        waveform.sample_rate,
    ))
}
