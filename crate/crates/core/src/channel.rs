//! Stationary channel modeling: FIR recording channels, corpus-channel
//! estimation and removal, and per-utterance normalizations.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::stft::{istft, log_magnitude, stft, LogSpectrogram, StftConfig};

/// Leak constant of the log-domain temporal difference filter.
pub const DEFAULT_RASTA_C: f64 = 0.97;

/// A linear time-invariant recording channel as an FIR impulse response.
#[derive(Debug, Clone, PartialEq)]
pub struct FirChannel {
    pub taps: Vec<f64>,
    pub name: String,
}

impl FirChannel {
    pub fn new(name: impl Into<String>, taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::ConfigError("channel needs at least one tap".into()));
        }
        if !taps.iter().all(|t| t.is_finite()) {
            return Err(Error::ConfigError("channel taps must be finite".into()));
        }
        if taps.iter().all(|&t| t == 0.0) {
            return Err(Error::ConfigError("channel taps are all zero".into()));
        }
        Ok(Self {
            taps,
            name: name.into(),
        })
    }

    pub fn identity() -> Self {
        Self {
            taps: vec![1.0],
            name: "identity".into(),
        }
    }

    /// Boost or cut below `cutoff_hz` by `gain_db`, unity gain above.
    pub fn low_shelf(
        name: impl Into<String>,
        gain_db: f64,
        cutoff_hz: f64,
        len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let lp = sinc_lowpass(cutoff_hz, len, sample_rate)?;
        let g = 10f64.powf(gain_db / 20.0);
        let mut taps = lp.iter().map(|&v| (g - 1.0) * v).collect::<Vec<_>>();
        taps[center(len)] += 1.0;
        Self::new(name, taps)
    }

    /// Boost or cut above `cutoff_hz` by `gain_db`, unity gain below.
    pub fn high_shelf(
        name: impl Into<String>,
        gain_db: f64,
        cutoff_hz: f64,
        len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        let lp = sinc_lowpass(cutoff_hz, len, sample_rate)?;
        let g = 10f64.powf(gain_db / 20.0);
        // high-pass complement: delta - lowpass
        let mut taps = lp.iter().map(|&v| -(g - 1.0) * v).collect::<Vec<_>>();
        taps[center(len)] += g;
        Self::new(name, taps)
    }

    /// Resonant bump of `gain_db` centered on `center_hz`.
    pub fn resonant_peak(
        name: impl Into<String>,
        gain_db: f64,
        center_hz: f64,
        bandwidth_hz: f64,
        len: usize,
        sample_rate: u32,
    ) -> Result<Self> {
        if bandwidth_hz <= 0.0 {
            return Err(Error::ConfigError("bandwidth must be positive".into()));
        }
        let hi = sinc_lowpass(center_hz + bandwidth_hz / 2.0, len, sample_rate)?;
        let lo = sinc_lowpass((center_hz - bandwidth_hz / 2.0).max(1.0), len, sample_rate)?;
        let g = 10f64.powf(gain_db / 20.0);
        let mut taps: Vec<f64> = hi
            .iter()
            .zip(&lo)
            .map(|(&h, &l)| (g - 1.0) * (h - l))
            .collect();
        taps[center(len)] += 1.0;
        Self::new(name, taps)
    }

    /// Load taps from a plain-text file, one per line; `#` starts a comment.
    pub fn from_tap_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut taps = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tap: f64 = line.parse().map_err(|_| {
                Error::ParseError(format!(
                    "{}: line {}: not a number: {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            taps.push(tap);
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "channel".into());
        Self::new(name, taps)
    }

    /// `ln |H(f)|` at the positive-frequency bins of an `fft_size`-point DFT,
    /// computed by a direct summation.
    pub fn log_magnitude_response(&self, fft_size: usize, epsilon: f64) -> Vec<f64> {
        let bins = fft_size / 2 + 1;
        (0..bins)
            .map(|f| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, &h) in self.taps.iter().enumerate() {
                    let angle = -2.0 * std::f64::consts::PI * f as f64 * k as f64
                        / fft_size as f64;
                    acc += h * Complex64::new(angle.cos(), angle.sin());
                }
                acc.norm().max(epsilon).ln()
            })
            .collect()
    }
}

fn center(len: usize) -> usize {
    (len - 1) / 2
}

/// Windowed-sinc lowpass with unity DC gain, centered in `len` taps.
fn sinc_lowpass(cutoff_hz: f64, len: usize, sample_rate: u32) -> Result<Vec<f64>> {
    if len < 3 {
        return Err(Error::ConfigError("filter needs at least 3 taps".into()));
    }
    if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate as f64 / 2.0) {
        return Err(Error::ConfigError(format!(
            "cutoff {cutoff_hz} Hz outside (0, {})",
            sample_rate as f64 / 2.0
        )));
    }
    let fc = cutoff_hz / sample_rate as f64;
    let mid = center(len) as f64;
    let mut taps: Vec<f64> = (0..len)
        .map(|i| {
            let n = i as f64 - mid;
            let sinc = if n == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * n).sin() / (std::f64::consts::PI * n)
            };
            let window = 0.54
                - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len as f64 - 1.0)).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    Ok(taps)
}

/// Full linear convolution with the channel, truncated to the input length.
pub fn apply_fir_channel(waveform: &Waveform, channel: &FirChannel) -> Waveform {
    let x = waveform.samples();
    let h = &channel.taps;
    let out: Vec<f64> = (0..x.len())
        .map(|n| {
            let kmax = n.min(h.len() - 1);
            (0..=kmax).map(|k| h[k] * x[n - k]).sum()
        })
        .collect();
    Waveform::from_samples_unchecked(out, waveform.sample_rate())
}

/// The long-term per-frequency average log magnitude of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusChannel {
    pub log_gain: Vec<f64>,
    pub frame_count: usize,
    pub config: StftConfig,
}

/// Average `ln |X_i(t, f)|` over every frame of every utterance. Utterances
/// of unequal length are weighted by their frame counts (a global frame
/// average), which reduces to the per-utterance mean when lengths match.
pub fn estimate_corpus_channel(
    utterances: &[Waveform],
    config: &StftConfig,
    epsilon: f64,
) -> Result<CorpusChannel> {
    if utterances.is_empty() {
        return Err(Error::EmptyCorpus("no utterances to estimate from".into()));
    }
    let bins = config.bins();
    let mut sums = vec![0.0f64; bins];
    let mut frame_count = 0usize;
    for utterance in utterances {
        let log = log_magnitude(&stft(utterance, config)?, epsilon)?;
        for row in log.values.rows() {
            for (f, &v) in row.iter().enumerate() {
                sums[f] += v;
            }
        }
        frame_count += log.frames();
    }
    let log_gain = sums.iter().map(|s| s / frame_count as f64).collect();
    Ok(CorpusChannel {
        log_gain,
        frame_count,
        config: *config,
    })
}

/// Subtract the corpus channel from every frame.
pub fn remove_corpus_channel(
    log_spec: &LogSpectrogram,
    channel: &CorpusChannel,
) -> Result<LogSpectrogram> {
    if log_spec.bins() != channel.log_gain.len() {
        return Err(Error::ShapeError {
            expected: (log_spec.frames(), channel.log_gain.len()),
            found: (log_spec.frames(), log_spec.bins()),
        });
    }
    let mut values = log_spec.values.clone();
    for mut row in values.rows_mut() {
        for (f, v) in row.iter_mut().enumerate() {
            *v -= channel.log_gain[f];
        }
    }
    Ok(LogSpectrogram {
        values,
        epsilon: log_spec.epsilon,
    })
}

/// Reconstruct an utterance with the corpus channel removed: scale each STFT
/// bin by `exp(-log_gain(f))` (the subtraction in the log-magnitude domain),
/// keep the utterance's own phase, and invert at the channel's analysis
/// config. Output length equals input length.
pub fn renormalize_utterance(waveform: &Waveform, channel: &CorpusChannel) -> Result<Waveform> {
    let config = &channel.config;
    if waveform.len() < config.frame_len {
        return Err(Error::SignalTooShort {
            needed: config.frame_len,
            got: waveform.len(),
        });
    }
    let mut spec = stft(waveform, config)?;
    let gains: Vec<f64> = channel.log_gain.iter().map(|&g| (-g).exp()).collect();
    for mut row in spec.values.rows_mut() {
        for (f, v) in row.iter_mut().enumerate() {
            *v *= gains[f];
        }
    }
    istft(&spec)
}

/// Log-spectral mean subtraction: remove each bin's temporal mean.
pub fn lsms(log_spec: &LogSpectrogram) -> LogSpectrogram {
    LogSpectrogram {
        values: subtract_column_means(&log_spec.values),
        epsilon: log_spec.epsilon,
    }
}

/// Mean subtraction in the linear-magnitude domain (feature baseline; the
/// output may be negative and is never resynthesized).
pub fn sms(mag_spec: &Array2<f64>) -> Array2<f64> {
    subtract_column_means(mag_spec)
}

fn subtract_column_means(values: &Array2<f64>) -> Array2<f64> {
    let frames = values.nrows() as f64;
    let mut means = vec![0.0f64; values.ncols()];
    for row in values.rows() {
        for (f, &v) in row.iter().enumerate() {
            means[f] += v;
        }
    }
    for m in &mut means {
        *m /= frames;
    }
    let mut out = values.clone();
    for mut row in out.rows_mut() {
        for (f, v) in row.iter_mut().enumerate() {
            *v -= means[f];
        }
    }
    out
}

/// Leaky log-domain temporal difference: `out(t) = in(t) - in(t-1) + c*in(t-1)`
/// with the first frame replicated as its own predecessor.
pub fn rasta(log_spec: &LogSpectrogram, c: f64) -> LogSpectrogram {
    let (frames, bins) = log_spec.values.dim();
    let mut out = Array2::zeros((frames, bins));
    for f in 0..bins {
        for t in 0..frames {
            let prev = log_spec.values[(t.saturating_sub(1), f)];
            out[(t, f)] = log_spec.values[(t, f)] - prev + c * prev;
        }
    }
    LogSpectrogram {
        values: out,
        epsilon: log_spec.epsilon,
    }
}
