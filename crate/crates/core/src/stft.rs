//! Short-time Fourier analysis and synthesis with configurable frame shift.
//!
//! Synthesis mirrors analysis: the same window is applied on both sides and
//! overlap-add output is divided by the accumulated squared-window sum, which
//! reconstructs any unmodified spectrogram exactly for every valid
//! frame/shift pair, including extreme overlaps such as 2048/32.

use ndarray::Array2;
use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Floor for the accumulated squared-window sum during synthesis.
pub const WINDOW_SUM_FLOOR: f64 = 1e-10;

/// Default magnitude floor before logarithms.
pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hamming,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub frame_shift: usize,
    pub window: Window,
    pub fft_size: usize,
}

impl StftConfig {
    /// Config with `fft_size = frame_len` (no zero-padding beyond the frame).
    pub fn new(
        sample_rate: u32,
        frame_len: usize,
        frame_shift: usize,
        window: Window,
    ) -> Result<Self> {
        let config = Self {
            sample_rate,
            frame_len,
            frame_shift,
            window,
            fft_size: frame_len,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_fft_size(mut self, fft_size: usize) -> Result<Self> {
        self.fft_size = fft_size;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::ConfigError("sample rate must be positive".into()));
        }
        if self.frame_shift == 0 || self.frame_shift > self.frame_len {
            return Err(Error::ConfigError(format!(
                "frame shift {} must be in 1..={}",
                self.frame_shift, self.frame_len
            )));
        }
        if self.frame_len > self.fft_size {
            return Err(Error::ConfigError(format!(
                "frame length {} exceeds fft size {}",
                self.frame_len, self.fft_size
            )));
        }
        if !self.frame_len.is_multiple_of(self.frame_shift) {
            return Err(Error::ConfigError(format!(
                "frame length {} is not a multiple of shift {}",
                self.frame_len, self.frame_shift
            )));
        }
        if !self.fft_size.is_multiple_of(2) {
            return Err(Error::ConfigError(format!(
                "fft size {} must be even",
                self.fft_size
            )));
        }
        Ok(())
    }

    /// The shifts studied at the 32 ms frame.
    pub const SPEECH_SHIFTS_MS: [u32; 4] = [16, 8, 4, 2];

    /// 32 ms Hamming frame at 16 kHz with one of the studied shifts.
    pub fn speech_16k(shift_ms: u32) -> Result<Self> {
        if !Self::SPEECH_SHIFTS_MS.contains(&shift_ms) {
            return Err(Error::ConfigError(format!(
                "unsupported frame shift {shift_ms} ms; expected one of {:?}",
                Self::SPEECH_SHIFTS_MS
            )));
        }
        Self::new(16_000, 512, (shift_ms * 16) as usize, Window::Hamming)
    }

    /// 20 ms frame with 10 ms shift, used for corpus-channel estimation.
    pub fn channel_analysis_16k() -> Self {
        Self::new(16_000, 320, 160, Window::Hamming).expect("valid preset")
    }

    /// 2048-sample frame with 32-sample shift, used for utterance
    /// renormalization with negligible artifacts.
    pub fn renormalization_16k(window: Window) -> Self {
        Self::new(16_000, 2048, 32, window).expect("valid preset")
    }

    /// Number of frequency bins, `fft_size / 2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames covering a signal of `signal_len` samples: one frame
    /// per shift-aligned start index inside the signal.
    pub fn frame_count(&self, signal_len: usize) -> usize {
        signal_len.div_ceil(self.frame_shift).max(1)
    }

    pub fn bin_frequency_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    pub(crate) fn window_coefficients(&self) -> Vec<f64> {
        match self.window {
            Window::Rectangular => vec![1.0; self.frame_len],
            Window::Hamming => {
                if self.frame_len == 1 {
                    return vec![1.0];
                }
                let denom = (self.frame_len - 1) as f64;
                (0..self.frame_len)
                    .map(|k| {
                        0.54 - 0.46 * (2.0 * std::f64::consts::PI * k as f64 / denom).cos()
                    })
                    .collect()
            }
        }
    }
}

/// T x F complex short-time spectrum of a signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub config: StftConfig,
    pub original_length: usize,
}

impl ComplexSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm())
    }
}

/// T x F natural-log magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSpectrogram {
    pub values: Array2<f64>,
    pub epsilon: f64,
}

impl LogSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }
}

/// Forward transform. Frame `t` covers samples `[t*shift, t*shift + frame_len)`
/// of the tail-padded signal; the window is applied multiplicatively before a
/// real FFT of `fft_size` points.
pub fn stft(waveform: &Waveform, config: &StftConfig) -> Result<ComplexSpectrogram> {
    config.validate()?;
    if waveform.sample_rate() != config.sample_rate {
        return Err(Error::ConfigError(format!(
            "waveform rate {} does not match config rate {}",
            waveform.sample_rate(),
            config.sample_rate
        )));
    }
    let samples = waveform.samples();
    let frames = config.frame_count(samples.len());
    let bins = config.bins();
    let window = config.window_coefficients();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(config.fft_size);
    let mut input = fft.make_input_vec();
    let mut output = fft.make_output_vec();

    let mut values = Array2::zeros((frames, bins));
    for t in 0..frames {
        let start = t * config.frame_shift;
        for k in 0..config.frame_len {
            let idx = start + k;
            let sample = if idx < samples.len() { samples[idx] } else { 0.0 };
            input[k] = sample * window[k];
        }
        input[config.frame_len..].fill(0.0);
        fft.process(&mut input, &mut output)
            .map_err(|e| Error::ConfigError(format!("fft failed: {e}")))?;
        for (f, &v) in output.iter().enumerate() {
            values[(t, f)] = v;
        }
    }

    Ok(ComplexSpectrogram {
        values,
        config: *config,
        original_length: samples.len(),
    })
}

/// Inverse transform: per-frame inverse real FFT, synthesis windowing,
/// overlap-add, pointwise division by the accumulated squared-window sum, and
/// truncation to the recorded original length.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let config = &spec.config;
    config.validate()?;
    if spec.bins() != config.bins() {
        return Err(Error::ConfigError(format!(
            "spectrogram has {} bins, config implies {}",
            spec.bins(),
            config.bins()
        )));
    }
    let frames = spec.frames();
    if frames == 0 {
        return Err(Error::ConfigError("empty spectrogram".into()));
    }
    let padded_len = (frames - 1) * config.frame_shift + config.frame_len;
    if spec.original_length > padded_len {
        return Err(Error::ConfigError(format!(
            "original length {} cannot exceed covered length {padded_len}",
            spec.original_length
        )));
    }
    let window = config.window_coefficients();

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(config.fft_size);
    let mut spectrum = ifft.make_input_vec();
    let mut frame_out = ifft.make_output_vec();

    let mut acc = vec![0.0f64; padded_len];
    let mut window_sum = vec![0.0f64; padded_len];
    let scale = 1.0 / config.fft_size as f64;

    for t in 0..frames {
        for (f, slot) in spectrum.iter_mut().enumerate() {
            *slot = spec.values[(t, f)];
        }
        // DC and Nyquist of a real spectrum carry no imaginary part.
        spectrum[0].im = 0.0;
        let last = spectrum.len() - 1;
        spectrum[last].im = 0.0;
        ifft.process(&mut spectrum, &mut frame_out)
            .map_err(|e| Error::ConfigError(format!("inverse fft failed: {e}")))?;

        let pos = t * config.frame_shift;
        for k in 0..config.frame_len {
            acc[pos + k] += frame_out[k] * scale * window[k];
            window_sum[pos + k] += window[k] * window[k];
        }
    }

    let mut samples = Vec::with_capacity(spec.original_length);
    for i in 0..spec.original_length {
        if window_sum[i] < WINDOW_SUM_FLOOR {
            return Err(Error::SynthesisError { sample: i });
        }
        samples.push(acc[i] / window_sum[i]);
    }
    Ok(Waveform::from_samples_unchecked(
        samples,
        config.sample_rate,
    ))
}

/// Elementwise `ln(max(|value|, epsilon))`.
pub fn log_magnitude(spec: &ComplexSpectrogram, epsilon: f64) -> Result<LogSpectrogram> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::ConfigError(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    Ok(LogSpectrogram {
        values: spec.values.mapv(|v| v.norm().max(epsilon).ln()),
        epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::SAMPLE_RATE;
    use crate::rng::SplitMix64;

    fn random_wave(seed: u64, len: usize) -> Waveform {
        let mut rng = SplitMix64::new(seed);
        Waveform::new((0..len).map(|_| rng.uniform(-1.0, 1.0)).collect(), SAMPLE_RATE).unwrap()
    }

    fn max_abs_diff(a: &Waveform, b: &Waveform) -> f64 {
        a.samples()
            .iter()
            .zip(b.samples())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let w = Waveform::new(vec![0.0; 4000], SAMPLE_RATE).unwrap();
        let spec = stft(&w, &StftConfig::speech_16k(16).unwrap()).unwrap();
        assert!(spec.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn frame_count_matches_brute_force_enumeration() {
        let config = StftConfig::speech_16k(16).unwrap();
        for len in [1usize, 100, 511, 512, 513, 16_000, 16_001] {
            let w = random_wave(len as u64, len);
            let spec = stft(&w, &config).unwrap();
            // Oracle: count shift-aligned start indices inside the signal.
            let mut starts = 0;
            let mut s = 0;
            while s < len {
                starts += 1;
                s += config.frame_shift;
            }
            assert_eq!(spec.frames(), starts.max(1), "len {len}");
            assert_eq!(spec.bins(), 257);
        }
    }

    #[test]
    fn sinusoid_peaks_at_expected_bin_and_matches_direct_dft() {
        // 1 kHz at 16 kHz with fft 512 lands exactly on bin 32.
        let config = StftConfig::new(SAMPLE_RATE, 512, 256, Window::Rectangular).unwrap();
        let samples: Vec<f64> = (0..16_000)
            .map(|n| (2.0 * std::f64::consts::PI * 1000.0 * n as f64 / 16_000.0).sin())
            .collect();
        let w = Waveform::new(samples.clone(), SAMPLE_RATE).unwrap();
        let spec = stft(&w, &config).unwrap();

        for t in 1..spec.frames() - 2 {
            let row = spec.values.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 32, "frame {t}");
        }

        // Direct DFT oracle on one interior frame, bin 32.
        let t = 5;
        let start = t * config.frame_shift;
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..config.frame_len {
            let angle = -2.0 * std::f64::consts::PI * 32.0 * k as f64 / 512.0;
            acc += samples[start + k] * Complex64::new(angle.cos(), angle.sin());
        }
        let got = spec.values[(t, 32)];
        assert!((got - acc).norm() < 1e-9 * acc.norm().max(1.0));
    }

    #[test]
    fn round_trip_reconstructs_each_preset() {
        let w = random_wave(21, 16_000);
        for shift_ms in StftConfig::SPEECH_SHIFTS_MS {
            let config = StftConfig::speech_16k(shift_ms).unwrap();
            let back = istft(&stft(&w, &config).unwrap()).unwrap();
            assert_eq!(back.len(), w.len());
            assert!(
                max_abs_diff(&w, &back) < 1e-6 * w.peak(),
                "shift {shift_ms} ms"
            );
        }
        let config = StftConfig::channel_analysis_16k();
        let back = istft(&stft(&w, &config).unwrap()).unwrap();
        assert!(max_abs_diff(&w, &back) < 1e-6 * w.peak());
    }

    #[test]
    fn all_zero_spectrogram_synthesizes_silence() {
        let config = StftConfig::speech_16k(16).unwrap();
        let spec = ComplexSpectrogram {
            values: Array2::zeros((10, config.bins())),
            config,
            original_length: 2000,
        };
        let out = istft(&spec).unwrap();
        assert_eq!(out.len(), 2000);
        assert!(out.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn stft_is_linear() {
        let u = random_wave(31, 4000);
        let v = random_wave(32, 4000);
        let (a, b) = (0.7, -1.3);
        let combined = Waveform::new(
            u.samples()
                .iter()
                .zip(v.samples())
                .map(|(x, y)| a * x + b * y)
                .collect(),
            SAMPLE_RATE,
        )
        .unwrap();
        let config = StftConfig::speech_16k(8).unwrap();
        let su = stft(&u, &config).unwrap();
        let sv = stft(&v, &config).unwrap();
        let sc = stft(&combined, &config).unwrap();
        let scale = sc.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        for ((x, y), z) in su.values.iter().zip(sv.values.iter()).zip(sc.values.iter()) {
            assert!((a * x + b * y - z).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn parseval_holds_per_frame_for_rectangular_tiling() {
        let config = StftConfig::new(SAMPLE_RATE, 512, 512, Window::Rectangular).unwrap();
        let w = random_wave(55, 512 * 6);
        let spec = stft(&w, &config).unwrap();
        for t in 0..spec.frames() {
            let time_energy: f64 = w.samples()[t * 512..(t + 1) * 512]
                .iter()
                .map(|s| s * s)
                .sum();
            // Conjugate-symmetric bins count twice except DC and Nyquist.
            let mut spectral = 0.0;
            for f in 0..spec.bins() {
                let e = spec.values[(t, f)].norm_sqr();
                spectral += if f == 0 || f == spec.bins() - 1 { e } else { 2.0 * e };
            }
            let spectral = spectral / config.fft_size as f64;
            assert!(
                (time_energy - spectral).abs() <= 1e-6 * time_energy.max(1e-12),
                "frame {t}: {time_energy} vs {spectral}"
            );
        }
    }

    #[test]
    fn halving_shift_doubles_frames_within_one() {
        let w = random_wave(77, 16_000);
        let mut prev: Option<usize> = None;
        for shift_ms in StftConfig::SPEECH_SHIFTS_MS {
            let config = StftConfig::speech_16k(shift_ms).unwrap();
            let t = stft(&w, &config).unwrap().frames();
            if let Some(p) = prev {
                assert!((t as i64 - 2 * p as i64).unsigned_abs() <= 1, "{p} -> {t}");
            }
            prev = Some(t);
        }
    }

    #[test]
    fn identity_mask_reconstruction_at_every_shift() {
        let w = random_wave(88, 16_000);
        for shift_ms in StftConfig::SPEECH_SHIFTS_MS {
            let config = StftConfig::speech_16k(shift_ms).unwrap();
            let mut spec = stft(&w, &config).unwrap();
            spec.values.mapv_inplace(|v| v * 1.0);
            let back = istft(&spec).unwrap();
            assert!(max_abs_diff(&w, &back) < 1e-6 * w.peak());
        }
    }

    #[test]
    fn log_magnitude_floors_at_epsilon() {
        let config = StftConfig::speech_16k(16).unwrap();
        let spec = ComplexSpectrogram {
            values: Array2::from_elem((2, config.bins()), Complex64::new(0.0, 0.0)),
            config,
            original_length: 512,
        };
        let log = log_magnitude(&spec, 1e-8).unwrap();
        assert!(log.values.iter().all(|&v| v == (1e-8f64).ln()));
    }

    #[test]
    fn log_magnitude_matches_scalar_oracle() {
        let w = random_wave(99, 2000);
        let config = StftConfig::speech_16k(16).unwrap();
        let spec = stft(&w, &config).unwrap();
        let log = log_magnitude(&spec, 1e-8).unwrap();
        for (v, l) in spec.values.iter().zip(log.values.iter()) {
            let expect = (v.re * v.re + v.im * v.im).sqrt().max(1e-8).ln();
            assert!((l - expect).abs() < 1e-12);
        }
        // e -> 1.0
        let unit = ComplexSpectrogram {
            values: Array2::from_elem((1, config.bins()), Complex64::new(std::f64::consts::E, 0.0)),
            config,
            original_length: 1,
        };
        let log = log_magnitude(&unit, 1e-8).unwrap();
        assert!(log.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(StftConfig::new(SAMPLE_RATE, 512, 0, Window::Hamming).is_err());
        assert!(StftConfig::new(SAMPLE_RATE, 512, 513, Window::Hamming).is_err());
        assert!(StftConfig::new(SAMPLE_RATE, 512, 96, Window::Hamming).is_err());
        assert!(StftConfig::new(SAMPLE_RATE, 512, 256, Window::Hamming)
            .unwrap()
            .with_fft_size(256)
            .is_err());
        assert!(StftConfig::speech_16k(12).is_err());
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let w = random_wave(1, 100);
        let mut config = StftConfig::speech_16k(16).unwrap();
        config.sample_rate = 8000;
        assert!(matches!(stft(&w, &config), Err(Error::ConfigError(_))));
    }

    #[test]
    fn zero_padded_fft_round_trips() {
        let w = random_wave(13, 5000);
        let config = StftConfig::new(SAMPLE_RATE, 512, 128, Window::Hamming)
            .unwrap()
            .with_fft_size(1024)
            .unwrap();
        let back = istft(&stft(&w, &config).unwrap()).unwrap();
        assert!(max_abs_diff(&w, &back) < 1e-6 * w.peak());
    }
}
