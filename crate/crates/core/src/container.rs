//! Versioned binary containers (magic + header + row-major payload) for
//! spectrograms, matrices, corpus channels and model checkpoints, plus the
//! CSV exports used for figures.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::channel::CorpusChannel;
use crate::error::{Error, Result};
use crate::estimator::{EpochStats, FeatureKind, FeatureStats, MaskEstimator};
use crate::stft::{ComplexSpectrogram, StftConfig, Window};

const SPECTROGRAM_MAGIC: &[u8; 4] = b"CSPC";
const MATRIX_MAGIC: &[u8; 4] = b"CMAT";
const CHANNEL_MAGIC: &[u8; 4] = b"CCHN";
const MODEL_MAGIC: &[u8; 4] = b"CMDL";
const FORMAT_VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn new(inner: W, magic: &[u8; 4]) -> Result<Self> {
        let mut w = Self { inner };
        w.inner.write_all(magic)?;
        w.u32(FORMAT_VERSION)?;
        Ok(w)
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn f64_slice(&mut self, values: impl Iterator<Item = f64>) -> Result<()> {
        for v in values {
            self.f64(v)?;
        }
        Ok(())
    }

    fn stft_config(&mut self, config: &StftConfig) -> Result<()> {
        self.u32(config.sample_rate)?;
        self.u32(config.frame_len as u32)?;
        self.u32(config.frame_shift as u32)?;
        self.u32(window_tag(config.window))?;
        self.u32(config.fft_size as u32)
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn new(mut inner: R, magic: &[u8; 4]) -> Result<Self> {
        let mut got = [0u8; 4];
        inner.read_exact(&mut got)?;
        if &got != magic {
            return Err(Error::ParseError(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Self { inner };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ParseError(format!(
                "unsupported container version {version}"
            )));
        }
        Ok(r)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.inner.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut buf = [0u8; 8];
        self.inner.read_exact(&mut buf)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut buf = [0u8; 8];
        self.inner.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    }

    fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        (0..count).map(|_| self.f64()).collect()
    }

    fn stft_config(&mut self) -> Result<StftConfig> {
        let sample_rate = self.u32()?;
        let frame_len = self.u32()? as usize;
        let frame_shift = self.u32()? as usize;
        let window = window_from_tag(self.u32()?)?;
        let fft_size = self.u32()? as usize;
        StftConfig::new(sample_rate, frame_len, frame_shift, window)?.with_fft_size(fft_size)
    }
}

fn window_tag(window: Window) -> u32 {
    match window {
        Window::Hamming => 0,
        Window::Rectangular => 1,
    }
}

fn window_from_tag(tag: u32) -> Result<Window> {
    match tag {
        0 => Ok(Window::Hamming),
        1 => Ok(Window::Rectangular),
        other => Err(Error::ParseError(format!("unknown window tag {other}"))),
    }
}

fn feature_kind_tag(kind: FeatureKind) -> u32 {
    match kind {
        FeatureKind::MagnitudeSms => 0,
        FeatureKind::LogLsms => 1,
        FeatureKind::LogRasta => 2,
        FeatureKind::LogRaw => 3,
    }
}

fn feature_kind_from_tag(tag: u32) -> Result<FeatureKind> {
    match tag {
        0 => Ok(FeatureKind::MagnitudeSms),
        1 => Ok(FeatureKind::LogLsms),
        2 => Ok(FeatureKind::LogRasta),
        3 => Ok(FeatureKind::LogRaw),
        other => Err(Error::ParseError(format!("unknown feature kind {other}"))),
    }
}

pub fn save_spectrogram(path: &Path, spec: &ComplexSpectrogram) -> Result<()> {
    let mut w = Writer::new(
        std::io::BufWriter::new(std::fs::File::create(path)?),
        SPECTROGRAM_MAGIC,
    )?;
    w.stft_config(&spec.config)?;
    w.u64(spec.original_length as u64)?;
    w.u64(spec.frames() as u64)?;
    w.u64(spec.bins() as u64)?;
    for v in spec.values.iter() {
        w.f64(v.re)?;
        w.f64(v.im)?;
    }
    Ok(())
}

pub fn load_spectrogram(path: &Path) -> Result<ComplexSpectrogram> {
    let mut r = Reader::new(
        std::io::BufReader::new(std::fs::File::open(path)?),
        SPECTROGRAM_MAGIC,
    )?;
    let config = r.stft_config()?;
    let original_length = r.u64()? as usize;
    let frames = r.u64()? as usize;
    let bins = r.u64()? as usize;
    let mut values = Array2::zeros((frames, bins));
    for t in 0..frames {
        for f in 0..bins {
            let re = r.f64()?;
            let im = r.f64()?;
            values[(t, f)] = Complex64::new(re, im);
        }
    }
    Ok(ComplexSpectrogram {
        values,
        config,
        original_length,
    })
}

pub fn save_matrix(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut w = Writer::new(
        std::io::BufWriter::new(std::fs::File::create(path)?),
        MATRIX_MAGIC,
    )?;
    w.u64(matrix.nrows() as u64)?;
    w.u64(matrix.ncols() as u64)?;
    w.f64_slice(matrix.iter().copied())?;
    Ok(())
}

pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let mut r = Reader::new(
        std::io::BufReader::new(std::fs::File::open(path)?),
        MATRIX_MAGIC,
    )?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let data = r.f64_vec(rows * cols)?;
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| Error::ParseError(format!("matrix shape: {e}")))
}

pub fn save_channel(path: &Path, channel: &CorpusChannel) -> Result<()> {
    let mut w = Writer::new(
        std::io::BufWriter::new(std::fs::File::create(path)?),
        CHANNEL_MAGIC,
    )?;
    w.stft_config(&channel.config)?;
    w.u64(channel.frame_count as u64)?;
    w.u64(channel.log_gain.len() as u64)?;
    w.f64_slice(channel.log_gain.iter().copied())?;
    Ok(())
}

pub fn load_channel(path: &Path) -> Result<CorpusChannel> {
    let mut r = Reader::new(
        std::io::BufReader::new(std::fs::File::open(path)?),
        CHANNEL_MAGIC,
    )?;
    let config = r.stft_config()?;
    let frame_count = r.u64()? as usize;
    let bins = r.u64()? as usize;
    let log_gain = r.f64_vec(bins)?;
    Ok(CorpusChannel {
        log_gain,
        frame_count,
        config,
    })
}

pub fn save_model(path: &Path, model: &MaskEstimator) -> Result<()> {
    let mut w = Writer::new(
        std::io::BufWriter::new(std::fs::File::create(path)?),
        MODEL_MAGIC,
    )?;
    w.u32(feature_kind_tag(model.feature_kind))?;
    w.u32(model.context_radius as u32)?;
    w.stft_config(&model.stft)?;
    w.f64(model.epsilon)?;
    w.u64(model.input_dim() as u64)?;
    w.u64(model.hidden_units() as u64)?;
    w.u64(model.output_bins() as u64)?;
    w.f64_slice(model.w1.iter().copied())?;
    w.f64_slice(model.b1.iter().copied())?;
    w.f64_slice(model.w2.iter().copied())?;
    w.f64_slice(model.b2.iter().copied())?;
    w.f64_slice(model.stats.mean.iter().copied())?;
    w.f64_slice(model.stats.scale.iter().copied())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MaskEstimator> {
    let mut r = Reader::new(
        std::io::BufReader::new(std::fs::File::open(path)?),
        MODEL_MAGIC,
    )?;
    let feature_kind = feature_kind_from_tag(r.u32()?)?;
    let context_radius = r.u32()? as usize;
    let stft = r.stft_config()?;
    let epsilon = r.f64()?;
    let input = r.u64()? as usize;
    let hidden = r.u64()? as usize;
    let output = r.u64()? as usize;
    let w1 = Array2::from_shape_vec((hidden, input), r.f64_vec(hidden * input)?)
        .map_err(|e| Error::ParseError(format!("w1 shape: {e}")))?;
    let b1 = Array1::from_vec(r.f64_vec(hidden)?);
    let w2 = Array2::from_shape_vec((output, hidden), r.f64_vec(output * hidden)?)
        .map_err(|e| Error::ParseError(format!("w2 shape: {e}")))?;
    let b2 = Array1::from_vec(r.f64_vec(output)?);
    let mean = r.f64_vec(input)?;
    let scale = r.f64_vec(input)?;
    Ok(MaskEstimator {
        w1,
        b1,
        w2,
        b2,
        feature_kind,
        context_radius,
        stats: FeatureStats { mean, scale },
        stft,
        epsilon,
    })
}

/// Row-major CSV of a T x F matrix, one frame per line.
pub fn matrix_csv(matrix: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in matrix.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// `frequency_hz,log_gain` rows for channel-spectrum figures.
pub fn channel_csv(channel: &CorpusChannel) -> String {
    let mut out = String::from("frequency_hz,log_gain\n");
    for (f, gain) in channel.log_gain.iter().enumerate() {
        out.push_str(&format!("{},{gain}\n", channel.config.bin_frequency_hz(f)));
    }
    out
}

/// A generic labelled (x, y) series.
pub fn series_csv(x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("{x_label},{y_label}\n");
    for (x, y) in points {
        out.push_str(&format!("{x},{y}\n"));
    }
    out
}

/// `epoch,learning_rate,loss` rows.
pub fn training_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("epoch,learning_rate,loss\n");
    for entry in log {
        out.push_str(&format!(
            "{},{},{}\n",
            entry.epoch, entry.learning_rate, entry.mean_loss
        ));
    }
    out
}
