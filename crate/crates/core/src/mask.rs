//! Training targets and enhancement math: the ideal ratio mask, mask
//! application with noisy phase, and the plain and energy-masked MSE losses.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::stft::ComplexSpectrogram;

/// Amplitude ratio encoding the "within 20 dB of the maximum unit" rule.
pub const DEFAULT_ENERGY_MASK_RATIO: f64 = 0.01;

/// T x F real values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    values: Array2<f64>,
}

impl Mask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::ConfigError(
                "mask values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn ones(frames: usize, bins: usize) -> Self {
        Self {
            values: Array2::from_elem((frames, bins), 1.0),
        }
    }

    pub fn constant(frames: usize, bins: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((frames, bins), value))
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// T x F values in {0, 1}.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    values: Array2<f64>,
}

impl BinaryMask {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if !values.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::ConfigError("mask values must be 0 or 1".into()));
        }
        Ok(Self { values })
    }

    pub fn all_ones(frames: usize, bins: usize) -> Self {
        Self {
            values: Array2::from_elem((frames, bins), 1.0),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    /// Pointwise AND, for combining with a batcher's valid-frame mask.
    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        check_shape(self.dim(), other.dim())?;
        Ok(BinaryMask {
            values: &self.values * &other.values,
        })
    }
}

fn check_shape(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeError { expected, found });
    }
    Ok(())
}

/// `sqrt(|X|^2 / (|X|^2 + |N|^2))` per unit, with a silent unit (0/0)
/// defined as 0.
pub fn ideal_ratio_mask(
    clean: &ComplexSpectrogram,
    noise: &ComplexSpectrogram,
) -> Result<Mask> {
    check_shape(clean.values.dim(), noise.values.dim())?;
    if clean.config != noise.config {
        return Err(Error::ConfigError(
            "clean and noise spectrograms use different configs".into(),
        ));
    }
    let mut values = Array2::zeros(clean.values.dim());
    for ((out, x), n) in values
        .iter_mut()
        .zip(clean.values.iter())
        .zip(noise.values.iter())
    {
        let px = x.norm_sqr();
        let pn = n.norm_sqr();
        let denom = px + pn;
        *out = if denom == 0.0 { 0.0 } else { (px / denom).sqrt() };
    }
    Mask::new(values)
}

/// Scale each unit of the noisy spectrum by the mask; the noisy phase is
/// preserved because the factor is real and nonnegative.
pub fn apply_mask(noisy: &ComplexSpectrogram, mask: &Mask) -> Result<ComplexSpectrogram> {
    check_shape(noisy.values.dim(), mask.dim())?;
    let mut out = noisy.clone();
    for (v, &m) in out.values.iter_mut().zip(mask.values.iter()) {
        *v *= m;
    }
    Ok(out)
}

/// Mean squared error over all units.
pub fn mse_loss(irm: &Mask, rm: &Mask) -> Result<f64> {
    check_shape(irm.dim(), rm.dim())?;
    let mut acc = 0.0;
    for (a, b) in irm.values.iter().zip(rm.values.iter()) {
        let d = a - b;
        acc += d * d;
    }
    let (t, f) = irm.dim();
    Ok(acc / (t * f) as f64)
}

/// Units whose magnitude reaches `ratio` times the utterance maximum.
pub fn energy_mask(noisy_mag: &Array2<f64>, ratio: f64) -> Result<BinaryMask> {
    debug_assert!(noisy_mag.iter().all(|&v| v >= 0.0));
    let max = noisy_mag.iter().fold(0.0f64, |m, &v| m.max(v));
    if max == 0.0 {
        return Err(Error::DegenerateSignal("all-zero magnitude spectrum"));
    }
    let threshold = ratio * max;
    let values = noisy_mag.mapv(|v| if v >= threshold { 1.0 } else { 0.0 });
    Ok(BinaryMask { values })
}

/// MSE restricted to the mask support: `sum((irm - rm)^2 * m) / sum(m)`.
pub fn masked_mse_loss(irm: &Mask, rm: &Mask, m: &BinaryMask) -> Result<f64> {
    check_shape(irm.dim(), rm.dim())?;
    check_shape(irm.dim(), m.dim())?;
    let mut acc = 0.0;
    let mut support = 0.0;
    for ((a, b), &w) in irm
        .values
        .iter()
        .zip(rm.values.iter())
        .zip(m.values.iter())
    {
        let d = a - b;
        acc += d * d * w;
        support += w;
    }
    if support == 0.0 {
        return Err(Error::EmptyLossSupport);
    }
    Ok(acc / support)
}
