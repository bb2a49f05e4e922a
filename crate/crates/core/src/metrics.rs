//! Objective metrics: scale-invariant SNR, segmental SNR, and log-spectral
//! distance.

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::stft::{stft, StftConfig};

/// Perfect-reconstruction cases clamp here instead of diverging.
pub const SI_SNR_CEILING_DB: f64 = 60.0;

/// Per-frame clamp range for segmental SNR.
pub const SEG_SNR_CLAMP_DB: (f64, f64) = (-10.0, 35.0);

/// Default segmental-SNR frame length.
pub const SEG_SNR_FRAME_MS: f64 = 32.0;

fn check_lengths(reference: &Waveform, estimate: &Waveform) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::ShapeError {
            expected: (reference.len(), 1),
            found: (estimate.len(), 1),
        });
    }
    Ok(())
}

/// Projection SNR over a sample window: the estimate's component along the
/// reference versus the residual. Returns None for a silent reference window.
fn projection_snr_db(reference: &[f64], estimate: &[f64]) -> Option<f64> {
    let ref_energy: f64 = reference.iter().map(|r| r * r).sum();
    if ref_energy == 0.0 {
        return None;
    }
    let dot: f64 = reference.iter().zip(estimate).map(|(r, e)| r * e).sum();
    let alpha = dot / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let residual_energy: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| {
            let d = e - alpha * r;
            d * d
        })
        .sum();
    Some(if target_energy == 0.0 {
        f64::NEG_INFINITY
    } else if residual_energy == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (target_energy / residual_energy).log10()
    })
}

/// Scale-invariant SNR: project the estimate onto the reference and compare
/// target against residual energy, clamped at [`SI_SNR_CEILING_DB`].
pub fn si_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths(reference, estimate)?;
    match projection_snr_db(reference.samples(), estimate.samples()) {
        None => Err(Error::DegenerateSignal("silent reference")),
        Some(v) => Ok(v.min(SI_SNR_CEILING_DB)),
    }
}

/// Mean over whole frames of the clamped per-frame projection SNR. Frames
/// with a silent reference are excluded; an all-silent reference errors.
pub fn segmental_snr(
    reference: &Waveform,
    estimate: &Waveform,
    frame_ms: f64,
    clamp_db: (f64, f64),
) -> Result<f64> {
    check_lengths(reference, estimate)?;
    let frame_len = ((frame_ms / 1000.0) * reference.sample_rate() as f64).round() as usize;
    if frame_len == 0 || frame_len > reference.len() {
        return Err(Error::SignalTooShort {
            needed: frame_len.max(1),
            got: reference.len(),
        });
    }
    let mut total = 0.0;
    let mut frames = 0usize;
    for (ref_frame, est_frame) in reference
        .samples()
        .chunks_exact(frame_len)
        .zip(estimate.samples().chunks_exact(frame_len))
    {
        if let Some(snr) = projection_snr_db(ref_frame, est_frame) {
            total += snr.clamp(clamp_db.0, clamp_db.1);
            frames += 1;
        }
    }
    if frames == 0 {
        return Err(Error::DegenerateSignal("reference has no active frames"));
    }
    Ok(total / frames as f64)
}

/// Root-mean-square over frames of the per-frame RMS difference of
/// `20 log10` magnitudes, with the epsilon floor applied before the log.
pub fn log_spectral_distance(
    a: &Waveform,
    b: &Waveform,
    config: &StftConfig,
    epsilon: f64,
) -> Result<f64> {
    check_lengths(a, b)?;
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::ConfigError("epsilon must be positive".into()));
    }
    let sa = stft(a, config)?;
    let sb = stft(b, config)?;
    let bins = sa.bins() as f64;
    let mut frame_sq_sum = 0.0;
    for (row_a, row_b) in sa.values.rows().into_iter().zip(sb.values.rows()) {
        let mut sq = 0.0;
        for (va, vb) in row_a.iter().zip(row_b.iter()) {
            let da = 20.0 * va.norm().max(epsilon).log10();
            let db = 20.0 * vb.norm().max(epsilon).log10();
            let d = da - db;
            sq += d * d;
        }
        frame_sq_sum += sq / bins;
    }
    Ok((frame_sq_sum / sa.frames() as f64).sqrt())
}
