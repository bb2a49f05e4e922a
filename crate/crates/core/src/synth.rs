//! Deterministic desk-scale test material: harmonic speech-like utterances
//! and broadband noise beds, all driven by seeded streams.

use crate::audio::Waveform;
use crate::rng::SplitMix64;

/// White noise, uniform in [-amplitude, amplitude].
pub fn white_noise(seed: u64, duration_s: f64, sample_rate: u32) -> Waveform {
    let len = (duration_s * sample_rate as f64).round() as usize;
    let mut rng = SplitMix64::new(seed);
    Waveform::from_samples_unchecked(
        (0..len.max(1)).map(|_| rng.uniform(-0.5, 0.5)).collect(),
        sample_rate,
    )
}

/// Pink-ish noise with slow amplitude modulation, so per-frame SNR varies
/// the way real noise beds do. Paul Kellet's economy pinking filter.
pub fn noise_like(seed: u64, duration_s: f64, sample_rate: u32) -> Waveform {
    let len = ((duration_s * sample_rate as f64).round() as usize).max(1);
    let mut rng = SplitMix64::new(seed);
    let mod_rate = rng.uniform(0.4, 2.5); // Hz
    let mod_depth = rng.uniform(0.2, 0.6);
    let mod_phase = rng.uniform(0.0, std::f64::consts::TAU);

    let (mut b0, mut b1, mut b2) = (0.0f64, 0.0f64, 0.0f64);
    let mut samples = Vec::with_capacity(len);
    for n in 0..len {
        let white = rng.uniform(-1.0, 1.0);
        b0 = 0.99765 * b0 + white * 0.0990460;
        b1 = 0.96300 * b1 + white * 0.2965164;
        b2 = 0.57000 * b2 + white * 1.0526913;
        let pink = b0 + b1 + b2 + white * 0.1848;
        let env = 1.0
            + mod_depth
                * (std::f64::consts::TAU * mod_rate * n as f64 / sample_rate as f64 + mod_phase)
                    .sin();
        samples.push(pink * env);
    }
    normalize_rms(&mut samples, 0.15);
    Waveform::from_samples_unchecked(samples, sample_rate)
}

/// A pseudo-speech utterance: voiced segments (drifting fundamental, harmonic
/// stack shaped by randomized formants), unvoiced bursts, and short pauses.
pub fn speech_like(seed: u64, duration_s: f64, sample_rate: u32) -> Waveform {
    let len = ((duration_s * sample_rate as f64).round() as usize).max(1);
    let sr = sample_rate as f64;
    let mut rng = SplitMix64::new(seed);
    let mut samples = vec![0.0f64; len];

    let mut pos = 0usize;
    while pos < len {
        let seg_len = ((rng.uniform(0.08, 0.24) * sr) as usize).min(len - pos).max(1);
        let roll = rng.next_f64();
        if roll < 0.15 {
            pos += seg_len; // pause
            continue;
        }
        if roll < 0.75 {
            render_voiced(&mut samples[pos..pos + seg_len], &mut rng, sr);
        } else {
            render_unvoiced(&mut samples[pos..pos + seg_len], &mut rng);
        }
        pos += seg_len;
    }

    // A whisper of breath noise keeps every frame nonsilent.
    for s in &mut samples {
        *s += rng.uniform(-1e-4, 1e-4);
    }
    normalize_rms(&mut samples, 0.12);
    Waveform::from_samples_unchecked(samples, sample_rate)
}

fn render_voiced(out: &mut [f64], rng: &mut SplitMix64, sr: f64) {
    let f0_start = rng.uniform(95.0, 240.0);
    let f0_end = f0_start * rng.uniform(0.85, 1.18);
    let formants = [
        (rng.uniform(280.0, 850.0), 90.0),
        (rng.uniform(950.0, 2300.0), 140.0),
        (rng.uniform(2400.0, 3300.0), 200.0),
    ];
    let level = rng.uniform(0.6, 1.0);
    let n_harm = (4000.0 / f0_start.max(f0_end)).floor() as usize;
    let mut phases: Vec<f64> = (0..n_harm)
        .map(|_| rng.uniform(0.0, std::f64::consts::TAU))
        .collect();

    let n = out.len();
    let attack = (0.01 * sr) as usize;
    for (i, sample) in out.iter_mut().enumerate() {
        let frac = i as f64 / n as f64;
        let f0 = f0_start + (f0_end - f0_start) * frac;
        let mut acc = 0.0;
        for (k, phase) in phases.iter_mut().enumerate() {
            let harmonic = (k + 1) as f64;
            let freq = harmonic * f0;
            *phase += std::f64::consts::TAU * freq / sr;
            let mut gain = 1.0 / harmonic;
            let mut shape = 0.08;
            for &(center, bw) in &formants {
                let d = (freq - center) / bw;
                shape += (-0.5 * d * d).exp();
            }
            gain *= shape;
            acc += gain * phase.sin();
        }
        let mut env = 1.0;
        if i < attack {
            env = i as f64 / attack as f64;
        }
        let tail = n.saturating_sub(i);
        if tail < attack {
            env = env.min(tail as f64 / attack as f64);
        }
        *sample += level * env * acc;
    }
}

fn render_unvoiced(out: &mut [f64], rng: &mut SplitMix64) {
    let level = rng.uniform(0.1, 0.3);
    let mut prev = 0.0;
    let n = out.len();
    for (i, sample) in out.iter_mut().enumerate() {
        let white = rng.uniform(-1.0, 1.0);
        // first difference tilts the burst toward high frequencies
        let hiss = white - 0.7 * prev;
        prev = white;
        let frac = i as f64 / n as f64;
        let env = (std::f64::consts::PI * frac).sin();
        *sample += level * env * hiss;
    }
}

fn normalize_rms(samples: &mut [f64], target_rms: f64) {
    let rms = (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt();
    if rms > 0.0 {
        let mut g = target_rms / rms;
        let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak * g > 0.98 {
            g = 0.98 / peak;
        }
        for s in samples.iter_mut() {
            *s *= g;
        }
    }
}
