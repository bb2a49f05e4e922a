//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its elapsed time (visible under `--nocapture`). Thresholds that came from
//! a first seeded calibration run are pinned as constants here.

use std::time::Instant;

use chanlab::audio::{Waveform, SAMPLE_RATE};
use chanlab::channel::{
    apply_fir_channel, estimate_corpus_channel, lsms, rasta, remove_corpus_channel, sms,
    FirChannel, DEFAULT_RASTA_C,
};
use chanlab::error::Result;
use chanlab::estimator::{FeatureKind, FeatureStats, MaskEstimator};
use chanlab::experiment::{
    frame_shift_study, run_crosschannel_experiment, ExperimentConfig, ExperimentEstimator,
    FirChannelSpec, MaterialSpec,
};
use chanlab::mask::{
    apply_mask, energy_mask, ideal_ratio_mask, masked_mse_loss, mse_loss, BinaryMask, Mask,
};
use chanlab::metrics::si_snr;
use chanlab::mix::{
    build_manifest_from_stores, mix_at_snr, render_manifest, ManifestParams, MixtureSpec,
    WaveStore,
};
use chanlab::rng::{sub_seed, SplitMix64};
use chanlab::stft::{istft, log_magnitude, stft, LogSpectrogram, StftConfig, DEFAULT_EPSILON};
use chanlab::synth::{noise_like, speech_like, white_noise};
use ndarray::Array2;

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
fn criterion_01_stft_round_trip() {
    let start = Instant::now();
    let mut configs: Vec<StftConfig> = StftConfig::SPEECH_SHIFTS_MS
        .iter()
        .map(|&ms| StftConfig::speech_16k(ms).unwrap())
        .collect();
    configs.push(StftConfig::renormalization_16k(chanlab::Window::Hamming));

    for (k, config) in configs.iter().enumerate() {
        let w = random_wave(1000 + k as u64, SAMPLE_RATE as usize);
        let back = istft(&stft(&w, config).unwrap()).unwrap();
        let err = max_abs_diff(&w, &back);
        assert!(
            err < 1e-6 * w.peak(),
            "{}/{}: error {err}",
            config.frame_len,
            config.frame_shift
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed} s");
    println!("acceptance 1 (STFT round-trip, 5 configs): PASS in {elapsed:.2} s");
}

#[test]
fn criterion_02_channel_removal_identity() {
    let start = Instant::now();
    let config = StftConfig::channel_analysis_16k();
    let utterances: Vec<Waveform> = (0..10).map(|i| speech_like(2000 + i, 2.0, SAMPLE_RATE)).collect();
    let channel = estimate_corpus_channel(&utterances, &config, DEFAULT_EPSILON).unwrap();

    let mut sums = vec![0.0f64; config.bins()];
    let mut frames = 0usize;
    for utterance in &utterances {
        let log = log_magnitude(&stft(utterance, &config).unwrap(), DEFAULT_EPSILON).unwrap();
        let removed = remove_corpus_channel(&log, &channel).unwrap();
        for row in removed.values.rows() {
            for (f, &v) in row.iter().enumerate() {
                sums[f] += v;
            }
        }
        frames += removed.frames();
    }
    for (f, sum) in sums.iter().enumerate() {
        let grand_mean = sum / frames as f64;
        assert!(grand_mean.abs() < 1e-9, "bin {f}: grand mean {grand_mean}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed} s");
    println!("acceptance 2 (corpus-channel removal identity): PASS in {elapsed:.2} s");
}

#[test]
fn criterion_03_channel_recovery() {
    let start = Instant::now();
    let config = StftConfig::channel_analysis_16k();
    let channel = FirChannel::low_shelf("recovery", 8.0, 1000.0, 33, SAMPLE_RATE).unwrap();

    let utterances: Vec<Waveform> = (0..10).map(|i| white_noise(3000 + i, 2.0, SAMPLE_RATE)).collect();
    let filtered: Vec<Waveform> = utterances
        .iter()
        .map(|w| apply_fir_channel(w, &channel))
        .collect();

    let base = estimate_corpus_channel(&utterances, &config, DEFAULT_EPSILON).unwrap();
    let shifted = estimate_corpus_channel(&filtered, &config, DEFAULT_EPSILON).unwrap();
    let response = channel.log_magnitude_response(config.fft_size, 1e-12);

    // Restrict to bins where |H| is within 20 dB of its peak.
    let peak = response.iter().cloned().fold(f64::MIN, f64::max);
    let floor = peak - 20.0 * std::f64::consts::LN_10 / 20.0; // 20 dB in nats
    let to_db = 20.0 / std::f64::consts::LN_10;
    let mut total_db = 0.0;
    let mut count = 0usize;
    for (f, &expected) in response.iter().enumerate() {
        if expected >= floor {
            let estimated = shifted.log_gain[f] - base.log_gain[f];
            total_db += (estimated - expected).abs() * to_db;
            count += 1;
        }
    }
    assert!(count > 0);
    let mean_abs_db = total_db / count as f64;
    assert!(mean_abs_db < 1.0, "mean abs deviation {mean_abs_db} dB");
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed} s");
    println!(
        "acceptance 3 (channel recovery, {mean_abs_db:.3} dB mean-abs over {count} bins): PASS in {elapsed:.2} s"
    );
}

#[test]
fn criterion_04_normalization_invariance() {
    let start = Instant::now();
    let config = StftConfig::channel_analysis_16k();
    let w = speech_like(4000, 2.0, SAMPLE_RATE);
    let log = log_magnitude(&stft(&w, &config).unwrap(), DEFAULT_EPSILON).unwrap();

    // lsms and sms outputs have per-bin temporal mean 0
    let normalized = lsms(&log);
    for f in 0..normalized.bins() {
        let mean: f64 =
            normalized.values.column(f).iter().sum::<f64>() / normalized.frames() as f64;
        assert!(mean.abs() < 1e-9, "lsms bin {f} mean {mean}");
    }
    let magnitude = stft(&w, &config).unwrap().magnitude();
    let sms_out = sms(&magnitude);
    for f in 0..sms_out.ncols() {
        let mean: f64 = sms_out.column(f).iter().sum::<f64>() / sms_out.nrows() as f64;
        assert!(mean.abs() < 1e-9, "sms bin {f} mean {mean}");
    }

    // lsms is exactly invariant to per-bin constant log offsets
    let mut rng = SplitMix64::new(41);
    let offsets: Vec<f64> = (0..log.bins()).map(|_| rng.uniform(-5.0, 5.0)).collect();
    let mut shifted = log.clone();
    for mut row in shifted.values.rows_mut() {
        for (f, v) in row.iter_mut().enumerate() {
            *v += offsets[f];
        }
    }
    let a = lsms(&log);
    let b = lsms(&shifted);
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        assert!((x - y).abs() < 1e-9);
    }

    // rasta of a constant log-spectrum v equals 0.97 v at every frame
    let v = -2.345;
    let constant = LogSpectrogram {
        values: Array2::from_elem((12, config.bins()), v),
        epsilon: DEFAULT_EPSILON,
    };
    let filtered = rasta(&constant, DEFAULT_RASTA_C);
    for &out in filtered.values.iter() {
        assert_eq!(out, DEFAULT_RASTA_C * v);
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!("acceptance 4 (normalization invariance): PASS in {elapsed:.2} s");
}

#[test]
fn criterion_05_loss_reductions() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(51);
    let irm = Mask::new(Array2::from_shape_fn((9, 13), |_| rng.next_f64())).unwrap();
    let rm = Mask::new(Array2::from_shape_fn((9, 13), |_| rng.next_f64())).unwrap();

    // all-ones mask reduces the masked loss to the plain MSE bit for bit
    let ones = BinaryMask::all_ones(9, 13);
    assert_eq!(
        masked_mse_loss(&irm, &rm, &ones).unwrap().to_bits(),
        mse_loss(&irm, &rm).unwrap().to_bits()
    );

    // loss is zero iff rm equals irm on the mask support
    let support = BinaryMask::new(Array2::from_shape_fn((9, 13), |(t, f)| {
        if (t + f) % 3 == 0 {
            1.0
        } else {
            0.0
        }
    }))
    .unwrap();
    let mut agree_on_support = rm.values().clone();
    for ((t, f), v) in agree_on_support.indexed_iter_mut() {
        if support.values()[(t, f)] == 1.0 {
            *v = irm.values()[(t, f)];
        }
    }
    let agree = Mask::new(agree_on_support).unwrap();
    assert_eq!(masked_mse_loss(&irm, &agree, &support).unwrap(), 0.0);

    // and any disagreement on the support makes it strictly positive
    let mut one_off = agree.values().clone();
    let unit = support
        .values()
        .indexed_iter()
        .find(|(_, &v)| v == 1.0)
        .unwrap()
        .0;
    one_off[unit] = (irm.values()[unit] + 0.5).rem_euclid(1.0);
    let disagree = Mask::new(one_off).unwrap();
    assert!(masked_mse_loss(&irm, &disagree, &support).unwrap() > 0.0);

    let elapsed = start.elapsed().as_secs_f64();
    println!("acceptance 5 (loss reductions): PASS in {elapsed:.2} s");
}

#[test]
fn criterion_06_gradient_check() {
    let start = Instant::now();
    // Tiny but real instance: features from an actual noisy spectrogram.
    let stft_config = StftConfig::speech_16k(16).unwrap();
    let clean = speech_like(6001, 0.3, SAMPLE_RATE);
    let noise = noise_like(6002, 0.3, SAMPLE_RATE);
    let spec = MixtureSpec {
        clean_id: "c".into(),
        noise_id: "n".into(),
        clean_offset: 0,
        noise_offset: 0,
        segment_len: clean.len(),
        snr_db: -5.0,
        seed: 0,
    };
    let rendered = mix_at_snr(&spec, &clean, &noise).unwrap();
    let x = stft(&rendered.clean, &stft_config).unwrap();
    let n = stft(&rendered.noise, &stft_config).unwrap();
    let y = stft(&rendered.mixture, &stft_config).unwrap();
    let irm = ideal_ratio_mask(&x, &n).unwrap();
    let weight = energy_mask(&y.magnitude(), 0.01).unwrap();
    let features = chanlab::estimator::extract_features(
        &rendered.mixture,
        &stft_config,
        FeatureKind::LogRaw,
        0,
        DEFAULT_EPSILON,
    )
    .unwrap();

    let input_dim = features.ncols();
    let hidden = 5;
    let bins = stft_config.bins();
    let model = MaskEstimator::init(
        input_dim,
        hidden,
        bins,
        FeatureKind::LogRaw,
        0,
        FeatureStats::fit(std::iter::once(&features), input_dim),
        stft_config,
        DEFAULT_EPSILON,
        sub_seed(60, 0),
    )
    .unwrap();
    let (_, grads) = model.loss_and_gradients(&features, &irm, &weight).unwrap();
    let analytic = grads.flat();
    let params = model.parameter_count();
    assert_eq!(analytic.len(), params);

    let step = 1e-5;
    let loss_of =
        |m: &MaskEstimator| -> f64 { m.loss_and_gradients(&features, &irm, &weight).unwrap().0 };
    for (index, &expected) in analytic.iter().enumerate() {
        let mut plus = model.clone();
        plus.perturb_parameter(index, step);
        let mut minus = model.clone();
        minus.perturb_parameter(index, -step);
        let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * step);
        let rel = (numeric - expected).abs() / (numeric.abs() + expected.abs()).max(1e-8);
        assert!(
            rel < 1e-4,
            "parameter {index}: numeric {numeric} vs analytic {expected} (rel {rel})"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed} s");
    println!("acceptance 6 (gradient check, {params} parameters): PASS in {elapsed:.2} s");
}

#[test]
fn criterion_07_oracle_enhancement() {
    let start = Instant::now();
    let config = StftConfig::speech_16k(16).unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..20u64 {
        let clean = speech_like(sub_seed(700, i), 1.0, SAMPLE_RATE);
        let noise = noise_like(sub_seed(701, i), 1.5, SAMPLE_RATE);
        let spec = MixtureSpec {
            clean_id: "c".into(),
            noise_id: "n".into(),
            clean_offset: 0,
            noise_offset: 0,
            segment_len: clean.len(),
            snr_db: -5.0,
            seed: i,
        };
        let rendered = mix_at_snr(&spec, &clean, &noise).unwrap();
        let x = stft(&rendered.clean, &config).unwrap();
        let n = stft(&rendered.noise, &config).unwrap();
        let y = stft(&rendered.mixture, &config).unwrap();
        let irm = ideal_ratio_mask(&x, &n).unwrap();
        let enhanced = istft(&apply_mask(&y, &irm).unwrap()).unwrap();
        let before = si_snr(&rendered.clean, &rendered.mixture).unwrap();
        let after = si_snr(&rendered.clean, &enhanced).unwrap();
        assert!(
            after > before,
            "instance {i}: {after} dB not above {before} dB"
        );
        worst = worst.min(after - before);
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed} s");
    println!(
        "acceptance 7 (oracle IRM enhancement, worst improvement {worst:.2} dB): PASS in {elapsed:.2} s"
    );
}

// Thresholds pinned from the first seeded calibration run of this exact
// config (seed 20260808): per-SNR log_raw gaps 0.2146 and 0.2771, mean
// log_raw gap 0.2459, mean log_lsms gap 0.2251.
const GAP_RAW_PER_SNR_MIN: f64 = 0.10;
const GAP_RAW_MEAN_MIN: f64 = 0.12;
const GAP_LSMS_REDUCTION_MIN: f64 = 0.005;

fn pinned_gap_config() -> ExperimentConfig {
    ExperimentConfig {
        format_version: 1,
        seed: 20260808,
        sample_rate: SAMPLE_RATE,
        clean: MaterialSpec::Synthetic {
            count: 30,
            duration_s: 2.0,
        },
        noise: MaterialSpec::Synthetic {
            count: 3,
            duration_s: 3.0,
        },
        train_fraction: 2.0 / 3.0,
        train_channel: FirChannelSpec::LowShelf {
            name: "warm".into(),
            gain_db: 16.0,
            cutoff_hz: 800.0,
            len: 33,
        },
        test_channel: FirChannelSpec::HighShelf {
            name: "bright".into(),
            gain_db: 16.0,
            cutoff_hz: 1500.0,
            len: 33,
        },
        snr_grid_db: vec![-5.0, 0.0],
        train_snr_set_db: vec![-5.0, -4.0, -3.0, -2.0, -1.0, 0.0],
        feature_kinds: vec![FeatureKind::LogRaw, FeatureKind::LogLsms],
        frame_shifts_ms: vec![16],
        estimator: ExperimentEstimator {
            hidden_units: 32,
            context_radius: 1,
            epochs: 60,
            base_learning_rate: 8.0,
            batch_size: 4,
        },
        segment_s: 4.0,
        epsilon: DEFAULT_EPSILON,
        energy_mask_ratio: 0.01,
    }
}

#[test]
fn criterion_08_cross_channel_gap() {
    let start = Instant::now();
    let report = run_crosschannel_experiment(&pinned_gap_config()).unwrap();

    // Mismatched masked-loss exceeds matched at every SNR for raw features.
    for gap in report
        .gaps
        .iter()
        .filter(|g| g.feature_kind == FeatureKind::LogRaw)
    {
        assert!(
            gap.mismatched_loss > gap.matched_loss,
            "no gap at {} dB",
            gap.snr_db
        );
        assert!(
            gap.loss_gap > GAP_RAW_PER_SNR_MIN,
            "gap {} at {} dB below pinned {GAP_RAW_PER_SNR_MIN}",
            gap.loss_gap,
            gap.snr_db
        );
    }
    let raw = report.mean_loss_gap(FeatureKind::LogRaw, 16).unwrap();
    let normalized = report.mean_loss_gap(FeatureKind::LogLsms, 16).unwrap();
    assert!(raw >= GAP_RAW_MEAN_MIN, "mean raw gap {raw}");
    assert!(
        normalized < raw,
        "log_lsms gap {normalized} not below log_raw gap {raw}"
    );
    assert!(
        raw - normalized >= GAP_LSMS_REDUCTION_MIN,
        "reduction {} below pinned {GAP_LSMS_REDUCTION_MIN}",
        raw - normalized
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 600.0, "took {elapsed} s");
    println!(
        "acceptance 8 (cross-channel gap raw {raw:.4} -> lsms {normalized:.4}): PASS in {elapsed:.2} s"
    );
}

#[test]
fn criterion_09_frame_shift_effect() {
    let start = Instant::now();
    let shifts = [16u32, 8, 4, 2];
    for seed in 0..3u64 {
        let w = speech_like(sub_seed(900, seed), 1.0, SAMPLE_RATE);
        let points = frame_shift_study(&w, &shifts, 0.7, 0.25, 5, seed).unwrap();
        for pair in points.windows(2) {
            assert!(
                pair[1].rms_error <= pair[0].rms_error,
                "seed {seed}: error rose from {} ({} ms) to {} ({} ms)",
                pair[0].rms_error,
                pair[0].frame_shift_ms,
                pair[1].rms_error,
                pair[1].frame_shift_ms
            );
        }

        // Identity-mask reconstruction is exact at every shift.
        for &shift_ms in &shifts {
            let config = StftConfig::speech_16k(shift_ms).unwrap();
            let spec = stft(&w, &config).unwrap();
            let ones = Mask::ones(spec.frames(), spec.bins());
            let back = istft(&apply_mask(&spec, &ones).unwrap()).unwrap();
            assert!(max_abs_diff(&w, &back) < 1e-6 * w.peak());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "took {elapsed} s");
    println!("acceptance 9 (frame-shift averaging effect): PASS in {elapsed:.2} s");
}

#[test]
fn criterion_10_mixing_exactness() -> Result<()> {
    let start = Instant::now();
    let mut clean = WaveStore::new();
    for i in 0..8u64 {
        clean.insert(format!("c{i:02}"), speech_like(sub_seed(1010, i), 1.2, SAMPLE_RATE));
    }
    let mut noise = WaveStore::new();
    for i in 0..3u64 {
        noise.insert(format!("n{i}"), noise_like(sub_seed(1011, i), 2.0, SAMPLE_RATE));
    }
    let params = ManifestParams {
        seed: 424242,
        ..Default::default()
    };
    let manifest = build_manifest_from_stores(&clean, &noise, &params)?;
    let again = build_manifest_from_stores(&clean, &noise, &params)?;
    assert_eq!(manifest.to_jsonl().into_bytes(), again.to_jsonl().into_bytes());

    for rendered in render_manifest(&manifest, &clean, &noise)? {
        let achieved = chanlab::mix::achieved_snr_db(&rendered.clean, &rendered.noise);
        assert!(
            (achieved - rendered.spec.snr_db).abs() < 1e-6,
            "{} wanted {} got {achieved}",
            rendered.spec.clean_id,
            rendered.spec.snr_db
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    println!("acceptance 10 (mixing exactness + manifest determinism): PASS in {elapsed:.2} s");
    Ok(())
}
