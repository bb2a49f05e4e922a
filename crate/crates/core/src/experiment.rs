//! The desk-scale cross-channel generalization experiment: synthesize two
//! corpora that differ only by a known recording channel, train mask
//! estimators per feature kind and frame shift on one, and measure the
//! matched-versus-mismatched metric gap on held-out material.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::audio::{trim_silence, Waveform, DEFAULT_TRIM_FRAME_MS, DEFAULT_TRIM_THRESHOLD_DB};
use crate::channel::{apply_fir_channel, FirChannel};
use crate::error::{Error, Result};
use crate::estimator::{
    prepare_example, train, EstimatorSpec, FeatureKind, MaskEstimator, TrainConfig,
};
use crate::mask::{apply_mask, masked_mse_loss, Mask};
use crate::metrics::{
    log_spectral_distance, segmental_snr, si_snr, SEG_SNR_CLAMP_DB, SEG_SNR_FRAME_MS,
};
use crate::mix::{
    build_manifest_from_stores, render_manifest, ManifestParams, WaveStore,
};
use crate::rng::{sub_seed, SplitMix64};
use crate::stft::{istft, stft, StftConfig, DEFAULT_EPSILON};
use crate::synth::{noise_like, speech_like};

/// Where experiment material comes from: seeded synthesis or a directory of
/// WAV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum MaterialSpec {
    Synthetic { count: usize, duration_s: f64 },
    Dir { path: PathBuf },
}

/// A recording channel, as explicit taps, a parametric generator, or a tap
/// file on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FirChannelSpec {
    Identity,
    Taps {
        name: String,
        values: Vec<f64>,
    },
    LowShelf {
        name: String,
        gain_db: f64,
        cutoff_hz: f64,
        len: usize,
    },
    HighShelf {
        name: String,
        gain_db: f64,
        cutoff_hz: f64,
        len: usize,
    },
    Peak {
        name: String,
        gain_db: f64,
        center_hz: f64,
        bandwidth_hz: f64,
        len: usize,
    },
    File {
        path: PathBuf,
    },
}

impl FirChannelSpec {
    pub fn build(&self, sample_rate: u32) -> Result<FirChannel> {
        match self {
            FirChannelSpec::Identity => Ok(FirChannel::identity()),
            FirChannelSpec::Taps { name, values } => FirChannel::new(name.clone(), values.clone()),
            FirChannelSpec::LowShelf {
                name,
                gain_db,
                cutoff_hz,
                len,
            } => FirChannel::low_shelf(name.clone(), *gain_db, *cutoff_hz, *len, sample_rate),
            FirChannelSpec::HighShelf {
                name,
                gain_db,
                cutoff_hz,
                len,
            } => FirChannel::high_shelf(name.clone(), *gain_db, *cutoff_hz, *len, sample_rate),
            FirChannelSpec::Peak {
                name,
                gain_db,
                center_hz,
                bandwidth_hz,
                len,
            } => FirChannel::resonant_peak(
                name.clone(),
                *gain_db,
                *center_hz,
                *bandwidth_hz,
                *len,
                sample_rate,
            ),
            FirChannelSpec::File { path } => FirChannel::from_tap_file(path),
        }
    }
}

/// Estimator and trainer knobs for the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEstimator {
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    #[serde(default = "default_context_radius")]
    pub context_radius: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_base_learning_rate")]
    pub base_learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_hidden_units() -> usize {
    32
}
fn default_context_radius() -> usize {
    1
}
fn default_epochs() -> usize {
    12
}
fn default_base_learning_rate() -> f64 {
    0.5
}
fn default_batch_size() -> usize {
    4
}

impl Default for ExperimentEstimator {
    fn default() -> Self {
        Self {
            hidden_units: default_hidden_units(),
            context_radius: default_context_radius(),
            epochs: default_epochs(),
            base_learning_rate: default_base_learning_rate(),
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub seed: u64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    pub clean: MaterialSpec,
    pub noise: MaterialSpec,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub train_channel: FirChannelSpec,
    pub test_channel: FirChannelSpec,
    pub snr_grid_db: Vec<f64>,
    #[serde(default = "crate::mix::default_snr_set_db")]
    pub train_snr_set_db: Vec<f64>,
    pub feature_kinds: Vec<FeatureKind>,
    #[serde(default = "default_frame_shifts")]
    pub frame_shifts_ms: Vec<u32>,
    #[serde(default)]
    pub estimator: ExperimentEstimator,
    #[serde(default = "default_segment_s")]
    pub segment_s: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_energy_mask_ratio")]
    pub energy_mask_ratio: f64,
}

fn default_format_version() -> u32 {
    1
}
fn default_sample_rate() -> u32 {
    16_000
}
fn default_train_fraction() -> f64 {
    2.0 / 3.0
}
fn default_frame_shifts() -> Vec<u32> {
    vec![16]
}
fn default_segment_s() -> f64 {
    crate::mix::DEFAULT_SEGMENT_S
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_energy_mask_ratio() -> f64 {
    crate::mask::DEFAULT_ENERGY_MASK_RATIO
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let config: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::ConfigError(
                "train_fraction must be in (0, 1)".into(),
            ));
        }
        if self.feature_kinds.is_empty() {
            return Err(Error::ConfigError("no feature kinds".into()));
        }
        if self.snr_grid_db.is_empty() || self.train_snr_set_db.is_empty() {
            return Err(Error::ConfigError("empty SNR grid".into()));
        }
        if self.frame_shifts_ms.is_empty() {
            return Err(Error::ConfigError("no frame shifts".into()));
        }
        for &shift in &self.frame_shifts_ms {
            StftConfig::speech_16k(shift)?;
        }
        Ok(())
    }
}

/// Mean metrics of one (feature, shift, channel pair, SNR) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub feature_kind: FeatureKind,
    pub frame_shift_ms: u32,
    pub train_channel: String,
    pub test_channel: String,
    pub snr_db: f64,
    pub masked_loss: f64,
    pub si_snr_db: f64,
    pub seg_snr_db: f64,
    pub lsd_db: f64,
}

/// Matched-versus-mismatched summary per (feature, shift, SNR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub feature_kind: FeatureKind,
    pub frame_shift_ms: u32,
    pub snr_db: f64,
    pub matched_loss: f64,
    pub mismatched_loss: f64,
    pub loss_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub records: Vec<ConditionRecord>,
    pub gaps: Vec<GapRecord>,
}

impl ExperimentReport {
    pub fn records_csv(&self) -> String {
        let mut out = String::from(
            "feature_kind,frame_shift_ms,train_channel,test_channel,snr_db,masked_loss,si_snr_db,seg_snr_db,lsd_db\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.feature_kind.name(),
                r.frame_shift_ms,
                r.train_channel,
                r.test_channel,
                r.snr_db,
                r.masked_loss,
                r.si_snr_db,
                r.seg_snr_db,
                r.lsd_db
            ));
        }
        out
    }

    pub fn gaps_csv(&self) -> String {
        let mut out = String::from(
            "feature_kind,frame_shift_ms,snr_db,matched_loss,mismatched_loss,loss_gap\n",
        );
        for g in &self.gaps {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                g.feature_kind.name(),
                g.frame_shift_ms,
                g.snr_db,
                g.matched_loss,
                g.mismatched_loss,
                g.loss_gap
            ));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Mean loss gap over the SNR grid for one feature kind and shift.
    pub fn mean_loss_gap(&self, kind: FeatureKind, frame_shift_ms: u32) -> Option<f64> {
        let gaps: Vec<f64> = self
            .gaps
            .iter()
            .filter(|g| g.feature_kind == kind && g.frame_shift_ms == frame_shift_ms)
            .map(|g| g.loss_gap)
            .collect();
        if gaps.is_empty() {
            None
        } else {
            Some(gaps.iter().sum::<f64>() / gaps.len() as f64)
        }
    }

    /// (snr, gap) series for one feature kind, for figure export.
    pub fn gap_series(&self, kind: FeatureKind, frame_shift_ms: u32) -> Vec<(f64, f64)> {
        self.gaps
            .iter()
            .filter(|g| g.feature_kind == kind && g.frame_shift_ms == frame_shift_ms)
            .map(|g| (g.snr_db, g.loss_gap))
            .collect()
    }
}

fn load_material(
    spec: &MaterialSpec,
    seed: u64,
    sample_rate: u32,
    speechy: bool,
    prefix: &str,
) -> Result<Vec<(String, Waveform)>> {
    match spec {
        MaterialSpec::Synthetic { count, duration_s } => {
            if *count == 0 {
                return Err(Error::EmptyCorpus("synthetic count is zero".into()));
            }
            Ok((0..*count)
                .map(|i| {
                    let item_seed = sub_seed(seed, i as u64);
                    let w = if speechy {
                        speech_like(item_seed, *duration_s, sample_rate)
                    } else {
                        noise_like(item_seed, *duration_s, sample_rate)
                    };
                    (format!("{prefix}{i:03}"), w)
                })
                .collect())
        }
        MaterialSpec::Dir { path } => {
            let store = WaveStore::from_dir(path)?;
            Ok(store
                .iter()
                .map(|(id, w)| (id.to_string(), w.clone()))
                .collect())
        }
    }
}

fn channeled_store(
    material: &[(String, Waveform)],
    channel: &FirChannel,
) -> WaveStore {
    let mut store = WaveStore::new();
    for (id, w) in material {
        store.insert(id.clone(), apply_fir_channel(w, channel));
    }
    store
}

struct TestSet {
    label: String,
    rendered_per_snr: Vec<(f64, Vec<crate::mix::RenderedMixture>)>,
}

/// Train-on-A, test-on-A-and-B over the whole (feature kind, frame shift)
/// grid. Both test corpora render the same manifests, so the only difference
/// between matched and mismatched conditions is the recording channel.
pub fn run_crosschannel_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let sample_rate = config.sample_rate;

    let clean = load_material(
        &config.clean,
        sub_seed(config.seed, 1),
        sample_rate,
        true,
        "clean",
    )?;
    let noise_material = load_material(
        &config.noise,
        sub_seed(config.seed, 2),
        sample_rate,
        false,
        "noise",
    )?;

    // Trim once on shared raw material so both corpora segment identically.
    let clean: Vec<(String, Waveform)> = clean
        .into_iter()
        .map(|(id, w)| {
            let trimmed = trim_silence(&w, DEFAULT_TRIM_FRAME_MS, DEFAULT_TRIM_THRESHOLD_DB)
                .unwrap_or(w);
            (id, trimmed)
        })
        .collect();

    let n_train = ((clean.len() as f64) * config.train_fraction).round() as usize;
    if n_train == 0 || n_train >= clean.len() {
        return Err(Error::ConfigError(format!(
            "train fraction {} leaves no train or no test utterances of {}",
            config.train_fraction,
            clean.len()
        )));
    }
    let (train_clean, test_clean) = clean.split_at(n_train);

    let train_channel = config.train_channel.build(sample_rate)?;
    let test_channel = config.test_channel.build(sample_rate)?;

    let train_store = channeled_store(train_clean, &train_channel);
    let matched_store = channeled_store(test_clean, &train_channel);
    let mismatched_store = channeled_store(test_clean, &test_channel);

    let mut noise_store = WaveStore::new();
    for (id, w) in &noise_material {
        noise_store.insert(id.clone(), w.clone());
    }

    let train_manifest = build_manifest_from_stores(
        &train_store,
        &noise_store,
        &ManifestParams {
            snr_set_db: config.train_snr_set_db.clone(),
            segment_s: config.segment_s,
            seed: sub_seed(config.seed, 3),
            clean_label: format!("train:{}", train_channel.name),
            noise_label: "noise".into(),
        },
    )?;
    let train_rendered = render_manifest(&train_manifest, &train_store, &noise_store)?;

    // One test manifest per SNR, rendered against both channel variants.
    let mut test_sets = Vec::new();
    for (which, store, channel_name) in [
        ("matched", &matched_store, train_channel.name.clone()),
        ("mismatched", &mismatched_store, test_channel.name.clone()),
    ] {
        let mut rendered_per_snr = Vec::new();
        for (k, &snr) in config.snr_grid_db.iter().enumerate() {
            let manifest = build_manifest_from_stores(
                store,
                &noise_store,
                &ManifestParams {
                    snr_set_db: vec![snr],
                    segment_s: config.segment_s,
                    seed: sub_seed(config.seed, 100 + k as u64),
                    clean_label: format!("test:{channel_name}"),
                    noise_label: "noise".into(),
                },
            )?;
            rendered_per_snr.push((snr, render_manifest(&manifest, store, &noise_store)?));
        }
        test_sets.push(TestSet {
            label: format!("{which}:{channel_name}"),
            rendered_per_snr,
        });
    }

    let mut records = Vec::new();
    let mut gaps = Vec::new();
    for &shift_ms in &config.frame_shifts_ms {
        let stft_config = StftConfig::speech_16k(shift_ms)?;
        for &kind in &config.feature_kinds {
            let mut spec = EstimatorSpec::new(kind, stft_config);
            spec.context_radius = config.estimator.context_radius;
            spec.hidden_units = config.estimator.hidden_units;
            spec.epsilon = config.epsilon;
            spec.energy_mask_ratio = config.energy_mask_ratio;

            let examples = train_rendered
                .iter()
                .map(|r| prepare_example(r, &spec))
                .collect::<Result<Vec<_>>>()?;
            let train_config = TrainConfig {
                epochs: config.estimator.epochs,
                base_learning_rate: config.estimator.base_learning_rate,
                batch_size: config.estimator.batch_size,
                seed: sub_seed(config.seed, 4),
            };
            let (model, _log) = train(&examples, &spec, &train_config)?;

            let mut per_set_losses: Vec<Vec<f64>> = Vec::new();
            for set in &test_sets {
                let mut snr_losses = Vec::new();
                for (snr, rendered) in &set.rendered_per_snr {
                    let record = evaluate_condition(&model, &spec, rendered)?;
                    snr_losses.push(record.masked_loss);
                    records.push(ConditionRecord {
                        feature_kind: kind,
                        frame_shift_ms: shift_ms,
                        train_channel: train_channel.name.clone(),
                        test_channel: set.label.clone(),
                        snr_db: *snr,
                        masked_loss: record.masked_loss,
                        si_snr_db: record.si_snr_db,
                        seg_snr_db: record.seg_snr_db,
                        lsd_db: record.lsd_db,
                    });
                }
                per_set_losses.push(snr_losses);
            }
            for (k, &snr) in config.snr_grid_db.iter().enumerate() {
                let matched_loss = per_set_losses[0][k];
                let mismatched_loss = per_set_losses[1][k];
                gaps.push(GapRecord {
                    feature_kind: kind,
                    frame_shift_ms: shift_ms,
                    snr_db: snr,
                    matched_loss,
                    mismatched_loss,
                    loss_gap: mismatched_loss - matched_loss,
                });
            }
        }
    }

    Ok(ExperimentReport {
        config: config.clone(),
        records,
        gaps,
    })
}

struct ConditionMetrics {
    masked_loss: f64,
    si_snr_db: f64,
    seg_snr_db: f64,
    lsd_db: f64,
}

fn evaluate_condition(
    model: &MaskEstimator,
    spec: &EstimatorSpec,
    rendered: &[crate::mix::RenderedMixture],
) -> Result<ConditionMetrics> {
    let mut loss_sum = 0.0;
    let mut si_sum = 0.0;
    let mut seg_sum = 0.0;
    let mut lsd_sum = 0.0;
    for mixture in rendered {
        let example = prepare_example(mixture, spec)?;
        let rm = model.forward(&example.features)?;
        loss_sum += masked_mse_loss(&example.irm, &rm, &example.weight_mask)?;

        let noisy = stft(&mixture.mixture, &spec.stft)?;
        let enhanced = istft(&apply_mask(&noisy, &rm)?)?;
        si_sum += si_snr(&mixture.clean, &enhanced)?;
        seg_sum += segmental_snr(&mixture.clean, &enhanced, SEG_SNR_FRAME_MS, SEG_SNR_CLAMP_DB)?;
        lsd_sum += log_spectral_distance(&mixture.clean, &enhanced, &spec.stft, spec.epsilon)?;
    }
    let n = rendered.len() as f64;
    Ok(ConditionMetrics {
        masked_loss: loss_sum / n,
        si_snr_db: si_sum / n,
        seg_snr_db: seg_sum / n,
        lsd_db: lsd_sum / n,
    })
}

/// One point of the frame-shift study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftStudyPoint {
    pub frame_shift_ms: u32,
    pub rms_error: f64,
}

/// Reconstruction error of a jittered constant mask across frame shifts. The
/// reference is the exact constant-mask output `level * signal`; with smaller
/// shifts more overlapping frames average out the per-frame jitter. The
/// reported error is the RMS over `draws` independent jitter realizations,
/// measured on the fully-overlapped interior (one frame length excluded at
/// each end, where coverage is still ramping up).
pub fn frame_shift_study(
    signal: &Waveform,
    shifts_ms: &[u32],
    mask_level: f64,
    jitter: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<ShiftStudyPoint>> {
    if !(0.0..=1.0).contains(&mask_level) || jitter < 0.0 || mask_level + jitter > 1.0 {
        return Err(Error::ConfigError(
            "mask level and jitter must keep the mask inside [0, 1]".into(),
        ));
    }
    if draws == 0 {
        return Err(Error::ConfigError("draws must be positive".into()));
    }
    let mut points = Vec::new();
    for (k, &shift_ms) in shifts_ms.iter().enumerate() {
        let config = StftConfig::speech_16k(shift_ms)?;
        if signal.len() < 3 * config.frame_len {
            return Err(Error::SignalTooShort {
                needed: 3 * config.frame_len,
                got: signal.len(),
            });
        }
        let interior = config.frame_len..signal.len() - config.frame_len;
        let spec = stft(signal, &config)?;
        let (frames, bins) = spec.values.dim();
        let mut mean_sq = 0.0;
        for draw in 0..draws {
            let mut rng =
                SplitMix64::new(sub_seed(seed, (k * draws + draw) as u64));
            let mask = Mask::new(ndarray::Array2::from_shape_fn((frames, bins), |_| {
                mask_level + jitter * (2.0 * rng.next_f64() - 1.0)
            }))?;
            let out = istft(&apply_mask(&spec, &mask)?)?;
            let mut sq = 0.0;
            for i in interior.clone() {
                let d = out.samples()[i] - mask_level * signal.samples()[i];
                sq += d * d;
            }
            mean_sq += sq / interior.len() as f64;
        }
        points.push(ShiftStudyPoint {
            frame_shift_ms: shift_ms,
            rms_error: (mean_sq / draws as f64).sqrt(),
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(train_kind: FirChannelSpec, test_kind: FirChannelSpec) -> ExperimentConfig {
        ExperimentConfig {
            format_version: 1,
            seed: 11,
            sample_rate: 16_000,
            clean: MaterialSpec::Synthetic {
                count: 6,
                duration_s: 0.6,
            },
            noise: MaterialSpec::Synthetic {
                count: 2,
                duration_s: 1.2,
            },
            train_fraction: 2.0 / 3.0,
            train_channel: train_kind,
            test_channel: test_kind,
            snr_grid_db: vec![-5.0],
            train_snr_set_db: vec![-5.0, -3.0, 0.0],
            feature_kinds: vec![FeatureKind::LogRaw],
            frame_shifts_ms: vec![16],
            estimator: ExperimentEstimator {
                hidden_units: 8,
                context_radius: 0,
                epochs: 2,
                base_learning_rate: 0.3,
                batch_size: 2,
            },
            segment_s: 0.5,
            epsilon: DEFAULT_EPSILON,
            energy_mask_ratio: 0.01,
        }
    }

    #[test]
    fn identical_channels_give_zero_gap() {
        let config = tiny_config(FirChannelSpec::Identity, FirChannelSpec::Identity);
        let report = run_crosschannel_experiment(&config).unwrap();
        for gap in &report.gaps {
            assert!(
                gap.loss_gap.abs() < 1e-12,
                "gap {} should vanish",
                gap.loss_gap
            );
        }
        assert_eq!(report.records.len(), 2); // matched + mismatched at one SNR
    }

    #[test]
    fn report_csv_is_reproducible() {
        let config = tiny_config(
            FirChannelSpec::LowShelf {
                name: "warm".into(),
                gain_db: 8.0,
                cutoff_hz: 1000.0,
                len: 33,
            },
            FirChannelSpec::Identity,
        );
        let a = run_crosschannel_experiment(&config).unwrap();
        let b = run_crosschannel_experiment(&config).unwrap();
        assert_eq!(a.records_csv(), b.records_csv());
        assert_eq!(a.gaps_csv(), b.gaps_csv());
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut config = tiny_config(FirChannelSpec::Identity, FirChannelSpec::Identity);
        config.feature_kinds.clear();
        assert!(matches!(config.validate(), Err(Error::ConfigError(_))));
        let mut config = tiny_config(FirChannelSpec::Identity, FirChannelSpec::Identity);
        config.train_fraction = 1.5;
        assert!(matches!(config.validate(), Err(Error::ConfigError(_))));
        let mut config = tiny_config(FirChannelSpec::Identity, FirChannelSpec::Identity);
        config.frame_shifts_ms = vec![12];
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_json_round_trips() {
        let config = tiny_config(
            FirChannelSpec::Peak {
                name: "presence".into(),
                gain_db: 6.0,
                center_hz: 2500.0,
                bandwidth_hz: 800.0,
                len: 65,
            },
            FirChannelSpec::Identity,
        );
        let text = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(config, back);
    }

    #[test]
    fn shift_study_rejects_out_of_range_masks() {
        let w = crate::synth::speech_like(1, 0.3, 16_000);
        assert!(frame_shift_study(&w, &[16], 0.9, 0.2, 3, 0).is_err());
        assert!(frame_shift_study(&w, &[16], 0.7, 0.2, 0, 0).is_err());
    }
}
