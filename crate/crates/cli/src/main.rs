//! `chanlab` command line: channel estimation and removal, reproducible
//! mixing, oracle and model-based enhancement, metrics, and the
//! cross-channel experiment.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chanlab::audio::{
    read_wav, trim_silence, write_wav, WavEncoding, DEFAULT_TRIM_FRAME_MS,
    DEFAULT_TRIM_THRESHOLD_DB, SAMPLE_RATE,
};
use chanlab::channel::estimate_corpus_channel;
use chanlab::container::{
    channel_csv, load_channel, load_model, save_channel, save_model, series_csv,
    training_log_csv,
};
use chanlab::error::Result;
use chanlab::estimator::{FeatureKind, TrainJobConfig};
use chanlab::experiment::{run_crosschannel_experiment, ExperimentConfig, ExperimentReport};
use chanlab::mask::{apply_mask, ideal_ratio_mask};
use chanlab::metrics::{
    log_spectral_distance, segmental_snr, si_snr, SEG_SNR_CLAMP_DB, SEG_SNR_FRAME_MS,
};
use chanlab::mix::{build_manifest, render_entry, Manifest, ManifestParams, WaveStore};
use chanlab::stft::{istft, stft, StftConfig, Window, DEFAULT_EPSILON};

#[derive(Parser)]
#[command(
    name = "chanlab",
    about = "Speech enhancement channel lab: corpus channels, SNR mixing, mask estimation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    Pcm16,
    Float32,
}

impl From<EncodingArg> for WavEncoding {
    fn from(value: EncodingArg) -> Self {
        match value {
            EncodingArg::Pcm16 => WavEncoding::Pcm16,
            EncodingArg::Float32 => WavEncoding::Float32,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FigureKind {
    ChannelSpectrum,
    GapVsSnr,
}

#[derive(Args)]
struct StftArgs {
    /// Analysis frame length in milliseconds
    #[arg(long, default_value_t = 20.0)]
    frame_ms: f64,
    /// Analysis frame shift in milliseconds
    #[arg(long, default_value_t = 10.0)]
    shift_ms: f64,
    /// Use a rectangular window instead of Hamming
    #[arg(long)]
    rectangular: bool,
}

impl StftArgs {
    fn config(&self) -> Result<StftConfig> {
        let frame_len = (self.frame_ms / 1000.0 * SAMPLE_RATE as f64).round() as usize;
        let frame_shift = (self.shift_ms / 1000.0 * SAMPLE_RATE as f64).round() as usize;
        let window = if self.rectangular {
            Window::Rectangular
        } else {
            Window::Hamming
        };
        StftConfig::new(SAMPLE_RATE, frame_len, frame_shift, window)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the corpus channel of a directory of WAV files
    EstimateChannel {
        /// Directory of mono 16 kHz WAV files
        #[arg(long)]
        input_dir: PathBuf,
        /// CSV output (frequency_hz, log_gain)
        #[arg(long)]
        output: PathBuf,
        /// Also write the channel as a binary container
        #[arg(long)]
        bin_out: Option<PathBuf>,
        #[command(flatten)]
        stft: StftArgs,
        /// Skip silence trimming before estimation
        #[arg(long)]
        no_trim: bool,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Reconstruct an utterance with a corpus channel removed
    Renormalize {
        #[arg(long)]
        input: PathBuf,
        /// Channel container produced by estimate-channel --bin-out
        #[arg(long)]
        channel: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "float32")]
        encoding: EncodingArg,
    },
    /// Build or render seeded mixing manifests
    Mix {
        #[command(subcommand)]
        action: MixAction,
    },
    /// Apply the oracle ideal ratio mask to one manifest entry
    OracleEnhance {
        #[arg(long)]
        manifest: PathBuf,
        /// Entry index within the manifest
        #[arg(long)]
        entry: usize,
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        noise_dir: PathBuf,
        /// Enhanced output WAV
        #[arg(long)]
        output: PathBuf,
        /// Also write the scaled clean reference
        #[arg(long)]
        clean_out: Option<PathBuf>,
        /// Also write the rendered mixture
        #[arg(long)]
        mixture_out: Option<PathBuf>,
        /// STFT frame shift in milliseconds (frame is 32 ms)
        #[arg(long, default_value_t = 16)]
        shift_ms: u32,
    },
    /// Train a mask estimator from a JSON job config
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Model checkpoint output
        #[arg(long)]
        output: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Write the per-epoch training log as CSV
        #[arg(long)]
        log_csv: Option<PathBuf>,
    },
    /// Enhance a noisy WAV with a trained model
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "float32")]
        encoding: EncodingArg,
    },
    /// Report SI-SNR, segmental SNR and LSD between two WAV files
    Evaluate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        /// STFT frame shift in milliseconds for the LSD config
        #[arg(long, default_value_t = 16)]
        shift_ms: u32,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Run the cross-channel generalization experiment
    Experiment {
        /// Experiment JSON config
        #[arg(long)]
        config: PathBuf,
        /// Output directory for report.csv, gaps.csv and summary.json
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Export figure-ready CSV series from saved artifacts
    ExportFigure {
        #[arg(long, value_enum)]
        kind: FigureKind,
        /// channel-spectrum: a channel container; gap-vs-snr: summary.json
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Feature kind for gap-vs-snr
        #[arg(long)]
        feature_kind: Option<String>,
        /// Frame shift for gap-vs-snr
        #[arg(long, default_value_t = 16)]
        shift_ms: u32,
    },
}

#[derive(Subcommand)]
enum MixAction {
    /// Build a manifest from clean and noise directories
    Build {
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        noise_dir: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// SNR choices in dB (repeatable)
        #[arg(long = "snr-db", num_args = 1.., allow_negative_numbers = true)]
        snr_db: Vec<f64>,
        #[arg(long, default_value_t = 4.0)]
        segment_s: f64,
    },
    /// Render manifest entries to mixture/clean/noise WAV triples
    Render {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        clean_dir: PathBuf,
        #[arg(long)]
        noise_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Render a single entry instead of all
        #[arg(long)]
        entry: Option<usize>,
        #[arg(long, value_enum, default_value = "float32")]
        encoding: EncodingArg,
    },
}

fn parse_feature_kind(name: &str) -> Result<FeatureKind> {
    match name {
        "magnitude_sms" => Ok(FeatureKind::MagnitudeSms),
        "log_lsms" => Ok(FeatureKind::LogLsms),
        "log_rasta" => Ok(FeatureKind::LogRasta),
        "log_raw" => Ok(FeatureKind::LogRaw),
        other => Err(chanlab::Error::ConfigError(format!(
            "unknown feature kind {other:?}"
        ))),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::EstimateChannel {
            input_dir,
            output,
            bin_out,
            stft,
            no_trim,
            epsilon,
        } => {
            let config = stft.config()?;
            let store = WaveStore::from_dir(&input_dir)?;
            let utterances: Vec<_> = store
                .iter()
                .map(|(_, w)| {
                    if no_trim {
                        Ok(w.clone())
                    } else {
                        trim_silence(w, DEFAULT_TRIM_FRAME_MS, DEFAULT_TRIM_THRESHOLD_DB)
                    }
                })
                .collect::<Result<_>>()?;
            let channel = estimate_corpus_channel(&utterances, &config, epsilon)?;
            std::fs::write(&output, channel_csv(&channel))?;
            if let Some(path) = bin_out {
                save_channel(&path, &channel)?;
            }
            println!(
                "estimated channel over {} utterances ({} frames) -> {}",
                utterances.len(),
                channel.frame_count,
                output.display()
            );
        }
        Command::Renormalize {
            input,
            channel,
            output,
            encoding,
        } => {
            let channel = load_channel(&channel)?;
            let waveform = read_wav(&input)?;
            let restored = chanlab::channel::renormalize_utterance(&waveform, &channel)?;
            write_wav(&output, &restored, encoding.into())?;
            println!("renormalized {} -> {}", input.display(), output.display());
        }
        Command::Mix { action } => match action {
            MixAction::Build {
                clean_dir,
                noise_dir,
                output,
                seed,
                snr_db,
                segment_s,
            } => {
                let mut params = ManifestParams {
                    seed,
                    segment_s,
                    clean_label: clean_dir.display().to_string(),
                    noise_label: noise_dir.display().to_string(),
                    ..Default::default()
                };
                if !snr_db.is_empty() {
                    params.snr_set_db = snr_db;
                }
                let manifest = build_manifest(&clean_dir, &noise_dir, &params)?;
                manifest.save(&output)?;
                println!(
                    "wrote manifest with {} entries -> {}",
                    manifest.entries.len(),
                    output.display()
                );
            }
            MixAction::Render {
                manifest,
                clean_dir,
                noise_dir,
                out_dir,
                entry,
                encoding,
            } => {
                let manifest = Manifest::load(&manifest)?;
                let clean = WaveStore::from_dir(&clean_dir)?;
                let noise = WaveStore::from_dir(&noise_dir)?;
                std::fs::create_dir_all(&out_dir)?;
                let indices: Vec<usize> = match entry {
                    Some(index) => vec![index],
                    None => (0..manifest.entries.len()).collect(),
                };
                for index in indices {
                    let spec = manifest.entries.get(index).ok_or_else(|| {
                        chanlab::Error::ConfigError(format!(
                            "entry {index} out of range ({} entries)",
                            manifest.entries.len()
                        ))
                    })?;
                    let rendered = render_entry(spec, &clean, &noise)?;
                    let encoding: WavEncoding = encoding.into();
                    for (tag, wave) in [
                        ("mixture", &rendered.mixture),
                        ("clean", &rendered.clean),
                        ("noise", &rendered.noise),
                    ] {
                        let path = out_dir.join(format!("{index:04}_{tag}.wav"));
                        write_wav(&path, wave, encoding)?;
                    }
                }
                println!("rendered manifest entries into {}", out_dir.display());
            }
        },
        Command::OracleEnhance {
            manifest,
            entry,
            clean_dir,
            noise_dir,
            output,
            clean_out,
            mixture_out,
            shift_ms,
        } => {
            let manifest = Manifest::load(&manifest)?;
            let spec = manifest.entries.get(entry).ok_or_else(|| {
                chanlab::Error::ConfigError(format!(
                    "entry {entry} out of range ({} entries)",
                    manifest.entries.len()
                ))
            })?;
            let clean = WaveStore::from_dir(&clean_dir)?;
            let noise = WaveStore::from_dir(&noise_dir)?;
            let rendered = render_entry(spec, &clean, &noise)?;
            let config = StftConfig::speech_16k(shift_ms)?;
            let x = stft(&rendered.clean, &config)?;
            let n = stft(&rendered.noise, &config)?;
            let y = stft(&rendered.mixture, &config)?;
            let irm = ideal_ratio_mask(&x, &n)?;
            let enhanced = istft(&apply_mask(&y, &irm)?)?;
            write_wav(&output, &enhanced, WavEncoding::Float32)?;
            if let Some(path) = clean_out {
                write_wav(&path, &rendered.clean, WavEncoding::Float32)?;
            }
            if let Some(path) = mixture_out {
                write_wav(&path, &rendered.mixture, WavEncoding::Float32)?;
            }
            println!("oracle-enhanced entry {entry} -> {}", output.display());
        }
        Command::Train {
            config,
            output,
            seed,
            log_csv,
        } => {
            let mut job = TrainJobConfig::load(&config)?;
            if let Some(seed) = seed {
                job.seed = seed;
            }
            let (model, log) = chanlab::estimator::run_train_job(&job)?;
            save_model(&output, &model)?;
            if let Some(path) = log_csv {
                std::fs::write(&path, training_log_csv(&log))?;
            }
            let last = log.last().expect("at least one epoch");
            println!(
                "trained {} epochs, final loss {:.6} -> {}",
                last.epoch,
                last.mean_loss,
                output.display()
            );
        }
        Command::Enhance {
            model,
            input,
            output,
            encoding,
        } => {
            let model = load_model(&model)?;
            let noisy = read_wav(&input)?;
            let enhanced = model.enhance(&noisy)?;
            write_wav(&output, &enhanced, encoding.into())?;
            println!("enhanced {} -> {}", input.display(), output.display());
        }
        Command::Evaluate {
            reference,
            estimate,
            shift_ms,
            epsilon,
        } => {
            let reference = read_wav(&reference)?;
            let estimate = read_wav(&estimate)?;
            let config = StftConfig::speech_16k(shift_ms)?;
            let report = serde_json::json!({
                "si_snr_db": si_snr(&reference, &estimate)?,
                "seg_snr_db": segmental_snr(&reference, &estimate, SEG_SNR_FRAME_MS, SEG_SNR_CLAMP_DB)?,
                "lsd_db": log_spectral_distance(&reference, &estimate, &config, epsilon)?,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Experiment {
            config,
            out_dir,
            seed,
        } => {
            let mut config = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let report = run_crosschannel_experiment(&config)?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("report.csv"), report.records_csv())?;
            std::fs::write(out_dir.join("gaps.csv"), report.gaps_csv())?;
            std::fs::write(out_dir.join("summary.json"), report.summary_json()?)?;
            for &shift in &config.frame_shifts_ms {
                for &kind in &config.feature_kinds {
                    if let Some(gap) = report.mean_loss_gap(kind, shift) {
                        println!("{} @ {shift} ms: mean loss gap {gap:.6}", kind.name());
                    }
                }
            }
            println!("experiment artifacts in {}", out_dir.display());
        }
        Command::ExportFigure {
            kind,
            input,
            output,
            feature_kind,
            shift_ms,
        } => match kind {
            FigureKind::ChannelSpectrum => {
                let channel = load_channel(&input)?;
                std::fs::write(&output, channel_csv(&channel))?;
                println!("channel spectrum -> {}", output.display());
            }
            FigureKind::GapVsSnr => {
                let report: ExperimentReport =
                    serde_json::from_str(&std::fs::read_to_string(&input)?)?;
                let kind = parse_feature_kind(&feature_kind.ok_or_else(|| {
                    chanlab::Error::ConfigError("gap-vs-snr needs --feature-kind".into())
                })?)?;
                let series = report.gap_series(kind, shift_ms);
                if series.is_empty() {
                    return Err(chanlab::Error::ConfigError(format!(
                        "no gap records for {} at {shift_ms} ms",
                        kind.name()
                    )));
                }
                std::fs::write(&output, series_csv("snr_db", "loss_gap", &series))?;
                println!("gap-vs-snr series -> {}", output.display());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::FAILURE
        }
    }
}
