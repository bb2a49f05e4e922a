//! Reproducible noisy-dataset construction: segment selection, SNR-exact
//! additive mixing, and seeded manifests for train/test splits.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::rng::{sub_seed, SplitMix64, RNG_ALGORITHM};

pub const DEFAULT_SEGMENT_S: f64 = 4.0;

pub fn default_snr_set_db() -> Vec<f64> {
    vec![-5.0, -4.0, -3.0, -2.0, -1.0, 0.0]
}

/// One mixture recipe: which sources, which segments, what SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub clean_id: String,
    pub noise_id: String,
    pub clean_offset: usize,
    pub noise_offset: usize,
    pub segment_len: usize,
    pub snr_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub rng: String,
    pub seed: u64,
    pub snr_set_db: Vec<f64>,
    pub segment_s: f64,
    pub clean_label: String,
    pub noise_label: String,
}

/// A seeded recipe binding clean utterances, noises, segments and SNRs into
/// reproducible mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub entries: Vec<MixtureSpec>,
}

impl Manifest {
    /// Line-delimited JSON: header line first, then one entry per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.header).expect("header serializes"));
        out.push('\n');
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Manifest> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| Error::ParseError("empty manifest".into()))?;
        let header: ManifestHeader = serde_json::from_str(header_line)?;
        if header.rng != RNG_ALGORITHM {
            return Err(Error::ParseError(format!(
                "manifest written with rng {:?}, this build uses {RNG_ALGORITHM:?}",
                header.rng
            )));
        }
        let entries = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<MixtureSpec>, _>>()?;
        Ok(Manifest { header, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        Manifest::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// Knobs for manifest construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestParams {
    pub snr_set_db: Vec<f64>,
    pub segment_s: f64,
    pub seed: u64,
    pub clean_label: String,
    pub noise_label: String,
}

impl Default for ManifestParams {
    fn default() -> Self {
        Self {
            snr_set_db: default_snr_set_db(),
            segment_s: DEFAULT_SEGMENT_S,
            seed: 0,
            clean_label: "clean".into(),
            noise_label: "noise".into(),
        }
    }
}

/// Identifier plus length of one source file, the only facts manifest
/// construction depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceListing {
    pub id: String,
    pub len: usize,
}

/// Gain `alpha` so that `speech + alpha * noise` sits at exactly `snr_db`:
/// `sqrt(P_speech / (P_noise * 10^(snr/10)))` over the given segments.
pub fn snr_gain(speech: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    let p_speech = speech.power();
    let p_noise = noise.power();
    if p_speech == 0.0 {
        return Err(Error::DegenerateSignal("silent speech segment"));
    }
    if p_noise == 0.0 {
        return Err(Error::DegenerateSignal("silent noise segment"));
    }
    Ok((p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// A rendered manifest entry. The three waveforms share one joint gain, so
/// `mixture = clean + noise` holds and the SNR is exactly the requested one.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMixture {
    pub spec: MixtureSpec,
    pub mixture: Waveform,
    pub clean: Waveform,
    pub noise: Waveform,
}

/// Mix the selected segments at the requested SNR, then rescale the triple
/// jointly so the mixture peaks at 1.
pub fn mix_at_snr(
    spec: &MixtureSpec,
    clean: &Waveform,
    noise: &Waveform,
) -> Result<RenderedMixture> {
    let x = clean.segment(spec.clean_offset, spec.segment_len)?;
    let n = noise.segment(spec.noise_offset, spec.segment_len)?;
    let alpha = snr_gain(&x, &n, spec.snr_db)?;

    let peak = x
        .samples()
        .iter()
        .zip(n.samples())
        .fold(0.0f64, |m, (a, b)| m.max((a + alpha * b).abs()));
    if peak == 0.0 {
        return Err(Error::DegenerateSignal("mixture is identically zero"));
    }
    let g = 1.0 / peak;

    let scaled_clean: Vec<f64> = x.samples().iter().map(|s| g * s).collect();
    let scaled_noise: Vec<f64> = n.samples().iter().map(|s| g * alpha * s).collect();
    let mixture: Vec<f64> = scaled_clean
        .iter()
        .zip(&scaled_noise)
        .map(|(a, b)| a + b)
        .collect();

    let rate = clean.sample_rate();
    Ok(RenderedMixture {
        spec: spec.clone(),
        mixture: Waveform::from_samples_unchecked(mixture, rate),
        clean: Waveform::from_samples_unchecked(scaled_clean, rate),
        noise: Waveform::from_samples_unchecked(scaled_noise, rate),
    })
}

/// Deterministic manifest over source listings. Each entry draws, from its
/// own sub-stream: clean offset, noise index (among noises long enough for
/// the segment), noise offset, then SNR.
pub fn build_manifest_from_listings(
    clean: &[SourceListing],
    noise: &[SourceListing],
    params: &ManifestParams,
    sample_rate: u32,
) -> Result<Manifest> {
    if clean.is_empty() {
        return Err(Error::EmptyCorpus("no clean sources".into()));
    }
    if noise.is_empty() {
        return Err(Error::EmptyCorpus("no noise sources".into()));
    }
    if params.snr_set_db.is_empty() {
        return Err(Error::ConfigError("empty SNR set".into()));
    }
    let segment_target = (params.segment_s * sample_rate as f64).round() as usize;
    if segment_target == 0 {
        return Err(Error::ConfigError("segment length is zero".into()));
    }

    let mut entries = Vec::with_capacity(clean.len());
    for (index, source) in clean.iter().enumerate() {
        let entry_seed = sub_seed(params.seed, index as u64);
        let mut rng = SplitMix64::new(entry_seed);

        // An utterance shorter than the segment target is used whole.
        let segment_len = segment_target.min(source.len);
        let clean_offset = rng.below(source.len - segment_len + 1);

        let eligible: Vec<&SourceListing> =
            noise.iter().filter(|n| n.len >= segment_len).collect();
        if eligible.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no noise source long enough for a {segment_len}-sample segment"
            )));
        }
        let chosen = eligible[rng.below(eligible.len())];
        let noise_offset = rng.below(chosen.len - segment_len + 1);
        let snr_db = params.snr_set_db[rng.below(params.snr_set_db.len())];

        entries.push(MixtureSpec {
            clean_id: source.id.clone(),
            noise_id: chosen.id.clone(),
            clean_offset,
            noise_offset,
            segment_len,
            snr_db,
            seed: entry_seed,
        });
    }

    Ok(Manifest {
        header: ManifestHeader {
            format_version: 1,
            rng: RNG_ALGORITHM.into(),
            seed: params.seed,
            snr_set_db: params.snr_set_db.clone(),
            segment_s: params.segment_s,
            clean_label: params.clean_label.clone(),
            noise_label: params.noise_label.clone(),
        },
        entries,
    })
}

/// Build a manifest from two directories of WAV files, identified by their
/// sorted file stems.
pub fn build_manifest(
    clean_dir: &Path,
    noise_dir: &Path,
    params: &ManifestParams,
) -> Result<Manifest> {
    let clean = list_wav_dir(clean_dir)?;
    let noise = list_wav_dir(noise_dir)?;
    build_manifest_from_listings(&clean, &noise, params, crate::audio::SAMPLE_RATE)
}

fn list_wav_dir(dir: &Path) -> Result<Vec<SourceListing>> {
    let mut listings = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("wav") {
            continue;
        }
        let reader = hound::WavReader::open(&path)
            .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        listings.push(SourceListing {
            id,
            len: reader.len() as usize,
        });
    }
    listings.sort_by(|a, b| a.id.cmp(&b.id));
    if listings.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no .wav files in {}",
            dir.display()
        )));
    }
    Ok(listings)
}

/// Seed for the epoch'th remix of a dataset built from `seed`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    sub_seed(seed, 0x4550_0000 + epoch as u64)
}

/// An id-addressable collection of waveforms, sorted by id.
#[derive(Debug, Clone, Default)]
pub struct WaveStore {
    map: BTreeMap<String, Waveform>,
}

impl WaveStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut store = Self::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("wav") {
                continue;
            }
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            store.insert(id, read_wav(&path)?);
        }
        if store.map.is_empty() {
            return Err(Error::EmptyCorpus(format!(
                "no .wav files in {}",
                dir.display()
            )));
        }
        Ok(store)
    }

    pub fn insert(&mut self, id: impl Into<String>, waveform: Waveform) {
        self.map.insert(id.into(), waveform);
    }

    pub fn get(&self, id: &str) -> Result<&Waveform> {
        self.map
            .get(id)
            .ok_or_else(|| Error::ConfigError(format!("unknown source id {id:?}")))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Waveform)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn listings(&self) -> Vec<SourceListing> {
        self.map
            .iter()
            .map(|(id, w)| SourceListing {
                id: id.clone(),
                len: w.len(),
            })
            .collect()
    }
}

/// Manifest construction straight from in-memory stores.
pub fn build_manifest_from_stores(
    clean: &WaveStore,
    noise: &WaveStore,
    params: &ManifestParams,
) -> Result<Manifest> {
    let sample_rate = clean
        .iter()
        .next()
        .map(|(_, w)| w.sample_rate())
        .unwrap_or(crate::audio::SAMPLE_RATE);
    build_manifest_from_listings(&clean.listings(), &noise.listings(), params, sample_rate)
}

pub fn render_entry(
    spec: &MixtureSpec,
    clean: &WaveStore,
    noise: &WaveStore,
) -> Result<RenderedMixture> {
    mix_at_snr(spec, clean.get(&spec.clean_id)?, noise.get(&spec.noise_id)?)
}

pub fn render_manifest(
    manifest: &Manifest,
    clean: &WaveStore,
    noise: &WaveStore,
) -> Result<Vec<RenderedMixture>> {
    manifest
        .entries
        .iter()
        .map(|spec| render_entry(spec, clean, noise))
        .collect()
}

/// Achieved SNR of a rendered clean/noise pair in dB.
pub fn achieved_snr_db(clean: &Waveform, noise: &Waveform) -> f64 {
    let ps: f64 = clean.samples().iter().map(|s| s * s).sum();
    let pn: f64 = noise.samples().iter().map(|s| s * s).sum();
    10.0 * (ps / pn).log10()
}
