//! A desk-scale trainable mask predictor: spliced spectral features through
//! one rectified hidden layer into per-bin sigmoid outputs, trained with
//! mini-batch gradient descent under the energy-masked MSE objective and a
//! step-decay learning-rate schedule.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::channel::{lsms, rasta, sms, DEFAULT_RASTA_C};
use crate::error::{Error, Result};
use crate::mask::{
    energy_mask, ideal_ratio_mask, BinaryMask, Mask, DEFAULT_ENERGY_MASK_RATIO,
};
use crate::mix::{render_manifest, Manifest, RenderedMixture, WaveStore};
use crate::rng::{shuffle, sub_seed, SplitMix64};
use crate::stft::{log_magnitude, stft, StftConfig, Window, DEFAULT_EPSILON};

/// Which per-frame spectral representation feeds the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    MagnitudeSms,
    LogLsms,
    LogRasta,
    LogRaw,
}

impl FeatureKind {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureKind::MagnitudeSms => "magnitude_sms",
            FeatureKind::LogLsms => "log_lsms",
            FeatureKind::LogRasta => "log_rasta",
            FeatureKind::LogRaw => "log_raw",
        }
    }
}

/// Per-frame features: the chosen normalization of the spectrum, spliced
/// with `context_radius` neighbor frames on each side (edges replicate).
/// Standardization is the estimator's job, using its frozen training stats.
pub fn extract_features(
    mixture: &Waveform,
    config: &StftConfig,
    kind: FeatureKind,
    context_radius: usize,
    epsilon: f64,
) -> Result<Array2<f64>> {
    let spec = stft(mixture, config)?;
    let base = match kind {
        FeatureKind::MagnitudeSms => sms(&spec.magnitude()),
        FeatureKind::LogLsms => lsms(&log_magnitude(&spec, epsilon)?).values,
        FeatureKind::LogRasta => rasta(&log_magnitude(&spec, epsilon)?, DEFAULT_RASTA_C).values,
        FeatureKind::LogRaw => log_magnitude(&spec, epsilon)?.values,
    };
    Ok(splice(&base, context_radius))
}

/// Concatenate each frame with its +-radius neighbors, replicating edges.
/// Blocks run from the left context to the right context.
pub fn splice(base: &Array2<f64>, radius: usize) -> Array2<f64> {
    let (frames, bins) = base.dim();
    let width = 2 * radius + 1;
    let mut out = Array2::zeros((frames, width * bins));
    for t in 0..frames {
        for (block, offset) in (-(radius as isize)..=radius as isize).enumerate() {
            let src = (t as isize + offset).clamp(0, frames as isize - 1) as usize;
            for f in 0..bins {
                out[(t, block * bins + f)] = base[(src, f)];
            }
        }
    }
    out
}

/// Per-dimension standardization parameters, fit on training data only.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn fit<'a>(feature_sets: impl Iterator<Item = &'a Array2<f64>>, dim: usize) -> Self {
        let mut count = 0usize;
        let mut sum = vec![0.0f64; dim];
        let mut sum_sq = vec![0.0f64; dim];
        for features in feature_sets {
            for row in features.rows() {
                for (d, &v) in row.iter().enumerate() {
                    sum[d] += v;
                    sum_sq[d] += v * v;
                }
            }
            count += features.nrows();
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / n - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, features: &Array2<f64>) -> Array2<f64> {
        let mut out = features.clone();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.scale[d];
            }
        }
        out
    }
}

/// input -> rectified hidden -> sigmoid output per frequency bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskEstimator {
    pub(crate) w1: Array2<f64>, // hidden x input
    pub(crate) b1: Array1<f64>,
    pub(crate) w2: Array2<f64>, // output x hidden
    pub(crate) b2: Array1<f64>,
    pub feature_kind: FeatureKind,
    pub context_radius: usize,
    pub stats: FeatureStats,
    pub stft: StftConfig,
    pub epsilon: f64,
}

/// Exact partial derivatives of the masked loss, same shapes as the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    /// All partials in the model's flat parameter order.
    pub fn flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MaskEstimator {
    /// Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        input_dim: usize,
        hidden_units: usize,
        output_bins: usize,
        feature_kind: FeatureKind,
        context_radius: usize,
        stats: FeatureStats,
        stft: StftConfig,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_units == 0 || output_bins == 0 {
            return Err(Error::ConfigError("zero-sized estimator layer".into()));
        }
        if stats.mean.len() != input_dim {
            return Err(Error::ShapeError {
                expected: (input_dim, 1),
                found: (stats.mean.len(), 1),
            });
        }
        let mut rng = SplitMix64::new(seed);
        let b_in = (6.0 / (input_dim + hidden_units) as f64).sqrt();
        let w1 = Array2::from_shape_fn((hidden_units, input_dim), |_| rng.uniform(-b_in, b_in));
        let b_out = (6.0 / (hidden_units + output_bins) as f64).sqrt();
        let w2 = Array2::from_shape_fn((output_bins, hidden_units), |_| {
            rng.uniform(-b_out, b_out)
        });
        Ok(Self {
            w1,
            b1: Array1::zeros(hidden_units),
            w2,
            b2: Array1::zeros(output_bins),
            feature_kind,
            context_radius,
            stats,
            stft,
            epsilon,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_units(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_bins(&self) -> usize {
        self.w2.nrows()
    }

    /// Total trainable parameter count (w1, b1, w2, b2).
    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Add `delta` to the parameter at `index` in flat order, the order
    /// [`Gradients::flat`] reports partials in.
    pub fn perturb_parameter(&mut self, index: usize, delta: f64) {
        let mut idx = index;
        if idx < self.w1.len() {
            *self.w1.iter_mut().nth(idx).expect("in range") += delta;
            return;
        }
        idx -= self.w1.len();
        if idx < self.b1.len() {
            self.b1[idx] += delta;
            return;
        }
        idx -= self.b1.len();
        if idx < self.w2.len() {
            *self.w2.iter_mut().nth(idx).expect("in range") += delta;
            return;
        }
        idx -= self.w2.len();
        self.b2[idx] += delta;
    }

    fn check_input(&self, features: &Array2<f64>) -> Result<()> {
        if features.ncols() != self.input_dim() {
            return Err(Error::ShapeError {
                expected: (features.nrows(), self.input_dim()),
                found: features.dim(),
            });
        }
        Ok(())
    }

    /// Deterministic forward pass over raw (un-standardized) features.
    pub fn forward(&self, features: &Array2<f64>) -> Result<Mask> {
        let (_, _, rm) = self.forward_full(features)?;
        Mask::new(rm)
    }

    /// Forward pass keeping intermediates for backprop: standardized input,
    /// hidden pre-activations, and the output mask values.
    fn forward_full(
        &self,
        features: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        self.check_input(features)?;
        let x = self.stats.apply(features);
        let mut h_pre = x.dot(&self.w1.t());
        for mut row in h_pre.rows_mut() {
            row += &self.b1;
        }
        let h = h_pre.mapv(|z| z.max(0.0));
        let mut o_pre = h.dot(&self.w2.t());
        for mut row in o_pre.rows_mut() {
            row += &self.b2;
        }
        let rm = o_pre.mapv(sigmoid);
        Ok((x, h_pre, rm))
    }

    /// Masked loss and its exact gradients for one utterance.
    pub fn loss_and_gradients(
        &self,
        features: &Array2<f64>,
        irm: &Mask,
        weight_mask: &BinaryMask,
    ) -> Result<(f64, Gradients)> {
        let (x, h_pre, rm) = self.forward_full(features)?;
        if irm.dim() != rm.dim() {
            return Err(Error::ShapeError {
                expected: rm.dim(),
                found: irm.dim(),
            });
        }
        if weight_mask.dim() != rm.dim() {
            return Err(Error::ShapeError {
                expected: rm.dim(),
                found: weight_mask.dim(),
            });
        }
        let support: f64 = weight_mask.values().sum();
        if support == 0.0 {
            return Err(Error::EmptyLossSupport);
        }

        let mut loss = 0.0;
        let mut d_out = Array2::zeros(rm.dim());
        for ((idx, &r), (&target, &m)) in rm
            .indexed_iter()
            .zip(irm.values().iter().zip(weight_mask.values().iter()))
        {
            let diff = target - r;
            loss += diff * diff * m;
            // d(loss)/d(o_pre) through the squared error and the sigmoid
            d_out[idx] = 2.0 * (r - target) * m / support * r * (1.0 - r);
        }
        loss /= support;

        let h = h_pre.mapv(|z| z.max(0.0));
        let g_w2 = d_out.t().dot(&h);
        let g_b2 = d_out.sum_axis(Axis(0));

        let mut d_hidden = d_out.dot(&self.w2);
        for (dh, &pre) in d_hidden.iter_mut().zip(h_pre.iter()) {
            if pre <= 0.0 {
                *dh = 0.0;
            }
        }
        let g_w1 = d_hidden.t().dot(&x);
        let g_b1 = d_hidden.sum_axis(Axis(0));

        Ok((
            loss,
            Gradients {
                w1: g_w1,
                b1: g_b1,
                w2: g_w2,
                b2: g_b2,
            },
        ))
    }

    fn apply_update(&mut self, grads: &Gradients, learning_rate: f64) {
        self.w1.scaled_add(-learning_rate, &grads.w1);
        self.b1.scaled_add(-learning_rate, &grads.b1);
        self.w2.scaled_add(-learning_rate, &grads.w2);
        self.b2.scaled_add(-learning_rate, &grads.b2);
    }

    /// Feature extraction with this estimator's own config.
    pub fn features_for(&self, mixture: &Waveform) -> Result<Array2<f64>> {
        extract_features(
            mixture,
            &self.stft,
            self.feature_kind,
            self.context_radius,
            self.epsilon,
        )
    }

    /// Predict a mask for a noisy waveform.
    pub fn predict_mask(&self, mixture: &Waveform) -> Result<Mask> {
        self.forward(&self.features_for(mixture)?)
    }

    /// Full enhancement: predicted mask on the noisy magnitudes, noisy phase
    /// kept, inverse transform back to a waveform.
    pub fn enhance(&self, mixture: &Waveform) -> Result<Waveform> {
        let spec = stft(mixture, &self.stft)?;
        let rm = self.forward(&extract_features(
            mixture,
            &self.stft,
            self.feature_kind,
            self.context_radius,
            self.epsilon,
        )?)?;
        crate::stft::istft(&crate::mask::apply_mask(&spec, &rm)?)
    }
}

/// Epochs, base rate, batch size and seed; the rate halves at 0.6 E and
/// halves again at 0.9 E.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            base_learning_rate: 0.05,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::ConfigError(
                "epochs and batch size must be positive".into(),
            ));
        }
        if self.base_learning_rate.is_nan() || self.base_learning_rate < 0.0 {
            return Err(Error::ConfigError("learning rate must be >= 0".into()));
        }
        Ok(())
    }

    /// Rate for a 1-based epoch index.
    pub fn learning_rate_for_epoch(&self, epoch: usize) -> f64 {
        let first_drop = (0.6 * self.epochs as f64).floor() as usize;
        let second_drop = (0.9 * self.epochs as f64).floor() as usize;
        if epoch <= first_drop {
            self.base_learning_rate
        } else if epoch <= second_drop {
            self.base_learning_rate * 0.5
        } else {
            self.base_learning_rate * 0.25
        }
    }
}

/// Architecture and feature-path parameters of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub feature_kind: FeatureKind,
    pub context_radius: usize,
    pub hidden_units: usize,
    pub stft: StftConfig,
    pub epsilon: f64,
    pub energy_mask_ratio: f64,
}

impl EstimatorSpec {
    pub fn new(feature_kind: FeatureKind, stft: StftConfig) -> Self {
        Self {
            feature_kind,
            context_radius: 2,
            hidden_units: 64,
            stft,
            epsilon: DEFAULT_EPSILON,
            energy_mask_ratio: DEFAULT_ENERGY_MASK_RATIO,
        }
    }
}

/// One prepared utterance: features, oracle mask, and loss support.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub features: Array2<f64>,
    pub irm: Mask,
    pub weight_mask: BinaryMask,
}

/// Turn a rendered mixture into a training example under `spec`.
pub fn prepare_example(rendered: &RenderedMixture, spec: &EstimatorSpec) -> Result<TrainExample> {
    let noisy = stft(&rendered.mixture, &spec.stft)?;
    let clean = stft(&rendered.clean, &spec.stft)?;
    let noise = stft(&rendered.noise, &spec.stft)?;
    let irm = ideal_ratio_mask(&clean, &noise)?;
    let weight_mask = energy_mask(&noisy.magnitude(), spec.energy_mask_ratio)?;
    let features = extract_features(
        &rendered.mixture,
        &spec.stft,
        spec.feature_kind,
        spec.context_radius,
        spec.epsilon,
    )?;
    Ok(TrainExample {
        features,
        irm,
        weight_mask,
    })
}

/// Per-epoch record for the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
}

/// Mini-batch gradient descent with seeded init and shuffling. The log
/// records the mean pre-update loss of each epoch's batches.
pub fn train(
    examples: &[TrainExample],
    spec: &EstimatorSpec,
    config: &TrainConfig,
) -> Result<(MaskEstimator, Vec<EpochStats>)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyCorpus("no training examples".into()));
    }
    let input_dim = examples[0].features.ncols();
    let output_bins = examples[0].irm.dim().1;
    for example in examples {
        if example.features.ncols() != input_dim || example.irm.dim().1 != output_bins {
            return Err(Error::ShapeError {
                expected: (input_dim, output_bins),
                found: (example.features.ncols(), example.irm.dim().1),
            });
        }
    }

    let stats = FeatureStats::fit(examples.iter().map(|e| &e.features), input_dim);
    let mut model = MaskEstimator::init(
        input_dim,
        spec.hidden_units,
        output_bins,
        spec.feature_kind,
        spec.context_radius,
        stats,
        spec.stft,
        spec.epsilon,
        sub_seed(config.seed, 0),
    )?;

    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let learning_rate = config.learning_rate_for_epoch(epoch);
        let mut epoch_rng = SplitMix64::new(sub_seed(config.seed, 0x5351 + epoch as u64));
        shuffle(&mut order, &mut epoch_rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut batch_loss = 0.0;
            let mut acc: Option<Gradients> = None;
            for &idx in batch {
                let example = &examples[idx];
                let (loss, grads) =
                    model.loss_and_gradients(&example.features, &example.irm, &example.weight_mask)?;
                batch_loss += loss;
                acc = Some(match acc {
                    None => grads,
                    Some(mut total) => {
                        total.w1 += &grads.w1;
                        total.b1 += &grads.b1;
                        total.w2 += &grads.w2;
                        total.b2 += &grads.b2;
                        total
                    }
                });
            }
            let count = batch.len() as f64;
            let mut grads = acc.expect("non-empty batch");
            grads.w1 /= count;
            grads.b1 /= count;
            grads.w2 /= count;
            grads.b2 /= count;
            model.apply_update(&grads, learning_rate);
            loss_sum += batch_loss / count;
            batches += 1;
        }
        log.push(EpochStats {
            epoch,
            learning_rate,
            mean_loss: loss_sum / batches as f64,
        });
    }
    Ok((model, log))
}

/// JSON config for the `train` command: a manifest plus the material it
/// references, and the estimator/training knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainJobConfig {
    pub manifest: PathBuf,
    pub clean_dir: PathBuf,
    pub noise_dir: PathBuf,
    pub feature_kind: FeatureKind,
    #[serde(default = "default_context_radius")]
    pub context_radius: usize,
    #[serde(default = "default_hidden_units")]
    pub hidden_units: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_base_learning_rate")]
    pub base_learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frame_ms")]
    pub frame_ms: f64,
    #[serde(default = "default_shift_ms")]
    pub shift_ms: f64,
    #[serde(default = "default_window")]
    pub window: Window,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_energy_mask_ratio")]
    pub energy_mask_ratio: f64,
}

fn default_context_radius() -> usize {
    2
}
fn default_hidden_units() -> usize {
    64
}
fn default_epochs() -> usize {
    30
}
fn default_base_learning_rate() -> f64 {
    0.05
}
fn default_batch_size() -> usize {
    8
}
fn default_frame_ms() -> f64 {
    32.0
}
fn default_shift_ms() -> f64 {
    16.0
}
fn default_window() -> Window {
    Window::Hamming
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_energy_mask_ratio() -> f64 {
    DEFAULT_ENERGY_MASK_RATIO
}

impl TrainJobConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn stft_config(&self, sample_rate: u32) -> Result<StftConfig> {
        let frame_len = (self.frame_ms / 1000.0 * sample_rate as f64).round() as usize;
        let frame_shift = (self.shift_ms / 1000.0 * sample_rate as f64).round() as usize;
        StftConfig::new(sample_rate, frame_len, frame_shift, self.window)
    }
}

/// Render the manifest, prepare examples, and train.
pub fn run_train_job(config: &TrainJobConfig) -> Result<(MaskEstimator, Vec<EpochStats>)> {
    let manifest = Manifest::load(&config.manifest)?;
    let clean = WaveStore::from_dir(&config.clean_dir)?;
    let noise = WaveStore::from_dir(&config.noise_dir)?;
    let rendered = render_manifest(&manifest, &clean, &noise)?;

    let sample_rate = rendered
        .first()
        .map(|r| r.mixture.sample_rate())
        .unwrap_or(crate::audio::SAMPLE_RATE);
    let mut spec = EstimatorSpec::new(config.feature_kind, config.stft_config(sample_rate)?);
    spec.context_radius = config.context_radius;
    spec.hidden_units = config.hidden_units;
    spec.epsilon = config.epsilon;
    spec.energy_mask_ratio = config.energy_mask_ratio;

    let examples = rendered
        .iter()
        .map(|r| prepare_example(r, &spec))
        .collect::<Result<Vec<_>>>()?;
    train(
        &examples,
        &spec,
        &TrainConfig {
            epochs: config.epochs,
            base_learning_rate: config.base_learning_rate,
            batch_size: config.batch_size,
            seed: config.seed,
        },
    )
}
