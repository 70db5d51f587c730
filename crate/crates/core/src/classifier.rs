//! Log-mel CNN classifier with tapped block outputs.
//!
//! Four blocks of `conv3x3 -> batch norm -> SiLU -> avg-pool 2x2` feed a head
//! that averages over frequency, sums mean- and max-pooling over time and
//! applies an affine map. The four block outputs are exposed as the
//! representation set consumed by the interpreter.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{augment_with_noise, default_noise_pool, Corpus, LabeledSample, Split};
use crate::dsp::tensor::{batch_tensor, TensorLogMel};
use crate::dsp::MelConfig;
use crate::nn::{self, Adam, Init, ParamStore};
use crate::{Error, Result, Waveform};

pub const NUM_TAPS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub sample_rate: u32,
    pub mel: MelConfig,
    pub widths: [usize; NUM_TAPS],
    pub num_classes: usize,
    /// Start the output layer at zero, so an untrained model is uniform.
    pub zero_head: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            mel: MelConfig::default(),
            widths: [16, 32, 64, 128],
            num_classes: 5,
            zero_head: true,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        self.mel.validate(self.sample_rate)?;
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig("classifier needs at least 2 classes".into()));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidConfig("block widths must be positive".into()));
        }
        if self.mel.n_mels < 1 << NUM_TAPS {
            return Err(Error::InvalidConfig(format!(
                "n_mels must be at least {} to survive {NUM_TAPS} poolings",
                1 << NUM_TAPS
            )));
        }
        Ok(())
    }

    /// Shortest input (samples) that still leaves one time step after pooling.
    pub fn min_samples(&self) -> usize {
        self.mel.stft.window_length + ((1 << NUM_TAPS) - 1) * self.mel.stft.hop
    }

    /// Shapes of the four tapped maps for an input of `len` samples.
    pub fn tap_shapes(&self, len: usize) -> Result<Vec<TapShape>> {
        self.check_len(len)?;
        let mut freq = self.mel.n_mels;
        let mut time = self.mel.stft.num_frames(len)?;
        Ok(self
            .widths
            .iter()
            .map(|&channels| {
                freq /= 2;
                time /= 2;
                TapShape {
                    channels,
                    freq,
                    time,
                }
            })
            .collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        let needed = self.min_samples();
        if len < needed {
            return Err(Error::SignalTooShort { len, needed });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapShape {
    pub channels: usize,
    pub freq: usize,
    pub time: usize,
}

/// Softmax output with the logits it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ClassProbabilities {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        Self {
            probs: exp.iter().map(|e| e / z).collect(),
            logits,
        }
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Block outputs ordered shallow to deep, each `(B, C, F', T')`.
#[derive(Clone, Debug)]
pub struct RepresentationSet {
    maps: Vec<Tensor>,
    shapes: Vec<TapShape>,
}

impl RepresentationSet {
    pub fn new(maps: Vec<Tensor>) -> Result<Self> {
        if maps.len() != NUM_TAPS {
            return Err(Error::Shape(format!(
                "expected {NUM_TAPS} representations, got {}",
                maps.len()
            )));
        }
        let shapes = maps
            .iter()
            .map(|m| {
                let (_, channels, freq, time) = m.dims4()?;
                Ok(TapShape {
                    channels,
                    freq,
                    time,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if shapes.windows(2).any(|w| w[1].time > w[0].time) {
            return Err(Error::Shape("time axis grows with depth".into()));
        }
        Ok(Self { maps, shapes })
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    pub fn shapes(&self) -> &[TapShape] {
        &self.shapes
    }

    pub fn batch_size(&self) -> usize {
        self.maps[0].dim(0).unwrap_or(0)
    }

    /// Item `i` of a batched set, keeping a unit batch axis.
    pub fn item(&self, i: usize) -> Result<RepresentationSet> {
        Self::new(
            self.maps
                .iter()
                .map(|m| m.narrow(0, i, 1))
                .collect::<candle_core::Result<Vec<_>>>()?,
        )
    }

    /// Concatenate unit-batch sets along the batch axis.
    pub fn stack(sets: &[&RepresentationSet]) -> Result<RepresentationSet> {
        let maps = (0..NUM_TAPS)
            .map(|k| {
                let parts: Vec<&Tensor> = sets.iter().map(|s| &s.maps[k]).collect();
                Tensor::cat(&parts, 0)
            })
            .collect::<candle_core::Result<Vec<_>>>()?;
        Self::new(maps)
    }
}

#[derive(Debug)]
pub struct Classifier {
    cfg: ClassifierConfig,
    params: ParamStore,
    logmel: TensorLogMel,
    class_names: Vec<String>,
    metrics: BTreeMap<String, f64>,
}

impl Classifier {
    /// Fresh model with seeded parameters in `f32`.
    pub fn new(cfg: ClassifierConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(cfg, seed, DType::F32)
    }

    pub fn with_dtype(cfg: ClassifierConfig, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let device = Device::Cpu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new(dtype, &device);
        let mut c_in = 1;
        for (k, &w) in cfg.widths.iter().enumerate() {
            nn::init_conv2d(&mut ps, &format!("block{k}.conv"), c_in, w, (3, 3), &mut rng)?;
            nn::init_batch_norm(&mut ps, &format!("block{k}.bn"), w)?;
            c_in = w;
        }
        if cfg.zero_head {
            ps.add("head.weight", &[cfg.num_classes, c_in], Init::Zeros, &mut rng)?;
            ps.add("head.bias", &[cfg.num_classes], Init::Zeros, &mut rng)?;
        } else {
            nn::init_linear(&mut ps, "head", c_in, cfg.num_classes, &mut rng)?;
        }
        let logmel = TensorLogMel::new(&cfg.mel, cfg.sample_rate, dtype, &device)?;
        let class_names = (0..cfg.num_classes).map(|k| format!("class-{k}")).collect();
        Ok(Self {
            cfg,
            params: ps,
            logmel,
            class_names,
            metrics: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn set_class_names(&mut self, names: Vec<String>) -> Result<()> {
        if names.len() != self.cfg.num_classes {
            return Err(Error::InvalidConfig(format!(
                "{} class names for {} classes",
                names.len(),
                self.cfg.num_classes
            )));
        }
        self.class_names = names;
        Ok(())
    }

    pub fn metrics(&self) -> &BTreeMap<String, f64> {
        &self.metrics
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    pub fn is_frozen(&self) -> bool {
        self.params.is_frozen()
    }

    /// SHA-256 of the serialized parameters and buffers.
    pub fn parameter_hash(&self) -> Result<String> {
        self.params.sha256()
    }

    /// Hash of the configuration and parameter layout.
    pub fn architecture_hash(&self) -> Result<String> {
        let layout: Vec<(String, Vec<usize>)> = self
            .params
            .snapshot()?
            .into_iter()
            .map(|(k, v)| (k, v.dims().to_vec()))
            .collect();
        let doc = serde_json::to_vec(&(&self.cfg, layout))?;
        Ok(nn::sha256_hex(&doc))
    }

    /// Copy in another precision. Frozen state is carried over.
    pub fn to_dtype(&self, dtype: DType) -> Result<Classifier> {
        let mut params = self.params.to_dtype(dtype)?;
        if self.is_frozen() {
            params.freeze();
        }
        Ok(Classifier {
            cfg: self.cfg.clone(),
            params,
            logmel: TensorLogMel::new(&self.cfg.mel, self.cfg.sample_rate, dtype, self.device())?,
            class_names: self.class_names.clone(),
            metrics: self.metrics.clone(),
        })
    }

    pub fn check_input(&self, wave: &Waveform) -> Result<()> {
        if wave.sample_rate() != self.cfg.sample_rate {
            return Err(Error::SampleRateMismatch {
                expected: self.cfg.sample_rate,
                found: wave.sample_rate(),
            });
        }
        self.cfg.check_len(wave.len())
    }

    /// `(B, T)` samples to `(B, n_mels, frames)` log-mel.
    pub fn log_mel(&self, x: &Tensor) -> Result<Tensor> {
        self.cfg.check_len(x.dim(1)?)?;
        self.logmel.forward(x)
    }

    /// Logits `(B, C)` and the four block outputs from a log-mel batch.
    /// Batch statistics are used only when `train` is set and the model is
    /// not frozen.
    pub fn forward_from_logmel(&self, logmel: &Tensor, train: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let train = train && !self.is_frozen();
        let mut h = logmel.unsqueeze(1)?;
        let mut taps = Vec::with_capacity(NUM_TAPS);
        for k in 0..NUM_TAPS {
            h = nn::conv2d(&self.params, &format!("block{k}.conv"), &h, 1)?;
            h = nn::batch_norm(&self.params, &format!("block{k}.bn"), &h, train)?;
            h = pool2x2(&h.silu()?)?;
            taps.push(h.clone());
        }
        let over_freq = h.mean(2)?;
        let pooled = (over_freq.mean(D::Minus1)? + over_freq.max(D::Minus1)?)?;
        let logits = nn::linear(&self.params, "head", &pooled)?;
        Ok((logits, taps))
    }

    /// Logits and taps for a `(B, T)` sample batch.
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<(Tensor, Vec<Tensor>)> {
        self.forward_from_logmel(&self.log_mel(x)?, train)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, false)?.0)
    }

    pub fn classify(&self, wave: &Waveform) -> Result<ClassProbabilities> {
        Ok(self.classify_batch(&[wave])?.remove(0))
    }

    /// Classify equal-length waveforms in one pass.
    pub fn classify_batch(&self, waves: &[&Waveform]) -> Result<Vec<ClassProbabilities>> {
        for w in waves {
            self.check_input(w)?;
        }
        let rows: Vec<&[f64]> = waves.iter().map(|w| w.samples()).collect();
        let x = batch_tensor(&rows, self.dtype(), self.device())?;
        probabilities_from_logits(&self.logits(&x)?)
    }

    pub fn embed(&self, wave: &Waveform) -> Result<RepresentationSet> {
        self.check_input(wave)?;
        let x = batch_tensor(&[wave.samples()], self.dtype(), self.device())?;
        self.embed_batch(&x)
    }

    pub fn embed_batch(&self, x: &Tensor) -> Result<RepresentationSet> {
        RepresentationSet::new(self.forward(x, false)?.1)
    }

    /// Write `path` (safetensors) and a JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.params.to_bytes()?;
        let sidecar = ClassifierSidecar {
            architecture_hash: self.architecture_hash()?,
            weights_sha256: nn::sha256_hex(&bytes),
            config: self.cfg.clone(),
            class_names: self.class_names.clone(),
            metrics: self.metrics.clone(),
        };
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let json = serde_json::to_vec_pretty(&sidecar)?;
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    /// Load a checkpoint written by [`Classifier::save`], verifying both the
    /// architecture hash and the weight digest.
    pub fn load(path: &Path) -> Result<Self> {
        let side = sidecar_path(path);
        for p in [path, side.as_path()] {
            if !p.exists() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
        }
        let sidecar: ClassifierSidecar = serde_json::from_slice(
            &std::fs::read(&side).map_err(|e| Error::io(&side, e))?,
        )?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let found = nn::sha256_hex(&bytes);
        if found != sidecar.weights_sha256 {
            return Err(Error::HashMismatch {
                expected: sidecar.weights_sha256,
                found,
            });
        }
        let mut clf = Classifier::new(sidecar.config, 0)?;
        let arch = clf.architecture_hash()?;
        if arch != sidecar.architecture_hash {
            return Err(Error::HashMismatch {
                expected: sidecar.architecture_hash,
                found: arch,
            });
        }
        clf.params.load_bytes(&bytes)?;
        clf.set_class_names(sidecar.class_names)?;
        clf.metrics = sidecar.metrics;
        Ok(clf)
    }
}

/// 2x2 average pooling that drops a trailing odd row or column first. Same
/// forward result as `avg_pool2d(2)`, whose backward pass mis-routes gradients
/// on odd extents.
fn pool2x2(h: &Tensor) -> Result<Tensor> {
    let (_, _, f, t) = h.dims4()?;
    Ok(h.narrow(2, 0, f & !1)?.narrow(3, 0, t & !1)?.avg_pool2d(2)?)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSidecar {
    pub architecture_hash: String,
    pub weights_sha256: String,
    pub config: ClassifierConfig,
    pub class_names: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

fn probabilities_from_logits(logits: &Tensor) -> Result<Vec<ClassProbabilities>> {
    let rows = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    Ok(rows.into_iter().map(ClassProbabilities::from_logits).collect())
}

// ---- training -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseAugmentation {
    /// Chance that a training example is mixed with a pool noise.
    pub probability: f64,
    pub snr_db: [f64; 2],
    pub pool_size: usize,
}

impl Default for NoiseAugmentation {
    fn default() -> Self {
        Self {
            probability: 0.5,
            snr_db: [5.0, 20.0],
            pool_size: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Stop after this many epochs without a better validation score.
    pub patience: usize,
    pub augmentation: Option<NoiseAugmentation>,
    /// Random level change in `[-g, g]` dB per training example.
    pub gain_jitter_db: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-3,
            batch_size: 16,
            patience: 10,
            augmentation: Some(NoiseAugmentation::default()),
            gain_jitter_db: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

/// Cross-entropy training with noise augmentation. Returns the model at the
/// epoch with the best validation accuracy (lower validation loss breaks
/// ties) and the per-epoch history.
pub fn train_classifier(
    corpus: &Corpus,
    model: &ClassifierConfig,
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<(Classifier, Vec<ClassifierEpoch>)> {
    if model.num_classes != corpus.num_classes() || model.sample_rate != corpus.sample_rate() {
        return Err(Error::InvalidConfig(format!(
            "classifier expects {} classes at {} Hz, corpus has {} at {} Hz",
            model.num_classes,
            model.sample_rate,
            corpus.num_classes(),
            corpus.sample_rate()
        )));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
    }
    let train = corpus.split(Split::Train);
    let valid = corpus.split(Split::Valid);
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if valid.is_empty() {
        return Err(Error::EmptySplit("valid".into()));
    }

    let mut clf = Classifier::new(model.clone(), seed)?;
    clf.set_class_names(corpus.class_names().to_vec())?;
    let mut opt = Adam::new(clf.params.trainable(), cfg.lr, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1f0);
    let max_len = train.iter().map(|s| s.wave.len()).max().unwrap_or(0);
    let pool = match &cfg.augmentation {
        Some(a) if a.probability > 0.0 => {
            default_noise_pool(max_len, corpus.sample_rate(), a.pool_size.max(1), seed ^ 0x9015e)?
        }
        _ => Vec::new(),
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, BTreeMap<String, Tensor>)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut waves = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                waves.push(training_view(train[i], cfg, &pool, &mut rng)?);
                labels.push(train[i].class_id as u32);
            }
            let x = padded_batch(&waves, max_len, clf.dtype(), clf.device())?;
            let y = Tensor::new(labels.as_slice(), clf.device())?;
            let (logits, _) = clf.forward(&x, true)?;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss_sum += value * chunk.len() as f64;
            let pred = logits.argmax(D::Minus1)?.to_vec1::<u32>()?;
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            opt.backward_step(&loss)?;
        }
        let (valid_loss, valid_accuracy) = loss_and_accuracy(&clf, &valid)?;
        let record = ClassifierEpoch {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            valid_loss,
            valid_accuracy,
        };
        log::info!(
            "classifier epoch {epoch}: train loss {:.4} acc {:.3}, valid loss {:.4} acc {:.3}",
            record.train_loss,
            record.train_accuracy,
            valid_loss,
            valid_accuracy
        );
        history.push(record);
        let improved = match &best {
            None => true,
            Some((acc, loss, _)) => {
                valid_accuracy > *acc || (valid_accuracy == *acc && valid_loss < *loss)
            }
        };
        if improved {
            best = Some((valid_accuracy, valid_loss, clf.params.snapshot()?));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (acc, loss, snap) = best.expect("at least one epoch ran");
    clf.params.restore(&snap)?;
    clf.metrics.insert("valid_accuracy".into(), acc);
    clf.metrics.insert("valid_loss".into(), loss);
    clf.metrics.insert("epochs_run".into(), history.len() as f64);
    Ok((clf, history))
}

fn training_view<R: Rng + ?Sized>(
    sample: &LabeledSample,
    cfg: &ClassifierTrainConfig,
    pool: &[Waveform],
    rng: &mut R,
) -> Result<Waveform> {
    let mut wave = sample.wave.clone();
    if let Some(a) = &cfg.augmentation {
        if !pool.is_empty() && rng.gen::<f64>() < a.probability {
            wave = augment_with_noise(sample, pool, a.snr_db, rng)?.wave;
        }
    }
    if cfg.gain_jitter_db > 0.0 {
        let db = rng.gen_range(-cfg.gain_jitter_db..=cfg.gain_jitter_db);
        wave = wave.scaled(10f64.powf(db / 20.0));
    }
    Ok(wave)
}

fn padded_batch(waves: &[Waveform], len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let fitted: Vec<Waveform> = waves.iter().map(|w| w.fit_to_length(len)).collect();
    let rows: Vec<&[f64]> = fitted.iter().map(|w| w.samples()).collect();
    batch_tensor(&rows, dtype, device)
}

const EVAL_BATCH: usize = 16;

/// Inference-mode probabilities for `samples`, batched among equal lengths,
/// in input order.
pub fn classify_samples(clf: &Classifier, samples: &[&LabeledSample]) -> Result<Vec<ClassProbabilities>> {
    let mut out = Vec::with_capacity(samples.len());
    let mut start = 0;
    while start < samples.len() {
        let len = samples[start].wave.len();
        let mut end = start + 1;
        while end < samples.len() && end - start < EVAL_BATCH && samples[end].wave.len() == len {
            end += 1;
        }
        let waves: Vec<&Waveform> = samples[start..end].iter().map(|s| &s.wave).collect();
        out.extend(clf.classify_batch(&waves)?);
        start = end;
    }
    Ok(out)
}

fn loss_and_accuracy(clf: &Classifier, samples: &[&LabeledSample]) -> Result<(f64, f64)> {
    let probs = classify_samples(clf, samples)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (p, s) in probs.iter().zip(samples) {
        loss -= (p.probs[s.class_id] + 1e-12).ln();
        correct += usize::from(p.argmax() == s.class_id);
    }
    let n = samples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Top-1 accuracy on one split.
pub fn evaluate_accuracy(clf: &Classifier, corpus: &Corpus, split: Split) -> Result<f64> {
    let samples = corpus.split(split);
    if samples.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    Ok(loss_and_accuracy(clf, &samples)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate_synthetic_corpus;
    use candle_core::Var;

    fn tiny_cfg(classes: usize) -> ClassifierConfig {
        ClassifierConfig {
            widths: [4, 4, 6, 8],
            num_classes: classes,
            ..ClassifierConfig::default()
        }
    }

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.3..0.3)).collect(), 16_000).unwrap()
    }

    #[test]
    fn probabilities_lie_on_the_simplex() {
        let clf = Classifier::new(tiny_cfg(3), 1).unwrap();
        let p = clf.classify(&noise(4000, 2)).unwrap();
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(p.probs.iter().all(|&v| v >= 0.0));
        let again = ClassProbabilities::from_logits(p.logits.clone());
        for (a, b) in again.probs.iter().zip(&p.probs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_head_gives_uniform_output() {
        let cfg = tiny_cfg(4);
        assert!(cfg.zero_head);
        let p = Classifier::new(cfg, 3).unwrap().classify(&noise(5000, 1)).unwrap();
        for v in p.probs {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_matches_definition_on_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let logits: Vec<f64> = (0..6).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let p = ClassProbabilities::from_logits(logits.clone());
            let z: f64 = logits.iter().map(|l| (l - 50.0).exp()).sum();
            for (pi, l) in p.probs.iter().zip(&logits) {
                assert!((pi - (l - 50.0).exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn embed_has_four_maps_with_declared_shapes() {
        let clf = Classifier::new(ClassifierConfig::default(), 1).unwrap();
        let h = clf.embed(&noise(16_000, 3)).unwrap();
        assert_eq!(h.maps().len(), 4);
        let declared = clf.config().tap_shapes(16_000).unwrap();
        assert_eq!(h.shapes(), declared.as_slice());
        assert_eq!(
            declared.iter().map(|s| (s.channels, s.freq, s.time)).collect::<Vec<_>>(),
            vec![(16, 20, 48), (32, 10, 24), (64, 5, 12), (128, 2, 6)]
        );
        let again = clf.embed(&noise(16_000, 3)).unwrap();
        for (a, b) in h.maps().iter().zip(again.maps()) {
            let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn rejects_wrong_rate_and_short_input() {
        let clf = Classifier::new(tiny_cfg(2), 1).unwrap();
        let w = Waveform::new(vec![0.1; 8000], 8000).unwrap();
        assert!(matches!(clf.classify(&w), Err(Error::SampleRateMismatch { .. })));
        let short = noise(clf.config().min_samples() - 1, 1);
        assert!(matches!(clf.classify(&short), Err(Error::SignalTooShort { .. })));
        assert!(clf.classify(&noise(clf.config().min_samples(), 1)).is_ok());
    }

    #[test]
    fn logit_gradient_matches_central_differences() {
        let clf = Classifier::with_dtype(tiny_cfg(3), 7, DType::F64).unwrap();
        let base = noise(3200, 9).into_samples();
        let x = Var::from_tensor(&batch_tensor(&[&base], DType::F64, &Device::Cpu).unwrap()).unwrap();
        let logit = |t: &Tensor| clf.logits(t).unwrap().get(0).unwrap().get(1).unwrap();
        let grads = logit(x.as_tensor()).backward().unwrap();
        let g = grads.get(&x).unwrap().get(0).unwrap().to_vec1::<f64>().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..16 {
            let j = rng.gen_range(0..base.len());
            let eval = |d: f64| {
                let mut v = base.clone();
                v[j] += d;
                let t = batch_tensor(&[&v], DType::F64, &Device::Cpu).unwrap();
                logit(&t).to_scalar::<f64>().unwrap()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let rel = (numeric - g[j]).abs() / numeric.abs().max(g[j].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "max relative error {worst}");
    }

    #[test]
    fn checkpoint_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.safetensors");
        let mut clf = Classifier::new(tiny_cfg(3), 4).unwrap();
        clf.set_class_names(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        clf.save(&path).unwrap();
        let loaded = Classifier::load(&path).unwrap();
        assert_eq!(loaded.parameter_hash().unwrap(), clf.parameter_hash().unwrap());
        assert_eq!(loaded.class_names(), clf.class_names());
        let w = noise(4000, 1);
        assert_eq!(loaded.classify(&w).unwrap(), clf.classify(&w).unwrap());

        let side = sidecar_path(&path);
        let mut doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&side).unwrap()).unwrap();
        doc["architecture_hash"] = "00".into();
        std::fs::write(&side, serde_json::to_vec(&doc).unwrap()).unwrap();
        assert!(matches!(Classifier::load(&path), Err(Error::HashMismatch { .. })));
        assert!(matches!(
            Classifier::load(&dir.path().join("nope.safetensors")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn overfits_one_sample_per_class() {
        let corpus = generate_synthetic_corpus(3, 4, 0.25, 16_000, 2).unwrap();
        let cfg = ClassifierTrainConfig {
            epochs: 60,
            batch_size: 8,
            lr: 3e-3,
            augmentation: None,
            gain_jitter_db: 0.0,
            patience: 60,
        };
        let model = tiny_cfg(3);
        let (clf, history) = train_classifier(&corpus, &model, &cfg, 1).unwrap();
        assert!(history[0].train_loss <= (3f64).ln() + 0.1, "{}", history[0].train_loss);
        assert_eq!(evaluate_accuracy(&clf, &corpus, Split::Train).unwrap(), 1.0);
        assert!(clf.metrics()["valid_accuracy"] >= history[0].valid_accuracy);
    }

    #[test]
    fn empty_split_is_an_error() {
        let corpus = generate_synthetic_corpus(2, 4, 0.25, 16_000, 2).unwrap();
        let ood = crate::datasets::make_ood_corpus(
            &corpus,
            crate::datasets::ContaminationKind::WhiteNoise,
            5.0,
            1,
        )
        .unwrap();
        let clf = Classifier::new(tiny_cfg(2), 1).unwrap();
        assert!(matches!(
            evaluate_accuracy(&clf, &ood, Split::Train),
            Err(Error::EmptySplit(_))
        ));
    }
}
