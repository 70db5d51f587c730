//! Labeled audio corpora: synthetic generation, WAV-manifest ingestion, noise
//! augmentation and out-of-domain contamination.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::wav::{read_wav, write_wav, WavEncoding};
use crate::dsp::{mix_at_snr, Waveform};
use crate::{Error, Result};

pub mod synthetic;

pub use synthetic::{speech_surrogate, ClassBand, Prototype, SyntheticLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "val" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContaminationKind {
    InClassMixture,
    WhiteNoise,
    SpeechLike,
    /// Training-time noise augmentation from a noise pool.
    Augmentation,
}

impl FromStr for ContaminationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in-class-mixture" => Ok(Self::InClassMixture),
            "white-noise" => Ok(Self::WhiteNoise),
            "speech-like" => Ok(Self::SpeechLike),
            "augmentation" => Ok(Self::Augmentation),
            other => Err(Error::InvalidConfig(format!(
                "unknown contamination mode '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub kind: ContaminationKind,
    pub snr_db: f64,
    pub contaminant_id: String,
    /// Peak-renormalization gain applied to the whole mixture.
    #[serde(default = "unit_gain")]
    pub output_gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub wave: Waveform,
    pub class_id: usize,
    pub split: Split,
    pub contamination: Option<Contamination>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic {
        num_classes: usize,
        per_class: usize,
        clip_seconds: f64,
        sample_rate: u32,
        seed: u64,
    },
    Manifest {
        root: PathBuf,
        manifest: PathBuf,
    },
    Derived {
        base: Box<Provenance>,
        operation: String,
        snr_db: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    samples: Vec<LabeledSample>,
    class_names: Vec<String>,
    sample_rate: u32,
    splits: Vec<Split>,
    provenance: Provenance,
}

impl Corpus {
    /// Validates the corpus invariants: nonempty, one sample rate, labels in
    /// range and every class present in every declared split.
    pub fn new(
        samples: Vec<LabeledSample>,
        class_names: Vec<String>,
        splits: Vec<Split>,
        provenance: Provenance,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::EmptySplit("corpus has no samples".into()))?;
        let sample_rate = first.wave.sample_rate();
        for s in &samples {
            if s.wave.sample_rate() != sample_rate {
                return Err(Error::SampleRateMismatch {
                    expected: sample_rate,
                    found: s.wave.sample_rate(),
                });
            }
            if s.class_id >= class_names.len() {
                return Err(Error::InvalidConfig(format!(
                    "sample {} has class {} but corpus has {} classes",
                    s.id,
                    s.class_id,
                    class_names.len()
                )));
            }
            if let Some(c) = &s.contamination {
                if !c.snr_db.is_finite() {
                    return Err(Error::InvalidConfig(format!(
                        "sample {} has non-finite contamination SNR",
                        s.id
                    )));
                }
            }
        }
        let present: HashSet<(usize, Split)> =
            samples.iter().map(|s| (s.class_id, s.split)).collect();
        for split in &splits {
            for (c, name) in class_names.iter().enumerate() {
                if !present.contains(&(c, *split)) {
                    return Err(Error::EmptySplit(format!(
                        "class '{name}' has no samples in split '{split}'"
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            class_names,
            sample_rate,
            splits,
            provenance,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn split(&self, split: Split) -> Vec<&LabeledSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// SHA-256 over ids, labels, splits and the exact sample bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.class_names {
            h.update(name.as_bytes());
            h.update([0]);
        }
        for s in &self.samples {
            h.update(s.id.as_bytes());
            h.update((s.class_id as u64).to_le_bytes());
            h.update(s.split.as_str().as_bytes());
            h.update(s.wave.sample_rate().to_le_bytes());
            for v in s.wave.samples() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Write every sample as 32-bit float WAV under `dir/audio/`, plus
    /// `manifest.csv` and `provenance.json`. Returns the manifest path.
    pub fn write_to_dir(&self, dir: &Path) -> Result<PathBuf> {
        let audio = dir.join("audio");
        std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
        let manifest = dir.join("manifest.csv");
        let mut w = csv::Writer::from_path(&manifest)?;
        w.write_record(["relative_path", "class_name", "split"])?;
        for s in &self.samples {
            let rel = format!("audio/{}.wav", s.id);
            write_wav(&dir.join(&rel), &s.wave, WavEncoding::Float32)?;
            w.write_record([rel.as_str(), &self.class_names[s.class_id], s.split.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(&manifest, e))?;
        let prov = dir.join("provenance.json");
        std::fs::write(&prov, serde_json::to_vec_pretty(&self.provenance)?)
            .map_err(|e| Error::io(&prov, e))?;
        Ok(manifest)
    }
}

/// Number of (valid, test) samples per class; the remainder goes to train.
fn split_counts(per_class: usize) -> (usize, usize) {
    let k = (per_class / 5).max(1);
    (k, k)
}

pub fn generate_synthetic_corpus(
    num_classes: usize,
    per_class: usize,
    clip_seconds: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<Corpus> {
    if per_class < 4 {
        return Err(Error::InvalidConfig(format!(
            "need at least 4 samples per class, got {per_class}"
        )));
    }
    let len = (clip_seconds * sample_rate as f64).round() as usize;
    let min_len = crate::dsp::StftConfig::default().window_length;
    if len < min_len {
        return Err(Error::SignalTooShort {
            len,
            needed: min_len,
        });
    }
    let layout = SyntheticLayout::new(num_classes, sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_valid, n_test) = split_counts(per_class);
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for class_id in 0..num_classes {
        let mut order: Vec<usize> = (0..per_class).collect();
        order.shuffle(&mut rng);
        let mut split_of = vec![Split::Train; per_class];
        for &i in &order[..n_valid] {
            split_of[i] = Split::Valid;
        }
        for &i in &order[n_valid..n_valid + n_test] {
            split_of[i] = Split::Test;
        }
        for (idx, split) in split_of.into_iter().enumerate() {
            let event = layout.render(class_id, len, &mut rng);
            let peak = event.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            let level = 10f64.powf(rng.gen_range(-20.0..-1.0) / 20.0);
            let floor = synthetic::gaussian_noise(len, &mut rng);
            // Quantize to f32 so a WAV round trip reproduces the corpus exactly.
            let samples_f: Vec<f64> = event
                .iter()
                .zip(&floor)
                .map(|(e, n)| ((level * (e / peak + 1e-3 * n)) as f32) as f64)
                .collect();
            samples.push(LabeledSample {
                id: format!("syn-c{class_id}-{idx:04}"),
                wave: Waveform::new(samples_f, sample_rate)?,
                class_id,
                split,
                contamination: None,
            });
        }
    }
    let class_names = (0..num_classes).map(|c| layout.class_name(c)).collect();
    Corpus::new(
        samples,
        class_names,
        Split::ALL.to_vec(),
        Provenance::Synthetic {
            num_classes,
            per_class,
            clip_seconds,
            sample_rate,
            seed,
        },
    )
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    relative_path: String,
    class_name: String,
    split: String,
}

/// Load a corpus from a `relative_path,class_name,split` CSV manifest. Class
/// ids follow sorted class-name order.
pub fn load_wav_corpus(root_dir: &Path, manifest: &Path) -> Result<Corpus> {
    if !manifest.exists() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(manifest)?;
    let rows: Vec<ManifestRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptySplit(format!(
            "manifest {} has no rows",
            manifest.display()
        )));
    }
    let mut seen = HashSet::new();
    for r in &rows {
        if !seen.insert(r.relative_path.as_str()) {
            return Err(Error::DuplicateEntry(r.relative_path.clone()));
        }
    }
    let names: BTreeSet<&str> = rows.iter().map(|r| r.class_name.as_str()).collect();
    let ids: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut samples = Vec::with_capacity(rows.len());
    let mut splits = BTreeSet::new();
    let mut rate: Option<u32> = None;
    for r in &rows {
        let path = root_dir.join(&r.relative_path);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let wave = read_wav(&path)?;
        match rate {
            None => rate = Some(wave.sample_rate()),
            Some(sr) if sr != wave.sample_rate() => {
                return Err(Error::SampleRateMismatch {
                    expected: sr,
                    found: wave.sample_rate(),
                })
            }
            _ => {}
        }
        let split: Split = r.split.parse()?;
        splits.insert(split);
        let id = Path::new(&r.relative_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| r.relative_path.clone());
        samples.push(LabeledSample {
            id,
            wave,
            class_id: ids[r.class_name.as_str()],
            split,
            contamination: None,
        });
    }
    Corpus::new(
        samples,
        names.into_iter().map(String::from).collect(),
        splits.into_iter().collect(),
        Provenance::Manifest {
            root: root_dir.to_path_buf(),
            manifest: manifest.to_path_buf(),
        },
    )
}

/// Mix a noise drawn from `noise_pool` into a copy of `sample` at an SNR drawn
/// uniformly from `snr_range_db`. The label is untouched.
pub fn augment_with_noise<R: Rng + ?Sized>(
    sample: &LabeledSample,
    noise_pool: &[Waveform],
    snr_range_db: [f64; 2],
    rng: &mut R,
) -> Result<LabeledSample> {
    if noise_pool.is_empty() {
        return Err(Error::InvalidConfig("noise pool is empty".into()));
    }
    let [lo, hi] = snr_range_db;
    if !(lo <= hi) {
        return Err(Error::InvalidConfig(format!(
            "snr range [{lo}, {hi}] is inverted"
        )));
    }
    let idx = rng.gen_range(0..noise_pool.len());
    let snr = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let mix = mix_at_snr(&sample.wave, &noise_pool[idx], snr, rng)?;
    Ok(LabeledSample {
        wave: mix.mixture,
        contamination: Some(Contamination {
            kind: ContaminationKind::Augmentation,
            snr_db: snr,
            contaminant_id: format!("pool-{idx}@{}", mix.noise_offset),
            output_gain: mix.output_gain,
        }),
        ..sample.clone()
    })
}

/// A small seeded pool of white and speech-like noises for augmentation.
pub fn default_noise_pool(len: usize, sample_rate: u32, count: usize, seed: u64) -> Result<Vec<Waveform>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let x = if i % 2 == 0 {
                synthetic::gaussian_noise(len, &mut rng)
            } else {
                speech_surrogate(len, sample_rate, &mut rng)
            };
            Waveform::new(x, sample_rate)
        })
        .collect()
}

/// Contaminate every test sample of `base`. The result holds only the test
/// split; labels stay those of the dominant (original) sample.
pub fn make_ood_corpus(base: &Corpus, mode: ContaminationKind, snr_db: f64, seed: u64) -> Result<Corpus> {
    let test = base.split(Split::Test);
    if test.is_empty() {
        return Err(Error::EmptySplit("base corpus has no test split".into()));
    }
    if mode == ContaminationKind::InClassMixture && base.num_classes() < 2 {
        return Err(Error::InvalidConfig(
            "in-class mixtures need at least 2 classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = base.sample_rate();
    let mut out = Vec::with_capacity(test.len());
    for (i, s) in test.iter().enumerate() {
        let (noise, contaminant_id) = match mode {
            ContaminationKind::InClassMixture => {
                let others: Vec<&&LabeledSample> =
                    test.iter().filter(|o| o.class_id != s.class_id).collect();
                let other = others
                    .choose(&mut rng)
                    .ok_or_else(|| Error::EmptySplit("no other-class test sample".into()))?;
                (other.wave.clone(), other.id.clone())
            }
            ContaminationKind::WhiteNoise | ContaminationKind::Augmentation => (
                Waveform::new(synthetic::gaussian_noise(s.wave.len(), &mut rng), sr)?,
                format!("white-noise-{i}"),
            ),
            ContaminationKind::SpeechLike => (
                Waveform::new(speech_surrogate(s.wave.len(), sr, &mut rng), sr)?,
                format!("speech-surrogate-{i}"),
            ),
        };
        let mix = mix_at_snr(&s.wave, &noise, snr_db, &mut rng)?;
        out.push(LabeledSample {
            id: format!("{}+{}", s.id, contaminant_id),
            wave: mix.mixture,
            class_id: s.class_id,
            split: Split::Test,
            contamination: Some(Contamination {
                kind: mode,
                snr_db,
                contaminant_id,
                output_gain: mix.output_gain,
            }),
        });
    }
    Corpus::new(
        out,
        base.class_names.clone(),
        vec![Split::Test],
        Provenance::Derived {
            base: Box::new(base.provenance.clone()),
            operation: format!("{mode:?}"),
            snr_db,
            seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{snr_db, stft, StftConfig};

    fn band_energy_fraction(wave: &Waveform, band: &ClassBand) -> f64 {
        let cfg = StftConfig::default();
        let p = stft(wave, &cfg).unwrap().power();
        let freqs = cfg.bin_frequencies(wave.sample_rate());
        let mut inside = 0.0;
        let mut total = 0.0;
        for (k, f) in freqs.iter().enumerate() {
            let e: f64 = p.row(k).iter().sum();
            total += e;
            if band.contains(*f) {
                inside += e;
            }
        }
        inside / total
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let a = generate_synthetic_corpus(5, 20, 1.0, 8000, 7).unwrap();
        let b = generate_synthetic_corpus(5, 20, 1.0, 8000, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        let c = generate_synthetic_corpus(5, 20, 1.0, 8000, 8).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn minimum_per_class_splits_two_one_one() {
        let c = generate_synthetic_corpus(3, 4, 0.5, 8000, 1).unwrap();
        assert_eq!(c.len(), 12);
        for class in 0..3 {
            let count = |split| {
                c.samples()
                    .iter()
                    .filter(|s| s.class_id == class && s.split == split)
                    .count()
            };
            assert_eq!(
                (count(Split::Train), count(Split::Valid), count(Split::Test)),
                (2, 1, 1)
            );
        }
    }

    #[test]
    fn default_split_is_sixty_twenty_twenty() {
        let c = generate_synthetic_corpus(2, 20, 0.25, 8000, 1).unwrap();
        assert_eq!(c.split(Split::Train).len(), 24);
        assert_eq!(c.split(Split::Valid).len(), 8);
        assert_eq!(c.split(Split::Test).len(), 8);
    }

    #[test]
    fn every_class_concentrates_energy_in_its_band() {
        for sr in [8000, 16000] {
            let c = generate_synthetic_corpus(5, 8, 1.0, sr, 11).unwrap();
            let layout = SyntheticLayout::new(5, sr).unwrap();
            for s in c.samples() {
                let frac = band_energy_fraction(&s.wave, &layout.classes[s.class_id]);
                assert!(frac >= 0.6, "{} at {sr} Hz: {frac}", s.id);
            }
        }
    }

    #[test]
    fn rejects_invalid_generation_requests() {
        assert!(generate_synthetic_corpus(5, 3, 1.0, 8000, 1).is_err());
        assert!(generate_synthetic_corpus(1, 4, 1.0, 8000, 1).is_err());
        assert!(generate_synthetic_corpus(2, 4, 0.01, 8000, 1).is_err());
        assert!(matches!(
            generate_synthetic_corpus(80, 4, 1.0, 8000, 1),
            Err(Error::InfeasibleLayout(_))
        ));
    }

    fn write_manifest(dir: &Path, rows: &[(&str, &str, &str)]) -> PathBuf {
        let path = dir.join("manifest.csv");
        let mut text = String::from("relative_path,class_name,split\n");
        for (p, c, s) in rows {
            text.push_str(&format!("{p},{c},{s}\n"));
        }
        std::fs::write(&path, text).unwrap();
        path
    }

    fn write_tone(dir: &Path, name: &str, sr: u32) {
        let w = Waveform::new((0..800).map(|n| (n as f64 * 0.1).sin() * 0.5).collect(), sr).unwrap();
        write_wav(&dir.join(name), &w, WavEncoding::Pcm16).unwrap();
    }

    #[test]
    fn manifest_loading() {
        let dir = tempfile::tempdir().unwrap();
        write_tone(dir.path(), "a.wav", 8000);
        write_tone(dir.path(), "b.wav", 8000);
        write_tone(dir.path(), "c.wav", 8000);
        let m = write_manifest(
            dir.path(),
            &[("a.wav", "dog", "train"), ("b.wav", "cat", "train"), ("c.wav", "dog", "train")],
        );
        let corpus = load_wav_corpus(dir.path(), &m).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.class_names(), &["cat".to_string(), "dog".to_string()]);
        let ids: BTreeSet<usize> = corpus.samples().iter().map(|s| s.class_id).collect();
        assert_eq!(ids, BTreeSet::from([0, 1]));
        assert_eq!(corpus.samples()[0].class_id, 1);
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_tone(dir.path(), "a.wav", 8000);
        let m = write_manifest(dir.path(), &[("a.wav", "dog", "train"), ("gone.wav", "cat", "train")]);
        let err = load_wav_corpus(dir.path(), &m).unwrap_err();
        assert!(err.to_string().contains("gone.wav"), "{err}");

        let m = write_manifest(dir.path(), &[("a.wav", "dog", "train"), ("a.wav", "dog", "train")]);
        let err = load_wav_corpus(dir.path(), &m).unwrap_err();
        assert!(err.to_string().contains("duplicate entry"));

        write_tone(dir.path(), "b.wav", 16000);
        let m = write_manifest(dir.path(), &[("a.wav", "dog", "train"), ("b.wav", "dog", "train")]);
        assert!(matches!(
            load_wav_corpus(dir.path(), &m),
            Err(Error::SampleRateMismatch { .. })
        ));

        // cat has no test sample but test is a declared split.
        write_tone(dir.path(), "c.wav", 8000);
        let m = write_manifest(dir.path(), &[("a.wav", "dog", "train"), ("c.wav", "cat", "train"), ("a2.wav", "dog", "test")]);
        write_tone(dir.path(), "a2.wav", 8000);
        assert!(matches!(load_wav_corpus(dir.path(), &m), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn written_corpus_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate_synthetic_corpus(2, 4, 0.25, 8000, 3).unwrap();
        let manifest = c.write_to_dir(dir.path()).unwrap();
        let back = load_wav_corpus(dir.path(), &manifest).unwrap();
        assert_eq!(back.samples(), c.samples());
        assert_eq!(back.class_names(), c.class_names());
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn augmentation_limits_and_determinism() {
        let c = generate_synthetic_corpus(2, 4, 0.25, 8000, 3).unwrap();
        let pool = default_noise_pool(1000, 8000, 4, 9).unwrap();
        let s = &c.samples()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = augment_with_noise(s, &pool, [120.0, 120.0], &mut rng).unwrap();
        for (a, b) in out.wave.samples().iter().zip(s.wave.samples()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(out.class_id, s.class_id);

        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = augment_with_noise(s, &pool, [3.0, 3.0], &mut r1).unwrap();
        let b = augment_with_noise(s, &pool, [3.0, 3.0], &mut r2).unwrap();
        assert_eq!(a, b);
        let contamination = a.contamination.unwrap();
        assert_eq!(contamination.snr_db, 3.0);

        // Recompute the SNR from the recorded pool index and offset.
        let (idx, offset) = contamination.contaminant_id["pool-".len()..]
            .split_once('@')
            .map(|(i, o)| (i.parse::<usize>().unwrap(), o.parse::<usize>().unwrap()))
            .unwrap();
        let mix = crate::dsp::mix_at_snr_with_offset(&s.wave, &pool[idx], 3.0, offset).unwrap();
        assert_eq!(mix.mixture, a.wave);
        assert!((snr_db(&mix.signal, &mix.noise) - 3.0).abs() < 1e-6);

        assert!(augment_with_noise(s, &[], [0.0, 1.0], &mut r1).is_err());
        assert!(augment_with_noise(s, &pool, [2.0, 1.0], &mut r1).is_err());
    }

    #[test]
    fn ood_in_class_mixtures() {
        let c = generate_synthetic_corpus(3, 5, 0.25, 8000, 3).unwrap();
        let ood = make_ood_corpus(&c, ContaminationKind::InClassMixture, 5.0, 1).unwrap();
        assert_eq!(ood.len(), c.split(Split::Test).len());
        let by_id: BTreeMap<&str, &LabeledSample> =
            c.samples().iter().map(|s| (s.id.as_str(), s)).collect();
        for (s, base) in ood.samples().iter().zip(c.split(Split::Test)) {
            let cont = s.contamination.as_ref().unwrap();
            assert_eq!(cont.kind, ContaminationKind::InClassMixture);
            assert_eq!(cont.snr_db, 5.0);
            assert_eq!(s.class_id, base.class_id);
            assert_ne!(by_id[cont.contaminant_id.as_str()].class_id, s.class_id);
        }
        let again = make_ood_corpus(&c, ContaminationKind::InClassMixture, 5.0, 1).unwrap();
        assert_eq!(again.digest(), ood.digest());
    }

    #[test]
    fn ood_white_noise_hits_three_db() {
        let c = generate_synthetic_corpus(2, 5, 0.25, 8000, 3).unwrap();
        let ood = make_ood_corpus(&c, ContaminationKind::WhiteNoise, 3.0, 2).unwrap();
        for (s, base) in ood.samples().iter().zip(c.split(Split::Test)) {
            let cont = s.contamination.as_ref().unwrap();
            let g = cont.output_gain;
            let sig: Vec<f64> = base.wave.samples().iter().map(|a| g * a).collect();
            let noise: Vec<f64> = s.wave.samples().iter().zip(&sig).map(|(y, x)| y - x).collect();
            assert!((snr_db(&sig, &noise) - 3.0).abs() < 1e-6);
            assert_eq!(cont.snr_db, 3.0);
        }
        let speech = make_ood_corpus(&c, ContaminationKind::SpeechLike, 3.0, 2).unwrap();
        assert!(speech
            .samples()
            .iter()
            .all(|s| s.contamination.as_ref().unwrap().kind == ContaminationKind::SpeechLike));
    }
}
