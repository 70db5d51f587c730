//! Listening-study data: stimulus export, rating records and MOS summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::classifier::Classifier;
use crate::datasets::{Corpus, Split};
use crate::dsp::wav::{write_wav, WavEncoding};
use crate::interpreter::{explain_batch, Interpreter};
use crate::{Error, Result, Waveform};

pub const MIN_SCORE: u8 = 1;
pub const MAX_SCORE: u8 = 100;
pub const DEFAULT_STIMULI: usize = 9;
/// Exported audio peaks at this level.
pub const EXPORT_PEAK: f64 = 0.9;
pub const ROLES: [&str; 3] = ["input", "explanation", "complement"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub rater_id: String,
    pub stimulus_id: String,
    pub method_label: String,
    pub score: u8,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RatingRecord {
    pub fn validate(&self, manifest: &StudyManifest) -> Result<()> {
        if !(MIN_SCORE..=MAX_SCORE).contains(&self.score) {
            return Err(Error::InvalidConfig(format!(
                "score {} outside [{MIN_SCORE}, {MAX_SCORE}]",
                self.score
            )));
        }
        if manifest.stimulus(&self.stimulus_id).is_none() {
            return Err(Error::InvalidConfig(format!("unknown stimulus {}", self.stimulus_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    #[default]
    StudentT,
    /// Percentile bootstrap with a fixed seed.
    Bootstrap { resamples: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodMos {
    pub mean: f64,
    pub count: usize,
    /// 0.95 interval; null for a single rating.
    pub ci: Option<[f64; 2]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MosSummary {
    pub methods: BTreeMap<String, MethodMos>,
}

impl MosSummary {
    pub fn total_count(&self) -> usize {
        self.methods.values().map(|m| m.count).sum()
    }
}

/// Mean opinion score per method label with a 0.95 interval.
pub fn mos_summary(ratings: &[RatingRecord], method: CiMethod) -> Result<MosSummary> {
    if ratings.is_empty() {
        return Err(Error::EmptySplit("no ratings".into()));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in ratings {
        groups.entry(&r.method_label).or_default().push(r.score as f64);
    }
    let mut methods = BTreeMap::new();
    for (label, mut scores) in groups {
        scores.sort_by(f64::total_cmp);
        let n = scores.len();
        let mean = scores.iter().sum::<f64>() / n as f64;
        let ci = if n < 2 {
            None
        } else {
            Some(match method {
                CiMethod::StudentT => t_interval(&scores, mean),
                CiMethod::Bootstrap { resamples, seed } => bootstrap_interval(&scores, mean, resamples, seed),
            })
        };
        methods.insert(label.to_string(), MethodMos { mean, count: n, ci });
    }
    Ok(MosSummary { methods })
}

fn t_interval(scores: &[f64], mean: f64) -> [f64; 2] {
    let n = scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return [mean, mean];
    }
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("n >= 2 gives positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * var.sqrt() / n.sqrt();
    [mean - half, mean + half]
}

fn bootstrap_interval(sorted: &[f64], mean: f64, resamples: usize, seed: u64) -> [f64; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sorted.len();
    let mut means: Vec<f64> = (0..resamples.max(1))
        .map(|_| (0..n).map(|_| sorted[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let pick = |q: f64| means[((q * (means.len() - 1) as f64).round() as usize).min(means.len() - 1)];
    [pick(0.025).min(mean), pick(0.975).max(mean)]
}

pub fn append_rating(path: &Path, record: &RatingRecord) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_string(record)?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a JSON-lines ratings log. A missing file reads as empty.
pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let f = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimulusFiles {
    pub input: String,
    pub explanation: String,
    pub complement: String,
}

impl StimulusFiles {
    pub fn by_role(&self, role: &str) -> Option<&str> {
        match role {
            "input" => Some(&self.input),
            "explanation" => Some(&self.explanation),
            "complement" => Some(&self.complement),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub stimulus_id: String,
    /// Paths relative to the manifest directory.
    pub files: StimulusFiles,
    pub predicted_class: usize,
    pub predicted_label: String,
    pub true_class: usize,
    pub method_label: String,
    /// Gains applied at export, keyed by role.
    pub gains: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub sample_rate: u32,
    pub stimuli: Vec<Stimulus>,
}

impl StudyManifest {
    pub fn stimulus(&self, id: &str) -> Option<&Stimulus> {
        self.stimuli.iter().find(|s| s.stimulus_id == id)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let m: StudyManifest = serde_json::from_str(&text)?;
        let ids: BTreeSet<&str> = m.stimuli.iter().map(|s| s.stimulus_id.as_str()).collect();
        if ids.len() != m.stimuli.len() {
            return Err(Error::DuplicateEntry("stimulus_id".into()));
        }
        Ok(m)
    }

    /// Check that every referenced audio file exists next to the manifest.
    pub fn check_files(&self, dir: &Path) -> Result<()> {
        for s in &self.stimuli {
            for role in ROLES {
                let p = dir.join(s.files.by_role(role).expect("known role"));
                if !p.is_file() {
                    return Err(Error::MissingFile(p));
                }
            }
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Scale to [`EXPORT_PEAK`]; silent signals keep unit gain.
fn normalize_for_export(w: &Waveform) -> (Waveform, f64) {
    let peak = w.peak();
    let gain = if peak > 0.0 { EXPORT_PEAK / peak } else { 1.0 };
    (w.scaled(gain), gain)
}

/// Pick up to `count` samples from `split`, cycling through classes in
/// corpus order.
fn select_stimuli(corpus: &Corpus, split: Split, count: usize) -> Vec<usize> {
    let samples = corpus.split(split);
    let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, s) in samples.iter().enumerate() {
        per_class.entry(s.class_id).or_default().push(k);
    }
    let mut picked = Vec::new();
    let mut round = 0;
    while picked.len() < count.min(samples.len()) {
        for idx in per_class.values() {
            if let Some(&k) = idx.get(round) {
                if picked.len() < count {
                    picked.push(k);
                }
            }
        }
        round += 1;
    }
    picked
}

/// Render `count` explanation triplets from `split` into `out_dir` and write
/// the manifest.
pub fn export_explanations(
    clf: &Classifier,
    itp: &Interpreter,
    corpus: &Corpus,
    split: Split,
    count: usize,
    method_label: &str,
    out_dir: &Path,
) -> Result<StudyManifest> {
    if count == 0 {
        return Err(Error::InvalidConfig("stimulus count must be positive".into()));
    }
    let samples = corpus.split(split);
    if samples.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let audio_dir = out_dir.join("audio");
    std::fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut stimuli = Vec::new();
    for k in select_stimuli(corpus, split, count) {
        let sample = samples[k];
        let r = explain_batch(clf, itp, &[&sample.wave])?.remove(0);
        let id = format!("{}-{}", method_label, sample.id);
        let mut gains = BTreeMap::new();
        let mut paths = Vec::new();
        for (role, wave) in ROLES.iter().zip([&r.input, &r.explanation, &r.complement]) {
            let (scaled, gain) = normalize_for_export(wave);
            let rel = format!("audio/{id}_{role}.wav");
            write_wav(&out_dir.join(&rel), &scaled, WavEncoding::Pcm16)?;
            gains.insert(role.to_string(), gain);
            paths.push(rel);
        }
        let mut paths = paths.into_iter();
        stimuli.push(Stimulus {
            stimulus_id: id,
            files: StimulusFiles {
                input: paths.next().expect("three roles"),
                explanation: paths.next().expect("three roles"),
                complement: paths.next().expect("three roles"),
            },
            predicted_class: r.predicted_class,
            predicted_label: clf
                .class_names()
                .get(r.predicted_class)
                .cloned()
                .unwrap_or_else(|| r.predicted_class.to_string()),
            true_class: sample.class_id,
            method_label: method_label.to_string(),
            gains,
        });
    }
    let manifest = StudyManifest {
        sample_rate: corpus.sample_rate(),
        stimuli,
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Manifest path inside an export directory.
pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
