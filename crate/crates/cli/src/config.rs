//! Run configuration: one TOML document with a default for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tdexplain::classifier::ClassifierTrainConfig;
use tdexplain::dsp::MelConfig;
use tdexplain::training::InterpreterTrainConfig;
use tdexplain::{ClassifierConfig, InterpreterConfig, LossWeights, Split};

use crate::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dsp: DspSection,
    pub dataset: DatasetSection,
    pub classifier: ClassifierSection,
    pub interpreter: InterpreterConfig,
    pub loss: LossWeights,
    pub optimizer: InterpreterTrainConfig,
    pub eval: EvalSection,
    pub study: StudySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            dsp: DspSection::default(),
            dataset: DatasetSection::default(),
            classifier: ClassifierSection::default(),
            interpreter: InterpreterConfig::default(),
            loss: LossWeights::default(),
            optimizer: InterpreterTrainConfig::default(),
            eval: EvalSection::default(),
            study: StudySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspSection {
    pub sample_rate: u32,
    pub mel: MelConfig,
}

impl Default for DspSection {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            mel: MelConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    #[default]
    Synthetic,
    Wav,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub source: DatasetSource,
    pub num_classes: usize,
    pub per_class: usize,
    pub clip_seconds: f64,
    /// WAV source only.
    pub root: Option<PathBuf>,
    /// WAV source only; CSV of `path,class_name,split`.
    pub manifest: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            source: DatasetSource::Synthetic,
            num_classes: 5,
            per_class: 20,
            clip_seconds: 1.0,
            root: None,
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierSection {
    pub widths: [usize; 4],
    pub zero_head: bool,
    pub train: ClassifierTrainConfig,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let model = ClassifierConfig::default();
        Self {
            widths: model.widths,
            zero_head: model.zero_head,
            train: ClassifierTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub split: Split,
    /// Also score the saliency, identity and silence baselines.
    pub baselines: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            baselines: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    pub stimuli: usize,
    pub split: Split,
    pub method_label: String,
    pub bind: String,
    /// Use a percentile bootstrap with this many resamples instead of the
    /// Student-t interval.
    pub bootstrap_resamples: Option<usize>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            stimuli: tdexplain::study::DEFAULT_STIMULI,
            split: Split::Test,
            method_label: "interpreter".into(),
            bind: "127.0.0.1:8080".into(),
            bootstrap_resamples: None,
        }
    }
}

impl RunConfig {
    /// Parse TOML text, apply `key=value` overrides, then validate.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        for kv in overrides {
            apply_override(&mut doc, kv)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.dataset.num_classes < 2 {
            return bad("dataset.num_classes must be at least 2".into());
        }
        if !(self.dataset.clip_seconds > 0.0) {
            return bad("dataset.clip_seconds must be positive".into());
        }
        if self.dataset.source == DatasetSource::Wav && (self.dataset.root.is_none() || self.dataset.manifest.is_none()) {
            return bad("dataset.root and dataset.manifest are required for the wav source".into());
        }
        if self.study.stimuli == 0 {
            return bad("study.stimuli must be positive".into());
        }
        let map = |e: tdexplain::Error| CliError::Config(e.to_string());
        self.classifier_config().validate().map_err(map)?;
        self.interpreter.validate().map_err(map)?;
        self.loss.validate().map_err(map)?;
        if self.optimizer.epochs == 0 || self.optimizer.batch_size == 0 || !(self.optimizer.lr > 0.0) {
            return bad("optimizer epochs, batch_size and lr must be positive".into());
        }
        Ok(())
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            sample_rate: self.dsp.sample_rate,
            mel: self.dsp.mel,
            widths: self.classifier.widths,
            num_classes: self.dataset.num_classes,
            zero_head: self.classifier.zero_head,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Write the resolved configuration into `output_dir`.
    pub fn echo(&self) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::Other(format!("{}: {e}", self.output_dir.display())))?;
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Set a dotted key. The value is read as a TOML literal and falls back to a
/// plain string, so `--set output_dir=out` needs no quoting.
fn apply_override(doc: &mut toml::Table, kv: &str) -> Result<(), CliError> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{kv}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
