//! Pipeline commands behind the `tdexplain` binary.
//!
//! Every command takes a [`RunConfig`] and reads or writes artifacts under
//! its `output_dir`.

pub mod config;
pub mod server;

use std::path::{Path, PathBuf};

use tdexplain::classifier::train_classifier;
use tdexplain::datasets::{generate_synthetic_corpus, load_wav_corpus};
use tdexplain::metrics::{
    evaluate_suite, format_table, Explainer, IdentityExplainer, InterpreterExplainer, SaliencyMaskExplainer,
    SilenceExplainer,
};
use tdexplain::study::{export_explanations, load_ratings, mos_summary, CiMethod};
use tdexplain::training::{train_interpreter, write_history_jsonl};
use tdexplain::{Classifier, Corpus, Interpreter, MetricsReport, MosSummary, StudyManifest};

pub use config::RunConfig;
use config::DatasetSource;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error(transparent)]
    Core(#[from] tdexplain::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(tdexplain::Error::InvalidConfig(_)) => 2,
            CliError::MissingCheckpoint(_) | CliError::Core(tdexplain::Error::MissingFile(_)) => 3,
            _ => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Artifact locations inside `output_dir`.
#[derive(Clone, Debug)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.output_dir.clone(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn corpus_digest(&self) -> PathBuf {
        self.root.join("corpus.sha256")
    }

    pub fn classifier(&self) -> PathBuf {
        self.root.join("classifier.safetensors")
    }

    pub fn classifier_history(&self) -> PathBuf {
        self.root.join("classifier_history.jsonl")
    }

    pub fn interpreter(&self) -> PathBuf {
        self.root.join("interpreter.safetensors")
    }

    pub fn interpreter_history(&self) -> PathBuf {
        self.root.join("interpreter_history.jsonl")
    }

    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn metrics_table(&self) -> PathBuf {
        self.root.join("metrics.txt")
    }

    pub fn study_dir(&self) -> PathBuf {
        self.root.join("study")
    }

    pub fn ratings(&self) -> PathBuf {
        self.study_dir().join("ratings.jsonl")
    }

    pub fn mos(&self) -> PathBuf {
        self.root.join("mos.json")
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}

pub fn load_corpus(cfg: &RunConfig) -> CliResult<Corpus> {
    let d = &cfg.dataset;
    let corpus = match d.source {
        DatasetSource::Synthetic => {
            generate_synthetic_corpus(d.num_classes, d.per_class, d.clip_seconds, cfg.dsp.sample_rate, cfg.seed)?
        }
        DatasetSource::Wav => {
            let root = d.root.as_deref().expect("validated");
            load_wav_corpus(root, d.manifest.as_deref().expect("validated"))?
        }
    };
    if corpus.num_classes() != d.num_classes {
        return Err(CliError::Config(format!(
            "dataset has {} classes, config says {}",
            corpus.num_classes(),
            d.num_classes
        )));
    }
    if corpus.sample_rate() != cfg.dsp.sample_rate {
        return Err(CliError::Config(format!(
            "dataset is {} Hz, config says {} Hz",
            corpus.sample_rate(),
            cfg.dsp.sample_rate
        )));
    }
    Ok(corpus)
}

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingCheckpoint(path.to_path_buf()))
    }
}

pub fn load_classifier(cfg: &RunConfig) -> CliResult<Classifier> {
    let path = Paths::new(cfg).classifier();
    require(&path)?;
    let mut clf = Classifier::load(&path)?;
    clf.freeze();
    Ok(clf)
}

pub fn load_pair(cfg: &RunConfig) -> CliResult<(Classifier, Interpreter)> {
    let clf = load_classifier(cfg)?;
    let path = Paths::new(cfg).interpreter();
    require(&path)?;
    let itp = Interpreter::load(&path, &clf)?;
    Ok((clf, itp))
}

/// Generate (or index) the corpus and write it with its digest.
pub fn gen_data(cfg: &RunConfig) -> CliResult<String> {
    let corpus = load_corpus(cfg)?;
    let paths = Paths::new(cfg);
    corpus.write_to_dir(&paths.data_dir())?;
    let digest = corpus.digest();
    write_text(&paths.corpus_digest(), &format!("{digest}\n"))?;
    Ok(digest)
}

pub fn train_clf(cfg: &RunConfig) -> CliResult<Classifier> {
    let corpus = load_corpus(cfg)?;
    let (mut clf, history) = train_classifier(&corpus, &cfg.classifier_config(), &cfg.classifier.train, cfg.seed)?;
    clf.set_class_names(corpus.class_names().to_vec())?;
    clf.freeze();
    let paths = Paths::new(cfg);
    clf.save(&paths.classifier())?;
    write_history_jsonl(&paths.classifier_history(), &history)?;
    Ok(clf)
}

pub fn train_itp(cfg: &RunConfig) -> CliResult<Vec<tdexplain::training::InterpreterEpoch>> {
    let clf = load_classifier(cfg)?;
    let corpus = load_corpus(cfg)?;
    let mut itp = Interpreter::new(cfg.interpreter.clone(), clf.config(), cfg.seed)?;
    let history = train_interpreter(&clf, &mut itp, &corpus, &cfg.loss, &cfg.optimizer, cfg.seed)?;
    let paths = Paths::new(cfg);
    itp.save(&paths.interpreter())?;
    write_history_jsonl(&paths.interpreter_history(), &history)?;
    Ok(history)
}

/// Render study stimuli from the configured split.
pub fn explain(cfg: &RunConfig) -> CliResult<StudyManifest> {
    let (clf, itp) = load_pair(cfg)?;
    let corpus = load_corpus(cfg)?;
    let s = &cfg.study;
    Ok(export_explanations(
        &clf,
        &itp,
        &corpus,
        s.split,
        s.stimuli,
        &s.method_label,
        &Paths::new(cfg).study_dir(),
    )?)
}

pub fn eval(cfg: &RunConfig) -> CliResult<Vec<MetricsReport>> {
    let (clf, itp) = load_pair(cfg)?;
    let corpus = load_corpus(cfg)?;
    let main = InterpreterExplainer {
        interpreter: &itp,
        label: cfg.study.method_label.clone(),
    };
    let mut explainers: Vec<&dyn Explainer> = vec![&main];
    if cfg.eval.baselines {
        explainers.extend([
            &SaliencyMaskExplainer as &dyn Explainer,
            &IdentityExplainer,
            &SilenceExplainer,
        ]);
    }
    let reports = explainers
        .into_iter()
        .map(|e| evaluate_suite(&clf, e, &corpus, cfg.eval.split))
        .collect::<tdexplain::Result<Vec<_>>>()?;
    let paths = Paths::new(cfg);
    write_text(
        &paths.metrics_json(),
        &serde_json::to_string_pretty(&reports).map_err(tdexplain::Error::from)?,
    )?;
    write_text(&paths.metrics_table(), &format_table(&reports))?;
    Ok(reports)
}

pub fn ci_method(cfg: &RunConfig) -> CiMethod {
    match cfg.study.bootstrap_resamples {
        Some(resamples) => CiMethod::Bootstrap {
            resamples,
            seed: cfg.seed,
        },
        None => CiMethod::StudentT,
    }
}

pub fn mos(cfg: &RunConfig) -> CliResult<MosSummary> {
    let paths = Paths::new(cfg);
    let ratings = load_ratings(&paths.ratings())?;
    if ratings.is_empty() {
        return Err(CliError::Other(format!("no ratings in {}", paths.ratings().display())));
    }
    let summary = mos_summary(&ratings, ci_method(cfg))?;
    write_text(
        &paths.mos(),
        &serde_json::to_string_pretty(&summary).map_err(tdexplain::Error::from)?,
    )?;
    Ok(summary)
}
