//! Time-domain explanations for audio classifiers.
//!
//! A frozen log-mel CNN classifier is explained by an interpreter that decodes
//! the classifier's intermediate representations into the latent space of a
//! learned time-domain codec, estimates a mask there, and synthesizes two
//! waveforms: the explanation `i` (mask-in) and its complement `i_out`
//! (mask-out). Because the codec decoder is linear, `i + i_out` reconstructs the
//! decoded input exactly.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`dsp`]: waveforms, STFT, log-mel, spectral L1, SNR mixing, WAV I/O.
//! - [`datasets`]: synthetic and WAV corpora, noise augmentation, OOD mixtures.
//! - [`classifier`]: the model being explained and its training loop.
//! - [`interpreter`]: codec, UNet decoder, dual-path mask estimator, synthesis.
//! - [`training`]: the masking loss and the interpreter optimization loop.
//! - [`metrics`]: AI, AD, AG, FF, Fid-In, SPS, COMP and a saliency baseline.
//! - [`study`]: listening-study export, rating records and MOS aggregation.

pub mod classifier;
pub mod datasets;
pub mod dsp;
mod error;
pub mod interpreter;
pub mod metrics;
pub mod nn;
pub mod study;
pub mod training;



pub use classifier::{ClassProbabilities, Classifier, ClassifierConfig, RepresentationSet};
pub use datasets::{Corpus, LabeledSample, Split};
pub use interpreter::{ExplanationResult, Interpreter, InterpreterConfig, LatentGrid};
pub use metrics::{ConfidenceTriple, MetricsReport};
pub use study::{MosSummary, RatingRecord, StudyManifest};
pub use training::{LossBreakdown, LossWeights};
pub use dsp::{StftConfig, Waveform};
pub use error::{Error, Result};



