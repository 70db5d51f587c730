//! Faithfulness and saliency-quality metrics over explanation bundles.
//!
//! Each metric has exactly one definition point below. Confidence is the
//! softmax probability of the class the classifier predicts for the input.
//! Per-sample terms are sorted before summation so every aggregate is
//! bit-identical under any permutation of the samples.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use candle_core::{DType, Var};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassProbabilities, Classifier};
use crate::datasets::{Corpus, Split};
use crate::dsp::tensor::batch_tensor;
use crate::dsp::{istft, mel_filterbank, stft, Spectrogram};
use crate::interpreter::{explain_batch, saliency_stft, ExplanationResult, Interpreter};
use crate::{Error, Result, Waveform};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTriple {
    pub p_x: f64,
    pub p_i: f64,
    pub p_iout: f64,
    pub pred_x: usize,
    pub pred_i: usize,
}

impl ConfidenceTriple {
    pub fn from_result(r: &ExplanationResult) -> Self {
        let c = r.probs_x.argmax();
        Self {
            p_x: r.probs_x.probs[c],
            p_i: r.probs_i.probs[c],
            p_iout: r.probs_iout.probs[c],
            pred_x: c,
            pred_i: r.probs_i.argmax(),
        }
    }

    /// Triple with only confidences set; both predictions are class 0.
    pub fn from_confidences(p_x: f64, p_i: f64, p_iout: f64) -> Self {
        Self {
            p_x,
            p_i,
            p_iout,
            pred_x: 0,
            pred_i: 0,
        }
    }
}

fn nonempty(t: &[ConfidenceTriple], metric: &'static str) -> Result<()> {
    if t.is_empty() {
        return Err(Error::UndefinedMetric {
            metric,
            reason: "no samples".into(),
        });
    }
    Ok(())
}

/// Order-independent mean.
fn sorted_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Percentage of samples whose confidence strictly rises on the explanation.
pub fn average_increase(t: &[ConfidenceTriple]) -> Result<f64> {
    nonempty(t, "AI")?;
    let n = t.iter().filter(|c| c.p_i > c.p_x).count();
    Ok(100.0 * n as f64 / t.len() as f64)
}

/// Mean relative confidence drop on the explanation, in percent.
pub fn average_decrease(t: &[ConfidenceTriple]) -> Result<f64> {
    nonempty(t, "AD")?;
    if t.iter().any(|c| c.p_x <= 0.0) {
        return Err(Error::UndefinedMetric {
            metric: "AD",
            reason: "undefined relative drop: input confidence is 0".into(),
        });
    }
    Ok(100.0 * sorted_mean(t.iter().map(|c| (c.p_x - c.p_i).max(0.0) / c.p_x).collect()))
}

/// Mean confidence gain on the explanation relative to the headroom, in
/// percent.
pub fn average_gain(t: &[ConfidenceTriple]) -> Result<f64> {
    nonempty(t, "AG")?;
    if t.iter().any(|c| c.p_x >= 1.0) {
        return Err(Error::UndefinedMetric {
            metric: "AG",
            reason: "input confidence is 1, no headroom".into(),
        });
    }
    Ok(100.0 * sorted_mean(t.iter().map(|c| (c.p_i - c.p_x).max(0.0) / (1.0 - c.p_x)).collect()))
}

/// Mean confidence drop when the explanation is removed.
pub fn faithfulness(t: &[ConfidenceTriple]) -> Result<f64> {
    nonempty(t, "FF")?;
    Ok(sorted_mean(t.iter().map(|c| c.p_x - c.p_iout).collect()))
}

/// Fraction of samples whose explanation keeps the predicted class.
pub fn input_fidelity(t: &[ConfidenceTriple]) -> Result<f64> {
    nonempty(t, "Fid-In")?;
    let n = t.iter().filter(|c| c.pred_i == c.pred_x).count();
    Ok(n as f64 / t.len() as f64)
}

fn check_saliency(a: &[f64], metric: &'static str) -> Result<f64> {
    if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::UndefinedMetric {
            metric,
            reason: "saliency must be finite and nonnegative".into(),
        });
    }
    let sum: f64 = a.iter().sum();
    if sum <= 0.0 {
        return Err(Error::UndefinedMetric {
            metric,
            reason: format!(
                "undefined {}: saliency is all zero",
                if metric == "SPS" { "sparseness" } else { "complexity" }
            ),
        });
    }
    Ok(sum)
}

/// Gini index of a nonnegative vector, in `[0, 1 - 1/n]`.
pub fn sparseness(a: &[f64]) -> Result<f64> {
    let sum = check_saliency(a, "SPS")?;
    let mut s = a.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let acc: f64 = s
        .iter()
        .enumerate()
        .map(|(k, v)| (2.0 * (k + 1) as f64 - n - 1.0) * v)
        .sum();
    Ok(acc / (n * sum))
}

/// Entropy (nats) of the normalized saliency, in `[0, ln n]`.
pub fn complexity(a: &[f64]) -> Result<f64> {
    let sum = check_saliency(a, "COMP")?;
    Ok(-a
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| {
            let p = v / sum;
            p * p.ln()
        })
        .sum::<f64>())
}

/// `|d logit_pred / d logmel|` on the classifier's log-mel grid.
pub fn gradient_saliency(clf: &Classifier, wave: &Waveform) -> Result<Spectrogram> {
    clf.check_input(wave)?;
    let x = batch_tensor(&[wave.samples()], clf.dtype(), clf.device())?;
    let mel = Var::from_tensor(&clf.log_mel(&x)?.detach())?;
    let (logits, _) = clf.forward_from_logmel(mel.as_tensor(), false)?;
    let probs = ClassProbabilities::from_logits(logits.to_dtype(DType::F64)?.get(0)?.to_vec1::<f64>()?);
    let pred = probs.argmax();
    let grads = logits.get(0)?.get(pred)?.backward()?;
    let (_, rows, frames) = mel.dims3()?;
    let g = match grads.get(mel.as_tensor()) {
        Some(g) => g.abs()?.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?,
        None => vec![0.0; rows * frames],
    };
    Spectrogram::new(rows, frames, g)
}

/// Anything that produces explanation bundles for a batch of equal-length
/// waveforms.
pub trait Explainer {
    fn label(&self) -> String;
    fn alpha(&self) -> Option<f64> {
        None
    }
    fn explain(&self, clf: &Classifier, waves: &[&Waveform]) -> Result<Vec<ExplanationResult>>;
}

pub struct InterpreterExplainer<'a> {
    pub interpreter: &'a Interpreter,
    pub label: String,
}

impl Explainer for InterpreterExplainer<'_> {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn alpha(&self) -> Option<f64> {
        Some(self.interpreter.alpha())
    }

    fn explain(&self, clf: &Classifier, waves: &[&Waveform]) -> Result<Vec<ExplanationResult>> {
        explain_batch(clf, self.interpreter, waves)
    }
}

/// Build a bundle from explicit `i` and `i_out`.
pub fn bundle(clf: &Classifier, input: &Waveform, explanation: Waveform, complement: Waveform) -> Result<ExplanationResult> {
    let probs = clf.classify_batch(&[input, &explanation, &complement])?;
    let saliency = stft(&explanation, &saliency_stft())?.magnitude();
    let mut it = probs.into_iter();
    let probs_x = it.next().expect("three outputs");
    Ok(ExplanationResult {
        input: input.clone(),
        predicted_class: probs_x.argmax(),
        probs_x,
        probs_i: it.next().expect("three outputs"),
        probs_iout: it.next().expect("three outputs"),
        explanation,
        complement,
        saliency,
    })
}

/// `i = x`, `i_out = 0`.
pub struct IdentityExplainer;

impl Explainer for IdentityExplainer {
    fn label(&self) -> String {
        "identity".into()
    }

    fn explain(&self, clf: &Classifier, waves: &[&Waveform]) -> Result<Vec<ExplanationResult>> {
        waves
            .iter()
            .map(|w| bundle(clf, w, (*w).clone(), Waveform::zeros(w.len(), w.sample_rate())?))
            .collect()
    }
}

/// `i = 0`, `i_out = x`.
pub struct SilenceExplainer;

impl Explainer for SilenceExplainer {
    fn label(&self) -> String {
        "silence".into()
    }

    fn explain(&self, clf: &Classifier, waves: &[&Waveform]) -> Result<Vec<ExplanationResult>> {
        waves
            .iter()
            .map(|w| bundle(clf, w, Waveform::zeros(w.len(), w.sample_rate())?, (*w).clone()))
            .collect()
    }
}

/// Gradient saliency turned into a soft STFT mask: the mel-grid saliency is
/// normalized to `[0, 1]`, spread onto linear bins through the mel
/// filterbank, applied to the input STFT and inverted. The complement uses
/// `1 - mask`.
pub struct SaliencyMaskExplainer;

impl SaliencyMaskExplainer {
    fn one(clf: &Classifier, wave: &Waveform) -> Result<ExplanationResult> {
        let sal = gradient_saliency(clf, wave)?;
        let peak = sal.values().iter().cloned().fold(0.0f64, f64::max);
        let mel_cfg = &clf.config().mel;
        let spec = stft(wave, &mel_cfg.stft)?;
        let fb = mel_filterbank(mel_cfg, wave.sample_rate())?;
        let mut mask = vec![0.0; spec.bins * spec.frames];
        if peak > 0.0 {
            for (m, row) in fb.iter().enumerate() {
                for (k, &weight) in row.iter().enumerate() {
                    if weight == 0.0 {
                        continue;
                    }
                    for f in 0..spec.frames.min(sal.frames) {
                        mask[k * spec.frames + f] += weight * sal.at(m, f) / peak;
                    }
                }
            }
        }
        mask.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let inverse: Vec<f64> = mask.iter().map(|v| 1.0 - v).collect();
        let keep = Spectrogram::new(spec.bins, spec.frames, mask)?;
        let drop = Spectrogram::new(spec.bins, spec.frames, inverse)?;
        let sr = wave.sample_rate();
        let i = istft(&spec.map_with_mask(&keep)?, wave.len(), sr)?;
        let i_out = istft(&spec.map_with_mask(&drop)?, wave.len(), sr)?;
        bundle(clf, wave, i, i_out)
    }
}

impl Explainer for SaliencyMaskExplainer {
    fn label(&self) -> String {
        "saliency".into()
    }

    fn explain(&self, clf: &Classifier, waves: &[&Waveform]) -> Result<Vec<ExplanationResult>> {
        waves.iter().map(|w| Self::one(clf, w)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub alpha: Option<f64>,
    pub split: Split,
    pub num_samples: usize,
    /// Percent.
    pub ai: f64,
    /// Percent.
    pub ad: f64,
    /// Percent; null when some input has confidence 1.
    pub ag: Option<f64>,
    pub ff: f64,
    pub fid_in: f64,
    /// Mean per-sample Gini index over samples with a nonzero saliency.
    pub sps: Option<f64>,
    /// Mean per-sample entropy (nats) over samples with a nonzero saliency.
    pub comp: Option<f64>,
    /// Samples whose explanation has an all-zero saliency.
    pub zero_saliency: usize,
    pub classifier_hash: String,
    pub corpus_digest: String,
    pub definitions: BTreeMap<String, String>,
}

pub fn metric_definitions() -> BTreeMap<String, String> {
    [
        ("confidence", "softmax probability of argmax f(x)"),
        ("AI", "100 * #{p_i > p_x} / N"),
        ("AD", "100 * mean(max(0, p_x - p_i) / p_x), on the mask-in signal"),
        ("AG", "100 * mean(max(0, p_i - p_x) / (1 - p_x))"),
        ("FF", "mean(p_x - p_iout)"),
        ("Fid-In", "mean 1[argmax f(i) == argmax f(x)]"),
        ("SPS", "Gini index of |STFT(i)|, sorted ascending: sum (2k - n - 1) a_k / (n sum a)"),
        ("COMP", "entropy in nats of |STFT(i)| / sum |STFT(i)|"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

/// Explain every sample of `split` and aggregate the metrics.
pub fn evaluate_suite(
    clf: &Classifier,
    explainer: &dyn Explainer,
    corpus: &Corpus,
    split: Split,
) -> Result<MetricsReport> {
    let samples = corpus.split(split);
    if samples.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let mut results = Vec::with_capacity(samples.len());
    let mut start = 0;
    while start < samples.len() {
        let len = samples[start].wave.len();
        let mut end = start + 1;
        while end < samples.len() && end - start < 8 && samples[end].wave.len() == len {
            end += 1;
        }
        let waves: Vec<&Waveform> = samples[start..end].iter().map(|s| &s.wave).collect();
        results.extend(explainer.explain(clf, &waves)?);
        start = end;
    }
    report_from_results(clf, explainer, corpus, split, &results)
}

pub fn report_from_results(
    clf: &Classifier,
    explainer: &dyn Explainer,
    corpus: &Corpus,
    split: Split,
    results: &[ExplanationResult],
) -> Result<MetricsReport> {
    let triples: Vec<ConfidenceTriple> = results.iter().map(ConfidenceTriple::from_result).collect();
    let mut sps = Vec::new();
    let mut comp = Vec::new();
    for r in results {
        if let (Ok(s), Ok(c)) = (sparseness(r.saliency.values()), complexity(r.saliency.values())) {
            sps.push(s);
            comp.push(c);
        }
    }
    let defined = sps.len();
    let ag = match average_gain(&triples) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        method: explainer.label(),
        alpha: explainer.alpha(),
        split,
        num_samples: triples.len(),
        ai: average_increase(&triples)?,
        ad: average_decrease(&triples)?,
        ag,
        ff: faithfulness(&triples)?,
        fid_in: input_fidelity(&triples)?,
        sps: (defined > 0).then(|| sorted_mean(sps)),
        comp: (defined > 0).then(|| sorted_mean(comp)),
        zero_saliency: results.len() - defined,
        classifier_hash: clf.parameter_hash()?,
        corpus_digest: corpus.digest(),
        definitions: metric_definitions(),
    })
}

/// Aligned plain-text table, columns AI, AD, AG, FF, Fid-In, SPS, COMP.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let header = ["Method", "AI", "AD", "AG", "FF", "Fid-In", "SPS", "COMP"];
    let opt = |v: Option<f64>, p: usize| v.map_or("n/a".to_string(), |v| format!("{v:.p$}"));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let name = match r.alpha {
                Some(a) => format!("{} (alpha={a:.2})", r.method),
                None => r.method.clone(),
            };
            vec![
                name,
                format!("{:.2}", r.ai),
                format!("{:.2}", r.ad),
                opt(r.ag, 2),
                format!("{:.3}", r.ff),
                format!("{:.3}", r.fid_in),
                opt(r.sps, 3),
                opt(r.comp, 2),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ClassifierConfig;
    use crate::datasets::generate_synthetic_corpus;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(p_x: f64, p_i: f64) -> ConfidenceTriple {
        ConfidenceTriple::from_confidences(p_x, p_i, p_x)
    }

    #[test]
    fn increase_examples() {
        assert_eq!(average_increase(&[t(0.2, 0.5), t(0.3, 0.4)]).unwrap(), 100.0);
        assert_eq!(average_increase(&[t(0.2, 0.2), t(0.3, 0.3)]).unwrap(), 0.0);
        let ai = average_increase(&[t(0.5, 0.7), t(0.9, 0.4), t(0.2, 0.3)]).unwrap();
        assert!((ai - 200.0 / 3.0).abs() < 1e-6);
        assert!(average_increase(&[]).is_err());
    }

    #[test]
    fn decrease_examples() {
        assert_eq!(average_decrease(&[t(0.2, 0.5), t(0.3, 0.3)]).unwrap(), 0.0);
        assert!((average_decrease(&[t(0.8, 0.4)]).unwrap() - 50.0).abs() < 1e-9);
        assert!((average_decrease(&[t(0.8, 0.0), t(0.3, 0.0)]).unwrap() - 100.0).abs() < 1e-9);
        assert!(matches!(average_decrease(&[t(0.0, 0.1)]), Err(Error::UndefinedMetric { .. })));
    }

    #[test]
    fn gain_examples() {
        assert_eq!(average_gain(&[t(0.5, 0.4), t(0.3, 0.3)]).unwrap(), 0.0);
        assert!((average_gain(&[t(0.5, 1.0)]).unwrap() - 100.0).abs() < 1e-9);
        assert!((average_gain(&[t(0.5, 0.75), t(0.8, 0.8)]).unwrap() - 25.0).abs() < 1e-6);
        assert!(average_gain(&[t(1.0, 1.0)]).is_err());
    }

    #[test]
    fn faithfulness_examples() {
        let same = [ConfidenceTriple::from_confidences(0.6, 0.1, 0.6)];
        assert_eq!(faithfulness(&same).unwrap(), 0.0);
        let one = [ConfidenceTriple::from_confidences(0.9, 0.5, 0.1)];
        assert!((faithfulness(&one).unwrap() - 0.8).abs() < 1e-9);
        let zeros = [
            ConfidenceTriple::from_confidences(0.9, 0.5, 0.0),
            ConfidenceTriple::from_confidences(0.5, 0.5, 0.0),
        ];
        assert!((faithfulness(&zeros).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn fidelity_examples() {
        let mk = |a: usize, b: usize| ConfidenceTriple {
            pred_x: a,
            pred_i: b,
            ..ConfidenceTriple::from_confidences(0.5, 0.5, 0.5)
        };
        assert_eq!(input_fidelity(&[mk(1, 1), mk(2, 2)]).unwrap(), 1.0);
        assert_eq!(input_fidelity(&[mk(1, 0), mk(2, 1)]).unwrap(), 0.0);
        let seven: Vec<_> = (0..10).map(|k| mk(1, if k < 7 { 1 } else { 0 })).collect();
        assert!((input_fidelity(&seven).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn gini_and_entropy_examples() {
        assert!(sparseness(&[2.0; 16]).unwrap().abs() < 1e-12);
        assert!((sparseness(&[0.0, 0.0, 3.0, 0.0]).unwrap() - 0.75).abs() < 1e-12);
        assert!(complexity(&[0.0, 5.0, 0.0]).unwrap().abs() < 1e-12);
        assert!((complexity(&[1.0; 37]).unwrap() - (37f64).ln()).abs() < 1e-12);
        assert!(matches!(sparseness(&[0.0; 4]), Err(Error::UndefinedMetric { .. })));
        assert!(complexity(&[0.0; 4]).is_err());
        assert!(sparseness(&[1.0, -1.0]).is_err());
    }

    /// Brute-force Gini: mean absolute difference over all pairs divided by
    /// twice the mean.
    fn gini_pairs(a: &[f64]) -> f64 {
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let mut acc = 0.0;
        for x in a {
            for y in a {
                acc += (x - y).abs();
            }
        }
        acc / (2.0 * n * n * mean)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn gini_properties(a in proptest::collection::vec(0.0f64..10.0, 1..40), c in 0.01f64..100.0) {
            prop_assume_nonzero(&a)?;
            let g = sparseness(&a).unwrap();
            let n = a.len() as f64;
            prop_assert!(g >= -1e-12 && g <= 1.0 - 1.0 / n + 1e-12);
            prop_assert!((g - gini_pairs(&a)).abs() < 1e-9);
            let scaled: Vec<f64> = a.iter().map(|v| v * c).collect();
            prop_assert!((sparseness(&scaled).unwrap() - g).abs() < 1e-9);
        }

        #[test]
        fn entropy_bounds(a in proptest::collection::vec(0.0f64..10.0, 1..40)) {
            prop_assume_nonzero(&a)?;
            let h = complexity(&a).unwrap();
            prop_assert!(h >= -1e-12 && h <= (a.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn metrics_are_permutation_invariant(
            raw in proptest::collection::vec((0.01f64..0.99, 0.0f64..1.0, 0.0f64..1.0, 0usize..3, 0usize..3), 1..30),
            seed in 0u64..1000,
        ) {
            let t: Vec<ConfidenceTriple> = raw.iter().map(|&(p_x, p_i, p_iout, pred_x, pred_i)| ConfidenceTriple { p_x, p_i, p_iout, pred_x, pred_i }).collect();
            let mut u = t.clone();
            use rand::seq::SliceRandom;
            u.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(average_increase(&t).unwrap(), average_increase(&u).unwrap());
            prop_assert_eq!(average_decrease(&t).unwrap(), average_decrease(&u).unwrap());
            prop_assert_eq!(average_gain(&t).unwrap(), average_gain(&u).unwrap());
            prop_assert_eq!(faithfulness(&t).unwrap(), faithfulness(&u).unwrap());
            prop_assert_eq!(input_fidelity(&t).unwrap(), input_fidelity(&u).unwrap());
            let ad = average_decrease(&t).unwrap();
            let ag = average_gain(&t).unwrap();
            let ff = faithfulness(&t).unwrap();
            prop_assert!((0.0..=100.0).contains(&ad) && (0.0..=100.0).contains(&ag) && (-1.0..=1.0).contains(&ff));
        }
    }

    fn prop_assume_nonzero(a: &[f64]) -> std::result::Result<(), proptest::test_runner::TestCaseError> {
        if a.iter().sum::<f64>() <= 0.0 {
            return Err(proptest::test_runner::TestCaseError::reject("all zero"));
        }
        Ok(())
    }

    fn small_clf() -> Classifier {
        let mut c = Classifier::with_dtype(
            ClassifierConfig {
                widths: [4, 4, 6, 8],
                num_classes: 3,
                zero_head: false,
                ..ClassifierConfig::default()
            },
            3,
            DType::F64,
        )
        .unwrap();
        c.freeze();
        c
    }

    #[test]
    fn saliency_is_nonnegative_and_matches_finite_differences() {
        let clf = small_clf();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = Waveform::new((0..4000).map(|_| rng.gen_range(-0.4..0.4)).collect(), 16_000).unwrap();
        let s = gradient_saliency(&clf, &w).unwrap();
        assert!(s.values().iter().all(|v| *v >= 0.0));
        let x = batch_tensor(&[w.samples()], DType::F64, clf.device()).unwrap();
        let mel = clf.log_mel(&x).unwrap().get(0).unwrap().to_vec2::<f64>().unwrap();
        let pred = clf.classify(&w).unwrap().argmax();
        let logit = |m: &Vec<Vec<f64>>| {
            let t = candle_core::Tensor::new(m.clone(), clf.device()).unwrap().unsqueeze(0).unwrap();
            let (l, _) = clf.forward_from_logmel(&t, false).unwrap();
            l.get(0).unwrap().get(pred).unwrap().to_scalar::<f64>().unwrap()
        };
        for _ in 0..8 {
            let (r, f) = (rng.gen_range(0..s.rows), rng.gen_range(0..s.frames));
            let eps = 1e-5;
            let mut up = mel.clone();
            up[r][f] += eps;
            let mut dn = mel.clone();
            dn[r][f] -= eps;
            let numeric = ((logit(&up) - logit(&dn)) / (2.0 * eps)).abs();
            let analytic = s.at(r, f);
            let rel = (numeric - analytic).abs() / numeric.max(analytic).max(1e-6);
            assert!(rel < 1e-3, "cell ({r},{f}): {analytic} vs {numeric}");
        }
    }

    #[test]
    fn constant_head_gives_zero_saliency() {
        let mut clf = Classifier::new(
            ClassifierConfig {
                widths: [4, 4, 6, 8],
                num_classes: 3,
                ..ClassifierConfig::default()
            },
            1,
        )
        .unwrap();
        clf.freeze();
        let w = Waveform::new(vec![0.1; 4000], 16_000).unwrap();
        assert!(gradient_saliency(&clf, &w).unwrap().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_explainers_through_the_suite() {
        let corpus = generate_synthetic_corpus(3, 5, 0.25, 16_000, 1).unwrap();
        let clf = small_clf();
        let id = evaluate_suite(&clf, &IdentityExplainer, &corpus, Split::Test).unwrap();
        assert_eq!(id.ad, 0.0);
        assert_eq!(id.fid_in, 1.0);
        assert_eq!(id.ai, 0.0);
        let silence = evaluate_suite(&clf, &SilenceExplainer, &corpus, Split::Test).unwrap();
        assert_eq!(silence.ff, 0.0);
        assert_eq!(silence.sps, None);
        assert_eq!(silence.zero_saliency, silence.num_samples);
        let pred_silence = clf.classify(&Waveform::zeros(4000, 16_000).unwrap()).unwrap().argmax();
        let expected = corpus
            .split(Split::Test)
            .iter()
            .filter(|s| clf.classify(&s.wave).unwrap().argmax() == pred_silence)
            .count() as f64
            / silence.num_samples as f64;
        assert!((silence.fid_in - expected).abs() < 1e-12);
        let again = evaluate_suite(&clf, &IdentityExplainer, &corpus, Split::Test).unwrap();
        assert_eq!(id, again);
        for r in [&id, &silence] {
            assert!((0.0..=100.0).contains(&r.ai) && (0.0..=100.0).contains(&r.ad));
            assert!((-1.0..=1.0).contains(&r.ff) && (0.0..=1.0).contains(&r.fid_in));
        }
        let table = format_table(&[id, silence]);
        assert!(table.lines().next().unwrap().contains("AI  "));
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn saliency_baseline_runs_through_the_suite() {
        let corpus = generate_synthetic_corpus(3, 5, 0.25, 16_000, 1).unwrap();
        let clf = small_clf();
        let r = evaluate_suite(&clf, &SaliencyMaskExplainer, &corpus, Split::Test).unwrap();
        assert_eq!(r.num_samples, corpus.split(Split::Test).len());
        assert!(r.sps.is_some() && r.comp.is_some());
    }
}
