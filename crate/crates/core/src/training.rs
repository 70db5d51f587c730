//! Masking loss and the interpreter optimization loop.
//!
//! The loss pulls the classifier's output on the explanation toward its output
//! on the input, pushes the output on the complement away from it, and
//! penalizes the mean STFT magnitude of the explanation:
//!
//! `total = l_in * CE(p_x, p_i) - l_out * CE(p_x, p_iout) + l_reg * L1(|STFT(i)|)`

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{Classifier, RepresentationSet};
use crate::datasets::{Corpus, LabeledSample, Split};
use crate::dsp::tensor::{batch_tensor, TensorStft};
use crate::dsp::{spectral_l1, StftConfig};
use crate::interpreter::Interpreter;
use crate::nn::{self, Adam};
use crate::{Error, Result, Waveform};

/// Guard inside every log of a probability.
pub const LOG_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_in: f64,
    pub lambda_out: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_in: 5.0,
            lambda_out: 0.2,
            lambda_reg: 6.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_in", self.lambda_in),
            ("lambda_out", self.lambda_out),
            ("lambda_reg", self.lambda_reg),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn combine(&self, mask_in: f64, mask_out: f64, reg: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.lambda_in * mask_in - self.lambda_out * mask_out + self.lambda_reg * reg,
            mask_in,
            mask_out,
            reg,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mask_in: f64,
    pub mask_out: f64,
    pub reg: f64,
}

/// `-sum_c p[c] * ln(q[c] + LOG_GUARD)`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    -p.iter().zip(q).map(|(a, b)| a * (b + LOG_GUARD).ln()).sum::<f64>()
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&a| a > 0.0).map(|a| a * a.ln()).sum::<f64>()
}

/// Loss terms for one sample, with the regularizer measured on `i` under the
/// default STFT.
pub fn masking_loss(
    probs_x: &[f64],
    probs_i: &[f64],
    probs_iout: &[f64],
    i: &Waveform,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    if probs_x.len() != probs_i.len() || probs_x.len() != probs_iout.len() {
        return Err(Error::Shape("probability vectors differ in length".into()));
    }
    let reg = spectral_l1(i, &StftConfig::default())?;
    Ok(w.combine(
        cross_entropy(probs_x, probs_i),
        cross_entropy(probs_x, probs_iout),
        reg,
    ))
}

/// Batch-mean loss terms as scalar tensors.
#[derive(Clone, Debug)]
pub struct TensorLoss {
    pub total: Tensor,
    pub mask_in: Tensor,
    pub mask_out: Tensor,
    pub reg: Tensor,
}

impl TensorLoss {
    pub fn breakdown(&self) -> Result<LossBreakdown> {
        let v = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok(LossBreakdown {
            total: v(&self.total)?,
            mask_in: v(&self.mask_in)?,
            mask_out: v(&self.mask_out)?,
            reg: v(&self.reg)?,
        })
    }
}

/// Differentiable masking loss. `probs_x` is `(B, C)` and treated as a
/// constant; `logits_i`, `logits_iout` are `(B, C)`; `i` is `(B, T)`.
pub fn masking_loss_tensor(
    probs_x: &Tensor,
    logits_i: &Tensor,
    logits_iout: &Tensor,
    i: &Tensor,
    stft: &TensorStft,
    w: &LossWeights,
) -> Result<TensorLoss> {
    let target = probs_x.detach();
    let ce = |logits: &Tensor| -> Result<Tensor> {
        let q = nn::softmax_last(logits)?;
        let log_q = (q + LOG_GUARD)?.log()?;
        Ok(target.mul(&log_q)?.sum(D::Minus1)?.neg()?.mean(0)?)
    };
    let mask_in = ce(logits_i)?;
    let mask_out = ce(logits_iout)?;
    let reg = stft.spectral_l1(i)?.mean(0)?;
    let total = (((&mask_in * w.lambda_in)? - (&mask_out * w.lambda_out)?)? + (&reg * w.lambda_reg)?)?;
    Ok(TensorLoss {
        total,
        mask_in,
        mask_out,
        reg,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpreterTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for InterpreterTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 5e-4,
            batch_size: 8,
            grad_clip: 5.0,
        }
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpreterEpoch {
    pub epoch: usize,
    pub mask_in: f64,
    pub mask_out: f64,
    pub reg: f64,
    pub total: f64,
    pub valid_total: f64,
}

pub fn write_history_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Per-sample classifier outputs on the clean input. The classifier is frozen,
/// so these are computed once.
struct Cached {
    wave: Waveform,
    maps: RepresentationSet,
    probs_x: Tensor,
}

fn cache_split(clf: &Classifier, itp: &Interpreter, samples: &[&LabeledSample], len: usize) -> Result<Vec<Cached>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(16) {
        let waves: Vec<Waveform> = chunk.iter().map(|s| s.wave.fit_to_length(len)).collect();
        let rows: Vec<&[f64]> = waves.iter().map(|w| w.samples()).collect();
        let x = batch_tensor(&rows, clf.dtype(), clf.device())?;
        let (logits, taps) = clf.forward(&x, false)?;
        let probs = nn::softmax_last(&logits)?.to_dtype(itp.dtype())?;
        let maps = RepresentationSet::new(
            taps.iter()
                .map(|t| t.to_dtype(itp.dtype()))
                .collect::<candle_core::Result<Vec<_>>>()?,
        )?;
        for (j, wave) in waves.into_iter().enumerate() {
            out.push(Cached {
                wave,
                maps: maps.item(j)?,
                probs_x: probs.narrow(0, j, 1)?,
            });
        }
    }
    Ok(out)
}

/// Forward pass and loss for a batch of cached samples.
fn batch_loss(
    clf: &Classifier,
    itp: &Interpreter,
    batch: &[&Cached],
    stft: &TensorStft,
    w: &LossWeights,
) -> Result<TensorLoss> {
    let rows: Vec<&[f64]> = batch.iter().map(|c| c.wave.samples()).collect();
    let x = batch_tensor(&rows, itp.dtype(), &Device::Cpu)?;
    let maps: Vec<&RepresentationSet> = batch.iter().map(|c| &c.maps).collect();
    let h = RepresentationSet::stack(&maps)?;
    let probs_x = Tensor::cat(&batch.iter().map(|c| &c.probs_x).collect::<Vec<_>>(), 0)?;
    let out = itp.forward(&x, &h)?;
    let both = Tensor::cat(&[&out.explanation, &out.complement], 0)?.to_dtype(clf.dtype())?;
    let logits = clf.logits(&both)?.to_dtype(itp.dtype())?;
    let b = batch.len();
    masking_loss_tensor(
        &probs_x,
        &logits.narrow(0, 0, b)?,
        &logits.narrow(0, b, b)?,
        &out.explanation,
        stft,
        w,
    )
}

fn mean_loss(
    clf: &Classifier,
    itp: &Interpreter,
    data: &[Cached],
    batch_size: usize,
    stft: &TensorStft,
    w: &LossWeights,
) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in data.chunks(batch_size) {
        let refs: Vec<&Cached> = chunk.iter().collect();
        sum += batch_loss(clf, itp, &refs, stft, w)?.breakdown()?.total * chunk.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

/// Train `itp` against the frozen `clf`. On return `itp` holds the parameters
/// with the lowest validation loss. A non-finite loss restores the last good
/// parameters and is reported as an error.
pub fn train_interpreter(
    clf: &Classifier,
    itp: &mut Interpreter,
    corpus: &Corpus,
    w: &LossWeights,
    cfg: &InterpreterTrainConfig,
    seed: u64,
) -> Result<Vec<InterpreterEpoch>> {
    if !clf.is_frozen() {
        return Err(Error::InvalidConfig("classifier must be frozen before interpreter training".into()));
    }
    w.validate()?;
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig("batch_size and epochs must be positive".into()));
    }
    let train = corpus.split(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    let valid = corpus.split(Split::Valid);
    let len = corpus.samples().iter().map(|s| s.wave.len()).max().unwrap_or(0);
    for s in &train {
        clf.check_input(&s.wave.fit_to_length(len))?;
    }
    itp.bind_classifier(clf)?;

    let train = cache_split(clf, itp, &train, len)?;
    let valid = cache_split(clf, itp, &valid, len)?;
    let stft = TensorStft::new(&StftConfig::default(), itp.dtype(), &Device::Cpu)?;
    let mut opt = Adam::new(itp.params().trainable(), cfg.lr, Some(cfg.grad_clip))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x017e_7a11);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, BTreeMap<String, Tensor>)> = None;
    let mut last_good = itp.params().snapshot()?;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Cached> = idx.iter().map(|&i| &train[i]).collect();
            let loss = batch_loss(clf, itp, &batch, &stft, w)?;
            let b = loss.breakdown()?;
            if ![b.total, b.mask_in, b.mask_out, b.reg].iter().all(|v| v.is_finite()) {
                itp.params().restore(&last_good)?;
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let n = batch.len() as f64;
            sums[0] += b.mask_in * n;
            sums[1] += b.mask_out * n;
            sums[2] += b.reg * n;
            sums[3] += b.total * n;
            opt.backward_step(&loss.total)?;
        }
        last_good = itp.params().snapshot()?;
        let n = train.len() as f64;
        let valid_total = if valid.is_empty() {
            sums[3] / n
        } else {
            mean_loss(clf, itp, &valid, cfg.batch_size, &stft, w)?
        };
        let rec = InterpreterEpoch {
            epoch,
            mask_in: sums[0] / n,
            mask_out: sums[1] / n,
            reg: sums[2] / n,
            total: sums[3] / n,
            valid_total,
        };
        log::info!(
            "interpreter epoch {epoch}: in {:.4} out {:.4} reg {:.5} total {:.4} valid {:.4}",
            rec.mask_in,
            rec.mask_out,
            rec.reg,
            rec.total,
            rec.valid_total
        );
        history.push(rec);
        if !valid_total.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(v, _)| valid_total < *v) {
            best = Some((valid_total, last_good.clone()));
        }
    }
    if let Some((_, snap)) = best {
        itp.params().restore(&snap)?;
    }
    Ok(history)
}

/// Gradients smaller than this are compared on an absolute scale: central
/// differences of an `f64` loss of order 1 carry roundoff near 1e-10.
pub const FD_GRADIENT_FLOOR: f64 = 1e-5;

/// Compare the analytic gradient of `loss_fn` with central differences on
/// `probes` coordinates drawn uniformly from `vars`. Returns the largest
/// relative error `|a - n| / max(|a|, |n|, FD_GRADIENT_FLOOR)`. Requires
/// `f64` variables.
pub fn finite_difference_check<F>(
    loss_fn: F,
    vars: &[Var],
    probes: usize,
    eps: f64,
    seed: u64,
) -> Result<f64>
where
    F: Fn() -> Result<Tensor>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(format!("eps {eps} outside [1e-7, 1e-4]")));
    }
    if vars.iter().any(|v| v.dtype() != DType::F64) {
        return Err(Error::InvalidConfig("finite differences need f64 parameters".into()));
    }
    let total: usize = vars.iter().map(|v| v.elem_count()).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let grads = loss_fn()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let mut flat = rng.gen_range(0..total);
        let mut vi = 0;
        while flat >= vars[vi].elem_count() {
            flat -= vars[vi].elem_count();
            vi += 1;
        }
        let var = &vars[vi];
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.get(flat)?.to_scalar::<f64>()?,
            None => 0.0,
        };
        let original = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let shape = var.shape().clone();
        let eval = |delta: f64| -> Result<f64> {
            let mut v = original.clone();
            v[flat] += delta;
            var.set(&Tensor::from_vec(v, shape.clone(), var.device())?)?;
            Ok(loss_fn()?.to_scalar::<f64>()?)
        };
        let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        var.set(&Tensor::from_vec(original, shape, var.device())?)?;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_GRADIENT_FLOOR);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Masking loss of a whole pipeline on a fixed batch, for gradient checks.
pub fn pipeline_loss(
    clf: &Classifier,
    itp: &Interpreter,
    x: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let (logits_x, taps) = clf.forward(x, false)?;
    let h = RepresentationSet::new(taps)?;
    let out = itp.forward(x, &h)?;
    let b = x.dim(0)?;
    let both = Tensor::cat(&[&out.explanation, &out.complement], 0)?;
    let logits = clf.logits(&both)?;
    let stft = TensorStft::new(&StftConfig::default(), x.dtype(), x.device())?;
    Ok(masking_loss_tensor(
        &nn::softmax_last(&logits_x)?,
        &logits.narrow(0, 0, b)?,
        &logits.narrow(0, b, b)?,
        &out.explanation,
        &stft,
        w,
    )?
    .total)
}
