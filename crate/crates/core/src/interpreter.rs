//! The explanation generator.
//!
//! A bias-free 1-D conv encoder (kernel `L`, stride `L/2`, `K` filters, ReLU)
//! maps audio to a latent grid `H_e`. A UNet-style decoder lifts the
//! classifier's four tapped maps to a grid `H_d` of the same shape. The convex
//! fusion `alpha * H_d + (1 - alpha) * H_e` feeds a dual-path transformer that
//! emits a nonnegative mask `M`, and a linear overlap-add decoder `D` renders
//! `i = D(M * H_e)` and `i_out = D((1 - M) * H_e)`.
//!
//! Grids are carried as `(B, T', K)` tensors internally; [`LatentGrid`] is the
//! `K x T'` view handed to callers.

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassProbabilities, Classifier, ClassifierConfig, RepresentationSet, NUM_TAPS};
use crate::dsp::tensor::{batch_tensor, tensor_row};
use crate::dsp::{stft, Spectrogram, StftConfig};
use crate::nn::{self, fan_in_bound, Init, ParamStore};
use crate::{Error, Result, Waveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskNetConfig {
    pub width: usize,
    /// Non-overlapping chunk length for intra-chunk attention.
    pub chunk: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ffn: usize,
}

impl Default for MaskNetConfig {
    fn default() -> Self {
        Self {
            width: 64,
            chunk: 50,
            blocks: 2,
            heads: 4,
            ffn: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpreterConfig {
    pub alpha: f64,
    /// Encoder kernel `L`; the stride is `L / 2`.
    pub kernel: usize,
    /// Latent channels `K`.
    pub latent: usize,
    pub unet_channels: usize,
    /// Number of stride-2 1-D upsampling stages after the frequency collapse.
    pub unet_upsamples: usize,
    pub masknet: MaskNetConfig,
    /// Start the UNet output projection at zero so `H_d` is initially 0.
    pub zero_init_output: bool,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            kernel: 16,
            latent: 128,
            unet_channels: 32,
            unet_upsamples: 3,
            masknet: MaskNetConfig::default(),
            zero_init_output: false,
        }
    }
}

impl InterpreterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.kernel < 2 || !self.kernel.is_multiple_of(2) {
            return bad("encoder kernel must be even and at least 2");
        }
        if self.latent == 0 || self.unet_channels == 0 {
            return bad("latent and unet widths must be positive");
        }
        let m = &self.masknet;
        if m.width == 0 || m.chunk == 0 || m.blocks == 0 || m.heads == 0 || m.ffn == 0 {
            return bad("masknet sizes must be positive");
        }
        if !m.width.is_multiple_of(m.heads) {
            return bad("masknet width must be divisible by heads");
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.kernel / 2
    }

    /// Latent frames `T'` for `len` input samples.
    pub fn frames(&self, len: usize) -> Result<usize> {
        if len < self.kernel {
            return Err(Error::SignalTooShort {
                len,
                needed: self.kernel,
            });
        }
        Ok((len - self.kernel) / self.stride() + 1)
    }
}

/// `K x T'` latent matrix with the codec frame geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    pub channels: usize,
    pub frames: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Row-major by channel.
    values: Vec<f64>,
}

impl LatentGrid {
    /// From a `(1, T', K)` or `(T', K)` tensor.
    pub fn from_tensor(t: &Tensor, kernel: usize) -> Result<Self> {
        let t = match t.rank() {
            3 => t.get(0)?,
            2 => t.clone(),
            r => return Err(Error::Shape(format!("latent grid of rank {r}"))),
        };
        let (frames, channels) = t.dims2()?;
        let values = t
            .t()?
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Ok(Self {
            channels,
            frames,
            kernel,
            stride: kernel / 2,
            values,
        })
    }

    /// `(1, T', K)` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_vec(self.values.clone(), (self.channels, self.frames), device)?;
        Ok(t.t()?.contiguous()?.unsqueeze(0)?.to_dtype(dtype)?)
    }

    pub fn at(&self, channel: usize, frame: usize) -> f64 {
        self.values[channel * self.frames + frame]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.frames)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Every intermediate of one batched interpreter pass, `(B, T', K)` grids and
/// `(B, T)` waveforms.
#[derive(Clone, Debug)]
pub struct InterpreterOutput {
    pub h_d: Tensor,
    pub h_e: Tensor,
    pub fusion: Tensor,
    pub mask: Tensor,
    pub explanation: Tensor,
    pub complement: Tensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExplanationResult {
    pub input: Waveform,
    pub explanation: Waveform,
    pub complement: Waveform,
    pub probs_x: ClassProbabilities,
    pub probs_i: ClassProbabilities,
    pub probs_iout: ClassProbabilities,
    /// Magnitude STFT of the explanation.
    pub saliency: Spectrogram,
    pub predicted_class: usize,
}

#[derive(Debug)]
pub struct Interpreter {
    cfg: InterpreterConfig,
    params: ParamStore,
    /// Channels of the four classifier taps and the frequency extent of the
    /// shallowest one.
    tap_channels: [usize; NUM_TAPS],
    tap_freq: usize,
    classifier_hash: Option<String>,
}

impl Interpreter {
    /// Randomly initialized interpreter sized for `clf`, in `f32`.
    pub fn new(cfg: InterpreterConfig, clf: &ClassifierConfig, seed: u64) -> Result<Self> {
        Self::with_dtype(cfg, clf, seed, DType::F32)
    }

    pub fn with_dtype(
        cfg: InterpreterConfig,
        clf: &ClassifierConfig,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        cfg.validate()?;
        clf.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new(dtype, &Device::Cpu);
        let (l, k, u) = (cfg.kernel, cfg.latent, cfg.unet_channels);

        ps.add("encoder.weight", &[l, k], Init::Uniform(fan_in_bound(l)), &mut rng)?;
        ps.add("decoder.weight", &[k, l], Init::Uniform(fan_in_bound(k)), &mut rng)?;

        for (t, &c) in clf.widths.iter().enumerate() {
            nn::init_conv2d(&mut ps, &format!("unet.proj{t}"), c, u, (1, 1), &mut rng)?;
        }
        for t in 0..NUM_TAPS - 1 {
            nn::init_conv_transpose2d(&mut ps, &format!("unet.up{t}"), u, u, 4, &mut rng)?;
        }
        let tap_freq = clf.mel.n_mels / 2;
        ps.add(
            "unet.freq_weights",
            &[tap_freq],
            Init::Const(1.0 / tap_freq as f64),
            &mut rng,
        )?;
        for s in 0..cfg.unet_upsamples {
            nn::init_conv_transpose1d(&mut ps, &format!("unet.up1d{s}"), u, u, 4, &mut rng)?;
        }
        if cfg.zero_init_output {
            ps.add("unet.out.weight", &[k, u], Init::Zeros, &mut rng)?;
            ps.add("unet.out.bias", &[k], Init::Zeros, &mut rng)?;
        } else {
            nn::init_linear(&mut ps, "unet.out", u, k, &mut rng)?;
        }

        let m = &cfg.masknet;
        nn::init_layer_norm(&mut ps, "masknet.in_norm", k)?;
        nn::init_linear(&mut ps, "masknet.in", k, m.width, &mut rng)?;
        for b in 0..m.blocks {
            for path in ["intra", "inter"] {
                init_transformer_layer(&mut ps, &format!("masknet.block{b}.{path}"), m, &mut rng)?;
            }
        }
        nn::init_layer_norm(&mut ps, "masknet.out_norm", m.width)?;
        nn::init_linear(&mut ps, "masknet.out", m.width, k, &mut rng)?;

        Ok(Self {
            cfg,
            params: ps,
            tap_channels: clf.widths,
            tap_freq,
            classifier_hash: None,
        })
    }

    pub fn config(&self) -> &InterpreterConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn alpha(&self) -> f64 {
        self.cfg.alpha
    }

    /// Hash of the classifier this interpreter was trained against.
    pub fn classifier_hash(&self) -> Option<&str> {
        self.classifier_hash.as_deref()
    }

    pub fn bind_classifier(&mut self, clf: &Classifier) -> Result<()> {
        self.classifier_hash = Some(clf.parameter_hash()?);
        Ok(())
    }

    /// Copy in another precision.
    pub fn to_dtype(&self, dtype: DType) -> Result<Interpreter> {
        Ok(Interpreter {
            cfg: self.cfg.clone(),
            params: self.params.to_dtype(dtype)?,
            tap_channels: self.tap_channels,
            tap_freq: self.tap_freq,
            classifier_hash: self.classifier_hash.clone(),
        })
    }

    // ---- codec -----------------------------------------------------------

    /// `(B, T)` samples to `(B, T', K)` nonnegative latents.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = x.dims2()?;
        let frames = self.cfg.frames(t)?;
        let hop = self.cfg.stride();
        let chunks = x
            .narrow(1, 0, (frames + 1) * hop)?
            .reshape((b, frames + 1, hop))?;
        let framed = Tensor::cat(&[chunks.narrow(1, 0, frames)?, chunks.narrow(1, 1, frames)?], 2)?;
        let w = self.params.get("encoder.weight")?;
        let h = framed
            .reshape((b * frames, self.cfg.kernel))?
            .matmul(&w)?
            .reshape((b, frames, self.cfg.latent))?;
        Ok(h.relu()?)
    }

    /// Linear overlap-add decoder `(B, T', K) -> (B, len)`, trimmed or
    /// zero-padded at the tail.
    pub fn decode(&self, h: &Tensor, len: usize) -> Result<Tensor> {
        let (b, frames, k) = h.dims3()?;
        let hop = self.cfg.stride();
        let w = self.params.get("decoder.weight")?;
        let f = h.reshape((b * frames, k))?.matmul(&w)?.reshape((b, frames, 2 * hop))?;
        let head = f.narrow(2, 0, hop)?.pad_with_zeros(1, 0, 1)?;
        let tail = f.narrow(2, hop, hop)?.pad_with_zeros(1, 1, 0)?;
        let y = (head + tail)?.reshape((b, (frames + 1) * hop))?;
        let n = y.dim(1)?;
        Ok(if n >= len {
            y.narrow(1, 0, len)?
        } else {
            y.pad_with_zeros(1, 0, len - n)?
        })
    }

    pub fn td_encode(&self, wave: &Waveform) -> Result<LatentGrid> {
        let x = batch_tensor(&[wave.samples()], self.dtype(), &Device::Cpu)?;
        LatentGrid::from_tensor(&self.encode(&x)?, self.cfg.kernel)
    }

    // ---- UNet ------------------------------------------------------------

    /// Decode the four tapped maps into a `(B, frames, K)` grid.
    pub fn unet_decode(&self, h: &RepresentationSet, frames: usize) -> Result<Tensor> {
        let maps = h.maps();
        let shapes = h.shapes();
        for (s, &c) in shapes.iter().zip(&self.tap_channels) {
            if s.channels != c {
                return Err(Error::Shape(format!(
                    "representation has {} channels, interpreter expects {c}",
                    s.channels
                )));
            }
        }
        if shapes[0].freq != self.tap_freq {
            return Err(Error::Shape(format!(
                "shallowest map has {} frequency rows, interpreter expects {}",
                shapes[0].freq, self.tap_freq
            )));
        }
        let ps = &self.params;
        let mut y = nn::conv2d(ps, &format!("unet.proj{}", NUM_TAPS - 1), &maps[NUM_TAPS - 1], 0)?;
        for t in (0..NUM_TAPS - 1).rev() {
            y = nn::conv_transpose2d(ps, &format!("unet.up{t}"), &y, 1, 2)?.silu()?;
            y = fit_axis(&fit_axis(&y, 2, shapes[t].freq)?, 3, shapes[t].time)?;
            y = (y + nn::conv2d(ps, &format!("unet.proj{t}"), &maps[t], 0)?)?;
        }
        let w = ps.get("unet.freq_weights")?;
        let (b, u, f, _) = y.dims4()?;
        let mut z = y
            .broadcast_mul(&w.reshape((1, 1, f, 1))?)?
            .sum(2)?;
        for s in 0..self.cfg.unet_upsamples {
            z = nn::conv_transpose1d_x2(ps, &format!("unet.up1d{s}"), &z)?;
            if s + 1 < self.cfg.unet_upsamples {
                z = z.silu()?;
            }
        }
        let z = nn::linear(ps, "unet.out", &z.transpose(1, 2)?.contiguous()?)?;
        debug_assert_eq!(z.dim(0)?, b);
        debug_assert_eq!(u, self.cfg.unet_channels);
        let out = interpolate_time(&z, frames)?;
        assert_eq!(out.dims(), &[b, frames, self.cfg.latent], "UNet output shape");
        Ok(out)
    }

    // ---- mask ------------------------------------------------------------

    pub fn fuse(&self, h_d: &Tensor, h_e: &Tensor) -> Result<Tensor> {
        if h_d.dims() != h_e.dims() {
            return Err(Error::Shape(format!(
                "fusion of {:?} and {:?}",
                h_d.dims(),
                h_e.dims()
            )));
        }
        let a = self.cfg.alpha;
        Ok(((h_d * a)? + (h_e * (1.0 - a))?)?)
    }

    /// Dual-path transformer over a `(B, T', K)` grid, ReLU output.
    pub fn masknet(&self, fused: &Tensor) -> Result<Tensor> {
        let ps = &self.params;
        let m = &self.cfg.masknet;
        let (b, frames, _) = fused.dims3()?;
        let s = m.chunk;
        let n = frames.div_ceil(s);
        let x = nn::layer_norm(ps, "masknet.in_norm", fused)?;
        let x = nn::linear(ps, "masknet.in", &x)?;
        let mut x = x
            .pad_with_zeros(1, 0, n * s - frames)?
            .reshape((b, n, s, m.width))?;
        let dtype = self.dtype();
        let pe_intra = nn::positional_encoding(s, m.width, dtype, &Device::Cpu)?;
        let pe_inter = nn::positional_encoding(n, m.width, dtype, &Device::Cpu)?;
        for blk in 0..m.blocks {
            let intra = x.reshape((b * n, s, m.width))?.broadcast_add(&pe_intra)?;
            let intra = transformer_layer(ps, &format!("masknet.block{blk}.intra"), &intra, m.heads)?;
            x = intra.reshape((b, n, s, m.width))?;
            let inter = x
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b * s, n, m.width))?
                .broadcast_add(&pe_inter)?;
            let inter = transformer_layer(ps, &format!("masknet.block{blk}.inter"), &inter, m.heads)?;
            x = inter
                .reshape((b, s, n, m.width))?
                .transpose(1, 2)?
                .contiguous()?;
        }
        let x = x.reshape((b, n * s, m.width))?.narrow(1, 0, frames)?;
        let x = nn::layer_norm(ps, "masknet.out_norm", &x)?;
        Ok(nn::linear(ps, "masknet.out", &x)?.relu()?)
    }

    pub fn estimate_mask(&self, h_d: &Tensor, h_e: &Tensor) -> Result<Tensor> {
        self.masknet(&self.fuse(h_d, h_e)?)
    }

    /// `(i, i_out)` from a mask and encoder grid, each `(B, len)`.
    pub fn synthesize(&self, mask: &Tensor, h_e: &Tensor, len: usize) -> Result<(Tensor, Tensor)> {
        if mask.dims() != h_e.dims() {
            return Err(Error::Shape(format!(
                "mask {:?} vs encoder grid {:?}",
                mask.dims(),
                h_e.dims()
            )));
        }
        let i = self.decode(&(mask * h_e)?, len)?;
        let i_out = self.decode(&(mask.ones_like()? - mask)?.mul(h_e)?, len)?;
        Ok((i, i_out))
    }

    /// Full pass for a `(B, T)` batch and the classifier's maps of it.
    pub fn forward(&self, x: &Tensor, h: &RepresentationSet) -> Result<InterpreterOutput> {
        let len = x.dim(1)?;
        let h_e = self.encode(x)?;
        let h_d = self.unet_decode(h, h_e.dim(1)?)?;
        let fusion = self.fuse(&h_d, &h_e)?;
        let mask = self.masknet(&fusion)?;
        let (explanation, complement) = self.synthesize(&mask, &h_e, len)?;
        Ok(InterpreterOutput {
            h_d,
            h_e,
            fusion,
            mask,
            explanation,
            complement,
        })
    }

    // ---- checkpoints -----------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.params.to_bytes()?;
        let sidecar = InterpreterSidecar {
            config: self.cfg.clone(),
            tap_channels: self.tap_channels,
            tap_freq: self.tap_freq,
            classifier_hash: self.classifier_hash.clone().ok_or_else(|| {
                Error::InvalidConfig("interpreter is not bound to a classifier".into())
            })?,
            weights_sha256: nn::sha256_hex(&bytes),
        };
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        std::fs::write(&side, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    /// Load a checkpoint and check it was trained against `clf`.
    pub fn load(path: &Path, clf: &Classifier) -> Result<Self> {
        let side = sidecar_path(path);
        for p in [path, side.as_path()] {
            if !p.exists() {
                return Err(Error::MissingFile(p.to_path_buf()));
            }
        }
        let sidecar: InterpreterSidecar =
            serde_json::from_slice(&std::fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
        let found = clf.parameter_hash()?;
        if sidecar.classifier_hash != found {
            return Err(Error::HashMismatch {
                expected: sidecar.classifier_hash,
                found,
            });
        }
        if sidecar.tap_channels != clf.config().widths || sidecar.tap_freq != clf.config().mel.n_mels / 2 {
            return Err(Error::Shape("interpreter was built for another classifier layout".into()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = nn::sha256_hex(&bytes);
        if digest != sidecar.weights_sha256 {
            return Err(Error::HashMismatch {
                expected: sidecar.weights_sha256,
                found: digest,
            });
        }
        let mut itp = Interpreter::new(sidecar.config, clf.config(), 0)?;
        itp.params.load_bytes(&bytes)?;
        itp.classifier_hash = Some(sidecar.classifier_hash);
        Ok(itp)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpreterSidecar {
    pub config: InterpreterConfig,
    pub tap_channels: [usize; NUM_TAPS],
    pub tap_freq: usize,
    pub classifier_hash: String,
    pub weights_sha256: String,
}

/// Crop or zero-pad `x` along `axis` to `len`.
fn fit_axis(x: &Tensor, axis: usize, len: usize) -> Result<Tensor> {
    let n = x.dim(axis)?;
    Ok(if n >= len {
        x.narrow(axis, 0, len)?
    } else {
        x.pad_with_zeros(axis, 0, len - n)?
    })
}

/// Linear interpolation of `(B, S, K)` along time to `(B, frames, K)`, end
/// points aligned.
fn interpolate_time(z: &Tensor, frames: usize) -> Result<Tensor> {
    let src = z.dim(1)?;
    let mut lo = Vec::with_capacity(frames);
    let mut hi = Vec::with_capacity(frames);
    let mut frac = Vec::with_capacity(frames);
    for j in 0..frames {
        let pos = if frames > 1 {
            j as f64 * (src - 1) as f64 / (frames - 1) as f64
        } else {
            0.0
        };
        let i0 = (pos.floor() as usize).min(src - 1);
        lo.push(i0 as u32);
        hi.push((i0 + 1).min(src - 1) as u32);
        frac.push(pos - i0 as f64);
    }
    let device = z.device();
    let lo = Tensor::from_vec(lo, frames, device)?;
    let hi = Tensor::from_vec(hi, frames, device)?;
    let w = Tensor::from_vec(frac, (1, frames, 1), device)?.to_dtype(z.dtype())?;
    let a = z.index_select(&lo, 1)?;
    let b = z.index_select(&hi, 1)?;
    Ok((a.broadcast_mul(&(w.ones_like()? - &w)?)? + b.broadcast_mul(&w)?)?)
}

fn init_transformer_layer<R: rand::Rng + ?Sized>(
    ps: &mut ParamStore,
    prefix: &str,
    m: &MaskNetConfig,
    rng: &mut R,
) -> Result<()> {
    nn::init_layer_norm(ps, &format!("{prefix}.norm1"), m.width)?;
    nn::init_linear(ps, &format!("{prefix}.qkv"), m.width, 3 * m.width, rng)?;
    nn::init_linear(ps, &format!("{prefix}.attn_out"), m.width, m.width, rng)?;
    nn::init_layer_norm(ps, &format!("{prefix}.norm2"), m.width)?;
    nn::init_linear(ps, &format!("{prefix}.ffn1"), m.width, m.ffn, rng)?;
    nn::init_linear(ps, &format!("{prefix}.ffn2"), m.ffn, m.width, rng)
}

/// Pre-norm transformer layer on `(N, S, W)`.
fn transformer_layer(ps: &ParamStore, prefix: &str, x: &Tensor, heads: usize) -> Result<Tensor> {
    let (n, s, w) = x.dims3()?;
    let d = w / heads;
    let h = nn::layer_norm(ps, &format!("{prefix}.norm1"), x)?;
    let qkv = nn::linear(ps, &format!("{prefix}.qkv"), &h)?;
    let split = |i: usize| -> Result<Tensor> {
        Ok(qkv
            .narrow(D::Minus1, i * w, w)?
            .reshape((n, s, heads, d))?
            .transpose(1, 2)?
            .contiguous()?)
    };
    let (q, k, v) = (split(0)?, split(1)?, split(2)?);
    let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (d as f64).sqrt())?;
    let att = nn::softmax_last(&scores)?.matmul(&v)?;
    let att = att.transpose(1, 2)?.contiguous()?.reshape((n, s, w))?;
    let x = (x + nn::linear(ps, &format!("{prefix}.attn_out"), &att)?)?;
    let h = nn::layer_norm(ps, &format!("{prefix}.norm2"), &x)?;
    let h = nn::linear(ps, &format!("{prefix}.ffn1"), &h)?.gelu()?;
    Ok((&x + nn::linear(ps, &format!("{prefix}.ffn2"), &h)?)?)
}

/// STFT used for explanation saliency maps.
pub fn saliency_stft() -> StftConfig {
    StftConfig::default()
}

/// Explain equal-length waveforms in one batch.
pub fn explain_batch(clf: &Classifier, itp: &Interpreter, waves: &[&Waveform]) -> Result<Vec<ExplanationResult>> {
    if waves.is_empty() {
        return Ok(Vec::new());
    }
    for w in waves {
        clf.check_input(w)?;
    }
    let rows: Vec<&[f64]> = waves.iter().map(|w| w.samples()).collect();
    let x = batch_tensor(&rows, itp.dtype(), &Device::Cpu)?;
    let xc = x.to_dtype(clf.dtype())?;
    let (logits_x, taps) = clf.forward(&xc, false)?;
    let h = RepresentationSet::new(
        taps.iter()
            .map(|t| t.to_dtype(itp.dtype()))
            .collect::<candle_core::Result<Vec<_>>>()?,
    )?;
    let out = itp.forward(&x, &h)?;
    let both = Tensor::cat(&[&out.explanation, &out.complement], 0)?.to_dtype(clf.dtype())?;
    let logits_both = clf.logits(&both)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let logits_x = logits_x.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    let b = waves.len();
    let sr = waves[0].sample_rate();
    let mut results = Vec::with_capacity(b);
    for (j, wave) in waves.iter().enumerate() {
        let explanation = Waveform::new(tensor_row(&out.explanation, j)?, sr)?;
        let complement = Waveform::new(tensor_row(&out.complement, j)?, sr)?;
        let probs_x = ClassProbabilities::from_logits(logits_x[j].clone());
        let saliency = stft(&explanation, &saliency_stft())?.magnitude();
        results.push(ExplanationResult {
            input: (*wave).clone(),
            predicted_class: probs_x.argmax(),
            probs_x,
            probs_i: ClassProbabilities::from_logits(logits_both[j].clone()),
            probs_iout: ClassProbabilities::from_logits(logits_both[b + j].clone()),
            explanation,
            complement,
            saliency,
        });
    }
    Ok(results)
}

pub fn explain(clf: &Classifier, itp: &Interpreter, wave: &Waveform) -> Result<ExplanationResult> {
    Ok(explain_batch(clf, itp, &[wave])?.remove(0))
}
