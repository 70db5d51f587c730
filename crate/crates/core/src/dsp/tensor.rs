//! Differentiable STFT, log-mel and spectral L1 on batched `(B, T)` tensors.
//!
//! The transform is a framing step followed by a matmul against a windowed DFT
//! basis, so gradients flow back to the samples through ordinary tensor ops.

use candle_core::{DType, Device, Tensor};

use super::{mel_filterbank, MelConfig, StftConfig, LOG_MEL_FLOOR};
use crate::{Error, Result};

/// Smoothing inside the magnitude square root; keeps the gradient finite at
/// zero bins while shifting each magnitude by at most 1e-10.
const MAG_DELTA: f64 = 1e-20;

#[derive(Clone, Debug)]
pub struct TensorStft {
    cfg: StftConfig,
    /// `(window_length, 2 * bins)`: windowed cosines then sines.
    basis: Tensor,
}

impl TensorStft {
    pub fn new(cfg: &StftConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let bins = cfg.bins();
        let win = cfg.window_coefficients();
        let n_fft = cfg.fft_size as f64;
        let mut data = vec![0f64; cfg.window_length * 2 * bins];
        for (n, w) in win.iter().enumerate() {
            for k in 0..bins {
                let ph = 2.0 * std::f64::consts::PI * ((k * n) % cfg.fft_size) as f64 / n_fft;
                data[n * 2 * bins + k] = w * ph.cos();
                data[n * 2 * bins + bins + k] = -w * ph.sin();
            }
        }
        let basis = Tensor::from_vec(data, (cfg.window_length, 2 * bins), device)?.to_dtype(dtype)?;
        Ok(Self { cfg: *cfg, basis })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// `(B, T)` -> `(B, frames, window_length)`.
    fn frames(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t) = x.dims2()?;
        let n_frames = self.cfg.num_frames(t)?;
        let (win, hop) = (self.cfg.window_length, self.cfg.hop);
        if win % hop == 0 {
            let r = win / hop;
            let chunks = x
                .narrow(1, 0, (n_frames + r - 1) * hop)?
                .reshape((b, n_frames + r - 1, hop))?;
            let parts = (0..r)
                .map(|j| chunks.narrow(1, j, n_frames))
                .collect::<candle_core::Result<Vec<_>>>()?;
            Ok(Tensor::cat(&parts, 2)?)
        } else {
            let idx: Vec<u32> = (0..n_frames)
                .flat_map(|f| (0..win).map(move |n| (f * hop + n) as u32))
                .collect();
            let idx = Tensor::from_vec(idx, n_frames * win, x.device())?;
            Ok(x.index_select(&idx, 1)?.reshape((b, n_frames, win))?)
        }
    }

    /// `(B, frames, 2 * bins)` real and imaginary parts.
    pub fn re_im(&self, x: &Tensor) -> Result<Tensor> {
        let frames = self.frames(x)?;
        let (b, f, w) = frames.dims3()?;
        let out = frames.reshape((b * f, w))?.matmul(&self.basis)?;
        Ok(out.reshape((b, f, 2 * self.cfg.bins()))?)
    }

    /// `(B, frames, bins)` power spectrum.
    pub fn power(&self, x: &Tensor) -> Result<Tensor> {
        let bins = self.cfg.bins();
        let z = self.re_im(x)?;
        let re = z.narrow(2, 0, bins)?;
        let im = z.narrow(2, bins, bins)?;
        Ok((re.sqr()? + im.sqr()?)?)
    }

    /// `(B, frames, bins)` magnitude spectrum.
    pub fn magnitude(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.power(x)?;
        Ok(((p + MAG_DELTA)?.sqrt()? - MAG_DELTA.sqrt())?)
    }

    /// Mean magnitude per batch item, `(B,)`.
    pub fn spectral_l1(&self, x: &Tensor) -> Result<Tensor> {
        let m = self.magnitude(x)?;
        let (b, f, k) = m.dims3()?;
        Ok(m.reshape((b, f * k))?.mean(1)?)
    }
}

#[derive(Clone, Debug)]
pub struct TensorLogMel {
    stft: TensorStft,
    /// `(bins, n_mels)`.
    filterbank_t: Tensor,
    n_mels: usize,
}

impl TensorLogMel {
    pub fn new(cfg: &MelConfig, sample_rate: u32, dtype: DType, device: &Device) -> Result<Self> {
        let fb = mel_filterbank(cfg, sample_rate)?;
        let bins = cfg.stft.bins();
        let mut data = vec![0f64; bins * cfg.n_mels];
        for (m, row) in fb.iter().enumerate() {
            for (k, w) in row.iter().enumerate() {
                data[k * cfg.n_mels + m] = *w;
            }
        }
        let filterbank_t = Tensor::from_vec(data, (bins, cfg.n_mels), device)?.to_dtype(dtype)?;
        Ok(Self {
            stft: TensorStft::new(&cfg.stft, dtype, device)?,
            filterbank_t,
            n_mels: cfg.n_mels,
        })
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn num_frames(&self, len: usize) -> Result<usize> {
        self.stft.config().num_frames(len)
    }

    /// `(B, T)` -> `(B, n_mels, frames)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let p = self.stft.power(x)?;
        let (b, f, k) = p.dims3()?;
        let mel = p.reshape((b * f, k))?.matmul(&self.filterbank_t)?;
        let mel = (mel + LOG_MEL_FLOOR)?.log()?;
        Ok(mel.reshape((b, f, self.n_mels))?.transpose(1, 2)?.contiguous()?)
    }
}

/// Stack equal-length sample vectors into a `(B, T)` tensor.
pub fn batch_tensor(rows: &[&[f64]], dtype: DType, device: &Device) -> Result<Tensor> {
    let t = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != t) {
        return Err(Error::Shape("batch rows differ in length".into()));
    }
    let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Tensor::from_vec(data, (rows.len(), t), device)?.to_dtype(dtype)?)
}

/// Row `i` of a `(B, T)` tensor as `f64` samples.
pub fn tensor_row(x: &Tensor, i: usize) -> Result<Vec<f64>> {
    Ok(x.get(i)?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}
