//! Signal-processing kernels shared by the classifier, interpreter, loss and metrics.
//!
//! Everything here works on `f64` samples and is pure. The differentiable
//! counterparts used inside training graphs live in [`tensor`].

use std::f64::consts::PI;

use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub mod tensor;
pub mod wav;

/// Floor added to mel energies before the log.
pub const LOG_MEL_FLOOR: f64 = 1e-10;

/// Mono audio signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidWaveform("empty signal".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(idx) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidWaveform(format!(
                "non-finite sample at index {idx}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean-square power.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Truncate or zero-pad (at the tail) to exactly `len` samples.
    pub fn fit_to_length(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Scale down so the peak is at most 1. Returns the applied gain.
    pub fn peak_normalize(&mut self) -> f64 {
        let peak = self.peak();
        if peak > 1.0 {
            let gain = 1.0 / peak;
            self.samples.iter_mut().for_each(|s| *s *= gain);
            gain
        } else {
            1.0
        }
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|s| s * s).sum::<f64>() / x.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann.
    #[default]
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }
}

/// Frame geometry for the short-time Fourier transform. Frames are taken only
/// where the window fully covers the signal (no padding).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_length: 512,
            hop: 128,
            fft_size: 512,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_length || self.window_length > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "stft requires 0 < hop <= window_length <= fft_size, got hop={} window={} fft={}",
                self.hop, self.window_length, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> Result<usize> {
        if len < self.window_length {
            return Err(Error::SignalTooShort {
                len,
                needed: self.window_length,
            });
        }
        Ok((len - self.window_length) / self.hop + 1)
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        self.window.coefficients(self.window_length)
    }

    /// Center frequency in Hz of each one-sided bin.
    pub fn bin_frequencies(&self, sample_rate: u32) -> Vec<f64> {
        (0..self.bins())
            .map(|k| k as f64 * sample_rate as f64 / self.fft_size as f64)
            .collect()
    }
}

/// One-sided complex STFT, stored bins × frames (row-major by bin).
#[derive(Clone, Debug)]
pub struct ComplexSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub config: StftConfig,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }

    pub fn magnitude(&self) -> Spectrogram {
        Spectrogram {
            rows: self.bins,
            frames: self.frames,
            data: self.data.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn power(&self) -> Spectrogram {
        Spectrogram {
            rows: self.bins,
            frames: self.frames,
            data: self.data.iter().map(|c| c.norm_sqr()).collect(),
        }
    }

    pub fn map_with_mask(&self, mask: &Spectrogram) -> Result<ComplexSpectrogram> {
        if mask.rows != self.bins || mask.frames != self.frames {
            return Err(Error::Shape(format!(
                "mask {}x{} vs spectrogram {}x{}",
                mask.rows, mask.frames, self.bins, self.frames
            )));
        }
        Ok(ComplexSpectrogram {
            data: self
                .data
                .iter()
                .zip(&mask.data)
                .map(|(c, m)| c * m)
                .collect(),
            ..self.clone()
        })
    }
}

/// Nonnegative real time-frequency map, stored rows × frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrogram {
    pub rows: usize,
    pub frames: usize,
    data: Vec<f64>,
}

impl Spectrogram {
    pub fn new(rows: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * frames {
            return Err(Error::Shape(format!(
                "spectrogram data has {} entries, expected {rows}x{frames}",
                data.len()
            )));
        }
        Ok(Self { rows, frames, data })
    }

    pub fn at(&self, row: usize, frame: usize) -> f64 {
        self.data[row * self.frames + frame]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.frames..(row + 1) * self.frames]
    }
}

pub fn stft(wave: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let frames = cfg.num_frames(wave.len())?;
    let bins = cfg.bins();
    let window = cfg.window_coefficients();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_size);
    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for f in 0..frames {
        let start = f * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (n, w) in window.iter().enumerate() {
            buf[n] = Complex64::new(wave.samples[start + n] * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[k * frames + f] = buf[k];
        }
    }
    Ok(ComplexSpectrogram {
        bins,
        frames,
        config: *cfg,
        data,
    })
}

/// Weighted overlap-add inverse of [`stft`]. Samples not covered by any
/// window (zero window energy) come out as zero.
pub fn istft(spec: &ComplexSpectrogram, length: usize, sample_rate: u32) -> Result<Waveform> {
    let cfg = spec.config;
    let window = cfg.window_coefficients();
    let n_fft = cfg.fft_size;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let needed = (spec.frames - 1) * cfg.hop + cfg.window_length;
    let mut out = vec![0.0; needed.max(length)];
    let mut norm = vec![0.0; out.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for f in 0..spec.frames {
        for k in 0..spec.bins {
            buf[k] = spec.at(k, f);
        }
        for k in spec.bins..n_fft {
            buf[k] = buf[n_fft - k].conj();
        }
        ifft.process(&mut buf);
        let start = f * cfg.hop;
        for (n, w) in window.iter().enumerate() {
            out[start + n] += buf[n].re / n_fft as f64 * w;
            norm[start + n] += w * w;
        }
    }
    for (o, z) in out.iter_mut().zip(&norm) {
        *o = if *z > 1e-8 { *o / z } else { 0.0 };
    }
    out.truncate(length);
    Waveform::new(out, sample_rate)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MelConfig {
    pub stft: StftConfig,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper edge; defaults to Nyquist.
    pub fmax: Option<f64>,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig {
                window_length: 512,
                hop: 160,
                fft_size: 512,
                window: WindowKind::Hann,
            },
            n_mels: 40,
            fmin: 50.0,
            fmax: None,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        self.stft.validate()?;
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("mel band count must be >= 1".into()));
        }
        if self.n_mels > self.stft.bins() {
            return Err(Error::InvalidConfig(format!(
                "{} mel bands exceed {} fft bins",
                self.n_mels,
                self.stft.bins()
            )));
        }
        let fmax = self.fmax_hz(sample_rate);
        if !(self.fmin >= 0.0 && self.fmin < fmax) {
            return Err(Error::InvalidConfig(format!(
                "mel range [{}, {fmax}] is empty",
                self.fmin
            )));
        }
        Ok(())
    }

    pub fn fmax_hz(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0)
    }

    /// Frequency (Hz) of each triangle's peak.
    pub fn center_frequencies(&self, sample_rate: u32) -> Vec<f64> {
        let points = self.mel_points(sample_rate);
        points[1..=self.n_mels].iter().map(|m| mel_to_hz(*m)).collect()
    }

    fn mel_points(&self, sample_rate: u32) -> Vec<f64> {
        let lo = hz_to_mel(self.fmin);
        let hi = hz_to_mel(self.fmax_hz(sample_rate));
        (0..self.n_mels + 2)
            .map(|i| lo + (hi - lo) * i as f64 / (self.n_mels + 1) as f64)
            .collect()
    }
}

/// HTK-spaced triangular filterbank, peak-normalized, as `n_mels` rows over
/// the one-sided FFT bins. Triangles are linear in mel and each edge sits on
/// the neighbouring centre, so the rows sum to one between the first and last
/// centre.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Result<Vec<Vec<f64>>> {
    cfg.validate(sample_rate)?;
    let points = cfg.mel_points(sample_rate);
    let freqs = cfg.stft.bin_frequencies(sample_rate);
    Ok((0..cfg.n_mels)
        .map(|m| {
            let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
            freqs
                .iter()
                .map(|&f| {
                    let x = hz_to_mel(f);
                    if x <= l || x >= r {
                        0.0
                    } else if x <= c {
                        (x - l) / (c - l)
                    } else {
                        (r - x) / (r - c)
                    }
                })
                .collect()
        })
        .collect())
}

/// `ln(mel energy + LOG_MEL_FLOOR)`, shape mel bands × frames.
pub fn mel_spectrogram(wave: &Waveform, cfg: &MelConfig) -> Result<Spectrogram> {
    let fb = mel_filterbank(cfg, wave.sample_rate())?;
    let power = stft(wave, &cfg.stft)?.power();
    let mut data = Vec::with_capacity(cfg.n_mels * power.frames);
    for row in &fb {
        for f in 0..power.frames {
            let e: f64 = row
                .iter()
                .enumerate()
                .map(|(k, w)| w * power.at(k, f))
                .sum();
            data.push((e + LOG_MEL_FLOOR).ln());
        }
    }
    Spectrogram::new(cfg.n_mels, power.frames, data)
}

/// Sum of STFT magnitudes divided by bins × frames.
pub fn spectral_l1(wave: &Waveform, cfg: &StftConfig) -> Result<f64> {
    let mag = stft(wave, cfg)?.magnitude();
    Ok(mag.values().iter().sum::<f64>() / (mag.rows * mag.frames) as f64)
}

/// `10 log10(P_signal / P_noise)`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_square(signal) / mean_square(noise)).log10()
}

/// Result of [`mix_at_snr`]. `signal + noise == mixture` sample-for-sample;
/// both components already carry `output_gain`.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub mixture: Waveform,
    pub signal: Vec<f64>,
    pub noise: Vec<f64>,
    /// Gain applied to the (tiled) noise before summation.
    pub noise_gain: f64,
    /// Peak-renormalization gain applied to the sum (1 when no clipping risk).
    pub output_gain: f64,
    /// Circular offset into the noise at which tiling started.
    pub noise_offset: usize,
}

/// Mix `noise` into `signal` at `snr_db`. The noise is tiled circularly to the
/// signal length starting at a random offset.
pub fn mix_at_snr<R: Rng + ?Sized>(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<Mixture> {
    let offset = rng.gen_range(0..noise.len());
    mix_at_snr_with_offset(signal, noise, snr_db, offset)
}

pub fn mix_at_snr_with_offset(
    signal: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    offset: usize,
) -> Result<Mixture> {
    if signal.sample_rate() != noise.sample_rate() {
        return Err(Error::SampleRateMismatch {
            expected: signal.sample_rate(),
            found: noise.sample_rate(),
        });
    }
    let tiled: Vec<f64> = (0..signal.len())
        .map(|n| noise.samples[(offset + n) % noise.len()])
        .collect();
    let p_noise = mean_square(&tiled);
    if p_noise <= 0.0 {
        return Err(Error::UndefinedSnr);
    }
    let p_signal = signal.power();
    let noise_gain = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let sum: Vec<f64> = signal
        .samples
        .iter()
        .zip(&tiled)
        .map(|(s, n)| s + noise_gain * n)
        .collect();
    let peak = sum.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let output_gain = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let scaled_signal: Vec<f64> = signal.samples.iter().map(|s| s * output_gain).collect();
    let scaled_noise: Vec<f64> = tiled
        .iter()
        .map(|n| n * noise_gain * output_gain)
        .collect();
    let mixture: Vec<f64> = sum.iter().map(|s| s * output_gain).collect();
    Ok(Mixture {
        mixture: Waveform::new(mixture, signal.sample_rate())?,
        signal: scaled_signal,
        noise: scaled_noise,
        noise_gain,
        output_gain,
        noise_offset: offset % noise.len(),
    })
}
