//! Desk-scale synthetic sound classes.
//!
//! Each class owns one frequency band (mel-spaced between 100 Hz and 90% of
//! Nyquist) and one of five spectro-temporal prototypes. Class `k` uses band
//! `k` and prototype `k mod 5`. Every event is built so that most of its energy
//! sits inside the band, which lets tests check where a faithful explanation
//! has to put its energy.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Band edges must span at least this many bins of a 512-point FFT.
const MIN_BAND_BINS: f64 = 8.0;
const REFERENCE_FFT: f64 = 512.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prototype {
    ToneBurst,
    Chirp,
    ModulatedNoise,
    HarmonicStack,
    PipTrain,
}

impl Prototype {
    pub const ALL: [Prototype; 5] = [
        Prototype::ToneBurst,
        Prototype::Chirp,
        Prototype::ModulatedNoise,
        Prototype::HarmonicStack,
        Prototype::PipTrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Prototype::ToneBurst => "tone-burst",
            Prototype::Chirp => "chirp",
            Prototype::ModulatedNoise => "modulated-noise",
            Prototype::HarmonicStack => "harmonic-stack",
            Prototype::PipTrain => "pip-train",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBand {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub prototype: Prototype,
}

impl ClassBand {
    pub fn width(&self) -> f64 {
        self.hi_hz - self.lo_hz
    }

    pub fn contains(&self, hz: f64) -> bool {
        hz >= self.lo_hz && hz <= self.hi_hz
    }

    /// Band shrunk by 15% of its width on each side; events are placed here so
    /// window leakage stays inside the full band.
    fn inner(&self) -> (f64, f64) {
        let m = 0.15 * self.width();
        (self.lo_hz + m, self.hi_hz - m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLayout {
    pub sample_rate: u32,
    pub classes: Vec<ClassBand>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl SyntheticLayout {
    pub fn new(num_classes: usize, sample_rate: u32) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let lo = hz_to_mel(100.0);
        let hi = hz_to_mel(0.45 * sample_rate as f64);
        if hi <= lo {
            return Err(Error::InfeasibleLayout(format!(
                "sample rate {sample_rate} Hz leaves no usable band"
            )));
        }
        let edges: Vec<f64> = (0..=num_classes)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / num_classes as f64))
            .collect();
        let min_width = MIN_BAND_BINS * sample_rate as f64 / REFERENCE_FFT;
        let narrowest = edges[1] - edges[0];
        if narrowest < min_width {
            return Err(Error::InfeasibleLayout(format!(
                "{num_classes} classes at {sample_rate} Hz give a {narrowest:.1} Hz band, \
                 need at least {min_width:.1} Hz"
            )));
        }
        let classes = (0..num_classes)
            .map(|k| ClassBand {
                lo_hz: edges[k],
                hi_hz: edges[k + 1],
                prototype: Prototype::ALL[k % Prototype::ALL.len()],
            })
            .collect();
        Ok(Self {
            sample_rate,
            classes,
        })
    }

    pub fn class_name(&self, class_id: usize) -> String {
        let b = &self.classes[class_id];
        format!(
            "c{class_id}-{}-{:.0}-{:.0}hz",
            b.prototype.name(),
            b.lo_hz,
            b.hi_hz
        )
    }

    /// One randomized event of class `class_id`, `len` samples long.
    pub fn render<R: Rng + ?Sized>(&self, class_id: usize, len: usize, rng: &mut R) -> Vec<f64> {
        let band = &self.classes[class_id];
        let sr = self.sample_rate as f64;
        let (ilo, ihi) = band.inner();
        let mut x = vec![0.0; len];
        match band.prototype {
            Prototype::ToneBurst => {
                let f = rng.gen_range(ilo..ihi);
                let (start, dur) = placement(len, 0.25, 0.5, rng);
                let phase = rng.gen_range(0.0..2.0 * PI);
                for n in 0..dur {
                    let t = n as f64 / sr;
                    x[start + n] = hann_env(n, dur) * (2.0 * PI * f * t + phase).sin();
                }
            }
            Prototype::Chirp => {
                let iw = ihi - ilo;
                let (mut f0, mut f1) = (
                    ilo + rng.gen_range(0.0..0.2) * iw,
                    ihi - rng.gen_range(0.0..0.2) * iw,
                );
                if rng.gen_bool(0.5) {
                    std::mem::swap(&mut f0, &mut f1);
                }
                let (start, dur) = placement(len, 0.5, 0.8, rng);
                let d = dur as f64 / sr;
                for n in 0..dur {
                    let t = n as f64 / sr;
                    let ph = 2.0 * PI * (f0 * t + 0.5 * (f1 - f0) / d * t * t);
                    x[start + n] = tukey_env(n, dur, 0.1) * ph.sin();
                }
            }
            Prototype::ModulatedNoise => {
                let (start, dur) = placement(len, 0.6, 0.9, rng);
                let noise = bandpass_noise(dur, ilo, ihi, sr, rng);
                let peak = noise.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
                let rate = rng.gen_range(4.0..8.0);
                let phase = rng.gen_range(0.0..2.0 * PI);
                for n in 0..dur {
                    let t = n as f64 / sr;
                    let am = (1.0 + 0.8 * (2.0 * PI * rate * t + phase).sin()) / 1.8;
                    x[start + n] = tukey_env(n, dur, 0.1) * am * noise[n] / peak;
                }
            }
            Prototype::HarmonicStack => {
                let f0 = band.width() / rng.gen_range(3.5..4.5);
                let first = (ilo / f0).ceil() as usize;
                let last = ((ihi / f0).floor() as usize).max(first);
                let (start, dur) = placement(len, 0.4, 0.7, rng);
                let partials: Vec<(f64, f64, f64)> = (first..=last)
                    .enumerate()
                    .map(|(j, h)| {
                        (
                            h as f64 * f0,
                            1.0 / ((j + 1) as f64).sqrt(),
                            rng.gen_range(0.0..2.0 * PI),
                        )
                    })
                    .collect();
                let norm: f64 = partials.iter().map(|p| p.1).sum();
                for n in 0..dur {
                    let t = n as f64 / sr;
                    let s: f64 = partials
                        .iter()
                        .map(|(f, a, ph)| a * (2.0 * PI * f * t + ph).sin())
                        .sum();
                    x[start + n] = tukey_env(n, dur, 0.2) * s / norm;
                }
            }
            Prototype::PipTrain => {
                let f = 0.5 * (ilo + ihi);
                let pip = (0.04 * sr) as usize;
                let period = (rng.gen_range(0.08..0.15) * sr) as usize;
                let mut start = rng.gen_range(0..period.max(1));
                while start + pip <= len {
                    for n in 0..pip {
                        let t = n as f64 / sr;
                        x[start + n] += hann_env(n, pip) * (2.0 * PI * f * t).sin();
                    }
                    start += period;
                }
            }
        }
        x
    }
}

/// Random `(start, duration)` with duration a fraction in `[lo, hi)` of `len`.
fn placement<R: Rng + ?Sized>(len: usize, lo: f64, hi: f64, rng: &mut R) -> (usize, usize) {
    let dur = ((rng.gen_range(lo..hi) * len as f64) as usize).clamp(1, len);
    let start = rng.gen_range(0..=len - dur);
    (start, dur)
}

fn hann_env(n: usize, len: usize) -> f64 {
    0.5 - 0.5 * (2.0 * PI * n as f64 / len.max(2) as f64).cos()
}

fn tukey_env(n: usize, len: usize, taper: f64) -> f64 {
    let edge = ((taper * len as f64) as usize).max(1);
    if n < edge {
        0.5 - 0.5 * (PI * n as f64 / edge as f64).cos()
    } else if n >= len - edge {
        0.5 - 0.5 * (PI * (len - 1 - n) as f64 / edge as f64).cos()
    } else {
        1.0
    }
}

pub(crate) fn gaussian_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Shape white Gaussian noise in the frequency domain by `gain(hz)`.
pub(crate) fn shaped_noise<R: Rng + ?Sized>(
    len: usize,
    sample_rate: f64,
    rng: &mut R,
    gain: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = gaussian_noise(len, rng)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let kk = if k <= len / 2 { k } else { len - k };
        *c *= gain(kk as f64 * sample_rate / len as f64);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

fn bandpass_noise<R: Rng + ?Sized>(len: usize, lo: f64, hi: f64, sr: f64, rng: &mut R) -> Vec<f64> {
    shaped_noise(len, sr, rng, |f| if f >= lo && f <= hi { 1.0 } else { 0.0 })
}

/// Speech stand-in: noise through four formant-like resonances with 4 Hz
/// syllabic amplitude modulation.
pub fn speech_surrogate<R: Rng + ?Sized>(len: usize, sample_rate: u32, rng: &mut R) -> Vec<f64> {
    let sr = sample_rate as f64;
    let formants = [(500.0, 80.0), (1500.0, 120.0), (2500.0, 160.0), (3500.0, 200.0)];
    let shaped = shaped_noise(len, sr, rng, |f| {
        formants
            .iter()
            .filter(|(c, _)| *c < sr / 2.0)
            .map(|(c, bw)| (-0.5 * ((f - c) / bw).powi(2)).exp())
            .sum()
    });
    let phase = rng.gen_range(0.0..2.0 * PI);
    shaped
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let t = n as f64 / sr;
            v * 0.5 * (1.0 + (2.0 * PI * 4.0 * t + phase).sin())
        })
        .collect()
}
