//! Mono WAV I/O. Reads 16-bit PCM and 32-bit float; multichannel input is
//! downmixed by channel mean.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let reader = WavReader::open(path)?;
    decode(reader)
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    decode(WavReader::new(Cursor::new(bytes))?)
}

fn decode<R: std::io::Read>(reader: WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::InvalidWaveform(format!(
                "unsupported wav encoding: {fmt:?} {bits}-bit"
            )))
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

pub fn encode_wav(wave: &Waveform, encoding: WavEncoding) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels: 1,
            sample_rate: wave.sample_rate(),
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels: 1,
            sample_rate: wave.sample_rate(),
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    {
        let mut writer = WavWriter::new(&mut buf, spec)?;
        for s in wave.samples() {
            match encoding {
                WavEncoding::Pcm16 => {
                    writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?
                }
                WavEncoding::Float32 => writer.write_sample(*s as f32)?,
            }
        }
        writer.finalize()?;
    }
    Ok(buf.into_inner())
}

pub fn write_wav(path: &Path, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let bytes = encode_wav(wave, encoding)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
