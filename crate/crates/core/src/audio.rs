//! Mono WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

use crate::error::Result;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{0} channels; only mono audio is supported")]
    Multichannel(u16),
    #[error("unsupported sample encoding: {0}")]
    Encoding(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    Pcm16,
    #[default]
    Float32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavFile {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl WavFile {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Self {
        Self {
            sample_rate,
            samples,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<WavFile> {
    let reader = WavReader::open(path).map_err(AudioError::from)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::Multichannel(spec.channels).into());
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(AudioError::from)?,
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(AudioError::from)?,
        (fmt, bits) => {
            return Err(AudioError::Encoding(format!("{fmt:?} {bits}-bit")).into());
        }
    };
    Ok(WavFile::new(spec.sample_rate, samples))
}

pub fn wav_write(path: impl AsRef<Path>, wav: &WavFile, encoding: Encoding) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: wav.sample_rate,
        bits_per_sample: match encoding {
            Encoding::Pcm16 => 16,
            Encoding::Float32 => 32,
        },
        sample_format: match encoding {
            Encoding::Pcm16 => SampleFormat::Int,
            Encoding::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::create(path, spec).map_err(AudioError::from)?;
    for &s in &wav.samples {
        match encoding {
            Encoding::Float32 => w.write_sample(s),
            Encoding::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(q)
            }
        }
        .map_err(AudioError::from)?;
    }
    w.finalize().map_err(AudioError::from)?;
    Ok(())
}
