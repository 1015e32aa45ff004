use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// On-disk sample encoding for written WAV files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Read a mono RIFF WAV (integer PCM or 32-bit float).
///
/// When `target_rate_hz` is given the audio is resampled to it.
pub fn read_wav(path: impl AsRef<Path>, target_rate_hz: Option<u32>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Unsupported(format!(
            "{}: only mono audio is supported, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let w = Waveform::new(samples, spec.sample_rate)?;
    match target_rate_hz {
        Some(rate) if rate != spec.sample_rate => w.resampled(rate),
        _ => Ok(w),
    }
}

/// Write a waveform, clipping samples to `[-1, 1]`.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = match format {
        WavFormat::Pcm16 => hound::WavSpec {
            channels: 1,
            sample_rate: w.sample_rate_hz(),
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        },
        WavFormat::Float32 => hound::WavSpec {
            channels: 1,
            sample_rate: w.sample_rate_hz(),
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for s in w.clipped() {
        match format {
            WavFormat::Pcm16 => writer
                .write_sample((s * 32767.0).round() as i16)
                .map_err(wav_err)?,
            WavFormat::Float32 => writer.write_sample(s as f32).map_err(wav_err)?,
        }
    }
    writer.finalize().map_err(wav_err)
}
