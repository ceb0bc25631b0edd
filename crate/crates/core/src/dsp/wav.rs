//! WAV read/write: PCM 16-bit and 32-bit float. Mono files are read as
//! dual-mono; sample-rate conversions are never performed.

use super::buffer::AudioBuffer;
use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::Wav(format!(
            "{}: {} channels unsupported (need mono or stereo)",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(e.to_string()))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(e.to_string()))?,
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported format {:?}/{} (PCM16 or float32 only)",
                path.display(),
                fmt,
                bits
            )))
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Wav(format!("{}: empty file", path.display())));
    }
    let (left, right) = if spec.channels == 1 {
        (interleaved.clone(), interleaved)
    } else {
        let mut l = Vec::with_capacity(interleaved.len() / 2);
        let mut r = Vec::with_capacity(interleaved.len() / 2);
        for pair in interleaved.chunks_exact(2) {
            l.push(pair[0]);
            r.push(pair[1]);
        }
        (l, r)
    };
    AudioBuffer::new(spec.sample_rate, left, right)
}

pub fn write_wav(path: &Path, buf: &AudioBuffer, format: WavFormat) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: buf.sample_rate,
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => hound::SampleFormat::Int,
            WavFormat::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::Wav(e.to_string()))?;
    match format {
        WavFormat::Pcm16 => {
            for i in 0..buf.len() {
                for v in [buf.left()[i], buf.right()[i]] {
                    let s = (v.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                    writer.write_sample(s).map_err(|e| Error::Wav(e.to_string()))?;
                }
            }
        }
        WavFormat::Float32 => {
            for i in 0..buf.len() {
                for v in [buf.left()[i], buf.right()[i]] {
                    writer.write_sample(v).map_err(|e| Error::Wav(e.to_string()))?;
                }
            }
        }
    }
    writer.finalize().map_err(|e| Error::Wav(e.to_string()))
}

/// Reject sample-rate mismatches; the pipeline never resamples.
pub fn expect_sample_rate(buf: &AudioBuffer, expected: u32, context: &str) -> Result<()> {
    if buf.sample_rate != expected {
        return Err(Error::Audio(format!(
            "{context}: sample rate {} does not match expected {expected} (resampling is not supported)",
            buf.sample_rate
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join("fxrep-wav-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("f32.wav");
        let buf = AudioBuffer::new(16_000, vec![0.1, -0.5, 0.25], vec![0.0, 1.0, -1.0]).unwrap();
        write_wav(&path, &buf, WavFormat::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.left(), buf.left());
        assert_eq!(back.right(), buf.right());
    }

    #[test]
    fn pcm16_roundtrip_is_close() {
        let dir = std::env::temp_dir().join("fxrep-wav-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("i16.wav");
        let buf = AudioBuffer::new(8_000, vec![0.1, -0.5], vec![0.9, -0.9]).unwrap();
        write_wav(&path, &buf, WavFormat::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in back.planar().iter().zip(buf.planar()) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }

    #[test]
    fn sample_rate_mismatch_rejected() {
        let buf = AudioBuffer::silence(22_050, 100);
        assert!(expect_sample_rate(&buf, 16_000, "test").is_err());
        assert!(expect_sample_rate(&buf, 22_050, "test").is_ok());
    }
}
