use crate::error::{Error, Result};

/// Stereo sampled audio. Samples are stored planar (left block then right
/// block) in `f32`; nominal range [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    len: usize,
    samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, left: Vec<f32>, right: Vec<f32>) -> Result<AudioBuffer> {
        if left.is_empty() || left.len() != right.len() {
            return Err(Error::Audio(format!(
                "channel lengths invalid: left {} right {}",
                left.len(),
                right.len()
            )));
        }
        let len = left.len();
        let mut samples = left;
        samples.extend_from_slice(&right);
        let buf = AudioBuffer {
            sample_rate,
            len,
            samples,
        };
        buf.check_finite()?;
        Ok(buf)
    }

    pub fn silence(sample_rate: u32, len: usize) -> AudioBuffer {
        AudioBuffer {
            sample_rate,
            len,
            samples: vec![0.0; len * 2],
        }
    }

    pub fn from_planar(sample_rate: u32, planar: Vec<f32>) -> Result<AudioBuffer> {
        if planar.is_empty() || planar.len() % 2 != 0 {
            return Err(Error::Audio("planar data must be 2*len samples".into()));
        }
        let len = planar.len() / 2;
        let buf = AudioBuffer {
            sample_rate,
            len,
            samples: planar,
        };
        buf.check_finite()?;
        Ok(buf)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn duration_secs(&self) -> f64 {
        self.len as f64 / self.sample_rate as f64
    }

    pub fn left(&self) -> &[f32] {
        &self.samples[..self.len]
    }

    pub fn right(&self) -> &[f32] {
        &self.samples[self.len..]
    }

    pub fn planar(&self) -> &[f32] {
        &self.samples
    }

    pub fn planar_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn planar_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.samples.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("audio buffer".into()))
        }
    }

    /// Mid channel (L+R)/2 as f64.
    pub fn mid_f64(&self) -> Vec<f64> {
        self.left()
            .iter()
            .zip(self.right())
            .map(|(&l, &r)| 0.5 * (l as f64 + r as f64))
            .collect()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    pub fn rms(&self) -> f64 {
        let e: f64 = self.samples.iter().map(|&v| (v as f64) * (v as f64)).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    pub fn scale(&mut self, gain: f32) {
        for v in &mut self.samples {
            *v *= gain;
        }
    }

    /// self += other * gain; lengths and sample rates must match.
    pub fn mix_add(&mut self, other: &AudioBuffer, gain: f32) -> Result<()> {
        if other.len != self.len || other.sample_rate != self.sample_rate {
            return Err(Error::Audio("mix_add length/rate mismatch".into()));
        }
        for (a, b) in self.samples.iter_mut().zip(&other.samples) {
            *a += b * gain;
        }
        Ok(())
    }

    /// Slice out `[start, start+len)` samples of both channels.
    pub fn segment(&self, start: usize, len: usize) -> Result<AudioBuffer> {
        if start + len > self.len || len == 0 {
            return Err(Error::Audio(format!(
                "segment {}..{} out of range (len {})",
                start,
                start + len,
                self.len
            )));
        }
        AudioBuffer::new(
            self.sample_rate,
            self.left()[start..start + len].to_vec(),
            self.right()[start..start + len].to_vec(),
        )
    }

    /// Residual energy of (self - other) relative to other, in dB.
    /// Used by passthrough tests: identity settings must stay below -80 dB.
    pub fn residual_db(&self, other: &AudioBuffer) -> f64 {
        let mut diff = 0.0f64;
        let mut re = 0.0f64;
        for (a, b) in self.samples.iter().zip(&other.samples) {
            let d = (*a as f64) - (*b as f64);
            diff += d * d;
            re += (*b as f64) * (*b as f64);
        }
        if re <= 0.0 {
            return if diff <= 0.0 { -300.0 } else { 300.0 };
        }
        10.0 * (diff / re).max(1e-30).log10()
    }
}
