//! Integrated loudness per ITU-R BS.1770: K-weighting pre-filter, 400 ms
//! gating blocks with 75% overlap, absolute gate at -70 LUFS and a relative
//! gate 10 LU below the first-stage level.

use super::buffer::AudioBuffer;
use crate::error::{Error, Result};

/// Second-order section, direct form I, f64 state.
#[derive(Clone)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl Biquad {
    /// Stage 1 of the K-weighting: the spherical-head high shelf. Parametric
    /// design constants follow the de-facto reference implementation so the
    /// filter generalizes to any sample rate.
    fn k_high_shelf(fs: f64) -> Biquad {
        let gain_db = 3.999_843_853_97;
        let q = 0.707_175_236_955_419_3;
        let fc = 1_681.974_450_955_531_9;
        let k = (std::f64::consts::PI * fc / fs).tan();
        let vh = 10.0f64.powf(gain_db / 20.0);
        let vb = vh.powf(0.499_666_774_155);
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: (vh + vb * k / q + k * k) / a0,
            b1: 2.0 * (k * k - vh) / a0,
            b2: (vh - vb * k / q + k * k) / a0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    /// Stage 2: the 38 Hz high-pass.
    fn k_high_pass(fs: f64) -> Biquad {
        let q = 0.500_327_037_325_395_3;
        let fc = 38.135_470_876_139_82;
        let k = (std::f64::consts::PI * fc / fs).tan();
        let a0 = 1.0 + k / q + k * k;
        Biquad {
            b0: 1.0,
            b1: -2.0,
            b2: 1.0,
            a1: 2.0 * (k * k - 1.0) / a0,
            a2: (1.0 - k / q + k * k) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    fn apply(&mut self, x0: f64) -> f64 {
        let y0 = self.b0 * x0 + self.b1 * self.x1 + self.b2 * self.x2
            - self.a1 * self.y1
            - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x0;
        self.y2 = self.y1;
        self.y1 = y0;
        y0
    }
}

fn k_weight_channel(samples: &[f32], fs: f64) -> Vec<f64> {
    let mut shelf = Biquad::k_high_shelf(fs);
    let mut hp = Biquad::k_high_pass(fs);
    samples
        .iter()
        .map(|&x| hp.apply(shelf.apply(x as f64)))
        .collect()
}

const ABSOLUTE_GATE_LUFS: f64 = -70.0;
const LOUDNESS_OFFSET: f64 = -0.691;

fn block_powers(buf: &AudioBuffer) -> Result<Vec<f64>> {
    let fs = buf.sample_rate as f64;
    let block = (0.4 * fs).round() as usize;
    let hop = (0.1 * fs).round() as usize;
    if buf.len() < block {
        return Err(Error::Audio(format!(
            "loudness needs at least one 400 ms block ({} samples), got {}",
            block,
            buf.len()
        )));
    }
    let wl = k_weight_channel(buf.left(), fs);
    let wr = k_weight_channel(buf.right(), fs);
    let n_blocks = 1 + (buf.len() - block) / hop;
    let mut powers = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let start = b * hop;
        let mut sl = 0.0;
        let mut sr = 0.0;
        for t in start..start + block {
            sl += wl[t] * wl[t];
            sr += wr[t] * wr[t];
        }
        // stereo channels are weighted equally
        powers.push((sl + sr) / block as f64);
    }
    Ok(powers)
}

fn power_to_lufs(p: f64) -> f64 {
    LOUDNESS_OFFSET + 10.0 * p.max(1e-30).log10()
}

/// Integrated loudness in LUFS. Returns [`Error::BelowGate`] when every
/// gating block falls under the absolute gate (digital silence).
pub fn measure_lufs(buf: &AudioBuffer) -> Result<f64> {
    let powers = block_powers(buf)?;
    let gated: Vec<f64> = powers
        .iter()
        .copied()
        .filter(|&p| power_to_lufs(p) > ABSOLUTE_GATE_LUFS)
        .collect();
    if gated.is_empty() {
        return Err(Error::BelowGate);
    }
    let mean1 = gated.iter().sum::<f64>() / gated.len() as f64;
    let relative_gate = power_to_lufs(mean1) - 10.0;
    let kept: Vec<f64> = gated
        .iter()
        .copied()
        .filter(|&p| power_to_lufs(p) > relative_gate)
        .collect();
    if kept.is_empty() {
        return Err(Error::BelowGate);
    }
    let mean2 = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok(power_to_lufs(mean2))
}

#[derive(Debug, Clone)]
pub struct NormalizeReport {
    pub input_lufs: f64,
    pub gain_db: f64,
    /// Samples that ended up outside [-1, 1]. Clipping is permitted; the
    /// count is reported instead of limited.
    pub clipped_samples: usize,
}

/// Scale the buffer so its integrated loudness lands on `target` LUFS.
pub fn normalize_lufs(buf: &AudioBuffer, target: f64) -> Result<(AudioBuffer, NormalizeReport)> {
    let input_lufs = measure_lufs(buf)?;
    let gain_db = target - input_lufs;
    let gain = 10.0f64.powf(gain_db / 20.0) as f32;
    let mut out = buf.clone();
    out.scale(gain);
    let clipped = out.planar().iter().filter(|v| v.abs() > 1.0).count();
    Ok((
        out,
        NormalizeReport {
            input_lufs,
            gain_db,
            clipped_samples: clipped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn sine(fs: u32, freq: f64, secs: f64, amp: f64) -> Vec<f32> {
        let n = (fs as f64 * secs) as usize;
        (0..n)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fs as f64).sin()) as f32)
            .collect()
    }

    #[test]
    fn silence_is_below_gate() {
        let b = AudioBuffer::silence(48_000, 48_000);
        assert!(matches!(measure_lufs(&b), Err(Error::BelowGate)));
    }

    #[test]
    fn too_short_is_an_error() {
        let b = AudioBuffer::silence(48_000, 1_000);
        assert!(matches!(measure_lufs(&b), Err(Error::Audio(_))));
    }

    #[test]
    fn reference_tone_left_only() {
        // Full-scale 997 Hz sine in the left channel only: -3.01 LUFS.
        for &fs in &[48_000u32, 44_100, 16_000] {
            let l = sine(fs, 997.0, 2.0, 1.0);
            let r = vec![0.0; l.len()];
            let b = AudioBuffer::new(fs, l, r).unwrap();
            let lufs = measure_lufs(&b).unwrap();
            assert!(
                (lufs - (-3.01)).abs() < 0.1,
                "fs {fs}: got {lufs} LUFS, expected -3.01"
            );
        }
    }

    #[test]
    fn reference_tone_stereo_and_half_amplitude() {
        for &fs in &[48_000u32, 16_000] {
            let l = sine(fs, 997.0, 2.0, 1.0);
            let b = AudioBuffer::new(fs, l.clone(), l.clone()).unwrap();
            let lufs = measure_lufs(&b).unwrap();
            assert!((lufs - 0.0).abs() < 0.1, "fs {fs}: got {lufs}, expected 0.0");

            let h = sine(fs, 997.0, 2.0, 0.5);
            let b = AudioBuffer::new(fs, h.clone(), h).unwrap();
            let lufs = measure_lufs(&b).unwrap();
            assert!((lufs - (-6.02)).abs() < 0.1, "fs {fs}: got {lufs}, expected -6.02");
        }
    }

    #[test]
    fn gain_equivariance() {
        let fs = 16_000;
        let l = sine(fs, 440.0, 1.0, 0.3);
        let r = sine(fs, 650.0, 1.0, 0.2);
        let b = AudioBuffer::new(fs, l, r).unwrap();
        let base = measure_lufs(&b).unwrap();
        for g_db in [-12.0f64, -3.0, 4.5] {
            let mut s = b.clone();
            s.scale(10.0f32.powf(g_db as f32 / 20.0));
            let shifted = measure_lufs(&s).unwrap();
            assert!(
                (shifted - base - g_db).abs() < 0.1,
                "gain {g_db}: {base} -> {shifted}"
            );
        }
    }

    #[test]
    fn normalize_hits_target() {
        let fs = 16_000;
        let l = sine(fs, 440.0, 1.0, 0.4);
        let r = sine(fs, 220.0, 1.0, 0.3);
        let b = AudioBuffer::new(fs, l, r).unwrap();
        let (out, report) = normalize_lufs(&b, -18.0).unwrap();
        let lufs = measure_lufs(&out).unwrap();
        assert!((lufs - (-18.0)).abs() < 0.1, "got {lufs}");
        assert!(report.gain_db.is_finite());

        // already at target: unity gain within 0.1 dB
        let (out2, report2) = normalize_lufs(&out, -18.0).unwrap();
        assert!((report2.gain_db).abs() < 0.1);
        let g = 10.0f64.powf(report2.gain_db / 20.0);
        assert!((g - 1.0).abs() < 0.012);
        let _ = out2;
    }

    #[test]
    fn normalize_shift_matches_difference() {
        // a signal at -12 LUFS normalized to -18 applies -6 dB
        let fs = 16_000;
        let l = sine(fs, 330.0, 1.0, 0.5);
        let b = AudioBuffer::new(fs, l.clone(), l).unwrap();
        let (at12, _) = normalize_lufs(&b, -12.0).unwrap();
        let (_, report) = normalize_lufs(&at12, -18.0).unwrap();
        assert!((report.gain_db - (-6.0)).abs() < 0.1, "gain {}", report.gain_db);
    }
}
