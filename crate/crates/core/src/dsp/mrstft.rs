//! Multi-resolution STFT distance: per resolution, a spectral-convergence
//! term ||A|-|B||_F / ||A||_F plus an L1 log-magnitude term, averaged over
//! channels and summed over resolutions.

use super::buffer::AudioBuffer;
use super::Real;
use crate::autodiff::{DftBasis, Tape, TensorId};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const MAG_EPS: f64 = 1e-14;
const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrStftConfig {
    /// Window sizes; hop is window/4.
    pub windows: Vec<usize>,
}

impl Default for MrStftConfig {
    fn default() -> Self {
        MrStftConfig {
            windows: vec![128, 256, 512],
        }
    }
}

impl MrStftConfig {
    pub fn full_scale() -> Self {
        MrStftConfig {
            windows: vec![512, 1024, 2048],
        }
    }

    pub fn bases(&self) -> Vec<Arc<DftBasis>> {
        self.windows
            .iter()
            .map(|&w| DftBasis::hann(w, w / 4))
            .collect()
    }
}

/// Magnitude spectrogram of one channel, flattened `frames*bins`, f64.
fn mag_spectrogram<T: Real>(samples: &[T], basis: &DftBasis) -> Vec<f64> {
    let frames = basis.frame_count(samples.len());
    let w = basis.window.len();
    let bins = basis.bins;
    let tables = f64::fft_tables(w);
    let mut out = vec![0.0; frames * bins];
    let mut re = vec![0.0; w];
    let mut im = vec![0.0; w];
    for f in 0..frames {
        for (i, (r, win)) in re.iter_mut().zip(&basis.window).enumerate() {
            *r = samples[f * basis.hop + i].to_f64().unwrap() * win;
        }
        im.iter_mut().for_each(|v| *v = 0.0);
        tables.forward(&mut re, &mut im);
        for k in 0..bins {
            out[f * bins + k] = (re[k] * re[k] + im[k] * im[k] + MAG_EPS).sqrt();
        }
    }
    out
}

/// Per-resolution (spectral convergence, log-magnitude L1), channel-averaged.
pub fn mrstft_components(
    a: &AudioBuffer,
    b: &AudioBuffer,
    cfg: &MrStftConfig,
) -> Result<Vec<(f64, f64)>> {
    if a.len() != b.len() || a.sample_rate != b.sample_rate {
        return Err(Error::ShapeMismatch(format!(
            "mrstft buffers disagree: {} @ {} vs {} @ {}",
            a.len(),
            a.sample_rate,
            b.len(),
            b.sample_rate
        )));
    }
    let mut out = Vec::new();
    for basis in cfg.bases() {
        let mut sc = 0.0;
        let mut lm = 0.0;
        for (ca, cb) in [(a.left(), b.left()), (a.right(), b.right())] {
            let ma = mag_spectrogram(ca, &basis);
            let mb = mag_spectrogram(cb, &basis);
            let mut num = 0.0;
            let mut den = 0.0;
            let mut l1 = 0.0;
            for (&x, &y) in ma.iter().zip(&mb) {
                let d = x - y;
                num += d * d;
                den += x * x;
                l1 += (x.max(LOG_FLOOR).ln() - y.max(LOG_FLOOR).ln()).abs();
            }
            sc += num.sqrt() / den.sqrt().max(LOG_FLOOR);
            lm += l1 / ma.len() as f64;
        }
        out.push((sc / 2.0, lm / 2.0));
    }
    Ok(out)
}

/// Scalar multi-resolution STFT loss.
pub fn mrstft_loss(a: &AudioBuffer, b: &AudioBuffer, cfg: &MrStftConfig) -> Result<f64> {
    Ok(mrstft_components(a, b, cfg)?
        .iter()
        .map(|(sc, lm)| sc + lm)
        .sum())
}

fn channel_mag_tape(
    tape: &mut Tape,
    x: TensorId,
    channel: usize,
    basis: &Arc<DftBasis>,
) -> Result<(TensorId, TensorId)> {
    let n = tape.shape(x)[1];
    let row = tape.slice_rows(x, channel, 1)?;
    let flat = tape.reshape(row, &[n])?;
    let spec = tape.framed_dft(flat, basis)?;
    let frames = basis.frame_count(n);
    let re = tape.slice_rows(spec, 0, frames)?;
    let im = tape.slice_rows(spec, frames, frames)?;
    let re2 = tape.mul(re, re)?;
    let im2 = tape.mul(im, im)?;
    let sum = tape.add(re2, im2)?;
    let sum = tape.affine(sum, 1.0, MAG_EPS);
    let mag = tape.sqrt(sum);
    // (magnitude, magnitude^2) -- the squared form feeds the norm directly
    Ok((mag, sum))
}

/// Differentiable multi-resolution STFT loss on the tape; `a` and `b` are
/// stereo `[2, n]` tensors.
pub fn mrstft_loss_tape(
    tape: &mut Tape,
    a: TensorId,
    b: TensorId,
    cfg: &MrStftConfig,
) -> Result<TensorId> {
    let (sa, sb) = (tape.shape(a).to_vec(), tape.shape(b).to_vec());
    if sa != sb || sa.len() != 2 || sa[0] != 2 {
        return Err(Error::ShapeMismatch(format!(
            "mrstft_loss_tape expects matching [2,n], got {:?} vs {:?}",
            sa, sb
        )));
    }
    let mut terms: Vec<TensorId> = Vec::new();
    for basis in cfg.bases() {
        for ch in 0..2 {
            let (mag_a, sq_a) = channel_mag_tape(tape, a, ch, &basis)?;
            let (mag_b, _) = channel_mag_tape(tape, b, ch, &basis)?;
            let diff = tape.sub(mag_a, mag_b)?;
            let d2 = tape.mul(diff, diff)?;
            let num2 = tape.sum(d2);
            let num = tape.sqrt(num2);
            let den2 = tape.sum(sq_a);
            let den = tape.sqrt(den2);
            let sc = tape.div(num, den)?;
            let la = tape.log(mag_a);
            let lb = tape.log(mag_b);
            let ld = tape.sub(la, lb)?;
            let labs = tape.abs(ld);
            let lm = tape.mean(labs);
            let term = tape.add(sc, lm)?;
            terms.push(term);
        }
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(tape.affine(total, 0.5, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn noise_buffer(seed: u64, n: usize, amp: f32) -> AudioBuffer {
        let mut rng = rng_from_seed(seed);
        let l: Vec<f32> = (0..n).map(|_| amp * (rng.random::<f32>() * 2.0 - 1.0)).collect();
        let r: Vec<f32> = (0..n).map(|_| amp * (rng.random::<f32>() * 2.0 - 1.0)).collect();
        AudioBuffer::new(16_000, l, r).unwrap()
    }

    #[test]
    fn identical_signals_give_zero() {
        let a = noise_buffer(1, 4000, 0.5);
        let loss = mrstft_loss(&a, &a, &MrStftConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn doubled_signal_has_unit_spectral_convergence() {
        let a = noise_buffer(2, 4000, 0.4);
        let mut b = a.clone();
        b.scale(2.0);
        for (sc, _) in mrstft_components(&a, &b, &MrStftConfig::default()).unwrap() {
            assert!((sc - 1.0).abs() < 1e-6, "sc {sc}");
        }
    }

    #[test]
    fn loss_decreases_along_crossfade_to_target() {
        let target = noise_buffer(3, 4000, 0.5);
        let noise = noise_buffer(4, 4000, 0.5);
        let cfg = MrStftConfig::default();
        let mut last = f64::INFINITY;
        for step in 0..=4 {
            let alpha = step as f32 / 4.0;
            let mut mix = noise.clone();
            mix.scale(1.0 - alpha);
            mix.mix_add(&target, alpha).unwrap();
            let loss = mrstft_loss(&target, &mix, &cfg).unwrap();
            assert!(loss < last, "step {step}: {loss} !< {last}");
            last = loss;
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = noise_buffer(5, 4000, 0.5);
        let b = noise_buffer(6, 2000, 0.5);
        assert!(mrstft_loss(&a, &b, &MrStftConfig::default()).is_err());
    }

    #[test]
    fn tape_version_matches_plain() {
        let a = noise_buffer(7, 2000, 0.5);
        let b = noise_buffer(8, 2000, 0.5);
        let cfg = MrStftConfig {
            windows: vec![64, 128],
        };
        let plain = mrstft_loss(&a, &b, &cfg).unwrap();
        let mut tape = Tape::new();
        let at = tape.constant(a.planar_f64(), &[2, a.len()]);
        let bt = tape.constant(b.planar_f64(), &[2, b.len()]);
        let loss = mrstft_loss_tape(&mut tape, at, bt, &cfg).unwrap();
        let tv = tape.values(loss)[0];
        assert!(
            (tv - plain).abs() / plain.abs() < 1e-5,
            "tape {tv} vs plain {plain}"
        );
    }

    #[test]
    fn nonnegative_on_random_pairs() {
        for seed in 0..5 {
            let a = noise_buffer(100 + seed, 1500, 0.4);
            let b = noise_buffer(200 + seed, 1500, 0.6);
            let loss = mrstft_loss(&a, &b, &MrStftConfig::default()).unwrap();
            assert!(loss >= 0.0);
        }
    }
}
