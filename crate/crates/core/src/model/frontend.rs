//! Log-mel frontend. The fast path computes features off-tape for training
//! data; the tape path is bit-compatible and differentiable, used when
//! gradients must flow back into the audio (parameter matching).

use super::ModelConfig;
use crate::autodiff::{DftBasis, Tape, TensorId};
use crate::dsp::buffer::AudioBuffer;
use crate::dsp::Real;
use crate::error::{Error, Result};
use std::sync::Arc;

const MAG_EPS: f64 = 1e-14;
const LOG_FLOOR: f64 = 1e-8;
const TWENTY_OVER_LN10: f64 = 20.0 / core::f64::consts::LN_10;

/// Feature matrix: frames x mel bins, scaled to [-1, 1].
#[derive(Debug, Clone)]
pub struct Features {
    pub frames: usize,
    pub mel_bins: usize,
    pub values: Vec<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

/// Precomputed DFT basis plus mel filterbank for one configuration.
pub struct MelFrontend {
    pub basis: Arc<DftBasis>,
    /// [bins x mel_bins], row-major.
    pub mel: Vec<f64>,
    pub bins: usize,
    pub mel_bins: usize,
    cfg: ModelConfig,
}

impl MelFrontend {
    pub fn new(cfg: &ModelConfig) -> MelFrontend {
        let bins = cfg.window / 2 + 1;
        let basis = DftBasis::hann(cfg.window, cfg.hop);
        let nyq = cfg.sample_rate as f64 / 2.0;
        let mel_lo = hz_to_mel(0.0);
        let mel_hi = hz_to_mel(nyq);
        let centers: Vec<f64> = (0..cfg.mel_bins + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.mel_bins + 1) as f64))
            .collect();
        let mut mel = vec![0.0; bins * cfg.mel_bins];
        for k in 0..bins {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.window as f64;
            for m in 0..cfg.mel_bins {
                let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
                let up = (f - lo) / (mid - lo).max(1e-9);
                let down = (hi - f) / (hi - mid).max(1e-9);
                mel[k * cfg.mel_bins + m] = up.min(down).max(0.0);
            }
        }
        MelFrontend {
            basis,
            mel,
            bins,
            mel_bins: cfg.mel_bins,
            cfg: cfg.clone(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn scale_db(&self, db: f64) -> f64 {
        let (lo, hi) = self.cfg.db_clip;
        let clipped = db.clamp(lo, hi);
        (clipped - lo) / (hi - lo) * 2.0 - 1.0
    }
}

/// Fast feature extraction: stereo collapsed to mid, magnitude STFT, mel
/// projection, dB, clip, scale to [-1, 1].
pub fn logmel(buf: &AudioBuffer, frontend: &MelFrontend) -> Result<Features> {
    let cfg = &frontend.cfg;
    if buf.len() != cfg.segment_samples() {
        return Err(Error::ShapeMismatch(format!(
            "logmel expects {} samples, got {}",
            cfg.segment_samples(),
            buf.len()
        )));
    }
    if buf.sample_rate != cfg.sample_rate {
        return Err(Error::Audio(format!(
            "logmel sample rate {} does not match config {}",
            buf.sample_rate, cfg.sample_rate
        )));
    }
    let mid = buf.mid_f64();
    let frames = frontend.basis.frame_count(mid.len());
    let w = cfg.window;
    let bins = frontend.bins;
    let tables = f64::fft_tables(w);
    let mut re = vec![0.0; w];
    let mut im = vec![0.0; w];
    let mut values = vec![0.0; frames * cfg.mel_bins];
    let mut mags = vec![0.0; 2 * bins];
    let write_row = |f: usize, mags: &[f64], values: &mut [f64]| {
        for m in 0..cfg.mel_bins {
            let mut acc = 0.0;
            for k in 0..bins {
                acc += mags[k] * frontend.mel[k * cfg.mel_bins + m];
            }
            let db = TWENTY_OVER_LN10 * acc.max(LOG_FLOOR).ln();
            values[f * cfg.mel_bins + m] = frontend.scale_db(db);
        }
    };
    // two real frames per complex transform
    let mut f = 0;
    while f < frames {
        let paired = f + 1 < frames;
        for i in 0..w {
            re[i] = mid[f * cfg.hop + i] * frontend.basis.window[i];
            im[i] = if paired {
                mid[(f + 1) * cfg.hop + i] * frontend.basis.window[i]
            } else {
                0.0
            };
        }
        tables.forward(&mut re, &mut im);
        for k in 0..bins {
            let nk = if k == 0 { 0 } else { w - k };
            let ar = 0.5 * (re[k] + re[nk]);
            let ai = 0.5 * (im[k] - im[nk]);
            mags[k] = (ar * ar + ai * ai + MAG_EPS).sqrt();
            if paired {
                let br = 0.5 * (im[k] + im[nk]);
                let bi = 0.5 * (re[nk] - re[k]);
                mags[bins + k] = (br * br + bi * bi + MAG_EPS).sqrt();
            }
        }
        write_row(f, &mags[..bins], &mut values);
        if paired {
            write_row(f + 1, &mags[bins..], &mut values);
        }
        f += 2;
    }
    Ok(Features {
        frames,
        mel_bins: cfg.mel_bins,
        values,
    })
}

/// Differentiable log-mel of a stereo `[2, n]` tensor; numerically matches
/// [`logmel`] on the same audio.
pub fn logmel_tape(tape: &mut Tape, x: TensorId, frontend: &MelFrontend) -> Result<TensorId> {
    let cfg = &frontend.cfg;
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != 2 || shape[1] != cfg.segment_samples() {
        return Err(Error::ShapeMismatch(format!(
            "logmel_tape expects [2, {}], got {:?}",
            cfg.segment_samples(),
            shape
        )));
    }
    let n = shape[1];
    let l = tape.slice_rows(x, 0, 1)?;
    let r = tape.slice_rows(x, 1, 1)?;
    let sum = tape.add(l, r)?;
    let mid2 = tape.affine(sum, 0.5, 0.0);
    let mid = tape.reshape(mid2, &[n])?;
    let spec = tape.framed_dft(mid, &frontend.basis)?;
    let frames = frontend.basis.frame_count(n);
    let re = tape.slice_rows(spec, 0, frames)?;
    let im = tape.slice_rows(spec, frames, frames)?;
    let re2 = tape.mul(re, re)?;
    let im2 = tape.mul(im, im)?;
    let p = tape.add(re2, im2)?;
    let p = tape.affine(p, 1.0, MAG_EPS);
    let mag = tape.sqrt(p);
    let melmat = tape.constant(frontend.mel.clone(), &[frontend.bins, cfg.mel_bins]);
    let melspec = tape.matmul(mag, melmat)?;
    let ln = tape.log(melspec);
    let db = tape.affine(ln, TWENTY_OVER_LN10, 0.0);
    let (lo, hi) = cfg.db_clip;
    let clipped = tape.clamp(db, lo, hi);
    Ok(tape.affine(clipped, 2.0 / (hi - lo), -(hi + lo) / (hi - lo)))
}
