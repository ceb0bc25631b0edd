//! Synthetic instrument sources. Five timbrally separated classes stand in
//! for real multitrack stems: percussion (filtered noise bursts on a grid),
//! bass (low notes, strong rolloff), lead (detuned saw stack), pad (slowly
//! evolving filtered chords) and pluck (decaying harmonic tones). Content
//! is randomized over time so the two halves of a stem never share musical
//! material.

use crate::dsp::buffer::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng::{derive_seed_str, rng_from_seed};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_CLASSES: [&str; 5] = ["percussion", "bass", "lead", "pad", "pluck"];

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn midi_to_hz(m: f64) -> f64 {
    440.0 * 2.0f64.powf((m - 69.0) / 12.0)
}

/// Additive tone with 1/h^rolloff harmonic weights, capped below Nyquist.
fn add_tone(
    out: &mut [f64],
    fs: f64,
    start: usize,
    len: usize,
    f0: f64,
    harmonics: usize,
    rolloff: f64,
    amp: f64,
    attack_s: f64,
    decay_per_harmonic: Option<f64>,
    phase: f64,
) {
    let nyq = 0.45 * fs;
    let max_h = harmonics.min((nyq / f0).floor() as usize).max(1);
    let attack = (attack_s * fs).max(1.0);
    for h in 1..=max_h {
        let w = 1.0 / (h as f64).powf(rolloff);
        let freq = f0 * h as f64;
        let tau = decay_per_harmonic.map(|t0| t0 / h as f64);
        for i in 0..len {
            let t = start + i;
            if t >= out.len() {
                break;
            }
            let mut env = (i as f64 / attack).min(1.0);
            if let Some(tau) = tau {
                env *= (-(i as f64 / fs) / tau).exp();
            }
            out[t] += amp * w * env * (TWO_PI * freq * (t as f64 / fs) + phase * h as f64).sin();
        }
    }
}

/// Two-pole resonator, used to color noise bursts.
fn resonate(x: &[f64], fs: f64, fc: f64, q: f64) -> Vec<f64> {
    let w = TWO_PI * fc / fs;
    let r = (-w / (2.0 * q)).exp();
    let a1 = -2.0 * r * w.cos();
    let a2 = r * r;
    let mut y = vec![0.0; x.len()];
    let mut y1 = 0.0;
    let mut y2 = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let yi = xi - a1 * y1 - a2 * y2;
        y[i] = yi;
        y2 = y1;
        y1 = yi;
    }
    y
}

fn percussion(rng: &mut ChaCha8Rng, fs: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let slot = (0.125 * fs) as usize;
    let mut t = 0;
    while t < n {
        if rng.random::<f64>() < 0.7 {
            let low = rng.random::<f64>() < 0.4;
            let fc = if low {
                rng.random_range(120.0..350.0)
            } else {
                rng.random_range(1500.0..6000.0)
            };
            let tau = rng.random_range(0.005..0.05);
            let len = ((tau * 6.0 * fs) as usize).min(n - t);
            let burst: Vec<f64> = (0..len)
                .map(|i| {
                    (rng.random::<f64>() * 2.0 - 1.0) * (-(i as f64 / fs) / tau).exp()
                })
                .collect();
            let shaped = resonate(&burst, fs, fc, 4.0);
            let amp = rng.random_range(0.5..1.0) * if low { 1.4 } else { 0.7 };
            for (i, v) in shaped.iter().enumerate() {
                out[t + i] += amp * v;
            }
        }
        t += slot;
    }
    out
}

fn note_track(
    rng: &mut ChaCha8Rng,
    fs: f64,
    n: usize,
    midi_lo: f64,
    midi_hi: f64,
    note_secs: (f64, f64),
    harmonics: usize,
    rolloff: f64,
    detune_cents: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut t = 0;
    let mut midi = rng.random_range(midi_lo..midi_hi);
    while t < n {
        let dur = (rng.random_range(note_secs.0..note_secs_hi(note_secs)) * fs) as usize;
        let len = dur.min(n - t);
        // bounded random walk over pitch
        midi += rng.random_range(-5.0..5.0);
        midi = midi.clamp(midi_lo, midi_hi);
        let f0 = midi_to_hz(midi.round());
        let phase = rng.random::<f64>() * TWO_PI;
        add_tone(&mut out, fs, t, len, f0, harmonics, rolloff, 0.6, 0.01, None, phase);
        if detune_cents > 0.0 {
            let det = f0 * 2.0f64.powf(detune_cents / 1200.0);
            add_tone(&mut out, fs, t, len, det, harmonics, rolloff, 0.4, 0.01, None, phase + 1.3);
        }
        t += len.max(1);
    }
    out
}

fn note_secs_hi(range: (f64, f64)) -> f64 {
    range.1.max(range.0 + 1e-9)
}

fn pad(rng: &mut ChaCha8Rng, fs: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    // chord change at the midpoint guarantees the halves differ
    for (start, len) in [(0usize, n / 2), (n / 2, n - n / 2)] {
        for _ in 0..3 {
            let midi: f64 = rng.random_range(48.0..72.0f64).round();
            let phase = rng.random::<f64>() * TWO_PI;
            add_tone(&mut out, fs, start, len, midi_to_hz(midi), 6, 1.5, 0.25, 0.15, None, phase);
        }
    }
    // slow noise bed through a wandering resonator
    let bed: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let fc = rng.random_range(400.0..1200.0);
    let shaped = resonate(&bed, fs, fc, 1.5);
    for (o, s) in out.iter_mut().zip(&shaped) {
        *o += 0.02 * s;
    }
    out
}

fn pluck(rng: &mut ChaCha8Rng, fs: f64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut t = 0;
    while t < n {
        let midi: f64 = rng.random_range(50.0..76.0f64).round();
        let phase = rng.random::<f64>() * TWO_PI;
        let tau = rng.random_range(0.15..0.5);
        let len = ((tau * 5.0 * fs) as usize).min(n - t);
        add_tone(
            &mut out,
            fs,
            t,
            len,
            midi_to_hz(midi),
            10,
            1.0,
            0.7,
            0.002,
            Some(tau),
            phase,
        );
        t += (rng.random_range(0.2..0.4) * fs) as usize;
    }
    out
}

/// Deterministic per (class, seed). Output peak is kept at or below 0.9 and
/// RMS lands between -30 and -10 dBFS.
pub fn synth_source(
    class: &str,
    seed: u64,
    duration_secs: f64,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    let fs = sample_rate as f64;
    let n = (duration_secs * fs).round() as usize;
    if n == 0 {
        return Err(Error::InvalidConfig("source duration too short".into()));
    }
    let mut rng = rng_from_seed(derive_seed_str(seed, class));
    let mono = match class {
        "percussion" => percussion(&mut rng, fs, n),
        "bass" => note_track(&mut rng, fs, n, 28.0, 42.0, (0.25, 0.5), 6, 1.5, 0.0),
        "lead" => note_track(&mut rng, fs, n, 55.0, 83.0, (0.125, 0.25), 12, 1.0, 6.0),
        "pad" => pad(&mut rng, fs, n),
        "pluck" => pluck(&mut rng, fs, n),
        other => return Err(Error::UnknownClass(other.to_string())),
    };
    // gentle stereo spread: small decorrelated noise on the side channel
    let width = match class {
        "pad" => 0.06,
        "percussion" => 0.015,
        _ => 0.03,
    };
    let side: Vec<f64> = mono
        .iter()
        .map(|&m| m * width * (rng.random::<f64>() * 2.0 - 1.0))
        .collect();

    // normalize RMS to -20 dBFS, then keep the peak at or below 0.9
    let rms = (mono.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let mut gain = if rms > 1e-9 { 0.1 / rms } else { 1.0 };
    let peak = mono
        .iter()
        .zip(&side)
        .map(|(m, s)| (m.abs() + s.abs()) * gain)
        .fold(0.0f64, f64::max);
    if peak > 0.9 {
        gain *= 0.9 / peak;
    }
    let left: Vec<f32> = mono
        .iter()
        .zip(&side)
        .map(|(&m, &s)| ((m + s) * gain) as f32)
        .collect();
    let right: Vec<f32> = mono
        .iter()
        .zip(&side)
        .map(|(&m, &s)| ((m - s) * gain) as f32)
        .collect();
    AudioBuffer::new(sample_rate, left, right)
}

/// Energy-weighted mean frequency of the mid channel, for timbre checks.
pub fn spectral_centroid(buf: &AudioBuffer) -> f64 {
    use crate::dsp::Real;
    let n_fft = 2048usize;
    let mid = buf.mid_f64();
    if mid.len() < n_fft {
        return 0.0;
    }
    let tables = f64::fft_tables(n_fft);
    let hop = n_fft / 2;
    let frames = 1 + (mid.len() - n_fft) / hop;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    for f in 0..frames {
        for i in 0..n_fft {
            let w = 0.5 - 0.5 * (TWO_PI * i as f64 / n_fft as f64).cos();
            re[i] = mid[f * hop + i] * w;
            im[i] = 0.0;
        }
        tables.forward(&mut re, &mut im);
        for k in 0..n_fft / 2 {
            let p = re[k] * re[k] + im[k] * im[k];
            let freq = k as f64 * buf.sample_rate as f64 / n_fft as f64;
            num += p * freq;
            den += p;
        }
    }
    num / den.max(1e-12)
}
