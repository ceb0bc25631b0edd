//! The audio-effects processors.
//!
//! Each effect consumes a stereo buffer plus a normalized parameter vector
//! in [0,1]^P and is differentiable with respect to its continuous
//! parameters and its input. Forward rendering is generic over the scalar
//! type; backward rules are hand-derived in f64 and verified against finite
//! differences by the gradient suite.

mod delay;
mod distortion;
mod dynamics;
mod eq;
mod gain;
mod imager;
mod reverb;

use super::buffer::AudioBuffer;
use super::Real;
use crate::autodiff::{CustomOp, Tape, TensorId};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectType {
    Equalizer,
    Distortion,
    Compressor,
    Limiter,
    Gain,
    StereoImager,
    Delay,
    Reverb,
}

pub const ALL_EFFECT_TYPES: [EffectType; 8] = [
    EffectType::Equalizer,
    EffectType::Distortion,
    EffectType::Compressor,
    EffectType::Limiter,
    EffectType::Gain,
    EffectType::StereoImager,
    EffectType::Delay,
    EffectType::Reverb,
];

impl EffectType {
    pub fn name(self) -> &'static str {
        match self {
            EffectType::Equalizer => "equalizer",
            EffectType::Distortion => "distortion",
            EffectType::Compressor => "compressor",
            EffectType::Limiter => "limiter",
            EffectType::Gain => "gain",
            EffectType::StereoImager => "stereo_imager",
            EffectType::Delay => "delay",
            EffectType::Reverb => "reverb",
        }
    }

    pub fn from_name(name: &str) -> Option<EffectType> {
        ALL_EFFECT_TYPES.iter().copied().find(|t| t.name() == name)
    }

    pub fn param_count(self) -> usize {
        self.param_names().len()
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            EffectType::Equalizer => &["low_shelf_db", "peak1_db", "peak2_db", "high_shelf_db"],
            EffectType::Distortion => &["drive", "mix"],
            EffectType::Compressor => &["threshold_db", "ratio", "attack_ms", "release_ms"],
            EffectType::Limiter => &["threshold_db", "attack_ms", "release_ms"],
            EffectType::Gain => &["gain_db"],
            EffectType::StereoImager => &["width"],
            EffectType::Delay => &["time", "feedback", "mix"],
            EffectType::Reverb => &["decay_s", "wet"],
        }
    }

    /// Physical (min, max) per parameter; normalized values map linearly.
    pub fn param_ranges(self) -> Vec<(f64, f64)> {
        match self {
            EffectType::Equalizer => vec![(-12.0, 12.0); 4],
            EffectType::Distortion => vec![(1.0, 20.0), (0.0, 1.0)],
            EffectType::Compressor => {
                vec![(-40.0, 0.0), (1.0, 20.0), (1.0, 100.0), (20.0, 500.0)]
            }
            EffectType::Limiter => vec![(-40.0, 0.0), (0.1, 2.0), (20.0, 500.0)],
            EffectType::Gain => vec![(-24.0, 24.0)],
            EffectType::StereoImager => vec![(0.0, 2.0)],
            EffectType::Delay => vec![(50.0, 500.0), (0.0, 0.7), (0.0, 1.0)],
            EffectType::Reverb => vec![(0.1, 2.0), (0.0, 0.5)],
        }
    }

    /// Normalized parameter values at which the effect passes audio through.
    pub fn identity_params(self) -> Vec<f64> {
        match self {
            EffectType::Equalizer => vec![0.5, 0.5, 0.5, 0.5],
            EffectType::Distortion => vec![0.0, 0.0],
            // ratio at 1:1 disables the gain computer entirely
            EffectType::Compressor => vec![1.0, 0.0, 0.5, 0.5],
            // threshold at 0 dBFS: nothing above it for in-range signals
            EffectType::Limiter => vec![1.0, 0.5, 0.5],
            EffectType::Gain => vec![0.5],
            EffectType::StereoImager => vec![0.5],
            EffectType::Delay => vec![0.5, 0.5, 0.0],
            EffectType::Reverb => vec![0.5, 0.0],
        }
    }

    /// Parameter indices that admit gradients. Delay time lives on a
    /// discrete grid and is searched by enumeration instead.
    pub fn differentiable_params(self) -> Vec<usize> {
        match self {
            EffectType::Delay => vec![1, 2],
            other => (0..other.param_count()).collect(),
        }
    }
}

/// A typed effect with normalized parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectSpec {
    pub effect_type: EffectType,
    /// Normalized parameter vector in [0,1]^P.
    pub params: Vec<f64>,
    /// Seed for stochastic internals (reverb noise); not part of identity.
    #[serde(default)]
    pub noise_seed: u64,
}

impl EffectSpec {
    pub fn new(effect_type: EffectType, params: Vec<f64>) -> EffectSpec {
        EffectSpec {
            effect_type,
            params,
            noise_seed: 0,
        }
    }

    pub fn identity(effect_type: EffectType) -> EffectSpec {
        EffectSpec::new(effect_type, effect_type.identity_params())
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.effect_type.param_count() {
            return Err(Error::InvalidParam(format!(
                "{} expects {} params, got {}",
                self.effect_type.name(),
                self.effect_type.param_count(),
                self.params.len()
            )));
        }
        for (i, &p) in self.params.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "{} param {} ({}) outside [0,1]: {}",
                    self.effect_type.name(),
                    i,
                    self.effect_type.param_names()[i],
                    p
                )));
            }
        }
        Ok(())
    }

    /// Physical parameter values after denormalization.
    pub fn physical_params(&self) -> Vec<f64> {
        self.effect_type
            .param_ranges()
            .iter()
            .zip(&self.params)
            .map(|(&(lo, hi), &p)| lo + (hi - lo) * p)
            .collect()
    }
}

/// Render one effect on planar stereo channels. Generic core shared by the
/// f32 render path and the f64 tape path.
pub fn process<T: Real>(
    ty: EffectType,
    left: &[T],
    right: &[T],
    params: &[f64],
    sample_rate: f64,
    noise_seed: u64,
) -> (Vec<T>, Vec<T>) {
    match ty {
        EffectType::Equalizer => eq::process(left, right, params, sample_rate),
        EffectType::Distortion => distortion::process(left, right, params),
        EffectType::Compressor => dynamics::process_compressor(left, right, params, sample_rate),
        EffectType::Limiter => dynamics::process_limiter(left, right, params, sample_rate),
        EffectType::Gain => gain::process(left, right, params),
        EffectType::StereoImager => imager::process(left, right, params),
        EffectType::Delay => delay::process(left, right, params, sample_rate),
        EffectType::Reverb => reverb::process(left, right, params, sample_rate, noise_seed),
    }
}

/// Gradients of one effect: returns (d_left, d_right, d_params_normalized).
pub fn backward(
    ty: EffectType,
    left: &[f64],
    right: &[f64],
    params: &[f64],
    sample_rate: f64,
    noise_seed: u64,
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    match ty {
        EffectType::Equalizer => eq::backward(left, right, params, sample_rate, g_left, g_right),
        EffectType::Distortion => distortion::backward(left, right, params, g_left, g_right),
        EffectType::Compressor => {
            dynamics::backward_compressor(left, right, params, sample_rate, g_left, g_right)
        }
        EffectType::Limiter => {
            dynamics::backward_limiter(left, right, params, sample_rate, g_left, g_right)
        }
        EffectType::Gain => gain::backward(left, right, params, g_left, g_right),
        EffectType::StereoImager => imager::backward(left, right, params, g_left, g_right),
        EffectType::Delay => delay::backward(left, right, params, sample_rate, g_left, g_right),
        EffectType::Reverb => {
            reverb::backward(left, right, params, sample_rate, noise_seed, g_left, g_right)
        }
    }
}

/// Apply one effect to an audio buffer (f32 render path).
pub fn apply_effect(buffer: &AudioBuffer, spec: &EffectSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    let (l, r) = process(
        spec.effect_type,
        buffer.left(),
        buffer.right(),
        &spec.params,
        buffer.sample_rate as f64,
        spec.noise_seed,
    );
    AudioBuffer::new(buffer.sample_rate, l, r).map_err(|_| {
        Error::NonFinite(format!("output of effect {}", spec.effect_type.name()))
    })
}

struct EffectTapeOp {
    ty: EffectType,
    sample_rate: f64,
    noise_seed: u64,
}

impl CustomOp for EffectTapeOp {
    fn name(&self) -> &'static str {
        self.ty.name()
    }

    fn backward(
        &self,
        inputs: &[(&[f64], &[usize])],
        _output: (&[f64], &[usize]),
        grad_out: &[f64],
    ) -> Result<Vec<Option<Vec<f64>>>> {
        let (xv, xs) = inputs[0];
        let (pv, _) = inputs[1];
        let n = xs[1];
        let (dl, dr, dp) = backward(
            self.ty,
            &xv[..n],
            &xv[n..],
            pv,
            self.sample_rate,
            self.noise_seed,
            &grad_out[..n],
            &grad_out[n..],
        );
        let mut dx = dl;
        dx.extend_from_slice(&dr);
        Ok(vec![Some(dx), Some(dp)])
    }
}

/// Record one effect on a tape: `x` is stereo `[2, n]`, `params` is the
/// normalized `[P]` parameter tensor. Differentiable w.r.t. both.
pub fn apply_effect_tape(
    tape: &mut Tape,
    x: TensorId,
    params: TensorId,
    ty: EffectType,
    sample_rate: f64,
    noise_seed: u64,
) -> Result<TensorId> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 2 || xs[0] != 2 {
        return Err(Error::ShapeMismatch(format!(
            "effect input must be [2, n], got {:?}",
            xs
        )));
    }
    if tape.values(params).len() != ty.param_count() {
        return Err(Error::InvalidParam(format!(
            "{} expects {} params, got {}",
            ty.name(),
            ty.param_count(),
            tape.values(params).len()
        )));
    }
    let n = xs[1];
    let (l, r) = {
        let xv = tape.values(x);
        let pv = tape.values(params);
        process::<f64>(ty, &xv[..n], &xv[n..], pv, sample_rate, noise_seed)
    };
    let mut out = l;
    out.extend_from_slice(&r);
    Ok(tape.custom(
        &[x, params],
        out,
        &[2, n],
        Arc::new(EffectTapeOp {
            ty,
            sample_rate,
            noise_seed,
        }),
    ))
}

#[cfg(test)]
mod tests;
