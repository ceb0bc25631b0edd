//! Per-effect-type inclusion probabilities with linear scheduling, used to
//! keep easily distinguishable effects from dominating early training.

use crate::dsp::effects::{EffectType, ALL_EFFECT_TYPES};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FxProbabilities {
    probs: BTreeMap<EffectType, f64>,
}

impl FxProbabilities {
    pub fn constant(p: f64) -> FxProbabilities {
        FxProbabilities {
            probs: ALL_EFFECT_TYPES.iter().map(|&t| (t, p)).collect(),
        }
    }

    pub fn from_map(probs: BTreeMap<EffectType, f64>) -> Result<FxProbabilities> {
        for (&t, &p) in &probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParam(format!(
                    "probability {} for {} outside [0,1]",
                    p,
                    t.name()
                )));
            }
        }
        Ok(FxProbabilities { probs })
    }

    pub fn probability(&self, t: EffectType) -> f64 {
        self.probs.get(&t).copied().unwrap_or(1.0)
    }
}

/// Endpoints of the linear schedule. Salient types ramp down from always-on
/// while subtle types ramp up, with gain pinned at 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FxScheduleConfig {
    pub start: BTreeMap<EffectType, f64>,
    pub end: BTreeMap<EffectType, f64>,
    pub total_steps: u64,
}

impl Default for FxScheduleConfig {
    fn default() -> Self {
        let salient = [EffectType::Distortion, EffectType::Reverb, EffectType::Delay];
        let subtle = [
            EffectType::Equalizer,
            EffectType::Compressor,
            EffectType::Limiter,
            EffectType::StereoImager,
        ];
        let mut start = BTreeMap::new();
        let mut end = BTreeMap::new();
        for t in salient {
            start.insert(t, 1.0);
            end.insert(t, 0.6);
        }
        for t in subtle {
            start.insert(t, 0.5);
            end.insert(t, 1.0);
        }
        start.insert(EffectType::Gain, 1.0);
        end.insert(EffectType::Gain, 1.0);
        FxScheduleConfig {
            start,
            end,
            total_steps: 5000,
        }
    }
}

/// Linear interpolation between the schedule endpoints at `step`.
pub fn fx_probability_schedule(step: u64, cfg: &FxScheduleConfig) -> FxProbabilities {
    let alpha = if cfg.total_steps == 0 {
        1.0
    } else {
        (step as f64 / cfg.total_steps as f64).min(1.0)
    };
    let probs = ALL_EFFECT_TYPES
        .iter()
        .map(|&t| {
            let s = cfg.start.get(&t).copied().unwrap_or(1.0);
            let e = cfg.end.get(&t).copied().unwrap_or(1.0);
            (t, s + (e - s) * alpha)
        })
        .collect();
    FxProbabilities { probs }
}
