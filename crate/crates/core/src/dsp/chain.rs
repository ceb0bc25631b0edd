//! Ordered effect chains: sampling, identity, and application.

use super::buffer::AudioBuffer;
use super::effects::{
    apply_effect, apply_effect_tape, EffectSpec, EffectType, ALL_EFFECT_TYPES,
};
use crate::autodiff::{Tape, TensorId};
use crate::datagen::FxProbabilities;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Opaque chain identity: equality of effect types, order and parameters.
/// The render seed is deliberately excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChainId(pub u64);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FxChain {
    pub effects: Vec<EffectSpec>,
    pub rng_seed: u64,
}

impl FxChain {
    pub fn new(effects: Vec<EffectSpec>, rng_seed: u64) -> FxChain {
        let mut chain = FxChain { effects, rng_seed };
        for (i, e) in chain.effects.iter_mut().enumerate() {
            e.noise_seed = derive_seed(rng_seed, i as u64);
        }
        chain
    }

    pub fn validate(&self) -> Result<()> {
        if self.effects.is_empty() || self.effects.len() > 8 {
            return Err(Error::InvalidParam(format!(
                "chain length {} outside [1, 8]",
                self.effects.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.effects {
            e.validate()?;
            if !seen.insert(e.effect_type) {
                return Err(Error::InvalidParam(format!(
                    "duplicate effect type {} in chain",
                    e.effect_type.name()
                )));
            }
        }
        Ok(())
    }

    /// Identity over types + order + exact parameter bits.
    pub fn chain_id(&self) -> ChainId {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x100_0000_01b3);
        };
        for e in &self.effects {
            mix(e.effect_type as u64 + 1);
            for &p in &e.params {
                mix(p.to_bits());
            }
        }
        ChainId(h)
    }

    pub fn effect_types(&self) -> Vec<EffectType> {
        self.effects.iter().map(|e| e.effect_type).collect()
    }
}

/// Sample a chain: count uniform in [min, max], types admitted by the
/// schedule probabilities and drawn without replacement, order shuffled,
/// parameters uniform in [0,1].
pub fn sample_chain(
    rng: &mut impl Rng,
    schedule: &FxProbabilities,
    n_range: (usize, usize),
) -> Result<FxChain> {
    let (lo, hi) = n_range;
    if lo < 1 || lo > hi || hi > 8 {
        return Err(Error::InvalidParam(format!(
            "chain count range ({lo}, {hi}) outside 1..=8"
        )));
    }
    let count = rng.random_range(lo..=hi);
    let mut admitted: Vec<EffectType> = ALL_EFFECT_TYPES
        .iter()
        .copied()
        .filter(|&t| rng.random::<f64>() < schedule.probability(t))
        .collect();
    if admitted.is_empty() {
        // a schedule that excludes everything still yields a gain chain
        admitted.push(EffectType::Gain);
    }
    if admitted.len() < count {
        // top up with uniformly chosen leftovers so the count stays uniform
        let mut rest: Vec<EffectType> = ALL_EFFECT_TYPES
            .iter()
            .copied()
            .filter(|t| !admitted.contains(t))
            .collect();
        rest.shuffle(rng);
        admitted.extend(rest.into_iter().take(count - admitted.len()));
    }
    admitted.shuffle(rng);
    admitted.truncate(count);
    let effects = admitted
        .into_iter()
        .map(|t| {
            let params = (0..t.param_count()).map(|_| rng.random::<f64>()).collect();
            EffectSpec::new(t, params)
        })
        .collect();
    Ok(FxChain::new(effects, rng.random()))
}

/// Render a chain, effects applied in listed order. Deterministic given
/// (buffer, chain); reverb noise comes from the chain seed.
pub fn apply_chain(buffer: &AudioBuffer, chain: &FxChain) -> Result<AudioBuffer> {
    chain.validate()?;
    let mut out = buffer.clone();
    for spec in &chain.effects {
        out = apply_effect(&out, spec)?;
    }
    Ok(out)
}

/// Tape version for gradient-based parameter fitting: each effect's
/// normalized parameters arrive as a separate tensor.
pub fn apply_chain_tape(
    tape: &mut Tape,
    x: TensorId,
    effects: &[(EffectType, TensorId, u64)],
    sample_rate: f64,
) -> Result<TensorId> {
    let mut cur = x;
    for &(ty, params, seed) in effects {
        cur = apply_effect_tape(tape, cur, params, ty, sample_rate, seed)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn all_on() -> FxProbabilities {
        FxProbabilities::constant(1.0)
    }

    #[test]
    fn fixed_seed_reproduces_chain() {
        let mut r1 = rng_from_seed(99);
        let mut r2 = rng_from_seed(99);
        let a = sample_chain(&mut r1, &all_on(), (1, 5)).unwrap();
        let b = sample_chain(&mut r2, &all_on(), (1, 5)).unwrap();
        assert_eq!(a.chain_id(), b.chain_id());
        assert_eq!(a.rng_seed, b.rng_seed);
    }

    #[test]
    fn full_range_uses_all_eight_types() {
        let mut rng = rng_from_seed(7);
        let chain = sample_chain(&mut rng, &all_on(), (8, 8)).unwrap();
        assert_eq!(chain.effects.len(), 8);
        let mut types = chain.effect_types();
        types.sort();
        types.dedup();
        assert_eq!(types.len(), 8);
        chain.validate().unwrap();
    }

    #[test]
    fn count_distribution_is_uniform() {
        // chi-squared test at 0.01 significance, df = 4 -> critical 13.277
        let mut rng = rng_from_seed(1234);
        let mut counts = [0usize; 5];
        let samples = 10_000;
        for _ in 0..samples {
            let chain = sample_chain(&mut rng, &all_on(), (1, 5)).unwrap();
            counts[chain.effects.len() - 1] += 1;
        }
        let expected = samples as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 13.277, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn excluded_schedule_falls_back_to_gain() {
        let mut rng = rng_from_seed(5);
        let chain = sample_chain(&mut rng, &FxProbabilities::constant(0.0), (1, 1)).unwrap();
        assert_eq!(chain.effects.len(), 1);
        assert_eq!(chain.effects[0].effect_type, EffectType::Gain);
    }

    #[test]
    fn chain_id_tracks_params_not_seed() {
        let spec = EffectSpec::new(EffectType::Gain, vec![0.5]);
        let a = FxChain::new(vec![spec.clone()], 1);
        let b = FxChain::new(vec![spec.clone()], 2);
        assert_eq!(a.chain_id(), b.chain_id());
        let mut spec2 = spec;
        spec2.params[0] = 0.6;
        let c = FxChain::new(vec![spec2], 1);
        assert_ne!(a.chain_id(), c.chain_id());
    }

    #[test]
    fn rejects_duplicate_types_and_bad_length() {
        let g = EffectSpec::identity(EffectType::Gain);
        let chain = FxChain::new(vec![g.clone(), g.clone()], 0);
        assert!(chain.validate().is_err());
        let empty = FxChain::new(vec![], 0);
        assert!(empty.validate().is_err());
    }
}
