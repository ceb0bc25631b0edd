//! Property tests for the spec-level invariants that hold over whole input
//! families rather than single examples.

use fxrep_core::autodiff::Tape;
use fxrep_core::datagen::FxProbabilities;
use fxrep_core::dsp::buffer::AudioBuffer;
use fxrep_core::dsp::chain::sample_chain;
use fxrep_core::dsp::loudness::measure_lufs;
use fxrep_core::dsp::mrstft::{mrstft_loss, MrStftConfig};
use fxrep_core::rng::rng_from_seed;
use fxrep_core::training::{lambda_schedule, ntxent_mixture, LossWeights};
use proptest::prelude::*;
use rand::Rng;

fn tone_buffer(seed: u64, amp: f64) -> AudioBuffer {
    let mut rng = rng_from_seed(seed);
    let n = 16_000;
    let f1 = rng.random_range(100.0..2000.0);
    let f2 = rng.random_range(100.0..2000.0);
    let l: Vec<f32> = (0..n)
        .map(|t| {
            let ts = t as f64 / 16_000.0;
            (amp * ((2.0 * std::f64::consts::PI * f1 * ts).sin()
                + 0.5 * (2.0 * std::f64::consts::PI * f2 * ts).sin())) as f32
        })
        .collect();
    let r: Vec<f32> = l.iter().map(|&v| 0.8 * v).collect();
    AudioBuffer::new(16_000, l, r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Adding g dB of scalar gain shifts integrated loudness by g +/- 0.1 LU.
    #[test]
    fn loudness_is_gain_equivariant(seed in 0u64..500, gain_db in -20.0f64..12.0) {
        let buf = tone_buffer(seed, 0.25);
        let base = measure_lufs(&buf).unwrap();
        let mut scaled = buf.clone();
        scaled.scale(10.0f32.powf(gain_db as f32 / 20.0));
        let shifted = measure_lufs(&scaled).unwrap();
        prop_assert!((shifted - base - gain_db).abs() < 0.1,
            "base {base}, +{gain_db} dB -> {shifted}");
    }

    /// mrstft_loss(a, a) = 0 and mrstft_loss >= 0 for random signals.
    #[test]
    fn mrstft_is_a_premetric(seed_a in 0u64..200, seed_b in 200u64..400) {
        let a = tone_buffer(seed_a, 0.3);
        let b = tone_buffer(seed_b, 0.4);
        let cfg = MrStftConfig::default();
        prop_assert_eq!(mrstft_loss(&a, &a, &cfg).unwrap(), 0.0);
        prop_assert!(mrstft_loss(&a, &b, &cfg).unwrap() >= 0.0);
    }

    /// Curriculum weights always sum to exactly one.
    #[test]
    fn lambda_weights_sum_to_one(step in 0u64..10_000, start in 0u64..2_000, len in 1u64..4_000) {
        let w = LossWeights {
            ramp_start_step: start,
            ramp_end_step: start + len,
            ..LossWeights::default()
        };
        let (lm, li) = lambda_schedule(step, &w);
        prop_assert_eq!(lm + li, 1.0);
        prop_assert!((0.0..=1.0).contains(&li));
    }

    /// Every sampled chain is valid: 1..=8 unique typed effects, params in
    /// the unit box.
    #[test]
    fn sampled_chains_are_valid(seed in 0u64..2000, lo in 1usize..4, extra in 0usize..5) {
        let mut rng = rng_from_seed(seed);
        let chain = sample_chain(&mut rng, &FxProbabilities::constant(0.7), (lo, lo + extra)).unwrap();
        prop_assert!(chain.validate().is_ok());
        prop_assert!(chain.effects.len() >= lo && chain.effects.len() <= lo + extra);
    }

    /// The mixture loss is non-negative and exactly zero when every row
    /// coincides with its partner and all pairs are mutually orthogonal.
    #[test]
    fn ntxent_nonnegative_on_random_rows(seed in 0u64..300, n_pairs in 1usize..4) {
        let mut rng = rng_from_seed(seed);
        let dim = 12;
        let rows = 2 * n_pairs;
        let mut vals = Vec::with_capacity(rows * dim);
        for _ in 0..rows {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            vals.extend(raw.iter().map(|v| v / norm));
        }
        let mut tape = Tape::new();
        let z = tape.constant(vals, &[rows, dim]);
        let loss = ntxent_mixture(&mut tape, z, n_pairs, 0.1).unwrap();
        prop_assert!(tape.values(loss)[0] >= 0.0);
    }
}
