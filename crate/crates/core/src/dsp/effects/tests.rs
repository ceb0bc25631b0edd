use super::*;
use crate::autodiff::{grad_check, GradCheckOptions, Tape};
use crate::rng::rng_from_seed;
use rand::Rng;

/// Deterministic program material: a few sines plus light noise.
fn test_audio(seed: u64, n: usize, amp: f32) -> AudioBuffer {
    let mut rng = rng_from_seed(seed);
    let fs = 16_000.0;
    let freqs: Vec<f64> = (0..3).map(|_| rng.random_range(80.0..3000.0)).collect();
    let mk = |phase: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
        (0..n)
            .map(|t| {
                let ts = t as f64 / fs;
                let mut v = 0.0;
                for (i, f) in freqs.iter().enumerate() {
                    v += (2.0 * std::f64::consts::PI * f * ts + phase * (i + 1) as f64).sin()
                        / (i + 1) as f64;
                }
                v += 0.1 * (rng.random::<f64>() * 2.0 - 1.0);
                (v * amp as f64 / 2.0) as f32
            })
            .collect()
    };
    let l = mk(0.0, &mut rng);
    let r = mk(0.7, &mut rng);
    AudioBuffer::new(16_000, l, r).unwrap()
}

#[test]
fn all_effects_pass_through_at_identity() {
    let buf = test_audio(1, 4800, 0.7);
    for ty in ALL_EFFECT_TYPES {
        let mut spec = EffectSpec::identity(ty);
        spec.noise_seed = 42;
        let out = apply_effect(&buf, &spec).unwrap();
        let residual = out.residual_db(&buf);
        assert!(
            residual < -80.0,
            "{} identity residual {residual} dB",
            ty.name()
        );
    }
}

#[test]
fn gain_at_zero_db_is_bit_identical() {
    let buf = test_audio(2, 2000, 0.5);
    let out = apply_effect(&buf, &EffectSpec::identity(EffectType::Gain)).unwrap();
    assert_eq!(out.planar(), buf.planar());
}

#[test]
fn gain_six_db_doubles_amplitude() {
    // 10^(6.0206/20) = 2.0
    let n = 2000;
    let buf = AudioBuffer::new(16_000, vec![0.25; n], vec![0.25; n]).unwrap();
    let p = (6.0206 + 24.0) / 48.0;
    let out = apply_effect(&buf, &EffectSpec::new(EffectType::Gain, vec![p])).unwrap();
    for &v in out.planar() {
        assert!((v - 0.5).abs() < 1e-5, "got {v}");
    }
}

#[test]
fn imager_width_one_is_identity_and_zero_is_mono() {
    let buf = test_audio(3, 2000, 0.6);
    let id = apply_effect(&buf, &EffectSpec::identity(EffectType::StereoImager)).unwrap();
    assert!(id.residual_db(&buf) < -100.0);
    let mono = apply_effect(&buf, &EffectSpec::new(EffectType::StereoImager, vec![0.0])).unwrap();
    for (l, r) in mono.left().iter().zip(mono.right()) {
        assert!((l - r).abs() < 1e-6);
    }
}

#[test]
fn compressor_idle_above_peak_active_below() {
    let buf = test_audio(4, 4800, 0.5);
    // threshold at 0 dBFS: inactive
    let idle = apply_effect(
        &buf,
        &EffectSpec::new(EffectType::Compressor, vec![1.0, 0.5, 0.3, 0.3]),
    )
    .unwrap();
    assert!(idle.residual_db(&buf) < -80.0);
    // threshold at -28 dB, ratio ~8: clear gain reduction
    let squashed = apply_effect(
        &buf,
        &EffectSpec::new(EffectType::Compressor, vec![0.3, 0.4, 0.1, 0.3]),
    )
    .unwrap();
    assert!(squashed.rms() < 0.8 * buf.rms(), "{} vs {}", squashed.rms(), buf.rms());
}

#[test]
fn limiter_caps_peaks() {
    let buf = test_audio(5, 4800, 0.9);
    // threshold -12 dB (p=0.7), fast attack
    let out = apply_effect(
        &buf,
        &EffectSpec::new(EffectType::Limiter, vec![0.7, 0.1, 0.3]),
    )
    .unwrap();
    assert!(out.peak() < buf.peak());
}

#[test]
fn delay_adds_the_delayed_copy() {
    let n = 4000;
    let mut l = vec![0.0f32; n];
    l[0] = 1.0;
    let buf = AudioBuffer::new(16_000, l, vec![0.0; n]).unwrap();
    // 50 ms = 800 samples, no feedback, full mix
    let out = apply_effect(&buf, &EffectSpec::new(EffectType::Delay, vec![0.0, 0.0, 1.0])).unwrap();
    assert!((out.left()[0] - 1.0).abs() < 1e-6);
    assert!((out.left()[800] - 1.0).abs() < 1e-6);
    assert!(out.left()[400].abs() < 1e-6);
}

#[test]
fn reverb_is_seed_deterministic() {
    let buf = test_audio(6, 3000, 0.5);
    let mut spec = EffectSpec::new(EffectType::Reverb, vec![0.4, 0.8]);
    spec.noise_seed = 7;
    let a = apply_effect(&buf, &spec).unwrap();
    let b = apply_effect(&buf, &spec).unwrap();
    assert_eq!(a.planar(), b.planar());
    spec.noise_seed = 8;
    let c = apply_effect(&buf, &spec).unwrap();
    assert!(a.residual_db(&c) > -40.0, "different seeds should differ");
}

#[test]
fn invalid_params_rejected() {
    assert!(EffectSpec::new(EffectType::Gain, vec![1.2]).validate().is_err());
    assert!(EffectSpec::new(EffectType::Gain, vec![-0.1]).validate().is_err());
    assert!(EffectSpec::new(EffectType::Gain, vec![0.5, 0.5]).validate().is_err());
    assert!(EffectSpec::new(EffectType::Equalizer, vec![f64::NAN; 4])
        .validate()
        .is_err());
}

/// Finite-difference check of one effect's parameter gradients.
fn check_param_grads(ty: EffectType, params: Vec<f64>, seed: u64, tol: f64) {
    let buf = test_audio(100 + seed, 1600, 0.5);
    let x = buf.planar_f64();
    let n = buf.len();
    // fixed weights make the scalar loss sensitive to every sample
    let weights: Vec<f64> = (0..2 * n).map(|i| ((i as f64) * 0.013).sin() + 0.2).collect();
    let err = grad_check(
        |p| {
            let mut tape = Tape::new();
            let xt = tape.constant(x.clone(), &[2, n]);
            let pt = tape.leaf(p.to_vec(), &[p.len()]);
            let y = apply_effect_tape(&mut tape, xt, pt, ty, 16_000.0, 77)?;
            let wt = tape.constant(weights.clone(), &[2, n]);
            let prod = tape.mul(y, wt)?;
            let loss = tape.sum(prod);
            tape.backward(loss)?;
            Ok((tape.values(loss)[0], tape.grad(pt).unwrap().to_vec()))
        },
        &params,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(err < tol, "{} param grad rel err {err}", ty.name());
}

/// Finite-difference check of an effect's input gradients (sampled coords).
fn check_input_grads(ty: EffectType, params: Vec<f64>, seed: u64, tol: f64) {
    let buf = test_audio(200 + seed, 1200, 0.5);
    let x = buf.planar_f64();
    let n = buf.len();
    let weights: Vec<f64> = (0..2 * n).map(|i| ((i as f64) * 0.029).cos() + 0.1).collect();
    let opts = GradCheckOptions {
        max_coords: Some(24),
        ..GradCheckOptions::default()
    };
    let err = grad_check(
        |xv| {
            let mut tape = Tape::new();
            let xt = tape.leaf(xv.to_vec(), &[2, n]);
            let pt = tape.constant(params.clone(), &[params.len()]);
            let y = apply_effect_tape(&mut tape, xt, pt, ty, 16_000.0, 77)?;
            let wt = tape.constant(weights.clone(), &[2, n]);
            let prod = tape.mul(y, wt)?;
            let loss = tape.sum(prod);
            tape.backward(loss)?;
            Ok((tape.values(loss)[0], tape.grad(xt).unwrap().to_vec()))
        },
        &x,
        &opts,
    )
    .unwrap();
    assert!(err < tol, "{} input grad rel err {err}", ty.name());
}

#[test]
fn gradcheck_gain() {
    check_param_grads(EffectType::Gain, vec![0.7], 1, 1e-5);
    check_input_grads(EffectType::Gain, vec![0.3], 1, 1e-5);
}

#[test]
fn gradcheck_distortion() {
    check_param_grads(EffectType::Distortion, vec![0.4, 0.6], 2, 1e-5);
    check_input_grads(EffectType::Distortion, vec![0.4, 0.6], 2, 1e-5);
}

#[test]
fn gradcheck_equalizer() {
    check_param_grads(EffectType::Equalizer, vec![0.8, 0.3, 0.65, 0.2], 3, 1e-4);
    check_input_grads(EffectType::Equalizer, vec![0.8, 0.3, 0.65, 0.2], 3, 1e-4);
}

#[test]
fn gradcheck_compressor() {
    check_param_grads(EffectType::Compressor, vec![0.35, 0.4, 0.25, 0.3], 4, 1e-4);
    check_input_grads(EffectType::Compressor, vec![0.35, 0.4, 0.25, 0.3], 4, 1e-4);
}

#[test]
fn gradcheck_limiter() {
    check_param_grads(EffectType::Limiter, vec![0.45, 0.5, 0.3], 5, 1e-4);
    check_input_grads(EffectType::Limiter, vec![0.45, 0.5, 0.3], 5, 1e-4);
}

#[test]
fn gradcheck_imager() {
    check_param_grads(EffectType::StereoImager, vec![0.8], 6, 1e-5);
    check_input_grads(EffectType::StereoImager, vec![0.8], 6, 1e-5);
}

#[test]
fn gradcheck_delay() {
    // time sits on its grid; feedback and mix carry gradients
    check_param_grads(EffectType::Delay, vec![0.03, 0.5, 0.7], 7, 1e-4);
    check_input_grads(EffectType::Delay, vec![0.03, 0.5, 0.7], 7, 1e-4);
}

#[test]
fn gradcheck_reverb() {
    check_param_grads(EffectType::Reverb, vec![0.5, 0.6], 8, 1e-4);
    check_input_grads(EffectType::Reverb, vec![0.5, 0.6], 8, 1e-4);
}

#[test]
fn f32_and_f64_renders_agree() {
    let buf = test_audio(9, 2400, 0.5);
    for ty in ALL_EFFECT_TYPES {
        let mut rng = rng_from_seed(ty as u64);
        let params: Vec<f64> = (0..ty.param_count()).map(|_| rng.random()).collect();
        let mut spec = EffectSpec::new(ty, params.clone());
        spec.noise_seed = 5;
        let f32_out = apply_effect(&buf, &spec).unwrap();
        let x = buf.planar_f64();
        let n = buf.len();
        let (l64, r64) = process::<f64>(ty, &x[..n], &x[n..], &params, 16_000.0, 5);
        let mut max_diff = 0.0f64;
        for (a, b) in f32_out.left().iter().zip(&l64) {
            max_diff = max_diff.max((*a as f64 - b).abs());
        }
        for (a, b) in f32_out.right().iter().zip(&r64) {
            max_diff = max_diff.max((*a as f64 - b).abs());
        }
        assert!(max_diff < 1e-3, "{}: f32/f64 diverge by {max_diff}", ty.name());
    }
}
