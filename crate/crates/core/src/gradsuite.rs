//! The full gradient-check suite: every differentiable primitive, every
//! effect's continuous parameters, the encoder, the extractor, both
//! contrastive losses and the multi-resolution STFT loss, all verified
//! against central finite differences in double precision.

use crate::autodiff::{grad_check, GradCheckOptions, Tape, TensorId};
use crate::dsp::chain::apply_chain_tape;
use crate::dsp::effects::{apply_effect_tape, EffectType, ALL_EFFECT_TYPES};
use crate::dsp::mrstft::{mrstft_loss_tape, MrStftConfig};
use crate::error::Result;
use crate::model::{
    bind_params, encode, extract, init_params, logmel_tape, query_vector, MelFrontend,
    ModelConfig, QueryMode, QuerySource,
};
use crate::rng::rng_from_seed;
use crate::training::{ntxent_instrument, ntxent_mixture};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn weighted_scalar(tape: &mut Tape, out: TensorId) -> Result<TensorId> {
    let n = tape.values(out).len();
    if n == 1 {
        return Ok(out);
    }
    let w: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.0173).sin() + 0.25).collect();
    let shape = tape.shape(out).to_vec();
    let wt = tape.constant(w, &shape);
    let prod = tape.mul(out, wt)?;
    Ok(tape.sum(prod))
}

fn check<F>(name: &str, input: Vec<f64>, tol: f64, max_coords: Option<usize>, f: F) -> Result<CheckReport>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    let n = input.len();
    let opts = GradCheckOptions {
        max_coords,
        ..GradCheckOptions::default()
    };
    let err = grad_check(
        |x| {
            let mut tape = Tape::new();
            let xt = tape.leaf(x.to_vec(), &[n]);
            let out = f(&mut tape, xt)?;
            let loss = weighted_scalar(&mut tape, out)?;
            tape.backward(loss)?;
            Ok((tape.values(loss)[0], tape.grad(xt).unwrap().to_vec()))
        },
        &input,
        &opts,
    )?;
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: err,
        tolerance: tol,
    })
}

fn smooth_audio(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let freqs: Vec<f64> = (0..3).map(|_| rng.random_range(60.0..3200.0)).collect();
    (0..n)
        .map(|t| {
            let ts = t as f64 / 16_000.0;
            let mut v = 0.0;
            for (i, f) in freqs.iter().enumerate() {
                v += (2.0 * std::f64::consts::PI * f * ts).sin() / (i + 1) as f64;
            }
            v * 0.3 + 0.05 * (rng.random::<f64>() * 2.0 - 1.0)
        })
        .collect()
}

/// Run the entire suite. Small inputs keep the runtime well under the five
/// CPU-minute budget while exercising every backward rule.
pub fn run_suite() -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    let mut rng = rng_from_seed(0xACCE);

    // -- primitives ------------------------------------------------------
    let x8: Vec<f64> = (0..8).map(|_| rng.random_range(0.2..1.4)).collect();
    reports.push(check("primitive.tanh", x8.clone(), 1e-6, None, |t, x| {
        Ok(t.tanh(x))
    })?);
    reports.push(check("primitive.exp", x8.clone(), 1e-6, None, |t, x| Ok(t.exp(x)))?);
    reports.push(check("primitive.log", x8.clone(), 1e-6, None, |t, x| Ok(t.log(x)))?);
    reports.push(check("primitive.sqrt", x8.clone(), 1e-6, None, |t, x| Ok(t.sqrt(x)))?);
    reports.push(check(
        "primitive.leaky_relu",
        (0..8).map(|_| rng.random_range(0.1..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
        1e-6,
        None,
        |t, x| Ok(t.leaky_relu(x, 0.1)),
    )?);
    reports.push(check(
        "primitive.add_mul_div",
        (0..12).map(|_| rng.random_range(0.3..1.2)).collect(),
        1e-6,
        None,
        |t, x| {
            let a = t.slice_rows(x, 0, 6)?;
            let b = t.slice_rows(x, 6, 6)?;
            let s = t.add(a, b)?;
            let m = t.mul(s, a)?;
            t.div(m, b)
        },
    )?);
    reports.push(check(
        "primitive.matmul",
        (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
        1e-6,
        None,
        |t, x| {
            let a = t.slice_rows(x, 0, 6)?;
            let a = t.reshape(a, &[2, 3])?;
            let b = t.slice_rows(x, 6, 6)?;
            let b = t.reshape(b, &[3, 2])?;
            t.matmul(a, b)
        },
    )?);
    reports.push(check(
        "primitive.conv1d",
        (0..38).map(|_| rng.random_range(-1.0..1.0)).collect(),
        1e-6,
        None,
        |t, x| {
            let inp = t.slice_rows(x, 0, 20)?;
            let inp = t.reshape(inp, &[2, 10])?;
            let w = t.slice_rows(x, 20, 18)?;
            let w = t.reshape(w, &[3, 2, 3])?;
            t.conv1d(inp, w, 1, 1)
        },
    )?);
    reports.push(check(
        "primitive.conv2d",
        (0..94).map(|_| rng.random_range(-1.0..1.0)).collect(),
        1e-5,
        None,
        |t, x| {
            let inp = t.slice_rows(x, 0, 40)?;
            let inp = t.reshape(inp, &[2, 5, 4])?;
            let w = t.slice_rows(x, 40, 54)?;
            let w = t.reshape(w, &[3, 2, 3, 3])?;
            t.conv2d(inp, w, 2, 1)
        },
    )?);
    reports.push(check(
        "primitive.l2_normalize",
        (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
        1e-6,
        None,
        |t, x| Ok(t.l2_normalize(x)),
    )?);
    {
        let basis = crate::autodiff::DftBasis::hann(64, 16);
        reports.push(check(
            "primitive.framed_dft",
            smooth_audio(11, 200),
            1e-4,
            None,
            move |t, x| {
                let spec = t.framed_dft(x, &basis)?;
                let sq = t.mul(spec, spec)?;
                let s = t.sum(sq);
                Ok(t.sqrt(s))
            },
        )?);
    }
    reports.push(check(
        "primitive.dropout",
        (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
        1e-6,
        None,
        |t, x| {
            let mut mask_rng = rng_from_seed(99);
            Ok(t.dropout(x, 0.5, &mut mask_rng))
        },
    )?);

    // -- effects: parameters and input -----------------------------------
    let n = 1600;
    let audio: Vec<f64> = {
        let l = smooth_audio(21, n);
        let r = smooth_audio(22, n);
        l.into_iter().chain(r).collect()
    };
    for ty in ALL_EFFECT_TYPES {
        let params: Vec<f64> = match ty {
            EffectType::Compressor => vec![0.35, 0.4, 0.25, 0.3],
            EffectType::Limiter => vec![0.45, 0.5, 0.3],
            EffectType::Delay => vec![0.03, 0.5, 0.7],
            other => (0..other.param_count()).map(|_| 0.3 + 0.4 * rng.random::<f64>()).collect(),
        };
        let audio_c = audio.clone();
        reports.push(check(
            &format!("effect.{}.params", ty.name()),
            params.clone(),
            1e-4,
            None,
            move |t, p| {
                let x = t.constant(audio_c.clone(), &[2, n]);
                apply_effect_tape(t, x, p, ty, 16_000.0, 77)
            },
        )?);
        let params_c = params.clone();
        reports.push(check(
            &format!("effect.{}.input", ty.name()),
            audio.clone(),
            1e-4,
            Some(16),
            move |t, x| {
                let xm = t.reshape(x, &[2, n])?;
                let p = t.constant(params_c.clone(), &[params_c.len()]);
                apply_effect_tape(t, xm, p, ty, 16_000.0, 77)
            },
        )?);
    }

    // -- full chain rendering -> STFT loss -------------------------------
    {
        let n2 = 1200;
        let dry: Vec<f64> = {
            let l = smooth_audio(31, n2);
            let r = smooth_audio(32, n2);
            l.into_iter().chain(r).collect()
        };
        let wet: Vec<f64> = {
            let l = smooth_audio(33, n2);
            let r = smooth_audio(34, n2);
            l.into_iter().chain(r).collect()
        };
        let cfg = MrStftConfig {
            windows: vec![64, 128],
        };
        // equalizer + compressor + gain params packed into one vector
        let packed: Vec<f64> = vec![0.7, 0.4, 0.6, 0.3, 0.35, 0.4, 0.25, 0.3, 0.7];
        reports.push(check(
            "chain.render_to_mrstft.params",
            packed,
            1e-4,
            None,
            move |t, p| {
                let x = t.constant(dry.clone(), &[2, n2]);
                let eq = t.slice_rows(p, 0, 4)?;
                let comp = t.slice_rows(p, 4, 4)?;
                let gain = t.slice_rows(p, 8, 1)?;
                let rendered = apply_chain_tape(
                    t,
                    x,
                    &[
                        (EffectType::Equalizer, eq, 1),
                        (EffectType::Compressor, comp, 2),
                        (EffectType::Gain, gain, 3),
                    ],
                    16_000.0,
                )?;
                let target = t.constant(wet.clone(), &[2, n2]);
                mrstft_loss_tape(t, rendered, target, &cfg)
            },
        )?);
    }

    // -- mrstft w.r.t. audio ----------------------------------------------
    {
        let n2 = 900;
        let a: Vec<f64> = {
            let l = smooth_audio(41, n2);
            let r = smooth_audio(42, n2);
            l.into_iter().chain(r).collect()
        };
        let b: Vec<f64> = {
            let l = smooth_audio(43, n2);
            let r = smooth_audio(44, n2);
            l.into_iter().chain(r).collect()
        };
        let cfg = MrStftConfig {
            windows: vec![64, 128, 256],
        };
        reports.push(check("mrstft.input", a, 1e-4, Some(24), move |t, x| {
            let xm = t.reshape(x, &[2, n2])?;
            let bt = t.constant(b.clone(), &[2, n2]);
            mrstft_loss_tape(t, xm, bt, &cfg)
        })?);
    }

    // -- model: encoder, extractor, audio-to-embedding --------------------
    let mut mcfg = ModelConfig::desk(vec!["a".into(), "b".into()]);
    mcfg.segment_secs = 0.25;
    mcfg.conv_widths = vec![4, 8];
    let store = init_params(&mcfg, 5);
    let frontend = MelFrontend::new(&mcfg);
    {
        let feats: Vec<f64> = (0..mcfg.frames() * mcfg.mel_bins)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let frames = mcfg.frames();
        let mels = mcfg.mel_bins;
        let w0 = store.get("enc.conv1.w")?.clone();
        let store_c = store.clone();
        let mcfg_c = mcfg.clone();
        let feats_c = feats.clone();
        reports.push(check(
            "model.encoder.weights",
            w0.values.clone(),
            1e-4,
            Some(20),
            move |t, w| {
                // rebuild bindings with the perturbed weight tensor swapped in
                let mut s2 = store_c.clone();
                s2.get_mut("enc.conv1.w")?.values = t.values(w).to_vec();
                let b = bind_params(t, &s2, false);
                let wid = t.reshape(w, &w0.shape)?;
                // splice the leaf into the graph by re-running the conv stack
                let ft = t.constant(feats_c.clone(), &[frames, mels]);
                let mut x = t.reshape(ft, &[1, frames, mels])?;
                for i in 0..mcfg_c.conv_widths.len() {
                    let wi = if i == 1 { wid } else { b.id(&format!("enc.conv{i}.w"))? };
                    let bi = b.id(&format!("enc.conv{i}.b"))?;
                    let c = t.conv2d(x, wi, 2, 1)?;
                    let c = t.bias_add_chan(c, bi)?;
                    x = t.leaky_relu(c, mcfg_c.leaky_slope);
                }
                let pooled = t.spatial_mean(x)?;
                let c_last = *mcfg_c.conv_widths.last().unwrap();
                let row = t.reshape(pooled, &[1, c_last])?;
                let wfc = b.id("enc.fc.w")?;
                let bfc = b.id("enc.fc.b")?;
                let y = t.matmul_nt(row, wfc)?;
                let brow = t.reshape(bfc, &[1, mcfg_c.embed_dim])?;
                let z = t.add(y, brow)?;
                Ok(t.l2_normalize(z))
            },
        )?);
    }
    {
        // whole audio -> logmel -> encoder path (parameter-matching route)
        let n2 = mcfg.segment_samples();
        let audio: Vec<f64> = {
            let l = smooth_audio(51, n2);
            let r = smooth_audio(52, n2);
            l.into_iter().chain(r).collect()
        };
        let store_c = store.clone();
        let mcfg_c = mcfg.clone();
        reports.push(check(
            "model.audio_to_embedding.input",
            audio,
            1e-4,
            Some(16),
            move |t, x| {
                let xm = t.reshape(x, &[2, n2])?;
                let feats = logmel_tape(t, xm, &frontend)?;
                let b = bind_params(t, &store_c, false);
                encode(t, &b, &mcfg_c, feats)
            },
        )?);
    }
    {
        let w1 = store.get("ext.fc1.w")?.clone();
        let store_c = store.clone();
        let mcfg_c = mcfg.clone();
        let z_fixed: Vec<f64> = {
            let raw: Vec<f64> = (0..mcfg.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let nn = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            raw.iter().map(|v| v / nn).collect()
        };
        reports.push(check(
            "model.extractor.weights",
            w1.values.clone(),
            1e-4,
            Some(20),
            move |t, w| {
                let mut s2 = store_c.clone();
                s2.get_mut("ext.fc1.w")?.values = t.values(w).to_vec();
                let b = bind_params(t, &s2, false);
                // run extract with the perturbed leaf in place of fc1
                let z = t.constant(z_fixed.clone(), &[1, mcfg_c.embed_dim]);
                let mut qrng = rng_from_seed(1);
                let q = query_vector(t, &b, &mcfg_c, QuerySource::Class("a"), QueryMode::Eval, &mut qrng)?;
                let qf = t.reshape(q, &[mcfg_c.query_dim])?;
                let zf = t.reshape(z, &[mcfg_c.embed_dim])?;
                let cat = t.concat(&[qf, zf])?;
                let x = t.reshape(cat, &[1, mcfg_c.query_dim + mcfg_c.embed_dim])?;
                let w1 = t.reshape(w, &w1.shape)?;
                let h = t.matmul_nt(x, w1)?;
                let b1 = b.id("ext.fc1.b")?;
                let b1r = t.reshape(b1, &[1, mcfg_c.extractor_hidden])?;
                let h = t.add(h, b1r)?;
                let h = t.leaky_relu(h, mcfg_c.leaky_slope);
                let w2 = b.id("ext.fc2.w")?;
                let b2 = b.id("ext.fc2.b")?;
                let h2 = t.matmul_nt(h, w2)?;
                let b2r = t.reshape(b2, &[1, mcfg_c.extractor_hidden])?;
                let h2 = t.add(h2, b2r)?;
                let h2 = t.leaky_relu(h2, mcfg_c.leaky_slope);
                let w3 = b.id("ext.fc3.w")?;
                let b3 = b.id("ext.fc3.b")?;
                let o = t.matmul_nt(h2, w3)?;
                let b3r = t.reshape(b3, &[1, mcfg_c.embed_dim])?;
                let o = t.add(o, b3r)?;
                Ok(t.l2_normalize(o))
            },
        )?);
    }
    {
        // extractor as shipped, gradient w.r.t. the mixture embedding
        let store_c = store.clone();
        let mcfg_c = mcfg.clone();
        let raw: Vec<f64> = (0..mcfg.embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        reports.push(check(
            "model.extractor.input",
            raw,
            1e-4,
            None,
            move |t, x| {
                let zn = t.l2_normalize(x);
                let z = t.reshape(zn, &[1, mcfg_c.embed_dim])?;
                let b = bind_params(t, &store_c, false);
                let mut qrng = rng_from_seed(2);
                let q = query_vector(t, &b, &mcfg_c, QuerySource::Class("b"), QueryMode::Eval, &mut qrng)?;
                extract(t, &b, &mcfg_c, q, z)
            },
        )?);
    }

    // -- contrastive losses ------------------------------------------------
    {
        let rows = 6;
        let dim = 8;
        let raw: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        reports.push(check("loss.ntxent_mixture", raw.clone(), 1e-4, None, move |t, x| {
            let m = t.reshape(x, &[rows, dim])?;
            let z = t.l2_normalize(m);
            ntxent_mixture(t, z, 2, 0.1)
        })?);
        reports.push(check(
            "loss.ntxent_instrument",
            raw,
            1e-4,
            None,
            move |t, x| {
                let m = t.reshape(x, &[rows, dim])?;
                let z = t.l2_normalize(m);
                let a = t.slice_rows(z, 0, 4)?;
                let b = t.slice_rows(z, 2, 4)?;
                ntxent_instrument(t, &[a, b], 2, 0.1, true)
            },
        )?);
    }

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_whole_suite_passes() {
        let reports = run_suite().unwrap();
        assert!(reports.len() > 25);
        for r in &reports {
            assert!(
                r.passed(),
                "{}: rel err {} >= tol {}",
                r.name,
                r.max_rel_err,
                r.tolerance
            );
        }
    }
}
