//! Convolution reverb with a synthesized impulse response: seed-fixed white
//! noise shaped by exp(-t/tau), energy-normalized by the envelope, mixed as
//! y = (1-wet)*x + wet*(x (*) ir) with the tail truncated to the input
//! length.

use crate::dsp::fft::convolve_stereo_truncated;
use crate::dsp::{c, Real};
use crate::rng::rng_from_seed;
use rand::Rng;

fn denorm(params: &[f64]) -> (f64, f64) {
    (0.1 + 1.9 * params[0], 0.5 * params[1])
}

/// Standard-normal noise via Box-Muller, deterministic per seed.
fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        out.push(r * a.cos());
        if out.len() < n {
            out.push(r * a.sin());
        }
    }
    out
}

struct IrParts {
    ir: Vec<f64>,
    /// d ir / d tau
    dir: Vec<f64>,
}

fn build_ir(n: usize, fs: f64, tau: f64, seed: u64, with_grad: bool) -> IrParts {
    let nz = noise(seed, n);
    let mut env = vec![0.0; n];
    let mut energy = 0.0;
    for (t, e) in env.iter_mut().enumerate() {
        let v = (-(t as f64 / fs) / tau).exp();
        *e = v;
        energy += v * v;
    }
    let norm = 1.0 / energy.sqrt();
    let ir: Vec<f64> = nz.iter().zip(&env).map(|(&z, &e)| z * e * norm).collect();
    let mut dir = Vec::new();
    if with_grad {
        // de/dtau = e * t_sec / tau^2; dnorm/dtau = -norm^3 * sum(e*de)
        let mut sum_ede = 0.0;
        for (t, &e) in env.iter().enumerate() {
            sum_ede += e * e * (t as f64 / fs) / (tau * tau);
        }
        let dnorm = -norm * norm * norm * sum_ede;
        dir = (0..n)
            .map(|t| {
                let e = env[t];
                let de = e * (t as f64 / fs) / (tau * tau);
                nz[t] * (de * norm + e * dnorm)
            })
            .collect();
    }
    IrParts { ir, dir }
}

pub fn process<T: Real>(
    left: &[T],
    right: &[T],
    params: &[f64],
    fs: f64,
    seed: u64,
) -> (Vec<T>, Vec<T>) {
    let (tau, wet) = denorm(params);
    let parts = build_ir(left.len(), fs, tau, seed, false);
    let (cl, cr) = convolve_stereo_truncated(left, right, &parts.ir);
    let w: T = c(wet);
    let dry: T = c(1.0 - wet);
    (
        left.iter().zip(&cl).map(|(&x, &v)| dry * x + w * v).collect(),
        right.iter().zip(&cr).map(|(&x, &v)| dry * x + w * v).collect(),
    )
}

pub fn backward(
    left: &[f64],
    right: &[f64],
    params: &[f64],
    fs: f64,
    seed: u64,
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = left.len();
    let (tau, wet) = denorm(params);
    let parts = build_ir(n, fs, tau, seed, true);

    let (cl, cr) = convolve_stereo_truncated(left, right, &parts.ir);

    // d/dwet = sum gy * (conv - x)
    let mut d_wet = 0.0;
    for t in 0..n {
        d_wet += g_left[t] * (cl[t] - left[t]) + g_right[t] * (cr[t] - right[t]);
    }

    // d/dtau = wet * sum gy * (x (*) dir)
    let (dl_tau, dr_tau) = convolve_stereo_truncated(left, right, &parts.dir);
    let mut d_tau = 0.0;
    for t in 0..n {
        d_tau += g_left[t] * dl_tau[t] + g_right[t] * dr_tau[t];
    }
    d_tau *= wet;

    // d/dx: (1-wet)*gy + wet * correlate(gy, ir), via reversed convolution
    let grl: Vec<f64> = g_left.iter().rev().copied().collect();
    let grr: Vec<f64> = g_right.iter().rev().copied().collect();
    let (xl, xr) = convolve_stereo_truncated(&grl, &grr, &parts.ir);
    let mut dl = vec![0.0; n];
    let mut dr = vec![0.0; n];
    for s in 0..n {
        dl[s] = (1.0 - wet) * g_left[s] + wet * xl[n - 1 - s];
        dr[s] = (1.0 - wet) * g_right[s] + wet * xr[n - 1 - s];
    }

    // normalized chain: tau = 0.1 + 1.9 p0, wet = 0.5 p1
    (dl, dr, vec![d_tau * 1.9, d_wet * 0.5])
}
