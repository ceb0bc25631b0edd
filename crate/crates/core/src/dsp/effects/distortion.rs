//! Soft-clipping waveshaper: y = mix * tanh(d*x)/tanh(d) + (1-mix) * x,
//! drive d in [1, 20].

use crate::dsp::{c, Real};

fn denorm(params: &[f64]) -> (f64, f64) {
    (1.0 + 19.0 * params[0], params[1])
}

pub fn process<T: Real>(left: &[T], right: &[T], params: &[f64]) -> (Vec<T>, Vec<T>) {
    let (d, mix) = denorm(params);
    let dt: T = c(d);
    let inv_td: T = c(1.0 / d.tanh());
    let m: T = c(mix);
    let dry: T = c(1.0 - mix);
    let shape = |x: &T| m * (*x * dt).tanh() * inv_td + dry * *x;
    (
        left.iter().map(shape).collect(),
        right.iter().map(shape).collect(),
    )
}

pub fn backward(
    left: &[f64],
    right: &[f64],
    params: &[f64],
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (d, mix) = denorm(params);
    let td = d.tanh();
    let sech2_d = 1.0 - td * td;
    let mut d_drive = 0.0;
    let mut d_mix = 0.0;
    let mut back_channel = |xs: &[f64], gs: &[f64], dx: &mut Vec<f64>| {
        for (&x, &g) in xs.iter().zip(gs) {
            let tdx = (d * x).tanh();
            let sech2_dx = 1.0 - tdx * tdx;
            // dy/dx
            dx.push(g * (mix * d * sech2_dx / td + (1.0 - mix)));
            // dy/dd = mix * (x*sech2(dx)*tanh(d) - tanh(dx)*sech2(d)) / tanh(d)^2
            d_drive += g * mix * (x * sech2_dx * td - tdx * sech2_d) / (td * td);
            // dy/dmix
            d_mix += g * (tdx / td - x);
        }
    };
    let mut dl = Vec::with_capacity(left.len());
    let mut dr = Vec::with_capacity(right.len());
    back_channel(left, g_left, &mut dl);
    back_channel(right, g_right, &mut dr);
    // normalized-space chain: d = 1 + 19 p0, mix = p1
    (dl, dr, vec![d_drive * 19.0, d_mix])
}
