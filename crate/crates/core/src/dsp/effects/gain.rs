//! Scalar gain: y = 10^(g/20) * x, g in [-24, +24] dB.

use crate::dsp::{c, Real};

const LN10_OVER_20: f64 = core::f64::consts::LN_10 / 20.0;

fn amp(params: &[f64]) -> f64 {
    let g_db = -24.0 + 48.0 * params[0];
    10.0f64.powf(g_db / 20.0)
}

pub fn process<T: Real>(left: &[T], right: &[T], params: &[f64]) -> (Vec<T>, Vec<T>) {
    let a: T = c(amp(params));
    (
        left.iter().map(|&x| x * a).collect(),
        right.iter().map(|&x| x * a).collect(),
    )
}

pub fn backward(
    left: &[f64],
    right: &[f64],
    params: &[f64],
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let a = amp(params);
    let dl: Vec<f64> = g_left.iter().map(|g| g * a).collect();
    let dr: Vec<f64> = g_right.iter().map(|g| g * a).collect();
    let mut dot = 0.0;
    for (g, x) in g_left.iter().zip(left) {
        dot += g * x;
    }
    for (g, x) in g_right.iter().zip(right) {
        dot += g * x;
    }
    // da/dp = a * ln10/20 * 48
    let dp = dot * a * LN10_OVER_20 * 48.0;
    (dl, dr, vec![dp])
}
