//! Feedback-comb delay: y = x + mix * c where c[t] = x[t-D] + fb * c[t-D].
//! The delay time lives on a 50 ms grid (50..500 ms) and is not
//! differentiable; feedback and mix are.

use crate::dsp::{c, Real};

/// Grid index for a normalized time parameter.
pub fn time_index(p: f64) -> usize {
    ((p * 10.0).floor() as usize).min(9)
}

fn delay_samples(p: f64, fs: f64) -> usize {
    let idx = time_index(p);
    ((idx + 1) as f64 * 0.05 * fs).round() as usize
}

fn comb<T: Real>(x: &[T], d: usize, fb: T) -> Vec<T> {
    let n = x.len();
    let mut cbuf = vec![T::zero(); n];
    for t in d..n {
        cbuf[t] = x[t - d] + fb * cbuf[t - d];
    }
    cbuf
}

pub fn process<T: Real>(left: &[T], right: &[T], params: &[f64], fs: f64) -> (Vec<T>, Vec<T>) {
    let d = delay_samples(params[0], fs);
    let fb: T = c(0.7 * params[1]);
    let mix: T = c(params[2]);
    let run = |x: &[T]| -> Vec<T> {
        let cb = comb(x, d, fb);
        x.iter().zip(&cb).map(|(&xx, &cc)| xx + mix * cc).collect()
    };
    (run(left), run(right))
}

pub fn backward(
    left: &[f64],
    right: &[f64],
    params: &[f64],
    fs: f64,
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = left.len();
    let d = delay_samples(params[0], fs);
    let fb = 0.7 * params[1];
    let mix = params[2];
    let mut d_fb = 0.0;
    let mut d_mix = 0.0;
    let mut channel = |x: &[f64], gy: &[f64]| -> Vec<f64> {
        let cb = comb(x, d, fb);
        // adjoint of the comb recursion
        let mut lam = vec![0.0; n];
        for t in (0..n).rev() {
            let mut l = mix * gy[t];
            if t + d < n {
                l += fb * lam[t + d];
            }
            lam[t] = l;
        }
        let mut dx = vec![0.0; n];
        for t in 0..n {
            dx[t] = gy[t];
            if t + d < n {
                dx[t] += lam[t + d];
            }
            if t >= d {
                d_fb += lam[t] * cb[t - d];
            }
            d_mix += gy[t] * cb[t];
        }
        dx
    };
    let dl = channel(left, g_left);
    let dr = channel(right, g_right);
    // time is discrete: zero gradient by definition
    (dl, dr, vec![0.0, d_fb * 0.7, d_mix])
}
