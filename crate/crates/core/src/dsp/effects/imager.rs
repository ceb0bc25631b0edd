//! Mid/side stereo imager: the side signal is scaled by width in [0, 2].
//! Width 1 is the identity round trip.

use crate::dsp::{c, Real};

pub fn process<T: Real>(left: &[T], right: &[T], params: &[f64]) -> (Vec<T>, Vec<T>) {
    let w: T = c(2.0 * params[0]);
    let half: T = c(0.5);
    let mut l_out = Vec::with_capacity(left.len());
    let mut r_out = Vec::with_capacity(right.len());
    for (&l, &r) in left.iter().zip(right) {
        let mid = (l + r) * half;
        let side = (l - r) * half * w;
        l_out.push(mid + side);
        r_out.push(mid - side);
    }
    (l_out, r_out)
}

pub fn backward(
    left: &[f64],
    right: &[f64],
    params: &[f64],
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = 2.0 * params[0];
    let mut dl = Vec::with_capacity(left.len());
    let mut dr = Vec::with_capacity(right.len());
    let mut dw = 0.0;
    for i in 0..left.len() {
        let side = 0.5 * (left[i] - right[i]);
        // yl = mid + w*side, yr = mid - w*side
        // dyl/dl = 0.5 + 0.5w, dyl/dr = 0.5 - 0.5w (and mirrored for yr)
        dl.push(g_left[i] * (0.5 + 0.5 * w) + g_right[i] * (0.5 - 0.5 * w));
        dr.push(g_left[i] * (0.5 - 0.5 * w) + g_right[i] * (0.5 + 0.5 * w));
        dw += (g_left[i] - g_right[i]) * side;
    }
    (dl, dr, vec![dw * 2.0])
}
