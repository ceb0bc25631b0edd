//! Feed-forward dynamics processing in the dB domain: a linked peak
//! detector, static gain computer, and one-pole attack/release smoothing of
//! the gain-reduction signal. The limiter is the same kernel with the ratio
//! pinned at 100:1 and a fast attack range.

use crate::dsp::{c, Real};

const LN10_OVER_20: f64 = core::f64::consts::LN_10 / 20.0;
const TWENTY_OVER_LN10: f64 = 20.0 / core::f64::consts::LN_10;
const DETECTOR_FLOOR: f64 = 1e-6;

struct DynParams {
    threshold_db: f64,
    ratio: f64,
    attack_ms: f64,
    release_ms: f64,
    /// (d threshold/dp, d ratio/dp, d attack/dp, d release/dp) in
    /// normalized space; a zero marks a pinned value.
    scales: [f64; 4],
    /// map from the 4 kernel slots to output parameter indices
    slots: [Option<usize>; 4],
}

fn compressor_params(p: &[f64]) -> DynParams {
    DynParams {
        threshold_db: -40.0 + 40.0 * p[0],
        ratio: 1.0 + 19.0 * p[1],
        attack_ms: 1.0 + 99.0 * p[2],
        release_ms: 20.0 + 480.0 * p[3],
        scales: [40.0, 19.0, 99.0, 480.0],
        slots: [Some(0), Some(1), Some(2), Some(3)],
    }
}

fn limiter_params(p: &[f64]) -> DynParams {
    DynParams {
        threshold_db: -40.0 + 40.0 * p[0],
        ratio: 100.0,
        attack_ms: 0.1 + 1.9 * p[1],
        release_ms: 20.0 + 480.0 * p[2],
        scales: [40.0, 0.0, 1.9, 480.0],
        slots: [Some(0), None, Some(1), Some(2)],
    }
}

fn smoothing_coeff(tau_ms: f64, fs: f64) -> f64 {
    (-1.0 / (fs * tau_ms / 1000.0)).exp()
}

/// Generic forward pass. Returns the per-sample linear gain.
fn gain_curve<T: Real>(left: &[T], right: &[T], dp: &DynParams, fs: f64) -> Vec<T> {
    let n = left.len();
    let alpha_a: T = c(smoothing_coeff(dp.attack_ms, fs));
    let alpha_r: T = c(smoothing_coeff(dp.release_ms, fs));
    let thr: T = c(dp.threshold_db);
    let slope: T = c(1.0 / dp.ratio - 1.0);
    let floor: T = c(DETECTOR_FLOOR);
    let to_db: T = c(TWENTY_OVER_LN10);
    let from_db: T = c(LN10_OVER_20);
    let zero = T::zero();
    let one = T::one();
    let mut gains = Vec::with_capacity(n);
    let mut state = zero;
    for t in 0..n {
        let d = left[t].abs().max(right[t].abs()).max(floor);
        let level = to_db * d.ln();
        let over = level - thr;
        let gr = if over > zero { slope * over } else { zero };
        let alpha = if gr < state { alpha_a } else { alpha_r };
        state = alpha * state + (one - alpha) * gr;
        gains.push((state * from_db).exp());
    }
    gains
}

fn apply_gains<T: Real>(left: &[T], right: &[T], gains: &[T]) -> (Vec<T>, Vec<T>) {
    (
        left.iter().zip(gains).map(|(&x, &g)| x * g).collect(),
        right.iter().zip(gains).map(|(&x, &g)| x * g).collect(),
    )
}

pub fn process_compressor<T: Real>(
    left: &[T],
    right: &[T],
    params: &[f64],
    fs: f64,
) -> (Vec<T>, Vec<T>) {
    let dp = compressor_params(params);
    let gains = gain_curve(left, right, &dp, fs);
    apply_gains(left, right, &gains)
}

pub fn process_limiter<T: Real>(
    left: &[T],
    right: &[T],
    params: &[f64],
    fs: f64,
) -> (Vec<T>, Vec<T>) {
    let dp = limiter_params(params);
    let gains = gain_curve(left, right, &dp, fs);
    apply_gains(left, right, &gains)
}

/// Reverse pass. Recomputes the forward intermediates, then runs the
/// adjoint of the smoothing recursion with the attack/release branch
/// decisions treated as fixed.
fn backward_kernel(
    left: &[f64],
    right: &[f64],
    dp: &DynParams,
    fs: f64,
    g_left: &[f64],
    g_right: &[f64],
    n_out_params: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = left.len();
    let alpha_a = smoothing_coeff(dp.attack_ms, fs);
    let alpha_r = smoothing_coeff(dp.release_ms, fs);
    let slope = 1.0 / dp.ratio - 1.0;

    // forward recompute
    let mut level = vec![0.0; n]; // detector level in dB
    let mut gr = vec![0.0; n]; // static gain reduction (dB)
    let mut s = vec![0.0; n]; // smoothed reduction (dB)
    let mut is_attack = vec![false; n];
    let mut gain = vec![0.0; n];
    let mut state = 0.0;
    for t in 0..n {
        let d = left[t].abs().max(right[t].abs()).max(DETECTOR_FLOOR);
        level[t] = TWENTY_OVER_LN10 * d.ln();
        let over = level[t] - dp.threshold_db;
        gr[t] = if over > 0.0 { slope * over } else { 0.0 };
        is_attack[t] = gr[t] < state;
        let alpha = if is_attack[t] { alpha_a } else { alpha_r };
        let prev = state;
        state = alpha * prev + (1.0 - alpha) * gr[t];
        s[t] = state;
        gain[t] = (state * LN10_OVER_20).exp();
    }

    // direct gradients through y = x * gain
    let mut dl = vec![0.0; n];
    let mut dr = vec![0.0; n];
    let mut dsd = vec![0.0; n]; // direct dL/ds[t]
    for t in 0..n {
        dl[t] = g_left[t] * gain[t];
        dr[t] = g_right[t] * gain[t];
        let dgain = g_left[t] * left[t] + g_right[t] * right[t];
        dsd[t] = dgain * gain[t] * LN10_OVER_20;
    }

    // adjoint of s[t] = alpha_t * s[t-1] + (1-alpha_t) * gr[t]
    let mut d_thr = 0.0;
    let mut d_ratio = 0.0;
    let mut d_alpha_a = 0.0;
    let mut d_alpha_r = 0.0;
    let mut lam_next = 0.0; // lambda[t+1]
    let mut alpha_next = 0.0;
    for t in (0..n).rev() {
        let lam = dsd[t] + lam_next * alpha_next;
        let alpha = if is_attack[t] { alpha_a } else { alpha_r };
        let prev_s = if t == 0 { 0.0 } else { s[t - 1] };
        let d_alpha = lam * (prev_s - gr[t]);
        if is_attack[t] {
            d_alpha_a += d_alpha;
        } else {
            d_alpha_r += d_alpha;
        }
        let dgr = lam * (1.0 - alpha);
        if gr[t] != 0.0 {
            // gr = slope * (level - thr)
            d_thr -= dgr * slope;
            d_ratio += dgr * (dp.threshold_db - level[t]) / (dp.ratio * dp.ratio);
            // into the detector: d level/d d = 20/(ln10 * d)
            let d_lin = (level[t] * LN10_OVER_20).exp();
            if d_lin > DETECTOR_FLOOR {
                let dlev = dgr * slope;
                let dd = dlev * TWENTY_OVER_LN10 / d_lin;
                // routed to the louder channel
                if left[t].abs() >= right[t].abs() {
                    dl[t] += dd * left[t].signum();
                } else {
                    dr[t] += dd * right[t].signum();
                }
            }
        }
        lam_next = lam;
        alpha_next = alpha;
    }

    // alpha = exp(-1/(fs*tau_sec)): d alpha/d tau_ms = alpha*1000/(fs*tau_ms^2)
    let dalpha_dms = |alpha: f64, tau_ms: f64| alpha * 1000.0 / (fs * tau_ms * tau_ms);
    let d_attack_ms = d_alpha_a * dalpha_dms(alpha_a, dp.attack_ms);
    let d_release_ms = d_alpha_r * dalpha_dms(alpha_r, dp.release_ms);

    let kernel_grads = [d_thr, d_ratio, d_attack_ms, d_release_ms];
    let mut dparams = vec![0.0; n_out_params];
    for (slot, (&g, &scale)) in dp.slots.iter().zip(kernel_grads.iter().zip(&dp.scales)) {
        if let Some(idx) = slot {
            dparams[*idx] = g * scale;
        }
    }
    (dl, dr, dparams)
}

pub fn backward_compressor(
    left: &[f64],
    right: &[f64],
    params: &[f64],
    fs: f64,
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    backward_kernel(
        left,
        right,
        &compressor_params(params),
        fs,
        g_left,
        g_right,
        4,
    )
}

pub fn backward_limiter(
    left: &[f64],
    right: &[f64],
    params: &[f64],
    fs: f64,
    g_left: &[f64],
    g_right: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    backward_kernel(left, right, &limiter_params(params), fs, g_left, g_right, 3)
}
