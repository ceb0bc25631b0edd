//! Four-band equalizer (low shelf, two peaking bells, high shelf), applied
//! by frequency-sampled complex biquad responses multiplied onto the padded
//! whole-segment DFT. Band gains are the parameters; centers and Q are
//! fixed. The response is exactly unity at 0 dB gains.

use crate::dsp::fft::{self, next_pow2};
use crate::dsp::Real;

const LN10_OVER_40: f64 = core::f64::consts::LN_10 / 40.0;

#[derive(Clone, Copy)]
enum BandKind {
    LowShelf,
    Peak,
    HighShelf,
}

struct Band {
    kind: BandKind,
    fc: f64,
    q: f64,
}

const BANDS: [Band; 4] = [
    Band {
        kind: BandKind::LowShelf,
        fc: 80.0,
        q: 0.0, // shelves use slope S = 1
    },
    Band {
        kind: BandKind::Peak,
        fc: 300.0,
        q: 0.9,
    },
    Band {
        kind: BandKind::Peak,
        fc: 1500.0,
        q: 0.9,
    },
    Band {
        kind: BandKind::HighShelf,
        fc: 5000.0,
        q: 0.0,
    },
];

fn gains_db(params: &[f64]) -> [f64; 4] {
    let mut g = [0.0; 4];
    for i in 0..4 {
        g[i] = -12.0 + 24.0 * params[i];
    }
    g
}

/// RBJ-style biquad coefficients and their derivatives w.r.t. the linear
/// gain A = 10^(g/40). Returns ([b0,b1,b2,a0,a1,a2], d/dA of the same).
fn band_coeffs(band: &Band, gain_db: f64, fs: f64) -> ([f64; 6], [f64; 6]) {
    let a = 10.0f64.powf(gain_db / 40.0);
    let w0 = 2.0 * std::f64::consts::PI * band.fc / fs;
    let cw = w0.cos();
    let sw = w0.sin();
    let sqrt_a = a.sqrt();
    match band.kind {
        BandKind::Peak => {
            let alpha = sw / (2.0 * band.q);
            (
                [
                    1.0 + alpha * a,
                    -2.0 * cw,
                    1.0 - alpha * a,
                    1.0 + alpha / a,
                    -2.0 * cw,
                    1.0 - alpha / a,
                ],
                [
                    alpha,
                    0.0,
                    -alpha,
                    -alpha / (a * a),
                    0.0,
                    alpha / (a * a),
                ],
            )
        }
        BandKind::LowShelf => {
            // shelf slope S = 1 keeps alpha independent of A
            let alpha = sw / 2.0 * std::f64::consts::SQRT_2;
            let tsa = 2.0 * sqrt_a * alpha;
            (
                [
                    a * ((a + 1.0) - (a - 1.0) * cw) + a * tsa,
                    2.0 * a * ((a - 1.0) - (a + 1.0) * cw),
                    a * ((a + 1.0) - (a - 1.0) * cw) - a * tsa,
                    (a + 1.0) + (a - 1.0) * cw + tsa,
                    -2.0 * ((a - 1.0) + (a + 1.0) * cw),
                    (a + 1.0) + (a - 1.0) * cw - tsa,
                ],
                [
                    (2.0 * a + 1.0) - (2.0 * a - 1.0) * cw + 3.0 * sqrt_a * alpha,
                    2.0 * ((2.0 * a - 1.0) - (2.0 * a + 1.0) * cw),
                    (2.0 * a + 1.0) - (2.0 * a - 1.0) * cw - 3.0 * sqrt_a * alpha,
                    1.0 + cw + alpha / sqrt_a,
                    -2.0 * (1.0 + cw),
                    1.0 + cw - alpha / sqrt_a,
                ],
            )
        }
        BandKind::HighShelf => {
            let alpha = sw / 2.0 * std::f64::consts::SQRT_2;
            let tsa = 2.0 * sqrt_a * alpha;
            (
                [
                    a * ((a + 1.0) + (a - 1.0) * cw) + a * tsa,
                    -2.0 * a * ((a - 1.0) + (a + 1.0) * cw),
                    a * ((a + 1.0) + (a - 1.0) * cw) - a * tsa,
                    (a + 1.0) - (a - 1.0) * cw + tsa,
                    2.0 * ((a - 1.0) - (a + 1.0) * cw),
                    (a + 1.0) - (a - 1.0) * cw - tsa,
                ],
                [
                    (2.0 * a + 1.0) + (2.0 * a - 1.0) * cw + 3.0 * sqrt_a * alpha,
                    -2.0 * ((2.0 * a - 1.0) + (2.0 * a + 1.0) * cw),
                    (2.0 * a + 1.0) + (2.0 * a - 1.0) * cw - 3.0 * sqrt_a * alpha,
                    1.0 - cw + alpha / sqrt_a,
                    2.0 * (1.0 - cw),
                    1.0 - cw - alpha / sqrt_a,
                ],
            )
        }
    }
}

/// Total response on bins 0..=size/2 plus per-band dH/d(gain_dB).
/// Composed multiplicatively: dH_tot/dg_i = H_tot * (dH_i/dg_i) / H_i.
struct Responses {
    h_re: Vec<f64>,
    h_im: Vec<f64>,
    /// per band: dH_tot/d(gain_db) on the half spectrum
    dh_re: Vec<Vec<f64>>,
    dh_im: Vec<Vec<f64>>,
}

fn compute_responses(params: &[f64], fs: f64, size: usize, with_grads: bool) -> Responses {
    let gains = gains_db(params);
    let half = size / 2 + 1;
    let mut h_re = vec![1.0; half];
    let mut h_im = vec![0.0; half];
    let mut dh_re = Vec::new();
    let mut dh_im = Vec::new();
    if with_grads {
        dh_re = vec![vec![0.0; half]; 4];
        dh_im = vec![vec![0.0; half]; 4];
    }
    // per-band responses h_i and ratios dh_i/h_i, accumulated into the total
    let mut band_h: Vec<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for (bi, band) in BANDS.iter().enumerate() {
        let (cf, dcf) = band_coeffs(band, gains[bi], fs);
        let da_dg = 10.0f64.powf(gains[bi] / 40.0) * LN10_OVER_40;
        let mut hre = vec![0.0; half];
        let mut him = vec![0.0; half];
        let mut gre = vec![0.0; half];
        let mut gim = vec![0.0; half];
        for k in 0..half {
            let w = 2.0 * std::f64::consts::PI * k as f64 / size as f64;
            let (z1r, z1i) = (w.cos(), -w.sin());
            let (z2r, z2i) = (z1r * z1r - z1i * z1i, 2.0 * z1r * z1i);
            let br = cf[0] + cf[1] * z1r + cf[2] * z2r;
            let bi_ = cf[1] * z1i + cf[2] * z2i;
            let ar = cf[3] + cf[4] * z1r + cf[5] * z2r;
            let ai = cf[4] * z1i + cf[5] * z2i;
            let den = ar * ar + ai * ai;
            let hr = (br * ar + bi_ * ai) / den;
            let hi = (bi_ * ar - br * ai) / den;
            hre[k] = hr;
            him[k] = hi;
            if with_grads {
                // dH/dA = (B' - H*A') / Aq
                let dbr = dcf[0] + dcf[1] * z1r + dcf[2] * z2r;
                let dbi = dcf[1] * z1i + dcf[2] * z2i;
                let dar = dcf[3] + dcf[4] * z1r + dcf[5] * z2r;
                let dai = dcf[4] * z1i + dcf[5] * z2i;
                let nr = dbr - (hr * dar - hi * dai);
                let ni = dbi - (hr * dai + hi * dar);
                let dr = (nr * ar + ni * ai) / den;
                let di = (ni * ar - nr * ai) / den;
                gre[k] = dr * da_dg;
                gim[k] = di * da_dg;
            }
        }
        for k in 0..half {
            let (tr, ti) = (h_re[k], h_im[k]);
            h_re[k] = tr * hre[k] - ti * him[k];
            h_im[k] = tr * him[k] + ti * hre[k];
        }
        if with_grads {
            band_h.push((hre, him, gre, gim));
        }
    }
    if with_grads {
        for (bi, (hre, him, gre, gim)) in band_h.iter().enumerate() {
            for k in 0..half {
                // dH_tot = H_tot * dH_i / H_i
                let den = hre[k] * hre[k] + him[k] * him[k];
                let rr = (gre[k] * hre[k] + gim[k] * him[k]) / den;
                let ri = (gim[k] * hre[k] - gre[k] * him[k]) / den;
                dh_re[bi][k] = h_re[k] * rr - h_im[k] * ri;
                dh_im[bi][k] = h_re[k] * ri + h_im[k] * rr;
            }
        }
    }
    Responses {
        h_re,
        h_im,
        dh_re,
        dh_im,
    }
}

pub fn process<T: Real>(left: &[T], right: &[T], params: &[f64], fs: f64) -> (Vec<T>, Vec<T>) {
    let size = next_pow2(left.len());
    let resp = compute_responses(params, fs, size, false);
    fft::filter_stereo_hermitian(left, right, &resp.h_re, &resp.h_im, size)
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
    let size = next_pow2(n);
    let resp = compute_responses(params, fs, size, true);
    let tables = f64::fft_tables(size);

    // packed input spectrum Z and packed output-grad spectrum G
    let mut zre = vec![0.0; size];
    let mut zim = vec![0.0; size];
    zre[..n].copy_from_slice(left);
    zim[..n].copy_from_slice(right);
    tables.forward(&mut zre, &mut zim);
    let mut gre = vec![0.0; size];
    let mut gim = vec![0.0; size];
    gre[..n].copy_from_slice(g_left);
    gim[..n].copy_from_slice(g_right);
    tables.forward(&mut gre, &mut gim);

    // d/dx: filter the output gradient with the conjugate response
    let half = size / 2;
    let mut xre = gre.clone();
    let mut xim = gim.clone();
    let neg_im: Vec<f64> = resp.h_im.iter().map(|v| -v).collect();
    fft::apply_hermitian(&mut xre, &mut xim, &resp.h_re, &neg_im, size);
    tables.inverse(&mut xre, &mut xim);
    let dl = xre[..n].to_vec();
    let dr = xim[..n].to_vec();

    // d/dgain_i via Parseval: (1/P) sum_k Re[G_k * conj(dH_ik * Z_k)]
    let mut dp = vec![0.0; 4];
    for b in 0..4 {
        let mut acc = 0.0;
        for k in 0..size {
            let (hr, hi) = if k <= half {
                (resp.dh_re[b][k], resp.dh_im[b][k])
            } else {
                (resp.dh_re[b][size - k], -resp.dh_im[b][size - k])
            };
            // v = dH * Z
            let vr = hr * zre[k] - hi * zim[k];
            let vi = hr * zim[k] + hi * zre[k];
            // Re[G * conj(v)]
            acc += gre[k] * vr + gim[k] * vi;
        }
        // gain_db = -12 + 24 p
        dp[b] = acc / size as f64 * 24.0;
    }
    (dl, dr, dp)
}
