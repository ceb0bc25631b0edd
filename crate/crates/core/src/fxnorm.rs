//! Fx-Normalization preprocessing: neutralize effects already present in
//! source audio so that chains applied afterwards contribute equally across
//! samples. Spectral match (octave-smoothed correction toward the class
//! mean, clamped to +/-12 dB), stereo width toward the class mean side/mid
//! energy ratio, then loudness to the profile target. Reverb is left alone.

use crate::dsp::buffer::AudioBuffer;
use crate::dsp::fft::{self, next_pow2};
use crate::dsp::loudness::normalize_lufs;
use crate::dsp::Real;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const PROFILE_FORMAT_VERSION: u32 = 1;
const DB_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    /// Analysis FFT size; the profile's frequency grid has n_fft/2+1 bins.
    pub n_fft: usize,
    pub target_lufs: f64,
    pub max_correction_db: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            n_fft: 1024,
            target_lufs: -23.0,
            max_correction_db: 12.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub mean_log_mag_db: Vec<f64>,
    pub side_mid_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationProfile {
    pub version: u32,
    pub sample_rate: u32,
    pub n_fft: usize,
    pub target_lufs: f64,
    pub max_correction_db: f64,
    pub classes: BTreeMap<String, ClassProfile>,
}

impl NormalizationProfile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<NormalizationProfile> {
        let text = std::fs::read_to_string(path)?;
        let profile: NormalizationProfile = serde_json::from_str(&text)?;
        if profile.version != PROFILE_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "profile format version {} unsupported (expected {})",
                profile.version, PROFILE_FORMAT_VERSION
            )));
        }
        Ok(profile)
    }

    /// Frequency grid of the profile in Hz.
    pub fn freq_grid(&self) -> Vec<f64> {
        let bins = self.n_fft / 2 + 1;
        (0..bins)
            .map(|k| k as f64 * self.sample_rate as f64 / self.n_fft as f64)
            .collect()
    }
}

/// Frame-averaged log-magnitude spectrum of the mid channel (dB per bin).
pub fn mean_log_spectrum(buf: &AudioBuffer, n_fft: usize) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let hop = n_fft / 2;
    let mid = buf.mid_f64();
    let tables = f64::fft_tables(n_fft);
    let window: Vec<f64> = (0..n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos())
        .collect();
    let frames = if mid.len() < n_fft {
        0
    } else {
        1 + (mid.len() - n_fft) / hop
    };
    let mut acc = vec![0.0; bins];
    if frames == 0 {
        return acc;
    }
    let mut re = vec![0.0; n_fft];
    let mut im = vec![0.0; n_fft];
    for f in 0..frames {
        for i in 0..n_fft {
            re[i] = mid[f * hop + i] * window[i];
            im[i] = 0.0;
        }
        tables.forward(&mut re, &mut im);
        for k in 0..bins {
            let mag = (re[k] * re[k] + im[k] * im[k]).sqrt();
            acc[k] += 20.0 * (mag + DB_EPS).log10();
        }
    }
    for v in &mut acc {
        *v /= frames as f64;
    }
    acc
}

/// Side/mid energy ratio E_s / E_m.
pub fn side_mid_ratio(buf: &AudioBuffer) -> f64 {
    let mut em = 0.0;
    let mut es = 0.0;
    for (&l, &r) in buf.left().iter().zip(buf.right()) {
        let m = 0.5 * (l as f64 + r as f64);
        let s = 0.5 * (l as f64 - r as f64);
        em += m * m;
        es += s * s;
    }
    es / em.max(1e-12)
}

/// Class-wise means over one or more stems per class.
pub fn compute_profile(
    stems: &[(String, &AudioBuffer)],
    sample_rate: u32,
    cfg: &ProfileConfig,
) -> Result<NormalizationProfile> {
    if stems.is_empty() {
        return Err(Error::InvalidConfig("profile needs at least one stem".into()));
    }
    let bins = cfg.n_fft / 2 + 1;
    let mut acc: BTreeMap<String, (Vec<f64>, f64, usize)> = BTreeMap::new();
    for (class, buf) in stems {
        if buf.sample_rate != sample_rate {
            return Err(Error::Audio(format!(
                "profile stem of class {class} has sample rate {} (expected {sample_rate})",
                buf.sample_rate
            )));
        }
        let spec = mean_log_spectrum(buf, cfg.n_fft);
        let ratio = side_mid_ratio(buf);
        let entry = acc
            .entry(class.clone())
            .or_insert_with(|| (vec![0.0; bins], 0.0, 0));
        for (a, s) in entry.0.iter_mut().zip(&spec) {
            *a += s;
        }
        entry.1 += ratio;
        entry.2 += 1;
    }
    let classes = acc
        .into_iter()
        .map(|(class, (mut spec, ratio, count))| {
            for v in &mut spec {
                *v /= count as f64;
            }
            (
                class,
                ClassProfile {
                    mean_log_mag_db: spec,
                    side_mid_ratio: ratio / count as f64,
                },
            )
        })
        .collect();
    Ok(NormalizationProfile {
        version: PROFILE_FORMAT_VERSION,
        sample_rate,
        n_fft: cfg.n_fft,
        target_lufs: cfg.target_lufs,
        max_correction_db: cfg.max_correction_db,
        classes,
    })
}

/// One-octave moving average in log-frequency (bins within [f/sqrt2, f*sqrt2]).
pub fn octave_smooth(curve: &[f64]) -> Vec<f64> {
    let n = curve.len();
    let mut out = vec![0.0; n];
    for k in 1..n {
        let lo = ((k as f64) / std::f64::consts::SQRT_2).floor().max(1.0) as usize;
        let hi = (((k as f64) * std::f64::consts::SQRT_2).ceil() as usize).min(n - 1);
        let mut s = 0.0;
        for v in &curve[lo..=hi] {
            s += v;
        }
        out[k] = s / (hi - lo + 1) as f64;
    }
    if n > 1 {
        out[0] = out[1];
    }
    out
}

/// Interpolate a half-spectrum curve from the profile grid onto `bins`
/// equally spaced bins of a (possibly longer) FFT.
fn resample_curve(curve: &[f64], bins: usize) -> Vec<f64> {
    let src = curve.len();
    (0..bins)
        .map(|k| {
            let pos = k as f64 * (src - 1) as f64 / (bins - 1) as f64;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < src {
                curve[i] * (1.0 - frac) + curve[i + 1] * frac
            } else {
                curve[src - 1]
            }
        })
        .collect()
}

/// Apply Fx-Normalization: spectral match, width match, loudness.
pub fn fx_normalize(
    buf: &AudioBuffer,
    profile: &NormalizationProfile,
    class: &str,
) -> Result<AudioBuffer> {
    let cp = profile
        .classes
        .get(class)
        .ok_or_else(|| Error::UnknownClass(class.to_string()))?;
    if buf.sample_rate != profile.sample_rate {
        return Err(Error::Audio(format!(
            "buffer sample rate {} does not match profile {}",
            buf.sample_rate, profile.sample_rate
        )));
    }
    // (a) spectral match
    let cur = mean_log_spectrum(buf, profile.n_fft);
    let raw: Vec<f64> = cp
        .mean_log_mag_db
        .iter()
        .zip(&cur)
        .map(|(p, c)| p - c)
        .collect();
    let smooth = octave_smooth(&raw);
    let clamped: Vec<f64> = smooth
        .iter()
        .map(|v| v.clamp(-profile.max_correction_db, profile.max_correction_db))
        .collect();
    let size = next_pow2(buf.len());
    let h_bins = size / 2 + 1;
    let gain_db = resample_curve(&clamped, h_bins);
    let h_re: Vec<f64> = gain_db.iter().map(|db| 10.0f64.powf(db / 20.0)).collect();
    let h_im = vec![0.0; h_bins];
    let (l, r) = fft::filter_stereo_hermitian(buf.left(), buf.right(), &h_re, &h_im, size);
    let spectral = AudioBuffer::new(buf.sample_rate, l, r)?;

    // (b) stereo width toward the class mean side/mid ratio
    let cur_ratio = side_mid_ratio(&spectral);
    let scale = if cur_ratio > 1e-9 {
        (cp.side_mid_ratio / cur_ratio).sqrt().clamp(0.0, 4.0)
    } else {
        1.0
    } as f32;
    let mut l = Vec::with_capacity(spectral.len());
    let mut r = Vec::with_capacity(spectral.len());
    for (&x, &y) in spectral.left().iter().zip(spectral.right()) {
        let m = 0.5 * (x + y);
        let s = 0.5 * (x - y) * scale;
        l.push(m + s);
        r.push(m - s);
    }
    let widened = AudioBuffer::new(buf.sample_rate, l, r)?;

    // (c) loudness to the profile target
    let (out, _) = normalize_lufs(&widened, profile.target_lufs)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::effects::{apply_effect, EffectSpec, EffectType};
    use crate::dsp::measure_lufs;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn noise_stem(seed: u64, secs: f64) -> AudioBuffer {
        let fs = 16_000;
        let n = (secs * fs as f64) as usize;
        let mut rng = rng_from_seed(seed);
        let mid: Vec<f32> = (0..n).map(|_| (rng.random::<f32>() * 2.0 - 1.0) * 0.3).collect();
        let l: Vec<f32> = mid
            .iter()
            .map(|&m| m + (rng.random::<f32>() * 2.0 - 1.0) * 0.03)
            .collect();
        let r: Vec<f32> = mid
            .iter()
            .map(|&m| m + (rng.random::<f32>() * 2.0 - 1.0) * 0.03)
            .collect();
        AudioBuffer::new(fs, l, r).unwrap()
    }

    #[test]
    fn single_stem_profile_equals_its_spectrum() {
        let stem = noise_stem(1, 2.0);
        let cfg = ProfileConfig::default();
        let profile =
            compute_profile(&[("pad".into(), &stem)], 16_000, &cfg).unwrap();
        let own = mean_log_spectrum(&stem, cfg.n_fft);
        let stored = &profile.classes["pad"].mean_log_mag_db;
        for (a, b) in stored.iter().zip(&own) {
            assert!((a - b).abs() < 1e-9);
        }
        // mean over two identical stems is idempotent
        let profile2 =
            compute_profile(&[("pad".into(), &stem), ("pad".into(), &stem)], 16_000, &cfg)
                .unwrap();
        for (a, b) in profile2.classes["pad"]
            .mean_log_mag_db
            .iter()
            .zip(stored)
        {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn white_noise_profile_is_flat() {
        let stems: Vec<AudioBuffer> = (0..10).map(|s| noise_stem(10 + s, 2.0)).collect();
        let refs: Vec<(String, &AudioBuffer)> =
            stems.iter().map(|b| ("noise".to_string(), b)).collect();
        let profile = compute_profile(&refs, 16_000, &ProfileConfig::default()).unwrap();
        let spec = &profile.classes["noise"].mean_log_mag_db;
        // interior bins: flat within +/-1 dB of their own mean
        let inner = &spec[2..spec.len() - 2];
        let mean = inner.iter().sum::<f64>() / inner.len() as f64;
        for (k, v) in inner.iter().enumerate() {
            assert!((v - mean).abs() < 1.0, "bin {k}: {} vs mean {mean}", v);
        }
    }

    #[test]
    fn normalization_inverts_a_shelf_boost() {
        let original = noise_stem(20, 2.0);
        let cfg = ProfileConfig::default();
        let profile =
            compute_profile(&[("src".into(), &original)], 16_000, &cfg).unwrap();
        // +12 dB low shelf coloration
        let colored = apply_effect(
            &original,
            &EffectSpec::new(EffectType::Equalizer, vec![1.0, 0.5, 0.5, 0.5]),
        )
        .unwrap();
        let normalized = fx_normalize(&colored, &profile, "src").unwrap();
        // band-smoothed spectrum should be back near the profile
        let got = octave_smooth(&mean_log_spectrum(&normalized, cfg.n_fft));
        let want = octave_smooth(&profile.classes["src"].mean_log_mag_db);
        // loudness step shifts the whole curve; compare shape (zero-mean)
        let inner = 2..got.len() - 2;
        let gm = got[inner.clone()].iter().sum::<f64>() / (got.len() - 4) as f64;
        let wm = want[inner.clone()].iter().sum::<f64>() / (want.len() - 4) as f64;
        for k in inner {
            let diff = (got[k] - gm) - (want[k] - wm);
            assert!(diff.abs() < 1.5, "bin {k}: residual {diff} dB");
        }
        // loudness lands on the target
        let lufs = measure_lufs(&normalized).unwrap();
        assert!((lufs - cfg.target_lufs).abs() < 0.1, "{lufs}");
    }

    #[test]
    fn already_matching_buffer_needs_no_correction() {
        let stem = noise_stem(30, 2.0);
        let cfg = ProfileConfig::default();
        let profile = compute_profile(&[("x".into(), &stem)], 16_000, &cfg).unwrap();
        let out = fx_normalize(&stem, &profile, "x").unwrap();
        // correction curve is exactly 0 dB; only the loudness step applies,
        // so the output is a scalar multiple of the input
        let g = out.left()[100] / stem.left()[100];
        for i in (0..stem.len()).step_by(997) {
            let want = stem.left()[i] * g;
            assert!((out.left()[i] - want).abs() < 2e-4, "sample {i}");
        }
    }

    #[test]
    fn normalization_is_idempotent_within_tolerance() {
        let stem = noise_stem(40, 2.0);
        let colored = apply_effect(
            &stem,
            &EffectSpec::new(EffectType::Equalizer, vec![0.9, 0.2, 0.7, 0.4]),
        )
        .unwrap();
        let cfg = ProfileConfig::default();
        let profile = compute_profile(&[("x".into(), &stem)], 16_000, &cfg).unwrap();
        let once = fx_normalize(&colored, &profile, "x").unwrap();
        let twice = fx_normalize(&once, &profile, "x").unwrap();
        let a = octave_smooth(&mean_log_spectrum(&once, cfg.n_fft));
        let b = octave_smooth(&mean_log_spectrum(&twice, cfg.n_fft));
        for k in 2..a.len() - 2 {
            assert!((a[k] - b[k]).abs() < 0.5, "bin {k}: {} vs {}", a[k], b[k]);
        }
        let la = measure_lufs(&once).unwrap();
        let lb = measure_lufs(&twice).unwrap();
        assert!((la - lb).abs() < 0.1);
    }

    #[test]
    fn correction_respects_the_clamp() {
        // profile demands +40 dB at high frequencies; the curve must clamp
        let quiet_highs = {
            let stem = noise_stem(50, 2.0);
            // -12 db high shelf twice would exceed the clamp; one is enough here
            apply_effect(
                &stem,
                &EffectSpec::new(EffectType::Equalizer, vec![0.5, 0.5, 0.5, 0.0]),
            )
            .unwrap()
        };
        let bright = noise_stem(51, 2.0);
        let cfg = ProfileConfig::default();
        let profile = compute_profile(&[("x".into(), &bright)], 16_000, &cfg).unwrap();
        // would need more than +12 dB in the top octave if uncapped twice;
        // verify the applied correction never exceeds the clamp
        let cur = mean_log_spectrum(&quiet_highs, cfg.n_fft);
        let raw: Vec<f64> = profile.classes["x"]
            .mean_log_mag_db
            .iter()
            .zip(&cur)
            .map(|(p, c)| p - c)
            .collect();
        let smooth = octave_smooth(&raw);
        let clamped: Vec<f64> = smooth.iter().map(|v| v.clamp(-12.0, 12.0)).collect();
        assert!(clamped.iter().all(|v| v.abs() <= 12.0));
        // and the pipeline itself runs
        let _ = fx_normalize(&quiet_highs, &profile, "x").unwrap();
    }

    #[test]
    fn unknown_class_is_an_error() {
        let stem = noise_stem(60, 1.0);
        let profile =
            compute_profile(&[("a".into(), &stem)], 16_000, &ProfileConfig::default()).unwrap();
        assert!(matches!(
            fx_normalize(&stem, &profile, "b"),
            Err(Error::UnknownClass(_))
        ));
    }

    #[test]
    fn profile_roundtrips_through_disk() {
        let stem = noise_stem(70, 1.0);
        let profile =
            compute_profile(&[("a".into(), &stem)], 16_000, &ProfileConfig::default()).unwrap();
        let dir = std::env::temp_dir().join("fxrep-profile-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("profile.json");
        profile.save(&path).unwrap();
        let back = NormalizationProfile::load(&path).unwrap();
        assert_eq!(back.version, PROFILE_FORMAT_VERSION);
        assert_eq!(back.classes["a"].mean_log_mag_db, profile.classes["a"].mean_log_mag_db);
        assert_eq!(back.freq_grid().len(), profile.n_fft / 2 + 1);
    }
}
