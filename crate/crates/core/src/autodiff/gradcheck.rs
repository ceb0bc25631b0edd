//! Finite-difference gradient verification.

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::seq::SliceRandom;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Check at most this many coordinates (sampled deterministically);
    /// `None` checks all of them.
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords: None,
            seed: 0x5eed,
        }
    }
}

/// Central finite differences of a scalar function at `input`.
pub fn finite_difference_grad<F>(mut f: F, input: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; input.len()];
    let mut x = input.to_vec();
    for i in 0..input.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * step);
    }
    grad
}

/// Compare an analytic gradient against central finite differences.
///
/// `f` evaluates the scalar function and returns `(value, analytic_grad)`;
/// the numeric gradient re-evaluates `f` and discards the analytic part.
/// Returns the max over checked coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(mut f: F, input: &[f64], opts: &GradCheckOptions) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = f(input)?;
    if analytic.len() != input.len() {
        return Err(Error::ShapeMismatch(format!(
            "analytic gradient has {} entries for {} inputs",
            analytic.len(),
            input.len()
        )));
    }
    let coords: Vec<usize> = match opts.max_coords {
        Some(m) if m < input.len() => {
            let mut idx: Vec<usize> = (0..input.len()).collect();
            let mut rng = rng_from_seed(opts.seed);
            idx.shuffle(&mut rng);
            idx.truncate(m);
            idx
        }
        _ => (0..input.len()).collect(),
    };
    let mut x = input.to_vec();
    let mut max_err = 0.0f64;
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + opts.step;
        let (fp, _) = f(&x)?;
        x[i] = orig - opts.step;
        let (fm, _) = f(&x)?;
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * opts.step);
        let a = analytic[i];
        if !a.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite(format!(
                "gradient check at coordinate {} (analytic {a}, numeric {numeric})",
                i
            )));
        }
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if err > max_err {
            max_err = err;
        }
    }
    Ok(max_err)
}
