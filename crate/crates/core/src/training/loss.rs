//! Normalized-temperature cross-entropy objectives over unit-norm
//! embedding rows, numerically stabilized by row-max subtraction.

use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};

/// NT-Xent over rows of `z` ([R, D], unit-norm): the mean over the given
/// ordered (anchor, positive) pairs of
/// `-log(exp(s_ap/tau) / sum_{k != a} exp(s_ak/tau))`.
/// Rows that appear in no pair (hard negatives) only enter denominators.
pub fn ntxent(
    tape: &mut Tape,
    z: TensorId,
    positives: &[(usize, usize)],
    tau: f64,
) -> Result<TensorId> {
    let shape = tape.shape(z).to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "ntxent expects [rows, dim], got {:?}",
            shape
        )));
    }
    let rows = shape[0];
    if positives.is_empty() {
        return Err(Error::InvalidParam("ntxent needs at least one pair".into()));
    }
    for &(a, p) in positives {
        if a >= rows || p >= rows || a == p {
            return Err(Error::InvalidParam(format!(
                "invalid positive pair ({a}, {p}) for {rows} rows"
            )));
        }
    }
    if tau <= 0.0 {
        return Err(Error::InvalidParam(format!("temperature {tau} must be positive")));
    }
    // unit-norm contract on the rows
    {
        let vals = tape.values(z);
        let cols = shape[1];
        for r in 0..rows {
            let n: f64 = vals[r * cols..(r + 1) * cols]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if (n - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidParam(format!(
                    "ntxent row {r} has norm {n}, expected unit"
                )));
            }
        }
    }

    let sims = tape.matmul_nt(z, z)?;
    let scaled = tape.affine(sims, 1.0 / tau, 0.0);
    // self-similarities leave every denominator via a -1e9 mask
    let mut mask = vec![0.0; rows * rows];
    for r in 0..rows {
        mask[r * rows + r] = -1e9;
    }
    let mask_t = tape.constant(mask, &[rows, rows]);
    let masked = tape.add(scaled, mask_t)?;

    // detached row maxima for the stabilized log-sum-exp
    let row_max: Vec<f64> = {
        let v = tape.values(masked);
        (0..rows)
            .map(|r| v[r * rows..(r + 1) * rows].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    };
    let max_col = tape.constant(row_max, &[rows, 1]);
    let shifted = tape.sub(masked, max_col)?;
    let e = tape.exp(shifted);
    let sums = tape.sum_axis(e, 1)?;
    let log_sums = tape.log(sums);
    let lse = tape.add(log_sums, max_col)?;

    // positive similarities and per-row anchor multiplicity
    let mut p_mat = vec![0.0; rows * rows];
    let mut anchor_w = vec![0.0; rows];
    for &(a, p) in positives {
        p_mat[a * rows + p] += 1.0;
        anchor_w[a] += 1.0;
    }
    let p_t = tape.constant(p_mat, &[rows, rows]);
    let picked = tape.mul(masked, p_t)?;
    let pos = tape.sum_axis(picked, 1)?;
    let w_t = tape.constant(anchor_w, &[rows, 1]);
    let weighted_lse = tape.mul(lse, w_t)?;
    let per_row = tape.sub(weighted_lse, pos)?;
    let total = tape.sum(per_row);
    Ok(tape.affine(total, 1.0 / positives.len() as f64, 0.0))
}

/// Ordered positive pairs for a batch laid out as rows
/// `[m1_0, m2_0, m1_1, m2_1, ..., hn_0, ...]`.
pub fn pair_map(n_pairs: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(2 * n_pairs);
    for i in 0..n_pairs {
        pairs.push((2 * i, 2 * i + 1));
        pairs.push((2 * i + 1, 2 * i));
    }
    pairs
}

/// Mixture-level loss: rows `0..2N` are the pair mixtures, any further rows
/// are hard negatives (denominator-only).
pub fn ntxent_mixture(tape: &mut Tape, z: TensorId, n_pairs: usize, tau: f64) -> Result<TensorId> {
    let rows = tape.shape(z)[0];
    if rows < 2 * n_pairs {
        return Err(Error::ShapeMismatch(format!(
            "{rows} rows cannot hold {n_pairs} pairs"
        )));
    }
    ntxent(tape, z, &pair_map(n_pairs), tau)
}

/// Instrument-aware loss over per-instrument extracted embeddings (one
/// tensor per instrument index, same row layout as the mixture loss).
///
/// With `cross_query_negatives` off, each instrument's loss sees only its
/// own rows (same-instrument negatives) and the k losses are averaged.
/// With it on, all instruments' rows are stacked so the denominators also
/// contain the same mixtures under every other query, which penalizes
/// extractors that ignore the query.
pub fn ntxent_instrument(
    tape: &mut Tape,
    z_per_instrument: &[TensorId],
    n_pairs: usize,
    tau: f64,
    cross_query_negatives: bool,
) -> Result<TensorId> {
    let k = z_per_instrument.len();
    if k == 0 {
        return Err(Error::InvalidParam("no instrument embeddings".into()));
    }
    let rows = tape.shape(z_per_instrument[0])[0];
    for &zi in z_per_instrument {
        if tape.shape(zi)[0] != rows {
            return Err(Error::ShapeMismatch(
                "instrument embedding row counts disagree".into(),
            ));
        }
    }
    if cross_query_negatives && k > 1 {
        let stacked = tape.concat(z_per_instrument)?;
        let mut positives = Vec::new();
        for (m, _) in z_per_instrument.iter().enumerate() {
            for (a, p) in pair_map(n_pairs) {
                positives.push((m * rows + a, m * rows + p));
            }
        }
        ntxent(tape, stacked, &positives, tau)
    } else {
        let mut acc: Option<TensorId> = None;
        for &zi in z_per_instrument {
            let term = ntxent(tape, zi, &pair_map(n_pairs), tau)?;
            acc = Some(match acc {
                None => term,
                Some(prev) => tape.add(prev, term)?,
            });
        }
        Ok(tape.affine(acc.unwrap(), 1.0 / k as f64, 0.0))
    }
}

/// Curriculum weights for the combined objective.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Mixture weight after the ramp.
    pub final_mix: f64,
    /// Instrument weight after the ramp; final_mix + final_inst must be 1.
    pub final_inst: f64,
    pub ramp_start_step: u64,
    pub ramp_end_step: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            final_mix: 0.8,
            final_inst: 0.2,
            ramp_start_step: 1000,
            ramp_end_step: 3000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.ramp_start_step > self.ramp_end_step {
            return Err(Error::InvalidConfig(
                "ramp_start_step must not exceed ramp_end_step".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.final_inst) || self.final_mix + self.final_inst != 1.0 {
            return Err(Error::InvalidConfig(
                "loss weights must satisfy final_mix + final_inst = 1".into(),
            ));
        }
        Ok(())
    }
}

/// (lambda_mix, lambda_inst) at `step`: (1, 0) before the ramp, linear to
/// the final weights, constant after. lambda_mix is computed as the exact
/// complement so the pair always sums to exactly one.
pub fn lambda_schedule(step: u64, w: &LossWeights) -> (f64, f64) {
    if step <= w.ramp_start_step {
        return (1.0, 0.0);
    }
    if step >= w.ramp_end_step {
        return (w.final_mix, w.final_inst);
    }
    let span = (w.ramp_end_step - w.ramp_start_step) as f64;
    let t = (step - w.ramp_start_step) as f64 / span;
    let li = w.final_inst * t;
    (1.0 - li, li)
}

/// L = lambda_mix * l_mixture + lambda_inst * l_inst.
pub fn combined_loss(
    tape: &mut Tape,
    loss_mix: TensorId,
    loss_inst: Option<TensorId>,
    step: u64,
    w: &LossWeights,
) -> Result<TensorId> {
    let (lm, li) = lambda_schedule(step, w);
    let mix_term = tape.affine(loss_mix, lm, 0.0);
    match loss_inst {
        Some(inst) if li > 0.0 => {
            let inst_term = tape.affine(inst, li, 0.0);
            tape.add(mix_term, inst_term)
        }
        _ => Ok(mix_term),
    }
}

#[cfg(test)]
mod tests;
