use super::*;
use crate::rng::rng_from_seed;
use rand::Rng;

fn unit_rows(rng: &mut impl Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            raw.iter().map(|v| v / n).collect()
        })
        .collect()
}

fn flatten(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
    let dim = rows[0].len();
    (
        rows.iter().flatten().copied().collect(),
        vec![rows.len(), dim],
    )
}

/// Independent double-loop oracle, no stabilization tricks.
fn brute_force(rows: &[Vec<f64>], positives: &[(usize, usize)], tau: f64) -> f64 {
    let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for &(a, p) in positives {
        let num = (sim(&rows[a], &rows[p]) / tau).exp();
        let mut den = 0.0;
        for (k, row) in rows.iter().enumerate() {
            if k != a {
                den += (sim(&rows[a], row) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / positives.len() as f64
}

fn eval_ntxent(rows: &[Vec<f64>], n_pairs: usize, tau: f64) -> f64 {
    let mut tape = Tape::new();
    let (vals, shape) = flatten(rows);
    let z = tape.constant(vals, &shape);
    let loss = ntxent_mixture(&mut tape, z, n_pairs, tau).unwrap();
    tape.values(loss)[0]
}

#[test]
fn single_pair_loss_is_exactly_zero() {
    let mut rng = rng_from_seed(1);
    let rows = unit_rows(&mut rng, 2, 8);
    assert_eq!(eval_ntxent(&rows, 1, 0.1), 0.0);
}

#[test]
fn closed_form_two_identical_pairs_orthogonal_rest() {
    // rows 0=1, 2=3, pairs mutually orthogonal, tau=0.1:
    // per-term loss = log(1 + 2*exp(-10))
    let dim = 8;
    let mut e = |i: usize| {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    };
    let rows = vec![e(0), e(0), e(3), e(3)];
    let expected = (1.0 + 2.0 * (-10.0f64).exp()).ln();
    let got = eval_ntxent(&rows, 2, 0.1);
    assert!(
        (got - expected).abs() < 1e-12,
        "got {got}, expected {expected} (~9.08e-5)"
    );
    assert!((expected - 9.08e-5).abs() < 1e-7);
}

#[test]
fn matches_brute_force_on_100_random_instances() {
    let mut rng = rng_from_seed(2);
    for trial in 0..100 {
        let n_pairs = rng.random_range(1..=4);
        let hard = rng.random_range(0..=2);
        let rows = unit_rows(&mut rng, 2 * n_pairs + hard, 16);
        let got = eval_ntxent(&rows, n_pairs, 0.1);
        let want = brute_force(&rows, &pair_map(n_pairs), 0.1);
        assert!(
            (got - want).abs() < 1e-10,
            "trial {trial}: {got} vs {want}"
        );
    }
}

/// Random rotation via Gram-Schmidt on a random square matrix.
fn random_orthogonal(rng: &mut impl Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= d * bi;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    basis
}

#[test]
fn invariant_under_global_rotation() {
    let mut rng = rng_from_seed(3);
    let dim = 12;
    let rows = unit_rows(&mut rng, 8, dim);
    let base = eval_ntxent(&rows, 3, 0.1);
    let q = random_orthogonal(&mut rng, dim);
    let rotated: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            (0..dim)
                .map(|i| q[i].iter().zip(r).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect();
    let rot = eval_ntxent(&rotated, 3, 0.1);
    assert!((base - rot).abs() < 1e-8, "{base} vs {rot}");
}

#[test]
fn permuting_pairs_preserves_the_loss() {
    let mut rng = rng_from_seed(4);
    let rows = unit_rows(&mut rng, 6, 10);
    let base = eval_ntxent(&rows, 3, 0.1);
    // swap pair 0 and pair 2 wholesale
    let permuted = vec![
        rows[4].clone(),
        rows[5].clone(),
        rows[2].clone(),
        rows[3].clone(),
        rows[0].clone(),
        rows[1].clone(),
    ];
    let p = eval_ntxent(&permuted, 3, 0.1);
    assert!((base - p).abs() < 1e-12);
}

#[test]
fn instrument_loss_with_one_instrument_collapses_to_mixture_form() {
    let mut rng = rng_from_seed(5);
    let rows = unit_rows(&mut rng, 6, 8);
    let (vals, shape) = flatten(&rows);
    let mut tape = Tape::new();
    let z = tape.constant(vals, &shape);
    let inst = ntxent_instrument(&mut tape, &[z], 3, 0.1, false).unwrap();
    let mix = ntxent_mixture(&mut tape, z, 3, 0.1).unwrap();
    assert!((tape.values(inst)[0] - tape.values(mix)[0]).abs() < 1e-12);
}

#[test]
fn instrument_loss_matches_brute_force_both_modes() {
    let mut rng = rng_from_seed(6);
    for trial in 0..50 {
        let n_pairs = rng.random_range(1..=3);
        let k = rng.random_range(1..=2);
        let per: Vec<Vec<Vec<f64>>> = (0..k)
            .map(|_| unit_rows(&mut rng, 2 * n_pairs, 12))
            .collect();

        let mut tape = Tape::new();
        let ids: Vec<_> = per
            .iter()
            .map(|rows| {
                let (vals, shape) = flatten(rows);
                tape.constant(vals, &shape)
            })
            .collect();

        // mode A: average of per-instrument losses over own rows
        let got_a = {
            let t = ntxent_instrument(&mut tape, &ids, n_pairs, 0.1, false).unwrap();
            tape.values(t)[0]
        };
        let want_a: f64 = per
            .iter()
            .map(|rows| brute_force(rows, &pair_map(n_pairs), 0.1))
            .sum::<f64>()
            / k as f64;
        assert!((got_a - want_a).abs() < 1e-10, "trial {trial} mode A");

        // mode B: stacked rows, denominators span all instruments
        let got_b = {
            let t = ntxent_instrument(&mut tape, &ids, n_pairs, 0.1, true).unwrap();
            tape.values(t)[0]
        };
        let stacked: Vec<Vec<f64>> = per.iter().flatten().cloned().collect();
        let rows_per = 2 * n_pairs;
        let mut positives = Vec::new();
        for m in 0..k {
            for (a, p) in pair_map(n_pairs) {
                positives.push((m * rows_per + a, m * rows_per + p));
            }
        }
        let want_b = brute_force(&stacked, &positives, 0.1);
        assert!((got_b - want_b).abs() < 1e-10, "trial {trial} mode B");
    }
}

#[test]
fn non_unit_rows_rejected() {
    let mut tape = Tape::new();
    let z = tape.constant(vec![2.0, 0.0, 0.0, 1.0], &[2, 2]);
    assert!(ntxent_mixture(&mut tape, z, 1, 0.1).is_err());
}

#[test]
fn lambda_schedule_endpoints_and_midpoint() {
    let w = LossWeights::default();
    w.validate().unwrap();
    assert_eq!(lambda_schedule(0, &w), (1.0, 0.0));
    assert_eq!(lambda_schedule(w.ramp_start_step, &w), (1.0, 0.0));
    let (lm, li) = lambda_schedule((w.ramp_start_step + w.ramp_end_step) / 2, &w);
    assert!((lm - 0.9).abs() < 1e-12 && (li - 0.1).abs() < 1e-12);
    assert_eq!(lambda_schedule(w.ramp_end_step, &w), (0.8, 0.2));
    assert_eq!(lambda_schedule(w.ramp_end_step + 999, &w), (0.8, 0.2));
    // exact complementarity everywhere
    for step in (0..4000).step_by(37) {
        let (a, b) = lambda_schedule(step, &w);
        assert_eq!(a + b, 1.0);
    }
}

#[test]
fn combined_loss_weights_components() {
    let mut rng = rng_from_seed(7);
    let rows = unit_rows(&mut rng, 4, 8);
    let inst_rows = unit_rows(&mut rng, 4, 8);
    let w = LossWeights::default();

    let mut tape = Tape::new();
    let (v1, s1) = flatten(&rows);
    let z = tape.leaf(v1, &s1);
    let (v2, s2) = flatten(&inst_rows);
    let zi = tape.leaf(v2, &s2);
    let lm = ntxent_mixture(&mut tape, z, 2, 0.1).unwrap();
    let li = ntxent_instrument(&mut tape, &[zi], 2, 0.1, false).unwrap();

    // step 0: combined == mixture loss exactly
    let c0 = combined_loss(&mut tape, lm, Some(li), 0, &w).unwrap();
    assert_eq!(tape.values(c0)[0], tape.values(lm)[0]);

    // after the ramp: 0.8 / 0.2 mix
    let c1 = combined_loss(&mut tape, lm, Some(li), w.ramp_end_step, &w).unwrap();
    let want = 0.8 * tape.values(lm)[0] + 0.2 * tape.values(li)[0];
    assert!((tape.values(c1)[0] - want).abs() < 1e-12);

    // gradient linearity: d(combined)/dz equals the weighted sum of grads
    tape.backward(c1).unwrap();
    let g_comb = tape.grad(z).unwrap().to_vec();
    tape.backward(lm).unwrap();
    let g_mix = tape.grad(z).unwrap().to_vec();
    for (gc, gm) in g_comb.iter().zip(&g_mix) {
        assert!((gc - 0.8 * gm).abs() < 1e-10);
    }
}

#[test]
fn loss_decreases_under_gradient_descent_on_fixed_rows() {
    // plain descent on the raw rows, re-normalized each step
    let mut rng = rng_from_seed(8);
    let mut rows = unit_rows(&mut rng, 8, 8);
    let mut last = f64::INFINITY;
    for window in 0..5 {
        // 20-step windows must be monotone
        for _ in 0..20 {
            let mut tape = Tape::new();
            let (vals, shape) = flatten(&rows);
            let z = tape.leaf(vals, &shape);
            let zn = tape.l2_normalize(z);
            let loss = ntxent_mixture(&mut tape, zn, 4, 0.1).unwrap();
            tape.backward(loss).unwrap();
            let g = tape.grad(z).unwrap();
            for (r, row) in rows.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v -= 0.5 * g[r * 8 + c];
                }
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        let now = eval_ntxent(&rows, 4, 0.1);
        assert!(now < last, "window {window}: {now} !< {last}");
        last = now;
    }
}
