//! Effects-retrieval benchmark: pools of (query, candidate) programs that
//! share a chain identity, ranked by cosine similarity in embedding space.

use crate::datagen::{FxProbabilities, SourceLibrary};
use crate::dsp::buffer::AudioBuffer;
use crate::dsp::chain::{apply_chain, sample_chain, ChainId, FxChain};
use crate::dsp::loudness::normalize_lufs;
use crate::error::{Error, Result};
use crate::model::{
    bind_params, encode, extract, logmel, query_vector, Features, MelFrontend, ModelConfig,
    ParamStore, QueryMode, QuerySource,
};
use crate::parallel::par_map_indexed;
use crate::rng::{derive_seed, rng_from_seed};
use crate::autodiff::Tape;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Embeddings of the whole processed mixture.
    MixtureLevel,
    /// Embeddings of the isolated processed target stem (upper bound).
    InstrumentOracle,
    /// Query-conditioned extraction from the mixture.
    InstrumentExtracted,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::MixtureLevel => "mixture-level",
            Scenario::InstrumentOracle => "instrument-oracle",
            Scenario::InstrumentExtracted => "instrument-extracted",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub pool_size: usize,
    /// Instruments per program (target plus distractors).
    pub instruments_range: (usize, usize),
    /// Chain length for distractor instruments.
    pub distractor_chain_len: (usize, usize),
    pub track_lufs: (f64, f64),
    pub mix_lufs: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pool_size: 100,
            instruments_range: (1, 2),
            distractor_chain_len: (1, 3),
            track_lufs: (-18.0, -14.0),
            mix_lufs: -18.0,
            seed: 9090,
        }
    }
}

/// A retrieval pool: entry i's query matches candidate i and nothing else.
pub struct RetrievalPool {
    pub scenario: Scenario,
    pub n_effects: usize,
    pub chain_ids: Vec<ChainId>,
    pub target_classes: Vec<String>,
    pub query_embs: Vec<Vec<f64>>,
    pub cand_embs: Vec<Vec<f64>>,
    /// Mixture features, retained for instrument-extracted pools so queries
    /// can be re-run with other classes.
    pub query_feats: Option<Vec<Features>>,
    pub cand_feats: Option<Vec<Features>>,
}

struct ProgramPair {
    query: AudioBuffer,
    candidate: AudioBuffer,
    /// isolated processed target stems (oracle scenario)
    query_solo: Option<AudioBuffer>,
    cand_solo: Option<AudioBuffer>,
    chain: FxChain,
    target_class: String,
}

/// Render one pool entry: a chain applied to two content-disjoint programs.
fn render_entry(
    library: &SourceLibrary,
    cfg: &EvalConfig,
    scenario: Scenario,
    n_effects: usize,
    segment_secs: f64,
    seed: u64,
) -> Result<ProgramPair> {
    let mut rng = rng_from_seed(seed);
    let probs = FxProbabilities::constant(1.0);
    let chain = sample_chain(&mut rng, &probs, (n_effects, n_effects))?;
    let classes = library.classes();
    let k = rng.random_range(cfg.instruments_range.0..=cfg.instruments_range.1);
    let target_class = classes[rng.random_range(0..classes.len())].clone();

    let sr = library.config().sample_rate;
    let seg_len = (segment_secs * sr as f64).round() as usize;

    // choose stems: slot 0 is the target instrument
    let mut slot_classes = vec![target_class.clone()];
    for _ in 1..k {
        slot_classes.push(classes[rng.random_range(0..classes.len())].clone());
    }
    let mut halves: Vec<(AudioBuffer, AudioBuffer)> = Vec::new();
    let mut used: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for class in &slot_classes {
        let total = library.stem_count(class);
        let taken = used.entry(class.as_str()).or_default();
        if taken.len() >= total {
            return Err(Error::InvalidConfig(format!(
                "not enough stems of class {class} for evaluation entry"
            )));
        }
        let mut idx = rng.random_range(0..total);
        while taken.contains(&idx) {
            idx = rng.random_range(0..total);
        }
        taken.push(idx);
        let stem = library.normalized_stem(class, idx)?;
        if stem.len() < 2 * seg_len {
            return Err(Error::Audio(format!("stem of {class} too short for eval")));
        }
        halves.push((stem.segment(0, seg_len)?, stem.segment(seg_len, seg_len)?));
    }

    match scenario {
        Scenario::MixtureLevel => {
            // dry bus at the mix loudness, then the chain on the bus
            let build = |which: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Result<AudioBuffer> {
                let mut bus = AudioBuffer::silence(sr, seg_len);
                for half in &halves {
                    let seg = if which == 0 { &half.0 } else { &half.1 };
                    let target = rng.random_range(cfg.track_lufs.0..cfg.track_lufs.1);
                    let (n, _) = normalize_lufs(seg, target)?;
                    bus.mix_add(&n, 1.0)?;
                }
                let (bus, _) = normalize_lufs(&bus, cfg.mix_lufs)?;
                apply_chain(&bus, &chain)
            };
            let query = build(0, &mut rng)?;
            let candidate = build(1, &mut rng)?;
            Ok(ProgramPair {
                query,
                candidate,
                query_solo: None,
                cand_solo: None,
                chain,
                target_class,
            })
        }
        Scenario::InstrumentOracle | Scenario::InstrumentExtracted => {
            // the target instrument carries the chain; distractors get
            // independent chains per program
            let build = |which: usize,
                             rng: &mut rand_chacha::ChaCha8Rng|
             -> Result<(AudioBuffer, AudioBuffer)> {
                let mut bus = AudioBuffer::silence(sr, seg_len);
                let mut solo = None;
                for (j, half) in halves.iter().enumerate() {
                    let seg = if which == 0 { &half.0 } else { &half.1 };
                    let target = rng.random_range(cfg.track_lufs.0..cfg.track_lufs.1);
                    let normalized = if j == 0 {
                        let processed = apply_chain(seg, &chain)?;
                        match normalize_lufs(&processed, target) {
                            Ok((n, _)) => n,
                            // the target chain silenced this stem: keep the
                            // processed audio unnormalized (still a valid
                            // render of the chain identity)
                            Err(Error::BelowGate) => processed,
                            Err(e) => return Err(e),
                        }
                    } else {
                        // distractor chains are resampled until processable
                        let mut accepted = None;
                        for _ in 0..32 {
                            let dc = sample_chain(rng, &probs, cfg.distractor_chain_len)?;
                            let processed = apply_chain(seg, &dc)?;
                            match normalize_lufs(&processed, target) {
                                Ok((n, _)) => {
                                    accepted = Some(n);
                                    break;
                                }
                                Err(Error::BelowGate) => continue,
                                Err(e) => return Err(e),
                            }
                        }
                        accepted.ok_or_else(|| {
                            Error::Audio("distractor chains kept silencing the stem".into())
                        })?
                    };
                    if j == 0 {
                        solo = Some(normalized.clone());
                    }
                    bus.mix_add(&normalized, 1.0)?;
                }
                let (bus, _) = normalize_lufs(&bus, cfg.mix_lufs)?;
                let (solo, _) = normalize_lufs(&solo.unwrap(), cfg.mix_lufs)?;
                Ok((bus, solo))
            };
            let (query, query_solo) = build(0, &mut rng)?;
            let (candidate, cand_solo) = build(1, &mut rng)?;
            Ok(ProgramPair {
                query,
                candidate,
                query_solo: Some(query_solo),
                cand_solo: Some(cand_solo),
                chain,
                target_class,
            })
        }
    }
}

fn embed_mixture(store: &ParamStore, cfg: &ModelConfig, feat: &Features) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = bind_params(&mut tape, store, false);
    let ft = tape.constant(feat.values.clone(), &[feat.frames, feat.mel_bins]);
    let z = encode(&mut tape, &b, cfg, ft)?;
    Ok(tape.values(z).to_vec())
}

/// Extractor embedding of a mixture feature under a class query.
pub fn embed_extracted(
    store: &ParamStore,
    cfg: &ModelConfig,
    feat: &Features,
    class: &str,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let b = bind_params(&mut tape, store, false);
    let ft = tape.constant(feat.values.clone(), &[feat.frames, feat.mel_bins]);
    let z = encode(&mut tape, &b, cfg, ft)?;
    let mut rng = rng_from_seed(0);
    let q = query_vector(&mut tape, &b, cfg, QuerySource::Class(class), QueryMode::Eval, &mut rng)?;
    let out = extract(&mut tape, &b, cfg, q, z)?;
    Ok(tape.values(out).to_vec())
}

/// Build a retrieval pool of `pool_size` chains with exactly `n_effects`
/// effects each, rendered per the scenario and embedded with the model.
pub fn build_pool(
    library: &SourceLibrary,
    store: &ParamStore,
    model_cfg: &ModelConfig,
    cfg: &EvalConfig,
    n_effects: usize,
    scenario: Scenario,
) -> Result<RetrievalPool> {
    if !(1..=8).contains(&n_effects) {
        return Err(Error::InvalidParam(format!(
            "n_effects {n_effects} outside 1..=8"
        )));
    }
    let frontend = MelFrontend::new(model_cfg);
    let base = derive_seed(cfg.seed, n_effects as u64 + 100 * scenario as u64);
    let rendered = par_map_indexed(cfg.pool_size, |i| {
        render_entry(
            library,
            cfg,
            scenario,
            n_effects,
            model_cfg.segment_secs,
            derive_seed(base, i as u64),
        )
    });
    let mut entries = Vec::with_capacity(cfg.pool_size);
    for e in rendered {
        entries.push(e?);
    }
    // chain identities must be unique within the pool
    let mut ids: Vec<ChainId> = entries.iter().map(|e| e.chain.chain_id()).collect();
    {
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::InvalidParam(
                "duplicate chain identity in retrieval pool".into(),
            ));
        }
    }

    let feats = |buf: &AudioBuffer| logmel(buf, &frontend);
    let mut query_feats = Vec::with_capacity(entries.len());
    let mut cand_feats = Vec::with_capacity(entries.len());
    for e in &entries {
        match scenario {
            Scenario::InstrumentOracle => {
                query_feats.push(feats(e.query_solo.as_ref().unwrap())?);
                cand_feats.push(feats(e.cand_solo.as_ref().unwrap())?);
            }
            _ => {
                query_feats.push(feats(&e.query)?);
                cand_feats.push(feats(&e.candidate)?);
            }
        }
    }

    let embed_all = |feats: &[Features]| -> Result<Vec<Vec<f64>>> {
        let out = par_map_indexed(feats.len(), |i| match scenario {
            Scenario::InstrumentExtracted => {
                embed_extracted(store, model_cfg, &feats[i], &entries[i].target_class)
            }
            _ => embed_mixture(store, model_cfg, &feats[i]),
        });
        out.into_iter().collect()
    };
    let query_embs = embed_all(&query_feats)?;
    let cand_embs = embed_all(&cand_feats)?;

    let target_classes = entries.iter().map(|e| e.target_class.clone()).collect();
    let keep_feats = scenario == Scenario::InstrumentExtracted;
    Ok(RetrievalPool {
        scenario,
        n_effects,
        chain_ids: std::mem::take(&mut ids),
        target_classes,
        query_embs,
        cand_embs,
        query_feats: keep_feats.then_some(query_feats),
        cand_feats: keep_feats.then_some(cand_feats),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// Fractions in [0, 1].
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub map_at_10: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rank of the true candidate for each query (1-based).
pub fn target_ranks(query_embs: &[Vec<f64>], cand_embs: &[Vec<f64>]) -> Vec<usize> {
    (0..query_embs.len())
        .map(|i| {
            let own = cosine(&query_embs[i], &cand_embs[i]);
            let better = cand_embs
                .iter()
                .enumerate()
                .filter(|(j, c)| *j != i && cosine(&query_embs[i], c) > own)
                .count();
            better + 1
        })
        .collect()
}

pub fn metrics_from_ranks(ranks: &[usize]) -> RetrievalMetrics {
    let n = ranks.len().max(1) as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let map10 = ranks
        .iter()
        .map(|&r| if r <= 10 { 1.0 / r as f64 } else { 0.0 })
        .sum::<f64>()
        / n;
    RetrievalMetrics {
        r_at_1: frac(1),
        r_at_5: frac(5),
        r_at_10: frac(10),
        map_at_10: map10,
    }
}

/// Rank candidates by cosine similarity per query; one relevant item each.
pub fn retrieval_metrics(pool: &RetrievalPool) -> RetrievalMetrics {
    metrics_from_ranks(&target_ranks(&pool.query_embs, &pool.cand_embs))
}

/// Re-embed an instrument-extracted pool, choosing the query class per
/// entry (e.g. deliberately mismatched), queries only.
pub fn metrics_with_query_class(
    pool: &RetrievalPool,
    store: &ParamStore,
    model_cfg: &ModelConfig,
    choose: impl Fn(&str) -> String + Sync + Send,
) -> Result<RetrievalMetrics> {
    let qf = pool
        .query_feats
        .as_ref()
        .ok_or_else(|| Error::InvalidParam("pool kept no features".into()))?;
    let new_queries = par_map_indexed(qf.len(), |i| {
        let class = choose(&pool.target_classes[i]);
        embed_extracted(store, model_cfg, &qf[i], &class)
    });
    let mut q = Vec::with_capacity(qf.len());
    for e in new_queries {
        q.push(e?);
    }
    Ok(metrics_from_ranks(&target_ranks(&q, &pool.cand_embs)))
}

/// One pool per effect count, metrics per count.
pub fn effect_count_sweep(
    library: &SourceLibrary,
    store: &ParamStore,
    model_cfg: &ModelConfig,
    cfg: &EvalConfig,
    counts: &[usize],
    scenario: Scenario,
) -> Result<Vec<(usize, RetrievalMetrics)>> {
    counts
        .iter()
        .map(|&n| {
            let pool = build_pool(library, store, model_cfg, cfg, n, scenario)?;
            Ok((n, retrieval_metrics(&pool)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
        raw.iter().map(|v| v / n).collect()
    }

    #[test]
    fn perfect_embeddings_give_full_recall() {
        let mut rng = rng_from_seed(1);
        let cands: Vec<Vec<f64>> = (0..20).map(|_| unit(&mut rng, 8)).collect();
        let m = metrics_from_ranks(&target_ranks(&cands, &cands));
        assert_eq!(m.r_at_1, 1.0);
        assert_eq!(m.map_at_10, 1.0);
    }

    #[test]
    fn single_query_rank_three_gives_third_map() {
        // one query whose target ranks third
        let q = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.8, 0.2]];
        let mut c = q.clone();
        // query 0's own candidate made worse than two others
        c[0] = vec![0.0, 1.0];
        let ranks = target_ranks(&q[..1].to_vec(), &c);
        assert_eq!(ranks, vec![3]);
        let m = metrics_from_ranks(&ranks);
        assert!((m.map_at_10 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.r_at_1, 0.0);
        assert_eq!(m.r_at_5, 1.0);
    }

    #[test]
    fn random_embeddings_sit_at_chance() {
        // pool of 100 candidates, 1000 queries against it: R@1 ~ 1%
        let mut rng = rng_from_seed(2);
        let d = 32;
        let cands: Vec<Vec<f64>> = (0..100).map(|_| unit(&mut rng, d)).collect();
        let mut hits = 0;
        let mut total = 0;
        for rep in 0..10 {
            let queries: Vec<Vec<f64>> = (0..100).map(|_| unit(&mut rng, d)).collect();
            let ranks = target_ranks(&queries, &cands);
            hits += ranks.iter().filter(|&&r| r == 1).count();
            total += ranks.len();
            let _ = rep;
        }
        let r1 = hits as f64 / total as f64;
        // binomial around 0.01 over 1000 trials: 4 sigma ~ [0, 0.0226]
        assert!(r1 < 0.025, "chance-level R@1 was {r1}");
        assert!(hits >= 1, "suspiciously zero hits");
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let mut rng = rng_from_seed(3);
        let d = 16;
        let cands: Vec<Vec<f64>> = (0..50).map(|_| unit(&mut rng, d)).collect();
        // noisy queries: mostly aligned with their candidate
        let queries: Vec<Vec<f64>> = cands
            .iter()
            .map(|c| {
                let noise = unit(&mut rng, d);
                let mixed: Vec<f64> = c.iter().zip(&noise).map(|(a, b)| a + 0.8 * b).collect();
                let n = mixed.iter().map(|v| v * v).sum::<f64>().sqrt();
                mixed.iter().map(|v| v / n).collect()
            })
            .collect();
        let m = metrics_from_ranks(&target_ranks(&queries, &cands));
        assert!(m.r_at_1 <= m.r_at_5 && m.r_at_5 <= m.r_at_10);
        assert!(m.r_at_10 > 0.2);
    }

    #[test]
    fn metrics_invariant_under_rotation() {
        let mut rng = rng_from_seed(4);
        let d = 8;
        let cands: Vec<Vec<f64>> = (0..30).map(|_| unit(&mut rng, d)).collect();
        let queries: Vec<Vec<f64>> = (0..30).map(|_| unit(&mut rng, d)).collect();
        let base = target_ranks(&queries, &cands);
        // Householder reflection: orthogonal, cheap to build
        let v = unit(&mut rng, d);
        let reflect = |x: &Vec<f64>| -> Vec<f64> {
            let dvx: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
            x.iter().zip(&v).map(|(xi, vi)| xi - 2.0 * dvx * vi).collect()
        };
        let rq: Vec<Vec<f64>> = queries.iter().map(reflect).collect();
        let rc: Vec<Vec<f64>> = cands.iter().map(reflect).collect();
        assert_eq!(base, target_ranks(&rq, &rc));
    }
}
