//! Contrastive training batches: mixture pairs with identical effects but
//! disjoint content, consistent instrumentation across the whole batch, and
//! hand-crafted hard negatives (same content, different effects).

use super::library::SourceLibrary;
use super::schedule::{fx_probability_schedule, FxProbabilities, FxScheduleConfig};
use crate::dsp::buffer::AudioBuffer;
use crate::dsp::chain::{apply_chain, sample_chain, FxChain};
use crate::dsp::loudness::normalize_lufs;
use crate::error::{Error, Result};
use crate::parallel::par_map_indexed;
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    /// N mixture pairs per batch (must be even).
    pub batch_pairs: usize,
    /// Hard negatives per batch, each attached to one pair.
    pub hard_negatives: usize,
    pub segment_secs: f64,
    /// Instruments per mixture, inclusive range.
    pub instruments_range: (usize, usize),
    /// Effects per chain during training, inclusive range.
    pub chain_len_range: (usize, usize),
    /// Per-track loudness draw, LUFS (lo, hi).
    pub track_lufs: (f64, f64),
    /// Final mixture loudness, LUFS.
    pub mix_lufs: f64,
    pub fx_schedule: FxScheduleConfig,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            batch_pairs: 16,
            hard_negatives: 2,
            segment_secs: 1.0,
            instruments_range: (1, 4),
            chain_len_range: (1, 5),
            track_lufs: (-18.0, -14.0),
            mix_lufs: -18.0,
            fx_schedule: FxScheduleConfig::default(),
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_pairs == 0 || self.batch_pairs % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch_pairs must be even and positive, got {}",
                self.batch_pairs
            )));
        }
        let (lo, hi) = self.instruments_range;
        if lo < 1 || lo > hi || hi > 4 {
            return Err(Error::InvalidConfig(format!(
                "instruments_range ({lo},{hi}) outside 1..=4"
            )));
        }
        let (clo, chi) = self.chain_len_range;
        if clo < 1 || clo > chi || chi > 8 {
            return Err(Error::InvalidConfig(format!(
                "chain_len_range ({clo},{chi}) outside 1..=8"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InstrumentSlot {
    pub class: String,
    pub stem_index: usize,
}

/// One positive pair: two mixtures with identical per-instrument chains and
/// disjoint source segments.
pub struct MixturePair {
    pub m1: AudioBuffer,
    pub m2: AudioBuffer,
    pub chains: Vec<FxChain>,
    /// Query identifiers: one instrument class per chain.
    pub queries: Vec<String>,
    pub slots: Vec<InstrumentSlot>,
    /// Pre-effects normalized segments per instrument (first, second).
    pub segments: Vec<(AudioBuffer, AudioBuffer)>,
    /// Per-track loudness targets (one draw per instrument).
    pub track_targets: Vec<f64>,
    /// Gains actually applied per (instrument, segment) by loudness
    /// normalization, recorded so stems can be reproduced bit-exactly.
    pub track_gains: Vec<(f32, f32)>,
    /// Final mixture normalization gains (m1, m2).
    pub mix_gains: (f32, f32),
}

pub struct HardNegative {
    pub mixture: AudioBuffer,
    pub chains: Vec<FxChain>,
    /// Index of the pair whose first-mixture segments this negative reuses.
    pub pair_index: usize,
}

pub struct TrainBatch {
    pub pairs: Vec<MixturePair>,
    pub hard_negatives: Vec<HardNegative>,
    /// The instrument multiset shared by every mixture in the batch.
    pub instruments: Vec<String>,
    pub step: u64,
    pub fx_probs: FxProbabilities,
}

impl TrainBatch {
    /// Total number of mixtures: 2N pairs plus hard negatives.
    pub fn mixture_count(&self) -> usize {
        self.pairs.len() * 2 + self.hard_negatives.len()
    }
}

type ProcessedTrack = (
    FxChain,
    AudioBuffer,
    crate::dsp::loudness::NormalizeReport,
    AudioBuffer,
    crate::dsp::loudness::NormalizeReport,
);

/// Sample chains until both processed segments stay above the loudness
/// gate; silencing chains are rejected.
fn sample_processable_chain(
    segments: &(AudioBuffer, AudioBuffer),
    rng: &mut impl Rng,
    fx_probs: &FxProbabilities,
    len_range: (usize, usize),
    target: f64,
) -> Result<ProcessedTrack> {
    for _ in 0..32 {
        let chain = sample_chain(rng, fx_probs, len_range)?;
        let s1 = apply_chain(&segments.0, &chain)?;
        let s2 = apply_chain(&segments.1, &chain)?;
        match (normalize_lufs(&s1, target), normalize_lufs(&s2, target)) {
            (Ok((n1, r1)), Ok((n2, r2))) => return Ok((chain, n1, r1, n2, r2)),
            (Err(Error::BelowGate), _) | (_, Err(Error::BelowGate)) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    Err(Error::Audio(
        "could not sample a chain that keeps the track above the loudness gate".into(),
    ))
}

fn pick_slots(
    library: &SourceLibrary,
    instruments: &[String],
    rng: &mut impl Rng,
) -> Result<Vec<InstrumentSlot>> {
    let mut used: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    let mut slots = Vec::with_capacity(instruments.len());
    for class in instruments {
        let total = library.stem_count(class);
        let taken = used.entry(class.as_str()).or_default();
        if taken.len() >= total {
            return Err(Error::InvalidConfig(format!(
                "not enough distinct stems of class {class} ({total}) for this batch"
            )));
        }
        let mut idx = rng.random_range(0..total);
        while taken.contains(&idx) {
            idx = rng.random_range(0..total);
        }
        taken.push(idx);
        slots.push(InstrumentSlot {
            class: class.clone(),
            stem_index: idx,
        });
    }
    Ok(slots)
}

/// The five-step pair construction: sample chains, choose normalized
/// sources, split into disjoint halves, render the same chain onto both
/// halves, and mix with per-track then mixture loudness normalization.
pub fn make_pair(
    library: &SourceLibrary,
    instruments: &[String],
    rng: &mut impl Rng,
    fx_probs: &FxProbabilities,
    cfg: &BatchConfig,
) -> Result<MixturePair> {
    if instruments.is_empty() || instruments.len() > 4 {
        return Err(Error::InvalidConfig(format!(
            "instrument count {} outside 1..=4",
            instruments.len()
        )));
    }
    let seg_len = (cfg.segment_secs * library.config().sample_rate as f64).round() as usize;
    let slots = pick_slots(library, instruments, rng)?;

    let mut segments = Vec::with_capacity(slots.len());
    for slot in &slots {
        let stem = library.normalized_stem(&slot.class, slot.stem_index)?;
        if stem.len() < 2 * seg_len {
            return Err(Error::Audio(format!(
                "stem {}[{}] too short to split into two {seg_len}-sample segments",
                slot.class, slot.stem_index
            )));
        }
        segments.push((stem.segment(0, seg_len)?, stem.segment(seg_len, seg_len)?));
    }

    let mut chains = Vec::with_capacity(slots.len());
    let mut track_targets = Vec::with_capacity(slots.len());
    let mut track_gains = Vec::with_capacity(slots.len());
    let sr = library.config().sample_rate;
    let mut m1 = AudioBuffer::silence(sr, seg_len);
    let mut m2 = AudioBuffer::silence(sr, seg_len);
    for segs in &segments {
        let target = rng.random_range(cfg.track_lufs.0..cfg.track_lufs.1);
        // a sampled chain can crush a track below the loudness gate
        // (stacked negative gain and heavy reduction); reject and resample
        let (chain, n1, r1, n2, r2) = sample_processable_chain(
            segs, rng, fx_probs, cfg.chain_len_range, target,
        )?;
        track_targets.push(target);
        track_gains.push((
            10.0f64.powf(r1.gain_db / 20.0) as f32,
            10.0f64.powf(r2.gain_db / 20.0) as f32,
        ));
        chains.push(chain);
        m1.mix_add(&n1, 1.0)?;
        m2.mix_add(&n2, 1.0)?;
    }
    let (m1, rm1) = normalize_lufs(&m1, cfg.mix_lufs)?;
    let (m2, rm2) = normalize_lufs(&m2, cfg.mix_lufs)?;
    Ok(MixturePair {
        m1,
        m2,
        queries: slots.iter().map(|s| s.class.clone()).collect(),
        chains,
        slots,
        segments,
        track_targets,
        track_gains,
        mix_gains: (
            10.0f64.powf(rm1.gain_db / 20.0) as f32,
            10.0f64.powf(rm2.gain_db / 20.0) as f32,
        ),
    })
}

/// Fresh chains that differ from `original` either structurally (types or
/// order) or in parameters only; forced structural difference happens with
/// probability one half.
fn resample_chain(
    original: &FxChain,
    rng: &mut impl Rng,
    fx_probs: &FxProbabilities,
    cfg: &BatchConfig,
) -> Result<FxChain> {
    let structural = rng.random::<f64>() < 0.5;
    if structural {
        for _ in 0..64 {
            let fresh = sample_chain(rng, fx_probs, cfg.chain_len_range)?;
            if fresh.effect_types() != original.effect_types() {
                return Ok(fresh);
            }
        }
        // pathological schedule; fall through to parameter resampling
    }
    let mut chain = original.clone();
    for effect in &mut chain.effects {
        for p in &mut effect.params {
            *p = rng.random();
        }
    }
    chain = FxChain::new(chain.effects, rng.random());
    if chain.chain_id() == original.chain_id() {
        return Err(Error::InvalidParam(
            "hard negative resampling produced an identical chain".into(),
        ));
    }
    Ok(chain)
}

/// Same source material as the pair's first mixture, different chains.
pub fn make_hard_negative(
    library: &SourceLibrary,
    pair: &MixturePair,
    pair_index: usize,
    rng: &mut impl Rng,
    fx_probs: &FxProbabilities,
    cfg: &BatchConfig,
) -> Result<HardNegative> {
    let sr = library.config().sample_rate;
    let seg_len = pair.segments[0].0.len();
    let mut chains = Vec::with_capacity(pair.chains.len());
    let mut mix = AudioBuffer::silence(sr, seg_len);
    for (j, original) in pair.chains.iter().enumerate() {
        let target = rng.random_range(cfg.track_lufs.0..cfg.track_lufs.1);
        let mut accepted = None;
        for _ in 0..32 {
            let chain = resample_chain(original, rng, fx_probs, cfg)?;
            let s = apply_chain(&pair.segments[j].0, &chain)?;
            match normalize_lufs(&s, target) {
                Ok((n, _)) => {
                    accepted = Some((chain, n));
                    break;
                }
                Err(Error::BelowGate) => continue,
                Err(e) => return Err(e),
            }
        }
        let (chain, n) = accepted.ok_or_else(|| {
            Error::Audio("hard negative chain resampling kept silencing the track".into())
        })?;
        chains.push(chain);
        mix.mix_add(&n, 1.0)?;
    }
    let (mixture, _) = normalize_lufs(&mix, cfg.mix_lufs)?;
    Ok(HardNegative {
        mixture,
        chains,
        pair_index,
    })
}

/// Build one training batch. Fully determined by (library seed, batch
/// seed, step); pair construction runs in parallel with per-pair derived
/// seeds so the result is identical for any thread count.
pub fn build_batch(
    library: &SourceLibrary,
    cfg: &BatchConfig,
    batch_seed: u64,
    step: u64,
    ) -> Result<TrainBatch> {
    cfg.validate()?;
    if cfg.hard_negatives > cfg.batch_pairs {
        return Err(Error::InvalidConfig(
            "hard_negatives cannot exceed batch_pairs".into(),
        ));
    }
    let fx_probs = fx_probability_schedule(step, &cfg.fx_schedule);
    let mut rng = rng_from_seed(derive_seed(batch_seed, step));
    let k = rng.random_range(cfg.instruments_range.0..=cfg.instruments_range.1);
    let classes = library.classes();
    let instruments: Vec<String> = (0..k)
        .map(|_| classes[rng.random_range(0..classes.len())].clone())
        .collect();
    // duplicate classes need enough distinct stems per mixture
    for class in &instruments {
        let need = instruments.iter().filter(|c| *c == class).count();
        if library.stem_count(class) < need {
            return Err(Error::InvalidConfig(format!(
                "class {class} has {} stems but the multiset needs {need}",
                library.stem_count(class)
            )));
        }
    }
    let pair_seeds: Vec<u64> = (0..cfg.batch_pairs).map(|_| rng.random()).collect();
    let hn_seeds: Vec<u64> = (0..cfg.hard_negatives).map(|_| rng.random()).collect();

    let pair_results = par_map_indexed(cfg.batch_pairs, |i| {
        let mut prng = rng_from_seed(pair_seeds[i]);
        make_pair(library, &instruments, &mut prng, &fx_probs, cfg)
    });
    let mut pairs = Vec::with_capacity(cfg.batch_pairs);
    for p in pair_results {
        pairs.push(p?);
    }
    let hn_results = par_map_indexed(cfg.hard_negatives, |i| {
        let mut hrng = rng_from_seed(hn_seeds[i]);
        make_hard_negative(library, &pairs[i], i, &mut hrng, &fx_probs, cfg)
    });
    let mut hard_negatives = Vec::with_capacity(cfg.hard_negatives);
    for h in hn_results {
        hard_negatives.push(h?);
    }
    Ok(TrainBatch {
        pairs,
        hard_negatives,
        instruments,
        step,
        fx_probs,
    })
}

/// Normalized cross-correlation peak over all lags, used to verify that
/// positive pairs share no audio content.
pub fn xcorr_peak(a: &AudioBuffer, b: &AudioBuffer) -> f64 {
    use crate::dsp::fft::next_pow2;
    use crate::dsp::Real;
    let am = a.mid_f64();
    let bm = b.mid_f64();
    let n = am.len().max(bm.len());
    let size = next_pow2(2 * n);
    let tables = f64::fft_tables(size);
    let mut are = vec![0.0; size];
    let mut aim = vec![0.0; size];
    are[..am.len()].copy_from_slice(&am);
    let mut bre = vec![0.0; size];
    let mut bim = vec![0.0; size];
    bre[..bm.len()].copy_from_slice(&bm);
    tables.forward(&mut are, &mut aim);
    tables.forward(&mut bre, &mut bim);
    // cross-spectrum A * conj(B)
    for k in 0..size {
        let r = are[k] * bre[k] + aim[k] * bim[k];
        let i = aim[k] * bre[k] - are[k] * bim[k];
        are[k] = r;
        aim[k] = i;
    }
    tables.inverse(&mut are, &mut aim);
    let ea: f64 = am.iter().map(|v| v * v).sum();
    let eb: f64 = bm.iter().map(|v| v * v).sum();
    let denom = (ea * eb).sqrt().max(1e-12);
    are.iter().fold(0.0f64, |m, v| m.max(v.abs())) / denom
}
