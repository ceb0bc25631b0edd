use super::batch::*;
use super::library::{LibraryConfig, SourceLibrary};
use super::schedule::fx_probability_schedule;
use crate::dsp::chain::apply_chain;
use crate::dsp::measure_lufs;
use crate::rng::rng_from_seed;
use std::sync::OnceLock;

fn test_library() -> &'static SourceLibrary {
    static LIB: OnceLock<SourceLibrary> = OnceLock::new();
    LIB.get_or_init(|| {
        SourceLibrary::synthetic(LibraryConfig {
            stems_per_class: 6,
            stem_duration_secs: 2.1,
            seed: 77,
            ..LibraryConfig::default()
        })
        .unwrap()
    })
}

fn small_cfg() -> BatchConfig {
    BatchConfig {
        batch_pairs: 4,
        hard_negatives: 2,
        ..BatchConfig::default()
    }
}

#[test]
fn pair_invariants_hold() {
    let lib = test_library();
    let cfg = small_cfg();
    let probs = fx_probability_schedule(0, &cfg.fx_schedule);
    let mut rng = rng_from_seed(5);
    let instruments = vec!["bass".to_string(), "percussion".to_string()];
    let pair = make_pair(lib, &instruments, &mut rng, &probs, &cfg).unwrap();

    assert_eq!(pair.chains.len(), 2);
    assert_eq!(pair.queries, instruments);
    // both mixtures at the configured loudness
    let l1 = measure_lufs(&pair.m1).unwrap();
    let l2 = measure_lufs(&pair.m2).unwrap();
    assert!((l1 - cfg.mix_lufs).abs() < 0.1, "m1 at {l1}");
    assert!((l2 - cfg.mix_lufs).abs() < 0.1, "m2 at {l2}");
    // disjoint content
    for (s1, s2) in &pair.segments {
        let xc = xcorr_peak(s1, s2);
        assert!(xc < 0.5, "segment xcorr {xc}");
    }
}

#[test]
fn pair_stems_are_reproducible_bit_exactly() {
    let lib = test_library();
    let cfg = small_cfg();
    let probs = fx_probability_schedule(0, &cfg.fx_schedule);
    let mut rng = rng_from_seed(9);
    let instruments = vec!["lead".to_string()];
    let pair = make_pair(lib, &instruments, &mut rng, &probs, &cfg).unwrap();
    // re-render chain on the second segment, apply the recorded gains
    let s2 = apply_chain(&pair.segments[0].1, &pair.chains[0]).unwrap();
    let mut stem = s2;
    stem.scale(pair.track_gains[0].1);
    stem.scale(pair.mix_gains.1);
    // k = 1: the mixture IS the stem
    assert_eq!(stem.planar(), pair.m2.planar());
}

#[test]
fn k1_pair_is_single_stem_with_shared_chain() {
    let lib = test_library();
    let cfg = small_cfg();
    let probs = fx_probability_schedule(0, &cfg.fx_schedule);
    let mut rng = rng_from_seed(11);
    let pair = make_pair(lib, &["pad".to_string()], &mut rng, &probs, &cfg).unwrap();
    assert_eq!(pair.chains.len(), 1);
    // same chain identity, different audio
    assert_ne!(pair.m1.planar(), pair.m2.planar());
}

#[test]
fn hard_negative_shares_content_not_chains() {
    let lib = test_library();
    let cfg = small_cfg();
    let probs = fx_probability_schedule(0, &cfg.fx_schedule);
    let mut rng = rng_from_seed(13);
    let instruments = vec!["bass".to_string(), "pluck".to_string()];
    let pair = make_pair(lib, &instruments, &mut rng, &probs, &cfg).unwrap();
    for trial in 0..5 {
        let hn = make_hard_negative(lib, &pair, 0, &mut rng, &probs, &cfg).unwrap();
        for (orig, fresh) in pair.chains.iter().zip(&hn.chains) {
            assert_ne!(
                orig.chain_id(),
                fresh.chain_id(),
                "trial {trial}: chain identity must differ"
            );
        }
        let lufs = measure_lufs(&hn.mixture).unwrap();
        assert!((lufs - cfg.mix_lufs).abs() < 0.1);
    }
}

#[test]
fn batches_share_one_instrument_multiset() {
    let lib = test_library();
    let cfg = small_cfg();
    for step in [0, 100] {
        let batch = build_batch(lib, &cfg, 42, step).unwrap();
        assert_eq!(batch.pairs.len(), 4);
        assert_eq!(batch.hard_negatives.len(), 2);
        assert!(!batch.instruments.is_empty() && batch.instruments.len() <= 4);
        for pair in &batch.pairs {
            assert_eq!(pair.queries, batch.instruments);
        }
        for hn in &batch.hard_negatives {
            assert_eq!(hn.chains.len(), batch.instruments.len());
            // content sharing with its pair
            let pair = &batch.pairs[hn.pair_index];
            assert_eq!(pair.queries, batch.instruments);
        }
        assert_eq!(batch.mixture_count(), 10);
    }
}

#[test]
fn batch_is_deterministic() {
    let lib = test_library();
    let cfg = small_cfg();
    let a = build_batch(lib, &cfg, 7, 3).unwrap();
    let b = build_batch(lib, &cfg, 7, 3).unwrap();
    assert_eq!(a.instruments, b.instruments);
    for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
        assert_eq!(pa.m1.planar(), pb.m1.planar());
        assert_eq!(pa.m2.planar(), pb.m2.planar());
    }
    for (ha, hb) in a.hard_negatives.iter().zip(&b.hard_negatives) {
        assert_eq!(ha.mixture.planar(), hb.mixture.planar());
    }
    // different seed -> different batch
    let c = build_batch(lib, &cfg, 8, 3).unwrap();
    let same = a
        .pairs
        .iter()
        .zip(&c.pairs)
        .all(|(x, y)| x.m1.planar() == y.m1.planar());
    assert!(!same);
}

#[test]
fn schedule_step_feeds_probabilities() {
    let lib = test_library();
    let cfg = small_cfg();
    let early = build_batch(lib, &cfg, 1, 0).unwrap();
    let late = build_batch(lib, &cfg, 1, cfg.fx_schedule.total_steps).unwrap();
    assert_ne!(early.fx_probs, late.fx_probs);
}

#[test]
fn odd_batch_size_rejected() {
    let lib = test_library();
    let cfg = BatchConfig {
        batch_pairs: 3,
        ..small_cfg()
    };
    assert!(build_batch(lib, &cfg, 1, 0).is_err());
}

#[test]
fn library_ingests_user_wav_stems() {
    use crate::dsp::wav::{write_wav, WavFormat};
    use super::library::LibraryConfig;
    let dir = std::env::temp_dir().join("fxrep-stem-ingest");
    let _ = std::fs::remove_dir_all(&dir);
    // lay out <root>/<class>/<name>.wav from synthetic stems
    for class in ["bass", "lead"] {
        let class_dir = dir.join(class);
        std::fs::create_dir_all(&class_dir).unwrap();
        for i in 0..3u64 {
            let stem = super::synth::synth_source(class, 100 + i, 2.1, 16_000).unwrap();
            write_wav(&class_dir.join(format!("{class}_{i}.wav")), &stem, WavFormat::Float32)
                .unwrap();
        }
    }
    let lib = SourceLibrary::from_dir(LibraryConfig::default(), &dir).unwrap();
    assert_eq!(lib.classes(), &["bass".to_string(), "lead".to_string()]);
    assert_eq!(lib.stem_count("bass"), 3);
    let manifest = lib.manifest();
    assert!(manifest.entries.iter().all(|e| e.path.is_some()));
    // sample-rate mismatches are rejected
    let bad = LibraryConfig {
        sample_rate: 44_100,
        ..LibraryConfig::default()
    };
    assert!(SourceLibrary::from_dir(bad, &dir).is_err());
}
