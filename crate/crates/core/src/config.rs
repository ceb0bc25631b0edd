//! Run configuration: a single document that covers every module, with
//! preset inheritance (a file only states what it overrides) and rejection
//! of unknown keys.

use crate::datagen::{BatchConfig, LibraryConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, MatchConfig};
use crate::model::ModelConfig;
use crate::training::{Seeds, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small enough to train and evaluate on one CPU core.
    Desk,
    /// Full-scale values; provided as configuration, not desk-runnable.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Preset> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other} (expected desk or paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Optional directory of user stems (`<root>/<class>/<name>.wav`).
    pub library: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub threads: usize,
    pub paths: Paths,
    pub library: LibraryConfig,
    pub model: ModelConfig,
    pub batch: BatchConfig,
    pub training: TrainConfig,
    pub eval: EvalConfig,
    pub matching: MatchConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> RunConfig {
        match preset {
            Preset::Desk => {
                let library = LibraryConfig::default();
                let model = ModelConfig::desk(library.classes.clone());
                RunConfig {
                    preset,
                    threads: 0,
                    paths: Paths::default(),
                    library,
                    model,
                    batch: BatchConfig {
                        chain_len_range: (1, 3),
                        ..BatchConfig::default()
                    },
                    training: TrainConfig::default(),
                    eval: EvalConfig::default(),
                    matching: MatchConfig::default(),
                }
            }
            Preset::Paper => {
                let library = LibraryConfig {
                    sample_rate: 44_100,
                    stem_duration_secs: 20.5,
                    ..LibraryConfig::default()
                };
                let model = ModelConfig::paper(library.classes.clone());
                let batch = BatchConfig {
                    batch_pairs: 192,
                    hard_negatives: 24,
                    segment_secs: 10.0,
                    chain_len_range: (1, 5),
                    ..BatchConfig::default()
                };
                let training = TrainConfig {
                    steps: 100_000,
                    lr: crate::autodiff::LrSchedule {
                        base_rate: 1e-4,
                        warmup_steps: 2_000,
                        total_steps: 100_000,
                    },
                    loss_weights: crate::training::LossWeights {
                        ramp_start_step: 20_000,
                        ramp_end_step: 60_000,
                        ..Default::default()
                    },
                    // the paper-literal objective: no extended negatives
                    cross_query_negatives: false,
                    ..TrainConfig::default()
                };
                let eval = EvalConfig {
                    pool_size: 500,
                    ..EvalConfig::default()
                };
                let matching = MatchConfig {
                    restarts: 3,
                    steps: 300,
                    mrstft: crate::dsp::MrStftConfig::full_scale(),
                    ..MatchConfig::default()
                };
                RunConfig {
                    preset,
                    threads: 0,
                    paths: Paths::default(),
                    library,
                    model,
                    batch,
                    training,
                    eval,
                    matching,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.batch.validate()?;
        self.training.validate()?;
        if self.library.sample_rate != self.model.sample_rate {
            return Err(Error::InvalidConfig(format!(
                "library sample rate {} does not match model {}",
                self.library.sample_rate, self.model.sample_rate
            )));
        }
        if (self.batch.segment_secs - self.model.segment_secs).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "batch segment ({} s) must match model segment ({} s)",
                self.batch.segment_secs, self.model.segment_secs
            )));
        }
        Ok(())
    }

    /// Load a config file: the file's `preset` field picks the base and the
    /// rest of the document overrides it key by key. Unknown keys are
    /// rejected by the final typed parse.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let overrides: serde_json::Value = serde_json::from_str(&text)?;
        let preset = match overrides.get("preset") {
            Some(v) => serde_json::from_value::<Preset>(v.clone())?,
            None => Preset::Desk,
        };
        let mut base = serde_json::to_value(RunConfig::preset(preset))?;
        deep_merge(&mut base, overrides);
        let cfg: RunConfig = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Write the effective configuration beside an output.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Derive all named seeds from one master seed.
    pub fn apply_master_seed(&mut self, seed: u64) {
        self.training.seeds = Seeds {
            library: crate::rng::derive_seed_str(seed, "library"),
            batch: crate::rng::derive_seed_str(seed, "batch"),
            init: crate::rng::derive_seed_str(seed, "init"),
            train: crate::rng::derive_seed_str(seed, "train"),
        };
        self.library.seed = self.training.seeds.library;
        self.eval.seed = crate::rng::derive_seed_str(seed, "eval");
        self.matching.seed = crate::rng::derive_seed_str(seed, "matching");
    }
}

fn deep_merge(base: &mut serde_json::Value, overrides: serde_json::Value) {
    match (base, overrides) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
