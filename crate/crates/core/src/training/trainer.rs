//! The training loop: render a batch, embed every mixture on its own tape,
//! couple the embeddings through the contrastive losses on a small loss
//! tape, then push gradients back through each mixture tape and into Adam.
//!
//! Parallel sections are indexed maps with per-item derived seeds and all
//! reductions run sequentially in index order, so metrics logs are
//! bit-identical for any worker count.

use super::loss::{
    combined_loss, lambda_schedule, ntxent_instrument, ntxent_mixture, LossWeights,
};
use crate::autodiff::{adam_step, lr_schedule, AdamConfig, AdamState, LrSchedule, Tape, TensorId};
use crate::datagen::{build_batch, BatchConfig, SourceLibrary, TrainBatch};
use crate::dsp::buffer::AudioBuffer;
use crate::error::{Error, Result};
use crate::model::{
    bind_params, encode, extract, init_params, logmel, project, query_vector, save_checkpoint,
    MelFrontend, ModelConfig, ParamStore, QueryMode, QuerySource,
};
use crate::parallel::par_map_indexed;
use crate::rng::{derive_seed, derive_seed_str, rng_from_seed};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub library: u64,
    pub batch: u64,
    pub init: u64,
    pub train: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            library: 17,
            batch: 23,
            init: 31,
            train: 41,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub tau: f64,
    pub adam: AdamConfig,
    pub lr: LrSchedule,
    pub loss_weights: LossWeights,
    /// Extend instrument-loss denominators with same-mixture other-query
    /// rows; keeps the extractor from ignoring its query.
    pub cross_query_negatives: bool,
    pub checkpoint_interval: u64,
    pub seeds: Seeds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 5000,
            tau: 0.1,
            adam: AdamConfig::default(),
            lr: LrSchedule {
                base_rate: 1e-4,
                warmup_steps: 250,
                total_steps: 5000,
            },
            loss_weights: LossWeights::default(),
            cross_query_negatives: true,
            checkpoint_interval: 1000,
            seeds: Seeds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        self.lr.validate()?;
        self.loss_weights.validate()?;
        Ok(())
    }
}

/// One line of the newline-delimited metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub lr: f64,
    pub lambda_mix: f64,
    pub lambda_inst: f64,
    pub loss: f64,
    pub loss_mix: f64,
    pub loss_inst: f64,
    pub fx_probs: BTreeMap<String, f64>,
}

pub struct TrainOutput {
    pub store: ParamStore,
    pub final_loss: f64,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

/// Forward outputs of one mixture tape.
struct MixtureForward {
    tape: Tape,
    projected: TensorId,
    extracted: Vec<TensorId>,
    param_ids: Vec<(String, TensorId)>,
}

fn forward_mixture(
    store: &ParamStore,
    model_cfg: &ModelConfig,
    frontend: &MelFrontend,
    mixture: &AudioBuffer,
    instruments: &[String],
    with_instruments: bool,
    dropout_seed: u64,
) -> Result<MixtureForward> {
    let features = logmel(mixture, frontend)?;
    let mut tape = Tape::new();
    let bindings = bind_params(&mut tape, store, true);
    let ft = tape.constant(features.values, &[features.frames, features.mel_bins]);
    let z = encode(&mut tape, &bindings, model_cfg, ft)?;
    let projected = project(&mut tape, &bindings, model_cfg, z)?;
    let mut extracted = Vec::new();
    if with_instruments {
        for (m, class) in instruments.iter().enumerate() {
            let mut qrng = rng_from_seed(derive_seed(dropout_seed, m as u64));
            let q = query_vector(
                &mut tape,
                &bindings,
                model_cfg,
                QuerySource::Class(class),
                QueryMode::Train,
                &mut qrng,
            )?;
            extracted.push(extract(&mut tape, &bindings, model_cfg, q, z)?);
        }
    }
    let param_ids = bindings.iter().map(|(n, id)| (n.clone(), *id)).collect();
    Ok(MixtureForward {
        tape,
        projected,
        extracted,
        param_ids,
    })
}

/// Mixtures of a batch in loss-row order: pair mixtures interleaved, hard
/// negatives last.
fn batch_mixtures(batch: &TrainBatch) -> Vec<&AudioBuffer> {
    let mut rows = Vec::with_capacity(batch.mixture_count());
    for pair in &batch.pairs {
        rows.push(&pair.m1);
        rows.push(&pair.m2);
    }
    for hn in &batch.hard_negatives {
        rows.push(&hn.mixture);
    }
    rows
}

pub struct StepStats {
    pub loss: f64,
    pub loss_mix: f64,
    pub loss_inst: f64,
    /// gradient l2 norm per parameter name
    pub grad_norms: BTreeMap<String, f64>,
}

/// One optimization step over a prepared batch. Exposed separately so the
/// smoke tests can drive a fixed batch.
pub fn train_step(
    store: &mut ParamStore,
    adam_states: &mut BTreeMap<String, AdamState>,
    model_cfg: &ModelConfig,
    frontend: &MelFrontend,
    cfg: &TrainConfig,
    batch: &TrainBatch,
    step: u64,
) -> Result<StepStats> {
    let (_, li) = lambda_schedule(step, &cfg.loss_weights);
    let with_instruments = li > 0.0;
    let mixtures = batch_mixtures(batch);
    let rows = mixtures.len();
    let k = batch.instruments.len();
    let dropout_base = derive_seed(derive_seed_str(cfg.seeds.train, "dropout"), step);

    // forward passes, one tape per mixture
    let forwards = par_map_indexed(rows, |r| {
        forward_mixture(
            store,
            model_cfg,
            frontend,
            mixtures[r],
            &batch.instruments,
            with_instruments,
            derive_seed(dropout_base, r as u64),
        )
    });
    let mut forwards: Vec<MixtureForward> = forwards.into_iter().collect::<Result<_>>()?;

    // loss tape over embedding rows
    let proj_dim = if model_cfg.use_projection_head {
        model_cfg.proj_dim
    } else {
        model_cfg.embed_dim
    };
    let mut loss_tape = Tape::new();
    let mut zp_vals = Vec::with_capacity(rows * proj_dim);
    for fw in &forwards {
        zp_vals.extend_from_slice(fw.tape.values(fw.projected));
    }
    let zp = loss_tape.leaf(zp_vals, &[rows, proj_dim]);
    let loss_mix = ntxent_mixture(&mut loss_tape, zp, batch.pairs.len(), cfg.tau)?;

    let mut z_inst_ids = Vec::new();
    if with_instruments {
        for m in 0..k {
            let mut vals = Vec::with_capacity(rows * model_cfg.embed_dim);
            for fw in &forwards {
                vals.extend_from_slice(fw.tape.values(fw.extracted[m]));
            }
            z_inst_ids.push(loss_tape.leaf(vals, &[rows, model_cfg.embed_dim]));
        }
    }
    let loss_inst = if with_instruments {
        Some(ntxent_instrument(
            &mut loss_tape,
            &z_inst_ids,
            batch.pairs.len(),
            cfg.tau,
            cfg.cross_query_negatives,
        )?)
    } else {
        None
    };
    let total = combined_loss(&mut loss_tape, loss_mix, loss_inst, step, &cfg.loss_weights)?;
    loss_tape.check_finite(total, "training loss")?;
    let loss_val = loss_tape.values(total)[0];
    let loss_mix_val = loss_tape.values(loss_mix)[0];
    let loss_inst_val = loss_inst.map(|t| loss_tape.values(t)[0]).unwrap_or(0.0);
    loss_tape.backward(total)?;

    // per-row seeds for the mixture tapes
    let zp_grad = loss_tape.grad(zp).unwrap().to_vec();
    let zi_grads: Vec<Vec<f64>> = z_inst_ids
        .iter()
        .map(|id| loss_tape.grad(*id).unwrap().to_vec())
        .collect();

    // backward per mixture in parallel; accumulation stays in index order
    let grads = crate::parallel::par_map_mut(&mut forwards, |r, fw| {
        let mut seeds: Vec<(TensorId, Vec<f64>)> = vec![(
            fw.projected,
            zp_grad[r * proj_dim..(r + 1) * proj_dim].to_vec(),
        )];
        for (m, zid) in fw.extracted.iter().enumerate() {
            let d = model_cfg.embed_dim;
            seeds.push((*zid, zi_grads[m][r * d..(r + 1) * d].to_vec()));
        }
        fw.tape.backward_seeded(&seeds)?;
        let mut out = Vec::new();
        for (name, id) in &fw.param_ids {
            if let Some(g) = fw.tape.grad(*id) {
                out.push((name.clone(), g.to_vec()));
            }
        }
        Ok::<_, Error>(out)
    });

    // accumulate in mixture order
    let mut total_grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for per_mixture in grads {
        for (name, g) in per_mixture? {
            match total_grads.get_mut(&name) {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                None => {
                    total_grads.insert(name, g);
                }
            }
        }
    }

    let lr = lr_schedule(step, &cfg.lr);
    let mut grad_norms = BTreeMap::new();
    for (name, grad) in &total_grads {
        let entry = store.get_mut(name)?;
        let state = adam_states
            .entry(name.clone())
            .or_insert_with(|| AdamState::new(entry.values.len()));
        adam_step(&mut entry.values, grad, state, &cfg.adam, lr)?;
        grad_norms.insert(
            name.clone(),
            grad.iter().map(|v| v * v).sum::<f64>().sqrt(),
        );
    }

    Ok(StepStats {
        loss: loss_val,
        loss_mix: loss_mix_val,
        loss_inst: loss_inst_val,
        grad_norms,
    })
}

/// Full training run: fresh parameters, one batch per step, periodic
/// checkpoints, JSONL metrics. A non-finite loss aborts with the last good
/// checkpoint left on disk.
pub fn train(
    model_cfg: &ModelConfig,
    batch_cfg: &BatchConfig,
    cfg: &TrainConfig,
    library: &SourceLibrary,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    model_cfg.validate()?;
    batch_cfg.validate()?;
    cfg.validate()?;
    let frontend = MelFrontend::new(model_cfg);
    let mut store = init_params(model_cfg, cfg.seeds.init);
    let mut adam_states: BTreeMap<String, AdamState> = BTreeMap::new();

    let (metrics_path, checkpoint_path) = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            (
                Some(dir.join("metrics.jsonl")),
                Some(dir.join("model.ckpt")),
            )
        }
        None => (None, None),
    };
    let mut metrics_file = match &metrics_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };

    let mut final_loss = f64::NAN;
    for step in 0..cfg.steps {
        let batch = build_batch(library, batch_cfg, cfg.seeds.batch, step)?;
        let stats = match train_step(
            &mut store,
            &mut adam_states,
            model_cfg,
            &frontend,
            cfg,
            &batch,
            step,
        ) {
            Ok(s) => s,
            Err(e) => {
                // leave the last good checkpoint in place and stop
                return Err(Error::NonFinite(format!(
                    "training aborted at step {step}: {e}"
                )));
            }
        };
        final_loss = stats.loss;
        let (lm, li) = lambda_schedule(step, &cfg.loss_weights);
        if let Some(f) = metrics_file.as_mut() {
            let record = MetricsRecord {
                step,
                lr: lr_schedule(step, &cfg.lr),
                lambda_mix: lm,
                lambda_inst: li,
                loss: stats.loss,
                loss_mix: stats.loss_mix,
                loss_inst: stats.loss_inst,
                fx_probs: crate::dsp::effects::ALL_EFFECT_TYPES
                    .iter()
                    .map(|&t| (t.name().to_string(), batch.fx_probs.probability(t)))
                    .collect(),
            };
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
        }
        if let Some(p) = &checkpoint_path {
            if cfg.checkpoint_interval > 0
                && (step + 1) % cfg.checkpoint_interval == 0
            {
                save_checkpoint(p, model_cfg, &store)?;
            }
        }
    }
    if let Some(f) = metrics_file.as_mut() {
        f.flush()?;
    }
    if let Some(p) = &checkpoint_path {
        save_checkpoint(p, model_cfg, &store)?;
    }
    Ok(TrainOutput {
        store,
        final_loss,
        metrics_path,
        checkpoint_path,
    })
}
