//! Encoder, projection head, query vectors and the extractor.

use super::frontend::Features;
use super::params::{ParamBindings, ParamStore};
use super::ModelConfig;
use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::parallel::par_map_slice;
use rand::Rng;

fn linear(
    tape: &mut Tape,
    bindings: &ParamBindings,
    x: TensorId,
    w_name: &str,
    b_name: &str,
) -> Result<TensorId> {
    let w = bindings.id(w_name)?;
    let b = bindings.id(b_name)?;
    let y = tape.matmul_nt(x, w)?;
    let out_dim = tape.shape(y)[1];
    let b_row = tape.reshape(b, &[1, out_dim])?;
    tape.add(y, b_row)
}

/// Convolutional encoder: features [F, M] -> unit-norm embedding [1, D].
pub fn encode(
    tape: &mut Tape,
    bindings: &ParamBindings,
    cfg: &ModelConfig,
    features: TensorId,
) -> Result<TensorId> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "encode expects [frames, mels], got {:?}",
            shape
        )));
    }
    let mut x = tape.reshape(features, &[1, shape[0], shape[1]])?;
    for i in 0..cfg.conv_widths.len() {
        let w = bindings.id(&format!("enc.conv{i}.w"))?;
        let b = bindings.id(&format!("enc.conv{i}.b"))?;
        let c = tape.conv2d(x, w, 2, 1)?;
        let c = tape.bias_add_chan(c, b)?;
        x = tape.leaky_relu(c, cfg.leaky_slope);
    }
    let pooled = tape.spatial_mean(x)?;
    let c_last = *cfg.conv_widths.last().unwrap();
    let row = tape.reshape(pooled, &[1, c_last])?;
    let z = linear(tape, bindings, row, "enc.fc.w", "enc.fc.b")?;
    Ok(tape.l2_normalize(z))
}

/// Projection head used only inside the contrastive losses; identity when
/// disabled by config.
pub fn project(
    tape: &mut Tape,
    bindings: &ParamBindings,
    cfg: &ModelConfig,
    z: TensorId,
) -> Result<TensorId> {
    if !cfg.use_projection_head {
        return Ok(z);
    }
    let h = linear(tape, bindings, z, "proj.fc1.w", "proj.fc1.b")?;
    let h = tape.leaky_relu(h, cfg.leaky_slope);
    let p = linear(tape, bindings, h, "proj.fc2.w", "proj.fc2.b")?;
    Ok(tape.l2_normalize(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    Train,
    Eval,
}

/// Where a query vector comes from: the learned class table or an
/// externally supplied vector.
pub enum QuerySource<'a> {
    Class(&'a str),
    External(&'a [f64]),
}

/// Query vector as a `[1, D_q]` tensor. Training mode applies inverted
/// dropout with a rate drawn uniformly from the configured range per call;
/// evaluation mode returns the vector untouched.
pub fn query_vector(
    tape: &mut Tape,
    bindings: &ParamBindings,
    cfg: &ModelConfig,
    source: QuerySource,
    mode: QueryMode,
    rng: &mut impl Rng,
) -> Result<TensorId> {
    let row = match source {
        QuerySource::Class(class) => {
            let idx = cfg.class_index(class)?;
            let table = bindings.id("query.table")?;
            let r = tape.slice_rows(table, idx, 1)?;
            tape.reshape(r, &[1, cfg.query_dim])?
        }
        QuerySource::External(values) => {
            if values.len() != cfg.query_dim {
                return Err(Error::ShapeMismatch(format!(
                    "external query has dimension {}, model expects {}",
                    values.len(),
                    cfg.query_dim
                )));
            }
            tape.constant(values.to_vec(), &[1, cfg.query_dim])
        }
    };
    match mode {
        QueryMode::Eval => Ok(row),
        QueryMode::Train => {
            let rate = rng.random_range(cfg.query_dropout.0..cfg.query_dropout.1);
            Ok(tape.dropout(row, rate, rng))
        }
    }
}

/// The extractor: 3 affine layers over the concatenated (query, mixture
/// embedding), LeakyReLU between them, unit-norm output.
pub fn extract(
    tape: &mut Tape,
    bindings: &ParamBindings,
    cfg: &ModelConfig,
    query: TensorId,
    z_mix: TensorId,
) -> Result<TensorId> {
    let qs = tape.shape(query).to_vec();
    let zs = tape.shape(z_mix).to_vec();
    if qs != [1, cfg.query_dim] || zs != [1, cfg.embed_dim] {
        return Err(Error::ShapeMismatch(format!(
            "extract expects query [1,{}] and z [1,{}], got {:?} and {:?}",
            cfg.query_dim, cfg.embed_dim, qs, zs
        )));
    }
    let q_flat = tape.reshape(query, &[cfg.query_dim])?;
    let z_flat = tape.reshape(z_mix, &[cfg.embed_dim])?;
    let cat = tape.concat(&[q_flat, z_flat])?;
    let x = tape.reshape(cat, &[1, cfg.query_dim + cfg.embed_dim])?;
    let h = linear(tape, bindings, x, "ext.fc1.w", "ext.fc1.b")?;
    let h = tape.leaky_relu(h, cfg.leaky_slope);
    let h = linear(tape, bindings, h, "ext.fc2.w", "ext.fc2.b")?;
    let h = tape.leaky_relu(h, cfg.leaky_slope);
    let out = linear(tape, bindings, h, "ext.fc3.w", "ext.fc3.b")?;
    Ok(tape.l2_normalize(out))
}

/// Evaluation-mode embedding of a feature batch; one independent tape per
/// item, parallelized, results in input order.
pub fn encode_batch(
    store: &ParamStore,
    cfg: &ModelConfig,
    features: &[Features],
) -> Result<Vec<Vec<f64>>> {
    let results = par_map_slice(features, |f| -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bindings = super::params::bind_params(&mut tape, store, false);
        let ft = tape.constant(f.values.clone(), &[f.frames, f.mel_bins]);
        let z = encode(&mut tape, &bindings, cfg, ft)?;
        Ok(tape.values(z).to_vec())
    });
    results.into_iter().collect()
}
