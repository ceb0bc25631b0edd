//! Named parameter arrays, initialization, and tape binding.

use super::ModelConfig;
use crate::autodiff::{Tape, TensorId};
use crate::error::{Error, Result};
use crate::rng::{derive_seed_str, rng_from_seed};
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Canonical parameter storage; iteration order is the name order, which
/// keeps every consumer deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<f64>) {
        assert_eq!(values.len(), shape.iter().product::<usize>());
        self.entries
            .insert(name.to_string(), ParamEntry { shape, values });
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|e| e.values.len()).sum()
    }
}

/// Every parameter the model owns, with its shape, for `cfg`.
pub fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut specs = Vec::new();
    let mut c_in = 1;
    for (i, &w) in cfg.conv_widths.iter().enumerate() {
        specs.push((format!("enc.conv{i}.w"), vec![w, c_in, 3, 3]));
        specs.push((format!("enc.conv{i}.b"), vec![w]));
        c_in = w;
    }
    specs.push(("enc.fc.w".into(), vec![cfg.embed_dim, c_in]));
    specs.push(("enc.fc.b".into(), vec![cfg.embed_dim]));
    if cfg.use_projection_head {
        specs.push(("proj.fc1.w".into(), vec![cfg.embed_dim, cfg.embed_dim]));
        specs.push(("proj.fc1.b".into(), vec![cfg.embed_dim]));
        specs.push(("proj.fc2.w".into(), vec![cfg.proj_dim, cfg.embed_dim]));
        specs.push(("proj.fc2.b".into(), vec![cfg.proj_dim]));
    }
    let ext_in = cfg.query_dim + cfg.embed_dim;
    specs.push(("ext.fc1.w".into(), vec![cfg.extractor_hidden, ext_in]));
    specs.push(("ext.fc1.b".into(), vec![cfg.extractor_hidden]));
    specs.push((
        "ext.fc2.w".into(),
        vec![cfg.extractor_hidden, cfg.extractor_hidden],
    ));
    specs.push(("ext.fc2.b".into(), vec![cfg.extractor_hidden]));
    specs.push(("ext.fc3.w".into(), vec![cfg.embed_dim, cfg.extractor_hidden]));
    specs.push(("ext.fc3.b".into(), vec![cfg.embed_dim]));
    specs.push(("query.table".into(), vec![cfg.classes.len(), cfg.query_dim]));
    specs
}

/// Kaiming-uniform initialization keyed by (seed, parameter name).
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::default();
    let gain = (2.0 / (1.0 + cfg.leaky_slope * cfg.leaky_slope)).sqrt();
    for (name, shape) in param_specs(cfg) {
        let n: usize = shape.iter().product();
        let mut rng = rng_from_seed(derive_seed_str(seed, &name));
        let values = if name.ends_with(".b") {
            vec![0.0; n]
        } else if name == "query.table" {
            let bound = 1.0 / (cfg.query_dim as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        } else {
            // fan_in = product of all dims except the first
            let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
            let bound = gain * (3.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        store.insert(&name, shape, values);
    }
    store
}

/// Parameter tensors bound onto one tape, as leaves (training) or
/// constants (evaluation).
pub struct ParamBindings {
    map: BTreeMap<String, TensorId>,
    pub trainable: bool,
}

impl ParamBindings {
    pub fn id(&self, name: &str) -> Result<TensorId> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &TensorId)> {
        self.map.iter()
    }
}

pub fn bind_params(tape: &mut Tape, store: &ParamStore, trainable: bool) -> ParamBindings {
    let mut map = BTreeMap::new();
    for (name, entry) in store.iter() {
        let id = if trainable {
            tape.leaf(entry.values.clone(), &entry.shape)
        } else {
            tape.constant(entry.values.clone(), &entry.shape)
        };
        map.insert(name.clone(), id);
    }
    ParamBindings { map, trainable }
}
