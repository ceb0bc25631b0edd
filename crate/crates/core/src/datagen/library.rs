//! The source library: synthetic stems (default) or user WAV stems tagged
//! by class, plus the normalization profile computed from them and a cache
//! of Fx-normalized stems ready for pair construction.

use super::synth::{synth_source, DEFAULT_CLASSES};
use crate::dsp::buffer::AudioBuffer;
use crate::dsp::wav::read_wav;
use crate::error::{Error, Result};
use crate::fxnorm::{compute_profile, fx_normalize, NormalizationProfile, ProfileConfig};
use crate::rng::derive_seed;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryConfig {
    pub classes: Vec<String>,
    pub stems_per_class: usize,
    pub stem_duration_secs: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Optional directory of user stems laid out as `<root>/<class>/<name>.wav`.
    pub stem_dir: Option<PathBuf>,
    pub profile: ProfileConfig,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig {
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            stems_per_class: 24,
            stem_duration_secs: 2.1,
            sample_rate: 16_000,
            seed: 0,
            stem_dir: None,
            profile: ProfileConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class: String,
    pub index: usize,
    pub path: Option<PathBuf>,
    pub duration_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub sample_rate: u32,
    pub entries: Vec<ManifestEntry>,
}

pub struct SourceLibrary {
    config: LibraryConfig,
    /// raw stems per class
    stems: BTreeMap<String, Vec<AudioBuffer>>,
    /// paths when ingested from disk
    paths: BTreeMap<(String, usize), PathBuf>,
    profile: NormalizationProfile,
    /// Fx-normalized stems, same indexing as `stems`
    normalized: BTreeMap<String, Vec<AudioBuffer>>,
}

impl SourceLibrary {
    /// Build a fully synthetic library.
    pub fn synthetic(config: LibraryConfig) -> Result<SourceLibrary> {
        if config.classes.len() < 2 {
            return Err(Error::InvalidConfig(
                "library needs at least 2 instrument classes".into(),
            ));
        }
        let mut stems: BTreeMap<String, Vec<AudioBuffer>> = BTreeMap::new();
        for class in &config.classes {
            let mut list = Vec::with_capacity(config.stems_per_class);
            for i in 0..config.stems_per_class {
                let seed = derive_seed(config.seed, i as u64);
                list.push(synth_source(
                    class,
                    seed,
                    config.stem_duration_secs,
                    config.sample_rate,
                )?);
            }
            stems.insert(class.clone(), list);
        }
        Self::finish(config, stems, BTreeMap::new())
    }

    /// Ingest user stems from `<root>/<class>/<name>.wav`. Classes present
    /// in the directory replace the synthetic ones.
    pub fn from_dir(mut config: LibraryConfig, root: &Path) -> Result<SourceLibrary> {
        let mut stems: BTreeMap<String, Vec<AudioBuffer>> = BTreeMap::new();
        let mut paths = BTreeMap::new();
        let mut classes = Vec::new();
        let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        class_dirs.sort();
        for dir in class_dirs {
            let class = dir
                .file_name()
                .and_then(|n| n.to_str())
                .ok_or_else(|| Error::InvalidConfig("unreadable class dir name".into()))?
                .to_string();
            let mut wavs: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().map(|e| e == "wav").unwrap_or(false))
                .collect();
            wavs.sort();
            let mut list = Vec::new();
            for (i, path) in wavs.iter().enumerate() {
                let buf = read_wav(path)?;
                if buf.sample_rate != config.sample_rate {
                    return Err(Error::Audio(format!(
                        "{}: sample rate {} does not match configured {} (resampling unsupported)",
                        path.display(),
                        buf.sample_rate,
                        config.sample_rate
                    )));
                }
                let min_len = (2.0 * segment_len_secs(&config) * config.sample_rate as f64) as usize;
                if buf.len() < min_len {
                    return Err(Error::Audio(format!(
                        "{}: stem too short ({} samples, need {min_len} for two segments)",
                        path.display(),
                        buf.len()
                    )));
                }
                paths.insert((class.clone(), i), path.clone());
                list.push(buf);
            }
            if !list.is_empty() {
                classes.push(class.clone());
                stems.insert(class, list);
            }
        }
        if classes.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "stem directory {} holds {} usable classes; need at least 2",
                root.display(),
                classes.len()
            )));
        }
        config.classes = classes;
        Self::finish(config, stems, paths)
    }

    fn finish(
        config: LibraryConfig,
        stems: BTreeMap<String, Vec<AudioBuffer>>,
        paths: BTreeMap<(String, usize), PathBuf>,
    ) -> Result<SourceLibrary> {
        let mut refs: Vec<(String, &AudioBuffer)> = Vec::new();
        for (class, list) in &stems {
            if list.is_empty() {
                return Err(Error::InvalidConfig(format!("class {class} has no stems")));
            }
            for b in list {
                refs.push((class.clone(), b));
            }
        }
        let profile = compute_profile(&refs, config.sample_rate, &config.profile)?;
        let mut normalized = BTreeMap::new();
        for (class, list) in &stems {
            let mut out = Vec::with_capacity(list.len());
            for b in list {
                out.push(fx_normalize(b, &profile, class)?);
            }
            normalized.insert(class.clone(), out);
        }
        Ok(SourceLibrary {
            config,
            stems,
            paths,
            profile,
            normalized,
        })
    }

    pub fn config(&self) -> &LibraryConfig {
        &self.config
    }

    pub fn classes(&self) -> &[String] {
        &self.config.classes
    }

    pub fn class_index(&self, class: &str) -> Result<usize> {
        self.config
            .classes
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| Error::UnknownClass(class.to_string()))
    }

    pub fn profile(&self) -> &NormalizationProfile {
        &self.profile
    }

    pub fn stem_count(&self, class: &str) -> usize {
        self.stems.get(class).map(|v| v.len()).unwrap_or(0)
    }

    pub fn raw_stem(&self, class: &str, index: usize) -> Result<&AudioBuffer> {
        self.stems
            .get(class)
            .and_then(|v| v.get(index))
            .ok_or_else(|| Error::UnknownClass(format!("{class}[{index}]")))
    }

    /// Fx-normalized stem, ready for segmentation and chain application.
    pub fn normalized_stem(&self, class: &str, index: usize) -> Result<&AudioBuffer> {
        self.normalized
            .get(class)
            .and_then(|v| v.get(index))
            .ok_or_else(|| Error::UnknownClass(format!("{class}[{index}]")))
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut entries = Vec::new();
        for (class, list) in &self.stems {
            for (i, b) in list.iter().enumerate() {
                entries.push(ManifestEntry {
                    class: class.clone(),
                    index: i,
                    path: self.paths.get(&(class.clone(), i)).cloned(),
                    duration_secs: b.duration_secs(),
                });
            }
        }
        DatasetManifest {
            sample_rate: self.config.sample_rate,
            entries,
        }
    }
}

pub fn segment_len_secs(_config: &LibraryConfig) -> f64 {
    // stems must cover two segments; the batch config owns the actual
    // segment duration, this is the conservative floor used at ingestion
    1.0
}
