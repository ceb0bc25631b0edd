//! Versioned checkpoint container: config snapshot plus named parameter
//! arrays stored as little-endian 32-bit floats.

use super::params::ParamStore;
use super::ModelConfig;
use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FXREPCK1";

pub fn save_checkpoint(path: &Path, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(MAGIC)?;
    let config_json = serde_json::to_vec(cfg)?;
    f.write_all(&(config_json.len() as u32).to_le_bytes())?;
    f.write_all(&config_json)?;
    let names = store.names();
    f.write_all(&(names.len() as u32).to_le_bytes())?;
    for name in names {
        let entry = store.get(&name)?;
        let nb = name.as_bytes();
        f.write_all(&(nb.len() as u16).to_le_bytes())?;
        f.write_all(nb)?;
        f.write_all(&(entry.shape.len() as u8).to_le_bytes())?;
        for &d in &entry.shape {
            f.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &entry.values {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact(f: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    f.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let b = read_exact(f, 4)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParamStore)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_exact(&mut f, 8)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic (not a checkpoint or unsupported version)",
            path.display()
        )));
    }
    let cfg_len = read_u32(&mut f)? as usize;
    let cfg_bytes = read_exact(&mut f, cfg_len)?;
    let cfg: ModelConfig = serde_json::from_slice(&cfg_bytes)?;
    let count = read_u32(&mut f)? as usize;
    let mut store = ParamStore::default();
    for _ in 0..count {
        let nlen = {
            let b = read_exact(&mut f, 2)?;
            u16::from_le_bytes([b[0], b[1]]) as usize
        };
        let name = String::from_utf8(read_exact(&mut f, nlen)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = read_exact(&mut f, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut f)? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = read_exact(&mut f, n * 4)?;
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(&name, shape, values);
    }
    // the stored arrays must cover the config's parameter map
    for (name, shape) in super::params::param_specs(&cfg) {
        let entry = store.get(&name)?;
        if entry.shape != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, config expects {:?}",
                entry.shape, shape
            )));
        }
    }
    Ok((cfg, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::init_params;

    #[test]
    fn roundtrip_preserves_structure_and_f32_values() {
        let cfg = ModelConfig::desk(vec!["x".into(), "y".into()]);
        let store = init_params(&cfg, 9);
        let dir = std::env::temp_dir().join("fxrep-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &cfg, &store).unwrap();
        let (cfg2, store2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg2.embed_dim, cfg.embed_dim);
        assert_eq!(cfg2.classes, cfg.classes);
        for name in store.names() {
            let a = store.get(&name).unwrap();
            let b = store2.get(&name).unwrap();
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() <= (*x as f32).abs() as f64 * 1e-7 + 1e-10);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        let dir = std::env::temp_dir().join("fxrep-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
