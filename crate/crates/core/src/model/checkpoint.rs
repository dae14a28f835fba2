//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MTLP"  u32 version  u32 json_len  <config json>
//! u32 n_entries
//! per entry: u32 name_len <name> u32 rank  rank*u32 dims  dims-product f32 values
//! ```
//!
//! Entries appear in store order, so save/load roundtrips reproduce the
//! parameter store exactly, index for index. Group membership is not
//! stored; it is re-derived from each name's prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{param_group_of, ModelConfig};
use crate::numerics::{ParameterStore, Tensor};

const MAGIC: &[u8; 4] = b"MTLP";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, config: &ModelConfig, store: &ParameterStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;

    let json = serde_json::to_vec(config)
        .map_err(|e| Error::Format(format!("could not encode model config: {e}")))?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;

    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, _, tensor) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let shape = tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ParameterStore)> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "not a checkpoint: expected magic {MAGIC:?}, found {magic:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }

    let json_len = read_u32(&mut r)? as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let config: ModelConfig = serde_json::from_slice(&json)
        .map_err(|e| Error::Format(format!("invalid model config in checkpoint: {e}")))?;

    let n_entries = read_u32(&mut r)? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..n_entries {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not valid UTF-8".into()))?;
        let group = param_group_of(&name)?;

        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(&name, group, Tensor::new(shape, values));
    }
    Ok((config, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ArchTag};

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            embed_dim: 4,
            hidden_units: 3,
            n: 5,
            m: 3,
            architecture: ArchTag::MultitaskLstm,
            no_repeat_decoding: true,
        }
    }

    #[test]
    fn roundtrip_is_bitwise_exact() {
        let cfg = config();
        let store = init_params(&cfg, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &store).unwrap();

        let (cfg2, store2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(store.len(), store2.len());
        for i in 0..store.len() {
            assert_eq!(store.name_at(i), store2.name_at(i));
            assert_eq!(store.group_at(i), store2.group_at(i));
            assert_eq!(store.tensor_at(i).shape(), store2.tensor_at(i).shape());
            let a: Vec<u32> = store.tensor_at(i).values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = store2.tensor_at(i).values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "parameter {} drifted", store.name_at(i));
        }
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let cfg = config();
        let store = init_params(&cfg, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&p1, &cfg, &store).unwrap();
        save_checkpoint(&p2, &cfg, &store).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE then some bytes").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_format_error() {
        let cfg = config();
        let store = init_params(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.ckpt");
        save_checkpoint(&path, &cfg, &store).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 2;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_io_error() {
        let cfg = config();
        let store = init_params(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.ckpt");
        save_checkpoint(&path, &cfg, &store).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Cut in the middle of a tensor payload and, separately, inside
        // the header.
        for cut in [bytes.len() - 3, bytes.len() / 2, 6] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_checkpoint(&path), Err(Error::Io(_))),
                "cut at {cut} should read as truncation"
            );
        }
    }

    #[test]
    fn foreign_group_prefix_is_format_error() {
        let cfg = config();
        let store = init_params(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prefix.ckpt");
        save_checkpoint(&path, &cfg, &store).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // First entry name is "shared.embed"; overwrite the prefix.
        let pos = bytes.windows(12).position(|w| w == b"shared.embed").unwrap();
        bytes[pos..pos + 6].copy_from_slice(b"sharey");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn every_architecture_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        for arch in ArchTag::ALL {
            let mut cfg = config();
            cfg.architecture = arch;
            cfg.no_repeat_decoding = false;
            let store = init_params(&cfg, 5).unwrap();
            let path = dir.path().join(format!("{arch}.ckpt"));
            save_checkpoint(&path, &cfg, &store).unwrap();
            let (cfg2, store2) = load_checkpoint(&path).unwrap();
            assert_eq!(cfg, cfg2);
            assert_eq!(store.len(), store2.len(), "{arch}");
        }
    }
}
