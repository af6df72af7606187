//! Single-file checkpoint container: magic, JSON header (version, configs,
//! normalization statistics, parameter table), then raw little-endian f64
//! parameter data in store order. Round-trips are bit-exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actionexpert::NormStats;
use crate::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::policy::PolicyModel;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 6] = b"FCCK1\n";

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    variant: Variant,
    norm: NormStats,
    params: Vec<ParamEntry>,
    frozen_digest: String,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

pub fn save(path: &Path, model: &PolicyModel) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let header = Header {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: model.cfg.clone(),
        variant: model.variant,
        norm: model.norm.clone(),
        params: model
            .store
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
        frozen_digest: model.store.frozen_digest(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let mut f = fs::File::create(path)?;
    f.write_all(MAGIC)?;
    f.write_all(&(header_json.len() as u32).to_le_bytes())?;
    f.write_all(&header_json)?;
    for (_, p) in model.store.iter() {
        for v in p.value.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<PolicyModel> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 6];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("{}: not a checkpoint", path.display())));
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)?;
    let mut header_bytes = vec![0u8; u32::from_le_bytes(len_bytes) as usize];
    f.read_exact(&mut header_bytes)?;
    let header: Header =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Format(e.to_string()))?;
    if header.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint format {} unsupported (want {})",
            header.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }

    // rebuild the parameter skeleton, then overwrite values from the file
    let mut model = PolicyModel::init(&header.model, header.variant, header.norm.clone(), 0)?;
    if model.store.len() != header.params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} parameters, model wants {}",
            header.params.len(),
            model.store.len()
        )));
    }
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for (id, entry) in ids.iter().zip(&header.params) {
        {
            let p = model.store.get(*id);
            if p.name != entry.name || p.value.shape() != entry.shape.as_slice() {
                return Err(Error::Format(format!(
                    "checkpoint parameter {} does not match model slot {}",
                    entry.name, p.name
                )));
            }
        }
        let numel: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; numel * 8];
        f.read_exact(&mut bytes)?;
        let values = model.store.value_mut(*id);
        for (i, chunk) in bytes.chunks_exact(8).enumerate() {
            values.data_mut()[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if model.store.frozen_digest() != header.frozen_digest {
        return Err(Error::Format(
            "frozen-parameter digest mismatch after load".into(),
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::default();
        let model =
            PolicyModel::init(&cfg, Variant::FdmLearnable, NormStats::identity(3), 31).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fck");
        save(&path, &model).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(model.store.full_digest(), loaded.store.full_digest());
        assert_eq!(model.variant, loaded.variant);
        assert_eq!(model.cfg, loaded.cfg);
        assert_eq!(model.norm, loaded.norm);

        // saving the loaded model reproduces the file byte-for-byte
        let path2 = dir.path().join("model2.fck");
        save(&path2, &loaded).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load(Path::new("/nonexistent/model.fck")),
            Err(Error::Io(_))
        ));
    }
}
