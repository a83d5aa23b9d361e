use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::datamodel::io::{read_matrix, write_matrix};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const PARAMS_FILE: &str = "params.json";
pub const CONFIG_FILE: &str = "config.json";

/// One entry of `params.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub file: String,
    pub shape: [usize; 2],
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes one matrix file per parameter plus `params.json` and `config.json`.
///
/// Values are stored in single precision; parameters produced by
/// [`ModelParams::init`] and the optimiser are already representable, so the
/// round trip is exact.
pub fn save_checkpoint(dir: &Path, params: &ModelParams, cfg: &ModelConfig) -> Result<()> {
    params.audit(cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = BTreeMap::new();
    for (name, t) in params.iter() {
        let file = format!("{name}.mhlf");
        let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
        write_matrix(&dir.join(&file), t.rows(), t.cols(), &data)?;
        index.insert(
            name.to_string(),
            ParamEntry {
                file,
                shape: [t.rows(), t.cols()],
            },
        );
    }
    write_json(&dir.join(PARAMS_FILE), &index)?;
    write_json(&dir.join(CONFIG_FILE), cfg)
}

/// Reads a checkpoint and validates every shape against its configuration.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParams, ModelConfig)> {
    let cfg: ModelConfig = read_json(&dir.join(CONFIG_FILE))?;
    cfg.validate()?;
    let index: BTreeMap<String, ParamEntry> = read_json(&dir.join(PARAMS_FILE))?;
    let mut tensors = BTreeMap::new();
    for (name, entry) in index {
        let path = dir.join(&entry.file);
        let (rows, cols, data) = read_matrix(&path)?;
        if [rows, cols] != entry.shape {
            return Err(Error::ParamShape {
                name,
                expected: (entry.shape[0], entry.shape[1]),
                found: (rows, cols),
            });
        }
        let t = Tensor2::new(rows, cols, data.into_iter().map(f64::from).collect())?;
        tensors.insert(name, t);
    }
    let params = ModelParams::from_map(tensors, &cfg)?;
    Ok((params, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            heads: 2,
            ffn_width: 16,
            seed: 3,
            ..ModelConfig::with_dims([5, 3, 4])
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let params = ModelParams::init(&cfg).unwrap();
        save_checkpoint(dir.path(), &params, &cfg).unwrap();
        let (p2, c2) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(p2, params);
        assert_eq!(c2, cfg);
        let index: BTreeMap<String, ParamEntry> = read_json(&dir.path().join(PARAMS_FILE)).unwrap();
        assert_eq!(index["v.proj.w"].shape, [5, 8]);
        assert_eq!(index.len(), params.len());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        save_checkpoint(dir.path(), &ModelParams::init(&cfg).unwrap(), &cfg).unwrap();
        write_matrix(&dir.path().join("cls.w.mhlf"), 2, 1, &[0.0, 0.0]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(Error::ParamShape { ref name, .. }) if name == "cls.w"
        ));
    }

    #[test]
    fn config_change_fails_the_audit() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        save_checkpoint(dir.path(), &ModelParams::init(&cfg).unwrap(), &cfg).unwrap();
        let other = ModelConfig {
            use_dms: false,
            ..cfg
        };
        write_json(&dir.path().join(CONFIG_FILE), &other).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::UnexpectedParam(_))));
    }
}
