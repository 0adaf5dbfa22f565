//! Checkpoint directories: one NPY file per named tensor plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NnError, ParamSet};
use crate::numerics::npy::{read_npy, write_npy, NpyArray};

const FORMAT: &str = "fieldshift-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tensors: Vec<TensorEntry>,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        self.tensors.push((name.into(), shape, data));
    }

    pub fn add_params(&mut self, prefix: &str, params: &ParamSet) {
        for p in params.iter() {
            self.add(
                format!("{prefix}.{}", p.name),
                p.shape.clone(),
                p.data.clone(),
            );
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&(String, Vec<usize>, Vec<f64>), NnError> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor {name}")))
    }

    /// Reads tensors `prefix.*` into a set shaped like `template`.
    pub fn params(&self, prefix: &str, template: &ParamSet) -> Result<ParamSet, NnError> {
        let mut out = template.clone();
        for p in out.iter_mut() {
            let (_, shape, data) = self.tensor(&format!("{prefix}.{}", p.name))?;
            if *shape != p.shape {
                return Err(NnError::Checkpoint(format!(
                    "tensor {prefix}.{} has shape {shape:?}, expected {:?}",
                    p.name, p.shape
                )));
            }
            p.data.clone_from(data);
        }
        Ok(out)
    }

    /// Writes into a sibling temporary directory, then renames it into place,
    /// so a partially written checkpoint is never visible under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), NnError> {
        let dir = dir.as_ref();
        let tmp = tmp_sibling(dir);
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, shape, data) in &self.tensors {
            let file = format!("{name}.npy");
            write_npy(
                tmp.join(&file),
                &NpyArray::real(shape.clone(), data.clone())?,
            )?;
            entries.push(TensorEntry {
                name: name.clone(),
                file,
                shape: shape.clone(),
                dtype: "<f8".into(),
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            tensors: entries,
            meta: self.meta.clone(),
        };
        fs::write(
            tmp.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)
                .map_err(|e| NnError::Checkpoint(e.to_string()))?,
        )?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, NnError> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(NnError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let (shape, data) = read_npy(dir.join(&e.file))?.into_real()?;
            if shape != e.shape {
                return Err(NnError::Checkpoint(format!(
                    "tensor {} shape mismatch",
                    e.name
                )));
            }
            tensors.push((e.name, shape, data));
        }
        Ok(Self {
            tensors,
            meta: manifest.meta,
        })
    }

    /// SHA-256 over tensor names, shapes, payload bits and metadata.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, shape, data) in &self.tensors {
            h.update(name.as_bytes());
            for d in shape {
                h.update((*d as u64).to_le_bytes());
            }
            for v in data {
                h.update(v.to_le_bytes());
            }
        }
        h.update(self.meta.to_string().as_bytes());
        hex::encode(h.finalize())
    }
}

fn tmp_sibling(dir: &Path) -> PathBuf {
    let mut name = dir
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, NetworkSpec};
    use crate::numerics::SeededRng;

    #[test]
    fn save_load_round_trip_is_exact() {
        let spec = NetworkSpec::conv_stack(1, 4, 2, 1, Activation::Elu);
        let params = spec.init_params(&mut SeededRng::new(1));
        let mut ck = Checkpoint::new(serde_json::json!({"step": 12, "lr": 1e-3}));
        ck.add_params("net", &params);
        ck.add("extra", vec![2], vec![0.1, -0.2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.digest(), ck.digest());
        assert!(back.params("net", &params).unwrap().bits_equal(&params));
        assert!(!dir.path().join("ck.partial").exists());
    }

    #[test]
    fn missing_tensor_is_reported() {
        let ck = Checkpoint::new(serde_json::Value::Null);
        let spec = NetworkSpec::conv_stack(1, 2, 1, 1, Activation::Elu);
        let params = spec.zero_params();
        assert!(matches!(
            ck.params("net", &params),
            Err(NnError::Checkpoint(_))
        ));
    }
}
