//! Unpaired training sets and aligned test pairs on disk.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{degrade, reference_image, DegradationParams, PhantomError, PhantomSpec};
use crate::numerics::{load_real, save_real, RealArray2D, SeededRng};

pub const DATASET_SCHEMA: u32 = 1;

const STREAM_DEGRADE: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub phantom: PhantomSpec,
    pub degradation: DegradationParams,
    /// Seed of the degradation noise and the shuffle.
    pub seed: u64,
    pub train_x15: Vec<String>,
    pub train_x05: Vec<String>,
    pub test_x15: Vec<String>,
    pub test_x05: Vec<String>,
    /// `train_x05[k]` is the degradation of `train_x15[pairing[k]]`. Kept for
    /// audits only; trainers never read it.
    pub pairing: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetArrays {
    pub train_x15: Vec<RealArray2D>,
    pub train_x05: Vec<RealArray2D>,
    pub test_x15: Vec<RealArray2D>,
    pub test_x05: Vec<RealArray2D>,
    pub pairing: Vec<usize>,
}

/// Generates every array in memory. Training images use phantom indices
/// `0..n_train`, test images `n_train..n_train + n_test`; image `i` draws its
/// degradation noise from its own substream.
pub fn generate_dataset(
    spec: &PhantomSpec,
    params: &DegradationParams,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<DatasetArrays, PhantomError> {
    spec.validate()?;
    params.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(PhantomError::Invalid(
            "n_train and n_test must be >= 1".into(),
        ));
    }
    let root = SeededRng::new(seed);
    let pair = |index: usize| {
        let x15 = reference_image(spec, index as u64);
        let x05 = degrade(
            &x15,
            params,
            &mut root.fork(STREAM_DEGRADE).fork(index as u64),
        );
        (x15, x05)
    };
    let (train_x15, degraded): (Vec<_>, Vec<_>) = (0..n_train).map(pair).unzip();
    let (test_x15, test_x05) = (n_train..n_train + n_test).map(pair).unzip();
    let pairing = root.fork(STREAM_SHUFFLE).permutation(n_train);
    let train_x05 = pairing.iter().map(|&i| degraded[i].clone()).collect();
    Ok(DatasetArrays {
        train_x15,
        train_x05,
        test_x15,
        test_x05,
        pairing,
    })
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i:04}.npy")).collect()
}

/// Writes the dataset under `dir` and returns its manifest. The manifest is
/// written last, through a temporary file, so a partial run never leaves a
/// manifest behind.
pub fn build_dataset(
    spec: &PhantomSpec,
    params: &DegradationParams,
    n_train: usize,
    n_test: usize,
    seed: u64,
    dir: impl AsRef<Path>,
) -> Result<DatasetManifest, PhantomError> {
    let dir = dir.as_ref();
    let arrays = generate_dataset(spec, params, n_train, n_test, seed)?;
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA,
        phantom: spec.clone(),
        degradation: params.clone(),
        seed,
        train_x15: names("train/x15", n_train),
        train_x05: names("train/x05", n_train),
        test_x15: names("test/x15", n_test),
        test_x05: names("test/x05", n_test),
        pairing: arrays.pairing.clone(),
    };
    fs::create_dir_all(dir.join("train"))?;
    fs::create_dir_all(dir.join("test"))?;
    let groups = [
        (&manifest.train_x15, &arrays.train_x15),
        (&manifest.train_x05, &arrays.train_x05),
        (&manifest.test_x15, &arrays.test_x15),
        (&manifest.test_x05, &arrays.test_x05),
    ];
    for (files, images) in groups {
        for (name, img) in files.iter().zip(images) {
            save_real(dir.join(name), img)?;
        }
    }
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PhantomError> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.partial");
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhantomError> {
        let manifest: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if manifest.schema_version != DATASET_SCHEMA {
            return Err(PhantomError::Manifest(format!(
                "unsupported dataset schema {}",
                manifest.schema_version
            )));
        }
        let n = manifest.train_x15.len();
        if manifest.train_x05.len() != n
            || manifest.pairing.len() != n
            || manifest.test_x15.len() != manifest.test_x05.len()
        {
            return Err(PhantomError::Manifest("inconsistent file counts".into()));
        }
        Ok(manifest)
    }

    /// Rebuilds every array from the recorded parameters alone.
    pub fn regenerate(&self) -> Result<DatasetArrays, PhantomError> {
        generate_dataset(
            &self.phantom,
            &self.degradation,
            self.train_x15.len(),
            self.test_x15.len(),
            self.seed,
        )
    }
}

pub fn load_images(
    dir: impl AsRef<Path>,
    files: &[String],
) -> Result<Vec<RealArray2D>, PhantomError> {
    let dir = dir.as_ref();
    files.iter().map(|f| Ok(load_real(dir.join(f))?)).collect()
}
