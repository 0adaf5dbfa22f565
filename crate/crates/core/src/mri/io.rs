//! K-space files: `kspace.npy` (C x H x W complex), `mask.npy`, `sense.npy`
//! and a JSON sidecar.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KSpaceData, MriError, SamplingMask, SenseMaps};
use crate::numerics::npy::{read_npy, write_npy};
use crate::numerics::{load_real, save_real, ComplexArray2D, NpyArray};

pub const ACQUISITION_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionMeta {
    pub schema_version: u32,
    pub gamma: f64,
    pub acceleration: f64,
    pub acs: usize,
    pub mask_seed: u64,
    pub sense_seed: u64,
    pub noise_seed: u64,
}

fn stack(planes: &[ComplexArray2D]) -> Result<NpyArray, MriError> {
    let (rows, cols) = planes[0].shape();
    let data = planes
        .iter()
        .flat_map(|p| p.data().iter().copied())
        .collect();
    Ok(NpyArray::complex(vec![planes.len(), rows, cols], data)?)
}

fn unstack(a: NpyArray) -> Result<Vec<ComplexArray2D>, MriError> {
    let (shape, data) = a.into_complex()?;
    if shape.len() != 3 {
        return Err(MriError::Shape(format!(
            "expected C x H x W, got {shape:?}"
        )));
    }
    let plane = shape[1] * shape[2];
    data.chunks(plane.max(1))
        .take(shape[0])
        .map(|c| Ok(ComplexArray2D::from_vec(shape[1], shape[2], c.to_vec())?))
        .collect()
}

pub fn save_kspace(
    dir: impl AsRef<Path>,
    y: &KSpaceData,
    sense: &SenseMaps,
    meta: &AcquisitionMeta,
) -> Result<(), MriError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_npy(dir.join("kspace.npy"), &stack(&y.coils)?)?;
    write_npy(dir.join("sense.npy"), &stack(&sense.coils)?)?;
    save_real(dir.join("mask.npy"), &y.mask.to_array())?;
    let tmp = dir.join("acquisition.json.partial");
    fs::write(&tmp, serde_json::to_string_pretty(meta)?)?;
    fs::rename(tmp, dir.join("acquisition.json"))?;
    Ok(())
}

pub fn load_kspace(
    dir: impl AsRef<Path>,
) -> Result<(KSpaceData, SenseMaps, AcquisitionMeta), MriError> {
    let dir = dir.as_ref();
    let meta: AcquisitionMeta =
        serde_json::from_str(&fs::read_to_string(dir.join("acquisition.json"))?)?;
    if meta.schema_version != ACQUISITION_SCHEMA {
        return Err(MriError::Meta(format!(
            "unsupported schema {}",
            meta.schema_version
        )));
    }
    let coils = unstack(read_npy(dir.join("kspace.npy"))?)?;
    let sense = SenseMaps {
        coils: unstack(read_npy(dir.join("sense.npy"))?)?,
    };
    let mask = SamplingMask::from_array(
        &load_real(dir.join("mask.npy"))?,
        meta.acceleration,
        meta.acs,
    )?;
    if coils.len() != sense.coils.len() || coils.iter().any(|k| k.shape() != (mask.rows, mask.cols))
    {
        return Err(MriError::Shape(
            "k-space, coil maps and mask disagree".into(),
        ));
    }
    Ok((
        KSpaceData {
            coils,
            mask,
            gamma: meta.gamma,
        },
        sense,
        meta,
    ))
}
