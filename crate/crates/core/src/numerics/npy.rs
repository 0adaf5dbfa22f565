//! NPY version 1.0 reader/writer for the four dtypes used across the repo:
//! `<f4`, `<f8`, `<c8`, `<c16`, C order only.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::{Complex32, Complex64};

use super::{ComplexArray2D, NumericsError, RealArray2D};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    C64,
    C128,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::C64 => "<c8",
            Dtype::C128 => "<c16",
        }
    }

    fn from_descr(s: &str) -> Option<Self> {
        match s {
            "<f4" => Some(Dtype::F32),
            "<f8" => Some(Dtype::F64),
            "<c8" => Some(Dtype::C64),
            "<c16" => Some(Dtype::C128),
            _ => None,
        }
    }

    fn item_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }

    pub fn is_complex(self) -> bool {
        matches!(self, Dtype::C64 | Dtype::C128)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex32>),
    C128(Vec<Complex64>),
}

impl NpyData {
    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::F32(_) => Dtype::F32,
            NpyData::F64(_) => Dtype::F64,
            NpyData::C64(_) => Dtype::C64,
            NpyData::C128(_) => Dtype::C128,
        }
    }

    fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::C64(v) => v.len(),
            NpyData::C128(v) => v.len(),
        }
    }
}

/// N-dimensional array as stored in an NPY file.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn real(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        Self::new(shape, NpyData::F64(data))
    }

    pub fn complex(shape: Vec<usize>, data: Vec<Complex64>) -> Result<Self, NumericsError> {
        Self::new(shape, NpyData::C128(data))
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    /// Real payload widened to f64; complex payloads are a dtype mismatch.
    pub fn into_real(self) -> Result<(Vec<usize>, Vec<f64>), NumericsError> {
        let found = self.dtype();
        match self.data {
            NpyData::F64(v) => Ok((self.shape, v)),
            NpyData::F32(v) => Ok((self.shape, v.into_iter().map(f64::from).collect())),
            _ => Err(NumericsError::DtypeMismatch {
                expected: "real (<f4 or <f8)",
                found: found.descr(),
            }),
        }
    }

    pub fn into_complex(self) -> Result<(Vec<usize>, Vec<Complex64>), NumericsError> {
        let found = self.dtype();
        match self.data {
            NpyData::C128(v) => Ok((self.shape, v)),
            NpyData::C64(v) => Ok((
                self.shape,
                v.into_iter()
                    .map(|c| Complex64::new(f64::from(c.re), f64::from(c.im)))
                    .collect(),
            )),
            _ => Err(NumericsError::DtypeMismatch {
                expected: "complex (<c8 or <c16)",
                found: found.descr(),
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.len() {
            0 => "()".to_string(),
            1 => format!("({},)", self.shape[0]),
            _ => format!(
                "({})",
                self.shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype().descr(),
            shape
        );
        // magic(6) + version(2) + len(2) + header + '\n' aligned to 64 bytes
        let unpadded = 10 + header.len() + 1;
        let pad = (64 - unpadded % 64) % 64;
        header.extend(std::iter::repeat_n(' ', pad));
        header.push('\n');

        let mut out =
            Vec::with_capacity(10 + header.len() + self.data.len() * self.dtype().item_size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            NpyData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::C64(v) => v.iter().for_each(|x| {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }),
            NpyData::C128(v) => v.iter().for_each(|x| {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumericsError> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(NumericsError::MalformedHeader("missing NPY magic".into()));
        }
        if bytes[6] != 1 || bytes[7] != 0 {
            return Err(NumericsError::MalformedHeader(format!(
                "unsupported NPY version {}.{}",
                bytes[6], bytes[7]
            )));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let header_end = 10 + header_len;
        if bytes.len() < header_end {
            return Err(NumericsError::Truncated {
                expected: header_end,
                found: bytes.len(),
            });
        }
        let header = std::str::from_utf8(&bytes[10..header_end])
            .map_err(|_| NumericsError::MalformedHeader("header is not UTF-8".into()))?;
        let (dtype, shape) = parse_header(header)?;

        let count: usize = shape.iter().product();
        let payload = &bytes[header_end..];
        let needed = count * dtype.item_size();
        if payload.len() < needed {
            return Err(NumericsError::Truncated {
                expected: needed,
                found: payload.len(),
            });
        }
        let payload = &payload[..needed];
        let data = match dtype {
            Dtype::F32 => NpyData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => NpyData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::C64 => NpyData::C64(
                payload
                    .chunks_exact(8)
                    .map(|c| {
                        Complex32::new(
                            f32::from_le_bytes(c[..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            ),
            Dtype::C128 => NpyData::C128(
                payload
                    .chunks_exact(16)
                    .map(|c| {
                        Complex64::new(
                            f64::from_le_bytes(c[..8].try_into().unwrap()),
                            f64::from_le_bytes(c[8..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            ),
        };
        Ok(Self { shape, data })
    }
}

fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str, NumericsError> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| NumericsError::MalformedHeader(format!("missing key {key}")))?
        + pat.len();
    Ok(header[start..].trim_start())
}

fn parse_header(header: &str) -> Result<(Dtype, Vec<usize>), NumericsError> {
    let header = header.trim();
    if !header.starts_with('{') || !header.ends_with('}') {
        return Err(NumericsError::MalformedHeader(
            "header is not a dict".into(),
        ));
    }

    let descr = dict_value(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| NumericsError::MalformedHeader("bad descr".into()))?;
    let dtype = Dtype::from_descr(descr)
        .ok_or_else(|| NumericsError::MalformedHeader(format!("unsupported descr {descr}")))?;

    let fortran = dict_value(header, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(NumericsError::MalformedHeader(
            "fortran_order=True is not supported".into(),
        ));
    } else if !fortran.starts_with("False") {
        return Err(NumericsError::MalformedHeader("bad fortran_order".into()));
    }

    let shape = dict_value(header, "shape")?;
    let shape = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| NumericsError::MalformedHeader("bad shape".into()))?;
    let dims = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| NumericsError::MalformedHeader(format!("bad dimension {s}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((dtype, dims))
}

pub fn write_npy(path: impl AsRef<Path>, array: &NpyArray) -> Result<(), NumericsError> {
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&array.to_bytes())?;
    Ok(())
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray, NumericsError> {
    NpyArray::from_bytes(&fs::read(path.as_ref())?)
}

pub fn save_real(path: impl AsRef<Path>, a: &RealArray2D) -> Result<(), NumericsError> {
    write_npy(
        path,
        &NpyArray::real(vec![a.rows(), a.cols()], a.data().to_vec())?,
    )
}

pub fn load_real(path: impl AsRef<Path>) -> Result<RealArray2D, NumericsError> {
    let (shape, data) = read_npy(path)?.into_real()?;
    if shape.len() != 2 {
        return Err(NumericsError::Shape(format!(
            "expected 2-D array, got shape {shape:?}"
        )));
    }
    RealArray2D::from_vec(shape[0], shape[1], data)
}

pub fn save_complex(path: impl AsRef<Path>, a: &ComplexArray2D) -> Result<(), NumericsError> {
    write_npy(
        path,
        &NpyArray::complex(vec![a.rows(), a.cols()], a.data().to_vec())?,
    )
}

pub fn load_complex(path: impl AsRef<Path>) -> Result<ComplexArray2D, NumericsError> {
    let (shape, data) = read_npy(path)?.into_complex()?;
    if shape.len() != 2 {
        return Err(NumericsError::Shape(format!(
            "expected 2-D array, got shape {shape:?}"
        )));
    }
    ComplexArray2D::from_vec(shape[0], shape[1], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    #[test]
    fn real_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let a = SeededRng::new(1).gaussian(32, 32);
        let p = dir.path().join("a.npy");
        save_real(&p, &a).unwrap();
        let b = load_real(&p).unwrap();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn complex_file_read_as_real_is_dtype_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.npy");
        save_complex(&p, &ComplexArray2D::zeros(4, 4)).unwrap();
        assert!(matches!(
            load_real(&p),
            Err(NumericsError::DtypeMismatch { .. })
        ));
        assert!(load_complex(&p).is_ok());
    }

    #[test]
    fn empty_array_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.npy");
        save_real(&p, &RealArray2D::zeros(0, 0)).unwrap();
        let b = load_real(&p).unwrap();
        assert_eq!(b.shape(), (0, 0));
    }

    #[test]
    fn header_is_64_byte_aligned_and_numpy_shaped() {
        let bytes = NpyArray::real(vec![3, 5], vec![0.0; 15])
            .unwrap()
            .to_bytes();
        let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + hlen) % 64, 0);
        let header = std::str::from_utf8(&bytes[10..10 + hlen]).unwrap();
        assert!(header.starts_with("{'descr': '<f8', 'fortran_order': False, 'shape': (3, 5), }"));
        assert!(header.ends_with('\n'));
        let one_d = NpyArray::real(vec![4], vec![0.0; 4]).unwrap().to_bytes();
        let h = u16::from_le_bytes([one_d[8], one_d[9]]) as usize;
        assert!(std::str::from_utf8(&one_d[10..10 + h])
            .unwrap()
            .contains("'shape': (4,)"));
    }

    #[test]
    fn malformed_and_truncated_inputs_are_rejected() {
        assert!(matches!(
            NpyArray::from_bytes(b"not an npy file at all"),
            Err(NumericsError::MalformedHeader(_))
        ));
        let mut bytes = NpyArray::real(vec![8], vec![1.0; 8]).unwrap().to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            NpyArray::from_bytes(&bytes),
            Err(NumericsError::Truncated { .. })
        ));
        let mut bad = NpyArray::real(vec![2], vec![1.0; 2]).unwrap().to_bytes();
        let pos = bad.windows(3).position(|w| w == b"<f8").unwrap();
        bad[pos..pos + 3].copy_from_slice(b"<i8");
        assert!(matches!(
            NpyArray::from_bytes(&bad),
            Err(NumericsError::MalformedHeader(_))
        ));
    }

    #[test]
    fn f32_payloads_widen_on_load() {
        let arr = NpyArray::new(vec![1, 2], NpyData::F32(vec![0.5, -2.25])).unwrap();
        let back = NpyArray::from_bytes(&arr.to_bytes()).unwrap();
        let (shape, data) = back.into_real().unwrap();
        assert_eq!(shape, vec![1, 2]);
        assert_eq!(data, vec![0.5, -2.25]);
    }
}
