//! Minimal reader and writer for the NumPy `.npy` binary tensor format.
//!
//! Only what the pipeline exchanges is supported: C-order arrays of
//! little-endian floats, integers and booleans.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I8,
    I16,
    I32,
    I64,
    U8,
    Bool,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        Ok(match descr {
            "<f4" => Dtype::F32,
            "<f8" => Dtype::F64,
            "|i1" | "<i1" => Dtype::I8,
            "<i2" => Dtype::I16,
            "<i4" => Dtype::I32,
            "<i8" => Dtype::I64,
            "|u1" | "<u1" => Dtype::U8,
            "|b1" => Dtype::Bool,
            other => return Err(Error::Npy(format!("unsupported dtype {other:?}"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Dtype::I8 | Dtype::U8 | Dtype::Bool => 1,
            Dtype::I16 => 2,
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, Dtype::F32 | Dtype::F64)
    }
}

/// A decoded array, values widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn read(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Npy("bad magic".into()));
    }
    let major = bytes[6];
    let (header_len, offset) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Npy("truncated header".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(Error::Npy(format!("unsupported format version {v}"))),
    };
    let end = offset + header_len;
    if bytes.len() < end {
        return Err(Error::Npy("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[offset..end])
        .map_err(|_| Error::Npy("header is not valid text".into()))?;

    let descr = header_value(header, "descr")?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"');
    let dtype = Dtype::parse(descr)?;

    let fortran = header_value(header, "fortran_order")?;
    match fortran.trim() {
        "False" => {}
        "True" => return Err(Error::Npy("fortran-order arrays are not supported".into())),
        other => return Err(Error::Npy(format!("bad fortran_order value {other:?}"))),
    }

    let shape = parse_shape(&header_value(header, "shape")?)?;
    let count: usize = shape.iter().product();
    let payload = &bytes[end..];
    let need = count * dtype.size();
    if payload.len() < need {
        return Err(Error::Npy(format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            need
        )));
    }

    let data = match dtype {
        Dtype::F64 => payload[..need]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload[..need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I64 => payload[..need]
            .chunks_exact(8)
            .map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I32 => payload[..need]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I16 => payload[..need]
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I8 => payload[..need].iter().map(|&b| b as i8 as f64).collect(),
        Dtype::U8 | Dtype::Bool => payload[..need].iter().map(|&b| b as f64).collect(),
    };

    Ok(NpyArray { dtype, shape, data })
}

fn header_value(header: &str, key: &str) -> Result<String> {
    let needle_sq = format!("'{key}'");
    let needle_dq = format!("\"{key}\"");
    let start = header
        .find(&needle_sq)
        .map(|i| i + needle_sq.len())
        .or_else(|| header.find(&needle_dq).map(|i| i + needle_dq.len()))
        .ok_or_else(|| Error::Npy(format!("header lacks {key:?}")))?;
    let rest = header[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::Npy(format!("malformed header near {key:?}")))?
        .trim_start();
    if rest.starts_with('(') {
        let close = rest
            .find(')')
            .ok_or_else(|| Error::Npy("unterminated shape tuple".into()))?;
        Ok(rest[..=close].to_string())
    } else {
        let stop = rest.find([',', '}']).unwrap_or(rest.len());
        Ok(rest[..stop].to_string())
    }
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let inner = text.trim().trim_start_matches('(').trim_end_matches(')');
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::Npy(format!("bad shape entry {s:?}")))
        })
        .collect()
}

fn encode_header(descr: &str, shape: &[usize]) -> Vec<u8> {
    let shape_text = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict =
        format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_text}, }}");
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64
    let unpadded = 10 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

pub fn encode_f64(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    check_count(shape, data.len())?;
    let mut out = encode_header("<f8", shape);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_u8(shape: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    check_count(shape, data.len())?;
    let mut out = encode_header("|u1", shape);
    out.extend_from_slice(data);
    Ok(out)
}

fn check_count(shape: &[usize], len: usize) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != len {
        return Err(Error::Npy(format!(
            "shape {shape:?} holds {count} values but {len} were given"
        )));
    }
    Ok(())
}

pub fn write_f64(path: impl AsRef<Path>, shape: &[usize], data: &[f64]) -> Result<()> {
    let bytes = encode_f64(shape, data)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn write_u8(path: impl AsRef<Path>, shape: &[usize], data: &[u8]) -> Result<()> {
    let bytes = encode_u8(shape, data)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_64_byte_aligned() {
        let bytes = encode_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((bytes.len() - 24) % 64, 0);
        assert_eq!(&bytes[..6], MAGIC);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = decode(b"PK\x03\x04 not an npy file").unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn rejects_fortran_order() {
        let mut bytes = encode_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let text = String::from_utf8_lossy(&bytes[10..]).replace("False", "True ");
        bytes.truncate(10);
        bytes.extend_from_slice(text.as_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("fortran"), "{err}");
    }

    #[test]
    fn rejects_big_endian() {
        let mut bytes = encode_f64(&[1], &[1.0]).unwrap();
        let pos = bytes.windows(3).position(|w| w == b"<f8").unwrap();
        bytes[pos] = b'>';
        assert!(decode(&bytes).unwrap_err().to_string().contains("dtype"));
    }

    #[test]
    fn reads_float32_payload() {
        let mut bytes = encode_header("<f4", &[2]);
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        let arr = decode(&bytes).unwrap();
        assert_eq!(arr.dtype, Dtype::F32);
        assert_eq!(arr.data, vec![1.5, -2.0]);
    }

    #[test]
    fn reads_zero_dim_shape() {
        let bytes = encode_f64(&[], &[4.0]).unwrap();
        let arr = decode(&bytes).unwrap();
        assert!(arr.shape.is_empty());
        assert_eq!(arr.data, vec![4.0]);
    }

    proptest! {
        #[test]
        fn f64_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .collect();
            let bytes = encode_f64(&[rows, cols], &data).unwrap();
            let arr = decode(&bytes).unwrap();
            prop_assert_eq!(arr.shape, vec![rows, cols]);
            let same = arr.data.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
