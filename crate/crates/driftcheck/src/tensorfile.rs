//! The DRFT tensor file format.
//!
//! ```text
//! offset  size       field
//! 0       4          magic "DRFT"
//! 4       4          version, u32 = 1
//! 8       1          dtype, 0 = f32, 1 = f64
//! 9       1          rank (0..=4)
//! 10      2          zero padding
//! 12      8 * rank   extents, u64 each
//! ...     numel * w  row-major payload
//! ```
//!
//! Every integer and scalar is little-endian.

use std::fs;
use std::path::Path;

use driftcheck_core::tensor::{TensorData, MAX_RANK};
use driftcheck_core::{DType, Tensor};

use crate::error::{DriftError, Result};

pub const MAGIC: &[u8; 4] = b"DRFT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let width = match t.dtype() {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.rank() + width * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match t.dtype() {
        DType::F32 => 0,
        DType::F64 => 1,
    });
    out.push(t.rank() as u8);
    out.extend_from_slice(&[0, 0]);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match t.data() {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |msg: String| DriftError::format(path, msg);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..4]))));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let dtype = match bytes[8] {
        0 => DType::F32,
        1 => DType::F64,
        other => return Err(bad(format!("unknown dtype tag {other}"))),
    };
    let rank = bytes[9] as usize;
    if rank > MAX_RANK {
        return Err(bad(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    if bytes[10..12] != [0, 0] {
        return Err(bad("nonzero padding".into()));
    }
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(bad("truncated extents".into()));
    }
    let shape: Vec<usize> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(format!("extents {shape:?} overflow")))?;
    let width = if dtype == DType::F32 { 4 } else { 8 };
    let payload = &bytes[dims_end..];
    if Some(payload.len()) != numel.checked_mul(width) {
        return Err(bad(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            numel.saturating_mul(width)
        )));
    }
    let data = match dtype {
        DType::F32 => {
            TensorData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        DType::F64 => {
            TensorData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        }
    };
    let t = Tensor::new(shape, data)?;
    if !t.is_finite() {
        return Err(bad("payload holds non-finite values".into()));
    }
    Ok(t)
}

pub fn write_tensor_file(t: &Tensor, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| DriftError::io(dir, e))?;
    }
    fs::write(path, encode_tensor(t)).map_err(|e| DriftError::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| DriftError::io(path, e))?;
    decode_tensor(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::scalar_f32(3.5);
        let bytes = encode_tensor(&t);
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert!(decode_tensor(&bytes, Path::new("x")).unwrap().bitwise_eq(&t));
    }

    #[test]
    fn header_layout() {
        let t = Tensor::from_f64(vec![2], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t);
        assert_eq!(&b[..4], b"DRFT");
        assert_eq!(&b[4..12], &[1, 0, 0, 0, 1, 1, 0, 0]);
        assert_eq!(&b[12..20], &2u64.to_le_bytes());
        assert_eq!(&b[20..28], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_files() {
        let good = encode_tensor(&Tensor::from_f32(vec![2, 2], vec![1.0; 4]).unwrap());
        let mut magic = good.clone();
        magic[..4].copy_from_slice(b"XXXX");
        let mut version = good.clone();
        version[4] = 2;
        let truncated = &good[..good.len() - 1];
        let mut nan = good.clone();
        let at = nan.len() - 4;
        nan[at..].copy_from_slice(&f32::NAN.to_le_bytes());
        for bytes in [&magic[..], &version[..], truncated, &nan[..], &good[..6]] {
            assert!(matches!(decode_tensor(bytes, Path::new("x")), Err(DriftError::Format { .. })));
        }
    }
}
