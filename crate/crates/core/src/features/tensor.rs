//! MRT1 tensor files: `MRT1` · dtype u8 (1 = f32le) · ndim u8 · dims as
//! u32le × ndim · row-major f32le payload.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::FeatureError;

pub const MAGIC: &[u8; 4] = b"MRT1";
pub const DTYPE_F32LE: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_matrix(m: &Array2<f32>) -> Self {
        Self { dims: vec![m.nrows() as u32, m.ncols() as u32], data: m.iter().copied().collect() }
    }

    pub fn into_matrix(self) -> Result<Array2<f32>, FeatureError> {
        match self.dims.as_slice() {
            [r, c] => Ok(Array2::from_shape_vec((*r as usize, *c as usize), self.data)
                .expect("payload length checked on decode")),
            other => Err(FeatureError::Tensor(format!("expected a 2-dimensional tensor, got dims {other:?}"))),
        }
    }
}

pub fn encode_tensor(tensor: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32LE);
    out.push(tensor.dims.len() as u8);
    for d in &tensor.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Decodes one tensor from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, usize), FeatureError> {
    let truncated = || FeatureError::Tensor("truncated payload".into());
    if bytes.len() < 6 {
        return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            FeatureError::Tensor("bad magic".into())
        } else {
            truncated()
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(FeatureError::Tensor("bad magic".into()));
    }
    if bytes[4] != DTYPE_F32LE {
        return Err(FeatureError::Tensor(format!("unsupported dtype {} (expected 1 = f32le)", bytes[4])));
    }
    let ndim = bytes[5] as usize;
    let header = 6 + 4 * ndim;
    if bytes.len() < header {
        return Err(truncated());
    }
    let dims: Vec<u32> = bytes[6..header].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
    let count = count.ok_or_else(|| FeatureError::Tensor("dimension product overflows".into()))?;
    let end = count.checked_mul(4).and_then(|n| n.checked_add(header)).ok_or_else(truncated)?;
    if bytes.len() < end {
        return Err(truncated());
    }
    let data = bytes[header..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((Tensor { dims, data }, end))
}

pub fn write_tensor_file(path: &Path, matrix: &Array2<f32>) -> Result<(), FeatureError> {
    let mut bytes = Vec::with_capacity(14 + 4 * matrix.len());
    encode_tensor(&Tensor::from_matrix(matrix), &mut bytes);
    fs::write(path, bytes).map_err(|e| FeatureError::io(path, e))
}

pub fn read_tensor_file(path: &Path) -> Result<Array2<f32>, FeatureError> {
    let bytes = fs::read(path).map_err(|e| FeatureError::io(path, e))?;
    let (tensor, used) = decode_tensor(&bytes).map_err(|e| e.at(path))?;
    if used != bytes.len() {
        return Err(FeatureError::Tensor(format!(
            "{}: {} trailing bytes after tensor",
            path.display(),
            bytes.len() - used
        )));
    }
    tensor.into_matrix().map_err(|e| e.at(path))
}
