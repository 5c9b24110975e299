//! Binary encoding of per-track matrices: `count u32le`, then per track
//! `id_len u32le · id · sr u32le · MRT1 tensor`. Audio is stored as `1 × n`,
//! features use `sr = 0`.

use ndarray::Array2;

use super::OrchestratorError;
use crate::features::{decode_tensor, encode_tensor, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackData {
    pub track_id: String,
    pub sr: u32,
    pub matrix: Array2<f32>,
}

pub fn encode_tracks(tracks: &[TrackData]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(tracks.len() as u32).to_le_bytes());
    for t in tracks {
        out.extend_from_slice(&(t.track_id.len() as u32).to_le_bytes());
        out.extend_from_slice(t.track_id.as_bytes());
        out.extend_from_slice(&t.sr.to_le_bytes());
        encode_tensor(&Tensor::from_matrix(&t.matrix), &mut out);
    }
    out
}

pub fn decode_tracks(bytes: &[u8]) -> Result<Vec<TrackData>, OrchestratorError> {
    let corrupt = |m: &str| OrchestratorError::Corrupt(m.to_string());
    let mut pos = 0usize;
    let u32_at = |pos: &mut usize| -> Result<u32, OrchestratorError> {
        let b = bytes.get(*pos..*pos + 4).ok_or_else(|| corrupt("truncated track set"))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    };
    let count = u32_at(&mut pos)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = u32_at(&mut pos)? as usize;
        let id = bytes.get(pos..pos + len).ok_or_else(|| corrupt("truncated track id"))?;
        let track_id = String::from_utf8(id.to_vec()).map_err(|_| corrupt("track id is not UTF-8"))?;
        pos += len;
        let sr = u32_at(&mut pos)?;
        let (tensor, used) = decode_tensor(&bytes[pos..])?;
        pos += used;
        out.push(TrackData { track_id, sr, matrix: tensor.into_matrix()? });
    }
    if pos != bytes.len() {
        return Err(corrupt("trailing bytes after track set"));
    }
    Ok(out)
}
