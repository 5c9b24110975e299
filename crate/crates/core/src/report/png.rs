//! 8-bit grayscale PNG encoding with uncompressed (stored) deflate blocks,
//! and the log-mel spectrogram images used by the confusion report.

use ndarray::Array2;

use crate::dataio::Signal;
use crate::dsp::{self, DspError};

pub const SPECTROGRAM_MELS: usize = 40;
const SPECTROGRAM_N_FFT: usize = 1024;
const SPECTROGRAM_HOP: usize = 512;
const LOG_FLOOR: f64 = 1e-10;

fn chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    let start = out.len();
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    let crc = crc32fast::hash(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
}

fn adler32(data: &[u8]) -> u32 {
    const MOD: u32 = 65521;
    let (mut a, mut b) = (1u32, 0u32);
    for block in data.chunks(5552) {
        for &x in block {
            a += x as u32;
            b += a;
        }
        a %= MOD;
        b %= MOD;
    }
    (b << 16) | a
}

/// zlib stream made of stored deflate blocks.
fn zlib_stored(data: &[u8]) -> Vec<u8> {
    let mut out = vec![0x78, 0x01];
    let blocks: Vec<&[u8]> = if data.is_empty() { vec![&[]] } else { data.chunks(u16::MAX as usize).collect() };
    for (i, block) in blocks.iter().enumerate() {
        out.push(u8::from(i + 1 == blocks.len()));
        let len = block.len() as u16;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&(!len).to_le_bytes());
        out.extend_from_slice(block);
    }
    out.extend_from_slice(&adler32(data).to_be_bytes());
    out
}

/// Encodes `pixels` (`height × width`, row 0 at the top) as a grayscale PNG.
pub fn encode_gray_png(pixels: &Array2<u8>) -> Vec<u8> {
    let (height, width) = pixels.dim();
    let mut raw = Vec::with_capacity(height * (width + 1));
    for row in pixels.rows() {
        raw.push(0); // filter: none
        raw.extend(row.iter());
    }
    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&(width as u32).to_be_bytes());
    ihdr.extend_from_slice(&(height as u32).to_be_bytes());
    ihdr.extend_from_slice(&[8, 0, 0, 0, 0]);

    let mut out = b"\x89PNG\r\n\x1a\n".to_vec();
    chunk(&mut out, b"IHDR", &ihdr);
    chunk(&mut out, b"IDAT", &zlib_stored(&raw));
    chunk(&mut out, b"IEND", &[]);
    out
}

/// Log-mel energies, `n_mels × n_frames`.
pub fn log_mel(signal: &Signal) -> Result<Array2<f64>, DspError> {
    let spec = dsp::stft(&signal.samples, signal.sr, SPECTROGRAM_N_FFT, SPECTROGRAM_HOP)?;
    let bank = dsp::mel_filterbank(SPECTROGRAM_MELS, SPECTROGRAM_N_FFT, signal.sr, 0.0, signal.sr as f64 / 2.0)?;
    let power = spec.power();
    Ok(bank.dot(&power.t()).mapv(|e| (e + LOG_FLOOR).ln()))
}

/// Min-max scales to 0..=255 with the lowest band on the bottom row.
pub fn spectrogram_pixels(log_mel: &Array2<f64>) -> Array2<u8> {
    let lo = log_mel.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = log_mel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (bands, frames) = log_mel.dim();
    Array2::from_shape_fn((bands, frames), |(r, c)| {
        let v = log_mel[[bands - 1 - r, c]];
        if hi > lo {
            ((v - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    })
}

pub fn spectrogram_png(signal: &Signal) -> Result<Vec<u8>, DspError> {
    Ok(encode_gray_png(&spectrogram_pixels(&log_mel(signal)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adler_reference_value() {
        assert_eq!(adler32(b"Wikipedia"), 0x11E6_0398);
        assert_eq!(adler32(b""), 1);
    }

    #[test]
    fn stored_blocks_split_at_64k() {
        let data = vec![7u8; 70_000];
        let z = zlib_stored(&data);
        assert_eq!(z.len(), 2 + 2 * 5 + 70_000 + 4);
        assert_eq!(z[2], 0);
        assert_eq!(z[2 + 5 + 65_535], 1);
    }

    #[test]
    fn constant_image_is_black() {
        let px = spectrogram_pixels(&Array2::from_elem((3, 4), -2.0));
        assert!(px.iter().all(|&p| p == 0));
    }
}
