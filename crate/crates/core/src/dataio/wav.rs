use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::DataError;

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f32>,
    pub sr: u32,
}

impl Signal {
    pub fn new(samples: Vec<f32>, sr: u32) -> Self {
        Self { samples, sr }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sr as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }
}

pub(crate) fn mean_square(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    Pcm16,
    #[default]
    Float32,
}

/// Reads a PCM16 or float32 WAV file; multichannel input is averaged to mono.
pub fn read_wav(path: &Path) -> Result<Signal, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let reader = WavReader::new(BufReader::new(file)).map_err(|e| wav_error(path, e))?;
    decode(reader, path)
}

/// Decodes WAV bytes already in memory.
pub fn read_wav_bytes(bytes: &[u8]) -> Result<Signal, DataError> {
    let reader = WavReader::new(std::io::Cursor::new(bytes)).map_err(|e| wav_error(Path::new("<memory>"), e))?;
    decode(reader, Path::new("<memory>"))
}

fn decode<R: std::io::Read>(mut reader: WavReader<R>, path: &Path) -> Result<Signal, DataError> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(DataError::MalformedWav { path: path.to_path_buf(), reason: "zero channels".into() });
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_error(path, e))?,
        (SampleFormat::Float, 32) => {
            reader.samples::<f32>().collect::<Result<_, _>>().map_err(|e| wav_error(path, e))?
        }
        (format, bits) => {
            return Err(DataError::UnsupportedCodec {
                path: path.to_path_buf(),
                detail: format!("{format:?} {bits}-bit"),
            })
        }
    };
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f32>() / channels as f32).collect()
    };
    Ok(Signal::new(samples, spec.sample_rate))
}

/// Writes a mono WAV file. Samples outside `[-1, 1]` are saturated for PCM16;
/// the number of saturated samples is returned.
pub fn write_wav(path: &Path, signal: &Signal, encoding: WavEncoding) -> Result<usize, DataError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: signal.sr,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut writer = WavWriter::new(BufWriter::new(file), spec).map_err(|e| wav_error(path, e))?;
    let mut clipped = 0;
    for &x in &signal.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                if !(-1.0..=1.0).contains(&x) {
                    clipped += 1;
                }
                let q = (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(|e| wav_error(path, e))?;
            }
            WavEncoding::Float32 => writer.write_sample(x).map_err(|e| wav_error(path, e))?,
        }
    }
    writer.finalize().map_err(|e| wav_error(path, e))?;
    if clipped > 0 {
        log::warn!("{}: {clipped} samples saturated on write", path.display());
    }
    Ok(clipped)
}

fn wav_error(path: &Path, err: hound::Error) -> DataError {
    match err {
        hound::Error::IoError(e) => DataError::io(path, e),
        hound::Error::Unsupported => {
            DataError::UnsupportedCodec { path: path.to_path_buf(), detail: "unsupported format tag".into() }
        }
        other => DataError::MalformedWav { path: path.to_path_buf(), reason: other.to_string() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(n: usize) -> Vec<f32> {
        (0..n).map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin() as f32).collect()
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let sig = Signal::new(sine(4000), 16000);
        write_wav(&path, &sig, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&path).unwrap(), sig);
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let mut samples = sine(4000);
        samples.push(1.0);
        samples.push(-1.0);
        let sig = Signal::new(samples, 22050);
        assert_eq!(write_wav(&path, &sig, WavEncoding::Pcm16).unwrap(), 0);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sr, 22050);
        for (a, b) in back.samples.iter().zip(&sig.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn pcm16_saturates_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let sig = Signal::new(vec![1.5, -2.0, 0.25], 8000);
        assert_eq!(write_wav(&path, &sig, WavEncoding::Pcm16).unwrap(), 2);
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples[0], 32767.0 / 32768.0);
        assert_eq!(back.samples[1], -1.0);
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(1.0f32).unwrap();
            w.write_sample(0.0f32).unwrap();
        }
        w.finalize().unwrap();
        let sig = read_wav(&path).unwrap();
        assert_eq!(sig.samples, vec![0.5; 4]);
    }

    #[test]
    fn compressed_codec_is_rejected() {
        // Minimal RIFF/WAVE with format tag 0x0055 (MPEG layer 3).
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(4u32 + 8 + 16 + 8 + 4).to_le_bytes());
        bytes.extend_from_slice(b"WAVEfmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&0x0055u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&8000u32.to_le_bytes());
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        let err = read_wav_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("unsupported WAV codec"), "{err}");
    }

    #[test]
    fn garbage_is_malformed() {
        let err = read_wav_bytes(b"not a wav file at all").unwrap_err();
        assert!(matches!(err, DataError::MalformedWav { .. }), "{err}");
    }
}
