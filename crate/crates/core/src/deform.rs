//! Parameterized audio deformations applied to evaluation audio.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{read_wav, write_wav, DataError, Signal, WavEncoding};
use crate::dsp::{lowpass_fir, resample, DspError, DEFAULT_LOWPASS_TAPS};
use crate::process;

#[derive(Debug, Error)]
pub enum DeformError {
    #[error("white noise on a zero-power signal: SNR is undefined")]
    ZeroPower,
    #[error("signal is empty")]
    EmptySignal,
    #[error("invalid deformation {id}: {reason}")]
    InvalidSpec { id: String, reason: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("external codec exited with {code:?}: {stderr}")]
    CodecFailed { code: Option<i32>, stderr: String },
    #[error("external codec: {0}")]
    CodecIo(std::io::Error),
    #[error("length mismatch: clean has {clean} samples, deformed has {deformed}")]
    LengthMismatch { clean: usize, deformed: usize },
}

/// Cutoff and bit depth of the built-in codec stand-in.
pub const CODEC_SIM_CUTOFF_HZ: f64 = 2000.0;
pub const CODEC_SIM_BITS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeformKind {
    WhiteNoise {
        snr_db: f64,
    },
    Gain {
        db: f64,
    },
    Lowpass {
        cutoff_hz: f64,
    },
    BitDepth {
        bits: u32,
    },
    /// Command template with `{in}` and `{out}` WAV placeholders.
    ExternalCodec {
        command: String,
    },
    /// lowpass(2000 Hz) followed by 8-bit quantization.
    CodecSim,
}

impl DeformKind {
    pub fn name(&self) -> &'static str {
        match self {
            DeformKind::WhiteNoise { .. } => "white_noise",
            DeformKind::Gain { .. } => "gain",
            DeformKind::Lowpass { .. } => "lowpass",
            DeformKind::BitDepth { .. } => "bit_depth",
            DeformKind::ExternalCodec { .. } => "external_codec",
            DeformKind::CodecSim => "codec_sim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationSpec {
    pub id: String,
    pub kind: DeformKind,
    #[serde(default)]
    pub seed_salt: u64,
}

impl DeformationSpec {
    pub fn new(id: impl Into<String>, kind: DeformKind) -> Self {
        Self { id: id.into(), kind, seed_salt: 0 }
    }

    /// Checks the parameter ranges that do not depend on the signal.
    pub fn check(&self) -> Result<(), DeformError> {
        let bad = |reason: String| Err(DeformError::InvalidSpec { id: self.id.clone(), reason });
        match &self.kind {
            DeformKind::WhiteNoise { snr_db } if !snr_db.is_finite() => {
                bad(format!("snr_db must be finite, got {snr_db}"))
            }
            DeformKind::Gain { db } if !db.is_finite() => bad(format!("gain db must be finite, got {db}")),
            DeformKind::Lowpass { cutoff_hz } if !(cutoff_hz.is_finite() && *cutoff_hz > 0.0) => {
                bad(format!("cutoff must be positive, got {cutoff_hz}"))
            }
            DeformKind::BitDepth { bits } if !(1..=16).contains(bits) => {
                bad(format!("bits must be in [1, 16], got {bits}"))
            }
            DeformKind::ExternalCodec { command } if command.trim().is_empty() => bad("empty codec command".into()),
            _ => Ok(()),
        }
    }

    /// Deterministic deformations can be recomputed; external codecs may not be.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self.kind, DeformKind::ExternalCodec { .. })
    }
}

/// The default robustness suite: noise at 15 and 0 dB SNR, a 12 dB gain
/// reduction and the codec stand-in.
pub fn default_deformation_suite() -> Vec<DeformationSpec> {
    vec![
        DeformationSpec::new("noise_15db", DeformKind::WhiteNoise { snr_db: 15.0 }),
        DeformationSpec::new("noise_0db", DeformKind::WhiteNoise { snr_db: 0.0 }),
        DeformationSpec::new("gain_-12db", DeformKind::Gain { db: -12.0 }),
        DeformationSpec::new("codec_sim", DeformKind::CodecSim),
    ]
}

/// Stable per-track seed derived from the track id.
pub fn track_seed(track_id: &str) -> u64 {
    let digest = Sha256::digest(track_id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn noise_seed(track_seed: u64, salt: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"white_noise");
    h.update(track_seed.to_le_bytes());
    h.update(salt.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deformed {
    pub signal: Signal,
    /// Samples saturated to [-1, 1] (gain only).
    pub clipped: usize,
}

pub fn apply_deformation(signal: &Signal, spec: &DeformationSpec, track_seed: u64) -> Result<Deformed, DeformError> {
    spec.check()?;
    if signal.samples.is_empty() {
        return Err(DeformError::EmptySignal);
    }
    let sr = signal.sr;
    let mut clipped = 0;
    let samples = match &spec.kind {
        DeformKind::WhiteNoise { snr_db } => {
            white_noise(&signal.samples, *snr_db, noise_seed(track_seed, spec.seed_salt))?
        }
        DeformKind::Gain { db } => {
            let (out, n) = gain(&signal.samples, *db);
            clipped = n;
            out
        }
        DeformKind::Lowpass { cutoff_hz } => lowpass_fir(&signal.samples, *cutoff_hz, sr, DEFAULT_LOWPASS_TAPS)?,
        DeformKind::BitDepth { bits } => quantize(&signal.samples, *bits),
        DeformKind::CodecSim => {
            let low = lowpass_fir(&signal.samples, CODEC_SIM_CUTOFF_HZ, sr, DEFAULT_LOWPASS_TAPS)?;
            quantize(&low, CODEC_SIM_BITS)
        }
        DeformKind::ExternalCodec { command } => external_codec(signal, command)?,
    };
    Ok(Deformed { signal: Signal::new(samples, sr), clipped })
}

/// Adds Gaussian noise rescaled so the empirical SNR equals `snr_db`. The
/// result is not clipped, since clipping would change the achieved SNR.
fn white_noise(x: &[f32], snr_db: f64, seed: u64) -> Result<Vec<f32>, DeformError> {
    let p_signal = mean_square(x.iter().map(|&v| v as f64));
    if p_signal == 0.0 {
        return Err(DeformError::ZeroPower);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let p_noise = mean_square(noise.iter().copied());
    let scale = (p_signal / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    Ok(x.iter().zip(&noise).map(|(&s, &n)| (s as f64 + scale * n) as f32).collect())
}

fn mean_square(x: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    x.map(|v| v * v).sum::<f64>() / n as f64
}

fn gain(x: &[f32], db: f64) -> (Vec<f32>, usize) {
    let g = 10f64.powf(db / 20.0);
    let mut clipped = 0;
    let out = x
        .iter()
        .map(|&v| {
            let y = v as f64 * g;
            if y.abs() > 1.0 {
                clipped += 1;
            }
            y.clamp(-1.0, 1.0) as f32
        })
        .collect();
    (out, clipped)
}

/// Mid-rise quantizer with `2^bits` levels over [-1, 1].
fn quantize(x: &[f32], bits: u32) -> Vec<f32> {
    let step = 2.0 / (1u64 << bits) as f64;
    let top = 1.0 - step / 2.0;
    x.iter().map(|&v| (step * ((v as f64 / step).floor() + 0.5)).clamp(-top, top) as f32).collect()
}

static CODEC_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Private scratch directory removed on drop.
struct Scratch(PathBuf);

impl Scratch {
    fn new() -> std::io::Result<Self> {
        let n = CODEC_COUNTER.fetch_add(1, Ordering::Relaxed);
        let dir = std::env::temp_dir().join(format!("repref-codec-{}-{n}", std::process::id()));
        std::fs::create_dir_all(&dir)?;
        Ok(Self(dir))
    }
}

impl Drop for Scratch {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn external_codec(signal: &Signal, command: &str) -> Result<Vec<f32>, DeformError> {
    let scratch = Scratch::new().map_err(DeformError::CodecIo)?;
    let input = scratch.0.join("in.wav");
    let output = scratch.0.join("out.wav");
    write_wav(&input, signal, WavEncoding::Float32)?;
    let result = process::run_template(command, &[("in", &input), ("out", &output)]).map_err(DeformError::CodecIo)?;
    if !result.status.success() {
        return Err(DeformError::CodecFailed { code: result.status.code(), stderr: process::stderr_text(&result) });
    }
    let decoded = read_wav(&output)?;
    let mut samples = resample(&decoded.samples, decoded.sr, signal.sr)?;
    // Codecs add priming/padding; keep the evaluated length fixed.
    samples.resize(signal.samples.len(), 0.0);
    Ok(samples)
}

/// Outcome of an SNR measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Db(f64),
    /// Zero residual: the signals are sample-identical.
    Identical,
}

impl std::fmt::Display for Snr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Snr::Db(db) => write!(f, "{db:.3} dB"),
            Snr::Identical => f.write_str("identical"),
        }
    }
}

pub fn measure_snr(clean: &[f32], deformed: &[f32]) -> Result<Snr, DeformError> {
    if clean.len() != deformed.len() {
        return Err(DeformError::LengthMismatch { clean: clean.len(), deformed: deformed.len() });
    }
    let p_clean = mean_square(clean.iter().map(|&v| v as f64));
    if p_clean == 0.0 {
        return Err(DeformError::ZeroPower);
    }
    let p_res = mean_square(clean.iter().zip(deformed).map(|(&c, &d)| d as f64 - c as f64));
    if p_res == 0.0 {
        return Ok(Snr::Identical);
    }
    Ok(Snr::Db(10.0 * (p_clean / p_res).log10()))
}
