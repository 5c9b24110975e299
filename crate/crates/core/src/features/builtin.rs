use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureSequence, FeatureSource, FeatureSpec, Provenance};
use crate::dataio::Signal;
use crate::dsp::{self, DctPlan};

pub(crate) const EXTRACTOR_VERSION: u32 = 1;

const MFCC_N_FFT: usize = 1024;
const MFCC_HOP: usize = 512;
const N_MELS: usize = 40;
const N_MFCC: usize = 13;
const LOG_FLOOR: f64 = 1e-10;
pub const CHROMA_FMIN: f64 = 65.0;
pub const CHROMA_FMAX: f64 = 2093.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinExtractor {
    /// 13 MFCCs (c0 kept), mean ‖ std over frames: d = 26.
    MfccStats,
    /// 40 log-mel bands, mean ‖ std: d = 80.
    MelStats,
    /// 12 pitch-class profile, per-frame L2 normalized, mean ‖ std: d = 24.
    ChromaStats,
}

impl BuiltinExtractor {
    pub const ALL: [BuiltinExtractor; 3] =
        [BuiltinExtractor::MfccStats, BuiltinExtractor::MelStats, BuiltinExtractor::ChromaStats];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinExtractor::MfccStats => "mfcc_stats",
            BuiltinExtractor::MelStats => "mel_stats",
            BuiltinExtractor::ChromaStats => "chroma_stats",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn dim(self) -> usize {
        match self {
            BuiltinExtractor::MfccStats => 2 * N_MFCC,
            BuiltinExtractor::MelStats => 2 * N_MELS,
            BuiltinExtractor::ChromaStats => 24,
        }
    }

    /// (frame length, frame hop) in samples at `sr`.
    pub fn frame(self, sr: u32) -> (usize, usize) {
        match self {
            BuiltinExtractor::MfccStats | BuiltinExtractor::MelStats => (MFCC_N_FFT, MFCC_HOP),
            // About a quarter second, enough to resolve semitones near 65 Hz.
            BuiltinExtractor::ChromaStats => {
                let n = ((sr / 4).max(1) as usize).next_power_of_two();
                (n, n / 4)
            }
        }
    }
}

/// Window length and hop in samples: `round(seconds · sr)`.
pub fn window_layout(spec: &FeatureSpec, sr: u32) -> (usize, usize) {
    let win = (spec.window_s * sr as f64).round().max(1.0) as usize;
    let hop = (spec.hop_s * sr as f64).round().max(1.0) as usize;
    (win, hop)
}

/// Runs a built-in extractor over consecutive analysis windows. The signal
/// must already be at `spec.target_sr`; the final window is zero-padded.
pub fn extract_builtin(
    track_id: &str,
    deformation_id: &str,
    signal: &Signal,
    spec: &FeatureSpec,
) -> Result<FeatureSequence, FeatureError> {
    spec.check()?;
    let FeatureSource::Builtin(extractor) = spec.source else {
        return Err(FeatureError::InvalidSpec(format!("{} is not a built-in extractor", spec.id)));
    };
    if signal.sr != spec.target_sr {
        return Err(FeatureError::InvalidSpec(format!(
            "signal at {} Hz, extractor expects {} Hz",
            signal.sr, spec.target_sr
        )));
    }
    if signal.samples.is_empty() {
        return Err(FeatureError::Dsp(dsp::DspError::EmptySignal));
    }
    let sr = signal.sr;
    let (win, hop) = window_layout(spec, sr);
    let (frame, frame_hop) = extractor.frame(sr);
    if win < frame {
        return Err(FeatureError::TooShort { window: win, frame });
    }

    let kernel = Kernel::new(extractor, sr)?;
    let n_windows = crate::dsp::stft_frame_count(signal.samples.len(), win, hop);
    let mut matrix = Array2::<f32>::zeros((n_windows, extractor.dim()));
    let mut segment = vec![0.0f32; win];
    for w in 0..n_windows {
        let start = w * hop;
        for (i, s) in segment.iter_mut().enumerate() {
            *s = signal.samples.get(start + i).copied().unwrap_or(0.0);
        }
        let spec_frames = dsp::stft(&segment, sr, frame, frame_hop)?;
        let per_frame = kernel.frame_features(&spec_frames);
        let row = mean_std(&per_frame);
        for (dst, v) in matrix.row_mut(w).iter_mut().zip(row) {
            *dst = v as f32;
        }
    }
    Ok(FeatureSequence {
        track_id: track_id.to_string(),
        matrix,
        provenance: Provenance {
            feature_id: spec.id.clone(),
            deformation_id: deformation_id.to_string(),
            extractor_version: spec.extractor_version(),
        },
    })
}

enum Kernel {
    Mel { bank: Array2<f64>, dct: Option<DctPlan> },
    Chroma { bins: Vec<(usize, usize)> },
}

impl Kernel {
    fn new(extractor: BuiltinExtractor, sr: u32) -> Result<Self, FeatureError> {
        Ok(match extractor {
            BuiltinExtractor::MfccStats | BuiltinExtractor::MelStats => Kernel::Mel {
                bank: dsp::mel_filterbank(N_MELS, MFCC_N_FFT, sr, 0.0, sr as f64 / 2.0)?,
                dct: (extractor == BuiltinExtractor::MfccStats).then(|| DctPlan::new(N_MELS, N_MFCC)),
            },
            BuiltinExtractor::ChromaStats => {
                let (n_fft, _) = extractor.frame(sr);
                let bins = (0..=n_fft / 2)
                    .filter_map(|k| {
                        let f = k as f64 * sr as f64 / n_fft as f64;
                        (CHROMA_FMIN..=CHROMA_FMAX).contains(&f).then(|| (k, pitch_class_of(f)))
                    })
                    .collect();
                Kernel::Chroma { bins }
            }
        })
    }

    /// One feature vector per STFT frame.
    fn frame_features(&self, spec: &dsp::Spectrogram) -> Vec<Vec<f64>> {
        spec.magnitudes
            .rows()
            .into_iter()
            .map(|row| match self {
                Kernel::Mel { bank, dct } => {
                    let log_mel: Vec<f64> = bank
                        .rows()
                        .into_iter()
                        .map(|filter| {
                            let energy: f64 = filter.iter().zip(row).map(|(w, m)| w * m * m).sum();
                            (energy + LOG_FLOOR).ln()
                        })
                        .collect();
                    match dct {
                        Some(plan) => plan.apply(&log_mel),
                        None => log_mel,
                    }
                }
                Kernel::Chroma { bins } => chroma_frame(row, bins),
            })
            .collect()
    }
}

/// `round(12·log2(f/440)) + 69 mod 12`, with C = 0.
fn pitch_class_of(f: f64) -> usize {
    ((12.0 * (f / 440.0).log2()).round() as i64 + 69).rem_euclid(12) as usize
}

fn chroma_frame(row: ArrayView1<f64>, bins: &[(usize, usize)]) -> Vec<f64> {
    let mut chroma = vec![0.0; 12];
    for &(k, pc) in bins {
        chroma[pc] += row[k];
    }
    let norm = chroma.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        chroma.iter_mut().for_each(|c| *c /= norm);
    }
    chroma
}

/// Per-dimension mean followed by population std over frames. Values are
/// shifted by the first frame so constant input yields exact means and
/// zero deviations.
pub(crate) fn mean_std(frames: &[Vec<f64>]) -> Vec<f64> {
    let n = frames.len() as f64;
    let origin = &frames[0];
    let d = origin.len();
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for f in frames {
        for i in 0..d {
            let v = f[i] - origin[i];
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let mean: Vec<f64> = (0..d).map(|i| origin[i] + sum[i] / n).collect();
    let std = (0..d).map(|i| {
        let m = sum[i] / n;
        (sum_sq[i] / n - m * m).max(0.0).sqrt()
    });
    mean.iter().copied().chain(std).collect()
}
