//! Deterministic synthetic datasets: single-note tone banks for pitch-class
//! probing, band-limited noise classes, and XOR-arranged feature points.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    write_manifest_csv, write_wav, DataError, Dataset, Label, Signal, TaskDecl, TaskKind, TrackRecord, WavEncoding,
};
use crate::dsp;
use crate::features::write_tensor_file;

pub const PITCH_CLASSES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timbre {
    Sine,
    Saw,
    Square,
}

impl Timbre {
    pub fn as_str(self) -> &'static str {
        match self {
            Timbre::Sine => "sine",
            Timbre::Saw => "saw",
            Timbre::Square => "square",
        }
    }

    /// (harmonic number, amplitude) pairs.
    fn partials(self) -> Vec<(u32, f64)> {
        match self {
            Timbre::Sine => vec![(1, 1.0)],
            Timbre::Saw => (1..=8).map(|k| (k, 1.0 / k as f64)).collect(),
            Timbre::Square => (1..=9).step_by(2).map(|k| (k, 1.0 / k as f64)).collect(),
        }
    }
}

impl std::str::FromStr for Timbre {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sine" => Ok(Timbre::Sine),
            "saw" => Ok(Timbre::Saw),
            "square" => Ok(Timbre::Square),
            other => Err(format!("unknown timbre {other:?} (expected sine, saw or square)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToneBankSpec {
    pub n_per_class: usize,
    pub octaves: Vec<i32>,
    pub timbres: Vec<Timbre>,
    pub sr: u32,
    pub duration_s: f64,
    pub detune_cents_max: f64,
}

impl Default for ToneBankSpec {
    fn default() -> Self {
        Self {
            n_per_class: 10,
            octaves: vec![3, 4, 5],
            timbres: vec![Timbre::Sine, Timbre::Saw, Timbre::Square],
            sr: 16000,
            duration_s: 1.0,
            detune_cents_max: 10.0,
        }
    }
}

impl ToneBankSpec {
    pub fn check(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSynthSpec(m.to_string()));
        if self.sr < 8000 {
            return bad("sr must be at least 8000");
        }
        if self.n_per_class == 0 || self.octaves.is_empty() || self.timbres.is_empty() {
            return bad("n_per_class, octaves and timbres must be nonempty");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration_s must be positive");
        }
        if !(self.detune_cents_max >= 0.0 && self.detune_cents_max < 50.0) {
            return bad("detune_cents_max must be in [0, 50)");
        }
        Ok(())
    }
}

/// One rendered note of the tone bank.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneNote {
    pub track_id: String,
    pub pitch_class: usize,
    pub octave: i32,
    pub midi: i32,
    pub timbre: Timbre,
    pub detune_cents: f64,
}

impl ToneNote {
    pub fn frequency(&self) -> f64 {
        midi_to_hz(self.midi) * 2f64.powf(self.detune_cents / 1200.0)
    }
}

/// Equal-tempered frequency with A4 (MIDI 69) at 440 Hz.
pub fn midi_to_hz(midi: i32) -> f64 {
    440.0 * 2f64.powf((midi - 69) as f64 / 12.0)
}

/// The notes of a tone bank, without rendering audio. Each pitch class gets
/// `n_per_class` notes cycling through the (octave, timbre) combinations.
pub fn tonebank_notes(spec: &ToneBankSpec, seed: u64) -> Vec<ToneNote> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let combos = spec.octaves.len() * spec.timbres.len();
    let mut notes = Vec::with_capacity(12 * spec.n_per_class);
    for pc in 0..12 {
        for i in 0..spec.n_per_class {
            let combo = (i + pc) % combos;
            let octave = spec.octaves[combo % spec.octaves.len()];
            let timbre = spec.timbres[(combo / spec.octaves.len()) % spec.timbres.len()];
            let detune_cents = if spec.detune_cents_max > 0.0 {
                rng.random_range(-spec.detune_cents_max..=spec.detune_cents_max)
            } else {
                0.0
            };
            notes.push(ToneNote {
                track_id: format!("tone_{:04}", notes.len()),
                pitch_class: pc,
                octave,
                midi: 12 * (octave + 1) + pc as i32,
                timbre,
                detune_cents,
            });
        }
    }
    notes
}

/// Renders a note with its timbre's partials (those below Nyquist) under a
/// 10 ms / 50 ms / 0.8 / 100 ms ADSR envelope, peak amplitude at most 0.5.
pub fn render_note(note: &ToneNote, sr: u32, duration_s: f64) -> Signal {
    let n = (duration_s * sr as f64).round() as usize;
    let f0 = note.frequency();
    let partials: Vec<(u32, f64)> =
        note.timbre.partials().into_iter().filter(|(k, _)| *k as f64 * f0 < sr as f64 / 2.0).collect();
    let norm: f64 = partials.iter().map(|(_, a)| a).sum::<f64>().max(1e-12);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            let wave: f64 = partials.iter().map(|&(k, a)| a * (2.0 * PI * k as f64 * f0 * t).sin()).sum();
            (0.5 * wave / norm * adsr(t, duration_s)) as f32
        })
        .collect();
    Signal::new(samples, sr)
}

fn adsr(t: f64, duration: f64) -> f64 {
    const ATTACK: f64 = 0.010;
    const DECAY: f64 = 0.050;
    const SUSTAIN: f64 = 0.8;
    const RELEASE: f64 = 0.100;
    let level = if t < ATTACK {
        t / ATTACK
    } else if t < ATTACK + DECAY {
        1.0 - (1.0 - SUSTAIN) * (t - ATTACK) / DECAY
    } else {
        SUSTAIN
    };
    let remaining = duration - t;
    if remaining < RELEASE {
        level * (remaining / RELEASE).max(0.0)
    } else {
        level
    }
}

/// Writes a tone bank (`audio/<track_id>.wav` plus `manifest.csv`) and
/// returns it with tasks `pitch_class` and `timbre`.
pub fn synth_tonebank(spec: &ToneBankSpec, seed: u64, out_dir: &Path) -> Result<Dataset, DataError> {
    spec.check()?;
    let notes = tonebank_notes(spec, seed);
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| DataError::io(&audio_dir, e))?;
    let mut tracks = Vec::with_capacity(notes.len());
    for note in &notes {
        let path = audio_dir.join(format!("{}.wav", note.track_id));
        write_wav(&path, &render_note(note, spec.sr, spec.duration_s), WavEncoding::Pcm16)?;
        tracks.push(TrackRecord {
            track_id: note.track_id.clone(),
            audio_path: path,
            labels: BTreeMap::from([
                ("pitch_class".to_string(), Label::Single(PITCH_CLASSES[note.pitch_class].into())),
                ("timbre".to_string(), Label::Single(note.timbre.as_str().into())),
            ]),
            group: None,
            duration_s: Some(spec.duration_s),
        });
    }
    let dataset = Dataset::new(
        "tonebank",
        vec![
            TaskDecl { id: "pitch_class".into(), kind: TaskKind::Multiclass },
            TaskDecl { id: "timbre".into(), kind: TaskKind::Multiclass },
        ],
        tracks,
    )?;
    write_manifest_csv(&dataset, &out_dir.join("manifest.csv"))?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBandSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub sr: u32,
    pub duration_s: f64,
}

impl Default for NoiseBandSpec {
    fn default() -> Self {
        Self { n_classes: 4, n_per_class: 10, sr: 16000, duration_s: 1.0 }
    }
}

impl NoiseBandSpec {
    /// Class center frequencies, log-spaced over `[200, sr/4]` Hz.
    pub fn center_frequencies(&self) -> Vec<f64> {
        let (lo, hi) = (200.0f64, self.sr as f64 / 4.0);
        if self.n_classes == 1 {
            return vec![lo];
        }
        (0..self.n_classes).map(|k| lo * (hi / lo).powf(k as f64 / (self.n_classes - 1) as f64)).collect()
    }

    pub fn check(&self) -> Result<(), DataError> {
        if self.n_classes == 0 || self.n_per_class == 0 {
            return Err(DataError::InvalidSynthSpec("n_classes and n_per_class must be positive".into()));
        }
        if self.sr < 8000 || !(self.duration_s > 0.0) {
            return Err(DataError::InvalidSynthSpec("sr must be >= 8000 and duration_s positive".into()));
        }
        Ok(())
    }
}

/// Writes band-limited noise classes: a 1/3-octave band around each class
/// center frequency, amplitude-modulated at `class + 1` Hz. Task `band`.
pub fn synth_noiseband(spec: &NoiseBandSpec, seed: u64, out_dir: &Path) -> Result<Dataset, DataError> {
    spec.check()?;
    let centers = spec.center_frequencies();
    let n = (spec.duration_s * spec.sr as f64).round() as usize;
    let n_fft = n.next_power_of_two();
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| DataError::io(&audio_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tracks = Vec::new();
    for (class, &fc) in centers.iter().enumerate() {
        let (f_lo, f_hi) = (fc * 2f64.powf(-1.0 / 6.0), fc * 2f64.powf(1.0 / 6.0));
        let am_rate = (class + 1) as f64;
        for _ in 0..spec.n_per_class {
            let mut re: Vec<f64> =
                (0..n_fft).map(|i| if i < n { StandardNormal.sample(&mut rng) } else { 0.0 }).collect();
            let mut im = vec![0.0; n_fft];
            (re, im) = dsp::fft(&re, &im).expect("power of two");
            for k in 0..n_fft {
                let bin = k.min(n_fft - k) as f64 * spec.sr as f64 / n_fft as f64;
                if bin < f_lo || bin > f_hi {
                    re[k] = 0.0;
                    im[k] = 0.0;
                }
            }
            let (band, _) = dsp::ifft(&re, &im).expect("power of two");
            let band = &band[..n];
            let rms = (band.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-12);
            let samples = band
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = i as f64 / spec.sr as f64;
                    let env = 0.5 * (1.0 + (2.0 * PI * am_rate * t).sin());
                    (0.1 * v / rms * env) as f32
                })
                .collect();
            let track_id = format!("band_{:04}", tracks.len());
            let path = audio_dir.join(format!("{track_id}.wav"));
            write_wav(&path, &Signal::new(samples, spec.sr), WavEncoding::Pcm16)?;
            tracks.push(TrackRecord {
                track_id,
                audio_path: path,
                labels: BTreeMap::from([("band".to_string(), Label::Single(format!("b{class:02}")))]),
                group: None,
                duration_s: Some(spec.duration_s),
            });
        }
    }
    let dataset = Dataset::new("noiseband", vec![TaskDecl { id: "band".into(), kind: TaskKind::Multiclass }], tracks)?;
    write_manifest_csv(&dataset, &out_dir.join("manifest.csv"))?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XorSpec {
    pub n_per_cluster: usize,
    pub spread: f64,
}

impl Default for XorSpec {
    fn default() -> Self {
        Self { n_per_cluster: 100, spread: 0.25 }
    }
}

impl XorSpec {
    pub fn check(&self) -> Result<(), DataError> {
        if self.n_per_cluster == 0 || !(self.spread >= 0.0) {
            return Err(DataError::InvalidSynthSpec("n_per_cluster must be positive and spread >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XorPoint {
    pub x: [f32; 2],
    /// 1 when both coordinates share a sign cluster, else 0.
    pub label: usize,
}

/// Gaussian clusters at (±1, ±1); the label is the XOR of the cluster signs,
/// so no line separates the classes.
pub fn xor_points(spec: &XorSpec, seed: u64) -> Vec<XorPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(4 * spec.n_per_cluster);
    for _ in 0..spec.n_per_cluster {
        for (cx, cy) in [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)] {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            points.push(XorPoint {
                x: [(cx + spec.spread * dx) as f32, (cy + spec.spread * dy) as f32],
                label: usize::from(cx * cy > 0.0),
            });
        }
    }
    points
}

/// Writes an XOR dataset: `features/<track_id>.mrt` holds each point as a
/// 1×2 feature matrix, `audio/<track_id>.wav` a short silent placeholder, and
/// `manifest.csv` the `xor` labels. The features are meant to be served by a
/// plugin extractor that copies the `.mrt` files.
pub fn synth_xor(spec: &XorSpec, seed: u64, out_dir: &Path) -> Result<Dataset, DataError> {
    spec.check()?;
    let audio_dir = out_dir.join("audio");
    let feat_dir = out_dir.join("features");
    for d in [&audio_dir, &feat_dir] {
        fs::create_dir_all(d).map_err(|e| DataError::io(d, e))?;
    }
    let silence = Signal::new(vec![0.0; 800], 8000);
    let mut tracks = Vec::new();
    for (i, p) in xor_points(spec, seed).iter().enumerate() {
        let track_id = format!("xor_{i:04}");
        let path = audio_dir.join(format!("{track_id}.wav"));
        write_wav(&path, &silence, WavEncoding::Pcm16)?;
        let matrix = ndarray::Array2::from_shape_vec((1, 2), p.x.to_vec()).expect("1x2");
        let feat_path = feat_dir.join(format!("{track_id}.mrt"));
        write_tensor_file(&feat_path, &matrix)
            .map_err(|e| DataError::io(&feat_path, std::io::Error::other(e.to_string())))?;
        tracks.push(TrackRecord {
            track_id,
            audio_path: path,
            labels: BTreeMap::from([(
                "xor".to_string(),
                Label::Single(if p.label == 1 { "same" } else { "diff" }.into()),
            )]),
            group: None,
            duration_s: Some(0.1),
        });
    }
    let dataset = Dataset::new("xor", vec![TaskDecl { id: "xor".into(), kind: TaskKind::Multiclass }], tracks)?;
    write_manifest_csv(&dataset, &out_dir.join("manifest.csv"))?;
    Ok(dataset)
}
