//! Independent reference implementations and the checks that compare the
//! library against them. Shared between the core integration tests and the
//! CLI acceptance suite, so every check reports `Ok(detail)` or
//! `Err(reason)` instead of panicking.

#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repref_core::dataio::{Signal, TaskKind};
use repref_core::dsp;
use repref_core::features::{extract_builtin, BuiltinExtractor, FeatureSpec};
use repref_core::metrics::{classification_metrics, confusion, key_weighted_score, Key, Mode};
use repref_core::probes::{build_probe, default_probe_suite, loss, loss_and_grad, ProbeModel};

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Max absolute difference scaled by the largest reference magnitude.
pub fn rel_err(actual: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(actual.len(), reference.len());
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let diff = actual.iter().zip(reference).fold(0.0f64, |m, (a, r)| m.max((a - r).abs()));
    diff / scale
}

// ---- DSP ----

/// Direct DFT magnitudes of one Hann-windowed frame.
pub fn naive_frame_magnitudes(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in frame.iter().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * PI * t as f64 / n as f64).cos();
                let phase = -2.0 * PI * (k * t) as f64 / n as f64;
                re += x * w * phase.cos();
                im += x * w * phase.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// `n_frames × (n_fft/2+1)` magnitudes; the tail is zero-padded to a full frame.
pub fn naive_stft(signal: &[f32], n_fft: usize, hop: usize) -> Array2<f64> {
    let n_frames = if signal.len() <= n_fft { 1 } else { 1 + (signal.len() - n_fft).div_ceil(hop) };
    let mut out = Array2::zeros((n_frames, n_fft / 2 + 1));
    for f in 0..n_frames {
        let frame: Vec<f64> = (0..n_fft).map(|i| signal.get(f * hop + i).map_or(0.0, |&v| v as f64)).collect();
        for (k, m) in naive_frame_magnitudes(&frame).into_iter().enumerate() {
            out[[f, k]] = m;
        }
    }
    out
}

/// HTK-mel triangles sampled at bin frequencies, each scaled to peak 1.
pub fn naive_mel_bank(n_mels: usize, n_fft: usize, sr: u32, fmin: f64, fmax: f64) -> Array2<f64> {
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let step = (mel(fmax) - mel(fmin)) / (n_mels + 1) as f64;
    let mut bank = Array2::zeros((n_mels, n_fft / 2 + 1));
    for m in 0..n_mels {
        let lo = hz(mel(fmin) + step * m as f64);
        let mid = hz(mel(fmin) + step * (m + 1) as f64);
        let hi = hz(mel(fmin) + step * (m + 2) as f64);
        for k in 0..=n_fft / 2 {
            let f = k as f64 * sr as f64 / n_fft as f64;
            let rise = (f - lo) / (mid - lo);
            let fall = (hi - f) / (hi - mid);
            bank[[m, k]] = rise.min(fall).max(0.0);
        }
        let peak = bank.row(m).iter().fold(0.0f64, |a, &b| a.max(b));
        bank.row_mut(m).mapv_inplace(|w| w / peak);
    }
    bank
}

/// Orthonormal DCT-II straight from the definition.
pub fn naive_dct(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 =
                x.iter().enumerate().map(|(i, v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * n)).cos()).sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}

fn random_signal(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f32> {
    let len = rng.random_range(1..=max_len);
    (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn stft_matches_naive(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_signal(&mut rng, 4096);
        let n_fft = 1 << rng.random_range(4..=9);
        let hop = rng.random_range(1..=n_fft);
        let got = dsp::stft(&x, 16000, n_fft, hop).map_err(|e| e.to_string())?;
        let want = naive_stft(&x, n_fft, hop);
        ensure(got.magnitudes.dim() == want.dim(), || format!("shape {:?} vs {:?}", got.magnitudes.dim(), want.dim()))?;
        let err = rel_err(got.magnitudes.as_slice().unwrap(), want.as_slice().unwrap());
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("stft n_fft={n_fft} hop={hop} len={}: rel err {err:e}", x.len()))?;
    }
    Ok(format!("{trials} random signals, worst rel err {worst:.1e}"))
}

pub fn mel_matches_naive(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_signal(&mut rng, 4096);
        let n_fft = [256usize, 512, 1024][rng.random_range(0..3)];
        let hop = n_fft / 2;
        let sr = [8000u32, 16000, 22050][rng.random_range(0..3)];
        let n_mels = rng.random_range(8..=40);
        let bank = dsp::mel_filterbank(n_mels, n_fft, sr, 0.0, sr as f64 / 2.0).map_err(|e| e.to_string())?;
        let want_bank = naive_mel_bank(n_mels, n_fft, sr, 0.0, sr as f64 / 2.0);
        let err = rel_err(bank.as_slice().unwrap(), want_bank.as_slice().unwrap());
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("filterbank n_mels={n_mels} n_fft={n_fft}: rel err {err:e}"))?;

        let power = dsp::stft(&x, sr, n_fft, hop).map_err(|e| e.to_string())?.power();
        let got = bank.dot(&power.t());
        let naive_power = naive_stft(&x, n_fft, hop).mapv(|m| m * m);
        let mut want = Array2::<f64>::zeros(got.dim());
        for m in 0..n_mels {
            for t in 0..naive_power.nrows() {
                want[[m, t]] = (0..=n_fft / 2).map(|k| want_bank[[m, k]] * naive_power[[t, k]]).sum();
            }
        }
        let err = rel_err(got.as_slice().unwrap(), want.as_slice().unwrap());
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("mel energies n_mels={n_mels} n_fft={n_fft}: rel err {err:e}"))?;
    }
    Ok(format!("{trials} random signals, worst rel err {worst:.1e}"))
}

pub fn dct_matches_naive(trials: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.random_range(1..=256);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let n_out = rng.random_range(1..=n);
        let err = rel_err(&dsp::dct_ii(&x, n_out), &naive_dct(&x, n_out));
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("dct n={n} n_out={n_out}: rel err {err:e}"))?;
    }
    Ok(format!("{trials} random vectors, worst rel err {worst:.1e}"))
}

pub fn sine(freq: f64, sr: u32, seconds: f64) -> Signal {
    let n = (seconds * sr as f64).round() as usize;
    Signal::new((0..n).map(|i| (0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32).collect(), sr)
}

pub fn sine_peak_bin() -> Check {
    let (sr, n_fft) = (16000u32, 1024usize);
    let s = dsp::stft(&sine(440.0, sr, 1.0).samples, sr, n_fft, 512).map_err(|e| e.to_string())?;
    let expected = (440.0 * n_fft as f64 / sr as f64).round() as usize;
    for (t, row) in s.magnitudes.rows().into_iter().enumerate() {
        let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        ensure(peak == expected, || format!("frame {t}: peak bin {peak}, expected {expected}"))?;
    }
    Ok(format!("peak at bin {expected} in all {} frames", s.n_frames()))
}

/// Every pitch class of octave 4 lands on its own chroma bin.
pub fn chroma_argmax() -> Check {
    let spec = FeatureSpec::builtin("chroma", BuiltinExtractor::ChromaStats);
    for pc in 0..12 {
        let freq = 440.0 * 2f64.powf((60 + pc - 69) as f64 / 12.0);
        let seq = extract_builtin("t", "clean", &sine(freq, 16000, 3.0), &spec).map_err(|e| e.to_string())?;
        let means = seq.matrix.row(0);
        let argmax = (0..12).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
        ensure(argmax == pc as usize, || format!("{freq:.2} Hz: chroma argmax {argmax}, expected {pc}"))?;
    }
    Ok("12/12 pitch classes".into())
}

// ---- gradients ----

fn targets(rng: &mut ChaCha8Rng, batch: usize, k: usize, kind: TaskKind) -> Array2<f64> {
    let mut y = Array2::zeros((batch, k));
    for mut row in y.rows_mut() {
        match kind {
            TaskKind::Multilabel => row.mapv_inplace(|_| f64::from(rng.random_bool(0.5))),
            _ => row[rng.random_range(0..k)] = 1.0,
        }
    }
    y
}

/// Smallest |pre-activation| over the hidden layers. Finite differences are
/// only meaningful away from the ReLU kink.
fn min_hidden_preactivation(model: &ProbeModel<f64>, x: ArrayView2<f64>) -> f64 {
    let mut a = x.to_owned();
    let mut closest = f64::INFINITY;
    for layer in &model.layers[..model.layers.len() - 1] {
        let z = a.dot(&layer.w) + &layer.b;
        closest = z.iter().fold(closest, |m, v| m.min(v.abs()));
        a = z.mapv(|v| v.max(0.0));
    }
    closest
}

/// Central-difference check of every parameter; returns the max relative
/// error `|a-n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_error(model: &mut ProbeModel<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>, h: f64) -> f64 {
    let analytic = loss_and_grad(model, x, y, &[]).1.flat();
    let base = model.params_flat();
    let mut params = base.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        params[i] = base[i] + h;
        model.set_params_flat(&params);
        let up = loss(model.forward(x).view(), y, model.task_kind);
        params[i] = base[i] - h;
        model.set_params_flat(&params);
        let down = loss(model.forward(x).view(), y, model.task_kind);
        params[i] = base[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    model.set_params_flat(&base);
    worst
}

pub fn probe_gradients() -> Check {
    const H: f64 = 1e-4;
    let (d, k, batch) = (6usize, 4usize, 2usize);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for spec in default_probe_suite() {
        for kind in [TaskKind::Multiclass, TaskKind::Multilabel] {
            let mut model = build_probe::<f64>(&spec, d, k, kind, rng.random());
            // Draw inputs until no hidden unit sits within 3h of its kink; a
            // single parameter step of h moves a pre-activation by at most
            // h·max(1, |input|) ≤ 2h here.
            let x = (0..10_000)
                .map(|_| Array2::from_shape_simple_fn((batch, d), || rng.random_range(-2.0..2.0)))
                .find(|x| min_hidden_preactivation(&model, x.view()) > 3.0 * H)
                .ok_or_else(|| format!("{}: no kink-free batch found", spec.id))?;
            let y = targets(&mut rng, batch, k, kind);
            let err = gradient_error(&mut model, x.view(), y.view(), H);
            worst = worst.max(err);
            checked += model.parameter_count();
            ensure(err < 1e-4, || format!("{} / {}: max rel err {err:e}", spec.id, kind.as_str()))?;
        }
    }
    Ok(format!("5 probes x 2 task kinds, {checked} parameters, worst rel err {worst:.1e}"))
}

// ---- metrics ----

/// Expected score from scale-degree relations: the dominant is degree 5 of
/// either scale, the relative key is degree 6 of major or degree 3 of
/// natural minor.
pub fn key_relation_score(reference: Key, estimate: Key) -> f64 {
    const MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
    const MINOR: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];
    let degree = |scale: &[u8; 7], n: usize| (reference.tonic + scale[n - 1]) % 12;
    let scale = match reference.mode {
        Mode::Major => &MAJOR,
        Mode::Minor => &MINOR,
    };
    let relative = match reference.mode {
        Mode::Major => Key::new(degree(&MAJOR, 6), Mode::Minor),
        Mode::Minor => Key::new(degree(&MINOR, 3), Mode::Major),
    };
    let parallel = Key::new(reference.tonic, if reference.mode == Mode::Major { Mode::Minor } else { Mode::Major });
    if estimate == reference {
        1.0
    } else if estimate == Key::new(degree(scale, 5), reference.mode) {
        0.5
    } else if estimate == relative {
        0.3
    } else if estimate == parallel {
        0.2
    } else {
        0.0
    }
}

const NAMES: [&str; 12] = ["C", "C#", "D", "Eb", "E", "F", "F#", "G", "Ab", "A", "Bb", "B"];

/// All 24 × 24 reference/estimate pairs, parsed from spelled names.
pub fn key_table() -> Check {
    let keys: Vec<(String, Key)> = NAMES
        .iter()
        .enumerate()
        .flat_map(|(pc, n)| {
            [
                (format!("{n} major"), Key::new(pc as u8, Mode::Major)),
                (format!("{n} minor"), Key::new(pc as u8, Mode::Minor)),
            ]
        })
        .collect();
    let mut per_class = [0usize; 5];
    for (rname, rkey) in &keys {
        let r = Key::parse(rname).map_err(|e| e.to_string())?;
        ensure(r == *rkey, || format!("{rname} parsed as {r}"))?;
        let mut row_counts = [0usize; 5];
        for (ename, _) in &keys {
            let e = Key::parse(ename).map_err(|e| e.to_string())?;
            let want = key_relation_score(r, e);
            let got = key_weighted_score(r, e);
            ensure(got == want, || format!("{rname} vs {ename}: {got}, expected {want}"))?;
            let class = [1.0, 0.5, 0.3, 0.2, 0.0].iter().position(|&s| s == want).unwrap();
            row_counts[class] += 1;
        }
        ensure(row_counts == [1, 1, 1, 1, 20], || format!("{rname}: relation counts {row_counts:?}"))?;
        for (c, n) in row_counts.iter().enumerate() {
            per_class[c] += n;
        }
    }
    Ok(format!("24 references x 24 estimates; per class {per_class:?} over 5 relations x 12 tonics x 2 modes"))
}

/// Accuracy and macro-F1 from an explicitly built confusion matrix.
pub fn brute_force_scores(refs: &[usize], preds: &[usize], n_classes: usize) -> (f64, f64, Vec<Vec<usize>>) {
    let mut cm = vec![vec![0usize; n_classes]; n_classes];
    for (&r, &p) in refs.iter().zip(preds) {
        cm[r][p] += 1;
    }
    let total: usize = cm.iter().flatten().sum();
    let diag: usize = (0..n_classes).map(|c| cm[c][c]).sum();
    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let col: usize = (0..n_classes).map(|r| cm[r][c]).sum();
        let row: usize = cm[c].iter().sum();
        let p = if col == 0 { 0.0 } else { cm[c][c] as f64 / col as f64 };
        let r = if row == 0 { 0.0 } else { cm[c][c] as f64 / row as f64 };
        f1_sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    (diag as f64 / total as f64, f1_sum / n_classes as f64, cm)
}

pub fn classification_vs_brute_force(sets: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for s in 0..sets {
        let k = rng.random_range(2..=10);
        let n = rng.random_range(1..=200);
        let refs: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        // Mix in correct predictions so scores span the whole range.
        let hit_rate = rng.random_range(0.0..1.0);
        let preds: Vec<usize> =
            refs.iter().map(|&r| if rng.random_bool(hit_rate) { r } else { rng.random_range(0..k) }).collect();
        let got = classification_metrics(&refs, &preds, k).map_err(|e| e.to_string())?;
        let (acc, f1, cm) = brute_force_scores(&refs, &preds, k);
        ensure((got.accuracy - acc).abs() < 1e-12, || format!("set {s}: accuracy {} vs {acc}", got.accuracy))?;
        ensure((got.macro_f1 - f1).abs() < 1e-12, || format!("set {s}: macro-F1 {} vs {f1}", got.macro_f1))?;
        let ids: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        let labels: Vec<String> = (0..k).map(|c| format!("c{c}")).collect();
        let matrix = confusion(&refs, &preds, &ids, &labels, 3).map_err(|e| e.to_string())?;
        ensure(matrix.counts == cm, || format!("set {s}: confusion counts differ"))?;
    }
    Ok(format!("{sets} random prediction sets"))
}
