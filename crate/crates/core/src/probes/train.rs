use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{loss, loss_and_grad, Gradients, ProbeModel};
use super::{OptimizerSpec, ProbeError};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Per-dimension z-scoring fitted on training rows. Constant dimensions keep
/// unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f32>,
    pub std: Array1<f32>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f32>) -> Self {
        let n = x.nrows() as f64;
        let d = x.ncols();
        let mut mean = vec![0.0f64; d];
        let mut sq = vec![0.0f64; d];
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                mean[j] += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        for row in x.rows() {
            for (j, &v) in row.iter().enumerate() {
                let c = v as f64 - mean[j];
                sq[j] += c * c;
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd as f32
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean: mean.iter().map(|&m| m as f32).collect(), std }
    }

    pub fn apply(&self, x: ArrayView2<f32>) -> Array2<f32> {
        (&x - &self.mean) / &self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    /// Weights from the epoch with the lowest validation loss.
    pub model: ProbeModel<f32>,
    pub standardizer: Option<Standardizer>,
    pub history: Vec<EpochRecord>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub seed: u64,
}

impl TrainedProbe {
    /// Applies the fitted standardization, if any.
    pub fn prepare(&self, x: ArrayView2<f32>) -> Array2<f32> {
        match &self.standardizer {
            Some(s) => s.apply(x),
            None => x.to_owned(),
        }
    }
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One step with decoupled weight decay (applied to every parameter).
    fn step(&mut self, model: &mut ProbeModel<f32>, grads: &Gradients<f32>, lr: f64, wd: f64) {
        self.t += 1;
        let (b1, b2) = (BETA1 as f32, BETA2 as f32);
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (EPSILON * c2.sqrt()) as f32;
        let decay = (lr * wd) as f32;
        let mut k = 0;
        for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads.layers) {
            let params = layer.w.iter_mut().chain(layer.b.iter_mut());
            let gs = gw.iter().chain(gb.iter());
            for (p, &g) in params.zip(gs) {
                let m = &mut self.m[k];
                let v = &mut self.v[k];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps) + decay * *p;
                k += 1;
            }
        }
    }
}

fn dropout_masks(model: &ProbeModel<f32>, batch: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<Array2<f32>> {
    if p == 0.0 {
        return vec![];
    }
    let keep = 1.0 - p;
    let scale = (1.0 / keep) as f32;
    model.layers[..model.layers.len() - 1]
        .iter()
        .map(|l| {
            Array2::from_shape_simple_fn((batch, l.w.ncols()), || if rng.random::<f64>() < keep { scale } else { 0.0 })
        })
        .collect()
}

/// Mini-batch Adam with per-epoch seeded shuffling and early stopping on
/// validation loss. Rows of `train_x`/`val_x` must already be standardized
/// if `standardizer` is given; it is stored alongside the result.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut model: ProbeModel<f32>,
    train_x: ArrayView2<f32>,
    train_y: ArrayView2<f32>,
    val_x: ArrayView2<f32>,
    val_y: ArrayView2<f32>,
    opt: &OptimizerSpec,
    dropout: f64,
    standardizer: Option<Standardizer>,
    seed: u64,
) -> Result<TrainedProbe, ProbeError> {
    opt.check()?;
    if train_x.nrows() == 0 {
        return Err(ProbeError::EmptySet("training"));
    }
    if val_x.nrows() == 0 {
        return Err(ProbeError::EmptySet("validation"));
    }
    for x in [train_x, val_x] {
        if x.ncols() != model.input_dim() {
            return Err(ProbeError::DimensionMismatch { expected: model.input_dim(), found: x.ncols() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(model.parameter_count());
    let mut order: Vec<usize> = (0..train_x.nrows()).collect();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut history = Vec::new();
    let mut wait = 0;
    let mut stopped_early = false;

    for epoch in 1..=opt.max_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(opt.batch_size) {
            let xb = train_x.select(Axis(0), chunk);
            let yb = train_y.select(Axis(0), chunk);
            let masks = dropout_masks(&model, chunk.len(), dropout, &mut rng);
            let (l, g) = loss_and_grad(&model, xb.view(), yb.view(), &masks);
            if !l.is_finite() {
                return Err(ProbeError::Diverged { epoch });
            }
            weighted += l as f64 * chunk.len() as f64;
            adam.step(&mut model, &g, opt.lr, opt.weight_decay);
        }
        let val_loss = loss(model.forward(val_x).view(), val_y, model.task_kind) as f64;
        if !val_loss.is_finite() || !model.all_finite() {
            return Err(ProbeError::Diverged { epoch });
        }
        history.push(EpochRecord { epoch, train_loss: weighted / train_x.nrows() as f64, val_loss });
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait > opt.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainedProbe {
        model: best.1,
        standardizer,
        epochs_run: history.len(),
        history,
        best_epoch: best.2,
        stopped_early,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::TaskKind;
    use crate::probes::{build_probe, Architecture, ProbeSpec};
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, seed: u64) -> (Array2<f32>, Array2<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((n, 2));
        let mut y = Array2::zeros((n, 2));
        for i in 0..n {
            let c = i % 2;
            let centre = if c == 0 { -2.0 } else { 2.0 };
            x[[i, 0]] = centre + noise.sample(&mut rng) as f32;
            x[[i, 1]] = centre + noise.sample(&mut rng) as f32;
            y[[i, c]] = 1.0;
        }
        (x, y)
    }

    fn accuracy(m: &ProbeModel<f32>, x: &Array2<f32>, y: &Array2<f32>) -> f64 {
        let p = m.forward(x.view());
        let hits = p.rows().into_iter().zip(y.rows()).filter(|(p, y)| (p[1] > p[0]) == (y[1] > 0.5)).count();
        hits as f64 / x.nrows() as f64
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(200, 1);
        let (vx, vy) = blobs(40, 2);
        let model = build_probe(&ProbeSpec::new("s", Architecture::Slp), 2, 2, TaskKind::Multiclass, 0);
        let t =
            train(model, x.view(), y.view(), vx.view(), vy.view(), &OptimizerSpec::default(), 0.0, None, 0).unwrap();
        assert!(accuracy(&t.model, &x, &y) >= 0.99);
    }

    #[test]
    fn identical_seed_is_bitwise_reproducible() {
        let (x, y) = blobs(64, 3);
        let spec = ProbeSpec { dropout: 0.2, ..ProbeSpec::new("m", Architecture::Mlp { hidden: vec![8] }) };
        let opt = OptimizerSpec { max_epochs: 15, patience: 5, ..OptimizerSpec::default() };
        let run = || {
            let m = build_probe(&spec, 2, 2, TaskKind::Multiclass, 4);
            train(m, x.view(), y.view(), x.view(), y.view(), &opt, spec.dropout, None, 4).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_patience_stops_after_first_non_improvement() {
        let (x, y) = blobs(32, 5);
        // A constant validation target that training cannot improve for long.
        let (vx, vy) = blobs(32, 6);
        let opt = OptimizerSpec { patience: 0, lr: 0.5, ..OptimizerSpec::default() };
        let m = build_probe(&ProbeSpec::new("s", Architecture::Slp), 2, 2, TaskKind::Multiclass, 0);
        let t = train(m, x.view(), y.view(), vx.view(), vy.view(), &opt, 0.0, None, 0).unwrap();
        assert!(t.stopped_early);
        let h = &t.history;
        let last = h.len() - 1;
        assert!(h[last].val_loss >= h[..last].iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min));
        assert!(h[..last].windows(2).all(|w| w[1].val_loss < w[0].val_loss));
        assert_eq!(t.best_epoch, last);
    }

    #[test]
    fn divergence_names_the_epoch() {
        let (mut x, y) = blobs(16, 7);
        x[[0, 0]] = f32::INFINITY;
        let m = build_probe(&ProbeSpec::new("s", Architecture::Slp), 2, 2, TaskKind::Multiclass, 0);
        let err =
            train(m, x.view(), y.view(), x.view(), y.view(), &OptimizerSpec::default(), 0.0, None, 0).unwrap_err();
        assert!(matches!(err, ProbeError::Diverged { epoch: 1 }), "{err}");
    }

    #[test]
    fn full_batch_convex_loss_is_non_increasing() {
        let (x, y) = blobs(64, 8);
        let opt = OptimizerSpec {
            batch_size: 64,
            max_epochs: 60,
            patience: 60,
            lr: 1e-3,
            weight_decay: 0.0,
            ..OptimizerSpec::default()
        };
        let m = build_probe(&ProbeSpec::new("s", Architecture::Slp), 2, 2, TaskKind::Multiclass, 0);
        let t = train(m, x.view(), y.view(), x.view(), y.view(), &opt, 0.0, None, 0).unwrap();
        for w in t.history.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-12, "{:?}", w);
        }
    }

    #[test]
    fn standardizer_zscores_and_guards_constants() {
        let x = ndarray::array![[1.0f32, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view());
        let z = s.apply(x.view());
        assert_eq!(z, ndarray::array![[-1.0f32, 0.0], [1.0, 0.0]]);
    }
}
