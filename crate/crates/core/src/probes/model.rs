use ndarray::{Array1, Array2, ArrayView2, Axis, NdFloat, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ProbeSpec;
use crate::dataio::TaskKind;

/// Floating-point element type for probe arithmetic. Training runs in `f32`;
/// gradient checks use `f64`.
pub trait Scalar: NdFloat + Default {
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `fan_in × fan_out`
    pub w: Array2<T>,
    pub b: Array1<T>,
}

/// Affine layers with ReLU between them and none after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel<T> {
    pub layers: Vec<Layer<T>>,
    pub task_kind: TaskKind,
}

pub fn build_probe<T: Scalar>(
    spec: &ProbeSpec,
    input_dim: usize,
    output_dim: usize,
    task_kind: TaskKind,
    seed: u64,
) -> ProbeModel<T> {
    let mut sizes = vec![input_dim];
    sizes.extend(spec.architecture.hidden_sizes(input_dim));
    sizes.push(output_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-limit..limit)));
            Layer { w: weights, b: Array1::zeros(fan_out) }
        })
        .collect();
    ProbeModel { layers, task_kind }
}

impl<T: Scalar> ProbeModel<T> {
    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Logits for a `B × d` batch.
    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut a = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            a = a.dot(&layer.w) + &layer.b;
            if i + 1 < self.layers.len() {
                a.mapv_inplace(relu);
            }
        }
        a
    }

    /// Class probabilities (softmax) or label probabilities (sigmoid).
    pub fn probabilities(&self, x: ArrayView2<T>) -> Array2<T> {
        output_probabilities(self.forward(x), self.task_kind)
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// All parameters, layer by layer (weights row-major, then biases).
    pub fn params_flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()).copied()).collect()
    }

    pub fn set_params_flat(&mut self, values: &[T]) {
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = it.next().expect("parameter vector too short");
            }
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    pub fn cast<U: Scalar>(&self) -> ProbeModel<U> {
        ProbeModel {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { w: l.w.mapv(|v| U::of(v.to_f64())), b: l.b.mapv(|v| U::of(v.to_f64())) })
                .collect(),
            task_kind: self.task_kind,
        }
    }
}

fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub(crate) fn output_probabilities<T: Scalar>(mut logits: Array2<T>, kind: TaskKind) -> Array2<T> {
    match kind {
        TaskKind::Multilabel => logits.mapv_inplace(sigmoid),
        TaskKind::Multiclass | TaskKind::Key => {
            for mut row in logits.rows_mut() {
                let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - m).exp());
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
        }
    }
    logits
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean loss over the batch. `targets` is one-hot for single-label tasks and
/// a 0/1 indicator matrix for multilabel tasks.
pub fn loss<T: Scalar>(logits: ArrayView2<T>, targets: ArrayView2<T>, kind: TaskKind) -> T {
    let b = T::of(logits.nrows() as f64);
    match kind {
        TaskKind::Multiclass | TaskKind::Key => {
            let mut total = T::zero();
            for (z, y) in logits.rows().into_iter().zip(targets.rows()) {
                let m = z.fold(T::neg_infinity(), |a, &v| a.max(v));
                let lse = m + z.fold(T::zero(), |acc, &v| acc + (v - m).exp()).ln();
                total += Zip::from(&z).and(&y).fold(T::zero(), |acc, &zi, &yi| acc + yi * (lse - zi));
            }
            total / b
        }
        TaskKind::Multilabel => {
            // max(z, 0) - z y + ln(1 + e^{-|z|})
            let total = Zip::from(&logits)
                .and(&targets)
                .fold(T::zero(), |acc, &z, &y| acc + z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p());
            total / (b * T::of(logits.ncols() as f64))
        }
    }
}

/// Gradient of the loss with respect to the logits.
fn loss_grad<T: Scalar>(logits: &Array2<T>, targets: ArrayView2<T>, kind: TaskKind) -> Array2<T> {
    let n = match kind {
        TaskKind::Multilabel => logits.len(),
        _ => logits.nrows(),
    };
    let probs = output_probabilities(logits.clone(), kind);
    (probs - targets) / T::of(n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// `(dW, db)` per layer, same shapes as the parameters.
    pub layers: Vec<(Array2<T>, Array1<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flat(&self) -> Vec<T> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()).copied()).collect()
    }
}

/// Loss and exact gradients. `masks` holds one inverted-dropout mask per
/// hidden layer (already scaled by `1/(1-p)`), or is empty for no dropout.
pub fn loss_and_grad<T: Scalar>(
    model: &ProbeModel<T>,
    x: ArrayView2<T>,
    targets: ArrayView2<T>,
    masks: &[Array2<T>],
) -> (T, Gradients<T>) {
    let n_layers = model.layers.len();
    // activations[i] is the input to layer i; pre[i] its pre-activation.
    let mut activations: Vec<Array2<T>> = vec![x.to_owned()];
    let mut pre: Vec<Array2<T>> = Vec::with_capacity(n_layers);
    for (i, layer) in model.layers.iter().enumerate() {
        let z = activations[i].dot(&layer.w) + &layer.b;
        if i + 1 < n_layers {
            let mut a = z.mapv(relu);
            if let Some(m) = masks.get(i) {
                a *= m;
            }
            activations.push(a);
        }
        pre.push(z);
    }
    let logits = pre.pop().unwrap();
    let value = loss(logits.view(), targets, model.task_kind);

    let mut dz = loss_grad(&logits, targets, model.task_kind);
    let mut grads = Vec::with_capacity(n_layers);
    for i in (0..n_layers).rev() {
        let dw = activations[i].t().dot(&dz);
        let db = dz.sum_axis(Axis(0));
        if i > 0 {
            let mut da = dz.dot(&model.layers[i].w.t());
            if let Some(m) = masks.get(i - 1) {
                da *= m;
            }
            Zip::from(&mut da).and(&pre[i - 1]).for_each(|d, &z| {
                if z <= T::zero() {
                    *d = T::zero();
                }
            });
            dz = da;
        }
        grads.push((dw, db));
    }
    grads.reverse();
    (value, Gradients { layers: grads })
}

/// Gradients without dropout.
pub fn grad<T: Scalar>(model: &ProbeModel<T>, x: ArrayView2<T>, targets: ArrayView2<T>) -> Gradients<T> {
    loss_and_grad(model, x, targets, &[]).1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::Architecture;
    use ndarray::array;

    fn slp(d: usize, out: usize, kind: TaskKind) -> ProbeModel<f64> {
        build_probe(&ProbeSpec::new("s", Architecture::Slp), d, out, kind, 3)
    }

    #[test]
    fn uniform_two_class_ce_is_ln2() {
        let l = loss(array![[0.0, 0.0]].view(), array![[1.0, 0.0]].view(), TaskKind::Multiclass);
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_logit_bce_is_ln2() {
        let l = loss(array![[0.0, 0.0, 0.0]].view(), array![[1.0, 0.0, 1.0]].view(), TaskKind::Multilabel);
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_loss_is_tiny() {
        let ce = loss(array![[50.0, -50.0]].view(), array![[1.0, 0.0]].view(), TaskKind::Multiclass);
        let bce = loss(array![[50.0, -50.0]].view(), array![[1.0, 0.0]].view(), TaskKind::Multilabel);
        assert!(ce < 1e-8 && bce < 1e-8, "{ce} {bce}");
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let spec = ProbeSpec::new("m", Architecture::Mlp { hidden: vec![16] });
        let a: ProbeModel<f32> = build_probe(&spec, 10, 4, TaskKind::Multiclass, 9);
        let b: ProbeModel<f32> = build_probe(&spec, 10, 4, TaskKind::Multiclass, 9);
        let c: ProbeModel<f32> = build_probe(&spec, 10, 4, TaskKind::Multiclass, 10);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f32 / 26.0).sqrt();
        assert!(a.layers[0].w.iter().all(|v| v.abs() <= limit));
        assert!(a.layers.iter().all(|l| l.b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn zero_input_slp_gradient_closed_form() {
        let mut m = slp(3, 3, TaskKind::Multiclass);
        m.layers[0].b = array![0.5, -1.0, 2.0];
        let x = Array2::zeros((2, 3));
        let y = array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        let g = grad(&m, x.view(), y.view());
        assert!(g.layers[0].0.iter().all(|&v| v == 0.0));
        let p = output_probabilities(array![[0.5, -1.0, 2.0]], TaskKind::Multiclass);
        let mean_onehot = array![0.5, 0.0, 0.5];
        for k in 0..3 {
            assert!((g.layers[0].1[k] - (p[[0, k]] - mean_onehot[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let spec = ProbeSpec::new("m", Architecture::Mlp { hidden: vec![4] });
        let m: ProbeModel<f64> = build_probe(&spec, 3, 2, TaskKind::Multiclass, 1);
        let x = array![[0.1, -0.4, 0.9], [1.0, 0.3, -0.2]];
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let y2 = ndarray::concatenate(Axis(0), &[y.view(), y.view()]).unwrap();
        let g1 = grad(&m, x.view(), y.view()).flat();
        let g2 = grad(&m, x2.view(), y2.view()).flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn flat_params_roundtrip() {
        let spec = ProbeSpec::new("m", Architecture::Mlp { hidden: vec![5, 3] });
        let mut m: ProbeModel<f64> = build_probe(&spec, 4, 2, TaskKind::Multilabel, 0);
        let p = m.params_flat();
        assert_eq!(p.len(), m.parameter_count());
        let doubled: Vec<f64> = p.iter().map(|v| v * 2.0).collect();
        m.set_params_flat(&doubled);
        assert_eq!(m.params_flat(), doubled);
    }

    #[test]
    fn probabilities_are_normalized() {
        let m = slp(4, 5, TaskKind::Multiclass);
        let x = array![[1.0, 2.0, -3.0, 0.5]];
        let p = m.probabilities(x.view());
        assert!((p.sum() - 1.0).abs() < 1e-12);
        let ml = slp(4, 5, TaskKind::Multilabel).probabilities(x.view());
        assert!(ml.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
