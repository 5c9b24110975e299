use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::TrainedProbe;
use crate::features::{aggregate_representation, AggregationMode, AggregationSpec};

/// Probe inputs and targets for a set of tracks. Representation mode yields
/// one aggregated row per track; prediction mode yields one row per window,
/// each carrying its track's target.
pub fn training_rows(
    tracks: &[&Array2<f32>],
    targets: ArrayView2<f32>,
    spec: &AggregationSpec,
) -> (Array2<f32>, Array2<f32>) {
    let mut xs: Vec<Array1<f32>> = Vec::new();
    let mut ys: Vec<Array1<f32>> = Vec::new();
    for (m, y) in tracks.iter().zip(targets.rows()) {
        match spec.mode {
            AggregationMode::Representation => {
                xs.push(aggregate_representation(m, spec.representation_op));
                ys.push(y.to_owned());
            }
            AggregationMode::Prediction => {
                for row in m.rows() {
                    xs.push(row.to_owned());
                    ys.push(y.to_owned());
                }
            }
        }
    }
    (stack(&xs, 0), stack(&ys, targets.ncols()))
}

fn stack(rows: &[Array1<f32>], empty_width: usize) -> Array2<f32> {
    if rows.is_empty() {
        return Array2::zeros((0, empty_width));
    }
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::stack(Axis(0), &views).expect("rows of equal width")
}

/// Per-track output probabilities for a `n_windows × d` feature matrix.
pub fn predict(trained: &TrainedProbe, windows: &Array2<f32>, spec: &AggregationSpec) -> Array1<f32> {
    match spec.mode {
        AggregationMode::Representation => {
            let v = aggregate_representation(windows, spec.representation_op).insert_axis(Axis(0));
            let x = trained.prepare(v.view());
            trained.model.probabilities(x.view()).row(0).to_owned()
        }
        AggregationMode::Prediction => {
            let x = trained.prepare(windows.view());
            let p = trained.model.probabilities(x.view());
            p.mean_axis(Axis(0)).expect("at least one window")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::TaskKind;
    use crate::features::RepresentationOp;
    use crate::probes::{build_probe, Architecture, ProbeSpec};
    use ndarray::array;

    fn trained(d: usize, out: usize) -> TrainedProbe {
        TrainedProbe {
            model: build_probe(&ProbeSpec::new("s", Architecture::Slp), d, out, TaskKind::Multiclass, 2),
            standardizer: None,
            history: vec![],
            epochs_run: 0,
            best_epoch: 0,
            stopped_early: false,
            seed: 2,
        }
    }

    fn spec(mode: AggregationMode) -> AggregationSpec {
        AggregationSpec { mode, ..AggregationSpec::default() }
    }

    #[test]
    fn single_window_modes_agree() {
        let t = trained(3, 4);
        let w = array![[0.3f32, -1.0, 2.0]];
        let a = predict(&t, &w, &spec(AggregationMode::Representation));
        let b = predict(&t, &w, &spec(AggregationMode::Prediction));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn prediction_mode_averages_probabilities() {
        // Identity-like weights with huge scale push each window to a one-hot.
        let mut t = trained(2, 2);
        t.model.layers[0].w = array![[100.0f32, 0.0], [0.0, 100.0]];
        let w = array![[1.0f32, 0.0], [0.0, 1.0]];
        let p = predict(&t, &w, &spec(AggregationMode::Prediction));
        assert!((p[0] - 0.5).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6, "{p}");
    }

    #[test]
    fn representation_mode_ignores_window_order() {
        let w = array![[0.1f32, 0.2, 0.3], [1.0, -2.0, 0.5], [0.0, 0.7, -0.1]];
        let mut rev = w.clone();
        rev.invert_axis(Axis(0));
        let s = AggregationSpec {
            representation_op: RepresentationOp::MeanStdConcat,
            ..spec(AggregationMode::Representation)
        };
        let t6 = trained(6, 3);
        let a = predict(&t6, &w, &s);
        let b = predict(&t6, &rev, &s);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn rows_per_mode() {
        let a = array![[1.0f32, 2.0], [3.0, 4.0]];
        let b = array![[5.0f32, 6.0]];
        let y = array![[1.0f32, 0.0], [0.0, 1.0]];
        let (x, t) = training_rows(&[&a, &b], y.view(), &spec(AggregationMode::Representation));
        assert_eq!(x, array![[2.0, 3.0], [5.0, 6.0]]);
        assert_eq!(t, y);
        let (x, t) = training_rows(&[&a, &b], y.view(), &spec(AggregationMode::Prediction));
        assert_eq!(x.nrows(), 3);
        assert_eq!(t, array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    }
}
