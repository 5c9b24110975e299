use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Aggregate window features, then predict once per track.
    Representation,
    /// Predict per window, then average the probabilities.
    Prediction,
}

impl AggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Representation => "representation",
            AggregationMode::Prediction => "prediction",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationOp {
    Mean,
    MeanStdConcat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionOp {
    MeanProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationSpec {
    pub mode: AggregationMode,
    pub representation_op: RepresentationOp,
    pub prediction_op: PredictionOp,
    /// Z-score probe inputs with statistics from the training split.
    pub standardize: bool,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self {
            mode: AggregationMode::Representation,
            representation_op: RepresentationOp::Mean,
            prediction_op: PredictionOp::MeanProb,
            standardize: true,
        }
    }
}

/// Column means (`Mean`) or means followed by population standard deviations
/// (`MeanStdConcat`). Accumulates in `f64`.
pub fn aggregate_representation(matrix: &Array2<f32>, op: RepresentationOp) -> Array1<f32> {
    let rows: Vec<Vec<f64>> = matrix.rows().into_iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    if rows.is_empty() {
        return Array1::zeros(match op {
            RepresentationOp::Mean => matrix.ncols(),
            RepresentationOp::MeanStdConcat => 2 * matrix.ncols(),
        });
    }
    let stats = super::builtin::mean_std(&rows);
    let keep = match op {
        RepresentationOp::Mean => matrix.ncols(),
        RepresentationOp::MeanStdConcat => stats.len(),
    };
    stats.into_iter().take(keep).map(|v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mean_of_two_rows() {
        let m = array![[0.0f32, 2.0], [2.0, 0.0]];
        assert_eq!(aggregate_representation(&m, RepresentationOp::Mean).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn single_row_has_zero_std() {
        let m = array![[0.5f32, -1.0, 3.0]];
        assert_eq!(
            aggregate_representation(&m, RepresentationOp::MeanStdConcat).to_vec(),
            vec![0.5, -1.0, 3.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn population_std() {
        let m = array![[1.0f32], [3.0]];
        assert_eq!(aggregate_representation(&m, RepresentationOp::MeanStdConcat).to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn permutation_invariant() {
        let m = array![[1.0f32, 5.0], [-2.0, 0.25], [7.0, 1.5]];
        let p = array![[7.0f32, 1.5], [1.0, 5.0], [-2.0, 0.25]];
        for op in [RepresentationOp::Mean, RepresentationOp::MeanStdConcat] {
            assert_eq!(aggregate_representation(&m, op), aggregate_representation(&p, op));
        }
    }
}
