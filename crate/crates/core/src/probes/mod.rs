//! Downstream probes: single-layer and multi-layer perceptrons trained from
//! scratch on frozen representations.

mod io;
mod model;
mod predict;
mod train;

pub use io::{decode_probe, encode_probe, write_probe_files, ProbeHeader};
pub use model::{build_probe, grad, loss, loss_and_grad, Gradients, Layer, ProbeModel, Scalar};
pub use predict::{predict, training_rows};
pub use train::{train, EpochRecord, Standardizer, TrainedProbe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe spec {id}: {reason}")]
    InvalidSpec { id: String, reason: String },
    #[error("invalid optimizer settings: {0}")]
    InvalidOptimizer(String),
    #[error("non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("feature dimension {found} does not match probe input {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("corrupt probe file: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveVariant {
    /// hidden `[ceil(d/2)]`
    Half,
    /// hidden `[min(d, 1024), ceil(d/2)]`
    FullHalf,
}

impl AdaptiveVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AdaptiveVariant::Half => "half",
            AdaptiveVariant::FullHalf => "full_half",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Slp,
    Mlp { hidden: Vec<usize> },
    MlpAdaptive { variant: AdaptiveVariant },
}

impl Architecture {
    /// Hidden layer widths for an input of dimension `d`.
    pub fn hidden_sizes(&self, d: usize) -> Vec<usize> {
        match self {
            Architecture::Slp => vec![],
            Architecture::Mlp { hidden } => hidden.clone(),
            Architecture::MlpAdaptive { variant: AdaptiveVariant::Half } => vec![d.div_ceil(2)],
            Architecture::MlpAdaptive { variant: AdaptiveVariant::FullHalf } => vec![d.min(1024), d.div_ceil(2)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub id: String,
    pub architecture: Architecture,
    #[serde(default)]
    pub dropout: f64,
}

impl ProbeSpec {
    pub fn new(id: impl Into<String>, architecture: Architecture) -> Self {
        Self { id: id.into(), architecture, dropout: 0.0 }
    }

    pub fn check(&self) -> Result<(), ProbeError> {
        let bad = |reason: &str| Err(ProbeError::InvalidSpec { id: self.id.clone(), reason: reason.to_string() });
        if let Architecture::Mlp { hidden } = &self.architecture {
            if hidden.is_empty() {
                return bad("mlp needs at least one hidden layer");
            }
            if hidden.contains(&0) {
                return bad("hidden sizes must be positive");
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }

    /// Trainable parameter count for the given input and output sizes.
    pub fn parameter_count(&self, input_dim: usize, output_dim: usize) -> usize {
        let mut sizes = vec![input_dim];
        sizes.extend(self.architecture.hidden_sizes(input_dim));
        sizes.push(output_dim);
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// SLP, two fixed-size MLPs and both adaptive MLPs.
pub fn default_probe_suite() -> Vec<ProbeSpec> {
    vec![
        ProbeSpec::new("slp", Architecture::Slp),
        ProbeSpec::new("mlp_128", Architecture::Mlp { hidden: vec![128] }),
        ProbeSpec::new("mlp_256_128", Architecture::Mlp { hidden: vec![256, 128] }),
        ProbeSpec::new("mlp_half", Architecture::MlpAdaptive { variant: AdaptiveVariant::Half }),
        ProbeSpec::new("mlp_full_half", Architecture::MlpAdaptive { variant: AdaptiveVariant::FullHalf }),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self { algorithm: Algorithm::Adam, lr: 1e-3, weight_decay: 1e-5, batch_size: 32, max_epochs: 200, patience: 20 }
    }
}

impl OptimizerSpec {
    pub fn check(&self) -> Result<(), ProbeError> {
        let bad = |m: String| Err(ProbeError::InvalidOptimizer(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if self.patience > self.max_epochs {
            return bad(format!("patience ({}) exceeds max_epochs ({})", self.patience, self.max_epochs));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn slp_parameter_count() {
        assert_eq!(ProbeSpec::new("s", Architecture::Slp).parameter_count(26, 12), 324);
    }

    #[test]
    fn adaptive_sizes() {
        let half = Architecture::MlpAdaptive { variant: AdaptiveVariant::Half };
        assert_eq!(half.hidden_sizes(80), vec![40]);
        assert_eq!(half.hidden_sizes(25), vec![13]);
        let full = Architecture::MlpAdaptive { variant: AdaptiveVariant::FullHalf };
        assert_eq!(full.hidden_sizes(2048), vec![1024, 1024]);
        assert_eq!(full.hidden_sizes(26), vec![26, 13]);
    }

    #[test]
    fn spec_checks() {
        assert!(ProbeSpec::new("m", Architecture::Mlp { hidden: vec![] }).check().is_err());
        let mut p = ProbeSpec::new("s", Architecture::Slp);
        p.dropout = 1.0;
        assert!(p.check().is_err());
        let opt = OptimizerSpec { patience: 300, ..OptimizerSpec::default() };
        assert!(opt.check().is_err());
        assert!(OptimizerSpec::default().check().is_ok());
    }

    fn arch() -> impl Strategy<Value = Architecture> {
        prop_oneof![
            Just(Architecture::Slp),
            prop::collection::vec(1usize..20, 1..4).prop_map(|hidden| Architecture::Mlp { hidden }),
            Just(Architecture::MlpAdaptive { variant: AdaptiveVariant::Half }),
            Just(Architecture::MlpAdaptive { variant: AdaptiveVariant::FullHalf }),
        ]
    }

    proptest! {
        #[test]
        fn parameter_count_matches_construction(a in arch(), d in 1usize..40, out in 1usize..10, seed in any::<u64>()) {
            let spec = ProbeSpec::new("p", a);
            let model = build_probe::<f32>(&spec, d, out, crate::dataio::TaskKind::Multiclass, seed);
            prop_assert_eq!(model.parameter_count(), spec.parameter_count(d, out));
        }
    }
}
