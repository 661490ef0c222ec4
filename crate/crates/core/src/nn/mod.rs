//! Feed-forward ReLU classifiers with an explicit penultimate split
//! `f(x) = softmax(w φ(x))`, minibatch SGD and the classifier scaling
//! transform.

mod network;
mod train;

pub use network::{argmax, Activation, ForwardCache, Layer, LossGrad, MlpNetwork, SoftmaxOutput};
pub use train::{train_sgd, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::linalg::norm2;
use crate::loss::LossError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("network has no layers")]
    EmptyNetwork,
    #[error("layer {layer}: {detail}")]
    Dimension { layer: usize, detail: String },
    #[error("input has {got} features, network expects {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("non-finite activations in layer {layer}")]
    NonFinite { layer: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("scale factor must be positive, got {0}")]
    InvalidScale(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("probability vector is not on the simplex (sum {sum})")]
    NotSimplex { sum: f64 },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Labelled inputs; sample ids are the row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl SampleBatch {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, NnError> {
        if inputs.len() != labels.len() {
            return Err(NnError::InvalidBatch(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            for (i, x) in inputs.iter().enumerate() {
                if x.len() != d {
                    return Err(NnError::InvalidBatch(format!(
                        "sample {i} has {} features, expected {d}",
                        x.len()
                    )));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::InvalidBatch(format!("sample {i} is not finite")));
                }
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.inputs[i], self.labels[i])
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> SampleBatch {
        SampleBatch {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.inputs.iter().map(|x| norm2(x)).fold(0.0, f64::max)
    }

    /// Divides every input by the largest norm so that `max ‖x‖₂ = 1`.
    /// Returns the divisor (1 when all inputs are zero).
    pub fn normalize_unit_ball(&mut self) -> f64 {
        let m = self.max_norm();
        if m > 0.0 {
            for x in &mut self.inputs {
                x.iter_mut().for_each(|v| *v /= m);
            }
            m
        } else {
            1.0
        }
    }

    /// Labels must lie in `[0, classes)`.
    pub fn check_labels(&self, classes: usize) -> Result<(), NnError> {
        match self.labels.iter().find(|&&y| y >= classes) {
            Some(&label) => Err(NnError::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }
}
