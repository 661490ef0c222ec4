//! Second- and third-order objects of the softmax classifier: the closed-form
//! penultimate Hessian, relative sharpness, layerwise Hessian backpropagation,
//! Hutchinson trace estimation and the confidence-collapse curve.

mod backprop;
mod collapse;
mod hessian;
mod hutchinson;

pub use backprop::{
    hessian_backprop, hessian_backprop_with, layer_trace_estimates, BackpropResult, LayerCurvature,
    LayerTrace, DEFAULT_KINK_MARGIN,
};
pub use collapse::{collapse_curve, CollapseCurve, CollapsePoint, CollapseSample};
pub use hessian::{
    logit_hessian, penultimate_hessian, relative_sharpness, sample_sharpness,
    third_derivative_bound, third_derivative_tensor, ClassifierNorms, SharpnessRecord,
    SharpnessReport, SharpnessVariant, ThirdDerivative, THIRD_DERIVATIVE_CAP,
};
pub use hutchinson::hutchinson_trace;

pub use crate::loss::{loss_curvature_terms, CurvatureTerms};

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::loss::LossError;
use crate::nn::NnError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurvatureError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("operator returned a non-finite value on probe {probe}")]
    NonFiniteProbe { probe: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
