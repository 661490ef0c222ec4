//! PGD attacks, loss-change adversarial checks, the second-order loss bound,
//! certified radii and the Lipschitz and feature-norm constants they need.

mod adversarial;
mod certificate;
mod lipschitz;
mod pgd;

pub use adversarial::{
    dataset_loss_robustness, estimate_epsilon_star, is_loss_change_adversarial, LossChange,
    RobustnessCheck,
};
pub use certificate::{
    certified_radius, certified_radius_with_gradient, certify_sample, loss_increase_bound,
    Certificate,
};
pub use lipschitz::{lipschitz_estimate, min_feature_norm, FeatureNorm, LipschitzEstimate};
pub use pgd::{pgd_attack, AttackConfig, AttackNorm, AttackTrajectory, TrajectoryPoint};

use thiserror::Error;

use crate::curvature::CurvatureError;
use crate::linalg::LinalgError;
use crate::nn::NnError;

/// Features with norm below this make the certificate unavailable.
pub const MIN_FEATURE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustnessError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid attack config: {0}")]
    InvalidAttack(String),
    #[error("sample {sample} lies outside the unit box")]
    OutsideBox { sample: usize },
    #[error("invalid certificate input: {0}")]
    InvalidCertificate(String),
    #[error("minimum feature norm {r} is below {MIN_FEATURE_NORM}; no certificate")]
    FeatureNormTooSmall { r: f64 },
    #[error("empty dataset")]
    EmptyData,
}
