//! Experiment statistics over attack trajectories: loss-increase histograms,
//! take-off and basin width, the sharpness peak along an attack, scaling
//! sweeps and the sharpness-threshold detector.

mod basin;
mod detector;
mod sweep;
mod trajectory;

pub use basin::{basin_report, spearman, BasinEntry, BasinReport, Spearman};
pub use detector::{fit_stump, stump_detector_cv, DetectorResult, Stump, StumpDirection};
pub use sweep::{scale_sweep, ScaleEntry, ScaleSweepResult};
pub use trajectory::{
    histogram, normalized_loss, peak_then_decay, take_off, trajectory_metrics, HistogramBin,
    TrajectoryStats, TrajectorySummary, DEFAULT_BINS, DEFAULT_TAU,
};

use thiserror::Error;

use crate::nn::NnError;
use crate::robustness::RobustnessError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("detector needs both classes in every fold: {0}")]
    SingleClass(String),
}
