use crate::robustness::AttackTrajectory;

use super::AnalysisError;

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_BINS: usize = 30;

/// Min-max rescaling onto `[0, 1]`; a constant series maps to zeros.
pub fn normalized_loss(series: &[f64]) -> Vec<f64> {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| (v - lo) / span).collect()
}

/// First `t ≥ 1` with `ℓ_t − ℓ_0 > τ·(max ℓ − ℓ_0)`, or `None` if the series
/// never rises above its start.
pub fn take_off(series: &[f64], tau: f64) -> Option<usize> {
    let first = *series.first()?;
    let rise = series.iter().copied().fold(f64::NEG_INFINITY, f64::max) - first;
    if rise.is_nan() || rise <= 0.0 {
        return None;
    }
    series
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, v)| **v - first > tau * rise)
        .map(|(t, _)| t)
}

/// The series peaks strictly inside and ends below half its peak.
pub fn peak_then_decay(kappa: &[f64]) -> bool {
    let (Some(first), Some(last)) = (kappa.first(), kappa.last()) else {
        return false;
    };
    let peak = kappa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    peak > first.max(*last) && *last < peak / 2.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStats {
    pub sample_id: usize,
    /// `ℓ(x_T) − ℓ(x_0)`.
    pub loss_increase: f64,
    pub kappa_spectral: Vec<f64>,
    pub kappa_frobenius: Vec<f64>,
    pub normalized_loss: Vec<f64>,
    pub flipped: bool,
    pub peak_then_decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub trajectories: Vec<TrajectoryStats>,
    pub flipped: usize,
    /// Share of flipped trajectories with at least `min_steps` steps whose
    /// spectral sharpness peaks then decays; `None` without such samples.
    pub peak_then_decay_fraction: Option<f64>,
    pub eligible: usize,
}

pub fn trajectory_metrics(
    trajectories: &[AttackTrajectory],
    min_steps: usize,
) -> TrajectorySummary {
    let stats: Vec<TrajectoryStats> = trajectories
        .iter()
        .map(|t| {
            let ks = t.kappas_spectral();
            TrajectoryStats {
                sample_id: t.sample_id,
                loss_increase: t.loss_increase(),
                peak_then_decay: peak_then_decay(&ks),
                kappa_spectral: ks,
                kappa_frobenius: t.points.iter().map(|p| p.kappa_frobenius).collect(),
                normalized_loss: normalized_loss(&t.losses()),
                flipped: t.flipped(),
            }
        })
        .collect();
    let eligible: Vec<&TrajectoryStats> = stats
        .iter()
        .zip(trajectories)
        .filter(|(s, t)| s.flipped && t.points.len() > min_steps)
        .map(|(s, _)| s)
        .collect();
    let hits = eligible.iter().filter(|s| s.peak_then_decay).count();
    TrajectorySummary {
        flipped: stats.iter().filter(|s| s.flipped).count(),
        peak_then_decay_fraction: (!eligible.is_empty())
            .then(|| hits as f64 / eligible.len() as f64),
        eligible: eligible.len(),
        trajectories: stats,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed. A
/// constant sample gets a unit-width range centred on its value.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>, AnalysisError> {
    if bins == 0 {
        return Err(AnalysisError::InvalidArgument(
            "histogram needs bins > 0".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidArgument(
            "non-finite histogram value".into(),
        ));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            left: lo + b as f64 * width,
            right: if b + 1 == bins {
                hi
            } else {
                lo + (b + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for v in values {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        out[b].count += 1;
    }
    Ok(out)
}
