use crate::robustness::AttackTrajectory;

use super::{take_off, AnalysisError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// One of the rank vectors has zero variance; `rho` is then reported as 0.
    pub degenerate: bool,
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman, AnalysisError> {
    if x.len() != y.len() || x.is_empty() {
        return Err(AnalysisError::InvalidArgument(format!(
            "spearman needs equal nonempty lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Spearman {
            rho: 0.0,
            degenerate: true,
        });
    }
    Ok(Spearman {
        rho: sxy / (sxx * syy).sqrt(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasinEntry {
    pub sample_id: usize,
    pub take_off: Option<usize>,
    pub kappa_clean: f64,
}

impl BasinEntry {
    /// Basin width is the take-off index.
    pub fn width(&self) -> Option<usize> {
        self.take_off
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinReport {
    pub entries: Vec<BasinEntry>,
    /// Samples with a defined take-off.
    pub defined: usize,
    /// Spearman correlation of clean sharpness and basin width; `None` with
    /// fewer than three defined take-offs.
    pub spearman: Option<Spearman>,
}

pub fn basin_report(
    trajectories: &[AttackTrajectory],
    kappa_clean: &[f64],
    tau: f64,
) -> Result<BasinReport, AnalysisError> {
    if trajectories.len() != kappa_clean.len() {
        return Err(AnalysisError::InvalidArgument(format!(
            "{} trajectories but {} sharpness values",
            trajectories.len(),
            kappa_clean.len()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(AnalysisError::InvalidArgument(format!(
            "tau must lie in (0, 1), got {tau}"
        )));
    }
    let entries: Vec<BasinEntry> = trajectories
        .iter()
        .zip(kappa_clean)
        .map(|(t, k)| BasinEntry {
            sample_id: t.sample_id,
            take_off: take_off(&t.losses(), tau),
            kappa_clean: *k,
        })
        .collect();
    let (ks, ws): (Vec<f64>, Vec<f64>) = entries
        .iter()
        .filter_map(|e| e.take_off.map(|w| (e.kappa_clean, w as f64)))
        .unzip();
    let spearman = if ks.len() >= 3 {
        Some(spearman(&ks, &ws)?)
    } else {
        None
    };
    Ok(BasinReport {
        defined: ks.len(),
        entries,
        spearman,
    })
}
