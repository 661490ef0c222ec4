use crate::linalg::{streams, SeededRng};

use super::AnalysisError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StumpDirection {
    /// Positive when the value exceeds the threshold.
    Above,
    /// Positive when the value is at most the threshold.
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stump {
    pub threshold: f64,
    pub direction: StumpDirection,
    pub train_accuracy: f64,
}

impl Stump {
    pub fn predict(&self, v: f64) -> bool {
        match self.direction {
            StumpDirection::Above => v > self.threshold,
            StumpDirection::Below => v <= self.threshold,
        }
    }
}

/// Best single-threshold rule on the training data. Candidate thresholds
/// are `−∞` and the midpoints between consecutive distinct sorted values;
/// ties keep the smallest threshold, `Above` first.
pub fn fit_stump(values: &[f64], labels: &[bool]) -> Result<Stump, AnalysisError> {
    if values.is_empty() || values.len() != labels.len() {
        return Err(AnalysisError::InvalidArgument(
            "stump needs matching nonempty values and labels".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let n = values.len() as f64;
    let total_pos = labels.iter().filter(|l| **l).count();
    // Counts of samples at or below the current threshold.
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let score = |pos_below: usize, neg_below: usize| {
        let neg_total = values.len() - total_pos;
        let above = (total_pos - pos_below) + neg_below;
        let below = pos_below + (neg_total - neg_below);
        (above as f64 / n, below as f64 / n)
    };
    let (a, b) = score(0, 0);
    let mut best = Stump {
        threshold: f64::NEG_INFINITY,
        direction: if b > a {
            StumpDirection::Below
        } else {
            StumpDirection::Above
        },
        train_accuracy: a.max(b),
    };
    let mut i = 0;
    while i < idx.len() {
        let v = values[idx[i]];
        while i < idx.len() && values[idx[i]] == v {
            if labels[idx[i]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        if i == idx.len() {
            break;
        }
        let t = 0.5 * (v + values[idx[i]]);
        let (a, b) = score(pos_below, neg_below);
        if a > best.train_accuracy {
            best = Stump {
                threshold: t,
                direction: StumpDirection::Above,
                train_accuracy: a,
            };
        }
        if b > best.train_accuracy {
            best = Stump {
                threshold: t,
                direction: StumpDirection::Below,
                train_accuracy: b,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorResult {
    /// Stump fitted on all data.
    pub threshold: f64,
    pub direction: StumpDirection,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub folds: usize,
    pub seed: u64,
}

/// Stratified k-fold cross-validation of a threshold classifier separating
/// `true` (adversarial) from `false` (clean) by a scalar score.
pub fn stump_detector_cv(
    values: &[f64],
    labels: &[bool],
    folds: usize,
    seed: u64,
) -> Result<DetectorResult, AnalysisError> {
    if folds < 2 {
        return Err(AnalysisError::InvalidArgument(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if values.len() != labels.len() {
        return Err(AnalysisError::InvalidArgument(
            "values and labels differ in length".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidArgument(
            "non-finite detector value".into(),
        ));
    }
    let mut pos: Vec<usize> = (0..values.len()).filter(|&i| labels[i]).collect();
    let mut neg: Vec<usize> = (0..values.len()).filter(|&i| !labels[i]).collect();
    if pos.len() < folds || neg.len() < folds {
        return Err(AnalysisError::SingleClass(format!(
            "{} positive and {} negative samples for {folds} folds",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = SeededRng::new(seed, streams::DETECTOR);
    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut fold_of = vec![0usize; values.len()];
    for (r, &i) in pos.iter().enumerate() {
        fold_of[i] = r % folds;
    }
    for (r, &i) in neg.iter().enumerate() {
        fold_of[i] = r % folds;
    }
    let mut fold_accuracies = Vec::with_capacity(folds);
    for f in 0..folds {
        let (train, test): (Vec<usize>, Vec<usize>) =
            (0..values.len()).partition(|&i| fold_of[i] != f);
        let tv: Vec<f64> = train.iter().map(|&i| values[i]).collect();
        let tl: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let stump = fit_stump(&tv, &tl)?;
        let hits = test
            .iter()
            .filter(|&&i| stump.predict(values[i]) == labels[i])
            .count();
        fold_accuracies.push(hits as f64 / test.len() as f64);
    }
    let full = fit_stump(values, labels)?;
    Ok(DetectorResult {
        threshold: full.threshold,
        direction: full.direction,
        mean_accuracy: fold_accuracies.iter().sum::<f64>() / folds as f64,
        fold_accuracies,
        folds,
        seed,
    })
}
