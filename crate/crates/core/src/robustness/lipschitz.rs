use crate::linalg::{norm2, operator_norm, streams, sub_vec, SeededRng};
use crate::nn::{MlpNetwork, SampleBatch};

use super::RobustnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    /// `Π_l ‖W_l‖₂` over the feature layers; sound since ReLU is 1-Lipschitz.
    pub upper: f64,
    /// Largest observed `‖φ(x) − φ(x′)‖ / ‖x − x′‖`; `None` when no pair of
    /// distinct points exists.
    pub lower_empirical: Option<f64>,
    pub pairs_used: usize,
    pub seed: u64,
}

/// Lipschitz constant of `φ`: the spectral-norm product as a certified upper
/// bound and a sampled ratio from `pairs` random pairs plus every point's
/// nearest neighbour as a lower estimate.
pub fn lipschitz_estimate(
    net: &MlpNetwork,
    data: &SampleBatch,
    pairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate, RobustnessError> {
    let upper = net
        .feature_layers()
        .iter()
        .map(|l| operator_norm(&l.weight))
        .product::<f64>();
    let n = data.len();
    let feats = data
        .inputs()
        .iter()
        .map(|x| net.features(x))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best: Option<f64> = None;
    let mut used = 0;
    let mut consider = |i: usize, j: usize| {
        let dx = norm2(&sub_vec(&data.inputs()[i], &data.inputs()[j]));
        if dx == 0.0 {
            return;
        }
        let ratio = norm2(&sub_vec(&feats[i], &feats[j])) / dx;
        best = Some(best.map_or(ratio, |b| b.max(ratio)));
        used += 1;
    };
    if n >= 2 {
        let mut rng = SeededRng::new(seed, streams::LIPSCHITZ);
        for _ in 0..pairs {
            let i = rng.index(n);
            let j = rng.index(n - 1);
            consider(i, if j >= i { j + 1 } else { j });
        }
        for i in 0..n {
            let nearest = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, norm2(&sub_vec(&data.inputs()[i], &data.inputs()[j]))))
                .filter(|(_, d)| *d > 0.0)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = nearest {
                consider(i, j);
            }
        }
    }
    Ok(LipschitzEstimate {
        upper,
        lower_empirical: best,
        pairs_used: used,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureNorm {
    /// `min_x ‖φ(x)‖₂`.
    pub r: f64,
    pub argmin: usize,
}

pub fn min_feature_norm(
    net: &MlpNetwork,
    data: &SampleBatch,
) -> Result<FeatureNorm, RobustnessError> {
    if data.is_empty() {
        return Err(RobustnessError::EmptyData);
    }
    let mut best = FeatureNorm {
        r: f64::INFINITY,
        argmin: 0,
    };
    for (i, x) in data.inputs().iter().enumerate() {
        let r = net.feature_norm(x)?;
        if r < best.r {
            best = FeatureNorm { r, argmin: i };
        }
    }
    Ok(best)
}
