use crate::linalg::{norm2, sub_vec};
use crate::loss::LossKind;
use crate::nn::{MlpNetwork, SampleBatch};

use super::{pgd_attack, AttackConfig, RobustnessError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossChange {
    /// `ℓ(f(ξ), y) − ℓ(f(x), y) > ε`.
    pub adversarial: bool,
    /// `‖ξ − x‖₂`.
    pub delta: f64,
    pub loss_increase: f64,
}

/// Loss-change test of a candidate `xi` against the clean `x` under
/// cross-entropy.
pub fn is_loss_change_adversarial(
    net: &MlpNetwork,
    x: &[f64],
    xi: &[f64],
    y: usize,
    epsilon: f64,
) -> Result<LossChange, RobustnessError> {
    let ce = LossKind::CrossEntropy;
    let clean = net.sample_loss(x, y, &ce)?.0;
    let pert = net.sample_loss(xi, y, &ce)?.0;
    let loss_increase = pert - clean;
    Ok(LossChange {
        adversarial: loss_increase > epsilon,
        delta: norm2(&sub_vec(xi, x)),
        loss_increase,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessCheck {
    /// No attacked sample raised its loss by more than `ε`. This is
    /// "no counterexample found", not a proof.
    pub robust: bool,
    /// `(sample_id, largest loss increase)` of every violating sample.
    pub violations: Vec<(usize, f64)>,
    pub max_increase: f64,
}

/// Attacks every sample within radius `delta` and reports samples whose
/// loss rose by more than `epsilon` at any iterate.
pub fn dataset_loss_robustness(
    net: &MlpNetwork,
    data: &SampleBatch,
    delta: f64,
    epsilon: f64,
    attack: &AttackConfig,
) -> Result<RobustnessCheck, RobustnessError> {
    if delta == 0.0 || epsilon == f64::INFINITY || data.is_empty() {
        return Ok(RobustnessCheck {
            robust: true,
            violations: Vec::new(),
            max_increase: 0.0,
        });
    }
    let trajectories = pgd_attack(net, data, &attack.with_epsilon(delta))?;
    let mut violations = Vec::new();
    let mut max_increase = 0.0f64;
    for t in &trajectories {
        let inc = t.max_loss_increase();
        max_increase = max_increase.max(inc);
        if inc > epsilon {
            violations.push((t.sample_id, inc));
        }
    }
    Ok(RobustnessCheck {
        robust: violations.is_empty(),
        violations,
        max_increase,
    })
}

/// Smallest loss increase among attack iterates that flip a correct
/// prediction within radius `delta`; an upper estimate of the infimum.
/// `None` when no flip is found.
pub fn estimate_epsilon_star(
    net: &MlpNetwork,
    data: &SampleBatch,
    delta: f64,
    attack: &AttackConfig,
) -> Result<Option<f64>, RobustnessError> {
    if delta == 0.0 || data.is_empty() {
        return Ok(None);
    }
    let trajectories = pgd_attack(net, data, &attack.with_epsilon(delta))?;
    let mut best: Option<f64> = None;
    for t in &trajectories {
        if t.points[0].predicted != t.label {
            continue;
        }
        let l0 = t.clean_loss();
        for p in t.points.iter().filter(|p| p.predicted != t.label) {
            let inc = p.loss - l0;
            best = Some(best.map_or(inc, |b| b.min(inc)));
        }
    }
    Ok(best)
}
