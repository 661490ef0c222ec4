use crate::curvature::relative_sharpness;
use crate::nn::{MlpNetwork, SampleBatch};
use crate::robustness::{pgd_attack, AttackConfig, AttackTrajectory};

use super::AnalysisError;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleEntry {
    pub scale: f64,
    pub clean_accuracy: f64,
    /// Share of samples classified correctly at every attack iterate.
    pub robust_accuracy: f64,
    pub mean_kappa_spectral: f64,
    pub mean_kappa_frobenius: f64,
    /// Share of the unscaled network's adversarial examples that still fool
    /// this scale; `None` when the unscaled attack found none.
    pub transfer_rate: Option<f64>,
    pub mean_loss_increase: f64,
    pub zero_gradient_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSweepResult {
    pub entries: Vec<ScaleEntry>,
    /// Adversarial examples found against the unscaled network.
    pub baseline_adversarials: usize,
    /// Attack trajectories per scale, in the order of `entries`.
    pub trajectories: Vec<Vec<AttackTrajectory>>,
}

fn robust_accuracy(trajectories: &[AttackTrajectory]) -> f64 {
    let n = trajectories.len().max(1) as f64;
    trajectories.iter().filter(|t| !t.flipped()).count() as f64 / n
}

/// Last iterate predicted as a wrong class, per trajectory that has one.
fn adversarial_examples(trajectories: &[AttackTrajectory]) -> Vec<(Vec<f64>, usize)> {
    trajectories
        .iter()
        .filter_map(|t| {
            t.points
                .iter()
                .rposition(|p| p.predicted != t.label)
                .map(|i| (t.iterates[i].clone(), t.label))
        })
        .collect()
}

/// Attacks the classifier scaled by each `s` and replays the unscaled
/// network's adversarial examples against every scale.
pub fn scale_sweep(
    net: &MlpNetwork,
    scales: &[f64],
    attack: &AttackConfig,
    data: &SampleBatch,
) -> Result<ScaleSweepResult, AnalysisError> {
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(AnalysisError::InvalidArgument(format!(
            "scales must be positive, got {scales:?}"
        )));
    }
    let attack = AttackConfig {
        record_trajectory: true,
        ..attack.clone()
    };
    let baseline = pgd_attack(net, data, &attack)?;
    let adversarial = adversarial_examples(&baseline);
    let mut entries = Vec::with_capacity(scales.len());
    let mut trajectories = Vec::with_capacity(scales.len());
    for &s in scales {
        let scaled = net.scale_penultimate(s)?;
        let tr = if s == 1.0 {
            baseline.clone()
        } else {
            pgd_attack(&scaled, data, &attack)?
        };
        let sharp = relative_sharpness(&scaled, data)
            .map_err(|e| AnalysisError::InvalidArgument(format!("sharpness at scale {s}: {e}")))?;
        let transfer_rate = if adversarial.is_empty() {
            None
        } else {
            let mut fooled = 0usize;
            for (x, y) in &adversarial {
                if scaled.predict(x)? != *y {
                    fooled += 1;
                }
            }
            Some(fooled as f64 / adversarial.len() as f64)
        };
        let n = tr.len().max(1) as f64;
        entries.push(ScaleEntry {
            scale: s,
            clean_accuracy: scaled.accuracy(data)?,
            robust_accuracy: robust_accuracy(&tr),
            mean_kappa_spectral: sharp.mean_spectral,
            mean_kappa_frobenius: sharp.mean_frobenius,
            transfer_rate,
            mean_loss_increase: tr.iter().map(|t| t.loss_increase()).sum::<f64>() / n,
            zero_gradient_steps: tr.iter().map(|t| t.zero_gradient_steps.len()).sum(),
        });
        trajectories.push(tr);
    }
    Ok(ScaleSweepResult {
        entries,
        baseline_adversarials: adversarial.len(),
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;
    use crate::robustness::AttackNorm;

    #[test]
    fn invariants_on_random_net() {
        let net = MlpNetwork::init(&[3, 8, 3], 4).unwrap();
        let mut rng = SeededRng::new(1, 0);
        let xs: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..3).map(|_| rng.uniform()).collect())
            .collect();
        let ys = (0..40).map(|i| i % 3).collect();
        let data = SampleBatch::new(xs, ys).unwrap();
        let attack = AttackConfig {
            norm: AttackNorm::Linf,
            epsilon: 0.1,
            step_size: 0.02,
            steps: 10,
            ..AttackConfig::default()
        };
        let scales = [0.25, 1.0, 10.0];
        let r = scale_sweep(&net, &scales, &attack, &data).unwrap();
        let acc = r.entries[0].clean_accuracy;
        for e in &r.entries {
            assert_eq!(e.clean_accuracy, acc);
            assert_eq!(e.transfer_rate, Some(1.0));
        }
        let base = pgd_attack(&net, &data, &attack).unwrap();
        assert_eq!(r.trajectories[1], base);
        assert!(scale_sweep(&net, &[0.0], &attack, &data).is_err());
    }
}
