use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::curvature::{sample_sharpness, ClassifierNorms};
use crate::linalg::{norm2, streams, sub_vec, SeededRng};
use crate::loss::LossKind;
use crate::nn::{MlpNetwork, SampleBatch};

use super::RobustnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackNorm {
    L2,
    Linf,
}

impl AttackNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackNorm::L2 => "l2",
            AttackNorm::Linf => "linf",
        }
    }

    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            AttackNorm::L2 => norm2(v),
            AttackNorm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

impl fmt::Display for AttackNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackNorm {
    type Err = RobustnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l2" => Ok(AttackNorm::L2),
            "linf" | "l_inf" | "inf" => Ok(AttackNorm::Linf),
            other => Err(RobustnessError::InvalidAttack(format!(
                "unknown norm `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub norm: AttackNorm,
    pub epsilon: f64,
    pub step_size: f64,
    pub steps: usize,
    pub seed: u64,
    /// Start from a uniform draw in the ball instead of the clean point.
    pub random_start: bool,
    /// Keep every iterate, not just the clean and final points.
    pub record_trajectory: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            norm: AttackNorm::Linf,
            epsilon: 8.0 / 255.0,
            step_size: 2.0 / 255.0,
            steps: 10,
            seed: 0,
            random_start: false,
            record_trajectory: true,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), RobustnessError> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(RobustnessError::InvalidAttack(format!(
                "epsilon must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(RobustnessError::InvalidAttack(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self {
            epsilon,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub loss: f64,
    pub predicted: usize,
    pub confidence: f64,
    pub kappa_spectral: f64,
    pub kappa_frobenius: f64,
    pub l2_dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrajectory {
    pub sample_id: usize,
    pub label: usize,
    /// `x_0 … x_T` when recorded, otherwise `x_0` and `x_T` only.
    pub iterates: Vec<Vec<f64>>,
    /// One entry per iteration `0..=T`.
    pub points: Vec<TrajectoryPoint>,
    /// Iterations whose step saw an exactly zero gradient.
    pub zero_gradient_steps: Vec<usize>,
}

impl AttackTrajectory {
    pub fn clean(&self) -> &[f64] {
        &self.iterates[0]
    }

    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("nonempty")
    }

    pub fn clean_loss(&self) -> f64 {
        self.points[0].loss
    }

    /// `ℓ(x_T) − ℓ(x_0)`.
    pub fn loss_increase(&self) -> f64 {
        self.points.last().expect("nonempty").loss - self.clean_loss()
    }

    /// Largest `ℓ(x_t) − ℓ(x_0)` over the trajectory.
    pub fn max_loss_increase(&self) -> f64 {
        let l0 = self.clean_loss();
        self.points.iter().map(|p| p.loss - l0).fold(0.0, f64::max)
    }

    /// Some iterate is predicted as a class other than the label.
    pub fn flipped(&self) -> bool {
        self.points.iter().any(|p| p.predicted != self.label)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.loss).collect()
    }

    pub fn kappas_spectral(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.kappa_spectral).collect()
    }
}

fn project(x: &mut [f64], x0: &[f64], norm: AttackNorm, eps: f64) {
    match norm {
        AttackNorm::Linf => {
            for (v, c) in x.iter_mut().zip(x0) {
                *v = v.clamp(c - eps, c + eps);
            }
        }
        AttackNorm::L2 => {
            let d = sub_vec(x, x0);
            let n = norm2(&d);
            if n > eps {
                let s = eps / n;
                for ((v, c), di) in x.iter_mut().zip(x0).zip(&d) {
                    *v = c + s * di;
                }
            }
        }
    }
    // Clamping moves every coordinate towards x0's box, so the ball
    // constraint survives.
    x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

fn random_start(x0: &[f64], cfg: &AttackConfig, rng: &mut SeededRng) -> Vec<f64> {
    let d = x0.len();
    let mut x = x0.to_vec();
    match cfg.norm {
        AttackNorm::Linf => {
            for v in &mut x {
                *v += rng.uniform_range(-cfg.epsilon, cfg.epsilon);
            }
        }
        AttackNorm::L2 => {
            let dir = rng.normal_vec(d);
            let n = norm2(&dir);
            let radius = cfg.epsilon * rng.uniform().powf(1.0 / d as f64);
            if n > 0.0 {
                for (v, g) in x.iter_mut().zip(&dir) {
                    *v += radius * g / n;
                }
            }
        }
    }
    project(&mut x, x0, cfg.norm, cfg.epsilon);
    x
}

fn attack_one(
    net: &MlpNetwork,
    norms: &ClassifierNorms,
    sample_id: usize,
    x0: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<AttackTrajectory, RobustnessError> {
    let loss = LossKind::CrossEntropy;
    let point = |t: usize, x: &[f64]| -> Result<TrajectoryPoint, RobustnessError> {
        let rec = sample_sharpness(net, norms, sample_id, x, y)?;
        Ok(TrajectoryPoint {
            iteration: t,
            loss: rec.loss,
            predicted: net.predict(x)?,
            confidence: rec.confidence,
            kappa_spectral: rec.kappa_spectral,
            kappa_frobenius: rec.kappa_frobenius,
            l2_dist: norm2(&sub_vec(x, x0)),
        })
    };
    let mut x = if cfg.random_start && cfg.steps > 0 {
        let mut rng = SeededRng::new(cfg.seed, 0).derive(streams::ATTACK, sample_id as u64);
        random_start(x0, cfg, &mut rng)
    } else {
        x0.to_vec()
    };
    let mut iterates = vec![x0.to_vec()];
    let mut points = vec![point(0, x0)?];
    let mut zero_gradient_steps = Vec::new();
    for t in 1..=cfg.steps {
        let (_, g, _) = net.input_gradient(&x, y, &loss)?;
        let step: Option<Vec<f64>> = match cfg.norm {
            AttackNorm::Linf if g.iter().any(|v| *v != 0.0) => Some(
                g.iter()
                    .map(|v| {
                        if *v > 0.0 {
                            1.0
                        } else if *v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            ),
            AttackNorm::L2 => {
                let n = norm2(&g);
                (n > 0.0).then(|| g.iter().map(|v| v / n).collect())
            }
            _ => None,
        };
        match step {
            Some(s) => {
                for (v, si) in x.iter_mut().zip(&s) {
                    *v += cfg.step_size * si;
                }
                project(&mut x, x0, cfg.norm, cfg.epsilon);
            }
            None => zero_gradient_steps.push(t),
        }
        points.push(point(t, &x)?);
        if cfg.record_trajectory {
            iterates.push(x.clone());
        }
    }
    if !cfg.record_trajectory && cfg.steps > 0 {
        iterates.push(x);
    }
    Ok(AttackTrajectory {
        sample_id,
        label: y,
        iterates,
        points,
        zero_gradient_steps,
    })
}

/// Projected gradient ascent on the cross-entropy, one trajectory per sample.
/// Samples run in parallel; the output is in sample order and independent of
/// the thread count.
pub fn pgd_attack(
    net: &MlpNetwork,
    batch: &SampleBatch,
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrajectory>, RobustnessError> {
    cfg.validate()?;
    batch.check_labels(net.classes())?;
    if let Some(sample) = batch
        .inputs()
        .iter()
        .position(|x| x.iter().any(|v| !(0.0..=1.0).contains(v)))
    {
        return Err(RobustnessError::OutsideBox { sample });
    }
    let norms = ClassifierNorms::of(net);
    (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = batch.sample(i);
            attack_one(net, &norms, i, x, y, cfg)
        })
        .collect()
}
