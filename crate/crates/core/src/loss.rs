//! Classification losses expressed on the probability simplex.
//!
//! Each loss is a separable function of the softmax output `p`, so its
//! Hessian in `p` is diagonal with entries `h_i(p) = ∂²ℓ/∂p_i²`. The logit
//! gradient and Hessian follow from the softmax Jacobian
//! `J = diag(p) − ppᵀ`:
//!
//! ```text
//! ∇_z ℓ  = Jᵀ g
//! ∇²_z ℓ = Jᵀ diag(h) J + Σ_i g_i ∇²_z p_i
//! ```
//!
//! Cross-entropy (and the identical KL to a hard label) short-circuits both
//! to the exact forms `p − e_y` and `diag(p) − ppᵀ`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("unknown loss kind `{0}`")]
    UnknownLoss(String),
    #[error("invalid loss parameter: {0}")]
    InvalidParameter(String),
    #[error("probability vector is not on the simplex (sum {sum})")]
    NotSimplex { sum: f64 },
    #[error("probability {value} at class {class} is on the simplex boundary")]
    BoundaryProbability { class: usize, value: f64 },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("target distribution has {got} classes, expected {expected}")]
    TargetLength { expected: usize, got: usize },
}

/// Loss variants with curvature terms `h_i(p)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LossKind {
    #[default]
    CrossEntropy,
    /// `−(1 − p_y)^γ log p_y`.
    Focal { gamma: f64 },
    /// `Σ_i (p_i − δ_iy)²`.
    Brier,
    /// `KL(e_y ‖ p)`, numerically identical to cross-entropy.
    KlHard,
    /// `KL(q ‖ p)` for a soft target `q`.
    KlSoft { target: Vec<f64> },
    /// `KL(p ‖ q)`; requires `q` strictly positive.
    ReverseKl { target: Vec<f64> },
}

/// Second derivatives of a loss in probability space at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureTerms {
    pub true_class: usize,
    /// `h_i(p)` for every class `i`, including the true class.
    pub h: Vec<f64>,
    /// Whether the loss satisfies the bounded-curvature condition
    /// `h_y p_y² ≤ M`, `max_{j≠y} |h_j| ≤ M` over the open simplex.
    pub assumption_a_ok: bool,
}

impl CurvatureTerms {
    pub fn h_true(&self) -> f64 {
        self.h[self.true_class]
    }

    /// `(class, h_j)` for every class other than the true one.
    pub fn h_others(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.h
            .iter()
            .copied()
            .enumerate()
            .filter(move |(j, _)| *j != self.true_class)
    }
}

fn check_target(q: &[f64], strictly_positive: bool) -> Result<(), LossError> {
    if q.is_empty() {
        return Err(LossError::InvalidParameter(
            "empty target distribution".into(),
        ));
    }
    let sum: f64 = q.iter().sum();
    let bad = q
        .iter()
        .any(|v| !v.is_finite() || *v < 0.0 || (strictly_positive && *v <= 0.0));
    if bad || (sum - 1.0).abs() > 1e-9 {
        return Err(LossError::InvalidParameter(format!(
            "target must be a{} probability vector, got {q:?}",
            if strictly_positive {
                " strictly positive"
            } else {
                ""
            }
        )));
    }
    Ok(())
}

impl LossKind {
    pub fn focal(gamma: f64) -> Result<Self, LossError> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(LossError::InvalidParameter(format!(
                "focal gamma must be >= 0, got {gamma}"
            )));
        }
        Ok(LossKind::Focal { gamma })
    }

    pub fn kl_soft(target: Vec<f64>) -> Result<Self, LossError> {
        check_target(&target, false)?;
        Ok(LossKind::KlSoft { target })
    }

    pub fn reverse_kl(target: Vec<f64>) -> Result<Self, LossError> {
        check_target(&target, true)?;
        Ok(LossKind::ReverseKl { target })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Focal { .. } => "focal",
            LossKind::Brier => "brier",
            LossKind::KlHard => "kl_hard",
            LossKind::KlSoft { .. } => "kl_soft",
            LossKind::ReverseKl { .. } => "reverse_kl",
        }
    }

    fn is_log_likelihood(&self) -> bool {
        matches!(self, LossKind::CrossEntropy | LossKind::KlHard)
    }

    fn target(&self) -> Option<&[f64]> {
        match self {
            LossKind::KlSoft { target } | LossKind::ReverseKl { target } => Some(target),
            _ => None,
        }
    }

    fn check_point(&self, p: &[f64], y: usize) -> Result<(), LossError> {
        if y >= p.len() {
            return Err(LossError::ClassOutOfRange {
                class: y,
                classes: p.len(),
            });
        }
        if let Some(q) = self.target() {
            if q.len() != p.len() {
                return Err(LossError::TargetLength {
                    expected: p.len(),
                    got: q.len(),
                });
            }
        }
        Ok(())
    }

    /// Table-level flag: does the loss keep `h_y p_y²` and `|h_{j≠y}|`
    /// bounded on the open simplex?
    pub fn assumption_a(&self, y: usize) -> bool {
        match self {
            LossKind::CrossEntropy | LossKind::KlHard | LossKind::Brier => true,
            LossKind::Focal { gamma } => *gamma >= 1.0,
            LossKind::KlSoft { target } => {
                target.iter().enumerate().all(|(j, q)| j == y || *q == 0.0)
            }
            LossKind::ReverseKl { .. } => true,
        }
    }

    /// Loss value from probabilities.
    pub fn value(&self, p: &[f64], y: usize) -> Result<f64, LossError> {
        self.check_point(p, y)?;
        let py = p[y];
        Ok(match self {
            LossKind::CrossEntropy | LossKind::KlHard => -py.ln(),
            LossKind::Focal { gamma } => -(1.0 - py).powf(*gamma) * py.ln(),
            LossKind::Brier => p
                .iter()
                .enumerate()
                .map(|(i, pi)| {
                    let t = if i == y { 1.0 } else { 0.0 };
                    (pi - t).powi(2)
                })
                .sum(),
            LossKind::KlSoft { target } => target
                .iter()
                .zip(p)
                .filter(|(q, _)| **q > 0.0)
                .map(|(q, pi)| q * (q / pi).ln())
                .sum(),
            LossKind::ReverseKl { target } => p
                .iter()
                .zip(target)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(pi, q)| pi * (pi / q).ln())
                .sum(),
        })
    }

    /// Loss value from logits and their softmax. Log-likelihood losses use
    /// `logsumexp(z) − z_y`, which stays accurate when `p_y` rounds to 1.
    pub fn value_from_logits(&self, z: &[f64], p: &[f64], y: usize) -> Result<f64, LossError> {
        if self.is_log_likelihood() {
            self.check_point(p, y)?;
            return Ok(log_sum_exp(z) - z[y]);
        }
        self.value(p, y)
    }

    /// `∂ℓ/∂p_i`.
    pub fn grad_p(&self, p: &[f64], y: usize) -> Result<Vec<f64>, LossError> {
        self.check_point(p, y)?;
        let k = p.len();
        let mut g = vec![0.0; k];
        let py = p[y];
        match self {
            LossKind::CrossEntropy | LossKind::KlHard => g[y] = -1.0 / py,
            LossKind::Focal { gamma } => {
                let v = 1.0 - py;
                let lead = if *gamma == 0.0 {
                    0.0
                } else {
                    gamma * v.powf(gamma - 1.0) * py.ln()
                };
                g[y] = lead - v.powf(*gamma) / py;
            }
            LossKind::Brier => {
                for (i, gi) in g.iter_mut().enumerate() {
                    let t = if i == y { 1.0 } else { 0.0 };
                    *gi = 2.0 * (p[i] - t);
                }
            }
            LossKind::KlSoft { target } => {
                for i in 0..k {
                    g[i] = -target[i] / p[i];
                }
            }
            LossKind::ReverseKl { target } => {
                for i in 0..k {
                    g[i] = (p[i] / target[i]).ln() + 1.0;
                }
            }
        }
        Ok(g)
    }

    /// `h_i(p) = ∂²ℓ/∂p_i²` for every class.
    pub fn curvature(&self, p: &[f64], y: usize) -> Result<Vec<f64>, LossError> {
        self.check_point(p, y)?;
        let k = p.len();
        let mut h = vec![0.0; k];
        let py = p[y];
        match self {
            LossKind::CrossEntropy | LossKind::KlHard => h[y] = 1.0 / (py * py),
            LossKind::Focal { gamma } => {
                let v = 1.0 - py;
                let g = *gamma;
                h[y] = v.powf(g - 2.0)
                    * (-g * (g - 1.0) * py.ln() + 2.0 * g * v / py + v * v / (py * py));
            }
            LossKind::Brier => h.iter_mut().for_each(|x| *x = 2.0),
            LossKind::KlSoft { target } => {
                for i in 0..k {
                    h[i] = target[i] / (p[i] * p[i]);
                }
            }
            LossKind::ReverseKl { .. } => {
                for i in 0..k {
                    h[i] = 1.0 / p[i];
                }
            }
        }
        Ok(h)
    }

    /// `∇_z ℓ`, the gradient with respect to the logits.
    pub fn logit_grad(&self, p: &[f64], y: usize) -> Result<Vec<f64>, LossError> {
        self.check_point(p, y)?;
        if self.is_log_likelihood() {
            let mut g = p.to_vec();
            g[y] -= 1.0;
            return Ok(g);
        }
        let gp = self.grad_p(p, y)?;
        // (Jᵀ g)_a = p_a (g_a − ⟨p, g⟩)
        let pg: f64 = p.iter().zip(&gp).map(|(a, b)| a * b).sum();
        Ok(p.iter().zip(&gp).map(|(pa, ga)| pa * (ga - pg)).collect())
    }

    /// `∇²_z ℓ`, the Hessian with respect to the logits.
    pub fn logit_hessian(&self, p: &[f64], y: usize) -> Result<Matrix, LossError> {
        self.check_point(p, y)?;
        let k = p.len();
        let mut out = Matrix::zeros(k, k);
        if self.is_log_likelihood() {
            for a in 0..k {
                for b in 0..k {
                    let d = if a == b { p[a] } else { 0.0 };
                    out.set(a, b, d - p[a] * p[b]);
                }
            }
            return Ok(out);
        }
        let g = self.grad_p(p, y)?;
        let h = self.curvature(p, y)?;
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        for a in 0..k {
            for b in a..k {
                let mut v = 0.0;
                for i in 0..k {
                    let jia = p[i] * (delta(i, a) - p[a]);
                    let jib = p[i] * (delta(i, b) - p[b]);
                    let d2 = p[i] * (delta(i, b) - p[b]) * (delta(i, a) - p[a])
                        - p[i] * p[a] * (delta(a, b) - p[b]);
                    v += h[i] * jia * jib + g[i] * d2;
                }
                out.set(a, b, v);
                out.set(b, a, v);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |q: &[f64]| {
            q.iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match self {
            LossKind::Focal { gamma } => write!(f, "focal:{gamma}"),
            LossKind::KlSoft { target } => write!(f, "kl_soft:{}", join(target)),
            LossKind::ReverseKl { target } => write!(f, "reverse_kl:{}", join(target)),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for LossKind {
    type Err = LossError;

    /// Accepts `cross_entropy`, `focal:<gamma>`, `brier`, `kl_hard`,
    /// `kl_soft:<q0,q1,...>` and `reverse_kl:<q0,q1,...>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let parse_vec = |a: Option<&str>| -> Result<Vec<f64>, LossError> {
            let a = a.ok_or_else(|| {
                LossError::InvalidParameter(format!("`{name}` needs a target distribution"))
            })?;
            a.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| LossError::InvalidParameter(format!("bad target entry `{t}`")))
                })
                .collect()
        };
        match (name, arg) {
            ("cross_entropy" | "ce", None) => Ok(LossKind::CrossEntropy),
            ("brier" | "mse", None) => Ok(LossKind::Brier),
            ("kl_hard", None) => Ok(LossKind::KlHard),
            ("focal", Some(g)) => {
                let gamma = g
                    .parse::<f64>()
                    .map_err(|_| LossError::InvalidParameter(format!("bad focal gamma `{g}`")))?;
                LossKind::focal(gamma)
            }
            ("focal", None) => LossKind::focal(2.0),
            ("kl_soft", a) => LossKind::kl_soft(parse_vec(a)?),
            ("reverse_kl", a) => LossKind::reverse_kl(parse_vec(a)?),
            _ => Err(LossError::UnknownLoss(s.to_string())),
        }
    }
}

/// Table-1 style curvature terms at an interior simplex point.
pub fn loss_curvature_terms(
    loss: &LossKind,
    p: &[f64],
    y: usize,
) -> Result<CurvatureTerms, LossError> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(LossError::NotSimplex { sum });
    }
    if let Some((class, value)) = p
        .iter()
        .copied()
        .enumerate()
        .find(|(_, v)| *v <= 0.0 || *v >= 1.0)
    {
        return Err(LossError::BoundaryProbability { class, value });
    }
    let h = loss.curvature(p, y)?;
    Ok(CurvatureTerms {
        true_class: y,
        h,
        assumption_a_ok: loss.assumption_a(y),
    })
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_half() {
        let t = loss_curvature_terms(&LossKind::CrossEntropy, &[0.5, 0.3, 0.2], 0).unwrap();
        assert_eq!(t.h_true(), 4.0);
        assert!(t.h_others().all(|(_, h)| h == 0.0));
        assert!(t.assumption_a_ok);
    }

    #[test]
    fn brier_is_flat_two() {
        let t = loss_curvature_terms(&LossKind::Brier, &[0.1, 0.6, 0.3], 1).unwrap();
        assert!(t.h.iter().all(|h| *h == 2.0));
        assert!(t.assumption_a_ok);
    }

    #[test]
    fn kl_soft_violates_assumption() {
        let loss = LossKind::kl_soft(vec![0.5, 0.5]).unwrap();
        let p = [0.7, 0.3];
        let t = loss_curvature_terms(&loss, &p, 0).unwrap();
        assert_eq!(t.h, vec![0.5 / (0.7 * 0.7), 0.5 / (0.3 * 0.3)]);
        assert!(!t.assumption_a_ok);
        // A one-hot soft target is the hard label again.
        let hard = LossKind::kl_soft(vec![1.0, 0.0]).unwrap();
        assert!(hard.assumption_a(0));
    }

    #[test]
    fn boundary_rejected() {
        assert!(matches!(
            loss_curvature_terms(&LossKind::CrossEntropy, &[1.0, 0.0], 0),
            Err(LossError::BoundaryProbability { class: 0, .. })
        ));
        assert!(matches!(
            loss_curvature_terms(&LossKind::CrossEntropy, &[0.5, 0.6], 0),
            Err(LossError::NotSimplex { .. })
        ));
    }

    #[test]
    fn parse_round_trip() {
        for s in [
            "cross_entropy",
            "focal:1.5",
            "brier",
            "kl_hard",
            "kl_soft:0.5,0.5",
            "reverse_kl:0.25,0.75",
        ] {
            let l: LossKind = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
        }
        assert!(matches!(
            "hinge".parse::<LossKind>(),
            Err(LossError::UnknownLoss(_))
        ));
        assert!("reverse_kl:1,0".parse::<LossKind>().is_err());
        assert!("focal:-1".parse::<LossKind>().is_err());
    }

    #[test]
    fn focal_zero_gamma_is_cross_entropy() {
        let p = [0.2, 0.5, 0.3];
        let f = LossKind::focal(0.0).unwrap();
        let ce = LossKind::CrossEntropy;
        assert!((f.value(&p, 1).unwrap() - ce.value(&p, 1).unwrap()).abs() < 1e-15);
        assert!((f.curvature(&p, 1).unwrap()[1] - 4.0).abs() < 1e-12);
        let hz = f.logit_hessian(&p, 1).unwrap();
        let hce = ce.logit_hessian(&p, 1).unwrap();
        assert!(hz.sub(&hce).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn logit_grad_matches_finite_differences() {
        let z = [0.3, -0.2, 0.9];
        let losses = [
            LossKind::CrossEntropy,
            LossKind::focal(2.0).unwrap(),
            LossKind::Brier,
            LossKind::kl_soft(vec![0.2, 0.3, 0.5]).unwrap(),
            LossKind::reverse_kl(vec![0.2, 0.3, 0.5]).unwrap(),
        ];
        let soft = |z: &[f64]| {
            let m = log_sum_exp(z);
            z.iter().map(|v| (v - m).exp()).collect::<Vec<_>>()
        };
        for loss in &losses {
            let p = soft(&z);
            let g = loss.logit_grad(&p, 2).unwrap();
            let hz = loss.logit_hessian(&p, 2).unwrap();
            for a in 0..3 {
                let h = 1e-5;
                let mut zp = z;
                zp[a] += h;
                let mut zm = z;
                zm[a] -= h;
                let fd = (loss.value(&soft(&zp), 2).unwrap() - loss.value(&soft(&zm), 2).unwrap())
                    / (2.0 * h);
                assert!((fd - g[a]).abs() < 1e-8, "{loss}: {fd} vs {}", g[a]);
                let gp = loss.logit_grad(&soft(&zp), 2).unwrap();
                let gm = loss.logit_grad(&soft(&zm), 2).unwrap();
                for b in 0..3 {
                    let fd2 = (gp[b] - gm[b]) / (2.0 * h);
                    assert!((fd2 - hz.get(a, b)).abs() < 1e-7, "{loss}: H[{a},{b}]");
                }
            }
        }
    }
}
