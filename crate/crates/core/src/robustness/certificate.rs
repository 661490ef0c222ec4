use crate::curvature::{sample_sharpness, ClassifierNorms};
use crate::linalg::{norm2, unique_positive_cubic_root, CubicBranch, CubicProblem};
use crate::loss::LossKind;
use crate::nn::MlpNetwork;

use super::{RobustnessError, MIN_FEATURE_NORM};

/// Upper bound on the loss increase within input radius `delta`:
/// `(δ²/2r²) L² κ + (δ³/24r³) k m L⁶`.
pub fn loss_increase_bound(
    delta: f64,
    kappa_frobenius: f64,
    k: usize,
    m: usize,
    lipschitz: f64,
    r: f64,
) -> f64 {
    let rel = delta * lipschitz / r;
    0.5 * rel * rel * kappa_frobenius + rel.powi(3) * (k * m) as f64 * lipschitz.powi(3) / 24.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub epsilon: f64,
    pub kappa_frobenius: f64,
    pub k: usize,
    pub m: usize,
    pub lipschitz: f64,
    pub r: f64,
    /// Linear coefficient `‖w‖_F·‖∇_w ℓ‖_F`; zero for the plain certificate.
    pub gradient_term: f64,
    /// Relative feature-space radius `Δ`.
    pub delta_feature: f64,
    /// Input-space radius `rΔ/L`.
    pub delta_cert: f64,
    pub cubic_residual: f64,
    pub branch: CubicBranch,
}

fn check(
    epsilon: f64,
    kappa: f64,
    k: usize,
    m: usize,
    lipschitz: f64,
    r: f64,
) -> Result<(), RobustnessError> {
    let bad =
        |what: &str, v: f64| Err(RobustnessError::InvalidCertificate(format!("{what} = {v}")));
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return bad("epsilon", epsilon);
    }
    if !(kappa.is_finite() && kappa >= 0.0) {
        return bad("kappa", kappa);
    }
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return bad("L", lipschitz);
    }
    if !r.is_finite() {
        return bad("r", r);
    }
    if r < MIN_FEATURE_NORM {
        return Err(RobustnessError::FeatureNormTooSmall { r });
    }
    if k == 0 || m == 0 {
        return Err(RobustnessError::InvalidCertificate(format!(
            "k = {k}, m = {m}"
        )));
    }
    Ok(())
}

/// Largest input radius for which the loss bound stays within `epsilon`.
/// `Δ` solves `(κ/2)Δ² + (kmL³/24)Δ³ = ε`.
pub fn certified_radius(
    epsilon: f64,
    kappa_frobenius: f64,
    k: usize,
    m: usize,
    lipschitz: f64,
    r: f64,
) -> Result<Certificate, RobustnessError> {
    certified_radius_with_gradient(epsilon, kappa_frobenius, 0.0, k, m, lipschitz, r)
}

/// As [`certified_radius`] with the first-order term `gradient_term·Δ` kept,
/// for weights that are not an exact minimum.
pub fn certified_radius_with_gradient(
    epsilon: f64,
    kappa_frobenius: f64,
    gradient_term: f64,
    k: usize,
    m: usize,
    lipschitz: f64,
    r: f64,
) -> Result<Certificate, RobustnessError> {
    check(epsilon, kappa_frobenius, k, m, lipschitz, r)?;
    if !(gradient_term.is_finite() && gradient_term >= 0.0) {
        return Err(RobustnessError::InvalidCertificate(format!(
            "gradient term = {gradient_term}"
        )));
    }
    let cubic = (k * m) as f64 * lipschitz.powi(3) / 24.0;
    let problem = CubicProblem::with_linear(cubic, 0.5 * kappa_frobenius, gradient_term, epsilon)
        .map_err(|e| RobustnessError::InvalidCertificate(e.to_string()))?;
    let root = unique_positive_cubic_root(&problem);
    Ok(Certificate {
        epsilon,
        kappa_frobenius,
        k,
        m,
        lipschitz,
        r,
        gradient_term,
        delta_feature: root.root,
        delta_cert: r * root.root / lipschitz,
        cubic_residual: root.residual,
        branch: root.branch,
    })
}

/// Certificate of one sample, with `r = ‖φ(x)‖` and the sample's own
/// `κ_F`. With `with_gradient` the linear coefficient is
/// `‖w‖_F·‖∇_w ℓ‖_F = ‖w‖_F·‖ŷ − e_y‖·‖φ‖`.
#[allow(clippy::too_many_arguments)]
pub fn certify_sample(
    net: &MlpNetwork,
    norms: &ClassifierNorms,
    sample_id: usize,
    x: &[f64],
    y: usize,
    epsilon: f64,
    lipschitz: f64,
    with_gradient: bool,
) -> Result<Certificate, RobustnessError> {
    let rec = sample_sharpness(net, norms, sample_id, x, y)?;
    let (_, cache) = net.sample_loss(x, y, &LossKind::CrossEntropy)?;
    let phi_norm = norm2(cache.features());
    let gradient_term = if with_gradient {
        let p = cache.probs.as_slice();
        let resid: f64 = p
            .iter()
            .enumerate()
            .map(|(j, pj)| {
                if j == y {
                    cache.probs.complement(y).powi(2)
                } else {
                    pj * pj
                }
            })
            .sum();
        norms.frobenius_sq.sqrt() * resid.sqrt() * phi_norm
    } else {
        0.0
    };
    certified_radius_with_gradient(
        epsilon,
        rec.kappa_frobenius,
        gradient_term,
        net.classes(),
        net.feature_dim(),
        lipschitz,
        phi_norm,
    )
}
