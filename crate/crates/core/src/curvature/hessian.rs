use std::fmt;
use std::str::FromStr;

use crate::linalg::{kron_capped, operator_norm, Matrix, DEFAULT_SIZE_CAP};
use crate::loss::LossKind;
use crate::nn::{MlpNetwork, SampleBatch, SoftmaxOutput};

use super::CurvatureError;

/// Largest `k·m` for which the dense third-derivative tensor is built.
pub const THIRD_DERIVATIVE_CAP: usize = 64;

/// `diag(ŷ) − ŷŷᵀ`, the cross-entropy Hessian in the logits.
pub fn logit_hessian(yhat: &SoftmaxOutput) -> Matrix {
    let p = yhat.as_slice();
    let k = p.len();
    let mut h = Matrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let v = if a == b {
                p[a] * yhat.complement(a)
            } else {
                -p[a] * p[b]
            };
            h.set(a, b, v);
        }
    }
    h
}

/// Hessian of the cross-entropy in the classifier weights, `(diag(ŷ) − ŷŷᵀ) ⊗ φφᵀ`,
/// over `w` flattened row by row (entry `(j, a)` of `w` at index `j·m + a`).
pub fn penultimate_hessian(yhat: &SoftmaxOutput, phi: &[f64]) -> Result<Matrix, CurvatureError> {
    penultimate_hessian_capped(yhat, phi, DEFAULT_SIZE_CAP)
}

pub(crate) fn penultimate_hessian_capped(
    yhat: &SoftmaxOutput,
    phi: &[f64],
    cap: usize,
) -> Result<Matrix, CurvatureError> {
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(CurvatureError::InvalidArgument(
            "non-finite feature vector".into(),
        ));
    }
    Ok(kron_capped(
        &logit_hessian(yhat),
        &Matrix::outer(phi, phi),
        cap,
    )?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SharpnessVariant {
    /// `‖w‖₂ · tr H`.
    Spectral,
    /// `‖w‖_F² · tr H`.
    Frobenius,
}

impl SharpnessVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SharpnessVariant::Spectral => "spectral",
            SharpnessVariant::Frobenius => "frobenius",
        }
    }
}

impl fmt::Display for SharpnessVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SharpnessVariant {
    type Err = CurvatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "spectral" => Ok(SharpnessVariant::Spectral),
            "frobenius" => Ok(SharpnessVariant::Frobenius),
            other => Err(CurvatureError::InvalidArgument(format!(
                "unknown sharpness variant `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessRecord {
    pub sample_id: usize,
    pub loss: f64,
    /// `ŷ_y`.
    pub confidence: f64,
    pub kappa_spectral: f64,
    pub kappa_frobenius: f64,
}

impl SharpnessRecord {
    pub fn kappa(&self, variant: SharpnessVariant) -> f64 {
        match variant {
            SharpnessVariant::Spectral => self.kappa_spectral,
            SharpnessVariant::Frobenius => self.kappa_frobenius,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharpnessReport {
    pub records: Vec<SharpnessRecord>,
    pub mean_spectral: f64,
    pub mean_frobenius: f64,
}

impl SharpnessReport {
    pub fn mean(&self, variant: SharpnessVariant) -> f64 {
        match variant {
            SharpnessVariant::Spectral => self.mean_spectral,
            SharpnessVariant::Frobenius => self.mean_frobenius,
        }
    }
}

/// `‖w‖₂` and `‖w‖_F²` of a classifier, computed once per network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierNorms {
    pub spectral: f64,
    pub frobenius_sq: f64,
}

impl ClassifierNorms {
    pub fn of(net: &MlpNetwork) -> Self {
        let w = &net.classifier().weight;
        Self {
            spectral: operator_norm(w),
            frobenius_sq: w.frobenius_norm_sq(),
        }
    }
}

/// Sharpness of one sample from the closed form
/// `tr H = Σ_j ŷ_j(1 − ŷ_j) · ‖φ‖²`.
pub fn sample_sharpness(
    net: &MlpNetwork,
    norms: &ClassifierNorms,
    sample_id: usize,
    x: &[f64],
    y: usize,
) -> Result<SharpnessRecord, CurvatureError> {
    let (loss, cache) = net.sample_loss(x, y, &LossKind::CrossEntropy)?;
    let phi = cache.features();
    let trace = cache.probs.confidence_trace() * phi.iter().map(|v| v * v).sum::<f64>();
    Ok(SharpnessRecord {
        sample_id,
        loss,
        confidence: cache.probs.as_slice()[y],
        kappa_spectral: norms.spectral * trace,
        kappa_frobenius: norms.frobenius_sq * trace,
    })
}

/// Per-sample relative sharpness and the batch mean, which equals the
/// sharpness of the dataset-average Hessian.
pub fn relative_sharpness(
    net: &MlpNetwork,
    batch: &SampleBatch,
) -> Result<SharpnessReport, CurvatureError> {
    let norms = ClassifierNorms::of(net);
    let records = (0..batch.len())
        .map(|i| {
            let (x, y) = batch.sample(i);
            sample_sharpness(net, &norms, i, x, y)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = records.len().max(1) as f64;
    let mean_spectral = records.iter().map(|r| r.kappa_spectral).sum::<f64>() / n;
    let mean_frobenius = records.iter().map(|r| r.kappa_frobenius).sum::<f64>() / n;
    Ok(SharpnessReport {
        records,
        mean_spectral,
        mean_frobenius,
    })
}

/// Third derivative of the cross-entropy in the classifier weights, a dense
/// `km × km × km` tensor over the same row-major flattening as
/// [`penultimate_hessian`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThirdDerivative {
    dim: usize,
    data: Vec<f64>,
}

impl ThirdDerivative {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + l]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }
}

/// `∂H_{jl}/∂z_o` for `H = diag(ŷ) − ŷŷᵀ`.
fn logit_third(p: &[f64], j: usize, l: usize, o: usize) -> f64 {
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let dl = p[l] * (d(l, o) - p[o]);
    let dj = p[j] * (d(j, o) - p[o]);
    d(j, l) * dl - p[j] * dl - p[l] * dj
}

pub fn third_derivative_tensor(
    yhat: &SoftmaxOutput,
    phi: &[f64],
) -> Result<ThirdDerivative, CurvatureError> {
    let k = yhat.classes();
    let m = phi.len();
    let dim = k * m;
    if dim > THIRD_DERIVATIVE_CAP {
        return Err(CurvatureError::InvalidArgument(format!(
            "third derivative needs k·m ≤ {THIRD_DERIVATIVE_CAP}, got {dim}"
        )));
    }
    let p = yhat.as_slice();
    let mut data = vec![0.0; dim * dim * dim];
    for j in 0..k {
        for l in 0..k {
            for o in 0..k {
                let c = logit_third(p, j, l, o);
                if c == 0.0 {
                    continue;
                }
                for a in 0..m {
                    for b in 0..m {
                        let cab = c * phi[a] * phi[b];
                        let base = ((j * m + a) * dim + l * m + b) * dim + o * m;
                        for (e, pc) in phi.iter().enumerate() {
                            data[base + e] = cab * pc;
                        }
                    }
                }
            }
        }
    }
    Ok(ThirdDerivative { dim, data })
}

/// Entrywise bound `k·m·L′³ / 4` with `L′ ≥ max_i |φ_i|`.
pub fn third_derivative_bound(k: usize, m: usize, l_prime: f64) -> f64 {
    0.25 * (k * m) as f64 * l_prime.powi(3)
}

/// Trace of the assembled penultimate Hessian; used by tests as an
/// independent route to the closed form.
#[cfg(test)]
pub(crate) fn assembled_trace(yhat: &SoftmaxOutput, phi: &[f64]) -> f64 {
    penultimate_hessian(yhat, phi).unwrap().trace().unwrap()
}
