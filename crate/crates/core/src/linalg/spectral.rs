//! Spectral norm by power iteration on `AᵀA`.

use super::matrix::{dot, norm2, Matrix};
use super::rng::{streams, SeededRng};
use super::LinalgError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralNorm {
    pub value: f64,
    pub iterations: usize,
    /// `‖AᵀA v − σ² v‖` at the returned unit vector.
    pub residual: f64,
}

/// Largest singular value of `a`.
///
/// The iteration stops once successive estimates of `σ²` change by less than
/// `tol / 10` relative; Rayleigh quotients increase monotonically towards
/// `σ²`, so the stopping rule keeps the relative error of `σ` below `tol`
/// unless the spectral gap is pathologically small. The start vector comes
/// from `rng`, which makes the result reproducible.
pub fn spectral_norm(
    a: &Matrix,
    tol: f64,
    max_iter: usize,
    rng: &mut SeededRng,
) -> Result<SpectralNorm, LinalgError> {
    if a.is_zero() || a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::ZeroMatrix);
    }
    let n = a.cols();
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    normalize(&mut v);
    let mut lambda = 0.0_f64;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let av = a.matvec(&v)?;
        let mut w = a.matvec_transposed(&av)?;
        let new_lambda = dot(&v, &w);
        residual = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - new_lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        let wn = norm2(&w);
        if wn == 0.0 {
            // Start vector in the null space; restart from a fresh draw.
            v = (0..n).map(|_| rng.normal()).collect();
            normalize(&mut v);
            continue;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        let change = (new_lambda - lambda).abs();
        lambda = new_lambda;
        v = w;
        if it > 1 && change <= 0.1 * tol * lambda.abs() {
            return Ok(SpectralNorm {
                value: lambda.max(0.0).sqrt(),
                iterations: it,
                residual,
            });
        }
        if residual <= 1e-15 * lambda.abs() {
            return Ok(SpectralNorm {
                value: lambda.max(0.0).sqrt(),
                iterations: it,
                residual,
            });
        }
    }
    Err(LinalgError::NotConverged {
        iterations: max_iter,
        last: lambda.max(0.0).sqrt(),
        residual,
    })
}

/// `‖a‖₂` at near machine precision with a fixed start stream. A zero matrix
/// has norm 0; non-convergence falls back to the last iterate since only the
/// value is consumed.
pub fn operator_norm(a: &Matrix) -> f64 {
    let mut rng = SeededRng::new(0x5eed, streams::POWER_ITERATION);
    match spectral_norm(a, 1e-13, 200_000, &mut rng) {
        Ok(s) => s.value,
        Err(LinalgError::NotConverged { last, .. }) => last,
        Err(_) => 0.0,
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
