use crate::linalg::{dot, SeededRng};

use super::CurvatureError;

/// Hutchinson estimate `mean_i zᵢᵀ H zᵢ` with Rademacher probes. Exact for
/// any diagonal operator since `zᵢ ∘ zᵢ = 1`.
pub fn hutchinson_trace<F>(
    mut hvp: F,
    dim: usize,
    probes: usize,
    rng: &mut SeededRng,
) -> Result<f64, CurvatureError>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    if probes == 0 {
        return Err(CurvatureError::InvalidArgument(
            "hutchinson needs at least one probe".into(),
        ));
    }
    let mut total = 0.0;
    for probe in 0..probes {
        let z: Vec<f64> = (0..dim).map(|_| rng.rademacher()).collect();
        let hz = hvp(&z);
        if hz.len() != dim {
            return Err(CurvatureError::InvalidArgument(format!(
                "operator returned {} entries for dimension {dim}",
                hz.len()
            )));
        }
        let q = dot(&z, &hz);
        if !q.is_finite() {
            return Err(CurvatureError::NonFiniteProbe { probe });
        }
        total += q;
    }
    Ok(total / probes as f64)
}
