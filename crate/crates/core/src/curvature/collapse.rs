use crate::nn::{MlpNetwork, SampleBatch};

use super::{sample_sharpness, ClassifierNorms, CurvatureError};

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseSample {
    pub sample_id: usize,
    /// `min_{j≠y} (z_y − z_j)` of the unscaled logits.
    pub margin: f64,
    /// `tr(diag(ŷ) − ŷŷᵀ)` at each scale.
    pub trace: Vec<f64>,
    /// `2(k − 1) e^{−α·margin}` at each scale.
    pub bound: Vec<f64>,
    pub confidence: Vec<f64>,
    pub kappa_spectral: Vec<f64>,
    pub kappa_frobenius: Vec<f64>,
}

impl CollapseSample {
    pub fn envelope_holds(&self) -> bool {
        self.trace.iter().zip(&self.bound).all(|(t, b)| t <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapsePoint {
    pub alpha: f64,
    pub mean_trace: f64,
    pub mean_confidence: f64,
    pub mean_kappa_spectral: f64,
    pub mean_kappa_frobenius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseCurve {
    pub alphas: Vec<f64>,
    pub samples: Vec<CollapseSample>,
    /// Batch means over the included samples, one per scale.
    pub points: Vec<CollapsePoint>,
    /// Samples with a nonpositive margin, left out of everything above.
    pub excluded: usize,
}

impl CollapseCurve {
    pub fn envelope_violations(&self) -> usize {
        self.samples.iter().filter(|s| !s.envelope_holds()).count()
    }
}

/// Sharpness of the classifier scaled by each `α`, on the correctly
/// classified samples of `batch`.
pub fn collapse_curve(
    net: &MlpNetwork,
    batch: &SampleBatch,
    alphas: &[f64],
) -> Result<CollapseCurve, CurvatureError> {
    if alphas.is_empty() || alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CurvatureError::InvalidArgument(
            "scales must be nonempty and strictly increasing".into(),
        ));
    }
    let k = net.classes();
    let mut samples = Vec::new();
    let mut excluded = 0;
    for i in 0..batch.len() {
        let (x, y) = batch.sample(i);
        let z = net.logits(x)?;
        let margin = (0..k)
            .filter(|j| *j != y)
            .map(|j| z[y] - z[j])
            .fold(f64::INFINITY, f64::min);
        if margin > 0.0 {
            samples.push(CollapseSample {
                sample_id: i,
                margin,
                trace: Vec::with_capacity(alphas.len()),
                bound: Vec::with_capacity(alphas.len()),
                confidence: Vec::with_capacity(alphas.len()),
                kappa_spectral: Vec::with_capacity(alphas.len()),
                kappa_frobenius: Vec::with_capacity(alphas.len()),
            });
        } else {
            excluded += 1;
        }
    }
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let scaled = net.scale_penultimate(alpha)?;
        let norms = ClassifierNorms::of(&scaled);
        for s in &mut samples {
            let (x, y) = batch.sample(s.sample_id);
            let probs = scaled.forward(x)?.probs;
            let rec = sample_sharpness(&scaled, &norms, s.sample_id, x, y)?;
            s.trace.push(probs.confidence_trace());
            s.bound
                .push(2.0 * (k - 1) as f64 * (-alpha * s.margin).exp());
            s.confidence.push(rec.confidence);
            s.kappa_spectral.push(rec.kappa_spectral);
            s.kappa_frobenius.push(rec.kappa_frobenius);
        }
        let n = samples.len().max(1) as f64;
        let last = |f: fn(&CollapseSample) -> &Vec<f64>| {
            samples
                .iter()
                .map(|s| *f(s).last().expect("pushed"))
                .sum::<f64>()
                / n
        };
        points.push(CollapsePoint {
            alpha,
            mean_trace: last(|s| &s.trace),
            mean_confidence: last(|s| &s.confidence),
            mean_kappa_spectral: last(|s| &s.kappa_spectral),
            mean_kappa_frobenius: last(|s| &s.kappa_frobenius),
        });
    }
    Ok(CollapseCurve {
        alphas: alphas.to_vec(),
        samples,
        points,
        excluded,
    })
}
