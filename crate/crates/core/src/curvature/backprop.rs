//! Exact layerwise Hessians of a piecewise-linear network.
//!
//! With the ReLU masks frozen, every layer after `l` is linear in `x^l`, so
//! the recurrence
//!
//! ```text
//! B^l     = D^l H^l D^l
//! H^{l-1} = W_lᵀ B^l W_l
//! H_{W_l} = (x^{l-1} x^{l-1}ᵀ) ⊗ B^l
//! ```
//!
//! is exact away from kinks. `H^l` is the Hessian in the output of layer `l`
//! and `H_{W_l}` is indexed by the column-stacked `vec(W_l)` (entry
//! `(r, c)` at `c·out + r`).

use crate::linalg::{dot, Matrix, SeededRng};
use crate::loss::LossKind;
use crate::nn::{ForwardCache, MlpNetwork};

use super::{hutchinson_trace, CurvatureError};

pub const DEFAULT_KINK_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCurvature {
    pub layer: usize,
    /// `H^l`, the Hessian in the layer output.
    pub hessian: Matrix,
    /// `g^l`, the gradient in the layer output.
    pub gradient: Vec<f64>,
    /// `D^l H^l D^l`, the Hessian in the pre-activation.
    pub pre_activation_hessian: Matrix,
    /// `H_{W_l}` over the column-stacked weights.
    pub weight_block: Matrix,
    /// Diagonal of `D^l`.
    pub mask: Vec<f64>,
}

impl LayerCurvature {
    /// `H_{W_l}` re-indexed to the row-stacked weights (entry `(r, c)` at
    /// `r·in + c`), the layout of the closed-form penultimate Hessian.
    pub fn weight_block_row_major(&self) -> Matrix {
        let out = self.mask.len();
        let n = self.weight_block.rows();
        let inp = n / out.max(1);
        let col_major = |i: usize| {
            let (r, c) = (i / inp, i % inp);
            c * out + r
        };
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, self.weight_block.get(col_major(i), col_major(j)));
            }
        }
        m
    }

    /// `tr H_{W_l} = ‖x^{l-1}‖² · tr(D^l H^l D^l)`.
    pub fn weight_trace(&self, input: &[f64]) -> f64 {
        dot(input, input) * self.pre_activation_hessian.trace().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackpropResult {
    /// One entry per layer, in forward order.
    pub layers: Vec<LayerCurvature>,
    /// Some ReLU pre-activation lies within the kink margin; finite-difference
    /// comparisons are not meaningful for this sample.
    pub near_kink: bool,
    pub min_margin: Option<f64>,
}

/// Layerwise curvature of `loss` at one labelled sample.
pub fn hessian_backprop(
    net: &MlpNetwork,
    x: &[f64],
    y: usize,
    loss: &LossKind,
) -> Result<BackpropResult, CurvatureError> {
    let (_, cache) = net.sample_loss(x, y, loss)?;
    let p = cache.probs.as_slice();
    let g = loss.logit_grad(p, y)?;
    let h = loss.logit_hessian(p, y)?;
    hessian_backprop_with(net, &cache, g, h, DEFAULT_KINK_MARGIN)
}

/// The recurrence started from an arbitrary logit gradient and Hessian.
pub fn hessian_backprop_with(
    net: &MlpNetwork,
    cache: &ForwardCache,
    logit_grad: Vec<f64>,
    logit_hessian: Matrix,
    kink_margin: f64,
) -> Result<BackpropResult, CurvatureError> {
    let k = net.classes();
    if logit_grad.len() != k || logit_hessian.shape() != (k, k) {
        return Err(CurvatureError::InvalidArgument(format!(
            "logit derivatives must have {k} classes"
        )));
    }
    let depth = net.depth();
    let mut out = Vec::with_capacity(depth);
    let mut h = logit_hessian;
    let mut g = logit_grad;
    for l in (0..depth).rev() {
        let layer = &net.layers()[l];
        let mask = cache.mask(net, l);
        let n = mask.len();
        let mut b = h.clone();
        for r in 0..n {
            for c in 0..n {
                let v = b.get(r, c) * mask[r] * mask[c];
                b.set(r, c, v);
            }
        }
        let input = &cache.inputs[l];
        let weight_block = Matrix::outer(input, input).kron(&b)?;
        let ga: Vec<f64> = g.iter().zip(&mask).map(|(gi, d)| gi * d).collect();
        let next_h = layer.weight.transpose().matmul(&b)?.matmul(&layer.weight)?;
        let next_g = layer.weight.matvec_transposed(&ga)?;
        out.push(LayerCurvature {
            layer: l,
            hessian: h,
            gradient: g,
            pre_activation_hessian: b,
            weight_block,
            mask,
        });
        h = next_h;
        g = next_g;
    }
    out.reverse();
    let min_margin = cache.min_relu_margin(net);
    Ok(BackpropResult {
        layers: out,
        near_kink: min_margin.is_some_and(|m| m < kink_margin),
        min_margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerTrace {
    pub layer: usize,
    pub exact: f64,
    pub estimate: f64,
}

/// Per-layer `tr H_{W_l}`, exactly and by Hutchinson with the matrix-free
/// product `V ↦ B^l V x xᵀ`.
pub fn layer_trace_estimates(
    net: &MlpNetwork,
    x: &[f64],
    y: usize,
    loss: &LossKind,
    probes: usize,
    rng: &SeededRng,
) -> Result<Vec<LayerTrace>, CurvatureError> {
    let bp = hessian_backprop(net, x, y, loss)?;
    let (_, cache) = net.sample_loss(x, y, loss)?;
    bp.layers
        .iter()
        .map(|lc| {
            let input = &cache.inputs[lc.layer];
            let (rows, cols) = (lc.mask.len(), input.len());
            let b = &lc.pre_activation_hessian;
            let hvp = |v: &[f64]| {
                // v is V flattened row by row; (V x) then B (V x) xᵀ.
                let v = Matrix::new(rows, cols, v.to_vec()).expect("probe shape");
                let vx = v.matvec(input).expect("dims");
                let bvx = b.matvec(&vx).expect("dims");
                Matrix::outer(&bvx, input).into_data()
            };
            let mut probe_rng = rng.derive(lc.layer as u64, 0);
            Ok(LayerTrace {
                layer: lc.layer,
                exact: lc.weight_trace(input),
                estimate: hutchinson_trace(hvp, rows * cols, probes, &mut probe_rng)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::penultimate_hessian;
    use crate::nn::{Activation, Layer};

    fn ce() -> LossKind {
        LossKind::CrossEntropy
    }

    #[test]
    fn single_linear_layer_base_case() {
        let w = Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.5], vec![-0.4, 0.2]]);
        let net = MlpNetwork::new(vec![Layer::new(w, None, Activation::Identity)]).unwrap();
        let x = [0.6, 0.7];
        let bp = hessian_backprop(&net, &x, 1, &ce()).unwrap();
        let cache = net.forward(&x).unwrap();
        let hz = ce().logit_hessian(cache.probs.as_slice(), 1).unwrap();
        let want = Matrix::outer(&x, &x).kron(&hz).unwrap();
        assert_eq!(bp.layers[0].weight_block, want);
    }

    #[test]
    fn classifier_block_matches_closed_form() {
        let net = MlpNetwork::init(&[3, 5, 4, 3], 21).unwrap();
        let x = [0.2, 0.9, 0.4];
        let bp = hessian_backprop(&net, &x, 2, &ce()).unwrap();
        let cache = net.forward(&x).unwrap();
        let closed = penultimate_hessian(&cache.probs, cache.features()).unwrap();
        let got = bp.layers.last().unwrap().weight_block_row_major();
        let diff = got.sub(&closed).unwrap().max_abs();
        assert!(diff <= 1e-10 * closed.max_abs());
    }

    #[test]
    fn zero_logit_hessian_collapses_everything() {
        let net = MlpNetwork::init(&[3, 4, 4, 2], 5).unwrap();
        let cache = net.forward(&[0.1, 0.5, 0.3]).unwrap();
        let bp = hessian_backprop_with(
            &net,
            &cache,
            vec![0.1, -0.1],
            Matrix::zeros(2, 2),
            DEFAULT_KINK_MARGIN,
        )
        .unwrap();
        for lc in &bp.layers {
            assert!(lc.hessian.is_zero());
            assert!(lc.weight_block.is_zero());
        }
    }

    #[test]
    fn layer_blocks_symmetric() {
        let net = MlpNetwork::init(&[4, 6, 5, 3], 8).unwrap();
        let bp = hessian_backprop(&net, &[0.3, 0.1, 0.8, 0.5], 0, &ce()).unwrap();
        for lc in &bp.layers {
            assert!(lc.hessian.asymmetry() <= 1e-10);
            assert!(lc.weight_block.asymmetry() <= 1e-10);
        }
    }

    #[test]
    fn hutchinson_layer_traces_close_to_exact() {
        let net = MlpNetwork::init(&[4, 6, 3], 8).unwrap();
        let rng = SeededRng::new(1, 6);
        let traces =
            layer_trace_estimates(&net, &[0.3, 0.1, 0.8, 0.5], 0, &ce(), 4000, &rng).unwrap();
        for t in traces {
            assert!(
                (t.estimate - t.exact).abs() <= 0.1 * t.exact.abs() + 1e-12,
                "{t:?}"
            );
        }
    }

    #[test]
    fn kink_flag() {
        // A hidden unit with pre-activation exactly zero.
        let net = MlpNetwork::new(vec![
            Layer::new(
                Matrix::from_rows(&[vec![1.0, -1.0], vec![1.0, 1.0]]),
                None,
                Activation::Relu,
            ),
            Layer::new(Matrix::identity(2), None, Activation::Identity),
        ])
        .unwrap();
        let bp = hessian_backprop(&net, &[0.5, 0.5], 0, &ce()).unwrap();
        assert!(bp.near_kink);
        assert_eq!(bp.min_margin, Some(0.0));
    }
}
