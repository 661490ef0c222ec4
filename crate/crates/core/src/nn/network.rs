use crate::linalg::{norm2, streams, Matrix, SeededRng};
use crate::loss::{log_sum_exp, LossKind};

use super::{NnError, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }

    /// Derivative gate; ReLU'(0) is taken as 0.
    #[inline]
    pub fn gate(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    #[inline]
    pub fn apply(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => pre.max(0.0),
            Activation::Identity => pre,
        }
    }
}

/// One dense layer `x ↦ act(Wx + b)` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Option<Vec<f64>>, activation: Activation) -> Self {
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Probability vector produced by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOutput(Vec<f64>);

impl SoftmaxOutput {
    /// Accepts any vector with entries in `[0, 1]` summing to 1 within `1e-9`.
    pub fn new(p: Vec<f64>) -> Result<Self, NnError> {
        let sum: f64 = p.iter().sum();
        if p.is_empty()
            || p.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
            || (sum - 1.0).abs() > 1e-9
        {
            return Err(NnError::NotSimplex { sum });
        }
        Ok(Self(p))
    }

    /// Max-subtracted softmax of logits.
    pub fn from_logits(z: &[f64]) -> Self {
        let lse = log_sum_exp(z);
        Self(z.iter().map(|v| (v - lse).exp()).collect())
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `1 − ŷ_j` computed as the sum of the other entries, which stays
    /// accurate when `ŷ_j` rounds to 1.
    pub fn complement(&self, j: usize) -> f64 {
        self.0
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, p)| p)
            .sum()
    }

    /// `Σ_j ŷ_j(1 − ŷ_j)`, the trace of `diag(ŷ) − ŷŷᵀ`.
    pub fn confidence_trace(&self) -> f64 {
        (0..self.0.len())
            .map(|j| self.0[j] * self.complement(j))
            .sum()
    }
}

/// Everything a single forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `x^{l-1}`, the input to layer `l` (index 0 is the network input).
    pub inputs: Vec<Vec<f64>>,
    /// `a^l = W_l x^{l-1} + b_l`.
    pub pre_activations: Vec<Vec<f64>>,
    pub probs: SoftmaxOutput,
}

impl ForwardCache {
    /// `φ(x)`, the input of the classifier layer.
    pub fn features(&self) -> &[f64] {
        self.inputs.last().expect("at least one layer")
    }

    pub fn logits(&self) -> &[f64] {
        self.pre_activations.last().expect("at least one layer")
    }

    /// Active-unit mask `1[a^l > 0]` of layer `l`, as 0/1 values. Identity
    /// layers are fully active.
    pub fn mask(&self, net: &MlpNetwork, l: usize) -> Vec<f64> {
        let act = net.layers()[l].activation;
        self.pre_activations[l]
            .iter()
            .map(|a| act.gate(*a))
            .collect()
    }

    /// Smallest `|a^l_i|` over ReLU units, if any.
    pub fn min_relu_margin(&self, net: &MlpNetwork) -> Option<f64> {
        net.layers()
            .iter()
            .zip(&self.pre_activations)
            .filter(|(layer, _)| layer.activation == Activation::Relu)
            .flat_map(|(_, a)| a.iter().map(|v| v.abs()))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v))))
    }
}

/// Feed-forward network `f(x) = softmax(w φ(x))`. The last layer is the
/// identity-activated classifier `w` (`k × m`); all preceding layers form the
/// feature extractor `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
}

/// Per-layer gradients of a scalar loss.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Option<Vec<f64>>>,
}

impl MlpNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyNetwork);
        }
        for (l, layer) in layers.iter().enumerate() {
            if let Some(b) = &layer.bias {
                if b.len() != layer.out_dim() {
                    return Err(NnError::Dimension {
                        layer: l,
                        detail: format!("bias length {} vs {} outputs", b.len(), layer.out_dim()),
                    });
                }
                if b.iter().any(|v| !v.is_finite()) {
                    return Err(NnError::NonFinite { layer: l });
                }
            }
            if l > 0 && layers[l - 1].out_dim() != layer.in_dim() {
                return Err(NnError::Dimension {
                    layer: l,
                    detail: format!(
                        "expects {} inputs but layer {} emits {}",
                        layer.in_dim(),
                        l - 1,
                        layers[l - 1].out_dim()
                    ),
                });
            }
        }
        let last = layers.len() - 1;
        if layers[last].activation != Activation::Identity {
            return Err(NnError::Dimension {
                layer: last,
                detail: "classifier layer must be identity-activated".into(),
            });
        }
        if layers[last].out_dim() < 2 {
            return Err(NnError::Dimension {
                layer: last,
                detail: "classifier needs at least two classes".into(),
            });
        }
        Ok(Self { layers })
    }

    /// He-initialized bias-free ReLU network with layer widths `dims`
    /// (`dims[0]` inputs, `dims.last()` classes).
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, NnError> {
        Self::init_with_bias(dims, seed, false)
    }

    pub fn init_with_bias(dims: &[usize], seed: u64, bias: bool) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::EmptyNetwork);
        }
        let root = SeededRng::new(seed, 0);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let mut rng = root.derive(streams::INIT, l as u64);
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let last = l + 1 == n;
                let std = if last {
                    (1.0 / fan_in as f64).sqrt()
                } else {
                    (2.0 / fan_in as f64).sqrt()
                };
                let data = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
                let weight = Matrix::new(fan_out, fan_in, data).expect("finite init");
                let act = if last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Layer::new(weight, bias.then(|| vec![0.0; fan_out]), act)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Class count `k`.
    pub fn classes(&self) -> usize {
        self.classifier().out_dim()
    }

    /// Penultimate feature dimension `m`.
    pub fn feature_dim(&self) -> usize {
        self.classifier().in_dim()
    }

    pub fn classifier(&self) -> &Layer {
        self.layers.last().expect("validated non-empty")
    }

    /// The layers forming `φ` (possibly none, in which case `φ` is the identity).
    pub fn feature_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn has_bias(&self) -> bool {
        self.layers.iter().any(|l| l.bias.is_some())
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache, NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::InputDimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = layer.weight.matvec(&current).expect("validated dims");
            if let Some(b) = &layer.bias {
                a.iter_mut().zip(b).for_each(|(ai, bi)| *ai += bi);
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite { layer: l });
            }
            let next = a.iter().map(|v| layer.activation.apply(*v)).collect();
            inputs.push(std::mem::replace(&mut current, next));
            pre_activations.push(a);
        }
        let probs = SoftmaxOutput::from_logits(&current);
        Ok(ForwardCache {
            inputs,
            pre_activations,
            probs,
        })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(x)?.pre_activations.pop().expect("non-empty"))
    }

    /// `φ(x)`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(x)?.inputs.pop().expect("non-empty"))
    }

    /// Argmax of the logits; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize, NnError> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Copy with the classifier (and its bias) multiplied by `s > 0`.
    pub fn scale_penultimate(&self, s: f64) -> Result<MlpNetwork, NnError> {
        if !(s.is_finite() && s > 0.0) {
            return Err(NnError::InvalidScale(s));
        }
        let mut out = self.clone();
        let clf = out.layers.last_mut().expect("non-empty");
        clf.weight = clf.weight.scale(s);
        if let Some(b) = &mut clf.bias {
            b.iter_mut().for_each(|v| *v *= s);
        }
        Ok(out)
    }

    /// Loss of one sample together with its cache.
    pub fn sample_loss(
        &self,
        x: &[f64],
        y: usize,
        loss: &LossKind,
    ) -> Result<(f64, ForwardCache), NnError> {
        self.check_label(y)?;
        let cache = self.forward(x)?;
        let value = loss.value_from_logits(cache.logits(), cache.probs.as_slice(), y)?;
        Ok((value, cache))
    }

    fn check_label(&self, y: usize) -> Result<(), NnError> {
        if y >= self.classes() {
            return Err(NnError::LabelOutOfRange {
                label: y,
                classes: self.classes(),
            });
        }
        Ok(())
    }

    /// Gradient of one sample's loss with respect to the input.
    pub fn input_gradient(
        &self,
        x: &[f64],
        y: usize,
        loss: &LossKind,
    ) -> Result<(f64, Vec<f64>, ForwardCache), NnError> {
        let (value, cache) = self.sample_loss(x, y, loss)?;
        let mut delta = loss.logit_grad(cache.probs.as_slice(), y)?;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            delta
                .iter_mut()
                .zip(&cache.pre_activations[l])
                .for_each(|(d, a)| *d *= layer.activation.gate(*a));
            delta = layer
                .weight
                .matvec_transposed(&delta)
                .expect("validated dims");
        }
        Ok((value, delta, cache))
    }

    /// Batch-mean loss and per-layer gradients via backprop.
    pub fn loss_and_grad(&self, batch: &SampleBatch, loss: &LossKind) -> Result<LossGrad, NnError> {
        self.loss_and_grad_indices(batch, loss, &(0..batch.len()).collect::<Vec<_>>())
    }

    pub(crate) fn loss_and_grad_indices(
        &self,
        batch: &SampleBatch,
        loss: &LossKind,
        indices: &[usize],
    ) -> Result<LossGrad, NnError> {
        if indices.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut weights: Vec<Matrix> = self
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
            .collect();
        let mut biases: Vec<Option<Vec<f64>>> = self
            .layers
            .iter()
            .map(|l| l.bias.as_ref().map(|b| vec![0.0; b.len()]))
            .collect();
        let mut total = 0.0;
        for &i in indices {
            let (x, y) = batch.sample(i);
            let (value, cache) = self.sample_loss(x, y, loss)?;
            total += value;
            let mut delta = loss.logit_grad(cache.probs.as_slice(), y)?;
            for l in (0..self.layers.len()).rev() {
                let layer = &self.layers[l];
                delta
                    .iter_mut()
                    .zip(&cache.pre_activations[l])
                    .for_each(|(d, a)| *d *= layer.activation.gate(*a));
                let input = &cache.inputs[l];
                let gw = &mut weights[l];
                for (r, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (c, xv) in input.iter().enumerate() {
                        gw.add_at(r, c, d * xv);
                    }
                }
                if let Some(gb) = &mut biases[l] {
                    gb.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
                }
                if l > 0 {
                    delta = layer
                        .weight
                        .matvec_transposed(&delta)
                        .expect("validated dims");
                }
            }
        }
        let n = indices.len() as f64;
        for w in &mut weights {
            w.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        for b in biases.iter_mut().flatten() {
            b.iter_mut().for_each(|v| *v /= n);
        }
        Ok(LossGrad {
            loss: total / n,
            weights,
            biases,
        })
    }

    /// Batch-mean loss only.
    pub fn mean_loss(&self, batch: &SampleBatch, loss: &LossKind) -> Result<f64, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut total = 0.0;
        for i in 0..batch.len() {
            let (x, y) = batch.sample(i);
            total += self.sample_loss(x, y, loss)?.0;
        }
        Ok(total / batch.len() as f64)
    }

    pub fn accuracy(&self, batch: &SampleBatch) -> Result<f64, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let mut hits = 0usize;
        for i in 0..batch.len() {
            let (x, y) = batch.sample(i);
            if self.predict(x)? == y {
                hits += 1;
            }
        }
        Ok(hits as f64 / batch.len() as f64)
    }

    /// `max_i |φ(0)_i|`; zero for bias-free ReLU feature extractors.
    pub fn feature_offset(&self) -> Result<f64, NnError> {
        let zero = vec![0.0; self.input_dim()];
        Ok(self
            .features(&zero)?
            .iter()
            .fold(0.0, |m, v| m.max(v.abs())))
    }

    pub fn feature_norm(&self, x: &[f64]) -> Result<f64, NnError> {
        Ok(norm2(&self.features(x)?))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(rows: Vec<Vec<f64>>) -> MlpNetwork {
        MlpNetwork::new(vec![Layer::new(
            Matrix::from_rows(&rows),
            None,
            Activation::Identity,
        )])
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let net = linear(vec![vec![0.0; 3]; 4]);
        let c = net.forward(&[0.3, -1.0, 2.0]).unwrap();
        for p in c.probs.as_slice() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn single_layer_matches_softmax() {
        let net = linear(vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]]);
        let x = [0.4, -0.2];
        let z = [1.0 * 0.4 - 0.4, -0.4 - 0.1, -0.6];
        let denom: f64 = z.iter().map(|v: &f64| v.exp()).sum();
        let c = net.forward(&x).unwrap();
        for (p, zi) in c.probs.as_slice().iter().zip(z) {
            assert!((p - zi.exp() / denom).abs() < 1e-15);
        }
        assert_eq!(c.features(), &x);
    }

    #[test]
    fn tie_break_and_argmax() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn scale_checks() {
        let net = MlpNetwork::init(&[3, 4, 2], 1).unwrap();
        assert_eq!(net.scale_penultimate(1.0).unwrap(), net);
        assert!(matches!(
            net.scale_penultimate(0.0),
            Err(NnError::InvalidScale(_))
        ));
        assert!(net.scale_penultimate(-2.0).is_err());
    }

    #[test]
    fn dimension_errors_name_layer() {
        let l0 = Layer::new(Matrix::zeros(4, 3), None, Activation::Relu);
        let l1 = Layer::new(Matrix::zeros(2, 5), None, Activation::Identity);
        match MlpNetwork::new(vec![l0, l1]) {
            Err(NnError::Dimension { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bias_free_relu_maps_zero_to_zero() {
        let net = MlpNetwork::init(&[5, 8, 8, 3], 4).unwrap();
        assert_eq!(net.feature_offset().unwrap(), 0.0);
    }

    #[test]
    fn confident_prediction_has_vanishing_classifier_grad() {
        let net = linear(vec![vec![800.0, 0.0], vec![-800.0, 0.0]]);
        let batch = SampleBatch::new(vec![vec![1.0, 0.0]], vec![0]).unwrap();
        let g = net.loss_and_grad(&batch, &LossKind::CrossEntropy).unwrap();
        assert_eq!(g.weights[0].max_abs(), 0.0);
    }

    #[test]
    fn single_sample_classifier_grad_closed_form() {
        let net = MlpNetwork::init(&[3, 5, 4], 8).unwrap();
        let x = vec![0.2, 0.5, 0.1];
        let y = 2;
        let batch = SampleBatch::new(vec![x.clone()], vec![y]).unwrap();
        let g = net.loss_and_grad(&batch, &LossKind::CrossEntropy).unwrap();
        let cache = net.forward(&x).unwrap();
        let phi = cache.features();
        for j in 0..4 {
            let r = cache.probs.as_slice()[j] - if j == y { 1.0 } else { 0.0 };
            for (a, f) in phi.iter().enumerate() {
                assert!((g.weights[1].get(j, a) - r * f).abs() < 1e-15);
            }
        }
    }
}
