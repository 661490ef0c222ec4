use crate::linalg::{streams, SeededRng};
use crate::loss::LossKind;

use super::{MlpNetwork, NnError, SampleBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.1,
            weight_decay: 1e-4,
            seed: 0,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_size == 0 {
            return Err(NnError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NnError::InvalidConfig(
                "learning rate must be positive".into(),
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(NnError::InvalidConfig(
                "weight decay must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: MlpNetwork,
    /// Mean minibatch loss of each epoch.
    pub loss_curve: Vec<f64>,
    /// Full-batch training loss after the last epoch.
    pub final_loss: f64,
}

/// Plain minibatch SGD with L2 weight decay. The sample order of every epoch
/// is a fresh shuffle drawn from `(seed, SHUFFLE, epoch)`.
pub fn train_sgd(
    net: &MlpNetwork,
    data: &SampleBatch,
    config: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut net = net.clone();
    let root = SeededRng::new(config.seed, 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    for epoch in 0..config.epochs {
        let mut rng = root.derive(streams::SHUFFLE, epoch as u64);
        order.sort_unstable();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let grad = net.loss_and_grad_indices(data, &config.loss, chunk)?;
            if !grad.loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            epoch_loss += grad.loss;
            batches += 1;
            for (layer, (gw, gb)) in net
                .layers_mut()
                .iter_mut()
                .zip(grad.weights.iter().zip(&grad.biases))
            {
                for (w, g) in layer.weight.data_mut().iter_mut().zip(gw.data()) {
                    *w -= lr * (g + wd * *w);
                }
                if let (Some(b), Some(gb)) = (&mut layer.bias, gb) {
                    b.iter_mut().zip(gb).for_each(|(bv, g)| *bv -= lr * g);
                }
            }
            if net
                .layers()
                .iter()
                .any(|l| l.weight.data().iter().any(|v| !v.is_finite()))
            {
                return Err(NnError::Diverged { epoch });
            }
        }
        loss_curve.push(epoch_loss / batches as f64);
    }
    let final_loss = net.mean_loss(data, &config.loss)?;
    if !final_loss.is_finite() {
        return Err(NnError::Diverged {
            epoch: config.epochs,
        });
    }
    Ok(TrainOutcome {
        network: net,
        loss_curve,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> SampleBatch {
        let mut rng = SeededRng::new(11, 0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..40 {
            let y = i % 2;
            let base = if y == 0 { [0.8, 0.1] } else { [0.1, 0.8] };
            xs.push(vec![
                base[0] + 0.05 * rng.normal(),
                base[1] + 0.05 * rng.normal(),
            ]);
            ys.push(y);
        }
        SampleBatch::new(xs, ys).unwrap()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = MlpNetwork::init(&[2, 4, 2], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_sgd(&net, &toy(), &cfg).unwrap();
        assert_eq!(out.network, net);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let net = MlpNetwork::init(&[2, 6, 2], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let a = train_sgd(&net, &toy(), &cfg).unwrap();
        let b = train_sgd(&net, &toy(), &cfg).unwrap();
        for (la, lb) in a.network.layers().iter().zip(b.network.layers()) {
            let ba: Vec<u64> = la.weight.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = lb.weight.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn divergence_reports_epoch() {
        let net = MlpNetwork::init(&[2, 6, 2], 3).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e200,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_sgd(&net, &toy(), &cfg),
            Err(NnError::Diverged { .. }) | Err(NnError::NonFinite { .. })
        ));
    }

    #[test]
    fn invalid_config() {
        let net = MlpNetwork::init(&[2, 2], 3).unwrap();
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_sgd(&net, &toy(), &cfg),
            Err(NnError::InvalidConfig(_))
        ));
    }
}
