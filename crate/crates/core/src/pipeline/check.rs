//! Finite-difference and brute-force checks of the curvature code on seeded
//! random instances, as run by `hessian-check`.

use crate::curvature::{
    hessian_backprop, hessian_backprop_with, hutchinson_trace, penultimate_hessian,
    sample_sharpness, third_derivative_bound, third_derivative_tensor, ClassifierNorms,
};
use crate::linalg::{
    norm_inf, operator_norm, streams, unique_positive_cubic_root, CubicProblem, Matrix, SeededRng,
};
use crate::loss::{log_sum_exp, LossKind};
use crate::nn::{Activation, Layer, MlpNetwork, SoftmaxOutput};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub instances: usize,
    /// Instances left out, e.g. samples too close to a ReLU kink.
    pub skipped: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.instances > self.skipped && self.max_error < self.tolerance
    }
}

fn rel_err(approx: &[f64], exact: &[f64]) -> f64 {
    let scale = norm_inf(exact).max(1e-300);
    approx
        .iter()
        .zip(exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

fn ce(w: &[f64], k: usize, phi: &[f64], y: usize) -> f64 {
    let m = phi.len();
    let z: Vec<f64> = (0..k)
        .map(|j| (0..m).map(|a| w[j * m + a] * phi[a]).sum())
        .collect();
    log_sum_exp(&z) - z[y]
}

/// Central second differences of `f` at `x`.
fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    let mut p = x.to_vec();
    for i in 0..n {
        for j in 0..n {
            let mut eval = |di: f64, dj: f64| {
                p.copy_from_slice(x);
                p[i] += di;
                p[j] += dj;
                f(&p)
            };
            let v = eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h);
            out[i * n + j] = v / (4.0 * h * h);
        }
    }
    out
}

fn random_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.normal()).collect()
}

fn probs(w: &[f64], k: usize, phi: &[f64]) -> SoftmaxOutput {
    let m = phi.len();
    let z: Vec<f64> = (0..k)
        .map(|j| (0..m).map(|a| w[j * m + a] * phi[a]).sum())
        .collect();
    SoftmaxOutput::from_logits(&z)
}

/// Closed-form penultimate Hessian against finite differences, and the
/// sharpness trace identity on the same instances.
fn penultimate(seed: u64, n: usize) -> [CheckOutcome; 2] {
    let mut rng = SeededRng::new(seed, streams::ORACLE).derive(1, 0);
    let (mut fd_err, mut trace_err) = (0.0_f64, 0.0_f64);
    for _ in 0..n {
        let k = 2 + rng.index(4);
        let m = 1 + rng.index(8);
        let y = rng.index(k);
        let w = random_vec(&mut rng, k * m);
        let phi: Vec<f64> = (0..m).map(|_| rng.normal().abs() + 0.1).collect();
        let yhat = probs(&w, k, &phi);
        let h = penultimate_hessian(&yhat, &phi).expect("small instance");
        let fd = fd_hessian(&|v| ce(v, k, &phi, y), &w, 1e-4);
        fd_err = fd_err.max(rel_err(&fd, h.data()));

        // φ passes unchanged through an identity ReLU layer.
        let wm = Matrix::new(k, m, w.clone()).unwrap();
        let net = MlpNetwork::new(vec![
            Layer::new(Matrix::identity(m), None, Activation::Relu),
            Layer::new(wm.clone(), None, Activation::Identity),
        ])
        .unwrap();
        let rec = sample_sharpness(&net, &ClassifierNorms::of(&net), 0, &phi, y).unwrap();
        let expect = operator_norm(&wm) * h.trace().unwrap();
        trace_err = trace_err.max((rec.kappa_spectral - expect).abs() / expect.abs().max(1e-300));
    }
    [
        CheckOutcome {
            name: "penultimate_hessian_fd",
            instances: n,
            skipped: 0,
            max_error: fd_err,
            tolerance: 1e-4,
        },
        CheckOutcome {
            name: "sharpness_trace_identity",
            instances: n,
            skipped: 0,
            max_error: trace_err,
            tolerance: 1e-10,
        },
    ]
}

/// Layer blocks of the backpropagated Hessian against finite differences of
/// the loss in each weight matrix; with a zero logit Hessian every block
/// must vanish.
fn backprop(seed: u64, n: usize) -> [CheckOutcome; 2] {
    let mut rng = SeededRng::new(seed, streams::ORACLE).derive(2, 0);
    let loss = LossKind::CrossEntropy;
    let (mut err, mut skipped, mut zero_err) = (0.0_f64, 0, 0.0_f64);
    for i in 0..n {
        let dims: Vec<usize> = (0..4).map(|_| 2 + rng.index(7)).collect();
        let net = MlpNetwork::init(&dims, seed.wrapping_add(i as u64)).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.uniform()).collect();
        let y = rng.index(dims[3]);
        let bp = hessian_backprop(&net, &x, y, &loss).unwrap();
        let (_, cache) = net.sample_loss(&x, y, &loss).unwrap();
        let zero = hessian_backprop_with(
            &net,
            &cache,
            vec![0.0; dims[3]],
            Matrix::zeros(dims[3], dims[3]),
            0.0,
        )
        .unwrap();
        for lc in &zero.layers {
            zero_err = zero_err.max(lc.weight_block.max_abs());
        }
        if bp.near_kink || bp.min_margin.is_some_and(|m| m < 1e-3) {
            skipped += 1;
            continue;
        }
        for lc in &bp.layers {
            let l = lc.layer;
            let w0 = net.layers()[l].weight.data().to_vec();
            let f = |v: &[f64]| {
                let mut p = net.clone();
                p.layers_mut()[l].weight.data_mut().copy_from_slice(v);
                p.sample_loss(&x, y, &loss).unwrap().0
            };
            let fd = fd_hessian(&f, &w0, 1e-4);
            err = err.max(rel_err(&fd, lc.weight_block_row_major().data()));
        }
    }
    [
        CheckOutcome {
            name: "backprop_blocks_fd",
            instances: n,
            skipped,
            max_error: err,
            tolerance: 1e-3,
        },
        CheckOutcome {
            name: "backprop_zero_logit_hessian",
            instances: n,
            skipped: 0,
            max_error: zero_err,
            tolerance: f64::MIN_POSITIVE,
        },
    ]
}

/// Third-derivative tensor against differences of the closed-form Hessian,
/// and its entrywise bound.
fn third(seed: u64, n: usize) -> [CheckOutcome; 2] {
    let mut rng = SeededRng::new(seed, streams::ORACLE).derive(3, 0);
    let (mut err, mut over) = (0.0_f64, 0.0_f64);
    let h = 1e-5;
    for _ in 0..n {
        let k = 2 + rng.index(3);
        let m = 1 + rng.index(16 / k);
        let dim = k * m;
        let w = random_vec(&mut rng, dim);
        let phi = random_vec(&mut rng, m);
        let t = third_derivative_tensor(&probs(&w, k, &phi), &phi).unwrap();
        let mut fd = vec![0.0; dim * dim * dim];
        for o in 0..dim {
            let mut wp = w.clone();
            wp[o] += h;
            let mut wm = w.clone();
            wm[o] -= h;
            let hp = penultimate_hessian(&probs(&wp, k, &phi), &phi).unwrap();
            let hm = penultimate_hessian(&probs(&wm, k, &phi), &phi).unwrap();
            for i in 0..dim {
                for j in 0..dim {
                    fd[(i * dim + j) * dim + o] = (hp.get(i, j) - hm.get(i, j)) / (2.0 * h);
                }
            }
        }
        err = err.max(rel_err(&fd, t.data()));
        let bound = third_derivative_bound(k, m, norm_inf(&phi));
        over = over.max(t.max_abs() / bound);
    }
    [
        CheckOutcome {
            name: "third_derivative_fd",
            instances: n,
            skipped: 0,
            max_error: err,
            tolerance: 1e-3,
        },
        CheckOutcome {
            name: "third_derivative_bound",
            instances: n,
            skipped: 0,
            // Ratio to the bound; must stay at most 1.
            max_error: over,
            tolerance: 1.0 + 1e-12,
        },
    ]
}

/// Cubic root against bisection.
fn cubic(seed: u64, n: usize) -> CheckOutcome {
    let mut rng = SeededRng::new(seed, streams::ORACLE).derive(4, 0);
    let mut err = 0.0_f64;
    for _ in 0..n {
        let e = |rng: &mut SeededRng| 10f64.powf(rng.uniform_range(-4.0, 3.0));
        let p =
            CubicProblem::with_linear(e(&mut rng), e(&mut rng), e(&mut rng), e(&mut rng)).unwrap();
        let root = unique_positive_cubic_root(&p).root;
        let (mut lo, mut hi) = (0.0, p.upper_bound());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if p.eval(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        err = err.max((root - 0.5 * (lo + hi)).abs() / root.max(1e-300));
    }
    CheckOutcome {
        name: "cubic_root_bisection",
        instances: n,
        skipped: 0,
        max_error: err,
        tolerance: 1e-8,
    }
}

fn hutchinson_identity(seed: u64, n: usize) -> CheckOutcome {
    let mut err = 0.0_f64;
    for i in 0..n {
        let dim = 1 + i % 64;
        let mut rng = SeededRng::new(seed, streams::HUTCHINSON).derive(5, i as u64);
        let t = hutchinson_trace(|v| v.to_vec(), dim, 3, &mut rng).unwrap();
        err = err.max((t - dim as f64).abs());
    }
    CheckOutcome {
        name: "hutchinson_identity",
        instances: n,
        skipped: 0,
        max_error: err,
        tolerance: f64::MIN_POSITIVE,
    }
}

pub fn run_checks(seed: u64, instances: usize) -> Vec<CheckOutcome> {
    let n = instances.max(1);
    let mut out = Vec::new();
    out.extend(penultimate(seed, n));
    out.extend(backprop(seed, n));
    out.extend(third(seed, n));
    out.push(cubic(seed, 50 * n));
    out.push(hutchinson_identity(seed, n));
    out
}
