//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use flatlab::io::{load_dataset, DataSplit, RunConfig};
use flatlab::nn::{train_sgd, MlpNetwork};

/// The default toy experiment: 3-class Gaussians in the unit box and a
/// trained 2-16-16-3 ReLU network.
pub struct Toy {
    pub cfg: RunConfig,
    pub split: DataSplit,
    pub net: MlpNetwork,
}

pub fn toy() -> Toy {
    let cfg = RunConfig::default();
    let split = load_dataset(&cfg.data).expect("toy data");
    let dims = cfg.layer_dims(split.train.dim(), cfg.data.classes);
    let init = MlpNetwork::init(&dims, cfg.seed).unwrap();
    let net = train_sgd(&init, &split.train, &cfg.train).unwrap().network;
    Toy { cfg, split, net }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let l = log_sum_exp(z);
    z.iter().map(|v| (v - l).exp()).collect()
}

/// Cross-entropy of the linear classifier `w` (row-major `k × m`) at `φ`.
pub fn ce_linear(w: &[f64], k: usize, phi: &[f64], y: usize) -> f64 {
    let z = logits_linear(w, k, phi);
    log_sum_exp(&z) - z[y]
}

pub fn logits_linear(w: &[f64], k: usize, phi: &[f64]) -> Vec<f64> {
    let m = phi.len();
    (0..k)
        .map(|j| (0..m).map(|a| w[j * m + a] * phi[a]).sum())
        .collect()
}

/// `(diag p − ppᵀ) ⊗ φφᵀ`, written out entry by entry.
pub fn hessian_linear(w: &[f64], k: usize, phi: &[f64]) -> Vec<f64> {
    let m = phi.len();
    let p = softmax(&logits_linear(w, k, phi));
    let n = k * m;
    let mut h = vec![0.0; n * n];
    for j in 0..k {
        for l in 0..k {
            let c = if j == l {
                p[j] - p[j] * p[l]
            } else {
                -p[j] * p[l]
            };
            for a in 0..m {
                for b in 0..m {
                    h[(j * m + a) * n + l * m + b] = c * phi[a] * phi[b];
                }
            }
        }
    }
    h
}

/// Central second differences.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n * n];
    let mut p = x.to_vec();
    for i in 0..n {
        for j in 0..n {
            let mut e = |di: f64, dj: f64| {
                p.copy_from_slice(x);
                p[i] += di;
                p[j] += dj;
                f(&p)
            };
            out[i * n + j] = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
        }
    }
    out
}

/// `max |a − b| / max |b|`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale.max(1e-300)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut a = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[p * n + r];
                    let aqr = a[q * n + r];
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// `‖w‖₂` of a row-major `rows × cols` matrix via the eigenvalues of `wᵀw`.
pub fn spectral_norm_jacobi(w: &[f64], rows: usize, cols: usize) -> f64 {
    let mut g = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            g[i * cols + j] = (0..rows).map(|r| w[r * cols + i] * w[r * cols + j]).sum();
        }
    }
    jacobi_eigenvalues(&g, cols)
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt()
}

/// Root of an increasing function on `[lo, hi]` by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Average ranks, ties sharing the mean of their positions.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    (0..v.len())
        .map(|i| {
            let below = v.iter().filter(|x| **x < v[i]).count() as f64;
            let equal = v.iter().filter(|x| **x == v[i]).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}
