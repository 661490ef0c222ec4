//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use common::*;
use flatlab::analysis::{basin_report, scale_sweep, stump_detector_cv, trajectory_metrics};
use flatlab::curvature::{
    collapse_curve, hessian_backprop, hessian_backprop_with, hutchinson_trace,
    loss_curvature_terms, penultimate_hessian, sample_sharpness, third_derivative_bound,
    third_derivative_tensor, ClassifierNorms,
};
use flatlab::io::RunConfig;
use flatlab::linalg::{Matrix, SeededRng};
use flatlab::loss::LossKind;
use flatlab::nn::{Activation, Layer, MlpNetwork, SampleBatch, SoftmaxOutput};
use flatlab::pipeline::{run_subcommand, Subcommand};
use flatlab::robustness::{
    certified_radius, certify_sample, lipschitz_estimate, pgd_attack, AttackConfig, AttackNorm,
};

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Instance {
    k: usize,
    m: usize,
    y: usize,
    w: Vec<f64>,
    phi: Vec<f64>,
}

fn instances() -> Vec<Instance> {
    let mut rng = SeededRng::new(2024, 100);
    (0..20)
        .map(|_| {
            let k = 2 + rng.index(4);
            let m = 1 + rng.index(8);
            Instance {
                k,
                m,
                y: rng.index(k),
                w: (0..k * m).map(|_| rng.normal()).collect(),
                phi: (0..m).map(|_| rng.uniform_range(0.1, 1.5)).collect(),
            }
        })
        .collect()
}

fn probs(inst: &Instance) -> SoftmaxOutput {
    SoftmaxOutput::new(softmax(&logits_linear(&inst.w, inst.k, &inst.phi))).unwrap()
}

fn c01_penultimate_hessian() -> Outcome {
    let mut worst = 0.0_f64;
    for inst in instances() {
        let h = penultimate_hessian(&probs(&inst), &inst.phi).unwrap();
        let fd = fd_hessian(&|w| ce_linear(w, inst.k, &inst.phi, inst.y), &inst.w, 1e-4);
        worst = worst.max(max_rel_err(&fd, h.data()));
    }
    verdict(
        worst < 1e-4,
        format!("max relative error {worst:.3e} over 20 instances"),
    )
}

fn c02_trace_identity() -> Outcome {
    let mut worst = 0.0_f64;
    for inst in instances() {
        // An identity ReLU layer passes the positive φ through unchanged.
        let net = MlpNetwork::new(vec![
            Layer::new(Matrix::identity(inst.m), None, Activation::Relu),
            Layer::new(
                Matrix::new(inst.k, inst.m, inst.w.clone()).unwrap(),
                None,
                Activation::Identity,
            ),
        ])
        .unwrap();
        let rec = sample_sharpness(&net, &ClassifierNorms::of(&net), 0, &inst.phi, inst.y).unwrap();
        let h = hessian_linear(&inst.w, inst.k, &inst.phi);
        let n = inst.k * inst.m;
        let trace: f64 = (0..n).map(|i| h[i * n + i]).sum();
        let expect = spectral_norm_jacobi(&inst.w, inst.k, inst.m) * trace;
        worst = worst.max((rec.kappa_spectral - expect).abs() / expect);
    }
    verdict(worst < 1e-10, format!("max relative error {worst:.3e}"))
}

fn c03_recurrence() -> Outcome {
    let mut rng = SeededRng::new(77, 100);
    let loss = LossKind::CrossEntropy;
    let (mut worst, mut compared, mut kinks, mut nonzero) = (0.0_f64, 0, 0, 0);
    for i in 0..20 {
        let dims: Vec<usize> = (0..4).map(|_| 2 + rng.index(7)).collect();
        let net = MlpNetwork::init(&dims, 500 + i).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.uniform()).collect();
        let y = rng.index(dims[3]);
        let (_, cache) = net.sample_loss(&x, y, &loss).unwrap();
        let k = dims[3];
        let zero =
            hessian_backprop_with(&net, &cache, vec![0.0; k], Matrix::zeros(k, k), 1e-6).unwrap();
        nonzero += zero
            .layers
            .iter()
            .filter(|l| !l.weight_block.is_zero())
            .count();
        let bp = hessian_backprop(&net, &x, y, &loss).unwrap();
        if bp.min_margin.is_some_and(|m| m < 1e-3) {
            kinks += 1;
            continue;
        }
        compared += 1;
        for lc in &bp.layers {
            let l = lc.layer;
            let w0 = net.layers()[l].weight.data().to_vec();
            let f = |v: &[f64]| {
                let mut p = net.clone();
                p.layers_mut()[l].weight.data_mut().copy_from_slice(v);
                p.sample_loss(&x, y, &loss).unwrap().0
            };
            let fd = fd_hessian(&f, &w0, 1e-4);
            worst = worst.max(max_rel_err(&fd, lc.weight_block_row_major().data()));
        }
    }
    verdict(
        worst < 1e-3 && nonzero == 0 && compared >= 10,
        format!("max relative error {worst:.3e} on {compared} nets ({kinks} near kinks), {nonzero} nonzero blocks with zero logit Hessian"),
    )
}

fn c04_third_derivative() -> Outcome {
    let mut rng = SeededRng::new(91, 100);
    let (mut worst, mut ratio) = (0.0_f64, 0.0_f64);
    let h = 1e-5;
    for _ in 0..20 {
        let k = 2 + rng.index(3);
        let m = 1 + rng.index(16 / k);
        let n = k * m;
        let w: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let phi: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
        let p = SoftmaxOutput::new(softmax(&logits_linear(&w, k, &phi))).unwrap();
        let t = third_derivative_tensor(&p, &phi).unwrap();
        let mut fd = vec![0.0; n * n * n];
        for o in 0..n {
            let mut wp = w.clone();
            wp[o] += h;
            let mut wm = w.clone();
            wm[o] -= h;
            let (hp, hm) = (hessian_linear(&wp, k, &phi), hessian_linear(&wm, k, &phi));
            for ij in 0..n * n {
                fd[ij * n + o] = (hp[ij] - hm[ij]) / (2.0 * h);
            }
        }
        worst = worst.max(max_rel_err(&fd, t.data()));
        let lp = phi.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        ratio = ratio.max(t.max_abs() / third_derivative_bound(k, m, lp));
    }
    verdict(
        worst < 1e-3 && ratio <= 1.0,
        format!("max relative error {worst:.3e}, largest entry / bound {ratio:.3}"),
    )
}

fn c05_cubic_certificate() -> Outcome {
    let mut rng = SeededRng::new(5, 100);
    let (mut residual, mut bis, mut limit) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut monotone_breaks = 0;
    let logu = |rng: &mut SeededRng, a: f64, b: f64| 10f64.powf(rng.uniform_range(a, b));
    for _ in 0..1000 {
        let kappa = logu(&mut rng, -3.0, 2.0);
        let k = 2 + rng.index(9);
        let m = 1 + rng.index(64);
        let l = logu(&mut rng, -1.0, 1.0);
        let r = logu(&mut rng, -1.0, 1.0);
        let eps = logu(&mut rng, -3.0, 0.0);
        let c = certified_radius(eps, kappa, k, m, l, r).unwrap();
        let a = (k * m) as f64 * l.powi(3) / 24.0;
        let f = |d: f64| a * d * d * d + 0.5 * kappa * d * d - eps;
        residual = residual.max(c.cubic_residual).max(f(c.delta_feature).abs());
        let root = bisect(f, 0.0, (eps / a).cbrt());
        bis = bis.max((root - c.delta_feature).abs() / root);

        let zero = certified_radius(eps, 0.0, k, m, l, r).unwrap().delta_cert;
        let closed = r / l * (24.0 * eps / ((k * m) as f64 * l.powi(3))).cbrt();
        let near = certified_radius(eps, 1e-15, k, m, l, r).unwrap().delta_cert;
        limit = limit
            .max((zero - closed).abs() / closed)
            .max((near - closed).abs() / closed);

        let d = c.delta_cert;
        let rad = |e: f64, kp: f64, k: usize, m: usize, l: f64, r: f64| {
            certified_radius(e, kp, k, m, l, r).unwrap().delta_cert
        };
        let checks = [
            rad(eps * 1.1, kappa, k, m, l, r) > d,
            rad(eps, kappa * 1.1, k, m, l, r) < d,
            rad(eps, kappa, k + 1, m, l, r) < d,
            rad(eps, kappa, k, m + 1, l, r) < d,
            rad(eps, kappa, k, m, l * 1.1, r) < d,
            rad(eps, kappa, k, m, l, r * 1.1) > d,
        ];
        monotone_breaks += checks.iter().filter(|ok| !**ok).count();
    }
    verdict(
        residual < 1e-9 && bis < 1e-8 && limit < 1e-9 && monotone_breaks == 0,
        format!("residual {residual:.2e}, bisection gap {bis:.2e}, κ→0 gap {limit:.2e}, {monotone_breaks} monotonicity breaks"),
    )
}

fn c06_soundness(toy: &Toy) -> Outcome {
    let eps = toy.cfg.cert_epsilon;
    let test = &toy.split.test;
    let n = test.len().min(200);
    let lip = lipschitz_estimate(&toy.net, test, 2000, 0).unwrap().upper;
    let norms = ClassifierNorms::of(&toy.net);
    let (mut violations, mut worst, mut certified) = (0, 0.0_f64, 0);
    for i in 0..n {
        let (x, y) = test.sample(i);
        let cert = match certify_sample(&toy.net, &norms, i, x, y, eps, lip, true) {
            Ok(c) => c,
            Err(_) => continue,
        };
        certified += 1;
        let one = SampleBatch::new(vec![x.to_vec()], vec![y]).unwrap();
        for random_start in [false, true] {
            let attack = AttackConfig {
                norm: AttackNorm::L2,
                epsilon: cert.delta_cert,
                step_size: cert.delta_cert / 10.0,
                steps: 60,
                seed: i as u64,
                random_start,
                record_trajectory: false,
            };
            let t = &pgd_attack(&toy.net, &one, &attack).unwrap()[0];
            let inc = t.max_loss_increase();
            worst = worst.max(inc / eps);
            if inc > eps {
                violations += 1;
            }
        }
    }
    verdict(
        violations == 0 && certified >= 200,
        format!("{certified} certified samples, {violations} violations, largest increase / ε = {worst:.3e}"),
    )
}

fn c07_collapse(toy: &Toy) -> Outcome {
    let alphas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    let c = collapse_curve(&toy.net, &toy.split.test, &alphas).unwrap();
    let k = toy.net.classes();
    let w = toy.net.classifier().weight.data();
    let wn = spectral_norm_jacobi(w, k, toy.net.feature_dim());
    let mut breaches = 0;
    let (mut kappa1, mut kappa64) = (0.0, 0.0);
    for s in &c.samples {
        let (x, y) = toy.split.test.sample(s.sample_id);
        let z = toy.net.logits(x).unwrap();
        let phi = toy.net.features(x).unwrap();
        let phi2: f64 = phi.iter().map(|v| v * v).sum();
        let margin = (0..k)
            .filter(|j| *j != y)
            .map(|j| z[y] - z[j])
            .fold(f64::INFINITY, f64::min);
        for &a in &alphas {
            let za: Vec<f64> = z.iter().map(|v| a * v).collect();
            let p = softmax(&za);
            // 1 − p_j as the sum of the other entries; the direct
            // difference rounds to 0 once p_y is within an ulp of 1.
            let trace: f64 = (0..k)
                .map(|j| p[j] * (0..k).filter(|i| *i != j).map(|i| p[i]).sum::<f64>())
                .sum();
            if trace > 2.0 * (k - 1) as f64 * (-a * margin).exp() {
                breaches += 1;
            }
            if a == 1.0 {
                kappa1 += wn * trace * phi2;
            }
            if a == 64.0 {
                kappa64 += 64.0 * wn * trace * phi2;
            }
        }
    }
    let ratio = kappa64 / kappa1;
    let lib_ratio = c.points[6].mean_kappa_spectral / c.points[0].mean_kappa_spectral;
    verdict(
        c.samples.len() >= 100
            && breaches == 0
            && c.envelope_violations() == 0
            && ratio < 1e-6
            && lib_ratio < 1e-6
            && (ratio - lib_ratio).abs() < 1e-6 * lib_ratio,
        format!(
            "{} samples, {breaches} envelope breaches, κ(64)/κ(1) = {ratio:.3e} (library {lib_ratio:.3e})",
            c.samples.len()
        ),
    )
}

fn c08_scaling(toy: &Toy) -> Outcome {
    let scales = [0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 50.0];
    let test = &toy.split.test;
    let r = scale_sweep(&toy.net, &scales, &toy.cfg.attack, test).unwrap();
    let mut changed = 0;
    for &s in &scales {
        let scaled = toy.net.scale_penultimate(s).unwrap();
        for x in test.inputs() {
            if scaled.predict(x).unwrap() != toy.net.predict(x).unwrap() {
                changed += 1;
            }
        }
    }
    let transfer_ok = r.entries.iter().all(|e| e.transfer_rate == Some(1.0));
    let robust: Vec<f64> = r.entries.iter().map(|e| e.robust_accuracy).collect();
    let monotone = robust.windows(2).all(|w| w[1] >= w[0]);
    verdict(
        changed == 0 && transfer_ok && monotone && r.baseline_adversarials > 0,
        format!(
            "{changed} changed predictions, transfer all 1: {transfer_ok}, {} adversarials, robust accuracy {:?}",
            r.baseline_adversarials,
            robust.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn c09_uncanny_valley(toy: &Toy) -> Outcome {
    let tr = pgd_attack(&toy.net, &toy.split.test, &toy.cfg.attack).unwrap();
    let s = trajectory_metrics(&tr, 10);
    let frac = s.peak_then_decay_fraction.unwrap_or(0.0);
    verdict(
        toy.cfg.attack.steps >= 10 && frac >= 0.7,
        format!(
            "peak-then-decay in {frac:.3} of {} flipped trajectories",
            s.eligible
        ),
    )
}

fn c10_basin(toy: &Toy) -> Outcome {
    let tr = pgd_attack(&toy.net, &toy.split.test, &toy.cfg.attack).unwrap();
    let k0: Vec<f64> = tr.iter().map(|t| t.points[0].kappa_spectral).collect();
    let rep = basin_report(&tr, &k0, toy.cfg.tau).unwrap();
    let (xs, ys): (Vec<f64>, Vec<f64>) = rep
        .entries
        .iter()
        .filter_map(|e| e.width().map(|w| (e.kappa_clean, w as f64)))
        .unzip();
    let rho = pearson(&ranks(&xs), &ranks(&ys));
    let lib = rep.spearman.map_or(f64::NAN, |s| s.rho);
    verdict(
        rep.defined >= 100 && rho < 0.0 && (lib - rho).abs() < 1e-12,
        format!(
            "ρ = {rho:.4} over {} defined take-offs (library {lib:.4})",
            rep.defined
        ),
    )
}

fn c11_detector(toy: &Toy) -> Outcome {
    let tr = pgd_attack(&toy.net, &toy.split.test, &toy.cfg.attack).unwrap();
    let (mut values, mut labels) = (Vec::new(), Vec::new());
    for t in &tr {
        if t.points[0].predicted != t.label {
            continue;
        }
        if let Some(p) = t.points.iter().rev().find(|p| p.predicted != t.label) {
            values.extend([t.points[0].kappa_spectral, p.kappa_spectral]);
            labels.extend([false, true]);
        }
    }
    let real = stump_detector_cv(&values, &labels, 5, 0).unwrap();
    let mut permuted = labels.clone();
    SeededRng::new(0, 200).shuffle(&mut permuted);
    let chance = stump_detector_cv(&values, &permuted, 5, 0).unwrap();
    verdict(
        real.mean_accuracy > 0.7 && chance.mean_accuracy < 0.6,
        format!(
            "accuracy {:.3} on {} pairs, {:.3} on permuted labels",
            real.mean_accuracy,
            values.len() / 2,
            chance.mean_accuracy
        ),
    )
}

fn c12_hutchinson() -> Outcome {
    let mut worst = 0.0_f64;
    let mut rng = SeededRng::new(12, 100);
    for (i, &n) in [8usize, 16, 24, 32, 48, 64].iter().enumerate() {
        let b: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                a[r * n + c] = (0..n).map(|t| b[t * n + r] * b[t * n + c]).sum();
            }
        }
        let exact: f64 = (0..n).map(|d| a[d * n + d]).sum();
        let mut probe_rng = SeededRng::new(12, 300 + i as u64);
        let est = hutchinson_trace(
            |v| {
                (0..n)
                    .map(|r| (0..n).map(|c| a[r * n + c] * v[c]).sum())
                    .collect()
            },
            n,
            1000,
            &mut probe_rng,
        )
        .unwrap();
        worst = worst.max((est - exact).abs() / exact);
    }
    let mut probe_rng = SeededRng::new(12, 400);
    let id = hutchinson_trace(|v| v.to_vec(), 37, 5, &mut probe_rng).unwrap();
    verdict(
        worst < 0.05 && id == 37.0,
        format!("max relative error {worst:.4}, identity trace {id}"),
    )
}

fn c13_loss_terms() -> Outcome {
    let mut rng = SeededRng::new(13, 100);
    let mut worst = 0.0_f64;
    let mut flag_mismatch = 0;
    for _ in 0..100 {
        let k = 2 + rng.index(5);
        let raw: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.05, 1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let y = rng.index(k);
        let qr: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.05, 1.0)).collect();
        let qs: f64 = qr.iter().sum();
        let q: Vec<f64> = qr.iter().map(|v| v / qs).collect();
        let gamma = rng.uniform_range(0.0, 4.0);
        let py = p[y];
        let v = 1.0 - py;
        let focal_hy = v.powf(gamma - 2.0)
            * (-gamma * (gamma - 1.0) * py.ln() + 2.0 * gamma * v / py + v * v / (py * py));
        let only_y = |hy: f64| {
            (0..k)
                .map(|i| if i == y { hy } else { 0.0 })
                .collect::<Vec<_>>()
        };
        let cases: Vec<(LossKind, Vec<f64>, bool)> = vec![
            (LossKind::CrossEntropy, only_y(1.0 / (py * py)), true),
            (
                LossKind::focal(gamma).unwrap(),
                only_y(focal_hy),
                gamma >= 1.0,
            ),
            (LossKind::Brier, vec![2.0; k], true),
            (LossKind::KlHard, only_y(1.0 / (py * py)), true),
            (
                LossKind::kl_soft(q.clone()).unwrap(),
                q.iter().zip(&p).map(|(qi, pi)| qi / (pi * pi)).collect(),
                false,
            ),
            (
                LossKind::reverse_kl(q.clone()).unwrap(),
                p.iter().map(|pi| 1.0 / pi).collect(),
                true,
            ),
        ];
        for (loss, expect, flag) in cases {
            let t = loss_curvature_terms(&loss, &p, y).unwrap();
            for (a, b) in t.h.iter().zip(&expect) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
            if t.assumption_a_ok != flag {
                flag_mismatch += 1;
            }
        }
    }
    verdict(
        worst < 1e-12 && flag_mismatch == 0,
        format!("max error {worst:.2e}, {flag_mismatch} flag mismatches over 600 evaluations"),
    )
}

fn c14_determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = 0;
    let mut differing = Vec::new();
    for cmd in [
        Subcommand::GenData,
        Subcommand::Train,
        Subcommand::Attack,
        Subcommand::Sharpness,
        Subcommand::Certify,
        Subcommand::SweepScale,
        Subcommand::Basin,
        Subcommand::Detect,
        Subcommand::Collapse,
        Subcommand::HessianCheck,
    ] {
        let mut outs = Vec::new();
        for d in &dirs {
            let cfg = RunConfig {
                out_dir: d.path().join(cmd.as_str()),
                ..RunConfig::default()
            };
            outs.push(run_subcommand(cmd, &cfg).unwrap());
        }
        for f in outs[0].files.iter().filter(|f| f.ends_with(".csv")) {
            files += 1;
            let a = std::fs::read(outs[0].out_dir.join(f)).unwrap();
            let b = std::fs::read(outs[1].out_dir.join(f)).unwrap();
            if a != b {
                differing.push(format!("{}/{f}", cmd.as_str()));
            }
        }
    }
    verdict(
        differing.is_empty() && files > 0,
        format!("{files} CSV files compared, differing: {differing:?}"),
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn main() -> ExitCode {
    let toy = toy();
    let criteria: Vec<Criterion> = vec![
        ("closed-form Hessian", Box::new(c01_penultimate_hessian)),
        ("trace identity", Box::new(c02_trace_identity)),
        ("recurrence", Box::new(c03_recurrence)),
        ("third derivative", Box::new(c04_third_derivative)),
        ("cubic certificate", Box::new(c05_cubic_certificate)),
        ("certificate soundness", Box::new(|| c06_soundness(&toy))),
        ("collapse bound", Box::new(|| c07_collapse(&toy))),
        ("scaling invariances", Box::new(|| c08_scaling(&toy))),
        ("uncanny valley", Box::new(|| c09_uncanny_valley(&toy))),
        ("basin geometry", Box::new(|| c10_basin(&toy))),
        ("detector", Box::new(|| c11_detector(&toy))),
        ("hutchinson", Box::new(c12_hutchinson)),
        ("loss curvature terms", Box::new(c13_loss_terms)),
        ("determinism", Box::new(c14_determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
