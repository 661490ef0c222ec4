//! Subcommand pipelines: each one builds the dataset, trains or loads the
//! network, runs its experiment and writes CSV reports plus `manifest.txt`
//! into the output directory.

mod check;

pub use check::{run_checks, CheckOutcome};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{
    basin_report, histogram, scale_sweep, stump_detector_cv, trajectory_metrics, AnalysisError,
    StumpDirection, DEFAULT_BINS,
};
use crate::curvature::{
    collapse_curve, layer_trace_estimates, relative_sharpness, ClassifierNorms, CurvatureError,
    SharpnessVariant,
};
use crate::io::{
    certificate_table, histogram_table, load_dataset, load_model, save_model, sharpness_table,
    trajectory_table, CertificateRow, DataSplit, IoError, RunConfig, Table,
};
use crate::linalg::{streams, SeededRng};
use crate::nn::{train_sgd, MlpNetwork, NnError, SampleBatch};
use crate::robustness::{
    certify_sample, lipschitz_estimate, pgd_attack, AttackTrajectory, RobustnessError,
    TrajectoryPoint,
};

/// Trajectories need more than this many iterations to count towards the
/// peak-then-decay fraction.
pub const MIN_TRAJECTORY_STEPS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    GenData,
    Train,
    Attack,
    Sharpness,
    Certify,
    SweepScale,
    Basin,
    Detect,
    Collapse,
    HessianCheck,
}

impl Subcommand {
    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::GenData => "gen-data",
            Subcommand::Train => "train",
            Subcommand::Attack => "attack",
            Subcommand::Sharpness => "sharpness",
            Subcommand::Certify => "certify",
            Subcommand::SweepScale => "sweep-scale",
            Subcommand::Basin => "basin",
            Subcommand::Detect => "detect",
            Subcommand::Collapse => "collapse",
            Subcommand::HessianCheck => "hessian-check",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Robustness(#[from] RobustnessError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("model does not fit the data: {0}")]
    ModelMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    /// Files written, manifest last.
    pub files: Vec<String>,
    pub summary: Vec<(String, String)>,
    /// False when a check failed; the files are still written.
    pub success: bool,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    summary: Vec<(String, String)>,
}

impl Outputs {
    fn table(&mut self, name: &str, t: &Table) -> Result<(), IoError> {
        t.write(&self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn kappa(p: &TrajectoryPoint, v: SharpnessVariant) -> f64 {
    match v {
        SharpnessVariant::Spectral => p.kappa_spectral,
        SharpnessVariant::Frobenius => p.kappa_frobenius,
    }
}

/// Dataset plus the network, trained with the configured schedule unless a
/// model file is given.
fn prepare(
    cfg: &RunConfig,
    out: Option<&mut Outputs>,
) -> Result<(DataSplit, MlpNetwork), PipelineError> {
    let split = load_dataset(&cfg.data)?;
    let classes = split
        .train
        .labels()
        .iter()
        .chain(split.test.labels())
        .max()
        .map_or(0, |m| m + 1)
        .max(cfg.data.classes);
    if let Some(path) = &cfg.model_path {
        let net = load_model(path)?;
        if net.input_dim() != split.train.dim() || net.classes() < classes {
            return Err(PipelineError::ModelMismatch(format!(
                "model is {} → {}, data has dimension {} and {classes} classes",
                net.input_dim(),
                net.classes(),
                split.train.dim()
            )));
        }
        return Ok((split, net));
    }
    let init = MlpNetwork::init(&cfg.layer_dims(split.train.dim(), classes), cfg.seed)?;
    let outcome = train_sgd(&init, &split.train, &cfg.train)?;
    if let Some(out) = out {
        let mut t = Table::new(&["epoch", "loss"]);
        for (e, l) in outcome.loss_curve.iter().enumerate() {
            t.push(vec![e.to_string(), l.to_string()]);
        }
        out.table("loss_curve.csv", &t)?;
        out.note("final_train_loss", outcome.final_loss);
    }
    Ok((split, outcome.network))
}

fn data_table(batch: &SampleBatch) -> Table {
    let mut header: Vec<String> = (0..batch.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    let refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new(&refs);
    for (x, y) in batch.inputs().iter().zip(batch.labels()) {
        let mut row: Vec<String> = x.iter().map(ToString::to_string).collect();
        row.push(y.to_string());
        t.push(row);
    }
    t
}

fn attack_test(
    cfg: &RunConfig,
    net: &MlpNetwork,
    test: &SampleBatch,
) -> Result<Vec<AttackTrajectory>, PipelineError> {
    let attack = crate::robustness::AttackConfig {
        record_trajectory: true,
        ..cfg.attack.clone()
    };
    Ok(pgd_attack(net, test, &attack)?)
}

fn run_gen_data(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let split = load_dataset(&cfg.data)?;
    out.table("data_train.csv", &data_table(&split.train))?;
    out.table("data_test.csv", &data_table(&split.test))?;
    out.note("train_samples", split.train.len());
    out.note("test_samples", split.test.len());
    out.note("dim", split.train.dim());
    out.note("normalization_divisor", split.scale);
    Ok(true)
}

fn run_train(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, Some(out))?;
    save_model(&net, &out.dir.join("model.json"))?;
    out.files.push("model.json".into());
    out.note("train_accuracy", net.accuracy(&split.train)?);
    out.note("test_accuracy", net.accuracy(&split.test)?);
    Ok(true)
}

fn run_attack(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, None)?;
    let tr = attack_test(cfg, &net, &split.test)?;
    out.table("trajectories.csv", &trajectory_table(&tr))?;
    let increases: Vec<f64> = tr.iter().map(|t| t.loss_increase()).collect();
    out.table(
        "loss_increase_histogram.csv",
        &histogram_table(&histogram(&increases, DEFAULT_BINS)?),
    )?;
    let m = trajectory_metrics(&tr, MIN_TRAJECTORY_STEPS);
    out.note("samples", tr.len());
    out.note("flipped", m.flipped);
    out.note("peak_then_decay_eligible", m.eligible);
    out.note("peak_then_decay_fraction", opt(m.peak_then_decay_fraction));
    out.note(
        "zero_gradient_steps",
        tr.iter()
            .map(|t| t.zero_gradient_steps.len())
            .sum::<usize>(),
    );
    Ok(true)
}

fn run_sharpness(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, None)?;
    let report = relative_sharpness(&net, &split.test)?;
    let layers = if cfg.probes > 0 {
        let root = SeededRng::new(cfg.seed, streams::HUTCHINSON);
        let rows = (0..split.test.len())
            .map(|i| {
                let (x, y) = split.test.sample(i);
                let rng = root.derive(streams::HUTCHINSON, i as u64);
                layer_trace_estimates(&net, x, y, &cfg.train.loss, cfg.probes, &rng)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(rows)
    } else {
        None
    };
    out.table(
        "sharpness.csv",
        &sharpness_table(&report, layers.as_deref()),
    )?;
    let ks: Vec<f64> = report.records.iter().map(|r| r.kappa_spectral).collect();
    out.table(
        "kappa_histogram.csv",
        &histogram_table(&histogram(&ks, DEFAULT_BINS)?),
    )?;
    out.note("mean_kappa_spectral", report.mean_spectral);
    out.note("mean_kappa_frobenius", report.mean_frobenius);
    Ok(true)
}

fn run_certify(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, None)?;
    let n = match cfg.cert_points {
        0 => split.test.len(),
        p => p.min(split.test.len()),
    };
    let lip = lipschitz_estimate(&net, &split.test, cfg.lipschitz_pairs, cfg.seed)?;
    let norms = ClassifierNorms::of(&net);
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = split.test.sample(i);
        let rec = crate::curvature::sample_sharpness(&net, &norms, i, x, y)?;
        let row = |r: f64, certificate| CertificateRow {
            sample_id: i,
            kappa_frobenius: rec.kappa_frobenius,
            lipschitz: lip.upper,
            r,
            epsilon: cfg.cert_epsilon,
            certificate,
        };
        match certify_sample(
            &net,
            &norms,
            i,
            x,
            y,
            cfg.cert_epsilon,
            lip.upper,
            cfg.cert_gradient_term,
        ) {
            Ok(c) => rows.push(row(c.r, Some(c))),
            Err(RobustnessError::FeatureNormTooSmall { r }) => rows.push(row(r, None)),
            Err(e) => return Err(e.into()),
        }
    }
    out.table("certificates.csv", &certificate_table(&rows))?;
    let certified: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.certificate.map(|c| c.delta_cert))
        .collect();
    out.note("lipschitz_upper", lip.upper);
    out.note("lipschitz_lower_empirical", opt(lip.lower_empirical));
    out.note("certified", certified.len());
    out.note("refused", rows.len() - certified.len());
    if !certified.is_empty() {
        out.note(
            "mean_delta_cert",
            certified.iter().sum::<f64>() / certified.len() as f64,
        );
    }
    Ok(true)
}

fn run_sweep(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, None)?;
    let r = scale_sweep(&net, &cfg.scales, &cfg.attack, &split.test)?;
    let mut t = Table::new(&[
        "scale",
        "clean_accuracy",
        "robust_accuracy",
        "mean_kappa_spectral",
        "mean_kappa_frobenius",
        "transfer_rate",
        "mean_loss_increase",
        "zero_gradient_steps",
    ]);
    for e in &r.entries {
        t.push(vec![
            e.scale.to_string(),
            e.clean_accuracy.to_string(),
            e.robust_accuracy.to_string(),
            e.mean_kappa_spectral.to_string(),
            e.mean_kappa_frobenius.to_string(),
            opt(e.transfer_rate),
            e.mean_loss_increase.to_string(),
            e.zero_gradient_steps.to_string(),
        ]);
    }
    out.table("sweep.csv", &t)?;
    out.note("baseline_adversarials", r.baseline_adversarials);
    Ok(true)
}

fn run_basin(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, None)?;
    let tr = attack_test(cfg, &net, &split.test)?;
    let k0: Vec<f64> = tr.iter().map(|t| t.points[0].kappa_spectral).collect();
    let rep = basin_report(&tr, &k0, cfg.tau)?;
    let mut t = Table::new(&["sample_id", "take_off", "kappa_clean"]);
    for e in &rep.entries {
        t.push(vec![
            e.sample_id.to_string(),
            opt(e.take_off),
            e.kappa_clean.to_string(),
        ]);
    }
    out.table("basin.csv", &t)?;
    out.note("tau", cfg.tau);
    out.note("defined_take_off", rep.defined);
    out.note("spearman_rho", opt(rep.spearman.map(|s| s.rho)));
    out.note(
        "spearman_degenerate",
        opt(rep.spearman.map(|s| s.degenerate)),
    );
    Ok(true)
}

fn run_detect(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, None)?;
    let tr = attack_test(cfg, &net, &split.test)?;
    let v = cfg.detector_variant;
    let (mut ids, mut values, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    // Balanced pairs: each successful attack contributes its clean point and
    // its last misclassified iterate.
    for t in &tr {
        let clean = &t.points[0];
        if clean.predicted != t.label {
            continue;
        }
        if let Some(p) = t.points.iter().rev().find(|p| p.predicted != t.label) {
            ids.extend([t.sample_id, t.sample_id]);
            values.extend([kappa(clean, v), kappa(p, v)]);
            labels.extend([false, true]);
        }
    }
    let mut scores = Table::new(&["sample_id", "adversarial", "kappa"]);
    for ((id, val), l) in ids.iter().zip(&values).zip(&labels) {
        scores.push(vec![id.to_string(), l.to_string(), val.to_string()]);
    }
    out.table("detector_scores.csv", &scores)?;
    let r = stump_detector_cv(&values, &labels, cfg.folds, cfg.seed)?;
    let mut permuted = labels.clone();
    SeededRng::new(cfg.seed, streams::DETECTOR)
        .derive(streams::DETECTOR, 1)
        .shuffle(&mut permuted);
    let chance = stump_detector_cv(&values, &permuted, cfg.folds, cfg.seed)?;
    let mut t = Table::new(&["fold", "accuracy", "permuted_accuracy"]);
    for (f, (a, p)) in r
        .fold_accuracies
        .iter()
        .zip(&chance.fold_accuracies)
        .enumerate()
    {
        t.push(vec![f.to_string(), a.to_string(), p.to_string()]);
    }
    out.table("detector.csv", &t)?;
    out.note("variant", v);
    out.note("clean", labels.iter().filter(|l| !**l).count());
    out.note("adversarial", labels.iter().filter(|l| **l).count());
    out.note("threshold", r.threshold);
    out.note(
        "direction",
        match r.direction {
            StumpDirection::Above => "above",
            StumpDirection::Below => "below",
        },
    );
    out.note("mean_accuracy", r.mean_accuracy);
    out.note("permuted_mean_accuracy", chance.mean_accuracy);
    Ok(true)
}

fn run_collapse(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let (split, net) = prepare(cfg, None)?;
    let c = collapse_curve(&net, &split.test, &cfg.collapse_alphas)?;
    let mut t = Table::new(&[
        "alpha",
        "mean_trace",
        "mean_confidence",
        "mean_kappa_spectral",
        "mean_kappa_frobenius",
    ]);
    for p in &c.points {
        t.push(vec![
            p.alpha.to_string(),
            p.mean_trace.to_string(),
            p.mean_confidence.to_string(),
            p.mean_kappa_spectral.to_string(),
            p.mean_kappa_frobenius.to_string(),
        ]);
    }
    out.table("collapse.csv", &t)?;
    let mut s = Table::new(&[
        "sample_id",
        "alpha",
        "margin",
        "trace",
        "bound",
        "confidence",
        "kappa_spectral",
        "kappa_frobenius",
    ]);
    for smp in &c.samples {
        for (i, a) in c.alphas.iter().enumerate() {
            s.push(vec![
                smp.sample_id.to_string(),
                a.to_string(),
                smp.margin.to_string(),
                smp.trace[i].to_string(),
                smp.bound[i].to_string(),
                smp.confidence[i].to_string(),
                smp.kappa_spectral[i].to_string(),
                smp.kappa_frobenius[i].to_string(),
            ]);
        }
    }
    out.table("collapse_samples.csv", &s)?;
    out.note("samples", c.samples.len());
    out.note("excluded", c.excluded);
    out.note("envelope_violations", c.envelope_violations());
    if let (Some(first), Some(last)) = (c.points.first(), c.points.last()) {
        out.note(
            "kappa_spectral_ratio",
            last.mean_kappa_spectral / first.mean_kappa_spectral,
        );
    }
    Ok(c.envelope_violations() == 0)
}

fn run_hessian_check(cfg: &RunConfig, out: &mut Outputs) -> Result<bool, PipelineError> {
    let checks = run_checks(cfg.seed, cfg.check_instances);
    let mut t = Table::new(&[
        "check",
        "instances",
        "skipped",
        "max_error",
        "tolerance",
        "pass",
    ]);
    for c in &checks {
        t.push(vec![
            c.name.to_string(),
            c.instances.to_string(),
            c.skipped.to_string(),
            c.max_error.to_string(),
            c.tolerance.to_string(),
            c.passed().to_string(),
        ]);
        out.note(c.name, if c.passed() { "pass" } else { "FAIL" });
    }
    out.table("hessian_check.csv", &t)?;
    Ok(checks.iter().all(CheckOutcome::passed))
}

fn manifest(cmd: Subcommand, cfg: &RunConfig, out: &Outputs, success: bool) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "flatlab {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "subcommand = {}", cmd.as_str());
    let _ = writeln!(s, "status = {}", if success { "ok" } else { "failed" });
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(
        s,
        "streams = data:{} init:{} shuffle:{} attack:{} power_iteration:{} hutchinson:{} lipschitz:{} detector:{} oracle:{}",
        streams::DATA,
        streams::INIT,
        streams::SHUFFLE,
        streams::ATTACK,
        streams::POWER_ITERATION,
        streams::HUTCHINSON,
        streams::LIPSCHITZ,
        streams::DETECTOR,
        streams::ORACLE
    );
    s.push_str("\n[summary]\n");
    for (k, v) in &out.summary {
        let _ = writeln!(s, "{k} = {v}");
    }
    s.push_str("\n[files]\n");
    for f in &out.files {
        let _ = writeln!(s, "{f}");
    }
    s.push_str("\n[config]\n");
    s.push_str(&cfg.to_ini_string());
    s
}

/// Runs one subcommand and writes its reports and `manifest.txt` into
/// `cfg.out_dir`.
pub fn run_subcommand(cmd: Subcommand, cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| IoError::io(&dir, e))?;
    let mut out = Outputs {
        dir,
        files: Vec::new(),
        summary: Vec::new(),
    };
    let success = match cmd {
        Subcommand::GenData => run_gen_data(cfg, &mut out)?,
        Subcommand::Train => run_train(cfg, &mut out)?,
        Subcommand::Attack => run_attack(cfg, &mut out)?,
        Subcommand::Sharpness => run_sharpness(cfg, &mut out)?,
        Subcommand::Certify => run_certify(cfg, &mut out)?,
        Subcommand::SweepScale => run_sweep(cfg, &mut out)?,
        Subcommand::Basin => run_basin(cfg, &mut out)?,
        Subcommand::Detect => run_detect(cfg, &mut out)?,
        Subcommand::Collapse => run_collapse(cfg, &mut out)?,
        Subcommand::HessianCheck => run_hessian_check(cfg, &mut out)?,
    };
    let text = manifest(cmd, cfg, &out, success);
    let path: &Path = &out.dir.join("manifest.txt");
    fs::write(path, text).map_err(|e| IoError::io(path, e))?;
    out.files.push("manifest.txt".into());
    Ok(RunOutput {
        out_dir: out.dir,
        files: out.files,
        summary: out.summary,
        success,
    })
}
