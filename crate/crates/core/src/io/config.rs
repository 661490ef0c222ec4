//! INI run configuration. Every key is optional; unknown sections and keys
//! are rejected.
//!
//! ```text
//! [run]        seed, out
//! [data]       kind, n, classes, dim, noise, path, label_path
//! [model]      hidden (comma list), path
//! [train]      epochs, batch_size, learning_rate, weight_decay, loss
//! [attack]     norm, epsilon, step_size, steps, random_start
//! [sweep]      scales (comma list), tau
//! [certify]    epsilon, gradient_term, points
//! [detect]     folds, variant
//! [sharpness]  probes
//! [collapse]   alphas (comma list)
//! [lipschitz]  pairs
//! [check]      instances
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::analysis::DEFAULT_TAU;
use crate::curvature::SharpnessVariant;
use crate::loss::LossKind;
use crate::nn::TrainConfig;
use crate::robustness::{AttackConfig, AttackNorm};

use super::{DatasetKind, DatasetSpec, IoError};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Single source of randomness; module streams are derived from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DatasetSpec,
    pub hidden: Vec<usize>,
    /// Load this model instead of training one.
    pub model_path: Option<PathBuf>,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub scales: Vec<f64>,
    pub tau: f64,
    /// Loss tolerance of the certificate.
    pub cert_epsilon: f64,
    /// Keep the first-order term in the certificate.
    pub cert_gradient_term: bool,
    /// Test points to certify; 0 means all.
    pub cert_points: usize,
    pub folds: usize,
    pub detector_variant: SharpnessVariant,
    /// Hutchinson probes per layer; 0 skips per-layer rows.
    pub probes: usize,
    pub collapse_alphas: Vec<f64>,
    pub lipschitz_pairs: usize,
    /// Random instances per check in `hessian-check`.
    pub check_instances: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 0;
        Self {
            seed,
            out_dir: PathBuf::from("out"),
            data: DatasetSpec {
                kind: DatasetKind::Gaussians,
                n: 1000,
                classes: 3,
                dim: 2,
                noise: 0.04,
                seed,
                path: None,
                label_path: None,
            },
            hidden: vec![16, 16],
            model_path: None,
            train: TrainConfig {
                epochs: 200,
                batch_size: 32,
                learning_rate: 0.1,
                weight_decay: 1e-4,
                seed,
                loss: LossKind::CrossEntropy,
            },
            attack: AttackConfig {
                norm: AttackNorm::L2,
                epsilon: 0.2,
                step_size: 0.02,
                steps: 50,
                seed,
                random_start: false,
                record_trajectory: true,
            },
            scales: vec![0.25, 0.5, 1.0, 2.5, 5.0, 10.0, 50.0],
            tau: DEFAULT_TAU,
            cert_epsilon: 0.1,
            cert_gradient_term: true,
            cert_points: 0,
            folds: 5,
            detector_variant: SharpnessVariant::Spectral,
            probes: 100,
            collapse_alphas: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            lipschitz_pairs: 2000,
            check_instances: 20,
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T, IoError> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| IoError::Config(format!("[{section}] {key}: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>, IoError> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(section, key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::from_ini_str(&text)
    }

    pub fn from_ini_str(text: &str) -> Result<Self, IoError> {
        let ini = Ini::load_from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(IoError::Config(format!("key `{k}` outside any section")));
                }
                continue;
            };
            for (key, value) in props.iter() {
                cfg.set(section, key, value)?;
            }
        }
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), IoError> {
        let v = value.trim();
        match (section, key) {
            ("run", "seed") => self.seed = parse(section, key, v)?,
            ("run", "out") => self.out_dir = PathBuf::from(v),
            ("data", "kind") => self.data.kind = v.parse()?,
            ("data", "n") => self.data.n = parse(section, key, v)?,
            ("data", "classes") => self.data.classes = parse(section, key, v)?,
            ("data", "dim") => self.data.dim = parse(section, key, v)?,
            ("data", "noise") => self.data.noise = parse(section, key, v)?,
            ("data", "path") => self.data.path = Some(PathBuf::from(v)),
            ("data", "label_path") => self.data.label_path = Some(PathBuf::from(v)),
            ("model", "hidden") => self.hidden = parse_list(section, key, v)?,
            ("model", "path") => self.model_path = Some(PathBuf::from(v)),
            ("train", "epochs") => self.train.epochs = parse(section, key, v)?,
            ("train", "batch_size") => self.train.batch_size = parse(section, key, v)?,
            ("train", "learning_rate") => self.train.learning_rate = parse(section, key, v)?,
            ("train", "weight_decay") => self.train.weight_decay = parse(section, key, v)?,
            ("train", "loss") => {
                self.train.loss = v.parse().map_err(|e| IoError::Config(format!("{e}")))?
            }
            ("attack", "norm") => {
                self.attack.norm = v.parse().map_err(|e| IoError::Config(format!("{e}")))?
            }
            ("attack", "epsilon") => self.attack.epsilon = parse(section, key, v)?,
            ("attack", "step_size") => self.attack.step_size = parse(section, key, v)?,
            ("attack", "steps") => self.attack.steps = parse(section, key, v)?,
            ("attack", "random_start") => self.attack.random_start = parse(section, key, v)?,
            ("sweep", "scales") => self.scales = parse_list(section, key, v)?,
            ("sweep", "tau") => self.tau = parse(section, key, v)?,
            ("certify", "epsilon") => self.cert_epsilon = parse(section, key, v)?,
            ("certify", "gradient_term") => self.cert_gradient_term = parse(section, key, v)?,
            ("certify", "points") => self.cert_points = parse(section, key, v)?,
            ("detect", "folds") => self.folds = parse(section, key, v)?,
            ("detect", "variant") => {
                self.detector_variant = v.parse().map_err(|e| IoError::Config(format!("{e}")))?
            }
            ("sharpness", "probes") => self.probes = parse(section, key, v)?,
            ("collapse", "alphas") => self.collapse_alphas = parse_list(section, key, v)?,
            ("lipschitz", "pairs") => self.lipschitz_pairs = parse(section, key, v)?,
            ("check", "instances") => self.check_instances = parse(section, key, v)?,
            _ => {
                return Err(IoError::Config(format!(
                    "unknown key `{key}` in [{section}]"
                )))
            }
        }
        Ok(())
    }

    /// Sets the global seed and every seed derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
        self.attack.seed = seed;
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |m: String| Err(IoError::Config(m));
        if self.hidden.contains(&0) {
            return bad(format!(
                "hidden widths must be positive, got {:?}",
                self.hidden
            ));
        }
        self.train
            .validate()
            .map_err(|e| IoError::Config(e.to_string()))?;
        self.attack
            .validate()
            .map_err(|e| IoError::Config(e.to_string()))?;
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("scales must be positive, got {:?}", self.scales));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.cert_epsilon.is_finite() && self.cert_epsilon > 0.0) {
            return bad(format!(
                "certificate epsilon must be positive, got {}",
                self.cert_epsilon
            ));
        }
        if self.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", self.folds));
        }
        if self.collapse_alphas.is_empty()
            || self
                .collapse_alphas
                .iter()
                .any(|a| !(a.is_finite() && *a > 0.0))
            || self.collapse_alphas.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "collapse alphas must be positive and increasing, got {:?}",
                self.collapse_alphas
            ));
        }
        Ok(())
    }

    /// Canonical INI text; parsing it yields the same config.
    pub fn to_ini_string(&self) -> String {
        let mut s = String::new();
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let _ = writeln!(
            s,
            "[run]\nseed = {}\nout = {}\n",
            self.seed,
            self.out_dir.display()
        );
        let _ = writeln!(
            s,
            "[data]\nkind = {}\nn = {}\nclasses = {}\ndim = {}\nnoise = {}",
            self.data.kind, self.data.n, self.data.classes, self.data.dim, self.data.noise
        );
        if let Some(p) = opt(&self.data.path) {
            let _ = writeln!(s, "path = {p}");
        }
        if let Some(p) = opt(&self.data.label_path) {
            let _ = writeln!(s, "label_path = {p}");
        }
        let _ = writeln!(s, "\n[model]\nhidden = {}", join(&self.hidden));
        if let Some(p) = opt(&self.model_path) {
            let _ = writeln!(s, "path = {p}");
        }
        let t = &self.train;
        let _ = writeln!(
            s,
            "\n[train]\nepochs = {}\nbatch_size = {}\nlearning_rate = {}\nweight_decay = {}\nloss = {}",
            t.epochs, t.batch_size, t.learning_rate, t.weight_decay, t.loss
        );
        let a = &self.attack;
        let _ = writeln!(
            s,
            "\n[attack]\nnorm = {}\nepsilon = {}\nstep_size = {}\nsteps = {}\nrandom_start = {}",
            a.norm, a.epsilon, a.step_size, a.steps, a.random_start
        );
        let _ = writeln!(
            s,
            "\n[sweep]\nscales = {}\ntau = {}",
            join(&self.scales),
            self.tau
        );
        let _ = writeln!(
            s,
            "\n[certify]\nepsilon = {}\ngradient_term = {}\npoints = {}",
            self.cert_epsilon, self.cert_gradient_term, self.cert_points
        );
        let _ = writeln!(
            s,
            "\n[detect]\nfolds = {}\nvariant = {}",
            self.folds, self.detector_variant
        );
        let _ = writeln!(s, "\n[sharpness]\nprobes = {}", self.probes);
        let _ = writeln!(s, "\n[collapse]\nalphas = {}", join(&self.collapse_alphas));
        let _ = writeln!(s, "\n[lipschitz]\npairs = {}", self.lipschitz_pairs);
        let _ = writeln!(s, "\n[check]\ninstances = {}", self.check_instances);
        s
    }

    /// Network widths `[d, hidden…, k]`.
    pub fn layer_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }
}
