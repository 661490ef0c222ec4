//! Synthetic and file-backed datasets.
//!
//! Every dataset ends up inside `[0, 1]^d` with `max ‖x‖₂ = 1`, so attack
//! box projection and the unit-ball hypothesis of the loss bound hold at
//! the same time. Bias-free ReLU networks are positively homogeneous and
//! only see the direction of an input, so the Gaussian classes are centred
//! on distinct directions and the 2-D shapes carry a constant third
//! coordinate that lets the network express an offset.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::linalg::{streams, SeededRng};
use crate::nn::SampleBatch;

use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    Gaussians,
    Moons,
    Spirals,
    Csv,
    Idx,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Gaussians => "gaussians",
            DatasetKind::Moons => "moons",
            DatasetKind::Spirals => "spirals",
            DatasetKind::Csv => "csv",
            DatasetKind::Idx => "idx",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gaussians" => Ok(DatasetKind::Gaussians),
            "moons" => Ok(DatasetKind::Moons),
            "spirals" => Ok(DatasetKind::Spirals),
            "csv" => Ok(DatasetKind::Csv),
            "idx" => Ok(DatasetKind::Idx),
            other => Err(IoError::InvalidDataset(format!(
                "unknown dataset kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Sample count; for files, `0` keeps every row.
    pub n: usize,
    pub classes: usize,
    /// Input dimension of the synthetic sets; the 2-D shapes need 3.
    pub dim: usize,
    /// Standard deviation of the Gaussian noise.
    pub noise: f64,
    pub seed: u64,
    /// Feature file (csv or IDX images).
    pub path: Option<PathBuf>,
    /// IDX label file.
    pub label_path: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Gaussians,
            n: 600,
            classes: 3,
            dim: 2,
            noise: 0.05,
            seed: 0,
            path: None,
            label_path: None,
        }
    }
}

/// Stratified train/test split of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: SampleBatch,
    pub test: SampleBatch,
    /// Divisor applied to reach `max ‖x‖₂ = 1`.
    pub scale: f64,
}

pub const TRAIN_FRACTION: f64 = 0.8;

/// Builds the dataset described by `spec`: synthetic kinds are generated,
/// file kinds are read from `spec.path`.
pub fn load_dataset(spec: &DatasetSpec) -> Result<DataSplit, IoError> {
    match spec.kind {
        DatasetKind::Csv => {
            let path = spec
                .path
                .as_deref()
                .ok_or_else(|| IoError::InvalidDataset("csv dataset needs a path".into()))?;
            let (xs, ys) = read_csv_dataset(path)?;
            finish(spec, xs, ys, true)
        }
        DatasetKind::Idx => {
            let (images, labels) = match (&spec.path, &spec.label_path) {
                (Some(i), Some(l)) => (i, l),
                _ => {
                    return Err(IoError::InvalidDataset(
                        "idx dataset needs image and label paths".into(),
                    ))
                }
            };
            let xs = read_idx_images(images)?;
            let ys = read_idx_labels(labels)?;
            if xs.len() != ys.len() {
                return Err(IoError::InvalidDataset(format!(
                    "{} images but {} labels",
                    xs.len(),
                    ys.len()
                )));
            }
            finish(spec, xs, ys, false)
        }
        _ => gen_synthetic(spec),
    }
}

/// Deterministic synthetic data with a stratified 80/20 split.
pub fn gen_synthetic(spec: &DatasetSpec) -> Result<DataSplit, IoError> {
    if spec.n == 0 {
        return Err(IoError::EmptyDataset);
    }
    if spec.classes < 2 {
        return Err(IoError::InvalidDataset("need at least two classes".into()));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(IoError::InvalidDataset(format!(
            "noise must be >= 0, got {}",
            spec.noise
        )));
    }
    let mut rng = SeededRng::new(spec.seed, streams::DATA);
    let labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    let xs = match spec.kind {
        DatasetKind::Gaussians => gaussians(spec, &labels, &mut rng)?,
        DatasetKind::Moons => {
            if spec.classes != 2 {
                return Err(IoError::InvalidDataset(
                    "moons has exactly two classes".into(),
                ));
            }
            with_offset(spec, moons(spec, &labels, &mut rng))?
        }
        DatasetKind::Spirals => with_offset(spec, spirals(spec, &labels, &mut rng))?,
        other => {
            return Err(IoError::InvalidDataset(format!(
                "`{other}` is not a synthetic kind"
            )))
        }
    };
    finish(spec, xs, labels, false)
}

fn gaussians(
    spec: &DatasetSpec,
    labels: &[usize],
    rng: &mut SeededRng,
) -> Result<Vec<Vec<f64>>, IoError> {
    let (d, k) = (spec.dim, spec.classes);
    if d < 2 {
        return Err(IoError::InvalidDataset("gaussians need dim >= 2".into()));
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut m = vec![0.15; d];
            if d >= k {
                m[c] += 0.6;
            } else {
                let angle = (c as f64 + 0.5) / k as f64 * PI / 2.0;
                m[0] += 0.6 * angle.cos();
                m[1] += 0.6 * angle.sin();
            }
            m
        })
        .collect();
    Ok(labels
        .iter()
        .map(|&y| {
            means[y]
                .iter()
                .map(|mu| (mu + spec.noise * rng.normal()).clamp(0.0, 1.0))
                .collect()
        })
        .collect())
}

fn moons(spec: &DatasetSpec, labels: &[usize], rng: &mut SeededRng) -> Vec<[f64; 2]> {
    labels
        .iter()
        .map(|&y| {
            let t = rng.uniform() * PI;
            let (x0, x1) = if y == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            [
                x0 + spec.noise * rng.normal(),
                x1 + spec.noise * rng.normal(),
            ]
        })
        .collect()
}

fn spirals(spec: &DatasetSpec, labels: &[usize], rng: &mut SeededRng) -> Vec<[f64; 2]> {
    let k = spec.classes as f64;
    labels
        .iter()
        .map(|&y| {
            let t = rng.uniform();
            let radius = 0.1 + t;
            let angle = 2.0 * PI * (y as f64 / k) + 1.5 * PI * t;
            [
                radius * angle.cos() + spec.noise * rng.normal(),
                radius * angle.sin() + spec.noise * rng.normal(),
            ]
        })
        .collect()
}

/// Min-max scales 2-D points into the unit square and appends a constant 1.
fn with_offset(spec: &DatasetSpec, pts: Vec<[f64; 2]>) -> Result<Vec<Vec<f64>>, IoError> {
    if spec.dim != 3 {
        return Err(IoError::InvalidDataset(format!(
            "{} data has 2 coordinates plus a constant, so dim must be 3 (got {})",
            spec.kind, spec.dim
        )));
    }
    let rows: Vec<Vec<f64>> = pts.iter().map(|p| p.to_vec()).collect();
    let mut rows = min_max(rows);
    rows.iter_mut().for_each(|r| r.push(1.0));
    Ok(rows)
}

/// Column-wise min-max scaling into `[0, 1]`; constant columns become 0.
fn min_max(mut rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    for c in 0..d {
        let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
        for r in &mut rows {
            r[c] = if hi > lo {
                (r[c] - lo) / (hi - lo)
            } else {
                0.0
            };
        }
    }
    rows
}

fn finish(
    spec: &DatasetSpec,
    mut xs: Vec<Vec<f64>>,
    mut ys: Vec<usize>,
    rescale: bool,
) -> Result<DataSplit, IoError> {
    if spec.n > 0 && matches!(spec.kind, DatasetKind::Csv | DatasetKind::Idx) {
        xs.truncate(spec.n);
        ys.truncate(spec.n);
    }
    if xs.is_empty() {
        return Err(IoError::EmptyDataset);
    }
    if rescale {
        xs = min_max(xs);
    }
    let mut all = SampleBatch::new(xs, ys).map_err(|e| IoError::InvalidDataset(e.to_string()))?;
    let scale = all.normalize_unit_ball();
    let (train, test) = stratified_split(&all, spec.seed);
    Ok(DataSplit {
        train: all.select(&train),
        test: all.select(&test),
        scale,
    })
}

/// Per class, a seeded shuffle puts the first 80% (rounded) into training.
/// Both index lists come back sorted.
fn stratified_split(all: &SampleBatch, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let classes = all.labels().iter().copied().max().map_or(0, |m| m + 1);
    let mut rng = SeededRng::new(seed, streams::DATA).derive(streams::SHUFFLE, 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..all.len()).filter(|&i| all.labels()[i] == c).collect();
        rng.shuffle(&mut members);
        let cut = (members.len() as f64 * TRAIN_FRACTION).round() as usize;
        train.extend_from_slice(&members[..cut]);
        test.extend_from_slice(&members[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Rows of numbers with the class label in the last column. A first row
/// that does not parse is taken as a header.
pub fn read_csv_dataset(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<usize>), IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::io(path, e))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| IoError::io(path, e))?;
        if rec.len() < 2 {
            return Err(IoError::InvalidDataset(format!(
                "row {row}: need features and a label"
            )));
        }
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(_) => {
                return Err(IoError::InvalidDataset(format!(
                    "row {row}: non-numeric field"
                )))
            }
        };
        let (label, feats) = values.split_last().expect("len >= 2");
        if *label < 0.0 || label.fract() != 0.0 {
            return Err(IoError::InvalidDataset(format!(
                "row {row}: bad label {label}"
            )));
        }
        xs.push(feats.to_vec());
        ys.push(*label as usize);
    }
    Ok((xs, ys))
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>), IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    let bad = |msg: &str| IoError::InvalidDataset(format!("{}: {msg}", path.display()));
    if bytes.len() < 4 {
        return Err(bad("truncated header"));
    }
    let found = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if found != magic {
        return Err(bad(&format!("magic {found:#010x}, expected {magic:#010x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let total: usize = dims.iter().product();
    if bytes.len() != header + total {
        return Err(bad(&format!(
            "expected {total} data bytes, found {}",
            bytes.len() - header
        )));
    }
    Ok((dims, bytes[header..].to_vec()))
}

/// IDX image file (magic `0x00000803`), pixels scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<f64>>, IoError> {
    let (dims, data) = read_idx(path, 0x0000_0803)?;
    let per = dims[1] * dims[2];
    if per == 0 {
        return Ok(Vec::new());
    }
    Ok(data
        .chunks(per)
        .map(|c| c.iter().map(|b| *b as f64 / 255.0).collect())
        .collect())
}

/// IDX label file (magic `0x00000801`).
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>, IoError> {
    Ok(read_idx(path, 0x0000_0801)?
        .1
        .into_iter()
        .map(usize::from)
        .collect())
}
