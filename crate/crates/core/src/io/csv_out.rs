//! CSV reports. Floats are written with `{}` (shortest round-trip form), so
//! identical results give identical bytes.

use std::path::Path;

use crate::analysis::HistogramBin;
use crate::curvature::{LayerTrace, SharpnessReport};
use crate::robustness::{AttackTrajectory, Certificate};

use super::IoError;

pub const SHARPNESS_HEADER: &[&str] = &[
    "sample_id",
    "loss",
    "confidence",
    "kappa_spectral",
    "kappa_frobenius",
    "layer",
    "trace_estimate",
];

pub const TRAJECTORY_HEADER: &[&str] = &[
    "sample_id",
    "iteration",
    "loss",
    "predicted_class",
    "confidence",
    "kappa_spectral",
    "kappa_frobenius",
    "l2_dist_from_clean",
];

pub const CERTIFICATE_HEADER: &[&str] = &[
    "sample_id",
    "kappa_frobenius",
    "L",
    "r",
    "epsilon",
    "delta_cert",
    "cubic_residual",
];

pub const HISTOGRAM_HEADER: &[&str] = &["bin_left", "bin_right", "count"];

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| IoError::io(path, e))?;
        w.write_record(&self.header)
            .map_err(|e| IoError::io(path, e))?;
        for row in &self.rows {
            w.write_record(row).map_err(|e| IoError::io(path, e))?;
        }
        w.flush().map_err(|e| IoError::io(path, e))
    }
}

/// One row per sample, or one per (sample, layer) when `layers` is given.
pub fn sharpness_table(report: &SharpnessReport, layers: Option<&[Vec<LayerTrace>]>) -> Table {
    let mut t = Table::new(SHARPNESS_HEADER);
    for (i, r) in report.records.iter().enumerate() {
        let base = vec![
            r.sample_id.to_string(),
            r.loss.to_string(),
            r.confidence.to_string(),
            r.kappa_spectral.to_string(),
            r.kappa_frobenius.to_string(),
        ];
        match layers.map(|l| &l[i]) {
            Some(traces) => {
                for lt in traces {
                    let mut row = base.clone();
                    row.push(lt.layer.to_string());
                    row.push(lt.estimate.to_string());
                    t.push(row);
                }
            }
            None => {
                let mut row = base;
                row.extend([String::new(), String::new()]);
                t.push(row);
            }
        }
    }
    t
}

pub fn trajectory_table(trajectories: &[AttackTrajectory]) -> Table {
    let mut t = Table::new(TRAJECTORY_HEADER);
    for tr in trajectories {
        for p in &tr.points {
            t.push(vec![
                tr.sample_id.to_string(),
                p.iteration.to_string(),
                p.loss.to_string(),
                p.predicted.to_string(),
                p.confidence.to_string(),
                p.kappa_spectral.to_string(),
                p.kappa_frobenius.to_string(),
                p.l2_dist.to_string(),
            ]);
        }
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateRow {
    pub sample_id: usize,
    pub kappa_frobenius: f64,
    pub lipschitz: f64,
    pub r: f64,
    pub epsilon: f64,
    /// `None` when the certificate was refused.
    pub certificate: Option<Certificate>,
}

pub fn certificate_table(rows: &[CertificateRow]) -> Table {
    let mut t = Table::new(CERTIFICATE_HEADER);
    for c in rows {
        let (delta, residual) = match &c.certificate {
            Some(cert) => (cert.delta_cert.to_string(), cert.cubic_residual.to_string()),
            None => ("refused".to_string(), "refused".to_string()),
        };
        t.push(vec![
            c.sample_id.to_string(),
            c.kappa_frobenius.to_string(),
            c.lipschitz.to_string(),
            c.r.to_string(),
            c.epsilon.to_string(),
            delta,
            residual,
        ]);
    }
    t
}

pub fn histogram_table(bins: &[HistogramBin]) -> Table {
    let mut t = Table::new(HISTOGRAM_HEADER);
    for b in bins {
        t.push(vec![
            b.left.to_string(),
            b.right.to_string(),
            b.count.to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let bins = [HistogramBin {
            left: 0.0,
            right: 0.5,
            count: 3,
        }];
        histogram_table(&bins).write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "bin_left,bin_right,count\n0,0.5,3\n");
    }

    #[test]
    fn unwritable_path() {
        let t = Table::new(HISTOGRAM_HEADER);
        assert!(matches!(
            t.write(Path::new("/nonexistent-dir/x.csv")),
            Err(IoError::Io { .. })
        ));
    }
}
