//! CSV outputs: convergence logs and penultimate features.

use std::path::Path;

use hskan_core::model::FeatureMatrix;
use hskan_core::train::{ConvergenceLog, EpochRecord};

use crate::error::{Error, Result};

pub const CONVERGENCE_HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"];

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(Error::io(path))?;
    Ok(csv::Writer::from_writer(file))
}

/// Convergence CSV written row by row as epochs finish.
pub struct ConvergenceWriter {
    inner: csv::Writer<std::fs::File>,
    path: std::path::PathBuf,
}

impl ConvergenceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = writer(path)?;
        inner.write_record(CONVERGENCE_HEADER)?;
        inner.flush().map_err(Error::io(path))?;
        Ok(ConvergenceWriter { inner, path: path.into() })
    }

    /// Reals use the shortest representation that parses back exactly.
    pub fn push(&mut self, r: &EpochRecord) -> Result<()> {
        self.inner.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_loss.to_string(),
            r.val_acc.to_string(),
            format!("{:.6}", r.seconds),
        ])?;
        self.inner.flush().map_err(Error::io(&self.path))
    }
}

pub fn write_convergence(path: &Path, log: &ConvergenceLog) -> Result<()> {
    let mut w = ConvergenceWriter::create(path)?;
    log.rows.iter().try_for_each(|r| w.push(r))
}

pub fn read_convergence(path: &Path) -> Result<ConvergenceLog> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(CONVERGENCE_HEADER) {
        return Err(Error::Format { path: path.into(), detail: "unexpected convergence header".into() });
    }
    let mut log = ConvergenceLog::default();
    for rec in r.deserialize() {
        let (epoch, train_loss, train_acc, val_loss, val_acc, seconds): (usize, f64, f64, f64, f64, f64) = rec?;
        log.rows.push(EpochRecord { epoch, train_loss, train_acc, val_loss, val_acc, seconds });
    }
    Ok(log)
}

/// Header `f0,...,f{w-1}` then one row per patch.
pub fn write_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record((0..features.width).map(|i| format!("f{i}")))?;
    for i in 0..features.rows {
        w.write_record(features.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(Error::io(path))
}
