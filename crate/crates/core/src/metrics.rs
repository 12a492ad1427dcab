//! Confusion-matrix classification metrics (OA, AA, Cohen's kappa).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// `counts[i][j]`: pixels of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// Summary scores, all as fractions in `[0, 1]` (kappa may be negative).
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    /// `None` for classes absent from the evaluated pixels.
    pub per_class: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            bail!(Shape, "{classes} classes need {} counts, got {}", classes * classes, counts.len());
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn from_pairs(classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = Self::new(classes);
        for (t, p) in pairs {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.classes || predicted >= self.classes {
            bail!(Data, "class pair ({truth}, {predicted}) out of range for {} classes", self.classes);
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    /// Elementwise sum of two matrices (e.g. from sharded evaluation).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            bail!(Shape, "cannot merge {}-class and {}-class matrices", self.classes, other.classes);
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row(&self, i: usize) -> u64 {
        self.counts[i * self.classes..(i + 1) * self.classes].iter().sum()
    }

    fn col(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|i| {
                let r = self.row(i);
                (r > 0).then(|| self.get(i, i) as f64 / r as f64)
            })
            .collect()
    }

    /// Mean per-class accuracy over classes that occur.
    pub fn average_accuracy(&self) -> f64 {
        let present: Vec<f64> = self.per_class_accuracy().into_iter().flatten().collect();
        present.iter().sum::<f64>() / present.len() as f64
    }

    /// `Σ_i row_i·col_i / total²`.
    pub fn chance_agreement(&self) -> f64 {
        let t = self.total() as f64;
        (0..self.classes).map(|i| self.row(i) as f64 * self.col(i) as f64).sum::<f64>() / (t * t)
    }

    /// `(p_o − p_e)/(1 − p_e)`. When chance agreement is already total
    /// (`p_e = 1`) the value is 1 for perfect agreement and 0 otherwise.
    pub fn kappa(&self) -> f64 {
        let po = self.overall_accuracy();
        let pe = self.chance_agreement();
        if pe >= 1.0 {
            return if po >= 1.0 { 1.0 } else { 0.0 };
        }
        (po - pe) / (1.0 - pe)
    }

    pub fn metrics(&self) -> Result<Metrics> {
        if self.total() == 0 {
            bail!(Data, "no evaluated pixels");
        }
        Ok(Metrics {
            overall_accuracy: self.overall_accuracy(),
            average_accuracy: self.average_accuracy(),
            kappa: self.kappa(),
            per_class: self.per_class_accuracy(),
        })
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
