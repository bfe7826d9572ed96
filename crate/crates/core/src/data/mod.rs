//! Dataset generators, the Wine loader, and the manipulations that realize
//! each experiment's ground-truth uncertainty change.
//!
//! A [`Dataset`] owns a feature matrix, integer labels, and an append-only
//! provenance trail of the manipulations applied to it. Generators produce
//! fresh datasets from an rng; [`stratified_subsample`], [`shuffle_labels`]
//! and [`leave_one_class_out`] derive corrupted or reduced variants for the
//! dataset-size, label-noise, and out-of-distribution experiments.

mod generators;
mod ops;
mod wine;

pub use generators::{triangles, two_moons, TWO_MOONS_NOISE_SD};
pub use ops::{leave_one_class_out, shuffle_labels, stratified_subsample};
pub use wine::load_wine;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::nn::Matrix;
use crate::{Error, Result};

/// One applied dataset manipulation, recorded for provenance.
///
/// Seeds are not recorded here: the ops take an rng whose seed only the
/// caller knows, and the experiment layer stores it alongside each run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Manipulation {
    Subsample { fraction: f64 },
    ShuffleLabels { fraction: f64 },
    ExcludeClass { class: usize },
}

impl fmt::Display for Manipulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manipulation::Subsample { fraction } => write!(f, "subsample({fraction})"),
            Manipulation::ShuffleLabels { fraction } => write!(f, "shuffle_labels({fraction})"),
            Manipulation::ExcludeClass { class } => write!(f, "exclude_class({class})"),
        }
    }
}

/// Feature matrix with integer labels in `[0, class_count)`.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    provenance: Vec<Manipulation>,
}

impl Dataset {
    /// Validates that labels match the row count and stay in range.
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} labels", features.rows()),
                format!("{}", labels.len()),
            ));
        }
        if class_count == 0 {
            return Err(Error::domain("dataset", "class_count must be positive"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::domain(
                "dataset",
                format!("label {bad} outside [0, {class_count})"),
            ));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            provenance: Vec::new(),
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimensionality.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Manipulations applied since generation, oldest first.
    pub fn provenance(&self) -> &[Manipulation] {
        &self.provenance
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Row indices belonging to class `c`, in dataset order.
    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset keeping only `indices` (in the given order), with the
    /// provenance trail carried over.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut flat = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::domain(
                    "dataset select",
                    format!("index {i} out of range for {} rows", self.len()),
                ));
            }
            flat.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            features: Matrix::from_vec(indices.len(), d, flat)?,
            labels,
            class_count: self.class_count,
            provenance: self.provenance.clone(),
        })
    }

    pub(crate) fn record(&mut self, m: Manipulation) {
        self.provenance.push(m);
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [usize] {
        &mut self.labels
    }

    pub(crate) fn set_labels_and_classes(&mut self, labels: Vec<usize>, class_count: usize) {
        self.labels = labels;
        self.class_count = class_count;
    }

    /// Writes the dataset as CSV for inspection: header `x0..x{D-1},label`,
    /// one row per sample, LF line endings.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path.display().to_string(), e);
        let header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        writeln!(w, "{},label", header.join(",")).map_err(io_err)?;
        for i in 0..self.len() {
            let row: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", row.join(","), self.labels[i]).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }
}

/// Train/test pair drawn from one source with a shared schema.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

impl Split {
    /// Validates that both halves agree on dimensionality and class count.
    pub fn new(train: Dataset, test: Dataset) -> Result<Self> {
        if train.dim() != test.dim() || train.class_count() != test.class_count() {
            return Err(Error::shape(
                "split",
                format!("train {}d/{} classes", train.dim(), train.class_count()),
                format!("test {}d/{} classes", test.dim(), test.class_count()),
            ));
        }
        Ok(Self { train, test })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let features = Matrix::from_vec(4, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        Dataset::new(features, vec![0, 1, 0, 1], 2).unwrap()
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let features = Matrix::zeros(2, 1);
        assert!(matches!(
            Dataset::new(features, vec![0, 2], 2),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn select_keeps_rows_and_provenance() {
        let mut ds = toy();
        ds.record(Manipulation::Subsample { fraction: 0.5 });
        let picked = ds.select(&[2, 0]).unwrap();
        assert_eq!(picked.len(), 2);
        assert_eq!(picked.features().row(0), &[4.0, 5.0]);
        assert_eq!(picked.labels(), &[0, 0]);
        assert_eq!(picked.provenance(), ds.provenance());
    }

    #[test]
    fn class_bookkeeping() {
        let ds = toy();
        assert_eq!(ds.class_counts(), vec![2, 2]);
        assert_eq!(ds.class_indices(1), vec![1, 3]);
    }

    #[test]
    fn csv_export_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        toy().write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x0,x1,label");
        assert_eq!(lines[1], "0,1,0");
        assert_eq!(lines.len(), 5);
        assert!(!text.contains('\r'));
    }
}
