//! Loader for the UCI Wine CSV: schema validation, stratified splitting,
//! and train-fitted z-score normalization.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use super::{Dataset, Split};
use crate::nn::Matrix;
use crate::{seed, Error, Result};

const FEATURES: usize = 13;
/// Share of each class reserved for the test half.
const TEST_FRACTION: f64 = 0.2;

/// Reads the UCI Wine CSV (class label first, 13 feature columns, no header)
/// and returns a stratified 80/20 split, z-scored with statistics fit on the
/// training half only.
///
/// Raw class labels may be any integers; they are mapped to contiguous ids in
/// ascending order (UCI's 1/2/3 become 0/1/2). The split is deterministic in
/// `seed`.
pub fn load_wine(path: &Path, seed: u64) -> Result<Split> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(name.clone(), e))?;
    let mut raw_labels: Vec<i64> = Vec::new();
    let mut flat: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FEATURES + 1 {
            return Err(Error::Schema {
                source_name: name.clone(),
                row: idx + 1,
                detail: format!("expected {} columns, found {}", FEATURES + 1, fields.len()),
            });
        }
        let label: i64 = fields[0].trim().parse().map_err(|_| Error::Schema {
            source_name: name.clone(),
            row: idx + 1,
            detail: format!("class label {:?} is not an integer", fields[0]),
        })?;
        raw_labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Schema {
                source_name: name.clone(),
                row: idx + 1,
                detail: format!("feature value {f:?} is not a number"),
            })?;
            flat.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Schema {
            source_name: name,
            row: 0,
            detail: "file holds no data rows".into(),
        });
    }

    let mut distinct: Vec<i64> = raw_labels.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Schema {
            source_name: name,
            row: 0,
            detail: format!("need at least 2 classes, found {}", distinct.len()),
        });
    }
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| distinct.binary_search(l).unwrap())
        .collect();
    let full = Dataset::new(Matrix::from_vec(rows, FEATURES, flat)?, labels, distinct.len())?;

    // Stratified split: shuffle within each class, carve off the test share.
    let mut rng = seed::rng(seed, &[0]);
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for c in 0..full.class_count() {
        let mut idx = full.class_indices(c);
        let want_test = (TEST_FRACTION * idx.len() as f64).round() as usize;
        if idx.len() <= want_test {
            return Err(Error::Schema {
                source_name: name,
                row: 0,
                detail: format!("class {c} has too few rows ({}) to split", idx.len()),
            });
        }
        idx.shuffle(&mut rng);
        test_idx.extend_from_slice(&idx[..want_test]);
        train_idx.extend_from_slice(&idx[want_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let mut train = full.select(&train_idx)?;
    let mut test = full.select(&test_idx)?;
    zscore(&mut train, &mut test)?;
    Split::new(train, test)
}

/// Centres and scales both halves by the training half's per-column mean and
/// population standard deviation.
fn zscore(train: &mut Dataset, test: &mut Dataset) -> Result<()> {
    let d = train.dim();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for i in 0..train.len() {
        for (m, &v) in mean.iter_mut().zip(train.features().row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut sd = vec![0.0; d];
    for i in 0..train.len() {
        for j in 0..d {
            let dv = train.features().get(i, j) - mean[j];
            sd[j] += dv * dv;
        }
    }
    for (j, s) in sd.iter_mut().enumerate() {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            return Err(Error::domain(
                "z-score",
                format!("feature column {j} is constant on the training half"),
            ));
        }
    }
    for ds in [train, test] {
        let rows = ds.len();
        let features = &mut ds.features;
        for i in 0..rows {
            for j in 0..d {
                let v = (features.get(i, j) - mean[j]) / sd[j];
                features.set(i, j, v);
            }
        }
    }
    Ok(())
}
