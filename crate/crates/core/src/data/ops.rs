//! Dataset manipulations: stratified subsampling, partial label shuffling,
//! and leave-one-class-out splitting.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, Manipulation, Split};
use crate::{Error, Result};

/// Keeps `round(fraction * count)` samples per class, at least one each.
///
/// Selection is uniform within each class; surviving rows keep their original
/// relative order so `fraction = 1` reproduces the dataset bit-exactly.
pub fn stratified_subsample(
    ds: &Dataset,
    fraction: f64,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::domain(
            "stratified_subsample",
            format!("fraction must lie in (0, 1], got {fraction}"),
        ));
    }
    let mut keep = Vec::new();
    for c in 0..ds.class_count() {
        let mut idx = ds.class_indices(c);
        if idx.is_empty() {
            continue;
        }
        let want = ((fraction * idx.len() as f64).round() as usize).max(1);
        idx.shuffle(rng);
        keep.extend_from_slice(&idx[..want.min(idx.len())]);
    }
    keep.sort_unstable();
    let mut out = ds.select(&keep)?;
    out.record(Manipulation::Subsample { fraction });
    Ok(out)
}

/// Permutes the labels of a uniformly chosen `round(fraction * n)` subset of
/// rows among themselves.
///
/// Features are untouched and the global label histogram is preserved; only
/// which rows carry which label changes. `fraction = 0` is the identity.
pub fn shuffle_labels(ds: &Dataset, fraction: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::domain(
            "shuffle_labels",
            format!("fraction must lie in [0, 1], got {fraction}"),
        ));
    }
    let n = ds.len();
    let count = (fraction * n as f64).round() as usize;
    let mut out = ds.clone();
    if count > 1 {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(rng);
        let subset = &all[..count];
        let mut pool: Vec<usize> = subset.iter().map(|&i| ds.labels()[i]).collect();
        pool.shuffle(rng);
        let labels = out.labels_mut();
        for (&i, &l) in subset.iter().zip(&pool) {
            labels[i] = l;
        }
    }
    out.record(Manipulation::ShuffleLabels { fraction });
    Ok(out)
}

/// Drops one class from the training half and re-indexes the survivors.
///
/// Returns the reduced training set (labels compacted to `C - 1` contiguous
/// ids, classes above `excluded` shifted down by one), the untouched test set
/// still labelled in the original `C`-class scheme, and a mask marking which
/// test rows belong to the excluded class.
pub fn leave_one_class_out(
    split: &Split,
    excluded: usize,
) -> Result<(Dataset, Dataset, Vec<bool>)> {
    let c = split.train.class_count();
    if excluded >= c {
        return Err(Error::domain(
            "leave_one_class_out",
            format!("class {excluded} outside [0, {c})"),
        ));
    }
    if c < 2 {
        return Err(Error::domain(
            "leave_one_class_out",
            "need at least two classes to leave one out",
        ));
    }
    if split.train.class_indices(excluded).is_empty() {
        return Err(Error::domain(
            "leave_one_class_out",
            format!("class {excluded} has no training samples"),
        ));
    }
    let keep: Vec<usize> = (0..split.train.len())
        .filter(|&i| split.train.labels()[i] != excluded)
        .collect();
    let mut train = split.train.select(&keep)?;
    let relabeled: Vec<usize> = train
        .labels()
        .iter()
        .map(|&l| if l > excluded { l - 1 } else { l })
        .collect();
    train.set_labels_and_classes(relabeled, c - 1);
    train.record(Manipulation::ExcludeClass { class: excluded });
    let ood_mask: Vec<bool> = split.test.labels().iter().map(|&l| l == excluded).collect();
    Ok((train, split.test.clone(), ood_mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use crate::seed;
    use proptest::prelude::*;

    /// Dataset with the requested per-class counts; feature = row index so
    /// selections are traceable.
    fn counted(counts: &[usize]) -> Dataset {
        let n: usize = counts.iter().sum();
        let mut labels = Vec::with_capacity(n);
        for (c, &k) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(k));
        }
        let flat: Vec<f64> = (0..n).map(|i| i as f64).collect();
        Dataset::new(Matrix::from_vec(n, 1, flat).unwrap(), labels, counts.len()).unwrap()
    }

    #[test]
    fn subsample_rounds_per_class() {
        let ds = counted(&[50, 60, 70]);
        let out = stratified_subsample(&ds, 0.1, &mut seed::rng_from(1)).unwrap();
        assert_eq!(out.class_counts(), vec![5, 6, 7]);
        assert_eq!(out.provenance(), &[Manipulation::Subsample { fraction: 0.1 }]);
    }

    #[test]
    fn subsample_full_fraction_is_identity() {
        let ds = counted(&[100, 100]);
        let out = stratified_subsample(&ds, 1.0, &mut seed::rng_from(2)).unwrap();
        assert_eq!(out.features().as_slice(), ds.features().as_slice());
        assert_eq!(out.labels(), ds.labels());
    }

    #[test]
    fn subsample_quarter_of_balanced_pair() {
        let ds = counted(&[100, 100]);
        let out = stratified_subsample(&ds, 0.25, &mut seed::rng_from(3)).unwrap();
        assert_eq!(out.class_counts(), vec![25, 25]);
    }

    #[test]
    fn subsample_keeps_at_least_one_per_class() {
        let ds = counted(&[3, 200]);
        let out = stratified_subsample(&ds, 0.01, &mut seed::rng_from(4)).unwrap();
        assert_eq!(out.class_counts(), vec![1, 2]);
    }

    #[test]
    fn subsample_rejects_bad_fraction() {
        let ds = counted(&[4, 4]);
        for f in [0.0, -0.5, 1.5] {
            assert!(matches!(
                stratified_subsample(&ds, f, &mut seed::rng_from(5)),
                Err(Error::Domain { .. })
            ));
        }
    }

    #[test]
    fn shuffle_zero_fraction_is_identity() {
        let ds = counted(&[10, 10]);
        let out = shuffle_labels(&ds, 0.0, &mut seed::rng_from(6)).unwrap();
        assert_eq!(out.labels(), ds.labels());
        assert_eq!(out.provenance(), &[Manipulation::ShuffleLabels { fraction: 0.0 }]);
    }

    #[test]
    fn full_shuffle_agreement_near_half() {
        // A uniform permutation of balanced binary labels leaves each row's
        // label unchanged with probability 1/2 in expectation.
        let ds = counted(&[50, 50]);
        let mut agree = 0usize;
        let runs = 60;
        for s in 0..runs {
            let out = shuffle_labels(&ds, 1.0, &mut seed::rng_from(100 + s)).unwrap();
            agree += out
                .labels()
                .iter()
                .zip(ds.labels())
                .filter(|(a, b)| a == b)
                .count();
        }
        let rate = agree as f64 / (runs as usize * ds.len()) as f64;
        assert!((rate - 0.5).abs() < 0.05, "agreement {rate}");
    }

    #[test]
    fn leave_one_out_reindexes() {
        let ds = counted(&[5, 6, 7]);
        let split = Split::new(ds.clone(), ds).unwrap();
        let (train, test, mask) = leave_one_class_out(&split, 1).unwrap();
        assert_eq!(train.class_count(), 2);
        assert_eq!(train.class_counts(), vec![5, 7]);
        assert_eq!(test.class_count(), 3);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 6);
        assert_eq!(mask.len(), test.len());
        // Old class 2 landed on id 1; its features are rows 11..18.
        assert!(train
            .labels()
            .iter()
            .zip(0..train.len())
            .filter(|(&l, _)| l == 1)
            .all(|(_, i)| train.features().get(i, 0) >= 11.0));
    }

    #[test]
    fn leave_one_out_rejects_missing_class() {
        let ds = counted(&[5, 5]);
        let split = Split::new(ds.clone(), ds).unwrap();
        assert!(matches!(
            leave_one_class_out(&split, 2),
            Err(Error::Domain { .. })
        ));
    }

    proptest! {
        #[test]
        fn shuffle_preserves_features_and_histogram(
            counts in prop::collection::vec(2usize..20, 2..4),
            fraction in 0.0..=1.0f64,
            s in 0u64..1000,
        ) {
            let ds = counted(&counts);
            let out = shuffle_labels(&ds, fraction, &mut seed::rng_from(s)).unwrap();
            prop_assert_eq!(out.features().as_slice(), ds.features().as_slice());
            prop_assert_eq!(out.class_counts(), ds.class_counts());
        }

        #[test]
        fn subsample_ratio_within_rounding(
            counts in prop::collection::vec(4usize..40, 2..4),
            fraction in 0.05..=1.0f64,
            s in 0u64..1000,
        ) {
            let ds = counted(&counts);
            let out = stratified_subsample(&ds, fraction, &mut seed::rng_from(s)).unwrap();
            for (c, &k) in counts.iter().enumerate() {
                let expect = ((fraction * k as f64).round() as usize).max(1);
                prop_assert_eq!(out.class_counts()[c], expect);
            }
        }

        #[test]
        fn manipulations_deterministic_per_seed(s in 0u64..500) {
            let ds = counted(&[12, 15]);
            let a = stratified_subsample(&ds, 0.4, &mut seed::rng_from(s)).unwrap();
            let b = stratified_subsample(&ds, 0.4, &mut seed::rng_from(s)).unwrap();
            prop_assert_eq!(a.features().as_slice(), b.features().as_slice());
            prop_assert_eq!(a.labels(), b.labels());
            let c = shuffle_labels(&ds, 0.7, &mut seed::rng_from(s)).unwrap();
            let d = shuffle_labels(&ds, 0.7, &mut seed::rng_from(s)).unwrap();
            prop_assert_eq!(c.labels(), d.labels());
        }
    }
}
