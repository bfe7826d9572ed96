//! Synthetic 2-D generators: Two Moons and the triangle-overlap dataset.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::nn::Matrix;
use crate::{Error, Result};

/// Default coordinate noise for Two Moons.
pub const TWO_MOONS_NOISE_SD: f64 = 0.1;

/// Two interleaved half-circle classes.
///
/// Class 0 lies on the upper unit half-circle centred at the origin, class 1
/// on the lower unit half-circle centred at (1, 0.5); both get isotropic
/// Gaussian coordinate noise of `noise_sd`. Class counts differ by at most
/// one (class 0 gets the extra sample for odd `n`). Rows are emitted class 0
/// first, then class 1.
pub fn two_moons(n: usize, noise_sd: f64, rng: &mut impl Rng) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::domain("two_moons", format!("need n >= 2, got {n}")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::domain(
            "two_moons",
            format!("noise_sd must be nonnegative, got {noise_sd}"),
        ));
    }
    let n_outer = n.div_ceil(2);
    let mut flat = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random::<f64>() * PI;
        let (mut x, mut y) = if i < n_outer {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        if noise_sd > 0.0 {
            x += noise_sd * rng.sample::<f64, _>(StandardNormal);
            y += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
        flat.push(x);
        flat.push(y);
        labels.push(usize::from(i >= n_outer));
    }
    Dataset::new(Matrix::from_vec(n, 2, flat)?, labels, 2)
}

/// Two uniform bands whose class overlap grows linearly with x.
///
/// For x uniform on [0, 1] the margin `m(x) = 0.5 (1 - x)` centres a unit-width
/// band at `+m(x)` for class 0 and at `-m(x)` for class 1; labels are fair
/// coin flips. The bands are disjoint at x = 0 (class 0 never dips below
/// y = 0 there) and coincide at x = 1, where the best possible classifier is
/// reduced to guessing. The Bayes error of the slice at x is x/2.
pub fn triangles(n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::domain("triangles", format!("need n >= 2, got {n}")));
    }
    let mut flat = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = rng.random::<f64>();
        let class1 = rng.random::<f64>() < 0.5;
        let m = 0.5 * (1.0 - x);
        let centre = if class1 { -m } else { m };
        let y = centre - 0.5 + rng.random::<f64>();
        flat.push(x);
        flat.push(y);
        labels.push(usize::from(class1));
    }
    Dataset::new(Matrix::from_vec(n, 2, flat)?, labels, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn moons_are_balanced() {
        let ds = two_moons(1000, 0.1, &mut seed::rng_from(1)).unwrap();
        assert_eq!(ds.class_counts(), vec![500, 500]);
        let odd = two_moons(7, 0.0, &mut seed::rng_from(1)).unwrap();
        assert_eq!(odd.class_counts(), vec![4, 3]);
    }

    #[test]
    fn noiseless_moons_sit_on_unit_circles() {
        let ds = two_moons(400, 0.0, &mut seed::rng_from(2)).unwrap();
        for i in 0..ds.len() {
            let p = ds.features().row(i);
            let r = if ds.labels()[i] == 0 {
                (p[0] * p[0] + p[1] * p[1]).sqrt()
            } else {
                let (dx, dy) = (p[0] - 1.0, p[1] - 0.5);
                (dx * dx + dy * dy).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-9, "row {i} radius {r}");
            // Upper half-circle for class 0, lower for class 1.
            if ds.labels()[i] == 0 {
                assert!(p[1] >= -1e-9);
            } else {
                assert!(p[1] <= 0.5 + 1e-9);
            }
        }
    }

    #[test]
    fn radial_noise_matches_folded_normal_mean() {
        // The radial component of isotropic noise is N(0, sd^2); the mean of
        // its absolute value is sd * sqrt(2/pi) ~ 0.0798 for sd = 0.1.
        let sd = 0.1;
        let ds = two_moons(10_000, sd, &mut seed::rng_from(3)).unwrap();
        let mut total = 0.0;
        for i in 0..ds.len() {
            let p = ds.features().row(i);
            let r = if ds.labels()[i] == 0 {
                (p[0] * p[0] + p[1] * p[1]).sqrt()
            } else {
                let (dx, dy) = (p[0] - 1.0, p[1] - 0.5);
                (dx * dx + dy * dy).sqrt()
            };
            total += (r - 1.0).abs();
        }
        let mean_dev = total / ds.len() as f64;
        let expected = sd * (2.0 / PI).sqrt();
        assert!(
            (mean_dev - expected).abs() < 0.005,
            "mean radial deviation {mean_dev}, expected ~{expected}"
        );
    }

    #[test]
    fn moons_deterministic_per_seed() {
        let a = two_moons(64, 0.1, &mut seed::rng_from(9)).unwrap();
        let b = two_moons(64, 0.1, &mut seed::rng_from(9)).unwrap();
        assert_eq!(a.features().as_slice(), b.features().as_slice());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn triangle_bands_respect_margins() {
        let ds = triangles(20_000, &mut seed::rng_from(4)).unwrap();
        for i in 0..ds.len() {
            let p = ds.features().row(i);
            let (x, y) = (p[0], p[1]);
            let m = 0.5 * (1.0 - x);
            if ds.labels()[i] == 0 {
                assert!(y >= m - 0.5 - 1e-12 && y <= m + 0.5 + 1e-12);
            } else {
                assert!(y >= -m - 0.5 - 1e-12 && y <= -m + 0.5 + 1e-12);
            }
        }
        // At the left edge the bands are disjoint: class 0 stays above zero.
        for i in 0..ds.len() {
            let p = ds.features().row(i);
            if ds.labels()[i] == 0 {
                assert!(p[1] >= -p[0] / 2.0 - 1e-12);
            }
        }
    }

    #[test]
    fn triangle_right_edge_approaches_coin_flip() {
        // Best classifier is sign(y); near x = 1 its error tends to 1/2.
        let ds = triangles(100_000, &mut seed::rng_from(5)).unwrap();
        let mut wrong = 0usize;
        let mut seen = 0usize;
        for i in 0..ds.len() {
            let p = ds.features().row(i);
            if p[0] >= 0.95 {
                seen += 1;
                let guess = usize::from(p[1] < 0.0);
                if guess != ds.labels()[i] {
                    wrong += 1;
                }
            }
        }
        let err = wrong as f64 / seen as f64;
        assert!(seen > 3000, "slice too thin: {seen}");
        assert!((err - 0.5).abs() < 0.02, "bayes error estimate {err}");
    }

    #[test]
    fn triangle_classes_roughly_balanced() {
        let ds = triangles(10_000, &mut seed::rng_from(6)).unwrap();
        let counts = ds.class_counts();
        let diff = counts[0].abs_diff(counts[1]);
        assert!(diff < 300, "counts {counts:?}");
    }
}
