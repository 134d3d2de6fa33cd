use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{stratified_split, Dataset};
use crate::error::{Error, Result};
use crate::rng::data_stream;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobsSpec {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub dim: usize,
    /// Distance of every class center from the origin.
    pub radius: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Isotropic Gaussian clusters.
///
/// Class `c` is centered at angle `2πc/C` on the circle of the given radius
/// spanned by the first two coordinates (the first coordinate alone when
/// `dim == 1`); remaining coordinates are pure noise.
pub fn gen_gaussian_blobs<T: Real>(spec: &BlobsSpec) -> Result<Dataset<T>> {
    if spec.n_per_class == 0 || spec.num_classes == 0 || spec.dim == 0 {
        return Err(Error::invalid("blobs", "counts must be positive"));
    }
    if !(spec.sigma >= 0.0 && spec.radius.is_finite() && spec.sigma.is_finite()) {
        return Err(Error::invalid(
            "blobs",
            "radius must be finite and sigma finite and >= 0",
        ));
    }
    let mut rng = data_stream(spec.seed, 0);
    let mut rows = Vec::with_capacity(spec.n_per_class * spec.num_classes);
    let mut labels = Vec::with_capacity(rows.capacity());
    for c in 0..spec.num_classes {
        let center = blob_center(spec, c);
        for _ in 0..spec.n_per_class {
            let row: Vec<T> = center
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::of(m + spec.sigma * z)
                })
                .collect();
            rows.push(row);
            labels.push(c);
        }
    }
    let (train, validation, test) = stratified_split(
        &rows,
        &labels,
        spec.num_classes,
        spec.dim,
        &mut data_stream(spec.seed, 1),
    );
    Ok(Dataset {
        train,
        validation,
        test,
        dim: spec.dim,
        num_classes: spec.num_classes,
        provenance: format!(
            "blobs(n_per_class={}, classes={}, dim={}, radius={}, sigma={}, seed={})",
            spec.n_per_class, spec.num_classes, spec.dim, spec.radius, spec.sigma, spec.seed
        ),
    })
}

pub fn blob_center(spec: &BlobsSpec, class: usize) -> Vec<f64> {
    let angle = 2.0 * PI * class as f64 / spec.num_classes as f64;
    let mut center = vec![0.0; spec.dim];
    center[0] = spec.radius * angle.cos();
    if spec.dim > 1 {
        center[1] = spec.radius * angle.sin();
    }
    center
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpiralsSpec {
    pub n_per_class: usize,
    pub sigma: f64,
    /// Revolutions made by each arm.
    pub turns: f64,
    pub seed: u64,
}

/// Two interleaved planar spiral arms; arm 1 is arm 0 rotated by π.
pub fn gen_two_spirals<T: Real>(spec: &SpiralsSpec) -> Result<Dataset<T>> {
    if spec.n_per_class == 0 {
        return Err(Error::invalid("spirals", "counts must be positive"));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite() && spec.turns > 0.0) {
        return Err(Error::invalid("spirals", "sigma must be >= 0 and turns > 0"));
    }
    let mut rng = data_stream(spec.seed, 0);
    let n = spec.n_per_class;
    let mut rows = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for class in 0..2 {
        let sign = if class == 0 { 1.0 } else { -1.0 };
        for i in 0..n {
            let t = (i as f64 + 0.5) / n as f64;
            let r = 0.1 + 0.9 * t;
            let theta = 2.0 * PI * spec.turns * t;
            let mut point = [sign * r * theta.cos(), sign * r * theta.sin()];
            if spec.sigma > 0.0 {
                for p in &mut point {
                    let z: f64 = rng.sample(StandardNormal);
                    *p += spec.sigma * z;
                }
            }
            rows.push(point.iter().map(|&v| T::of(v)).collect::<Vec<T>>());
            labels.push(class);
        }
    }
    let (train, validation, test) = stratified_split(&rows, &labels, 2, 2, &mut data_stream(spec.seed, 1));
    Ok(Dataset {
        train,
        validation,
        test,
        dim: 2,
        num_classes: 2,
        provenance: format!(
            "spirals(n_per_class={}, sigma={}, turns={}, seed={})",
            spec.n_per_class, spec.sigma, spec.turns, spec.seed
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn blobs(n: usize, classes: usize, dim: usize, radius: f64, sigma: f64, seed: u64) -> Dataset<f64> {
        gen_gaussian_blobs(&BlobsSpec {
            n_per_class: n,
            num_classes: classes,
            dim,
            radius,
            sigma,
            seed,
        })
        .unwrap()
    }

    fn all_rows(d: &Dataset<f64>) -> Vec<(Vec<f64>, usize)> {
        [&d.train, &d.validation, &d.test]
            .iter()
            .flat_map(|s: &&Split<f64>| (0..s.len()).map(move |i| (s.features.row(i).to_vec(), s.labels[i])))
            .collect()
    }

    #[test]
    fn zero_sigma_sits_on_centers() {
        let spec = BlobsSpec {
            n_per_class: 10,
            num_classes: 3,
            dim: 4,
            radius: 2.0,
            sigma: 0.0,
            seed: 1,
        };
        let d: Dataset<f64> = gen_gaussian_blobs(&spec).unwrap();
        d.validate().unwrap();
        for (row, label) in all_rows(&d) {
            assert_eq!(row, blob_center(&spec, label));
        }
    }

    #[test]
    fn seeded_and_pure() {
        assert_eq!(blobs(20, 3, 5, 1.0, 0.5, 9), blobs(20, 3, 5, 1.0, 0.5, 9));
        assert_ne!(blobs(20, 3, 5, 1.0, 0.5, 9), blobs(20, 3, 5, 1.0, 0.5, 10));
    }

    #[test]
    fn stratified_split_sizes() {
        let d = blobs(572, 5, 20, 2.0, 1.0, 3);
        assert_eq!(d.train.len(), 2000);
        for c in 0..5 {
            let count = |s: &Split<f64>| s.labels.iter().filter(|&&l| l == c).count();
            assert_eq!(count(&d.train), 400);
            assert_eq!(count(&d.validation), 85);
            assert_eq!(count(&d.test), 87);
        }
    }

    #[test]
    fn heavy_overlap_constant_predictor_is_chance() {
        let d = blobs(1000, 2, 2, 0.05, 5.0, 4);
        let ones = d.test.labels.iter().filter(|&&l| l == 1).count() as f64;
        let best_constant_error = (ones / d.test.len() as f64).min(1.0 - ones / d.test.len() as f64);
        assert!((best_constant_error - 0.5).abs() <= 0.03);
    }

    #[test]
    fn nearest_center_error_matches_gaussian_tail() {
        // centers at (±1, 0), sigma 1: Bayes error Φ(-1)
        let spec = BlobsSpec {
            n_per_class: 5000,
            num_classes: 2,
            dim: 2,
            radius: 1.0,
            sigma: 1.0,
            seed: 12,
        };
        let d: Dataset<f64> = gen_gaussian_blobs(&spec).unwrap();
        let rows = all_rows(&d);
        let errors = rows
            .iter()
            .filter(|(x, y)| (if x[0] >= 0.0 { 0 } else { 1 }) != *y)
            .count() as f64;
        let rate = errors / rows.len() as f64;
        let bayes = 0.15865525393145707;
        let se = (bayes * (1.0 - bayes) / rows.len() as f64).sqrt();
        assert!((rate - bayes).abs() < 4.0 * se, "{rate}");
    }

    #[test]
    fn spirals_rotation_swaps_classes() {
        let d: Dataset<f64> = gen_two_spirals(&SpiralsSpec {
            n_per_class: 50,
            sigma: 0.0,
            turns: 1.5,
            seed: 2,
        })
        .unwrap();
        let key = |r: &(Vec<f64>, usize)| (r.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), r.1);
        let mut original: Vec<_> = all_rows(&d).iter().map(key).collect();
        let mut rotated: Vec<_> = all_rows(&d)
            .into_iter()
            .map(|(x, y)| (x.iter().map(|v| -v).collect::<Vec<_>>(), 1 - y))
            .map(|r| key(&r))
            .collect();
        original.sort();
        rotated.sort();
        assert_eq!(original, rotated);
    }

    #[test]
    fn spirals_seeded() {
        let s = SpiralsSpec {
            n_per_class: 30,
            sigma: 0.1,
            turns: 2.0,
            seed: 5,
        };
        assert_eq!(gen_two_spirals::<f64>(&s).unwrap(), gen_two_spirals::<f64>(&s).unwrap());
        assert!(gen_two_spirals::<f64>(&SpiralsSpec { n_per_class: 0, ..s }).is_err());
    }
}
