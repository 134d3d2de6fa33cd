//! Datasets: seeded synthetic generators and the IDX image/label loader.

mod idx;
mod synthetic;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use synthetic::{gen_gaussian_blobs, gen_two_spirals, BlobsSpec, SpiralsSpec};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::scalar::Real;

/// Features (`n × d`, one example per row) and class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> Split<T> {
    pub fn new(features: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::Shape {
                op: "split",
                left: features.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        Ok(Split { features, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Split {
            features: Tensor::zeros(&[0, dim]),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Example `i` as a `d`-vector.
    pub fn example(&self, i: usize) -> Tensor<T> {
        Tensor::vector(self.features.row(i).to_vec())
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Split {
            features: Tensor::matrix(indices.len(), d, data).expect("shape"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Validation,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub train: Split<T>,
    pub validation: Split<T>,
    pub test: Split<T>,
    pub dim: usize,
    pub num_classes: usize,
    pub provenance: String,
}

impl<T: Real> Dataset<T> {
    pub fn split(&self, kind: SplitKind) -> &Split<T> {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Test => &self.test,
        }
    }

    /// Checks label range, row counts, widths and finiteness.
    pub fn validate(&self) -> Result<()> {
        for kind in [SplitKind::Train, SplitKind::Validation, SplitKind::Test] {
            let s = self.split(kind);
            if s.dim() != self.dim {
                return Err(Error::invalid(
                    "dataset",
                    format!("{} split has width {}", kind.name(), s.dim()),
                ));
            }
            if let Some(&bad) = s.labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(Error::ClassIndex {
                    index: bad,
                    classes: self.num_classes,
                });
            }
            if !s.features.is_finite() {
                return Err(Error::NonFinite("dataset features"));
            }
        }
        Ok(())
    }
}

/// Per-class 70/15/15 split of `(features, label)` rows.
///
/// Each class is shuffled with `rng`; the first `floor(0.7 n)` go to train,
/// the next `floor(0.15 n)` to validation, the rest to test.
pub(crate) fn stratified_split<T: Real, R: rand::Rng>(
    rows: &[Vec<T>],
    labels: &[usize],
    num_classes: usize,
    dim: usize,
    rng: &mut R,
) -> (Split<T>, Split<T>, Split<T>) {
    use rand::seq::SliceRandom;

    let mut parts: [Vec<usize>; 3] = Default::default();
    for c in 0..num_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(rng);
        let n = idx.len();
        let n_train = n * 70 / 100;
        let n_val = n * 15 / 100;
        parts[0].extend_from_slice(&idx[..n_train]);
        parts[1].extend_from_slice(&idx[n_train..n_train + n_val]);
        parts[2].extend_from_slice(&idx[n_train + n_val..]);
    }
    let build = |idx: &[usize]| {
        let mut data = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            data.extend_from_slice(&rows[i]);
        }
        Split {
            features: Tensor::matrix(idx.len(), dim, data).expect("shape"),
            labels: idx.iter().map(|&i| labels[i]).collect(),
        }
    };
    let [a, b, c] = &parts;
    (build(a), build(b), build(c))
}
