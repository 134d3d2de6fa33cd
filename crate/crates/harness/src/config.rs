//! Experiment configuration: one flat TOML table.
//!
//! Every key is optional and unknown keys are rejected. `output_dir` and the
//! IDX paths are resolved against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use iwsgd_core::data::{gen_gaussian_blobs, gen_two_spirals, load_idx, BlobsSpec, Dataset, SpiralsSpec};
use iwsgd_core::net::{Activation, NetworkSpec, NoiseSpec};
use iwsgd_core::trainer::{Budget, Estimator, TrainConfig};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[default]
    Blobs,
    Spirals,
    Idx,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    #[default]
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Bernoulli,
    Gaussian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    ImportanceWeighted,
    Conventional,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    #[default]
    Updates,
    ForwardPasses,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Blobs and spirals: examples generated per class.
    pub n_per_class: usize,
    /// Blobs and IDX.
    pub num_classes: usize,
    /// Blobs only; spirals are planar and IDX takes the image size.
    pub dim: usize,
    pub radius: f64,
    pub data_sigma: f64,
    pub turns: f64,
    pub data_seed: u64,
    pub idx_train_images: Option<PathBuf>,
    pub idx_train_labels: Option<PathBuf>,
    pub idx_test_images: Option<PathBuf>,
    pub idx_test_labels: Option<PathBuf>,
    pub idx_limit: Option<usize>,
    /// Trailing fraction of the IDX training file held out for validation.
    pub idx_validation_fraction: f64,

    pub hidden: Vec<usize>,
    pub activation: ActivationKind,
    pub noise_mode: NoiseKind,
    pub keep_prob: f64,
    pub noise_sigma: f64,
    pub inverted_dropout: bool,

    pub samples: usize,
    pub estimator: EstimatorKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub budget_kind: BudgetKind,
    pub budget: u64,
    pub seed: u64,
    pub eval_every: u64,

    pub output_dir: PathBuf,
    /// When false, the `wall_ms` column is written as zero so that output
    /// files depend only on the configuration.
    pub record_wall_time: bool,
    /// `compare`: values of S to train with.
    pub samples_list: Vec<usize>,
    /// `compare`: initialization and noise seeds, one run per seed and S.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::Blobs,
            n_per_class: 200,
            num_classes: 3,
            dim: 2,
            radius: 2.0,
            data_sigma: 1.0,
            turns: 1.5,
            data_seed: 0,
            idx_train_images: None,
            idx_train_labels: None,
            idx_test_images: None,
            idx_test_labels: None,
            idx_limit: None,
            idx_validation_fraction: 0.15,
            hidden: vec![32],
            activation: ActivationKind::Relu,
            noise_mode: NoiseKind::Bernoulli,
            keep_prob: 0.5,
            noise_sigma: 0.5,
            inverted_dropout: false,
            samples: 1,
            estimator: EstimatorKind::ImportanceWeighted,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            budget_kind: BudgetKind::Updates,
            budget: 1000,
            seed: 0,
            eval_every: 100,
            output_dir: PathBuf::from("out"),
            record_wall_time: false,
            samples_list: vec![1, 4],
            seeds: vec![0, 1, 2],
        }
    }
}

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(HarnessError::config(key, message()))
    }
}

impl ExperimentConfig {
    /// Parses and validates `path`, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            HarnessError::Parse { message, .. } => HarnessError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.output_dir);
        for p in [
            &mut self.idx_train_images,
            &mut self.idx_train_labels,
            &mut self.idx_test_images,
            &mut self.idx_test_labels,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }

    /// Checks every key; the error names the first offending one.
    pub fn validate(&self) -> Result<()> {
        let positive_finite = |v: f64| v > 0.0 && v.is_finite();
        let nonneg_finite = |v: f64| v >= 0.0 && v.is_finite();
        match self.dataset {
            DatasetKind::Blobs => {
                check(self.n_per_class > 0, "n_per_class", || "must be at least 1".into())?;
                check(self.num_classes >= 2, "num_classes", || "must be at least 2".into())?;
                check(self.dim > 0, "dim", || "must be at least 1".into())?;
                check(self.radius.is_finite(), "radius", || "must be finite".into())?;
                check(nonneg_finite(self.data_sigma), "data_sigma", || {
                    format!("{} must be finite and >= 0", self.data_sigma)
                })?;
            }
            DatasetKind::Spirals => {
                check(self.n_per_class > 0, "n_per_class", || "must be at least 1".into())?;
                check(nonneg_finite(self.data_sigma), "data_sigma", || {
                    format!("{} must be finite and >= 0", self.data_sigma)
                })?;
                check(positive_finite(self.turns), "turns", || {
                    format!("{} must be > 0", self.turns)
                })?;
            }
            DatasetKind::Idx => {
                check(self.num_classes >= 2, "num_classes", || "must be at least 2".into())?;
                for (key, value) in [
                    ("idx_train_images", &self.idx_train_images),
                    ("idx_train_labels", &self.idx_train_labels),
                    ("idx_test_images", &self.idx_test_images),
                    ("idx_test_labels", &self.idx_test_labels),
                ] {
                    check(value.is_some(), key, || "is required when dataset = \"idx\"".into())?;
                }
                check(
                    (0.0..1.0).contains(&self.idx_validation_fraction),
                    "idx_validation_fraction",
                    || format!("{} is outside [0, 1)", self.idx_validation_fraction),
                )?;
                check(self.idx_limit != Some(0), "idx_limit", || "must be at least 1".into())?;
            }
        }
        check(self.hidden.iter().all(|&h| h > 0), "hidden", || {
            "every layer width must be at least 1".into()
        })?;
        match self.noise_mode {
            NoiseKind::Bernoulli => check(self.keep_prob > 0.0 && self.keep_prob <= 1.0, "keep_prob", || {
                format!("{} is outside (0, 1]", self.keep_prob)
            })?,
            NoiseKind::Gaussian => check(nonneg_finite(self.noise_sigma), "noise_sigma", || {
                format!("{} must be finite and >= 0", self.noise_sigma)
            })?,
        }
        check(self.samples > 0, "samples", || "must be at least 1".into())?;
        check(positive_finite(self.learning_rate), "learning_rate", || {
            format!("{} must be finite and > 0", self.learning_rate)
        })?;
        check((0.0..1.0).contains(&self.momentum), "momentum", || {
            format!("{} is outside [0, 1)", self.momentum)
        })?;
        check(nonneg_finite(self.weight_decay), "weight_decay", || {
            format!("{} must be finite and >= 0", self.weight_decay)
        })?;
        check(self.batch_size > 0, "batch_size", || "must be at least 1".into())?;
        check(self.eval_every > 0, "eval_every", || "must be at least 1".into())?;
        check(!self.samples_list.is_empty(), "samples_list", || {
            "must not be empty".into()
        })?;
        check(self.samples_list.iter().all(|&s| s > 0), "samples_list", || {
            "every entry must be at least 1".into()
        })?;
        check(!self.seeds.is_empty(), "seeds", || "must not be empty".into())?;
        Ok(())
    }

    pub fn noise(&self) -> NoiseSpec {
        let spec = match self.noise_mode {
            NoiseKind::Bernoulli => NoiseSpec::bernoulli(self.keep_prob),
            NoiseKind::Gaussian => NoiseSpec::gaussian(self.noise_sigma),
        };
        if self.inverted_dropout {
            spec.inverted()
        } else {
            spec
        }
    }

    fn activation(&self) -> Activation {
        match self.activation {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::Tanh => Activation::Tanh,
        }
    }

    /// MLP over `input_dim` inputs with noise after every hidden activation.
    pub fn network(&self, input_dim: usize, classes: usize) -> Result<NetworkSpec> {
        Ok(NetworkSpec::mlp(
            input_dim,
            &self.hidden,
            classes,
            self.activation(),
            Some(self.noise()),
        )?)
    }

    pub fn budget(&self) -> Budget {
        match self.budget_kind {
            BudgetKind::Updates => Budget::Updates(self.budget),
            BudgetKind::ForwardPasses => Budget::ForwardPasses(self.budget),
        }
    }

    /// Trainer settings for a dataset, with `samples` and `seed` overridden.
    pub fn train_config(&self, data: &Dataset<f64>, samples: usize, seed: u64, workers: usize) -> Result<TrainConfig> {
        let config = TrainConfig {
            samples,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            budget: self.budget(),
            master_seed: seed,
            eval_every: self.eval_every,
            estimator: match self.estimator {
                EstimatorKind::ImportanceWeighted => Estimator::ImportanceWeighted,
                EstimatorKind::Conventional => Estimator::Conventional,
            },
            workers,
            ..TrainConfig::new(self.network(data.dim, data.num_classes)?, self.noise())
        };
        if config.total_updates() > 0 && config.batch_size > data.train.len() {
            return Err(HarnessError::config(
                "batch_size",
                format!(
                    "{} exceeds the {} training examples",
                    config.batch_size,
                    data.train.len()
                ),
            ));
        }
        Ok(config)
    }

    /// Builds or loads the dataset. File problems are reported against the
    /// key that named the file.
    pub fn dataset(&self) -> Result<Dataset<f64>> {
        match self.dataset {
            DatasetKind::Blobs => Ok(gen_gaussian_blobs(&BlobsSpec {
                n_per_class: self.n_per_class,
                num_classes: self.num_classes,
                dim: self.dim,
                radius: self.radius,
                sigma: self.data_sigma,
                seed: self.data_seed,
            })?),
            DatasetKind::Spirals => Ok(gen_two_spirals(&SpiralsSpec {
                n_per_class: self.n_per_class,
                sigma: self.data_sigma,
                turns: self.turns,
                seed: self.data_seed,
            })?),
            DatasetKind::Idx => self.idx_dataset(),
        }
    }

    fn idx_dataset(&self) -> Result<Dataset<f64>> {
        let path = |p: &Option<PathBuf>| p.clone().expect("validated");
        let load = |images_key: &str, images: PathBuf, labels: PathBuf, limit| {
            load_idx::<f64>(&images, &labels, limit).map_err(|e| HarnessError::config(images_key, e.to_string()))
        };
        let full = load(
            "idx_train_images",
            path(&self.idx_train_images),
            path(&self.idx_train_labels),
            self.idx_limit,
        )?;
        let test = load(
            "idx_test_images",
            path(&self.idx_test_images),
            path(&self.idx_test_labels),
            self.idx_limit,
        )?;
        let held_out = (full.len() as f64 * self.idx_validation_fraction).round() as usize;
        let cut = full.len() - held_out;
        let train = full.select(&(0..cut).collect::<Vec<_>>());
        let validation = full.select(&(cut..full.len()).collect::<Vec<_>>());
        let data = Dataset {
            dim: train.dim(),
            num_classes: self.num_classes,
            provenance: format!(
                "idx(train={}, test={}, limit={:?})",
                path(&self.idx_train_images).display(),
                path(&self.idx_test_images).display(),
                self.idx_limit
            ),
            train,
            validation,
            test,
        };
        if test_dim_mismatch(&data) {
            return Err(HarnessError::config(
                "idx_test_images",
                "image size differs from the training file",
            ));
        }
        data.validate()
            .map_err(|e| HarnessError::config("num_classes", e.to_string()))?;
        Ok(data)
    }
}

fn test_dim_mismatch(data: &Dataset<f64>) -> bool {
    !data.test.is_empty() && data.test.dim() != data.dim
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(text: &str) -> String {
        match ExperimentConfig::parse(text) {
            Err(HarnessError::Config { key, .. }) => key,
            Err(HarnessError::Parse { message, .. }) => message,
            other => panic!("expected an error, got {other:?}"),
        }
    }

    #[test]
    fn empty_document_uses_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn full_document_parses() {
        let c = ExperimentConfig::parse(
            r#"
            dataset = "spirals"
            n_per_class = 50
            turns = 2.0
            hidden = [16, 16]
            activation = "tanh"
            noise_mode = "gaussian"
            noise_sigma = 0.3
            samples = 4
            estimator = "conventional"
            budget_kind = "forward_passes"
            budget = 4000
            samples_list = [1, 2]
            seeds = [7]
            "#,
        )
        .unwrap();
        assert_eq!(c.dataset, DatasetKind::Spirals);
        assert_eq!(c.budget(), Budget::ForwardPasses(4000));
        assert_eq!(c.noise(), NoiseSpec::gaussian(0.3));
    }

    #[test]
    fn errors_name_the_offending_key() {
        assert!(key_of("keep_prb = 0.5").contains("keep_prb"));
        assert!(key_of("keep_prob = \"half\"").contains("keep_prob"));
        assert!(key_of("samples = -1").contains("samples"));
        assert_eq!(key_of("keep_prob = 1.5"), "keep_prob");
        assert_eq!(key_of("momentum = 1.0"), "momentum");
        assert_eq!(key_of("learning_rate = 0.0"), "learning_rate");
        assert_eq!(key_of("samples = 0"), "samples");
        assert_eq!(key_of("hidden = [4, 0]"), "hidden");
        assert_eq!(key_of("seeds = []"), "seeds");
        assert_eq!(key_of("dataset = \"idx\""), "idx_train_images");
        assert_eq!(key_of("noise_mode = \"gaussian\"\nnoise_sigma = -1.0"), "noise_sigma");
    }
}
