//! Mini-batch training with S noise samples per example.
//!
//! Each step draws S noise tensors per example from counter-keyed streams,
//! evaluates every (example, sample) pair against a frozen parameter
//! snapshot, combines each example's samples, averages over the batch in
//! example order, and applies one momentum SGD update. Evaluation work may
//! run on any number of rayon workers; every reduction happens afterwards on
//! one thread in a fixed order, so results do not depend on the worker count.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::data::{Dataset, Split, SplitKind};
use crate::error::{Error, Result};
use crate::ndcore::{argmax, log_softmax_at};
use crate::net::{forward, Gradient, NetworkParams, NetworkSpec, NoiseDraw, NoiseSpec, Phase};
use crate::objective::{evaluate_sample, importance_weights, iwsgd_combine, lsgd_inner, SampleEvaluation};
use crate::rng::{shuffle_stream, DrawCoordinates};
use crate::scalar::Real;

/// How long a run lasts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    /// Number of parameter updates.
    Updates(u64),
    /// Number of forward passes; each step costs `batch_size * samples`.
    ForwardPasses(u64),
}

/// How an example's S per-sample gradients are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Estimator {
    /// Weights proportional to each sample's likelihood.
    #[default]
    ImportanceWeighted,
    /// Plain average over samples.
    Conventional,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkSpec,
    /// Replaces the spec of every noise layer in `network`.
    pub noise: NoiseSpec,
    pub samples: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub budget: Budget,
    pub master_seed: u64,
    pub eval_every: u64,
    pub estimator: Estimator,
    /// Worker threads for evaluation; 0 uses the available parallelism.
    pub workers: usize,
}

impl TrainConfig {
    /// Defaults for everything but the network and noise.
    pub fn new(network: NetworkSpec, noise: NoiseSpec) -> Self {
        TrainConfig {
            network,
            noise,
            samples: 1,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            budget: Budget::Updates(1000),
            master_seed: 0,
            eval_every: 100,
            estimator: Estimator::ImportanceWeighted,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        if self.samples == 0 {
            return Err(Error::invalid("samples", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                format!("{} must be finite and > 0", self.learning_rate),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(
                "momentum",
                format!("{} is outside [0, 1)", self.momentum),
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(
                "weight_decay",
                format!("{} must be finite and >= 0", self.weight_decay),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every", "must be at least 1"));
        }
        Ok(())
    }

    /// The network with `noise` installed in every noise layer.
    pub fn spec(&self) -> Result<NetworkSpec> {
        self.network.with_noise(self.noise)
    }

    /// Forward passes consumed by one step.
    pub fn step_cost(&self) -> u64 {
        (self.batch_size * self.samples) as u64
    }

    /// Updates the budget allows.
    pub fn total_updates(&self) -> u64 {
        match self.budget {
            Budget::Updates(n) => n,
            Budget::ForwardPasses(n) => n / self.step_cost().max(1),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::invalid("workers", e.to_string()))
    }
}

/// Counts forward passes against a budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetMeter {
    pub budget: Budget,
    pub updates: u64,
    pub forward_passes: u64,
}

impl BudgetMeter {
    pub fn new(budget: Budget) -> Self {
        BudgetMeter {
            budget,
            updates: 0,
            forward_passes: 0,
        }
    }

    fn remaining(&self, cost: u64) -> u64 {
        match self.budget {
            Budget::Updates(n) => n.saturating_sub(self.updates).saturating_mul(cost),
            Budget::ForwardPasses(n) => n.saturating_sub(self.forward_passes),
        }
    }

    pub fn can_afford(&self, cost: u64) -> bool {
        self.remaining(cost) >= cost && cost > 0
    }

    pub fn charge(&mut self, cost: u64) -> Result<()> {
        if !self.can_afford(cost) {
            return Err(Error::BudgetExhausted {
                needed: cost,
                remaining: self.remaining(cost),
            });
        }
        self.updates += 1;
        self.forward_passes += cost;
        Ok(())
    }
}

/// Parameters and optimizer state carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub params: NetworkParams<T>,
    pub velocity: NetworkParams<T>,
    pub meter: BudgetMeter,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: NetworkParams<T>, budget: Budget) -> Self {
        TrainState {
            velocity: params.zeros_like(),
            params,
            meter: BudgetMeter::new(budget),
        }
    }
}

/// One mini-batch: rows of `split` in the given order, at a fixed place in
/// the schedule.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a, T> {
    pub split: &'a Split<T>,
    pub indices: &'a [usize],
    pub epoch: u64,
    pub index: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// 1-based index of the update this step performed.
    pub step: u64,
    /// Batch mean of each example's S-sample objective.
    pub mean_objective: f64,
    /// Batch mean of each example's largest importance weight.
    pub mean_max_weight: f64,
    /// Samples whose likelihood underflowed to zero.
    pub degenerate: u64,
    /// Forward passes consumed so far in the run.
    pub forward_passes: u64,
    pub wall_ms: f64,
}

struct ExampleResult<T> {
    gradient: Gradient<T>,
    objective: T,
    max_weight: T,
    degenerate: u64,
}

fn combine_example<T: Real>(
    evals: &[SampleEvaluation<T>],
    estimator: Estimator,
    example: usize,
    position: usize,
) -> Result<ExampleResult<T>> {
    let degenerate = evals.iter().filter(|e| e.log_lik == T::neg_infinity()).count();
    if degenerate == evals.len() {
        return Err(Error::DegenerateExample {
            example,
            position,
            samples: evals.len(),
        });
    }
    let (gradient, objective, max_weight) = match estimator {
        Estimator::ImportanceWeighted => {
            let c = iwsgd_combine(evals)?;
            (c.gradient, c.objective, c.weights.max())
        }
        Estimator::Conventional => {
            let log_liks: Vec<T> = evals.iter().map(|e| e.log_lik).collect();
            let scale = T::one() / T::of(evals.len() as f64);
            let mut g = evals[0].grad.zeros_like();
            for e in evals {
                g.axpy(scale, &e.grad)?;
            }
            (g, lsgd_inner(&log_liks)?, importance_weights(&log_liks)?.max())
        }
    };
    Ok(ExampleResult {
        gradient,
        objective,
        max_weight,
        degenerate: degenerate as u64,
    })
}

/// One update on `batch`. Evaluations run on the current rayon pool.
pub fn train_step<T: Real>(
    config: &TrainConfig,
    spec: &NetworkSpec,
    state: &mut TrainState<T>,
    batch: &Batch<'_, T>,
) -> Result<StepReport> {
    let started = Instant::now();
    if batch.indices.is_empty() {
        return Err(Error::invalid("batch", "must contain at least one example"));
    }
    let cost = (batch.indices.len() * config.samples) as u64;
    if !state.meter.can_afford(cost) {
        return Err(Error::BudgetExhausted {
            needed: cost,
            remaining: state.meter.remaining(cost),
        });
    }

    let params = &state.params;
    let results: Vec<Result<ExampleResult<T>>> = batch
        .indices
        .par_iter()
        .enumerate()
        .map(|(position, &example)| {
            let x = batch.split.example(example);
            let y = batch.split.labels[example];
            let evals = (0..config.samples)
                .map(|s| {
                    let coords =
                        DrawCoordinates::new(config.master_seed, batch.epoch, batch.index, position as u32, s as u32);
                    evaluate_sample(spec, params, &x, y, &NoiseDraw::at(spec, coords))
                })
                .collect::<Result<Vec<_>>>()?;
            combine_example(&evals, config.estimator, example, position)
        })
        .collect();

    let inv_batch = T::one() / T::of(batch.indices.len() as f64);
    let mut gradient = state.params.zeros_like();
    let mut objective = 0.0;
    let mut max_weight = 0.0;
    let mut degenerate = 0;
    for r in results {
        let r = r?;
        gradient.axpy(inv_batch, &r.gradient)?;
        objective += r.objective.as_f64();
        max_weight += r.max_weight.as_f64();
        degenerate += r.degenerate;
    }

    // gradient ascends the log-likelihood; the velocity tracks the loss gradient
    let lr = T::of(config.learning_rate);
    let decay = T::of(config.learning_rate * config.weight_decay);
    state.velocity.scale(T::of(config.momentum));
    state.velocity.axpy(-T::one(), &gradient)?;
    if decay != T::zero() {
        for layer in &mut state.params.layers {
            let w = layer.weight.clone();
            layer.weight.axpy(-decay, &w)?;
        }
    }
    state.params.axpy(-lr, &state.velocity)?;
    state.meter.charge(cost)?;

    let n = batch.indices.len() as f64;
    Ok(StepReport {
        step: state.meter.updates,
        mean_objective: objective / n,
        mean_max_weight: max_weight / n,
        degenerate,
        forward_passes: state.meter.forward_passes,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// Mean negative log-likelihood.
    pub nll: f64,
    pub error_rate: f64,
}

/// Inference-phase NLL and error rate over `split`: one deterministic forward
/// pass per example, no sampling.
///
/// Per-example results are summed in row order on the calling thread.
pub fn evaluate<T: Real>(spec: &NetworkSpec, params: &NetworkParams<T>, split: &Split<T>) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::invalid("split", "cannot evaluate an empty split"));
    }
    let per_example: Vec<Result<(f64, bool)>> = (0..split.len())
        .into_par_iter()
        .map(|i| {
            let trace = forward(spec, params, &split.example(i), None, Phase::Inference)?;
            let y = split.labels[i];
            let ll = log_softmax_at(&trace.logits, y)?;
            Ok((-ll.as_f64(), argmax(trace.logits.data()) != y))
        })
        .collect();
    let mut nll = 0.0;
    let mut errors = 0usize;
    for r in per_example {
        let (l, wrong) = r?;
        nll += l;
        errors += wrong as usize;
    }
    let n = split.len() as f64;
    Ok(Evaluation {
        nll: nll / n,
        error_rate: errors as f64 / n,
    })
}

/// `evaluate` on a pool sized by `config.workers`.
pub fn evaluate_with<T: Real>(config: &TrainConfig, params: &NetworkParams<T>, split: &Split<T>) -> Result<Evaluation> {
    let spec = config.spec()?;
    config.pool()?.install(|| evaluate(&spec, params, split))
}

/// Held-out metrics at one step, with training diagnostics averaged over the
/// steps since the previous point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalPoint {
    pub step: u64,
    pub split: SplitKind,
    pub nll: f64,
    pub error_rate: f64,
    pub lsgd_estimate: f64,
    pub mean_max_weight: f64,
    pub degenerate_count: u64,
    pub forward_passes: u64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub metrics: Vec<EvalPoint>,
    pub steps: Vec<StepReport>,
    pub updates: u64,
    pub forward_passes: u64,
}

/// Trains from the seeded initialization until the budget runs out.
///
/// Batches are consecutive slices of a per-epoch permutation of the training
/// split; a final partial batch is dropped. The validation split is evaluated
/// every `eval_every` updates and after the last one.
pub fn train<T: Real>(config: &TrainConfig, dataset: &Dataset<T>) -> Result<TrainOutcome<T>> {
    let params = NetworkParams::init(&config.spec()?, config.master_seed);
    train_from(config, dataset, params)
}

/// `train` starting from the given parameters.
pub fn train_from<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset<T>,
    params: NetworkParams<T>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    dataset.validate()?;
    let spec = config.spec()?;
    params.check(&spec)?;
    if dataset.dim != spec.input_dim() || dataset.num_classes != spec.num_classes() {
        return Err(Error::invalid(
            "dataset",
            format!(
                "dataset has dim {} and {} classes, network expects {} and {}",
                dataset.dim,
                dataset.num_classes,
                spec.input_dim(),
                spec.num_classes()
            ),
        ));
    }
    let train_split = &dataset.train;
    let total = config.total_updates();
    if total > 0 && train_split.len() < config.batch_size {
        return Err(Error::invalid(
            "batch_size",
            format!(
                "{} exceeds the {} training examples",
                config.batch_size,
                train_split.len()
            ),
        ));
    }
    if total > 0 && dataset.validation.is_empty() {
        return Err(Error::invalid("dataset", "validation split is empty"));
    }

    let pool = config.pool()?;
    let started = Instant::now();
    let mut state = TrainState::new(params, config.budget);
    let mut steps = Vec::new();
    let mut metrics = Vec::new();
    let batches_per_epoch = (train_split.len() / config.batch_size.max(1)) as u64;
    let mut order: Vec<usize> = Vec::new();
    let mut window_start = 0;

    pool.install(|| -> Result<()> {
        while state.meter.can_afford(config.step_cost()) {
            let epoch = state.meter.updates / batches_per_epoch;
            let index = state.meter.updates % batches_per_epoch;
            if index == 0 {
                order = (0..train_split.len()).collect();
                order.shuffle(&mut shuffle_stream(config.master_seed, epoch));
            }
            let b = index as usize * config.batch_size;
            let batch = Batch {
                split: train_split,
                indices: &order[b..b + config.batch_size],
                epoch,
                index,
            };
            steps.push(train_step(config, &spec, &mut state, &batch)?);

            let step = state.meter.updates;
            if step.is_multiple_of(config.eval_every) || !state.meter.can_afford(config.step_cost()) {
                let window = &steps[window_start..];
                window_start = steps.len();
                let k = window.len() as f64;
                let eval = evaluate(&spec, &state.params, &dataset.validation)?;
                metrics.push(EvalPoint {
                    step,
                    split: SplitKind::Validation,
                    nll: eval.nll,
                    error_rate: eval.error_rate,
                    lsgd_estimate: window.iter().map(|s| s.mean_objective).sum::<f64>() / k,
                    mean_max_weight: window.iter().map(|s| s.mean_max_weight).sum::<f64>() / k,
                    degenerate_count: window.iter().map(|s| s.degenerate).sum(),
                    forward_passes: state.meter.forward_passes,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                });
            }
        }
        Ok(())
    })?;

    Ok(TrainOutcome {
        updates: state.meter.updates,
        forward_passes: state.meter.forward_passes,
        params: state.params,
        metrics,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_gaussian_blobs, BlobsSpec};
    use crate::ndcore::Tensor;
    use crate::net::Activation;

    fn blobs() -> Dataset<f64> {
        gen_gaussian_blobs(&BlobsSpec {
            n_per_class: 40,
            num_classes: 3,
            dim: 4,
            radius: 2.0,
            sigma: 1.0,
            seed: 3,
        })
        .unwrap()
    }

    fn config(samples: usize, budget: Budget) -> TrainConfig {
        let noise = NoiseSpec::bernoulli(0.5);
        let network = NetworkSpec::mlp(4, &[8, 8], 3, Activation::Relu, Some(noise)).unwrap();
        TrainConfig {
            samples,
            batch_size: 4,
            budget,
            learning_rate: 0.05,
            eval_every: 5,
            master_seed: 11,
            workers: 1,
            ..TrainConfig::new(network, noise)
        }
    }

    fn step_once(config: &TrainConfig, workers: usize) -> (TrainState<f64>, StepReport) {
        let data = blobs();
        let spec = config.spec().unwrap();
        let mut state = TrainState::new(NetworkParams::init(&spec, 5), config.budget);
        let batch = Batch {
            split: &data.train,
            indices: &[3, 17],
            epoch: 0,
            index: 0,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        let report = pool.install(|| train_step(config, &spec, &mut state, &batch)).unwrap();
        (state, report)
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            weight_decay: 0.1,
            ..config(3, Budget::Updates(1))
        };
        let (state, report) = step_once(&cfg, 1);
        let spec = cfg.spec().unwrap();
        assert_eq!(state.params, NetworkParams::init(&spec, 5));
        assert_eq!(report.step, 1);
        assert_eq!(report.forward_passes, 6);
        assert!(report.mean_objective < 0.0);
        assert!(report.mean_max_weight >= 1.0 / 3.0 && report.mean_max_weight <= 1.0);
    }

    #[test]
    fn worker_count_does_not_change_the_step() {
        let cfg = config(2, Budget::Updates(1));
        let (one, r1) = step_once(&cfg, 1);
        let (four, r4) = step_once(&cfg, 4);
        assert_eq!(one.params, four.params);
        assert_eq!(one.velocity, four.velocity);
        assert_eq!(r1.mean_objective.to_bits(), r4.mean_objective.to_bits());
    }

    #[test]
    fn single_sample_matches_conventional_dropout() {
        let iw = config(1, Budget::Updates(1));
        let conv = TrainConfig {
            estimator: Estimator::Conventional,
            ..iw.clone()
        };
        assert_eq!(step_once(&iw, 1).0, step_once(&conv, 1).0);
    }

    #[test]
    fn estimators_differ_with_several_samples() {
        let iw = config(4, Budget::Updates(1));
        let conv = TrainConfig {
            estimator: Estimator::Conventional,
            ..iw.clone()
        };
        assert_ne!(step_once(&iw, 1).0.params, step_once(&conv, 1).0.params);
    }

    #[test]
    fn budget_is_conserved() {
        let cfg = config(3, Budget::Updates(12));
        let out = train(&cfg, &blobs()).unwrap();
        assert_eq!(out.updates, 12);
        assert_eq!(out.forward_passes, 12 * 4 * 3);
        assert_eq!(
            out.forward_passes,
            out.steps.iter().map(|_| cfg.step_cost()).sum::<u64>()
        );
        assert_eq!(out.steps.last().unwrap().forward_passes, out.forward_passes);
        let logged: Vec<u64> = out.metrics.iter().map(|m| m.step).collect();
        assert_eq!(logged, vec![5, 10, 12]);
        for s in &out.steps {
            assert!(s.mean_max_weight >= 1.0 / 3.0 - 1e-12 && s.mean_max_weight <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn zero_updates_returns_initial_params() {
        let cfg = config(2, Budget::Updates(0));
        let out = train(&cfg, &blobs()).unwrap();
        assert_eq!(out.params, NetworkParams::init(&cfg.spec().unwrap(), cfg.master_seed));
        assert!(out.metrics.is_empty() && out.steps.is_empty());
    }

    #[test]
    fn equal_forward_passes_give_a_quarter_of_the_updates() {
        let one = train(&config(1, Budget::ForwardPasses(400)), &blobs()).unwrap();
        let four = train(&config(4, Budget::ForwardPasses(400)), &blobs()).unwrap();
        assert_eq!(one.updates, 100);
        assert_eq!(four.updates, 25);
        assert_eq!(one.forward_passes, four.forward_passes);
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = config(2, Budget::Updates(20));
        let a = train(&cfg, &blobs()).unwrap();
        let b = train(&TrainConfig { workers: 3, ..cfg }, &blobs()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(x.nll.to_bits(), y.nll.to_bits());
            assert_eq!(x.lsgd_estimate.to_bits(), y.lsgd_estimate.to_bits());
        }
    }

    #[test]
    fn budget_meter_refuses_overdraft() {
        let mut m = BudgetMeter::new(Budget::ForwardPasses(10));
        m.charge(6).unwrap();
        assert_eq!(
            m.charge(6),
            Err(Error::BudgetExhausted {
                needed: 6,
                remaining: 4
            })
        );
        let mut m = BudgetMeter::new(Budget::Updates(1));
        m.charge(6).unwrap();
        assert!(!m.can_afford(6));
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let spec = NetworkSpec::mlp(2, &[], 3, Activation::Relu, None).unwrap();
        let params = NetworkParams::zeros(&spec);
        let split = Split::new(Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap(), vec![0, 2]).unwrap();
        let e = evaluate(&spec, &params, &split).unwrap();
        assert!((e.nll - 3f64.ln()).abs() < 1e-15);
        // ties break toward class 0
        assert_eq!(e.error_rate, 0.5);
    }

    #[test]
    fn config_validation() {
        let good = config(1, Budget::Updates(1));
        good.validate().unwrap();
        for bad in [
            TrainConfig {
                samples: 0,
                ..good.clone()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..good.clone()
            },
            TrainConfig {
                momentum: 1.0,
                ..good.clone()
            },
            TrainConfig {
                weight_decay: -1.0,
                ..good.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..good.clone()
            },
            TrainConfig {
                eval_every: 0,
                ..good.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
