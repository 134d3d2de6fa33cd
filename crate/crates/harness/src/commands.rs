//! The four subcommands. Each writes its human-readable report to `out` and
//! returns structured results for callers that want them.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use iwsgd_core::data::{Dataset, SplitKind};
use iwsgd_core::gradcheck::{run_gradcheck, GradcheckOptions, GradcheckReport};
use iwsgd_core::ndcore::Tensor;
use iwsgd_core::net::{NetworkParams, NetworkSpec, NoiseMode};
use iwsgd_core::objective::{lsgd_from_table, marginal_from_table, mask_table, EnumerationLimits, MaskTable};
use iwsgd_core::rng::data_stream;
use iwsgd_core::trainer::{evaluate_with, train, Evaluation, TrainConfig};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{fixed, mean_std, write_metrics, write_summary, MetricsRow, SummaryRow};

pub const WORKERS_ENV: &str = "IWSGD_WORKERS";

/// Worker count from the environment; 0 (unset) means available parallelism.
pub fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| HarnessError::config(WORKERS_ENV, format!("{v:?} is not a non-negative integer"))),
    }
}

fn checked(config: TrainConfig) -> Result<TrainConfig> {
    config.validate().map_err(|e| match e {
        iwsgd_core::Error::Invalid { what, detail } => HarnessError::config(what, detail),
        other => HarnessError::Core(other),
    })?;
    Ok(config)
}

struct RunLog {
    path: PathBuf,
    file: File,
}

impl RunLog {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join("run.log");
        let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        Ok(RunLog { path, file })
    }

    fn line(&mut self, text: impl AsRef<str>) -> Result<()> {
        writeln!(self.file, "{}", text.as_ref()).map_err(|e| HarnessError::io(&self.path, e))
    }

    /// Records a failure before it is returned.
    fn fail<T>(&mut self, e: HarnessError) -> Result<T> {
        self.line(format!("error: {e}"))?;
        Err(e)
    }
}

/// One finished training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub samples: usize,
    pub seed: u64,
    /// Validation rows, then one test row if any update was made.
    pub rows: Vec<MetricsRow>,
    pub test: Evaluation,
    pub updates: u64,
    pub forward_passes: u64,
}

fn run_training(
    config: &ExperimentConfig,
    data: &Dataset<f64>,
    train_config: &TrainConfig,
    log: &mut RunLog,
) -> Result<RunResult> {
    log.line(format!(
        "run samples={} seed={} budget={:?}",
        train_config.samples, train_config.master_seed, train_config.budget
    ))?;
    let outcome = match train(train_config, data) {
        Ok(o) => o,
        Err(e) => return log.fail(e.into()),
    };
    let test = evaluate_with(train_config, &outcome.params, &data.test)?;
    let mut rows: Vec<MetricsRow> = outcome
        .metrics
        .iter()
        .map(|p| MetricsRow::from_point(p, config.record_wall_time))
        .collect();
    for r in &rows {
        log.line(format!(
            "step={} validation nll={} error_rate={} lsgd_estimate={} mean_max_weight={} degenerate={}",
            r.step,
            fixed(r.nll),
            fixed(r.error_rate),
            fixed(r.lsgd_estimate),
            fixed(r.mean_max_weight),
            r.degenerate_count
        ))?;
    }
    if !outcome.steps.is_empty() {
        let n = outcome.steps.len() as f64;
        let wall: f64 = outcome.metrics.last().map_or(0.0, |p| p.wall_ms);
        rows.push(MetricsRow {
            step: outcome.updates,
            split: SplitKind::Test,
            nll: test.nll,
            error_rate: test.error_rate,
            lsgd_estimate: outcome.steps.iter().map(|s| s.mean_objective).sum::<f64>() / n,
            mean_max_weight: outcome.steps.iter().map(|s| s.mean_max_weight).sum::<f64>() / n,
            degenerate_count: outcome.steps.iter().map(|s| s.degenerate).sum(),
            wall_ms: if config.record_wall_time { wall } else { 0.0 },
        });
    }
    log.line(format!(
        "updates={} forward_passes={} test_nll={} test_error={}",
        outcome.updates,
        outcome.forward_passes,
        fixed(test.nll),
        fixed(test.error_rate)
    ))?;
    Ok(RunResult {
        samples: train_config.samples,
        seed: train_config.master_seed,
        rows,
        test,
        updates: outcome.updates,
        forward_passes: outcome.forward_passes,
    })
}

/// Trains once. Writes `metrics.csv` and `run.log` to the output directory
/// and prints `final_test_error=<value>`.
pub fn cmd_train(path: &Path, workers: usize, out: &mut dyn Write) -> Result<RunResult> {
    let config = ExperimentConfig::load(path)?;
    let data = config.dataset()?;
    let train_config = checked(config.train_config(&data, config.samples, config.seed, workers)?)?;

    let mut log = RunLog::create(&config.output_dir)?;
    log.line(format!("config {}", path.display()))?;
    log.line(format!("dataset {}", data.provenance))?;
    let result = run_training(&config, &data, &train_config, &mut log)?;
    let csv = config.output_dir.join("metrics.csv");
    write_metrics(&csv, &result.rows)?;
    let summary = format!("final_test_error={}", fixed(result.test.error_rate));
    log.line(&summary)?;
    writeln!(out, "{summary}").map_err(stdout_err)?;
    Ok(result)
}

fn stdout_err(e: io::Error) -> HarnessError {
    HarnessError::io("<stdout>", e)
}

/// Finite-difference checks of per-sample and combined gradients over
/// `trials` random configurations.
pub fn cmd_gradcheck(seed: u64, trials: usize, corrupt: bool, out: &mut dyn Write) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(HarnessError::config("trials", "must be at least 1"));
    }
    let opts = GradcheckOptions {
        corrupt,
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck(seed, trials, &opts)?;
    writeln!(
        out,
        "worst_relative_error={:.3e} sample={:.3e} combined={:.3e} trials={} checked={} skipped_kinks={} worst_seed={}",
        report.worst(),
        report.worst_sample,
        report.worst_combined,
        report.trials,
        report.checked,
        report.skipped_kinks,
        report.worst_seed
    )
    .map_err(stdout_err)?;
    if !report.passed() {
        let seeds: Vec<String> = report.failing_seeds.iter().map(u64::to_string).collect();
        return Err(HarnessError::Check(format!(
            "relative error >= {:e} for configuration seed(s) {}",
            opts.tolerance,
            seeds.join(", ")
        )));
    }
    Ok(report)
}

/// A small network and one example, all derived from the config's seed.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsInstance {
    pub spec: NetworkSpec,
    pub params: NetworkParams<f64>,
    pub x: Tensor<f64>,
    pub y: usize,
}

impl BoundsInstance {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        if config.noise().mode != NoiseMode::BernoulliMultiply {
            return Err(iwsgd_core::Error::UnsupportedMode.into());
        }
        let spec = config.network(config.dim, config.num_classes)?;
        let params = NetworkParams::init(&spec, config.seed);
        let mut rng = data_stream(config.seed, 2);
        let x = Tensor::vector((0..config.dim).map(|_| rng.sample(StandardNormal)).collect());
        let y = (config.seed % config.num_classes as u64) as usize;
        Ok(BoundsInstance { spec, params, x, y })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsTable {
    /// `lsgd_exact(S)` for S = 1, 2, 3.
    pub lsgd: Vec<f64>,
    pub marginal: f64,
    pub table: MaskTable,
}

impl BoundsTable {
    pub fn compute(instance: &BoundsInstance) -> Result<Self> {
        let limits = EnumerationLimits::default();
        let noise = instance
            .spec
            .noise_layers()
            .map(|(_, _, n)| *n)
            .next()
            .ok_or_else(|| HarnessError::config("hidden", "the network has no dropout layer"))?;
        let table = mask_table(
            &instance.spec,
            &instance.params,
            &instance.x,
            instance.y,
            &noise,
            limits,
        )?;
        let lsgd = (1..=3)
            .map(|s| lsgd_from_table(&table, s, limits))
            .collect::<iwsgd_core::Result<Vec<_>>>()?;
        Ok(BoundsTable {
            marginal: marginal_from_table(&table)?,
            lsgd,
            table,
        })
    }

    /// `lsgd(1) <= lsgd(2) <= lsgd(3) <= marginal`, compared exactly.
    pub fn chain_holds(&self) -> bool {
        self.lsgd.windows(2).all(|w| w[0] <= w[1]) && self.lsgd.last().is_some_and(|&l| l <= self.marginal)
    }

    /// Every link strictly increasing.
    pub fn chain_strict(&self) -> bool {
        self.lsgd.windows(2).all(|w| w[0] < w[1]) && self.lsgd.last().is_some_and(|&l| l < self.marginal)
    }
}

/// Prints the bound hierarchy for the config's seeded tiny network.
pub fn cmd_bounds(path: &Path, out: &mut dyn Write) -> Result<BoundsTable> {
    let config = ExperimentConfig::load(path)?;
    let instance = BoundsInstance::from_config(&config)?;
    let bounds = BoundsTable::compute(&instance)?;
    let mut report = format!(
        "dropout units {} keep_prob {} class {}\nS  lsgd_exact\n",
        bounds.table.units, config.keep_prob, instance.y
    );
    for (s, v) in bounds.lsgd.iter().enumerate() {
        report += &format!("{}  {}\n", s + 1, fixed(*v));
    }
    report += &format!("marginal  {}\n", fixed(bounds.marginal));
    report += &format!("chain {}\n", if bounds.chain_holds() { "holds" } else { "violated" });
    out.write_all(report.as_bytes()).map_err(stdout_err)?;
    if !bounds.chain_holds() {
        return Err(HarnessError::Check(format!(
            "bound chain violated: {:?} then marginal {}",
            bounds.lsgd, bounds.marginal
        )));
    }
    Ok(bounds)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareOutcome {
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunResult>,
}

/// Runs every (S, seed) pair on one dataset. Writes `runs/s<S>_seed<seed>.csv`,
/// `summary.csv` and `run.log`. Test error ordering across S is reported,
/// never enforced.
pub fn cmd_compare(path: &Path, workers: usize, out: &mut dyn Write) -> Result<CompareOutcome> {
    let config = ExperimentConfig::load(path)?;
    let data = config.dataset()?;
    let mut plans = Vec::new();
    for &s in &config.samples_list {
        for &seed in &config.seeds {
            plans.push(checked(config.train_config(&data, s, seed, workers)?)?);
        }
    }

    let mut log = RunLog::create(&config.output_dir)?;
    let runs_dir = config.output_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| HarnessError::io(&runs_dir, e))?;
    log.line(format!("config {}", path.display()))?;
    log.line(format!("dataset {}", data.provenance))?;

    let mut runs = Vec::new();
    for plan in &plans {
        let run = run_training(&config, &data, plan, &mut log)?;
        write_metrics(
            &runs_dir.join(format!("s{}_seed{}.csv", run.samples, run.seed)),
            &run.rows,
        )?;
        runs.push(run);
    }

    let mut summary = Vec::new();
    for &s in &config.samples_list {
        let group: Vec<&RunResult> = runs.iter().filter(|r| r.samples == s).collect();
        let errors: Vec<f64> = group.iter().map(|r| r.test.error_rate).collect();
        let nlls: Vec<f64> = group.iter().map(|r| r.test.nll).collect();
        let (mean_test_error, std_test_error) = mean_std(&errors);
        let (mean_test_nll, std_test_nll) = mean_std(&nlls);
        summary.push(SummaryRow {
            samples: s,
            runs: group.len(),
            mean_test_error,
            std_test_error,
            mean_test_nll,
            std_test_nll,
            updates: group[0].updates,
            forward_passes: group[0].forward_passes,
        });
    }
    write_summary(&config.output_dir.join("summary.csv"), &summary)?;

    let mut report = String::from("samples  test_error (mean ± std)  forward_passes\n");
    for r in &summary {
        report += &format!(
            "{}  {} ± {}  {}\n",
            r.samples,
            fixed(r.mean_test_error),
            fixed(r.std_test_error),
            r.forward_passes
        );
    }
    let mut order: Vec<&SummaryRow> = summary.iter().collect();
    order.sort_by(|a, b| a.mean_test_error.total_cmp(&b.mean_test_error));
    let order: Vec<String> = order.iter().map(|r| format!("S={}", r.samples)).collect();
    report += &format!("lowest mean test error first: {}\n", order.join(", "));
    for line in report.lines() {
        log.line(line)?;
    }
    out.write_all(report.as_bytes()).map_err(stdout_err)?;
    Ok(CompareOutcome { summary, runs })
}
