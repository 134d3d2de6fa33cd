//! Central finite-difference checks of the backward pass and of the
//! importance-weighted gradient.
//!
//! The reference derivative is the five-point central difference
//! `(-f(θ+2h) + 8f(θ+h) - 8f(θ-h) + f(θ-2h)) / 12h`, evaluated by an
//! independent double-double forward pass and never by `backward`. Relative
//! error is
//! `|a - fd| / max(|a|, |fd|, floor)`. Perturbations that flip the sign of a
//! ReLU input straddle a kink where the derivative is undefined; those
//! coordinates are skipped and counted.

mod reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::ndcore::Tensor;
use crate::net::{
    backward, forward, log_likelihood, Activation, Gradient, NetworkParams, NetworkSpec, NoiseDraw, NoiseSpec, Phase,
};
use crate::objective::{iwsgd_combine, SampleEvaluation};
use crate::rng::DrawCoordinates;
use reference::Dd;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Perturbs the analytic gradient before comparing (fault injection).
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-4,
            tolerance: 1e-6,
            floor: 1e-8,
            corrupt: false,
        }
    }
}

/// A random small network with a fixed example and S fixed draws.
#[derive(Clone, Debug)]
pub struct GradcheckCase {
    pub seed: u64,
    pub spec: NetworkSpec,
    pub params: NetworkParams<f64>,
    pub x: Tensor<f64>,
    pub y: usize,
    pub draws: Vec<NoiseDraw<f64>>,
}

impl GradcheckCase {
    /// Builds the case for `seed`; the same seed always rebuilds it.
    pub fn random(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rng.random_range(2..=5);
        let depth = rng.random_range(1..=2);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..=8)).collect();
        let classes = rng.random_range(2..=4);
        let activation = if rng.random_bool(0.5) {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let noise = match rng.random_range(0..4) {
            0 => NoiseSpec::gaussian(rng.random_range(0.1..0.8)),
            1 => NoiseSpec::bernoulli(rng.random_range(0.3..0.9)).inverted(),
            _ => NoiseSpec::bernoulli(rng.random_range(0.3..0.9)),
        };
        let spec = NetworkSpec::mlp(input, &hidden, classes, activation, Some(noise))?;
        let mut params = NetworkParams::init(&spec, rng.random());
        for layer in &mut params.layers {
            if let Some(b) = layer.bias.as_mut() {
                for v in b.data_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = 0.1 * z;
                }
            }
        }
        let x = Tensor::vector((0..input).map(|_| rng.sample(StandardNormal)).collect());
        let y = rng.random_range(0..classes);
        let samples = rng.random_range(1..=4u32);
        let draws = (0..samples)
            .map(|s| NoiseDraw::at(&spec, DrawCoordinates::new(seed, 0, 0, 0, s)))
            .collect();
        Ok(GradcheckCase {
            seed,
            spec,
            params,
            x,
            y,
            draws,
        })
    }

    /// Reference log-likelihoods of every draw and the joint ReLU pattern.
    fn reference(&self, params: &[Dd]) -> (Vec<Dd>, Vec<bool>) {
        let mut lls = Vec::with_capacity(self.draws.len());
        let mut pattern = Vec::new();
        for d in &self.draws {
            let e = reference::evaluate(&self.spec, params, self.x.data(), d, self.y);
            lls.push(e.log_lik);
            pattern.extend(e.relu_pattern);
        }
        (lls, pattern)
    }

    /// Analytic per-sample gradients in draw order.
    pub fn sample_evaluations(&self) -> Result<Vec<SampleEvaluation<f64>>> {
        self.draws
            .iter()
            .map(|d| {
                let trace = forward(&self.spec, &self.params, &self.x, Some(d), Phase::Train)?;
                Ok(SampleEvaluation {
                    log_lik: log_likelihood(&trace, self.y)?,
                    grad: backward(&self.spec, &self.params, &trace, self.y)?,
                    draw_id: d.coordinates(),
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CheckOutcome {
    pub worst_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `objective(params)`.
fn compare(
    case: &GradcheckCase,
    analytic: &Gradient<f64>,
    objective: impl Fn(&[Dd]) -> Dd,
    opts: &GradcheckOptions,
) -> Result<CheckOutcome> {
    let mut params: Vec<Dd> = case.params.values().map(Dd::from).collect();
    let (_, base_pattern) = case.reference(&params);
    let mut out = CheckOutcome::default();
    let step = Dd::from(opts.step);
    for i in 0..params.len() {
        let original = params[i];
        let mut f = [Dd::ZERO; 4];
        let mut kink = false;
        for (k, offset) in [Dd::from(-2.0), Dd::from(-1.0), Dd::ONE, Dd::from(2.0)]
            .into_iter()
            .enumerate()
        {
            params[i] = original + offset * step;
            let (lls, pattern) = case.reference(&params);
            kink |= pattern != base_pattern;
            f[k] = objective(&lls);
        }
        params[i] = original;
        if kink {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = ((f[0] - f[3] + Dd::from(8.0) * (f[2] - f[1])) / (Dd::from(12.0) * step)).to_f64();
        let mut a = analytic.get(i);
        if opts.corrupt && out.checked == 0 {
            a += 1e-2 * a.abs().max(1.0);
        }
        out.worst_rel_error = out.worst_rel_error.max(relative_error(a, numeric, opts.floor));
        out.checked += 1;
    }
    Ok(out)
}

/// Checks `backward` for draw `draw_index` of the case.
pub fn check_sample_gradient(case: &GradcheckCase, draw_index: usize, opts: &GradcheckOptions) -> Result<CheckOutcome> {
    let evals = case.sample_evaluations()?;
    compare(case, &evals[draw_index].grad, |lls| lls[draw_index], opts)
}

/// Checks the importance-weighted gradient against differences of the
/// S-sample objective with every draw held fixed.
pub fn check_combined_gradient(case: &GradcheckCase, opts: &GradcheckOptions) -> Result<CheckOutcome> {
    let combined = iwsgd_combine(&case.sample_evaluations()?)?;
    compare(case, &combined.gradient, reference::log_mean_exp, opts)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub worst_sample: f64,
    pub worst_combined: f64,
    /// Seed of the case with the largest error overall.
    pub worst_seed: u64,
    /// Seeds of cases whose error exceeded the tolerance.
    pub failing_seeds: Vec<u64>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.worst_sample.max(self.worst_combined)
    }

    pub fn passed(&self) -> bool {
        self.failing_seeds.is_empty()
    }
}

/// Seed of trial `i` in a run started from `seed`.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64)
}

/// Runs `trials` random cases, checking every draw's gradient and the
/// combined gradient of each.
pub fn run_gradcheck(seed: u64, trials: usize, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        trials,
        worst_sample: 0.0,
        worst_combined: 0.0,
        worst_seed: trial_seed(seed, 0),
        failing_seeds: Vec::new(),
        checked: 0,
        skipped_kinks: 0,
    };
    for t in 0..trials {
        let case_seed = trial_seed(seed, t);
        let case = GradcheckCase::random(case_seed)?;
        let mut worst_here: f64 = 0.0;
        for d in 0..case.draws.len() {
            let o = check_sample_gradient(&case, d, opts)?;
            report.worst_sample = report.worst_sample.max(o.worst_rel_error);
            worst_here = worst_here.max(o.worst_rel_error);
            report.checked += o.checked;
            report.skipped_kinks += o.skipped_kinks;
        }
        let o = check_combined_gradient(&case, opts)?;
        report.worst_combined = report.worst_combined.max(o.worst_rel_error);
        worst_here = worst_here.max(o.worst_rel_error);
        report.checked += o.checked;
        report.skipped_kinks += o.skipped_kinks;

        if worst_here >= report.worst() {
            report.worst_seed = case_seed;
        }
        if worst_here >= opts.tolerance {
            report.failing_seeds.push(case_seed);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_reproducible() {
        let a = GradcheckCase::random(42).unwrap();
        let b = GradcheckCase::random(42).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn small_run_passes() {
        let r = run_gradcheck(1, 10, &GradcheckOptions::default()).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.checked > 0);
    }

    #[test]
    fn corruption_is_detected() {
        let opts = GradcheckOptions {
            corrupt: true,
            ..Default::default()
        };
        let r = run_gradcheck(1, 1, &opts).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failing_seeds, vec![trial_seed(1, 0)]);
    }
}
