//! Multi-sample likelihood objectives and their gradients.
//!
//! For one example and S noise samples with log-likelihoods `ℓ_1..ℓ_S` the
//! training objective is `log (1/S) Σ exp(ℓ_i)`. Its gradient is the
//! importance-weighted average `Σ w_i ∇ℓ_i` with `w_i = exp(ℓ_i) / Σ exp(ℓ_j)`.
//! Everything here stays in the log domain.
//!
//! The exact routines enumerate every dropout mask of a small network and
//! give the true values of the S-sample bound and of the marginal likelihood,
//! which the Monte Carlo estimator and the trainer are checked against.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ndcore::{log_mean_exp, log_sum_exp, Tensor};
use crate::net::{
    backward, forward, log_likelihood, Gradient, NetworkParams, NetworkSpec, NoiseDraw, NoiseMode, NoiseSpec, Phase,
};
use crate::rng::DrawCoordinates;
use crate::scalar::Real;

/// Log-likelihood and parameter gradient for one (example, noise sample).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEvaluation<T> {
    pub log_lik: T,
    pub grad: Gradient<T>,
    pub draw_id: Option<DrawCoordinates>,
}

/// Normalized likelihoods of an example's S samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights<T>(Vec<T>);

impl<T: Real> ImportanceWeights<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> T {
        self.0.iter().copied().fold(T::zero(), T::max)
    }

    /// Effective sample size `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> T {
        T::one() / self.0.iter().map(|&w| w * w).sum::<T>()
    }
}

/// `w_i = exp(ℓ_i - logsumexp(ℓ))`.
pub fn importance_weights<T: Real>(log_liks: &[T]) -> Result<ImportanceWeights<T>> {
    let lse = log_sum_exp(log_liks)?;
    Ok(ImportanceWeights(log_liks.iter().map(|&l| (l - lse).exp()).collect()))
}

/// `log (1/S) Σ exp(ℓ_i)`; with S = 1 this is `ℓ_1` exactly.
pub fn lsgd_inner<T: Real>(log_liks: &[T]) -> Result<T> {
    log_mean_exp(log_liks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Combined<T> {
    pub gradient: Gradient<T>,
    pub weights: ImportanceWeights<T>,
    pub objective: T,
}

/// Importance-weighted gradient of one example's S-sample objective.
///
/// Accumulates `w_i · grad_i` in sample order. A single sample is returned
/// unchanged, with weight exactly 1.
pub fn iwsgd_combine<T: Real>(samples: &[SampleEvaluation<T>]) -> Result<Combined<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("samples", "at least one sample is required"))?;
    if samples.iter().any(|s| !s.grad.congruent(&first.grad)) {
        return Err(Error::invalid("samples", "gradients are not congruent"));
    }
    let log_liks: Vec<T> = samples.iter().map(|s| s.log_lik).collect();
    let weights = importance_weights(&log_liks)?;
    let objective = lsgd_inner(&log_liks)?;
    let gradient = if samples.len() == 1 {
        first.grad.clone()
    } else {
        let mut g = first.grad.zeros_like();
        for (s, &w) in samples.iter().zip(weights.as_slice()) {
            g.axpy(w, &s.grad)?;
        }
        g
    };
    Ok(Combined {
        gradient,
        weights,
        objective,
    })
}

/// Forward and backward pass for one example under one draw.
pub fn evaluate_sample<T: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
    y: usize,
    draw: &NoiseDraw<T>,
) -> Result<SampleEvaluation<T>> {
    let trace = forward(spec, params, x, Some(draw), Phase::Train)?;
    let log_lik = log_likelihood(&trace, y)?;
    let grad = backward(spec, params, &trace, y)?;
    Ok(SampleEvaluation {
        log_lik,
        grad,
        draw_id: draw.coordinates(),
    })
}

/// Limits for exhaustive enumeration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnumerationLimits {
    /// Largest number of dropout units whose masks are enumerated.
    pub max_units: usize,
    /// Largest number of ordered S-tuples of masks.
    pub max_tuples: u128,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        EnumerationLimits {
            max_units: 22,
            max_tuples: 1 << 24,
        }
    }
}

/// Log-likelihood and probability of every mask with non-zero probability.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTable {
    pub log_liks: Vec<f64>,
    pub probs: Vec<f64>,
    pub units: usize,
}

impl MaskTable {
    /// True when every reachable mask gives the same likelihood.
    pub fn is_flat(&self) -> bool {
        self.log_liks.windows(2).all(|w| w[0] == w[1])
    }
}

/// Enumerates all `2^k` dropout masks of the network (with `noise` applied
/// to every noise layer) and evaluates `log p(y | x, mask)` for each.
///
/// Mask bit `j` covers noise unit `j`, counting across noise layers in order.
pub fn mask_table<T: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
    y: usize,
    noise: &NoiseSpec,
    limits: EnumerationLimits,
) -> Result<MaskTable> {
    if noise.mode != NoiseMode::BernoulliMultiply {
        return Err(Error::UnsupportedMode);
    }
    let spec = spec.with_noise(*noise)?;
    let units = spec.noise_units();
    if units > limits.max_units {
        return Err(Error::Capacity {
            what: "dropout units",
            required: units as u128,
            limit: limits.max_units as u128,
        });
    }
    let widths: Vec<usize> = spec.noise_layers().map(|(_, w, _)| w).collect();
    let keep = noise.keep_prob;
    let mut log_liks = Vec::new();
    let mut probs = Vec::new();
    for mask in 0u64..(1u64 << units) {
        let ones = mask.count_ones() as i32;
        let prob = keep.powi(ones) * (1.0 - keep).powi(units as i32 - ones);
        if prob == 0.0 {
            continue;
        }
        let mut bit = 0;
        let layers = widths
            .iter()
            .map(|&w| {
                let t = Tensor::vector(
                    (0..w)
                        .map(|j| {
                            if (mask >> (bit + j)) & 1 == 1 {
                                T::one()
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                );
                bit += w;
                t
            })
            .collect();
        let trace = forward(&spec, params, x, Some(&NoiseDraw::from_layers(layers)), Phase::Train)?;
        log_liks.push(log_likelihood(&trace, y)?.as_f64());
        probs.push(prob);
    }
    Ok(MaskTable { log_liks, probs, units })
}

/// `log Σ_mask Pr(mask) p(y | x, mask)` by exhaustive enumeration.
pub fn marginal_exact<T: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
    y: usize,
    noise: &NoiseSpec,
) -> Result<f64> {
    let table = mask_table(spec, params, x, y, noise, EnumerationLimits::default())?;
    marginal_from_table(&table)
}

/// Marginal log-likelihood from a mask table.
///
/// Normalizing by `Σ Pr(mask)` (which is 1 up to rounding) makes a flat table
/// return its common value exactly.
pub fn marginal_from_table(table: &MaskTable) -> Result<f64> {
    let max = table.log_liks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&l, &p) in table.log_liks.iter().zip(&table.probs) {
        num += p * (l - max).exp();
        den += p;
    }
    Ok(max + (num / den).ln())
}

/// Exact `E[log (1/S) Σ_{i≤S} p(y | x, mask_i)]` over iid S-tuples of masks.
pub fn lsgd_exact<T: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
    y: usize,
    noise: &NoiseSpec,
    samples: usize,
    limits: EnumerationLimits,
) -> Result<f64> {
    check_tuple_capacity(spec.noise_units(), samples, limits)?;
    let table = mask_table(spec, params, x, y, noise, limits)?;
    lsgd_from_table(&table, samples, limits)
}

fn check_tuple_capacity(units: usize, samples: usize, limits: EnumerationLimits) -> Result<()> {
    if samples == 0 {
        return Err(Error::invalid("S", "the number of samples must be positive"));
    }
    let bits = units as u128 * samples as u128;
    let required = if bits >= 127 { u128::MAX } else { 1u128 << bits };
    if required > limits.max_tuples {
        return Err(Error::Capacity {
            what: "mask tuples",
            required,
            limit: limits.max_tuples,
        });
    }
    Ok(())
}

/// S-sample bound from a mask table.
///
/// The objective is symmetric in the tuple order, so ordered tuples are
/// visited as multisets `i_1 ≤ … ≤ i_S` weighted by their multinomial count;
/// this covers exactly the same `M^S` tuples.
pub fn lsgd_from_table(table: &MaskTable, samples: usize, limits: EnumerationLimits) -> Result<f64> {
    check_tuple_capacity(table.units, samples, limits)?;
    let m = table.log_liks.len();
    if m == 0 {
        return Err(Error::DegenerateLikelihood);
    }
    let reference = table.log_liks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if reference == f64::NEG_INFINITY {
        return Err(Error::DegenerateLikelihood);
    }
    let factorial: Vec<f64> = (0..=samples)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();

    let mut idx = vec![0usize; samples];
    let mut lls = vec![0.0; samples];
    let mut num = 0.0;
    let mut den = 0.0;
    loop {
        let mut prob = 1.0;
        let mut multiplicity = 1.0;
        let mut run = 1;
        for k in 0..samples {
            prob *= table.probs[idx[k]];
            lls[k] = table.log_liks[idx[k]];
            if k > 0 && idx[k] == idx[k - 1] {
                run += 1;
            } else {
                multiplicity *= factorial[run];
                run = 1;
            }
        }
        multiplicity *= factorial[run];
        let weight = prob * factorial[samples] / multiplicity;
        if weight > 0.0 {
            let value = log_mean_exp(&lls)?;
            num += weight * (value - reference);
            den += weight;
        }

        // next non-decreasing index tuple
        let mut k = samples;
        loop {
            if k == 0 {
                return Ok(reference + num / den);
            }
            k -= 1;
            if idx[k] + 1 < m {
                let v = idx[k] + 1;
                for slot in &mut idx[k..] {
                    *slot = v;
                }
                break;
            }
        }
    }
}

/// Monte Carlo estimate of the S-sample bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundEstimate {
    pub value: f64,
    /// Sample standard deviation over replicates divided by `sqrt(n_outer)`.
    pub std_error: f64,
    pub n_outer: usize,
    pub samples: usize,
    /// Replicates excluded because every sample underflowed.
    pub degenerate: usize,
}

/// Averages `lsgd_inner` over `n_outer` independent S-tuples of draws.
///
/// Fails if more than 1% of replicates are degenerate.
#[allow(clippy::too_many_arguments)]
pub fn lsgd_mc<T: Real, R: Rng + ?Sized>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
    y: usize,
    noise: &NoiseSpec,
    samples: usize,
    n_outer: usize,
    rng: &mut R,
) -> Result<BoundEstimate> {
    if n_outer < 2 {
        return Err(Error::invalid("n_outer", "at least two replicates are required"));
    }
    if samples == 0 {
        return Err(Error::invalid("S", "the number of samples must be positive"));
    }
    let spec = spec.with_noise(*noise)?;
    let mut lls = vec![T::zero(); samples];
    let mut values = Vec::with_capacity(n_outer);
    let mut degenerate = 0;
    for _ in 0..n_outer {
        for l in lls.iter_mut() {
            let draw = NoiseDraw::sample(&spec, rng);
            let trace = forward(&spec, params, x, Some(&draw), Phase::Train)?;
            *l = log_likelihood(&trace, y)?;
        }
        match lsgd_inner(&lls) {
            Ok(v) => values.push(v.as_f64()),
            Err(Error::DegenerateLikelihood) => degenerate += 1,
            Err(e) => return Err(e),
        }
    }
    if degenerate * 100 > n_outer {
        return Err(Error::DegenerateReplicates {
            degenerate,
            replicates: n_outer,
        });
    }
    // shifted by the first replicate so identical replicates give an exact mean
    let n = values.len() as f64;
    let origin = values[0];
    let shift = values.iter().map(|v| v - origin).sum::<f64>() / n;
    let mean = origin + shift;
    let var = values.iter().map(|v| (v - origin - shift).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(BoundEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        n_outer: values.len(),
        samples,
        degenerate,
    })
}
