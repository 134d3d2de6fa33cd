use rand::Rng;
use rand_distr::StandardNormal;

use super::NetworkSpec;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::rng::DrawCoordinates;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// `z = h ⊙ ε` with `ε ~ Bernoulli(keep_prob)` (dropout).
    BernoulliMultiply,
    /// `z = h + ε` with `ε ~ N(0, sigma²)`.
    GaussianAdd,
}

/// Where dropout's `1/keep_prob` correction lives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DropoutScaling {
    /// Train with the raw mask, multiply by `keep_prob` at inference.
    #[default]
    AtInference,
    /// Divide by `keep_prob` during training, identity at inference.
    Inverted,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    pub keep_prob: f64,
    pub sigma: f64,
    pub scaling: DropoutScaling,
}

impl NoiseSpec {
    pub fn bernoulli(keep_prob: f64) -> Self {
        NoiseSpec {
            mode: NoiseMode::BernoulliMultiply,
            keep_prob,
            sigma: 0.0,
            scaling: DropoutScaling::AtInference,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec {
            mode: NoiseMode::GaussianAdd,
            keep_prob: 1.0,
            sigma,
            scaling: DropoutScaling::AtInference,
        }
    }

    pub fn inverted(self) -> Self {
        NoiseSpec {
            scaling: DropoutScaling::Inverted,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            NoiseMode::BernoulliMultiply => {
                if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
                    return Err(Error::invalid(
                        "keep_prob",
                        format!("{} is outside (0, 1]", self.keep_prob),
                    ));
                }
            }
            NoiseMode::GaussianAdd => {
                if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
                    return Err(Error::invalid(
                        "sigma",
                        format!("{} must be finite and >= 0", self.sigma),
                    ));
                }
            }
        }
        Ok(())
    }

    /// True when the noise leaves activations untouched in both phases.
    pub fn is_identity(&self) -> bool {
        match self.mode {
            NoiseMode::BernoulliMultiply => self.keep_prob == 1.0,
            NoiseMode::GaussianAdd => self.sigma == 0.0,
        }
    }

    /// Samples one ε of the given width.
    pub fn sample<T: Real, R: Rng + ?Sized>(&self, width: usize, rng: &mut R) -> Tensor<T> {
        let data = match self.mode {
            NoiseMode::BernoulliMultiply => (0..width)
                .map(|_| {
                    if rng.random::<f64>() < self.keep_prob {
                        T::one()
                    } else {
                        T::zero()
                    }
                })
                .collect(),
            NoiseMode::GaussianAdd => (0..width)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::of(self.sigma * z)
                })
                .collect(),
        };
        Tensor::vector(data)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Inference,
}

/// One realized ε for every noise layer of a network, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw<T> {
    layers: Vec<Tensor<T>>,
    coordinates: Option<DrawCoordinates>,
}

impl<T: Real> NoiseDraw<T> {
    pub fn from_layers(layers: Vec<Tensor<T>>) -> Self {
        NoiseDraw {
            layers,
            coordinates: None,
        }
    }

    /// Regenerates the draw at `coordinates`; noise layer `i` of the spec
    /// reads the stream keyed with `layer = i`.
    pub fn at(spec: &NetworkSpec, coordinates: DrawCoordinates) -> Self {
        let layers = spec
            .noise_layers()
            .map(|(index, width, noise)| {
                let mut rng = coordinates.with_layer(index as u32).stream();
                noise.sample(width, &mut rng)
            })
            .collect();
        NoiseDraw {
            layers,
            coordinates: Some(coordinates),
        }
    }

    /// Draw from a caller-supplied sequential generator.
    pub fn sample<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let layers = spec
            .noise_layers()
            .map(|(_, width, noise)| noise.sample(width, rng))
            .collect();
        NoiseDraw {
            layers,
            coordinates: None,
        }
    }

    /// The draw that leaves every noise layer at its identity (ones for
    /// dropout, zeros for additive noise).
    pub fn identity(spec: &NetworkSpec) -> Self {
        let layers = spec
            .noise_layers()
            .map(|(_, width, noise)| match noise.mode {
                NoiseMode::BernoulliMultiply => Tensor::filled(&[width], T::one()),
                NoiseMode::GaussianAdd => Tensor::zeros(&[width]),
            })
            .collect();
        NoiseDraw {
            layers,
            coordinates: None,
        }
    }

    pub fn layers(&self) -> &[Tensor<T>] {
        &self.layers
    }

    pub fn coordinates(&self) -> Option<DrawCoordinates> {
        self.coordinates
    }
}

/// Applies `g(h, ε)` for one noise layer.
///
/// Inference never samples: dropout scales by `keep_prob` (or is the identity
/// in inverted mode) and additive noise contributes its zero mean.
pub fn inject_noise<T: Real>(
    h: &Tensor<T>,
    eps: Option<&Tensor<T>>,
    spec: &NoiseSpec,
    phase: Phase,
) -> Result<Tensor<T>> {
    match phase {
        Phase::Inference => Ok(match (spec.mode, spec.scaling) {
            (NoiseMode::BernoulliMultiply, DropoutScaling::AtInference) => {
                let keep = T::of(spec.keep_prob);
                h.map(|v| keep * v)
            }
            _ => h.clone(),
        }),
        Phase::Train => {
            let eps = eps.ok_or(Error::MissingDraw)?;
            if eps.len() != h.len() {
                return Err(Error::Shape {
                    op: "inject_noise",
                    left: h.shape().to_vec(),
                    right: eps.shape().to_vec(),
                });
            }
            let data: Vec<T> = match (spec.mode, spec.scaling) {
                (NoiseMode::BernoulliMultiply, DropoutScaling::AtInference) => {
                    h.data().iter().zip(eps.data()).map(|(&a, &e)| a * e).collect()
                }
                (NoiseMode::BernoulliMultiply, DropoutScaling::Inverted) => {
                    let keep = T::of(spec.keep_prob);
                    h.data().iter().zip(eps.data()).map(|(&a, &e)| a * e / keep).collect()
                }
                (NoiseMode::GaussianAdd, _) => h.data().iter().zip(eps.data()).map(|(&a, &e)| a + e).collect(),
            };
            Tensor::new(h.shape().to_vec(), data)
        }
    }
}
