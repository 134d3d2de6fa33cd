//! Feed-forward networks with stochastic (noise-injected) hidden units.
//!
//! A network is an ordered list of [`LayerSpec`]s. Dense layers own
//! parameters; activation and noise layers do not. Evaluation always takes an
//! explicit [`NoiseDraw`], which makes `forward` a pure function of
//! `(params, x, draw)` and lets callers replay or enumerate noise.

mod noise;
mod pass;

pub use noise::{inject_noise, DropoutScaling, NoiseDraw, NoiseMode, NoiseSpec, Phase};
pub use pass::{backward, forward, log_likelihood, ForwardTrace};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::rng::init_stream;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
        has_bias: bool,
    },
    Activation(Activation),
    Noise(NoiseSpec),
}

/// Validated layer chain. The width of the last layer is the number of classes.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    input_dim: usize,
    layers: Vec<LayerSpec>,
    widths: Vec<usize>,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("network", "input dimension must be positive"));
        }
        let mut width = input_dim;
        let mut widths = Vec::with_capacity(layers.len());
        let mut dense = 0;
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                LayerSpec::Dense { in_dim, out_dim, .. } => {
                    if in_dim != width {
                        return Err(Error::Shape {
                            op: "dense layer chain",
                            left: vec![width],
                            right: vec![in_dim, out_dim],
                        }
                        .at_layer(i));
                    }
                    if out_dim == 0 {
                        return Err(Error::invalid("network", "dense output width must be positive").at_layer(i));
                    }
                    width = out_dim;
                    dense += 1;
                }
                LayerSpec::Activation(_) => {}
                LayerSpec::Noise(spec) => spec.validate().map_err(|e| e.at_layer(i))?,
            }
            widths.push(width);
        }
        if dense == 0 {
            return Err(Error::invalid("network", "at least one dense layer is required"));
        }
        Ok(NetworkSpec {
            input_dim,
            layers,
            widths,
        })
    }

    /// `input → [dense → activation → noise]* → dense(classes)`.
    ///
    /// Noise follows every hidden activation; pass `None` for a noise-free net.
    pub fn mlp(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        noise: Option<NoiseSpec>,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                in_dim: width,
                out_dim: h,
                has_bias: true,
            });
            layers.push(LayerSpec::Activation(activation));
            if let Some(n) = noise {
                layers.push(LayerSpec::Noise(n));
            }
            width = h;
        }
        layers.push(LayerSpec::Dense {
            in_dim: width,
            out_dim: classes,
            has_bias: true,
        });
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("validated non-empty")
    }

    /// Output width of layer `i`.
    pub fn width(&self, i: usize) -> usize {
        self.widths[i]
    }

    /// `(layer index, width, spec)` for each noise layer in order.
    pub fn noise_layers(&self) -> impl Iterator<Item = (usize, usize, &NoiseSpec)> + '_ {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            LayerSpec::Noise(n) => Some((i, self.widths[i], n)),
            _ => None,
        })
    }

    /// Total number of noisy units across all noise layers.
    pub fn noise_units(&self) -> usize {
        self.noise_layers().map(|(_, w, _)| w).sum()
    }

    /// Copy with every noise layer replaced by `noise`.
    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                LayerSpec::Noise(_) => LayerSpec::Noise(noise),
                other => *other,
            })
            .collect();
        Self::new(self.input_dim, layers)
    }

    fn dense_shapes(&self) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Dense {
                in_dim,
                out_dim,
                has_bias,
            } => Some((in_dim, out_dim, has_bias)),
            _ => None,
        })
    }
}

/// Parameters of one dense layer; `weight` is `in × out`, so `z = x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// All trainable parameters, one entry per dense layer in network order.
///
/// The same shape doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub layers: Vec<DenseParams<T>>,
}

pub type Gradient<T> = NetworkParams<T>;

impl<T: Real> NetworkParams<T> {
    /// He-style initialization: `W ~ N(0, 2/in_dim)`, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = init_stream(seed);
        let layers = spec
            .dense_shapes()
            .map(|(i, o, has_bias)| {
                let std = (2.0 / i as f64).sqrt();
                let data = (0..i * o)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        T::of(std * z)
                    })
                    .collect();
                DenseParams {
                    weight: Tensor::matrix(i, o, data).expect("shape"),
                    bias: has_bias.then(|| Tensor::zeros(&[o])),
                }
            })
            .collect();
        NetworkParams { layers }
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        NetworkParams {
            layers: spec
                .dense_shapes()
                .map(|(i, o, has_bias)| DenseParams {
                    weight: Tensor::zeros(&[i, o]),
                    bias: has_bias.then(|| Tensor::zeros(&[o])),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetworkParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseParams {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: l.bias.as_ref().map(|b| Tensor::zeros(b.shape())),
                })
                .collect(),
        }
    }

    /// Checks that shapes follow the spec's dense chain.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let expected: Vec<_> = spec.dense_shapes().collect();
        if expected.len() != self.layers.len() {
            return Err(Error::invalid(
                "parameters",
                format!(
                    "{} dense layers in spec, {} in params",
                    expected.len(),
                    self.layers.len()
                ),
            ));
        }
        for (k, ((i, o, has_bias), p)) in expected.into_iter().zip(&self.layers).enumerate() {
            if p.weight.shape() != [i, o] {
                return Err(Error::Shape {
                    op: "dense weight",
                    left: vec![i, o],
                    right: p.weight.shape().to_vec(),
                }
                .at_layer(k));
            }
            match (&p.bias, has_bias) {
                (Some(b), true) if b.shape() == [o] => {}
                (None, false) => {}
                _ => return Err(Error::invalid("parameters", "bias presence or shape mismatch").at_layer(k)),
            }
        }
        Ok(())
    }

    pub fn congruent(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.same_shape(&b.weight)
                    && match (&a.bias, &b.bias) {
                        (Some(x), Some(y)) => x.same_shape(y),
                        (None, None) => true,
                        _ => false,
                    }
            })
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
    }

    /// Flat view: each layer's weight (row-major) then its bias.
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.tensors().flat_map(|t| t.data().iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.tensors_mut().flat_map(|t| t.data_mut().iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn get(&self, index: usize) -> T {
        self.values().nth(index).expect("parameter index in range")
    }

    pub fn set(&mut self, index: usize, value: T) {
        *self.values_mut().nth(index).expect("parameter index in range") = value;
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::invalid("gradient", "parameter collections are not congruent"));
        }
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for t in self.tensors_mut() {
            t.scale(alpha);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.values()
            .zip(other.values())
            .map(|(a, b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_validation() {
        let bad = NetworkSpec::new(
            3,
            vec![
                LayerSpec::Dense {
                    in_dim: 3,
                    out_dim: 4,
                    has_bias: true,
                },
                LayerSpec::Activation(Activation::Relu),
                LayerSpec::Dense {
                    in_dim: 5,
                    out_dim: 2,
                    has_bias: true,
                },
            ],
        );
        match bad {
            Err(Error::Layer { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("{other:?}"),
        }
        assert!(NetworkSpec::new(3, vec![LayerSpec::Activation(Activation::Relu)]).is_err());
        assert!(NetworkSpec::mlp(2, &[4], 2, Activation::Relu, Some(NoiseSpec::bernoulli(0.0))).is_err());
    }

    #[test]
    fn mlp_layout() {
        let spec = NetworkSpec::mlp(20, &[64, 64], 5, Activation::Relu, Some(NoiseSpec::bernoulli(0.5))).unwrap();
        assert_eq!(spec.layers().len(), 7);
        assert_eq!(spec.num_classes(), 5);
        assert_eq!(spec.noise_units(), 128);
        let p = NetworkParams::<f64>::init(&spec, 1);
        p.check(&spec).unwrap();
        assert_eq!(p.num_params(), 20 * 64 + 64 + 64 * 64 + 64 + 64 * 5 + 5);
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let spec = NetworkSpec::mlp(200, &[100], 2, Activation::Relu, None).unwrap();
        let a = NetworkParams::<f64>::init(&spec, 3);
        assert_eq!(a, NetworkParams::init(&spec, 3));
        assert_ne!(a, NetworkParams::init(&spec, 4));
        let w = a.layers[0].weight.data();
        let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        // 20000 draws: sample variance within 5% of 2/200
        assert!((var / 0.01 - 1.0).abs() < 0.05, "{var}");
        assert!(a.layers[0].bias.as_ref().unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn flat_indexing_round_trips() {
        let spec = NetworkSpec::mlp(2, &[3], 2, Activation::Tanh, None).unwrap();
        let mut p = NetworkParams::<f64>::init(&spec, 0);
        let n = p.num_params();
        for i in 0..n {
            p.set(i, i as f64);
        }
        assert_eq!(
            p.values().collect::<Vec<_>>(),
            (0..n).map(|i| i as f64).collect::<Vec<_>>()
        );
        assert_eq!(p.layers[0].bias.as_ref().unwrap().data(), &[6.0, 7.0, 8.0]);
    }
}
