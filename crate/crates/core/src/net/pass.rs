use super::noise::{inject_noise, DropoutScaling, NoiseDraw, NoiseMode, Phase};
use super::{Activation, DenseParams, Gradient, LayerSpec, NetworkParams, NetworkSpec};
use crate::error::{Error, Result};
use crate::ndcore::{log_softmax, log_softmax_at, matmul, Tensor};
use crate::scalar::Real;

/// Cached activations from one forward evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<T> {
    /// `inputs[i]` is the `1 × width` row fed into layer `i`.
    pub inputs: Vec<Tensor<T>>,
    /// Noise applied during the pass (train phase only).
    pub noise: Option<NoiseDraw<T>>,
    pub logits: Tensor<T>,
    pub phase: Phase,
}

/// Evaluates the network on a single example.
///
/// `x` may be a vector or a `1 × d` row. In the train phase `draw` must hold
/// one ε per noise layer; in the inference phase it is ignored.
pub fn forward<T: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    x: &Tensor<T>,
    draw: Option<&NoiseDraw<T>>,
    phase: Phase,
) -> Result<ForwardTrace<T>> {
    if x.len() != spec.input_dim() {
        return Err(Error::Shape {
            op: "network input",
            left: vec![spec.input_dim()],
            right: x.shape().to_vec(),
        });
    }
    let noise_count = spec.noise_layers().count();
    let draw = match phase {
        Phase::Train if noise_count > 0 => {
            let d = draw.ok_or(Error::MissingDraw)?;
            if d.layers().len() != noise_count {
                return Err(Error::MissingDraw);
            }
            Some(d)
        }
        _ => None,
    };

    let mut inputs = Vec::with_capacity(spec.layers().len());
    let mut current = Tensor::new(vec![1, x.len()], x.data().to_vec())?;
    let mut dense_index = 0;
    let mut noise_index = 0;
    for (i, layer) in spec.layers().iter().enumerate() {
        let next = match layer {
            LayerSpec::Dense { .. } => {
                let p = params
                    .layers
                    .get(dense_index)
                    .ok_or_else(|| Error::invalid("parameters", "fewer dense layers than spec").at_layer(i))?;
                dense_index += 1;
                dense_forward(&current, p).map_err(|e| e.at_layer(i))?
            }
            LayerSpec::Activation(Activation::Relu) => current.map(|v| if v > T::zero() { v } else { T::zero() }),
            LayerSpec::Activation(Activation::Tanh) => current.map(T::tanh),
            LayerSpec::Noise(noise) => {
                let eps = draw.map(|d| &d.layers()[noise_index]);
                noise_index += 1;
                inject_noise(&current, eps, noise, phase).map_err(|e| e.at_layer(i))?
            }
        };
        inputs.push(std::mem::replace(&mut current, next));
    }
    let logits = current.reshape(vec![spec.num_classes()])?;
    Ok(ForwardTrace {
        inputs,
        noise: draw.cloned(),
        logits,
        phase,
    })
}

fn dense_forward<T: Real>(x: &Tensor<T>, p: &DenseParams<T>) -> Result<Tensor<T>> {
    let mut out = matmul(x, &p.weight)?;
    if let Some(b) = &p.bias {
        for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// `log p(y | logits)` under a softmax likelihood.
pub fn log_likelihood<T: Real>(trace: &ForwardTrace<T>, y: usize) -> Result<T> {
    let classes = trace.logits.len();
    if y >= classes {
        return Err(Error::ClassIndex { index: y, classes });
    }
    log_softmax_at(&trace.logits, y)
}

/// Gradient of `log p(y | ·)` with respect to every parameter, holding the
/// trace's noise fixed.
pub fn backward<T: Real>(
    spec: &NetworkSpec,
    params: &NetworkParams<T>,
    trace: &ForwardTrace<T>,
    y: usize,
) -> Result<Gradient<T>> {
    if trace.inputs.len() != spec.layers().len() || trace.logits.len() != spec.num_classes() {
        return Err(Error::invalid("trace", "trace does not match network spec"));
    }
    if trace.phase != Phase::Train {
        return Err(Error::invalid("trace", "backward requires a train-phase trace"));
    }
    let classes = spec.num_classes();
    if y >= classes {
        return Err(Error::ClassIndex { index: y, classes });
    }

    // d log softmax_y / d logits = onehot(y) - softmax
    // 1 - p_y is taken through expm1 so it stays accurate as p_y -> 1
    let log_probs = log_softmax(&trace.logits)?;
    let mut delta: Vec<T> = log_probs.data().iter().map(|lp| -lp.exp()).collect();
    delta[y] = -log_softmax_at(&trace.logits, y)?.exp_m1();

    let mut grad = params.zeros_like();
    let mut dense_index = params.layers.len();
    let mut noise_index = spec.noise_layers().count();
    let first_dense = spec
        .layers()
        .iter()
        .position(|l| matches!(l, LayerSpec::Dense { .. }))
        .expect("validated");

    for (i, layer) in spec.layers().iter().enumerate().rev() {
        let input = trace.inputs[i].data();
        match layer {
            LayerSpec::Dense { in_dim, out_dim, .. } => {
                dense_index -= 1;
                let p = &params.layers[dense_index];
                let g = &mut grad.layers[dense_index];
                let gw = g.weight.data_mut();
                for (r, &a) in input.iter().enumerate() {
                    let row = &mut gw[r * out_dim..(r + 1) * out_dim];
                    for (w, &d) in row.iter_mut().zip(&delta) {
                        *w = a * d;
                    }
                }
                if let Some(b) = g.bias.as_mut() {
                    b.data_mut().copy_from_slice(&delta);
                }
                if i == first_dense {
                    break;
                }
                let w = p.weight.data();
                delta = (0..*in_dim)
                    .map(|r| {
                        let row = &w[r * out_dim..(r + 1) * out_dim];
                        let mut s = T::zero();
                        for (&wv, &d) in row.iter().zip(&delta) {
                            s += wv * d;
                        }
                        s
                    })
                    .collect();
            }
            LayerSpec::Activation(Activation::Relu) => {
                for (d, &a) in delta.iter_mut().zip(input) {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            LayerSpec::Activation(Activation::Tanh) => {
                for (d, &a) in delta.iter_mut().zip(input) {
                    let t = a.tanh();
                    *d *= T::one() - t * t;
                }
            }
            LayerSpec::Noise(noise) => {
                noise_index -= 1;
                if noise.mode == NoiseMode::BernoulliMultiply {
                    let draw = trace.noise.as_ref().ok_or(Error::MissingDraw)?;
                    let eps = draw.layers()[noise_index].data();
                    match noise.scaling {
                        DropoutScaling::AtInference => {
                            for (d, &e) in delta.iter_mut().zip(eps) {
                                *d *= e;
                            }
                        }
                        DropoutScaling::Inverted => {
                            let keep = T::of(noise.keep_prob);
                            for (d, &e) in delta.iter_mut().zip(eps) {
                                *d = *d * e / keep;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::super::NoiseSpec;
    use super::*;
    use crate::rng::DrawCoordinates;

    fn dense(i: usize, o: usize) -> LayerSpec {
        LayerSpec::Dense {
            in_dim: i,
            out_dim: o,
            has_bias: true,
        }
    }

    #[test]
    fn identity_network() {
        let spec = NetworkSpec::new(2, vec![dense(2, 2)]).unwrap();
        let params = NetworkParams {
            layers: vec![DenseParams {
                weight: Tensor::identity(2),
                bias: Some(Tensor::zeros(&[2])),
            }],
        };
        let tr = forward(&spec, &params, &Tensor::vector(vec![3.0, 4.0]), None, Phase::Inference).unwrap();
        assert_eq!(tr.logits.data(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_then_relu() {
        let spec = NetworkSpec::new(2, vec![dense(2, 1), LayerSpec::Activation(Activation::Relu)]).unwrap();
        let params = NetworkParams {
            layers: vec![DenseParams {
                weight: Tensor::matrix(2, 1, vec![1.0, 2.0]).unwrap(),
                bias: Some(Tensor::vector(vec![0.5])),
            }],
        };
        let tr = forward(&spec, &params, &Tensor::vector(vec![3.0, 4.0]), None, Phase::Train).unwrap();
        assert_eq!(tr.logits.data(), &[11.5]);
    }

    /// Straight-line re-evaluation of a 2-4-2 relu/dropout net.
    #[test]
    fn matches_straight_line_evaluation() {
        let spec = NetworkSpec::mlp(2, &[4], 2, Activation::Relu, Some(NoiseSpec::bernoulli(0.5))).unwrap();
        let mut params = NetworkParams::<f64>::init(&spec, 17);
        params.layers[0].bias = Some(Tensor::vector(vec![0.1, -0.2, 0.3, -0.4]));
        params.layers[1].bias = Some(Tensor::vector(vec![0.05, -0.05]));
        let draw = NoiseDraw::at(&spec, DrawCoordinates::new(3, 0, 1, 2, 0));
        let x = [0.7, -1.3];
        let tr = forward(&spec, &params, &Tensor::vector(x.to_vec()), Some(&draw), Phase::Train).unwrap();

        let w1 = params.layers[0].weight.data();
        let b1 = params.layers[0].bias.as_ref().unwrap().data();
        let w2 = params.layers[1].weight.data();
        let b2 = params.layers[1].bias.as_ref().unwrap().data();
        let mask = draw.layers()[0].data();
        let mut hidden = [0.0; 4];
        for j in 0..4 {
            let pre = x[0] * w1[j] + x[1] * w1[4 + j] + b1[j];
            hidden[j] = pre.max(0.0) * mask[j];
        }
        for c in 0..2 {
            let mut out = b2[c];
            for j in 0..4 {
                out += hidden[j] * w2[j * 2 + c];
            }
            assert!((tr.logits.data()[c] - out).abs() < 1e-12);
        }
    }

    #[test]
    fn replaying_noise_is_bit_exact() {
        let spec = NetworkSpec::mlp(3, &[5, 4], 3, Activation::Tanh, Some(NoiseSpec::bernoulli(0.6))).unwrap();
        let params = NetworkParams::<f64>::init(&spec, 2);
        let x = Tensor::vector(vec![0.2, -0.4, 1.1]);
        let draw = NoiseDraw::at(&spec, DrawCoordinates::new(8, 1, 2, 3, 4));
        let a = forward(&spec, &params, &x, Some(&draw), Phase::Train).unwrap();
        let replay = forward(&spec, &params, &x, a.noise.as_ref(), Phase::Train).unwrap();
        assert_eq!(a, replay);
        let regenerated = NoiseDraw::at(&spec, draw.coordinates().unwrap());
        assert_eq!(regenerated, draw);
    }

    #[test]
    fn keep_one_train_equals_inference() {
        let spec = NetworkSpec::mlp(3, &[6, 6], 4, Activation::Relu, Some(NoiseSpec::bernoulli(1.0))).unwrap();
        let params = NetworkParams::<f64>::init(&spec, 9);
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let draw = NoiseDraw::at(&spec, DrawCoordinates::new(1, 0, 0, 0, 0));
        let train = forward(&spec, &params, &x, Some(&draw), Phase::Train).unwrap();
        let infer = forward(&spec, &params, &x, None, Phase::Inference).unwrap();
        assert_eq!(train.logits, infer.logits);
    }

    #[test]
    fn inference_is_exact_expectation_for_linear_tail() {
        // one dropout layer over 3 units followed by a linear layer: the mean
        // over all 8 masks weighted by their probabilities equals inference
        let spec = NetworkSpec::new(
            2,
            vec![
                dense(2, 3),
                LayerSpec::Activation(Activation::Relu),
                LayerSpec::Noise(NoiseSpec::bernoulli(0.3)),
                dense(3, 2),
            ],
        )
        .unwrap();
        let params = NetworkParams::<f64>::init(&spec, 21);
        let x = Tensor::vector(vec![0.9, 0.4]);
        let mut expected = [0.0; 2];
        for m in 0u32..8 {
            let bits: Vec<f64> = (0..3).map(|j| ((m >> j) & 1) as f64).collect();
            let ones = m.count_ones() as i32;
            let prob = 0.3f64.powi(ones) * 0.7f64.powi(3 - ones);
            let draw = NoiseDraw::from_layers(vec![Tensor::vector(bits)]);
            let tr = forward(&spec, &params, &x, Some(&draw), Phase::Train).unwrap();
            for (e, l) in expected.iter_mut().zip(tr.logits.data()) {
                *e += prob * l;
            }
        }
        let infer = forward(&spec, &params, &x, None, Phase::Inference).unwrap();
        for (l, e) in infer.logits.data().iter().zip(&expected) {
            assert!((l - e).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_cases() {
        let tr = |logits: Vec<f64>| ForwardTrace {
            inputs: vec![],
            noise: None,
            logits: Tensor::vector(logits),
            phase: Phase::Train,
        };
        assert!((log_likelihood(&tr(vec![2.0, 2.0]), 0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_likelihood(&tr(vec![0.0, 3.0f64.ln()]), 1).unwrap() - 0.75f64.ln()).abs() < 1e-15);
        assert_eq!(
            log_likelihood(&tr(vec![0.0, 1.0]), 2),
            Err(Error::ClassIndex { index: 2, classes: 2 })
        );
    }

    #[test]
    fn log_likelihood_matches_high_precision_reference() {
        // 50-digit reference for log softmax([0.25, -1.5, 2.75, 0.0])[2]
        let tr = ForwardTrace {
            inputs: vec![],
            noise: None,
            logits: Tensor::vector(vec![0.25, -1.5, 2.75, 0.0]),
            phase: Phase::Train,
        };
        let got = log_likelihood(&tr, 2).unwrap();
        assert!((got - REFERENCE_LOG_LIK).abs() < 1e-12, "{got}");
        assert!(got <= 0.0);
    }
    const REFERENCE_LOG_LIK: f64 = -0.14865885050589575;

    #[test]
    fn softmax_regression_gradient_closed_form() {
        let spec = NetworkSpec::new(3, vec![dense(3, 4)]).unwrap();
        let params = NetworkParams::<f64>::init(&spec, 4);
        let x = vec![0.5, -1.0, 2.0];
        let tr = forward(&spec, &params, &Tensor::vector(x.clone()), None, Phase::Train).unwrap();
        let g = backward(&spec, &params, &tr, 1).unwrap();
        let probs: Vec<f64> = log_softmax(&tr.logits)
            .unwrap()
            .data()
            .iter()
            .map(|v| v.exp())
            .collect();
        for (r, xv) in x.iter().enumerate() {
            for (c, p) in probs.iter().enumerate() {
                let onehot = if c == 1 { 1.0 } else { 0.0 };
                let want = (onehot - p) * xv;
                assert!((g.layers[0].weight.data()[r * 4 + c] - want).abs() < 1e-15);
            }
        }
        for (c, p) in probs.iter().enumerate() {
            let onehot = if c == 1 { 1.0 } else { 0.0 };
            assert!((g.layers[0].bias.as_ref().unwrap().data()[c] - (onehot - p)).abs() < 1e-15);
        }
    }

    #[test]
    fn dead_units_get_zero_downstream_gradient() {
        let spec = NetworkSpec::mlp(2, &[3], 2, Activation::Tanh, Some(NoiseSpec::bernoulli(0.5))).unwrap();
        let params = NetworkParams::<f64>::init(&spec, 6);
        let draw = NoiseDraw::from_layers(vec![Tensor::vector(vec![0.0, 0.0, 0.0])]);
        let tr = forward(
            &spec,
            &params,
            &Tensor::vector(vec![1.0, 2.0]),
            Some(&draw),
            Phase::Train,
        )
        .unwrap();
        let g = backward(&spec, &params, &tr, 0).unwrap();
        assert!(g.layers[1].weight.data().iter().all(|&v| v == 0.0));
        assert!(g.layers[0].weight.data().iter().all(|&v| v == 0.0));
        // the output bias still learns
        assert!(g.layers[1].bias.as_ref().unwrap().data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn errors_carry_layer_index() {
        let spec = NetworkSpec::mlp(2, &[3], 2, Activation::Relu, Some(NoiseSpec::bernoulli(0.5))).unwrap();
        let params = NetworkParams::<f64>::init(&spec, 0);
        let x = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(forward(&spec, &params, &x, None, Phase::Train), Err(Error::MissingDraw));
        let bad = NoiseDraw::from_layers(vec![Tensor::vector(vec![1.0, 1.0])]);
        match forward(&spec, &params, &x, Some(&bad), Phase::Train) {
            Err(Error::Layer { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("{other:?}"),
        }
        assert!(forward(&spec, &params, &Tensor::vector(vec![1.0]), None, Phase::Inference).is_err());
        let infer = forward(&spec, &params, &x, None, Phase::Inference).unwrap();
        assert!(backward(&spec, &params, &infer, 0).is_err());
    }
}
