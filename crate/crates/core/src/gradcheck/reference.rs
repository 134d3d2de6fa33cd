//! Double-double forward pass used as the finite-difference reference.
//!
//! Values carry roughly 32 significant digits, so the difference of two
//! objective values one step apart is free of the cancellation that limits
//! central differences in plain `f64`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::net::{Activation, DropoutScaling, LayerSpec, NetworkSpec, NoiseDraw, NoiseMode};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.3190468138462996e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    fn scale(self, factor: f64) -> Dd {
        Dd {
            hi: self.hi * factor,
            lo: self.lo * factor,
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd {
                hi: f64::INFINITY,
                lo: 0.0,
            };
        }
        if self.hi < -700.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from(k)).scale(1.0 / 1024.0);
        // expm1(r) by Horner, then (1 + s)^2 - 1 = s (s + 2) ten times
        let mut s = Dd::ZERO;
        for n in (1..=12).rev() {
            s = (s + Dd::ONE) * r / Dd::from(n as f64);
        }
        for _ in 0..10 {
            s = s * (s + Dd::from(2.0));
        }
        (s + Dd::ONE).scale(2f64.powi(k as i32))
    }

    pub fn ln(self) -> Dd {
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }

    pub fn tanh(self) -> Dd {
        let t = (self.abs().scale(-2.0)).exp();
        let v = (Dd::ONE - t) / (Dd::ONE + t);
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let u = quick_two_sum(s, e + t);
        quick_two_sum(u.hi, u.lo + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + -b
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = self.hi * b.hi;
        let e = self.hi.mul_add(b.hi, -p);
        quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from(q2);
        let q3 = r.hi / b.hi;
        quick_two_sum(q1, q2) + Dd::from(q3)
    }
}

pub fn log_mean_exp(values: &[Dd]) -> Dd {
    let max = values.iter().copied().fold(values[0], |a, b| if b > a { b } else { a });
    let mut sum = Dd::ZERO;
    for &v in values {
        sum = sum + (v - max).exp();
    }
    max + (sum / Dd::from(values.len() as f64)).ln()
}

/// Log-likelihood of class `y` and the sign of every ReLU input.
pub struct Evaluation {
    pub log_lik: Dd,
    pub relu_pattern: Vec<bool>,
}

/// Runs the train-phase network on `x` with `draw` fixed; `params` is the flat
/// parameter vector (each layer's weight row-major, then its bias).
pub fn evaluate(spec: &NetworkSpec, params: &[Dd], x: &[f64], draw: &NoiseDraw<f64>, y: usize) -> Evaluation {
    let mut h: Vec<Dd> = x.iter().map(|&v| Dd::from(v)).collect();
    let mut relu_pattern = Vec::new();
    let mut offset = 0;
    let mut noise_index = 0;
    for layer in spec.layers() {
        h = match layer {
            LayerSpec::Dense {
                in_dim,
                out_dim,
                has_bias,
            } => {
                let (w, rest) = params[offset..].split_at(in_dim * out_dim);
                offset += in_dim * out_dim;
                let mut out = if *has_bias {
                    offset += out_dim;
                    rest[..*out_dim].to_vec()
                } else {
                    vec![Dd::ZERO; *out_dim]
                };
                for (i, &xi) in h.iter().enumerate() {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = *o + xi * w[i * out_dim + j];
                    }
                }
                out
            }
            LayerSpec::Activation(Activation::Relu) => h
                .iter()
                .map(|&v| {
                    relu_pattern.push(v.hi > 0.0);
                    if v.hi > 0.0 {
                        v
                    } else {
                        Dd::ZERO
                    }
                })
                .collect(),
            LayerSpec::Activation(Activation::Tanh) => h.iter().map(|v| v.tanh()).collect(),
            LayerSpec::Noise(noise) => {
                let eps = draw.layers()[noise_index].data();
                noise_index += 1;
                let keep = Dd::from(noise.keep_prob);
                h.iter()
                    .zip(eps)
                    .map(|(&v, &e)| match (noise.mode, noise.scaling) {
                        (NoiseMode::BernoulliMultiply, DropoutScaling::AtInference) => v * Dd::from(e),
                        (NoiseMode::BernoulliMultiply, DropoutScaling::Inverted) => v * Dd::from(e) / keep,
                        (NoiseMode::GaussianAdd, _) => v + Dd::from(e),
                    })
                    .collect()
            }
        };
    }
    let max = h.iter().copied().fold(h[0], |a, b| if b > a { b } else { a });
    let mut sum = Dd::ZERO;
    for &v in &h {
        sum = sum + (v - max).exp();
    }
    Evaluation {
        log_lik: h[y] - max - sum.ln(),
        relu_pattern,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(got: Dd, hi: f64, lo: f64, tol: f64) {
        let err = (got - Dd { hi, lo }).abs().to_f64();
        assert!(err <= tol * hi.abs(), "{got:?} vs {hi:e} {lo:e}: {err:e}");
    }

    #[test]
    fn transcendental_references() {
        close(Dd::ONE.exp(), std::f64::consts::E, 1.4456468917292502e-16, 1e-30);
        close(
            Dd::from(-3.7).exp(),
            0.024723526470339388,
            -1.294857794723138e-18,
            1e-30,
        );
        close(Dd::from(2.0).ln(), LN2.hi, LN2.lo, 1e-30);
        close(
            Dd::from(10.0).ln(),
            std::f64::consts::LN_10,
            -2.1707562233822494e-16,
            1e-30,
        );
        close(Dd::from(0.5).tanh(), 0.46211715726000974, 2.1916603238260928e-17, 1e-30);
        close(
            Dd::from(-0.5).tanh(),
            -0.46211715726000974,
            -2.1916603238260928e-17,
            1e-30,
        );
    }

    #[test]
    fn arithmetic_is_double_double() {
        let third = Dd::ONE / Dd::from(3.0);
        assert!((third * Dd::from(3.0) - Dd::ONE).abs().to_f64() < 1e-31);
        let tiny = Dd::from(1.0) + Dd::from(1e-20);
        assert_eq!((tiny - Dd::ONE).to_f64(), 1e-20);
    }

    #[test]
    fn log_mean_exp_of_constants() {
        let v = [Dd::from(-2.5); 3];
        close(log_mean_exp(&v), -2.5, 0.0, 1e-31);
    }
}
