//! Activations, affine layers and MLP stacks built on the tape.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Matrix, ParamId, ParamStore, Scalar, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu(f64),
    Gelu,
    Sigmoid,
    Tanh,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(slope) => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::of(slope)
                }
            }
            Activation::Gelu => {
                let inner = T::of(GELU_C) * (x + T::of(0.044715) * x * x * x);
                T::of(0.5) * x * (T::one() + inner.tanh())
            }
            Activation::Sigmoid => {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at input `x` with forward output `y`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x >= T::zero() {
                    T::one()
                } else {
                    T::of(slope)
                }
            }
            Activation::Gelu => {
                let c = T::of(GELU_C);
                let a = T::of(0.044715);
                let t = (c * (x + a * x * x * x)).tanh();
                let half = T::of(0.5);
                half * (T::one() + t)
                    + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }

    /// Whether `apply(0) == 0`.
    pub fn fixes_zero(self) -> bool {
        !matches!(self, Activation::Sigmoid)
    }
}

impl Default for Activation {
    fn default() -> Self {
        Activation::LeakyRelu(0.2)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Identity => write!(f, "identity"),
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(s) if *s == 0.2 => write!(f, "leaky_relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            Activation::Gelu => write!(f, "gelu"),
            Activation::Sigmoid => write!(f, "sigmoid"),
            Activation::Tanh => write!(f, "tanh"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// Accepts `relu`, `gelu`, `leaky_relu` (slope 0.2) or `leaky_relu:<slope>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu(0.2)),
            "gelu" => Ok(Activation::Gelu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => match other.strip_prefix("leaky_relu:") {
                Some(slope) => slope
                    .parse()
                    .map(Activation::LeakyRelu)
                    .map_err(|_| Error::Config(format!("bad leaky_relu slope {slope}"))),
                None => Err(Error::Config(format!("unknown activation {other}"))),
            },
        }
    }
}

/// `y = x W + b` with `W: in × out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Uniform fan-in initialisation in `[-1/sqrt(in), 1/sqrt(in)]`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut init = |r, c| Matrix::from_fn(r, c, |_, _| T::of(rng.random_range(-bound..=bound)));
        let w = init(input, output);
        let b = init(1, output);
        Ok(Linear {
            weight: store.add(format!("{name}.weight"), w)?,
            bias: store.add(format!("{name}.bias"), b)?,
            input,
            output,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.input {
            return Err(Error::Shape(format!(
                "linear layer expects {} columns, got {}",
                self.input,
                tape.value(x).cols()
            )));
        }
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

/// Affine–activation stack; the last layer is affine only.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`; `widths.len() - 1` layers named
    /// `<name>.layer<i>`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!("mlp {name} needs at least one layer")));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.layer{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Mlp { layers, activation })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    /// Dropout is applied after every hidden activation.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        dropout: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h)?;
            if i < last {
                h = tape.activation(h, self.activation);
                h = tape.dropout(h, dropout, training, rng);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn activation_round_trips_through_strings() {
        for a in [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::LeakyRelu(0.01),
            Activation::Gelu,
        ] {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!("swish".parse::<Activation>().is_err());
    }

    #[test]
    fn identity_single_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 3], Activation::Relu, &mut rng).unwrap();
        *store.value_mut(mlp.layers[0].weight) = Matrix::identity(3);
        *store.value_mut(mlp.layers[0].bias) = Matrix::zeros(1, 3);
        let x = Matrix::from_fn(4, 3, |i, j| i as f64 - j as f64 * 1.5);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &store, xv, 0.0, false, &mut rng).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn zero_input_bias_free_odd_activation_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[2, 5, 5, 3], Activation::Tanh, &mut rng).unwrap();
        for l in &mlp.layers {
            store.value_mut(l.bias).as_mut_slice().fill(0.0);
        }
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::zeros(3, 2));
        let y = mlp.forward(&mut tape, &store, xv, 0.0, false, &mut rng).unwrap();
        assert!(tape.value(y).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_matches_scalar_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::<f64>::new();
        let act = Activation::LeakyRelu(0.2);
        let mlp = Mlp::new(&mut store, "m", &[2, 3, 2], act, &mut rng).unwrap();
        let x = [[0.3, -1.2], [2.0, 0.5]];
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::from_rows(&x.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap());
        let y = mlp.forward(&mut tape, &store, xv, 0.0, false, &mut rng).unwrap();

        let w0 = store.value(mlp.layers[0].weight);
        let b0 = store.value(mlp.layers[0].bias);
        let w1 = store.value(mlp.layers[1].weight);
        let b1 = store.value(mlp.layers[1].bias);
        for (r, row) in x.iter().enumerate() {
            let mut h = [0.0; 3];
            for (j, hj) in h.iter_mut().enumerate() {
                let pre = row[0] * w0[(0, j)] + row[1] * w0[(1, j)] + b0[(0, j)];
                *hj = if pre >= 0.0 { pre } else { 0.2 * pre };
            }
            for k in 0..2 {
                let out = h[0] * w1[(0, k)] + h[1] * w1[(1, k)] + h[2] * w1[(2, k)] + b1[(0, k)];
                assert!((tape.value(y)[(r, k)] - out).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_width_mismatch_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 2], Activation::Relu, &mut rng).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(Matrix::zeros(2, 4));
        assert!(matches!(
            mlp.forward(&mut tape, &store, xv, 0.0, false, &mut rng),
            Err(Error::Shape(_))
        ));
    }
}
