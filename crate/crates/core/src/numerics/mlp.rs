//! Fully connected networks.

use serde::{Deserialize, Serialize};

use super::rng::SeededRng;
use super::tape::{ParamKey, Tape, Var};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => x.map(|v| v.max(0.0)),
            Activation::Tanh => x.map(f64::tanh),
            Activation::Identity => x.clone(),
        }
    }

    fn apply_taped(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Identity => x,
        }
    }
}

/// One affine layer `y = act(x · Wᵀ + b)` with `W` stored `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = weight.expect_matrix("dense weight")?;
        if bias.shape() != [out] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {out} outputs",
                bias.shape()
            )));
        }
        Ok(Dense { weight, bias, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Named stack of [`Dense`] layers. The name prefixes every parameter key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    name: String,
    layers: Vec<Dense>,
}

/// Anything owning named trainable tensors.
pub trait Parameters {
    fn params(&self) -> Vec<(ParamKey, &Tensor)>;
    fn params_mut(&mut self) -> Vec<(ParamKey, &mut Tensor)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width
    /// including input and output; hidden layers use `hidden`, the output layer
    /// is linear.
    pub fn new(name: impl Into<String>, sizes: &[usize], hidden: Activation, rng: &mut SeededRng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::shape(format!("invalid layer sizes {sizes:?}")));
        }
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.uniform_in(-limit, limit)).collect();
            let activation = if i + 2 == sizes.len() { Activation::Identity } else { hidden };
            layers.push(Dense {
                weight: Tensor::matrix(fan_out, fan_in, w)?,
                bias: Tensor::zeros(&[fan_out]),
                activation,
            });
        }
        Ok(Mlp { name: name.into(), layers })
    }

    pub fn from_layers(name: impl Into<String>, layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("an MLP needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    i,
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { name: name.into(), layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.in_dim() {
            return Err(Error::shape(format!(
                "{} layer 0: input width {width}, expected {}",
                self.name,
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Untaped forward pass. Accepts `[n]` (returns `[out]`) or `[b, n]`.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let vector = input.rank() == 1;
        let mut x = input.as_row()?;
        self.check_input(x.cols())?;
        for layer in &self.layers {
            let z = tensor::add_row(&tensor::matmul_nt(&x, &layer.weight)?, &layer.bias)?;
            x = layer.activation.apply(&z);
        }
        if vector {
            let n = x.cols();
            x = x.reshape(vec![n])?;
        }
        Ok(x)
    }

    /// Taped forward pass. With `trainable` the weights are registered as
    /// parameters; otherwise they enter the tape as constants and only the
    /// input receives gradient.
    pub fn forward_taped(&self, tape: &mut Tape, input: Var, trainable: bool) -> Result<Var> {
        tape.value(input).expect_matrix(&self.name)?;
        self.check_input(tape.value(input).cols())?;
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (
                    tape.param(self.weight_key(i), layer.weight.clone()),
                    tape.param(self.bias_key(i), layer.bias.clone()),
                )
            } else {
                (tape.constant(layer.weight.clone()), tape.constant(layer.bias.clone()))
            };
            let z = tape.matmul_t(x, w)?;
            let z = tape.add_row(z, b)?;
            x = layer.activation.apply_taped(tape, z);
        }
        Ok(x)
    }

    fn weight_key(&self, i: usize) -> ParamKey {
        ParamKey(format!("{}.w{i}", self.name))
    }

    fn bias_key(&self, i: usize) -> ParamKey {
        ParamKey(format!("{}.b{i}", self.name))
    }

    /// Overwrite every parameter with `tau * src + (1 - tau) * self`.
    pub fn blend_from(&mut self, src: &Mlp, tau: f64) -> Result<()> {
        if self.layers.len() != src.layers.len() {
            return Err(Error::shape("blend between MLPs of different depth"));
        }
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            dst.weight.expect_same_shape(&s.weight, "blend")?;
            for (d, v) in dst.weight.data_mut().iter_mut().zip(s.weight.data()) {
                *d = tau * v + (1.0 - tau) * *d;
            }
            for (d, v) in dst.bias.data_mut().iter_mut().zip(s.bias.data()) {
                *d = tau * v + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }

    /// Copy of `self` whose parameter keys use `name`.
    pub fn renamed(&self, name: impl Into<String>) -> Mlp {
        Mlp { name: name.into(), layers: self.layers.clone() }
    }
}

impl Parameters for Mlp {
    fn params(&self) -> Vec<(ParamKey, &Tensor)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((self.weight_key(i), &l.weight));
            out.push((self.bias_key(i), &l.bias));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(ParamKey, &mut Tensor)> {
        let keys: Vec<_> = (0..self.layers.len()).map(|i| (self.weight_key(i), self.bias_key(i))).collect();
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for ((wk, bk), l) in keys.into_iter().zip(self.layers.iter_mut()) {
            out.push((wk, &mut l.weight));
            out.push((bk, &mut l.bias));
        }
        out
    }
}

/// Functional alias for [`Mlp::forward`] / [`Mlp::forward_taped`].
pub fn mlp_forward(params: &Mlp, input: &Tensor, tape: Option<&mut Tape>) -> Result<Tensor> {
    match tape {
        None => params.forward(input),
        Some(tape) => {
            let x = tape.constant(input.as_row()?);
            let y = params.forward_taped(tape, x, true)?;
            let mut out = tape.value(y).clone();
            if input.rank() == 1 {
                let n = out.cols();
                out = out.reshape(vec![n])?;
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::seeded_rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense::new(
            Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
            Activation::Identity,
        )
        .unwrap();
        let net = Mlp::from_layers("id", vec![layer]).unwrap();
        let y = net.forward(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_layer_splits_sign() {
        let layer = Dense::new(
            Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap(),
            Tensor::zeros(&[2]),
            Activation::Relu,
        )
        .unwrap();
        let net = Mlp::from_layers("split", vec![layer]).unwrap();
        let y = net.forward(&Tensor::vector(vec![3.0])).unwrap();
        assert_eq!(y.data(), &[3.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let mut rng = seeded_rng(0);
        let net = Mlp::new("q", &[3, 4, 1], Activation::Relu, &mut rng).unwrap();
        let err = net.forward(&Tensor::vector(vec![1.0, 2.0])).unwrap_err();
        assert!(matches!(&err, Error::Shape(m) if m.contains("q layer 0")), "{err}");

        let bad = vec![
            Dense::new(Tensor::zeros(&[4, 3]), Tensor::zeros(&[4]), Activation::Relu).unwrap(),
            Dense::new(Tensor::zeros(&[1, 5]), Tensor::zeros(&[1]), Activation::Identity).unwrap(),
        ];
        let err = Mlp::from_layers("bad", bad).unwrap_err();
        assert!(matches!(&err, Error::Shape(m) if m.contains("layer 1")), "{err}");
    }

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut rng = seeded_rng(5);
        let net = Mlp::new("n", &[10, 30, 2], Activation::Tanh, &mut rng).unwrap();
        let limit = (6.0f64 / 40.0).sqrt();
        assert!(net.layers()[0].weight.max_abs() <= limit);
        assert!(net.layers()[0].bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(net.layers()[1].activation, Activation::Identity);
        assert_eq!(net.param_count(), 10 * 30 + 30 + 30 * 2 + 2);
    }

    #[test]
    fn taped_and_plain_forward_agree_bitwise() {
        let mut rng = seeded_rng(9);
        let net = Mlp::new("n", &[3, 8, 8, 2], Activation::Relu, &mut rng).unwrap();
        let x = rng.normal_tensor(4, 3);
        let plain = net.forward(&x).unwrap();
        let mut tape = Tape::new();
        let taped = mlp_forward(&net, &x, Some(&mut tape)).unwrap();
        assert_eq!(plain, taped);
    }

    #[test]
    fn blend_with_tau_one_copies() {
        let mut rng = seeded_rng(1);
        let a = Mlp::new("a", &[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        let mut b = Mlp::new("b", &[2, 3, 1], Activation::Relu, &mut rng).unwrap();
        b.blend_from(&a, 1.0).unwrap();
        assert_eq!(a.layers(), b.layers());
    }
}
