//! Dense feed-forward networks with explicit reverse-mode tapes.
//!
//! Parameters for an `L`-layer network are laid out as
//! `[W_0, b_0, W_1, b_1, ...]` where `W_l` is row-major `(out, in)`.
//! Every layer computes `pre = W x + b`; hidden layers apply
//! `hidden_activation`, the last layer applies `output_activation`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tensor::{ParamTensor, Shape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input dimension first, output dimension last.
    pub layer_dims: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    pub fn new(
        layer_dims: Vec<usize>,
        hidden_activation: HiddenActivation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        let spec = Self {
            layer_dims,
            hidden_activation,
            output_activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "an MLP needs at least an input and an output dimension".into(),
            ));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidConfig("MLP layer dimensions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    fn is_last(&self, layer: usize) -> bool {
        layer + 1 == self.num_layers()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: Vec<f64>,
    pre: Vec<f64>,
    post: Vec<f64>,
}

/// Activation cache from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    layers: Vec<LayerTape>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.layers.last().expect("tape has at least one layer").post
    }
}

fn check_params(spec: &MlpSpec, params: &[ParamTensor]) -> Result<()> {
    let l = spec.num_layers();
    if params.len() != 2 * l {
        return Err(Error::dim("MLP parameter list", 2 * l, params.len()));
    }
    for layer in 0..l {
        let (inp, out) = (spec.layer_dims[layer], spec.layer_dims[layer + 1]);
        let w = &params[2 * layer];
        let b = &params[2 * layer + 1];
        if w.shape() != Shape::Matrix(out, inp) {
            return Err(Error::dim(
                format!("layer {layer} weight '{}'", w.name()),
                out * inp,
                w.len(),
            ));
        }
        if b.len() != out {
            return Err(Error::dim(
                format!("layer {layer} bias '{}'", b.name()),
                out,
                b.len(),
            ));
        }
    }
    Ok(())
}

pub fn mlp_forward(spec: &MlpSpec, params: &[ParamTensor], x: &[f64]) -> Result<(Vec<f64>, Tape)> {
    check_params(spec, params)?;
    if x.len() != spec.input_dim() {
        return Err(Error::dim("layer 0 input", spec.input_dim(), x.len()));
    }
    let mut layers = Vec::with_capacity(spec.num_layers());
    let mut input = x.to_vec();
    for layer in 0..spec.num_layers() {
        let (inp, out) = (spec.layer_dims[layer], spec.layer_dims[layer + 1]);
        let w = params[2 * layer].values();
        let b = params[2 * layer + 1].values();
        let pre: Vec<f64> = (0..out)
            .map(|r| {
                let row = &w[r * inp..(r + 1) * inp];
                b[r] + row.iter().zip(&input).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let post: Vec<f64> = if spec.is_last(layer) {
            match spec.output_activation {
                OutputActivation::Identity => pre.clone(),
                OutputActivation::Sigmoid => pre.iter().map(|&v| sigmoid(v)).collect(),
            }
        } else {
            match spec.hidden_activation {
                HiddenActivation::Relu => pre.iter().map(|&v| v.max(0.0)).collect(),
                HiddenActivation::Tanh => pre.iter().map(|&v| v.tanh()).collect(),
            }
        };
        let next = post.clone();
        layers.push(LayerTape { input, pre, post });
        input = next;
    }
    Ok((input, Tape { layers }))
}

/// Accumulates parameter gradients (`+=`) and returns `dL/dx`.
pub fn mlp_backward(
    spec: &MlpSpec,
    tape: &Tape,
    upstream: &[f64],
    params: &mut [ParamTensor],
) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    if tape.layers.len() != spec.num_layers() {
        return Err(Error::dim("tape layer count", spec.num_layers(), tape.layers.len()));
    }
    if upstream.len() != spec.output_dim() {
        return Err(Error::dim("upstream gradient", spec.output_dim(), upstream.len()));
    }
    let mut grad_out = upstream.to_vec();
    for layer in (0..spec.num_layers()).rev() {
        let t = &tape.layers[layer];
        let (inp, out) = (spec.layer_dims[layer], spec.layer_dims[layer + 1]);
        if t.input.len() != inp || t.pre.len() != out {
            return Err(Error::dim(format!("tape for layer {layer}"), inp, t.input.len()));
        }
        let grad_pre: Vec<f64> = if spec.is_last(layer) {
            match spec.output_activation {
                OutputActivation::Identity => grad_out,
                OutputActivation::Sigmoid => grad_out
                    .iter()
                    .zip(&t.post)
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect(),
            }
        } else {
            match spec.hidden_activation {
                HiddenActivation::Relu => grad_out
                    .iter()
                    .zip(&t.pre)
                    .map(|(g, &p)| if p > 0.0 { *g } else { 0.0 })
                    .collect(),
                HiddenActivation::Tanh => grad_out
                    .iter()
                    .zip(&t.post)
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect(),
            }
        };

        let (w_part, rest) = params.split_at_mut(2 * layer + 1);
        let w = &mut w_part[2 * layer];
        let b = &mut rest[0];
        let mut grad_in = vec![0.0; inp];
        for r in 0..out {
            let g = grad_pre[r];
            b.grad[r] += g;
            if g == 0.0 {
                continue;
            }
            let row = r * inp;
            for c in 0..inp {
                w.grad[row + c] += g * t.input[c];
                grad_in[c] += g * w.values[row + c];
            }
        }
        grad_out = grad_in;
    }
    Ok(grad_out)
}

/// An MLP owning its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<ParamTensor>,
}

impl Mlp {
    /// He-uniform weights for relu hidden layers, Glorot-uniform otherwise;
    /// zero biases.
    pub fn new<R: Rng + ?Sized>(name: &str, spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(2 * spec.num_layers());
        for layer in 0..spec.num_layers() {
            let (inp, out) = (spec.layer_dims[layer], spec.layer_dims[layer + 1]);
            let limit = if !spec.is_last(layer) && spec.hidden_activation == HiddenActivation::Relu {
                (6.0 / inp as f64).sqrt()
            } else {
                (6.0 / (inp + out) as f64).sqrt()
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let w: Vec<f64> = (0..inp * out).map(|_| dist.sample(rng)).collect();
            params.push(ParamTensor::from_values(
                format!("{name}.w{layer}"),
                Shape::Matrix(out, inp),
                w,
            ));
            params.push(ParamTensor::zeros(format!("{name}.b{layer}"), Shape::Vector(out)));
        }
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<ParamTensor>) -> Result<Self> {
        spec.validate()?;
        check_params(&spec, &params)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[ParamTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        mlp_forward(&self.spec, &self.params, x)
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    pub fn backward(&mut self, tape: &Tape, upstream: &[f64]) -> Result<Vec<f64>> {
        mlp_backward(&self.spec, tape, upstream, &mut self.params)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(ParamTensor::zero_grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(w: Vec<f64>, b: Vec<f64>, inp: usize, out: usize, act: OutputActivation) -> Mlp {
        let spec = MlpSpec::new(vec![inp, out], HiddenActivation::Relu, act).unwrap();
        let params = vec![
            ParamTensor::from_values("w0", Shape::Matrix(out, inp), w),
            ParamTensor::from_values("b0", Shape::Vector(out), b),
        ];
        Mlp::from_params(spec, params).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = single_layer(vec![1.0, 0.0, 0.0, 1.0], vec![0.0; 2], 2, 2, OutputActivation::Identity);
        let y = net.predict(&[0.3, 0.7]).unwrap();
        assert_eq!(y, vec![0.3, 0.7]);
    }

    #[test]
    fn zero_sigmoid_layer_outputs_half() {
        let net = single_layer(vec![0.0; 6], vec![0.0; 3], 2, 3, OutputActivation::Sigmoid);
        for x in [[0.0, 0.0], [5.0, -3.0], [1e3, 1e-3]] {
            assert_eq!(net.predict(&x).unwrap(), vec![0.5; 3]);
        }
    }

    #[test]
    fn two_layer_relu_matches_hand_arithmetic() {
        // W0 = [[1, 2], [-1, 1], [0.5, -0.5]], b0 = [0.1, 0.2, -0.3]
        // x = [1, -1]: pre0 = [1-2+0.1, -1-1+0.2, 0.5+0.5-0.3] = [-0.9, -1.8, 0.7]
        // relu -> [0, 0, 0.7]
        // W1 = [[2, 3, 4]], b1 = [0.5]: y = 4*0.7 + 0.5 = 3.3
        let spec = MlpSpec::new(vec![2, 3, 1], HiddenActivation::Relu, OutputActivation::Identity).unwrap();
        let params = vec![
            ParamTensor::from_values("w0", Shape::Matrix(3, 2), vec![1.0, 2.0, -1.0, 1.0, 0.5, -0.5]),
            ParamTensor::from_values("b0", Shape::Vector(3), vec![0.1, 0.2, -0.3]),
            ParamTensor::from_values("w1", Shape::Matrix(1, 3), vec![2.0, 3.0, 4.0]),
            ParamTensor::from_values("b1", Shape::Vector(1), vec![0.5]),
        ];
        let net = Mlp::from_params(spec, params).unwrap();
        let y = net.predict(&[1.0, -1.0]).unwrap();
        assert!((y[0] - 3.3).abs() < 1e-12);
    }

    #[test]
    fn wrong_input_length_names_layer() {
        let net = single_layer(vec![1.0, 0.0], vec![0.0], 2, 1, OutputActivation::Identity);
        let err = net.predict(&[1.0, 2.0, 3.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(MlpSpec::new(vec![3], HiddenActivation::Relu, OutputActivation::Identity).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], HiddenActivation::Relu, OutputActivation::Identity).is_err());
    }

    #[test]
    fn zero_upstream_leaves_grads_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = MlpSpec::new(vec![3, 5, 2], HiddenActivation::Tanh, OutputActivation::Sigmoid).unwrap();
        let mut net = Mlp::new("n", spec, &mut rng).unwrap();
        net.params_mut()[0].grad_mut()[0] = 0.25;
        let before: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad().to_vec()).collect();
        let (_, tape) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        net.backward(&tape, &[0.0, 0.0]).unwrap();
        let after: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad().to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn scalar_linear_gradient() {
        let mut net = single_layer(vec![0.7], vec![0.0], 1, 1, OutputActivation::Identity);
        let (_, tape) = net.forward(&[2.0]).unwrap();
        let dx = net.backward(&tape, &[1.0]).unwrap();
        assert_eq!(net.params()[0].grad(), &[2.0]);
        assert_eq!(net.params()[1].grad(), &[1.0]);
        assert_eq!(dx, vec![0.7]);
    }

    #[test]
    fn backward_accumulates() {
        let mut net = single_layer(vec![0.7], vec![0.0], 1, 1, OutputActivation::Identity);
        let (_, tape) = net.forward(&[2.0]).unwrap();
        net.backward(&tape, &[1.0]).unwrap();
        net.backward(&tape, &[1.0]).unwrap();
        assert_eq!(net.params()[0].grad(), &[4.0]);
    }
}
