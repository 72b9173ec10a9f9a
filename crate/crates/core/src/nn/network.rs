use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::ParamRef;
use super::{BatchNorm, Conv2d, Dense, Dropout, MaxPool2d, Mode, NnError, Relu, Scalar, Tensor};

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        ksize: (usize, usize),
        filters: usize,
    },
    BatchNorm,
    Relu,
    MaxPool {
        ksize: (usize, usize),
        stride: (usize, usize),
    },
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu),
    MaxPool(MaxPool2d),
    Dense(Dense<T>),
    Dropout(Dropout<T>),
}

impl<T: Scalar> Layer<T> {
    /// Backward through this layer using its cached train-mode forward.
    pub fn backward(&mut self, g: Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv2d(l) => l.backward(g),
            Layer::BatchNorm(l) => l.backward(g),
            Layer::Relu(l) => l.backward(g),
            Layer::MaxPool(l) => l.backward(g),
            Layer::Dense(l) => l.backward(g),
            Layer::Dropout(l) => l.backward(g),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                ksize: c.kernel,
                filters: c.out_channels,
            },
            Layer::BatchNorm(_) => LayerSpec::BatchNorm,
            Layer::Relu(_) => LayerSpec::Relu,
            Layer::MaxPool(p) => LayerSpec::MaxPool {
                ksize: p.ksize,
                stride: p.stride,
            },
            Layer::Dense(d) => LayerSpec::Dense { units: d.outputs },
            Layer::Dropout(d) => LayerSpec::Dropout { rate: d.rate },
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.param_count(),
            Layer::BatchNorm(b) => b.param_count(),
            Layer::Dense(d) => d.param_count(),
            _ => 0,
        }
    }

    fn clear_cache(&mut self) {
        match self {
            Layer::Conv2d(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::Relu(l) => l.clear_cache(),
            Layer::MaxPool(l) => l.clear_cache(),
            Layer::Dense(l) => l.clear_cache(),
            Layer::Dropout(l) => l.clear_cache(),
        }
    }
}

/// Output shape of `spec` (per batch item) for an input of shape `input`.
fn infer_shape(spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>, NnError> {
    let spatial = |input: &[usize]| -> Result<(usize, usize, usize), NnError> {
        match *input {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(NnError::RankMismatch {
                expected: 3,
                found: input.to_vec(),
            }),
        }
    };
    Ok(match spec {
        LayerSpec::Conv2d { filters, .. } => {
            let (h, w, _) = spatial(input)?;
            vec![h, w, *filters]
        }
        LayerSpec::MaxPool { ksize, stride } => {
            let (h, w, c) = spatial(input)?;
            let (oh, ow) = MaxPool2d::new(*ksize, *stride).output_shape(h, w);
            vec![oh, ow, c]
        }
        LayerSpec::Dense { units } => vec![*units],
        LayerSpec::BatchNorm | LayerSpec::Relu | LayerSpec::Dropout { .. } => input.to_vec(),
    })
}

/// An ordered layer stack with its own dropout RNG.
#[derive(Debug, Clone)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    dropout_rng: ChaCha8Rng,
}

impl<T: Scalar> Network<T> {
    /// Builds the stack, drawing every conv/dense weight from N(0, std²).
    /// Biases start at zero, BN at gamma = 1, beta = 0.
    pub fn build<R: Rng>(
        input_shape: &[usize],
        specs: &[LayerSpec],
        init_std: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match spec {
                LayerSpec::Conv2d { ksize, filters } => {
                    let mut c = Conv2d::new(*ksize, shape[shape.len() - 1], *filters);
                    c.init_gaussian(init_std, rng);
                    Layer::Conv2d(c)
                }
                LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm::new(shape[shape.len() - 1])),
                LayerSpec::Relu => Layer::Relu(Relu::new()),
                LayerSpec::MaxPool { ksize, stride } => Layer::MaxPool(MaxPool2d::new(*ksize, *stride)),
                LayerSpec::Dense { units } => {
                    let mut d = Dense::new(shape.iter().product(), *units);
                    d.init_gaussian(init_std, rng);
                    Layer::Dense(d)
                }
                LayerSpec::Dropout { rate } => Layer::Dropout(Dropout::new(*rate)),
            };
            shape = infer_shape(spec, &shape)?;
            layers.push(layer);
        }
        let dropout_rng = ChaCha8Rng::seed_from_u64(rng.gen());
        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            dropout_rng,
        })
    }

    /// Reassembles a network from already-initialized layers.
    pub fn from_layers(input_shape: &[usize], layers: Vec<Layer<T>>, dropout_seed: u64) -> Result<Self, NnError> {
        let net = Network {
            input_shape: input_shape.to_vec(),
            layers,
            dropout_rng: ChaCha8Rng::seed_from_u64(dropout_seed),
        };
        net.shapes()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Per-item output shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>, NnError> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = infer_shape(&layer.spec(), &shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn output_len(&self) -> usize {
        self.shapes()
            .ok()
            .and_then(|s| s.last().map(|l| l.iter().product()))
            .unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let last = self.layers.len().saturating_sub(1);
        self.forward_to(x, mode, last)
    }

    /// Runs layers `0..=upto` and returns that layer's output.
    pub fn forward_to(&mut self, x: &Tensor<T>, mode: Mode, upto: usize) -> Result<Tensor<T>, NnError> {
        let item: Vec<usize> = x.shape().iter().skip(1).copied().collect();
        if item != self.input_shape {
            return Err(NnError::ShapeMismatch {
                expected: self.input_shape.clone(),
                found: x.shape().to_vec(),
            });
        }
        let keep = mode == Mode::Train;
        let mut h = x.clone();
        for layer in self.layers.iter_mut().take(upto + 1) {
            h = match layer {
                Layer::Conv2d(l) => l.forward(h, keep)?,
                Layer::BatchNorm(l) => l.forward(h, mode)?,
                Layer::Relu(l) => l.forward(h, keep),
                Layer::MaxPool(l) => l.forward(h, keep)?,
                Layer::Dense(l) => l.forward(h, keep)?,
                Layer::Dropout(l) => l.forward(h, mode, &mut self.dropout_rng),
            };
        }
        Ok(h)
    }

    /// Backpropagates through every layer, accumulating parameter gradients.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.backward_from(grad_out.clone(), 0)
    }

    /// Accumulates parameter gradients only. A leading convolution skips
    /// its (unused) input gradient.
    pub fn backward_params(&mut self, grad_out: Tensor<T>) -> Result<(), NnError> {
        let g = self.backward_from(grad_out, 1)?;
        match self.layers.first_mut() {
            Some(Layer::Conv2d(l)) => l.backward_params(g),
            Some(layer) => layer.backward(g).map(|_| ()),
            None => Ok(()),
        }
    }

    /// Backpropagates through `layers[first..]` in reverse.
    fn backward_from(&mut self, mut g: Tensor<T>, first: usize) -> Result<Tensor<T>, NnError> {
        for layer in self.layers[first..].iter_mut().rev() {
            g = layer.backward(g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    c.grad_weight.data_mut().fill(T::zero());
                    c.grad_bias.data_mut().fill(T::zero());
                }
                Layer::BatchNorm(b) => {
                    b.grad_gamma.data_mut().fill(T::zero());
                    b.grad_beta.data_mut().fill(T::zero());
                }
                Layer::Dense(d) => {
                    d.grad_weight.data_mut().fill(T::zero());
                    d.grad_bias.data_mut().fill(T::zero());
                }
                _ => {}
            }
        }
    }

    /// Drops all activations cached by the last train-mode forward.
    pub fn clear_caches(&mut self) {
        self.layers.iter_mut().for_each(Layer::clear_cache);
    }

    /// Parameters in a fixed order: per layer, weight then bias (or gamma
    /// then beta).
    pub fn params_mut(&mut self) -> Vec<ParamRef<'_, T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    out.push(ParamRef {
                        value: c.weight.data_mut(),
                        grad: c.grad_weight.data(),
                        decay: true,
                    });
                    out.push(ParamRef {
                        value: c.bias.data_mut(),
                        grad: c.grad_bias.data(),
                        decay: false,
                    });
                }
                Layer::BatchNorm(b) => {
                    out.push(ParamRef {
                        value: b.gamma.data_mut(),
                        grad: b.grad_gamma.data(),
                        decay: false,
                    });
                    out.push(ParamRef {
                        value: b.beta.data_mut(),
                        grad: b.grad_beta.data(),
                        decay: false,
                    });
                }
                Layer::Dense(d) => {
                    out.push(ParamRef {
                        value: d.weight.data_mut(),
                        grad: d.grad_weight.data(),
                        decay: true,
                    });
                    out.push(ParamRef {
                        value: d.bias.data_mut(),
                        grad: d.grad_bias.data(),
                        decay: false,
                    });
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{softmax_cross_entropy, OptimizerState};

    fn toy_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv2d {
                ksize: (3, 3),
                filters: 4,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool {
                ksize: (2, 2),
                stride: (2, 2),
            },
            LayerSpec::Dense { units: 8 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense { units: 2 },
        ]
    }

    #[test]
    fn shapes_propagate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::<f32>::build(&[6, 5, 2], &toy_specs(), 0.05, &mut rng).unwrap();
        let shapes = net.shapes().unwrap();
        assert_eq!(shapes[0], vec![6, 5, 4]);
        assert_eq!(shapes[3], vec![3, 3, 4]);
        assert_eq!(shapes[7], vec![2]);
        assert_eq!(net.param_count(), (9 * 2 * 4 + 4) + 8 + (36 * 8 + 8) + (8 * 2 + 2));
    }

    #[test]
    fn learns_toy_problem() {
        // class 0: bright top half, class 1: bright bottom half
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Network::<f64>::build(&[4, 4, 1], &toy_specs(), 0.3, &mut rng).unwrap();
        let mut x = Tensor::zeros(&[2, 4, 4, 1]);
        for i in 0..8 {
            x.data_mut()[i] = 1.0;
            x.data_mut()[16 + 8 + i] = 1.0;
        }
        let y = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut opt = OptimizerState::new(0.05);
        let mut losses = Vec::new();
        for _ in 0..50 {
            net.zero_grad();
            let logits = net.forward(&x, Mode::Train).unwrap();
            let (loss, g) = softmax_cross_entropy(&logits, &y).unwrap();
            assert!(loss.is_finite());
            losses.push(loss);
            net.backward(&g).unwrap();
            opt.step(net.params_mut());
        }
        assert!(losses[49] < losses[0], "{losses:?}");
    }

    #[test]
    fn deterministic_without_dropout() {
        let specs: Vec<LayerSpec> = toy_specs()
            .into_iter()
            .filter(|s| !matches!(s, LayerSpec::Dropout { .. }))
            .collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut net = Network::<f32>::build(&[4, 4, 1], &specs, 0.05, &mut rng).unwrap();
            let x = Tensor::from_vec(&[2, 4, 4, 1], (0..32).map(|v| (v as f32 * 0.37).sin()).collect()).unwrap();
            let y = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
            let mut opt = OptimizerState::new(0.1);
            for _ in 0..10 {
                net.zero_grad();
                let logits = net.forward(&x, Mode::Train).unwrap();
                let (_, g) = softmax_cross_entropy(&logits, &y).unwrap();
                net.backward(&g).unwrap();
                opt.step(net.params_mut());
            }
            net.params_mut()
                .iter()
                .flat_map(|p| p.value.to_vec())
                .collect::<Vec<f32>>()
        };
        let a = run();
        let b = run();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_wrong_input_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::<f32>::build(&[6, 5, 2], &toy_specs(), 0.05, &mut rng).unwrap();
        assert!(net.forward(&Tensor::zeros(&[1, 5, 5, 2]), Mode::Eval).is_err());
    }
}
