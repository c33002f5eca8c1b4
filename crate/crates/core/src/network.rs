//! Declarative layer stacks and the sequential network built from them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    maxpool_backward, relu, relu_backward, softmax, ArgmaxMap, ConvLayer, FullyConnectedLayer, MaxPoolLayer,
    Patches,
};
use crate::optim::{cross_entropy, sgd_step};
use crate::tensor::{Shape2D, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        filters: usize,
        extent: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> String {
        match self {
            LayerSpec::Conv {
                filters,
                extent,
                stride,
                padding,
            } => format!("conv{extent}x{extent}/s{stride}/p{padding}x{filters}"),
            LayerSpec::MaxPool { window, stride } => format!("maxpool{window}x{window}/s{stride}"),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Dense { out_features } => format!("dense{out_features}"),
            LayerSpec::Softmax => "softmax".into(),
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape produced from `input`, or an error if this layer cannot
    /// accept it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let volume = || -> Result<[usize; 3]> {
            match input {
                &[c, h, w] => Ok([c, h, w]),
                _ => Err(Error::InvalidShape {
                    shape: input.to_vec(),
                    reason: format!("{} expects a [channels, height, width] volume", self.name()),
                }),
            }
        };
        match *self {
            LayerSpec::Conv {
                filters,
                extent,
                stride,
                padding,
            } => {
                let [_, h, w] = volume()?;
                if filters == 0 {
                    return Err(Error::Config("conv layer needs at least one filter".into()));
                }
                let out = crate::tensor::conv_output_shape(Shape2D::new(h, w), extent, padding, stride)?;
                Ok(vec![filters, out.height, out.width])
            }
            LayerSpec::MaxPool { window, stride } => {
                let [c, h, w] = volume()?;
                let out = MaxPoolLayer::new(window, stride)?.output_shape(Shape2D::new(h, w))?;
                Ok(vec![c, out.height, out.width])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense { out_features } => {
                if input.len() != 1 {
                    return Err(Error::InvalidShape {
                        shape: input.to_vec(),
                        reason: "dense layer expects a flat vector; insert flatten".into(),
                    });
                }
                if out_features == 0 {
                    return Err(Error::Config("dense layer needs at least one output".into()));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::InvalidShape {
                        shape: input.to_vec(),
                        reason: "softmax expects a flat vector".into(),
                    });
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// Input geometry plus an ordered layer list ending in softmax.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Shapes flowing between layers: element 0 is the input, element `i + 1`
    /// the output of layer `i`.
    pub fn shape_chain(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.contains(&0) {
            return Err(Error::InvalidShape {
                shape: self.input.to_vec(),
                reason: "input extents must be at least 1".into(),
            });
        }
        match self.layers.iter().position(|l| *l == LayerSpec::Softmax) {
            Some(i) if i + 1 == self.layers.len() => {}
            _ => return Err(Error::Config("network must end with exactly one softmax layer".into())),
        }
        let mut shapes = vec![self.input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::Config(format!("layer {i} ({}): {e}", layer.name())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.shape_chain()?.last().expect("non-empty")[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    MaxPool(MaxPoolLayer),
    Relu,
    Flatten,
    Dense(FullyConnectedLayer),
    Softmax,
}

/// Per-parameter-tensor gradients in declaration order (weights then bias for
/// each parametrised layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            tensors: net
                .params()
                .into_iter()
                .map(|t| Tensor::zeros(t.shape()).expect("parameter shapes are valid"))
                .collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn accumulate(&mut self, other: &Gradients) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::DimensionMismatch {
                op: "gradient accumulate",
                left: vec![self.tensors.len()],
                right: vec![other.tensors.len()],
            });
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(alpha));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

enum Cache {
    None,
    Conv(Patches, Shape2D),
    Pool(ArgmaxMap),
    Input(Tensor),
    Shape(Vec<usize>),
}

/// Activations retained by a forward pass for the matching backward pass.
pub struct Trace {
    caches: Vec<Cache>,
    probs: Tensor,
}

impl Trace {
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

impl Network {
    /// Fresh network with seeded He-uniform weights and zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, input) in spec.layers.iter().zip(&shapes) {
            layers.push(match *layer {
                LayerSpec::Conv {
                    filters,
                    extent,
                    stride,
                    padding,
                } => Layer::Conv(ConvLayer::init(input[0], filters, extent, stride, padding, &mut rng)?),
                LayerSpec::MaxPool { window, stride } => Layer::MaxPool(MaxPoolLayer::new(window, stride)?),
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Dense { out_features } => {
                    Layer::Dense(FullyConnectedLayer::init(input[0], out_features, &mut rng)?)
                }
                LayerSpec::Softmax => Layer::Softmax,
            });
        }
        Ok(Network { spec, layers })
    }

    /// Rebuild a network from a spec and its parameter tensors in declaration
    /// order.
    pub fn from_params(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        let template = Network::init(spec.clone(), 0)?;
        let expected: Vec<Vec<usize>> = template.params().iter().map(|t| t.shape().to_vec()).collect();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (e, p) in expected.iter().zip(&params) {
            if e.as_slice() != p.shape() {
                return Err(Error::DimensionMismatch {
                    op: "parameter tensor",
                    left: e.clone(),
                    right: p.shape().to_vec(),
                });
            }
        }
        let mut net = template;
        for (slot, value) in net.params_mut().into_iter().zip(params) {
            *slot = value;
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.params().last().map(|b| b.len()).unwrap_or(0)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([c.weights(), c.bias()]),
                Layer::Dense(d) => out.extend([d.weights(), d.bias()]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend(c.params_mut()),
                Layer::Dense(d) => out.extend(d.params_mut()),
                _ => {}
            }
        }
        out
    }

    /// Class probabilities for one `[channels, height, width]` input.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&x)?,
                Layer::MaxPool(p) => p.forward(&x)?.0,
                Layer::Relu => relu(&x),
                Layer::Flatten => {
                    let n = x.len();
                    x.reshape(vec![n])?
                }
                Layer::Dense(d) => d.forward(&x)?,
                Layer::Softmax => softmax(&x),
            };
        }
        Ok(x)
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.spec.input {
            return Err(Error::DimensionMismatch {
                op: "network input",
                left: self.spec.input.to_vec(),
                right: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward_trace(&self, input: &Tensor) -> Result<Trace> {
        self.check_input(input)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let (next, cache) = match layer {
                Layer::Conv(c) => {
                    let plane = Shape2D::new(x.shape()[1], x.shape()[2]);
                    let patches = c.im2col(&x)?;
                    (c.forward_patches(&patches)?, Cache::Conv(patches, plane))
                }
                Layer::MaxPool(p) => {
                    let (y, map) = p.forward(&x)?;
                    (y, Cache::Pool(map))
                }
                Layer::Relu => (relu(&x), Cache::Input(x)),
                Layer::Flatten => {
                    let shape = x.shape().to_vec();
                    let n = x.len();
                    (x.reshape(vec![n])?, Cache::Shape(shape))
                }
                Layer::Dense(d) => (d.forward(&x)?, Cache::Input(x)),
                Layer::Softmax => (softmax(&x), Cache::None),
            };
            caches.push(cache);
            x = next;
        }
        Ok(Trace { caches, probs: x })
    }

    /// Parameter gradients given the gradient of the loss with respect to the
    /// softmax input.
    pub fn backward(&self, trace: Trace, grad_logits: Tensor) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(trace, grad_logits, &mut grads)?;
        Ok(grads)
    }

    /// As [`Network::backward`], adding into `acc` instead of allocating.
    pub fn backward_into(&self, trace: Trace, grad_logits: Tensor, acc: &mut Gradients) -> Result<()> {
        let mut slot = self.params().len();
        if acc.tensors.len() != slot {
            return Err(Error::DimensionMismatch {
                op: "gradient accumulate",
                left: vec![slot],
                right: vec![acc.tensors.len()],
            });
        }
        let mut g = grad_logits;
        let last = self.layers.len() - 1;
        for (i, (layer, cache)) in self.layers[..last].iter().zip(trace.caches).enumerate().rev() {
            let need_input = i > 0;
            g = match (layer, cache) {
                (Layer::Conv(c), Cache::Conv(patches, plane)) => {
                    slot -= 2;
                    let [gw, gb] = &mut acc.tensors[slot..slot + 2] else {
                        unreachable!("slot range has two tensors")
                    };
                    c.accumulate_param_gradients(&patches, &g, gw, gb)?;
                    if need_input {
                        c.input_gradient(&patches, plane, &g)?
                    } else {
                        g
                    }
                }
                (Layer::MaxPool(_), Cache::Pool(map)) => maxpool_backward(&map, &g, map.input_shape())?,
                (Layer::Relu, Cache::Input(x)) => relu_backward(&x, &g)?,
                (Layer::Flatten, Cache::Shape(shape)) => g.reshape(shape)?,
                (Layer::Dense(d), Cache::Input(x)) => {
                    slot -= 2;
                    let [gw, gb] = &mut acc.tensors[slot..slot + 2] else {
                        unreachable!("slot range has two tensors")
                    };
                    d.accumulate_param_gradients(&x, &g, gw, gb)?;
                    if need_input {
                        d.input_gradient(&g)?
                    } else {
                        g
                    }
                }
                _ => unreachable!("trace produced by a different network"),
            };
        }
        Ok(())
    }

    /// Cross-entropy loss of one labelled input, its class probabilities and
    /// the parameter gradients.
    pub fn loss_and_gradients(&self, input: &Tensor, label: usize) -> Result<(f64, Tensor, Gradients)> {
        let mut grads = Gradients::zeros_like(self);
        let (loss, probs) = self.accumulate_gradients(input, label, &mut grads)?;
        Ok((loss, probs, grads))
    }

    /// Add one sample's parameter gradients to `acc`; returns its loss and
    /// class probabilities.
    pub fn accumulate_gradients(&self, input: &Tensor, label: usize, acc: &mut Gradients) -> Result<(f64, Tensor)> {
        let trace = self.forward_trace(input)?;
        let probs = trace.probs.clone();
        let (loss, grad_logits) = cross_entropy(&probs, label)?;
        self.backward_into(trace, grad_logits, acc)?;
        Ok((loss, probs))
    }

    pub fn loss(&self, input: &Tensor, label: usize) -> Result<f64> {
        Ok(cross_entropy(&self.forward(input)?, label)?.0)
    }

    /// `θ ← θ − lr · g` for every parameter tensor.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        let params = self.params_mut();
        if params.len() != grads.tensors.len() {
            return Err(Error::DimensionMismatch {
                op: "apply gradients",
                left: vec![params.len()],
                right: vec![grads.tensors.len()],
            });
        }
        for (p, g) in params.into_iter().zip(&grads.tensors) {
            sgd_step(p, g, learning_rate)?;
        }
        Ok(())
    }

    /// Every ReLU on/off bit and every pooling argmax for `input`. Two inputs
    /// (or parameter settings) with equal patterns lie in the same
    /// piecewise-linear region of the network.
    pub fn activation_pattern(&self, input: &Tensor) -> Result<Vec<usize>> {
        self.check_input(input)?;
        let mut pattern = Vec::new();
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Conv(c) => c.forward(&x)?,
                Layer::MaxPool(p) => {
                    let (y, map) = p.forward(&x)?;
                    pattern.extend_from_slice(map.indices());
                    y
                }
                Layer::Relu => {
                    pattern.extend(x.data().iter().map(|&v| usize::from(v > 0.0)));
                    relu(&x)
                }
                Layer::Flatten => {
                    let n = x.len();
                    x.reshape(vec![n])?
                }
                Layer::Dense(d) => d.forward(&x)?,
                Layer::Softmax => softmax(&x),
            };
        }
        Ok(pattern)
    }

    /// Index of the most probable class (lowest index on ties).
    pub fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(self.forward(input)?.argmax())
    }
}
