use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, Tensor};

/// `y = W·x + b` with `W: [out_features, in_features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullyConnectedLayer {
    weights: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradients {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl FullyConnectedLayer {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.rank() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::DimensionMismatch {
                op: "dense parameters",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(FullyConnectedLayer { weights, bias })
    }

    /// Uniform He initialisation (variance `2 / fan_in`), zero bias.
    pub fn init<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Result<Self> {
        let limit = (6.0 / in_features as f64).sqrt();
        let weights = Tensor::from_fn(&[out_features, in_features], |_| rng.random_range(-limit..limit))?;
        Self::new(weights, Tensor::zeros(&[out_features])?)
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// Weights and bias, mutably.
    pub fn params_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weights, &mut self.bias]
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.rank() != 1 || input.len() != self.in_features() {
            return Err(Error::DimensionMismatch {
                op: "dense input",
                left: self.weights.shape().to_vec(),
                right: input.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut out = self.bias.data().to_vec();
        gemm_nt(self.out_features(), 1, self.in_features(), self.weights.data(), input.data(), &mut out);
        Tensor::vector(out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<DenseGradients> {
        let mut weights = Tensor::zeros(self.weights.shape())?;
        let mut bias = Tensor::zeros(self.bias.shape())?;
        self.accumulate_param_gradients(input, grad_out, &mut weights, &mut bias)?;
        Ok(DenseGradients {
            input: self.input_gradient(grad_out)?,
            weights,
            bias,
        })
    }

    /// `gw += grad_out ⊗ input`, `gb += grad_out`.
    pub(crate) fn accumulate_param_gradients(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        gw: &mut Tensor,
        gb: &mut Tensor,
    ) -> Result<()> {
        self.check_input(input)?;
        self.check_grad_out(grad_out)?;
        gw.same_shape(&self.weights, "dense weight gradient")?;
        gb.add_scaled(grad_out, 1.0)?;
        let n_in = self.in_features();
        for (row, &go) in gw.data_mut().chunks_mut(n_in).zip(grad_out.data()) {
            if go != 0.0 {
                for (w, &x) in row.iter_mut().zip(input.data()) {
                    *w += go * x;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn input_gradient(&self, grad_out: &Tensor) -> Result<Tensor> {
        self.check_grad_out(grad_out)?;
        let mut gx = vec![0.0; self.in_features()];
        gemm_nn(1, self.in_features(), self.out_features(), grad_out.data(), self.weights.data(), &mut gx);
        Tensor::vector(gx)
    }

    fn check_grad_out(&self, grad_out: &Tensor) -> Result<()> {
        if grad_out.shape() != [self.out_features()] {
            return Err(Error::DimensionMismatch {
                op: "dense backward",
                left: vec![self.out_features()],
                right: grad_out.shape().to_vec(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{central_difference, max_relative_error, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias_only() {
        let x = Tensor::vector(vec![0.5, -1.0, 2.0]).unwrap();
        let id = FullyConnectedLayer::new(Tensor::identity(3).unwrap(), Tensor::zeros(&[3]).unwrap()).unwrap();
        assert_eq!(id.forward(&x).unwrap(), x);

        let b = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let bias_only = FullyConnectedLayer::new(Tensor::zeros(&[2, 3]).unwrap(), b.clone()).unwrap();
        assert_eq!(bias_only.forward(&x).unwrap(), b);
    }

    #[test]
    fn length_mismatch() {
        let layer = FullyConnectedLayer::new(Tensor::zeros(&[2, 3]).unwrap(), Tensor::zeros(&[2]).unwrap()).unwrap();
        assert!(layer.forward(&Tensor::zeros(&[4]).unwrap()).is_err());
        assert!(layer.forward(&Tensor::zeros(&[1, 3]).unwrap()).is_err());
        assert!(layer
            .backward(&Tensor::zeros(&[3]).unwrap(), &Tensor::zeros(&[3]).unwrap())
            .is_err());
        assert!(FullyConnectedLayer::new(Tensor::zeros(&[2, 3]).unwrap(), Tensor::zeros(&[3]).unwrap()).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let layer = FullyConnectedLayer::new(random_tensor(&[7, 10], &mut rng), random_tensor(&[7], &mut rng)).unwrap();
        let x = random_tensor(&[10], &mut rng);
        let g = random_tensor(&[7], &mut rng);
        let grads = layer.backward(&x, &g).unwrap();
        let objective = |l: &FullyConnectedLayer, x: &Tensor| -> f64 {
            l.forward(x).unwrap().data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };

        let nx = central_difference(&x, 1e-5, |t| objective(&layer, t));
        assert!(max_relative_error(grads.input.data(), nx.data()) < 1e-4);
        let nw = central_difference(layer.weights(), 1e-5, |w| {
            objective(&FullyConnectedLayer::new(w.clone(), layer.bias().clone()).unwrap(), &x)
        });
        assert!(max_relative_error(grads.weights.data(), nw.data()) < 1e-4);
        let nb = central_difference(layer.bias(), 1e-5, |b| {
            objective(&FullyConnectedLayer::new(layer.weights().clone(), b.clone()).unwrap(), &x)
        });
        assert!(max_relative_error(grads.bias.data(), nb.data()) < 1e-4);
    }
}
