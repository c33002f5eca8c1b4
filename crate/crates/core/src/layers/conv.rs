//! 2-D convolution over `[channels, height, width]` volumes.
//!
//! The forward pass lowers the padded input into a patch matrix (one column
//! per output position) and multiplies it by the filter bank viewed as a
//! `[filters, channels·f·f]` matrix. The backward pass reuses the same patch
//! matrix for the weight gradient and scatters the column gradient back onto
//! the input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv_output_shape, gemm_nn, gemm_nt, gemm_tn, Shape2D, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    stride: usize,
    padding: usize,
    /// `[filters, in_channels, extent, extent]`
    weights: Tensor,
    /// `[filters]`
    bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Lowered input: rows are `(channel, ky, kx)`, columns are output positions.
#[derive(Debug, Clone)]
pub struct Patches {
    pub rows: usize,
    pub output: Shape2D,
    pub data: Vec<f64>,
}

impl ConvLayer {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let ws = weights.shape();
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::InvalidShape {
                shape: ws.to_vec(),
                reason: "conv weights must be [filters, channels, f, f]".into(),
            });
        }
        if bias.shape() != [ws[0]] {
            return Err(Error::DimensionMismatch {
                op: "conv bias",
                left: ws.to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::Geometry("conv stride must be at least 1".into()));
        }
        Ok(ConvLayer {
            stride,
            padding,
            weights,
            bias,
        })
    }

    /// Uniform He initialisation (variance `2 / fan_in`), zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        filters: usize,
        extent: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = (in_channels * extent * extent) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let weights = Tensor::from_fn(&[filters, in_channels, extent, extent], |_| {
            rng.random_range(-limit..limit)
        })?;
        Self::new(weights, Tensor::zeros(&[filters])?, stride, padding)
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn extent(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
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

    pub fn output_shape(&self, input: Shape2D) -> Result<Shape2D> {
        conv_output_shape(input, self.extent(), self.padding, self.stride)
    }

    fn check_input(&self, input: &Tensor) -> Result<Shape2D> {
        let s = input.shape();
        if s.len() != 3 || s[0] != self.in_channels() {
            return Err(Error::DimensionMismatch {
                op: "conv input channels",
                left: self.weights.shape().to_vec(),
                right: s.to_vec(),
            });
        }
        Ok(Shape2D::new(s[1], s[2]))
    }

    /// Lower `input` into its patch matrix.
    pub fn im2col(&self, input: &Tensor) -> Result<Patches> {
        let plane = self.check_input(input)?;
        let out = self.output_shape(plane)?;
        let (f, s, p) = (self.extent(), self.stride, self.padding as isize);
        let channels = self.in_channels();
        let cols = out.area();
        let rows = channels * f * f;
        let mut data = vec![0.0; rows * cols];
        let src = input.data();
        for c in 0..channels {
            let plane_data = &src[c * plane.area()..(c + 1) * plane.area()];
            for ky in 0..f {
                for kx in 0..f {
                    let row = (c * f + ky) * f + kx;
                    let dst = &mut data[row * cols..(row + 1) * cols];
                    for oy in 0..out.height {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= plane.height as isize {
                            continue;
                        }
                        let src_row = &plane_data[iy as usize * plane.width..(iy as usize + 1) * plane.width];
                        let dst_row = &mut dst[oy * out.width..(oy + 1) * out.width];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < plane.width as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Ok(Patches {
            rows,
            output: out,
            data,
        })
    }

    fn col2im(&self, grad_cols: &[f64], plane: Shape2D, out: Shape2D) -> Vec<f64> {
        let (f, s, p) = (self.extent(), self.stride, self.padding as isize);
        let cols = out.area();
        let mut grad = vec![0.0; self.in_channels() * plane.area()];
        for c in 0..self.in_channels() {
            let g_plane = &mut grad[c * plane.area()..(c + 1) * plane.area()];
            for ky in 0..f {
                for kx in 0..f {
                    let row = (c * f + ky) * f + kx;
                    let src = &grad_cols[row * cols..(row + 1) * cols];
                    for oy in 0..out.height {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= plane.height as isize {
                            continue;
                        }
                        let base = iy as usize * plane.width;
                        for ox in 0..out.width {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < plane.width as isize {
                                g_plane[base + ix as usize] += src[oy * out.width + ox];
                            }
                        }
                    }
                }
            }
        }
        grad
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let patches = self.im2col(input)?;
        self.forward_patches(&patches)
    }

    pub(crate) fn forward_patches(&self, patches: &Patches) -> Result<Tensor> {
        let k = self.filters();
        let cols = patches.output.area();
        let mut out = vec![0.0; k * cols];
        for (o, row) in out.chunks_mut(cols).enumerate() {
            row.fill(self.bias.data()[o]);
        }
        gemm_nn(k, cols, patches.rows, self.weights.data(), &patches.data, &mut out);
        Tensor::new(vec![k, patches.output.height, patches.output.width], out)
    }

    /// Gradients of `Σ grad_out ⊙ forward(input)` with respect to the input,
    /// weights and bias.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<ConvGradients> {
        let plane = self.check_input(input)?;
        let patches = self.im2col(input)?;
        let (weights, bias) = self.param_gradients(&patches, grad_out)?;
        let input = self.input_gradient(&patches, plane, grad_out)?;
        Ok(ConvGradients {
            input,
            weights,
            bias,
        })
    }

    fn check_grad_out(&self, patches: &Patches, grad_out: &Tensor) -> Result<()> {
        let expected = [self.filters(), patches.output.height, patches.output.width];
        if grad_out.shape() != expected {
            return Err(Error::DimensionMismatch {
                op: "conv backward",
                left: expected.to_vec(),
                right: grad_out.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub(crate) fn param_gradients(&self, patches: &Patches, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut gw = Tensor::zeros(self.weights.shape())?;
        let mut gb = Tensor::zeros(self.bias.shape())?;
        self.accumulate_param_gradients(patches, grad_out, &mut gw, &mut gb)?;
        Ok((gw, gb))
    }

    /// `gw += grad_out · patchesᵀ`, `gb += Σ grad_out` per filter.
    pub(crate) fn accumulate_param_gradients(
        &self,
        patches: &Patches,
        grad_out: &Tensor,
        gw: &mut Tensor,
        gb: &mut Tensor,
    ) -> Result<()> {
        self.check_grad_out(patches, grad_out)?;
        gw.same_shape(&self.weights, "conv weight gradient")?;
        gb.same_shape(&self.bias, "conv bias gradient")?;
        let k = self.filters();
        let cols = patches.output.area();
        let g = grad_out.data();
        gemm_nt(k, patches.rows, cols, g, &patches.data, gw.data_mut());
        for (b, row) in gb.data_mut().iter_mut().zip(g.chunks(cols)) {
            *b += row.iter().sum::<f64>();
        }
        Ok(())
    }

    pub(crate) fn input_gradient(&self, patches: &Patches, plane: Shape2D, grad_out: &Tensor) -> Result<Tensor> {
        self.check_grad_out(patches, grad_out)?;
        let cols = patches.output.area();
        let mut grad_cols = vec![0.0; patches.rows * cols];
        gemm_tn(
            patches.rows,
            cols,
            self.filters(),
            self.weights.data(),
            grad_out.data(),
            &mut grad_cols,
        );
        let grad = self.col2im(&grad_cols, plane, patches.output);
        Tensor::new(vec![self.in_channels(), plane.height, plane.width], grad)
    }
}
