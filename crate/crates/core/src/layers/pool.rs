//! Max pooling with an explicit argmax map for gradient routing.

use crate::error::{Error, Result};
use crate::tensor::{conv_output_shape, Shape2D, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPoolLayer {
    window: usize,
    stride: usize,
}

/// Flat input index of the element each output cell selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArgmaxMap {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    indices: Vec<usize>,
}

impl ArgmaxMap {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

impl MaxPoolLayer {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::Geometry(format!(
                "pool window {window} and stride {stride} must be at least 1"
            )));
        }
        Ok(MaxPoolLayer { window, stride })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_shape(&self, input: Shape2D) -> Result<Shape2D> {
        conv_output_shape(input, self.window, 0, self.stride)
    }

    /// Each output cell is the window maximum. Ties keep the first maximal
    /// element in row-major order.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ArgmaxMap)> {
        let s = input.shape();
        if s.len() != 3 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "max pool expects [channels, height, width]".into(),
            });
        }
        let (channels, plane) = (s[0], Shape2D::new(s[1], s[2]));
        let out = self.output_shape(plane)?;
        let src = input.data();
        let mut values = Vec::with_capacity(channels * out.area());
        let mut indices = Vec::with_capacity(channels * out.area());
        for c in 0..channels {
            let base = c * plane.area();
            for oy in 0..out.height {
                for ox in 0..out.width {
                    let (y0, x0) = (oy * self.stride, ox * self.stride);
                    let mut best = base + y0 * plane.width + x0;
                    for y in y0..y0 + self.window {
                        for x in x0..x0 + self.window {
                            let at = base + y * plane.width + x;
                            if src[at] > src[best] {
                                best = at;
                            }
                        }
                    }
                    values.push(src[best]);
                    indices.push(best);
                }
            }
        }
        let output_shape = vec![channels, out.height, out.width];
        Ok((
            Tensor::new(output_shape.clone(), values)?,
            ArgmaxMap {
                input_shape: s.to_vec(),
                output_shape,
                indices,
            },
        ))
    }
}

/// Route each upstream gradient to the input element its window selected,
/// summing where overlapping windows chose the same element.
pub fn maxpool_backward(map: &ArgmaxMap, grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    if input_shape != map.input_shape.as_slice() {
        return Err(Error::DimensionMismatch {
            op: "max pool backward input",
            left: map.input_shape.clone(),
            right: input_shape.to_vec(),
        });
    }
    if grad_out.shape() != map.output_shape.as_slice() {
        return Err(Error::DimensionMismatch {
            op: "max pool backward upstream",
            left: map.output_shape.clone(),
            right: grad_out.shape().to_vec(),
        });
    }
    let mut grad = Tensor::zeros(input_shape)?;
    let g = grad.data_mut();
    for (&at, &v) in map.indices.iter().zip(grad_out.data()) {
        g[at] += v;
    }
    Ok(grad)
}
