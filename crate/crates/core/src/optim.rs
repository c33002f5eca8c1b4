//! Softmax cross-entropy and plain minibatch SGD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Gradients, Network};
use crate::par::{self, Execution};
use crate::tensor::Tensor;

/// Samples reduced together before chunk sums are combined. Fixed so the
/// floating-point summation tree never depends on the worker count.
pub const GRADIENT_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.005,
            batch_size: 32,
            epochs: 50,
            seed: 0,
        }
    }
}

impl SgdConfig {
    /// A zero learning rate is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// `−ln p[label]` and its gradient with respect to the softmax input,
/// `p − one_hot(label)`.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    let loss = -probs.data()[label].ln();
    let mut grad = probs.clone();
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

/// `params ← params − lr · grads`
pub fn sgd_step(params: &mut Tensor, grads: &Tensor, learning_rate: f64) -> Result<()> {
    params.add_scaled(grads, -learning_rate)
}

/// Mean loss and mean gradient over a minibatch, plus how many samples the
/// pre-update network already classified correctly.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss_sum: f64,
    pub correct: usize,
    pub len: usize,
    pub grads: Gradients,
}

impl BatchGradient {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.len as f64
    }
}

/// Per-sample gradients averaged over `batch`. Chunks of
/// [`GRADIENT_CHUNK`] samples are reduced independently (possibly in
/// parallel) and then summed in order.
pub fn batch_gradient(net: &Network, batch: &[(&Tensor, usize)], exec: Execution) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::Data("empty minibatch".into()));
    }
    let chunks: Vec<&[(&Tensor, usize)]> = batch.chunks(GRADIENT_CHUNK).collect();
    let partials = par::map(exec, &chunks, |chunk| -> Result<(f64, usize, Gradients)> {
        let mut acc = Gradients::zeros_like(net);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for &(input, label) in chunk.iter() {
            let (loss, probs) = net.accumulate_gradients(input, label, &mut acc)?;
            loss_sum += loss;
            correct += usize::from(probs.argmax() == label);
        }
        Ok((loss_sum, correct, acc))
    });

    let mut total: Option<Gradients> = None;
    let (mut loss_sum, mut correct) = (0.0, 0);
    for partial in partials {
        let (l, c, g) = partial?;
        loss_sum += l;
        correct += c;
        match total.as_mut() {
            Some(t) => t.accumulate(&g)?,
            None => total = Some(g),
        }
    }
    let mut grads = total.expect("batch is non-empty");
    grads.scale(1.0 / batch.len() as f64);
    Ok(BatchGradient {
        loss_sum,
        correct,
        len: batch.len(),
        grads,
    })
}
