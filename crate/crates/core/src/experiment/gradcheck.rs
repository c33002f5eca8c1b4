use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{architecture_spec, Architecture, ArchitectureParams};
use crate::error::Result;
use crate::gradcheck::relative_error;
use crate::network::{Network, NetworkSpec};
use crate::tensor::Tensor;

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Reduced geometry used for finite-difference checks.
pub const REDUCED_INPUT: [usize; 3] = [1, 12, 12];

/// A small instance of `arch` on a 1×12×12 input with 3×3 stride-1
/// convolutions.
pub fn reduced_spec(arch: Architecture, classes: usize) -> NetworkSpec {
    architecture_spec(
        arch,
        REDUCED_INPUT,
        classes,
        ArchitectureParams {
            filter_size: 3,
            stride: 1,
            padding: 0,
            k1: 3,
            k2: 4,
            fc_hidden: 10,
            pool_window: 2,
            pool_stride: 2,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: usize,
    pub name: String,
    pub tensor: String,
    pub checked: usize,
    /// Elements whose ±ε perturbation changes a ReLU mask or pooling argmax.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub label: usize,
    pub entries: Vec<LayerCheck>,
    /// Analytic gradients at an all-zero input contain no NaN or infinity.
    pub zero_input_finite: bool,
}

impl GradientCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.zero_input_finite
            && self.entries.iter().all(|e| e.checked > 0)
            && self.max_relative_error() < self.tolerance
    }
}

/// Compare every parameter's analytic gradient with a central difference of
/// the full cross-entropy loss on a seeded random input.
pub fn gradient_check(spec: &NetworkSpec, seed: u64) -> Result<GradientCheckReport> {
    let classes = spec.num_classes()?;
    let net = Network::init(spec.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let input = Tensor::from_fn(&spec.input, |_| rng.random_range(-1.0..1.0))?;
    let label = rng.random_range(0..classes);

    let (_, _, analytic) = net.loss_and_gradients(&input, label)?;
    let pattern = net.activation_pattern(&input)?;

    let owners: Vec<(usize, &str)> = spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.has_params())
        .flat_map(|(i, _)| [(i, "weights"), (i, "bias")])
        .collect();

    let mut probe = net.clone();
    let mut entries = Vec::with_capacity(owners.len());
    for (t, &(layer, tensor)) in owners.iter().enumerate() {
        let grad = &analytic.tensors()[t];
        let mut entry = LayerCheck {
            layer,
            name: spec.layers[layer].name(),
            tensor: tensor.into(),
            checked: 0,
            skipped_kinks: 0,
            max_relative_error: 0.0,
        };
        for i in 0..grad.len() {
            let orig = probe.params()[t].data()[i];
            let mut eval = |v: f64| -> Result<(f64, bool)> {
                probe.params_mut()[t].data_mut()[i] = v;
                let same = probe.activation_pattern(&input)? == pattern;
                Ok((probe.loss(&input, label)?, same))
            };
            let (plus, same_plus) = eval(orig + EPSILON)?;
            let (minus, same_minus) = eval(orig - EPSILON)?;
            probe.params_mut()[t].data_mut()[i] = orig;
            if !(same_plus && same_minus) {
                entry.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * EPSILON);
            entry.checked += 1;
            entry.max_relative_error = entry.max_relative_error.max(relative_error(grad.data()[i], numeric));
        }
        entries.push(entry);
    }

    let zero = Tensor::zeros(&spec.input)?;
    let zero_input_finite = net.loss_and_gradients(&zero, label)?.2.all_finite();

    Ok(GradientCheckReport {
        seed,
        epsilon: EPSILON,
        tolerance: TOLERANCE,
        label,
        entries,
        zero_input_finite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_specs_chain() {
        for arch in [Architecture::A, Architecture::B] {
            let chain = reduced_spec(arch, 27).shape_chain().unwrap();
            assert_eq!(chain.last().unwrap(), &vec![27]);
        }
        let b = reduced_spec(Architecture::B, 27).shape_chain().unwrap();
        assert_eq!(b[3], vec![3, 5, 5]);
        assert_eq!(b[6], vec![4, 1, 1]);
    }

    #[test]
    fn both_architectures_pass() {
        for arch in [Architecture::A, Architecture::B] {
            let report = gradient_check(&reduced_spec(arch, 27), 3).unwrap();
            assert!(report.passed(), "{arch}: {report:?}");
            assert_eq!(report.entries.len(), if arch == Architecture::A { 6 } else { 8 });
        }
    }
}
