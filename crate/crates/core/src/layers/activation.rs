use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes `grad_out` where `input > 0`; the gradient at exactly zero is zero.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.same_shape(grad_out, "relu backward")?;
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

/// Max-shifted softmax over all elements.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|v| (v - max).exp());
    let sum: f64 = out.data().iter().sum();
    out.scale(1.0 / sum);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{central_difference, max_relative_error, random_tensor};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_values() {
        let t = Tensor::vector(vec![-3.0, 5.0, 0.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 5.0, 0.0]);
    }

    #[test]
    fn all_negative_gives_zero_output_and_gradient() {
        let t = Tensor::filled(&[2, 3], -0.5).unwrap();
        assert!(relu(&t).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&t, &Tensor::filled(&[2, 3], 1.0).unwrap()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&t, &Tensor::zeros(&[3, 2]).unwrap()).is_err());
    }

    #[test]
    fn relu_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut x = random_tensor(&[20], &mut rng);
        // keep every entry well away from the kink
        for v in x.data_mut() {
            if v.abs() < 1e-3 {
                *v += 0.01;
            }
        }
        let g = random_tensor(&[20], &mut rng);
        let analytic = relu_backward(&x, &g).unwrap();
        let numeric = central_difference(&x, 1e-5, |t| {
            relu(t).data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        });
        assert!(max_relative_error(analytic.data(), numeric.data()) < 1e-4);
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&Tensor::vector(vec![1000.0, 0.0]).unwrap());
        assert!(p.all_finite());
        assert!(p.data()[0] > 1.0 - 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_invariants(
            xs in proptest::collection::vec(-1000.0f64..1000.0, 1..40),
            shift in -500.0f64..500.0,
        ) {
            let x = Tensor::vector(xs.clone()).unwrap();
            let p = softmax(&x);
            let sum: f64 = p.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(p.argmax(), x.argmax());

            let shifted = softmax(&x.map(|v| v + shift));
            for (a, b) in p.data().iter().zip(shifted.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
