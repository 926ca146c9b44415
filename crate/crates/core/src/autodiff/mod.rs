//! Reverse-mode automatic differentiation over dense matrices.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::gradient_check;
pub use graph::{Gradients, Graph, OpKind, Var};
pub(crate) use graph::{log_sigmoid, sigmoid, softmax_in_place};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor<f64> {
        Tensor::try_from((rows, cols, data)).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut g = Graph::<f64>::new();
        let i = g.input(t(2, 2, &[1.0, 0.0, 0.0, 1.0]), false);
        let m = g.input(t(2, 2, &[2.0, 3.0, 4.0, 5.0]), false);
        let p = g.matmul(i, m).unwrap();
        assert_eq!(g.value(p).data(), &[2.0, 3.0, 4.0, 5.0]);

        let z = g.input(t(1, 1, &[0.0]), false);
        let s = g.sigmoid(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5]);

        let zz = g.input(t(1, 2, &[0.0, 0.0]), false);
        let sm = g.softmax(zz).unwrap();
        assert_eq!(g.value(sm).data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::row_vector(vec![1000.0, 1000.0]), false);
        let s = g.softmax(x).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(2, 3), false);
        let b = g.input(Tensor::zeros(2, 3), false);
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
        let c = g.input(Tensor::zeros(3, 2), false);
        assert!(matches!(g.add(a, c), Err(Error::Dimension(_))));
    }

    #[test]
    fn non_finite_output_is_numeric_error() {
        let mut g = Graph::<f32>::new();
        let a = g.input(Tensor::row_vector(vec![f32::MAX]), false);
        assert!(matches!(g.scale(a, 10.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(1, 3, &[1.0, 2.0, 3.0]), true);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_of_sigmoid_at_zero_weight() {
        let mut g = Graph::<f64>::new();
        let w = g.input(Tensor::zeros(1, 3), true);
        let x = g.input(t(3, 1, &[1.0, -2.0, 4.0]), false);
        let dot = g.matmul(w, x).unwrap();
        let loss = g.sigmoid(dot).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0.25, -0.5, 1.0]);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(2, 2), true);
        let y = g.scale(x, 2.0).unwrap();
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_is_repeatable_and_leaves_values_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.input(random(&mut rng, 4, 5), true);
        let w = g.input(random(&mut rng, 5, 3), true);
        let h = g.matmul(x, w).unwrap();
        let a = g.gelu(h).unwrap();
        let s = g.softmax(a).unwrap();
        let loss = g.cross_entropy(s, &[0, 2, 1, 1]).unwrap();
        let before: Vec<_> = (0..g.len()).map(|i| g.value(Var(i)).clone()).collect();
        let first = g.backward(loss).unwrap();
        let second = g.backward(loss).unwrap();
        for (a, b) in first.iter().zip(second.iter()) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.data(), b.1.data());
        }
        for (i, v) in before.iter().enumerate() {
            assert_eq!(g.value(Var(i)).data(), v.data());
        }
    }

    #[test]
    fn gradient_check_quadratic_and_constant() {
        let x = t(1, 3, &[1.0, 2.0, 3.0]);
        let err = gradient_check(
            |g, x| {
                let sq = g.mul(x, x)?;
                g.sum_all(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");

        let err = gradient_check(|g, _| Ok(g.input(Tensor::scalar(4.0), false)), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn gradient_check_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 1, 8);
        // unit gain makes the sum constant, so the gain is randomized
        let gain = random(&mut rng, 1, 8);
        let bias = random(&mut rng, 1, 8);
        let err = gradient_check(
            |g, x| {
                let gm = g.input(gain.clone(), false);
                let bt = g.input(bias.clone(), false);
                let y = g.layer_norm(x, gm, bt, 1e-5)?;
                g.sum_all(y)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn gradient_check_rejects_bad_eps() {
        let x = t(1, 1, &[1.0]);
        assert!(gradient_check(|g, x| g.sum_all(x), &x, 0.0).is_err());
    }
}
