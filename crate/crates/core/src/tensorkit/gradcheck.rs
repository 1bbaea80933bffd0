//! Central finite-difference gradient checking.
//!
//! An op is checked by contracting its output with a fixed random projection
//! `r`, so the scalar `L = <r, f(x)>` has gradient `J^T r`, which is what the
//! analytic backward pass returns when fed `r` as the upstream gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Shape, Tensor};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Uniform values in `[-1, 1)` from a seeded stream.
pub fn random_tensor<T: Scalar>(shape: Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::cast(rng.random_range(-1.0..1.0)))
}

/// An operation with an analytic vector-Jacobian product.
pub trait Differentiable {
    fn name(&self) -> String;

    fn forward(&self, inputs: &[Tensor<f64>]) -> Tensor<f64>;

    /// Gradients of `<grad_out, forward(inputs)>` with respect to each input.
    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Vec<Tensor<f64>>;
}

/// Max relative error between analytic and central-difference gradients over
/// every element of every input.
pub fn gradcheck(op: &dyn Differentiable, inputs: &[Tensor<f64>], seed: u64) -> f64 {
    let out = op.forward(inputs);
    let proj = random_tensor::<f64>(out.shape(), seed ^ 0x9e37_79b9_7f4a_7c15);
    let analytic = op.backward(inputs, &proj);
    assert_eq!(analytic.len(), inputs.len(), "{}: one gradient per input", op.name());
    let loss = |inputs: &[Tensor<f64>]| -> f64 {
        let y = op.forward(inputs);
        y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), inputs[i].shape(), "{}: gradient shape", op.name());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + FD_STEP;
            let plus = loss(&probe);
            probe[i].data_mut()[j] = orig - FD_STEP;
            let minus = loss(&probe);
            probe[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grad.data()[j], numeric));
        }
    }
    worst
}

/// Single-input convenience form of [`gradcheck`]: `forward` maps the input to
/// an output, `vjp` returns the input gradient for upstream gradient `proj`.
pub fn gradcheck_input(
    x: &Tensor<f64>,
    forward: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    proj: &Tensor<f64>,
    vjp: impl Fn(&Tensor<f64>) -> Tensor<f64>,
) -> f64 {
    let analytic = vjp(proj);
    let mut probe = x.clone();
    let mut numeric = Vec::with_capacity(x.len());
    let loss = |t: &Tensor<f64>| -> f64 { forward(t).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum() };
    for j in 0..x.len() {
        let orig = x.data()[j];
        probe.data_mut()[j] = orig + FD_STEP;
        let plus = loss(&probe);
        probe.data_mut()[j] = orig - FD_STEP;
        let minus = loss(&probe);
        probe.data_mut()[j] = orig;
        numeric.push((plus - minus) / (2.0 * FD_STEP));
    }
    max_relative_error(analytic.data(), &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square {
        corrupt: bool,
    }

    impl Differentiable for Square {
        fn name(&self) -> String {
            "square".into()
        }

        fn forward(&self, inputs: &[Tensor<f64>]) -> Tensor<f64> {
            inputs[0].map(|v| v * v)
        }

        fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Vec<Tensor<f64>> {
            let mut g = Tensor::from_fn(inputs[0].shape(), |i| 2.0 * inputs[0].data()[i] * grad_out.data()[i]);
            if self.corrupt {
                g.data_mut()[3] *= 1.1;
            }
            vec![g]
        }
    }

    #[test]
    fn detects_corrupted_backward() {
        let x = random_tensor::<f64>(Shape::new(1, 1, 3, 3), 1);
        assert!(gradcheck(&Square { corrupt: false }, std::slice::from_ref(&x), 2) < 1e-8);
        assert!(gradcheck(&Square { corrupt: true }, &[x], 2) > 1e-2);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert_eq!(relative_error(1e-9, 0.0), 1e-9 / 1e-8);
    }
}
