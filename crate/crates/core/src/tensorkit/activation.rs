use super::{shape_err, Scalar, Tensor, TensorError};

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let a = T::cast(slope);
    x.map(|v| if v > T::zero() { v } else { a * v })
}

/// Gradient through [`leaky_relu`], using the slope at the forward input
/// (`x > 0` passes, everything else is scaled).
pub fn leaky_relu_backward<T: Scalar>(grad_y: &Tensor<T>, x: &Tensor<T>, slope: f64) -> Result<Tensor<T>, TensorError> {
    if grad_y.shape() != x.shape() {
        return Err(shape_err("leaky_relu_backward", format!("{} vs {}", grad_y.shape(), x.shape())));
    }
    let a = T::cast(slope);
    Ok(Tensor::from_fn(x.shape(), |i| {
        let g = grad_y.data()[i];
        if x.data()[i] > T::zero() {
            g
        } else {
            a * g
        }
    }))
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Gradient through [`sigmoid`] given its output `y`.
pub fn sigmoid_backward<T: Scalar>(grad_y: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if grad_y.shape() != y.shape() {
        return Err(shape_err("sigmoid_backward", format!("{} vs {}", grad_y.shape(), y.shape())));
    }
    Ok(Tensor::from_fn(y.shape(), |i| {
        let s = y.data()[i];
        grad_y.data()[i] * s * (T::one() - s)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::gradcheck::{gradcheck_input, random_tensor};
    use crate::tensorkit::Shape;

    #[test]
    fn leaky_values() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-2.0f64, 0.0, 3.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.01).data(), &[-0.02, 0.0, 3.0]);
    }

    #[test]
    fn sigmoid_extremes_are_finite() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1000.0f32, 0.0, 1000.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        // keep inputs away from the leaky kink
        let x = random_tensor::<f64>(Shape::new(2, 3, 4, 4), 5).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let proj = random_tensor::<f64>(x.shape(), 6);
        let e1 = gradcheck_input(&x, |t| leaky_relu(t, 0.01), &proj, |r| leaky_relu_backward(r, &x, 0.01).unwrap());
        let y = sigmoid(&x);
        let e2 = gradcheck_input(&x, sigmoid, &proj, |r| sigmoid_backward(r, &y).unwrap());
        assert!(e1 < 1e-5 && e2 < 1e-5, "{e1} {e2}");
    }
}
