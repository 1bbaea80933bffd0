use super::{Scalar, Tensor};

/// A trainable tensor with its accumulated gradient and momentum buffer.
#[derive(Clone, Debug)]
pub struct ParamTensor<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape();
        Self {
            value,
            grad: Tensor::zeros(shape),
            velocity: Tensor::zeros(shape),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdOptions {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

/// One SGD step with L2 weight decay folded into the gradient:
///
/// ```text
/// g = grad + wd * w
/// v = m * v + g
/// w -= lr * (g + m * v)   nesterov
/// w -= lr * v             otherwise
/// ```
///
/// Gradients are zeroed afterwards.
pub fn sgd_step<T: Scalar>(params: &mut [&mut ParamTensor<T>], opts: &SgdOptions) {
    let (lr, m, wd) = (T::cast(opts.lr), T::cast(opts.momentum), T::cast(opts.weight_decay));
    for p in params.iter_mut() {
        let ParamTensor { value, grad, velocity } = &mut **p;
        for ((w, g), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(velocity.data_mut().iter_mut())
        {
            let d = *g + wd * *w;
            *v = m * *v + d;
            let step = if opts.nesterov { d + m * *v } else { *v };
            *w -= lr * step;
            *g = T::zero();
        }
    }
}
