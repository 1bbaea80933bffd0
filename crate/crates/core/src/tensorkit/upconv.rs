use super::gemm::{par_gemm, MatView};
use super::{shape_err, Scalar, Shape, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct UpconvGrads<T = f32> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
}

fn check<T: Scalar>(op: &'static str, x: Shape, w: &Tensor<T>) -> Result<usize, TensorError> {
    let ws = w.shape();
    if ws.h != 2 || ws.w != 2 || ws.n != x.c {
        return Err(shape_err(op, format!("weights {ws} must be [{}, cout, 2, 2]", x.c)));
    }
    Ok(ws.c)
}

/// Stride-2 transposed convolution with a 2x2 kernel `[cin, cout, 2, 2]`:
/// `y[n, co, 2i + a, 2j + b] = sum_ci x[n, ci, i, j] * w[ci, co, a, b]`.
pub fn upconv2<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    let cout = check("upconv2", s, w)?;
    let hw = s.h * s.w;
    let taps = cout * 4;
    let out_shape = Shape::new(s.n, cout, 2 * s.h, 2 * s.w);
    let mut y = Tensor::zeros(out_shape);
    let mut z = vec![T::zero(); taps * hw];
    for n in 0..s.n {
        // z[(co, a, b), (i, j)] = w^T[(co, a, b), ci] * x[ci, (i, j)]
        let xs = MatView::row_major(&x.data()[n * s.sample()..(n + 1) * s.sample()], s.c, hw);
        par_gemm(T::one(), MatView::row_major(w.data(), s.c, taps).t(), xs, T::zero(), &mut z);
        let ys = &mut y.data_mut()[n * out_shape.sample()..(n + 1) * out_shape.sample()];
        scatter(&z, ys, cout, s.h, s.w);
    }
    Ok(y)
}

fn scatter<T: Scalar>(z: &[T], y: &mut [T], cout: usize, h: usize, w: usize) {
    let (hw, ow) = (h * w, 2 * w);
    for co in 0..cout {
        for a in 0..2 {
            for b in 0..2 {
                let src = &z[((co * 2 + a) * 2 + b) * hw..][..hw];
                let plane = &mut y[co * 4 * hw..(co + 1) * 4 * hw];
                for i in 0..h {
                    let row = &mut plane[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                    for j in 0..w {
                        row[2 * j + b] = src[i * w + j];
                    }
                }
            }
        }
    }
}

fn gather<T: Scalar>(y: &[T], z: &mut [T], cout: usize, h: usize, w: usize) {
    let (hw, ow) = (h * w, 2 * w);
    for co in 0..cout {
        for a in 0..2 {
            for b in 0..2 {
                let dst = &mut z[((co * 2 + a) * 2 + b) * hw..][..hw];
                let plane = &y[co * 4 * hw..(co + 1) * 4 * hw];
                for i in 0..h {
                    let row = &plane[(2 * i + a) * ow..(2 * i + a + 1) * ow];
                    for j in 0..w {
                        dst[i * w + j] = row[2 * j + b];
                    }
                }
            }
        }
    }
}

pub fn upconv2_backward<T: Scalar>(
    grad_y: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<UpconvGrads<T>, TensorError> {
    let s = x.shape();
    let cout = check("upconv2_backward", s, w)?;
    let out_shape = Shape::new(s.n, cout, 2 * s.h, 2 * s.w);
    if grad_y.shape() != out_shape {
        return Err(shape_err(
            "upconv2_backward",
            format!("grad_y {} but forward output is {out_shape}", grad_y.shape()),
        ));
    }
    let hw = s.h * s.w;
    let taps = cout * 4;
    let wmat = MatView::row_major(w.data(), s.c, taps);
    let mut gx = Tensor::zeros(s);
    let mut gw = vec![T::zero(); s.c * taps];
    let mut gz = vec![T::zero(); taps * hw];
    for n in 0..s.n {
        gather(
            &grad_y.data()[n * out_shape.sample()..(n + 1) * out_shape.sample()],
            &mut gz,
            cout,
            s.h,
            s.w,
        );
        let gzv = MatView::row_major(&gz, taps, hw);
        let gxs = &mut gx.data_mut()[n * s.sample()..(n + 1) * s.sample()];
        par_gemm(T::one(), wmat, gzv, T::zero(), gxs);
        let xs = MatView::row_major(&x.data()[n * s.sample()..(n + 1) * s.sample()], s.c, hw);
        par_gemm(T::one(), xs, gzv.t(), T::one(), &mut gw);
    }
    Ok(UpconvGrads {
        x: gx,
        w: Tensor::from_vec(w.shape(), gw)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::gradcheck::random_tensor;
    use crate::tensorkit::{conv2d, conv2d_backward};

    #[test]
    fn single_pixel_expands() {
        let x = Tensor::filled(Shape::new(1, 1, 1, 1), 0.25f32);
        let w = Tensor::filled(Shape::new(1, 1, 2, 2), 1.0f32);
        let y = upconv2(&x, &w).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert!(y.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn shape_law() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 8, 16, 16));
        let w = Tensor::<f32>::zeros(Shape::new(8, 4, 2, 2));
        assert_eq!(upconv2(&x, &w).unwrap().shape(), Shape::new(1, 4, 32, 32));
        let bad = Tensor::<f32>::zeros(Shape::new(4, 4, 2, 2));
        assert!(upconv2(&x, &bad).is_err());
    }

    /// upconv2 with w[ci, co] is the adjoint of the stride-2 2x2 convolution
    /// with weights w'[ci, co] (i.e. conv from co channels to ci channels).
    #[test]
    fn adjoint_of_strided_conv() {
        let x = random_tensor::<f64>(Shape::new(2, 3, 4, 5), 1);
        let w = random_tensor::<f64>(Shape::new(3, 2, 2, 2), 2);
        let v = random_tensor::<f64>(Shape::new(2, 2, 8, 10), 3);
        let up = upconv2(&x, &w).unwrap();
        let down = conv2d(&v, &w, &[0.0; 3], 2, 0).unwrap();
        let lhs: f64 = up.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = down.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

        // the input gradient of upconv2 is that strided convolution
        let g = upconv2_backward(&v, &x, &w).unwrap();
        assert!(g.x.max_abs_diff(&down) < 1e-12);
        let cg = conv2d_backward(&x, &v, &w, 2, 0).unwrap();
        assert!(g.w.max_abs_diff(&cg.w) < 1e-12);
    }
}
