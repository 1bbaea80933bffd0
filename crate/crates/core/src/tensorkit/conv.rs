//! 2D cross-correlation via im2col + blocked GEMM, with a direct-loop
//! reference path.

use rayon::prelude::*;

use super::gemm::{gemm, par_gemm, MatView};
use super::{shape_err, Scalar, Shape, Tensor, TensorError};

/// Target number of output pixels per im2col tile.
const TILE_PIXELS: usize = 512;

pub fn conv_output_dim(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if stride == 0 || padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Scalar>(
        op: &'static str,
        x: Shape,
        w: &Tensor<T>,
        bias_len: Option<usize>,
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        let ws = w.shape();
        if x.c != ws.c {
            return Err(shape_err(op, format!("input {x} has {} channels, weights {ws} expect {}", x.c, ws.c)));
        }
        if let Some(len) = bias_len {
            if len != ws.n {
                return Err(shape_err(op, format!("bias has {len} entries for {} output channels", ws.n)));
            }
        }
        let dim = |size, kernel| {
            conv_output_dim(size, kernel, stride, pad).ok_or(TensorError::NonIntegral {
                op,
                size,
                pad,
                kernel,
                stride,
            })
        };
        Ok(Self {
            n: x.n,
            cin: x.c,
            h: x.h,
            w: x.w,
            cout: ws.n,
            kh: ws.h,
            kw: ws.w,
            stride,
            pad,
            oh: dim(x.h, ws.h)?,
            ow: dim(x.w, ws.w)?,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn rows_per_tile(&self) -> usize {
        (TILE_PIXELS / self.ow.max(1)).clamp(1, self.oh.max(1))
    }

    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let step = self.rows_per_tile();
        (0..self.oh).step_by(step).map(move |r0| (r0, (r0 + step).min(self.oh)))
    }

    fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.cout, self.oh, self.ow)
    }
}

/// Unfolds output rows `r0..r1` of one sample into `col` (K rows x pixels).
fn im2col<T: Scalar>(g: &Geometry, x: &[T], r0: usize, r1: usize, col: &mut [T]) {
    let cols = (r1 - r0) * g.ow;
    let pad = g.pad as isize;
    let mut row_idx = 0;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for a in 0..g.kh {
            for b in 0..g.kw {
                let dst = &mut col[row_idx * cols..(row_idx + 1) * cols];
                row_idx += 1;
                for r in r0..r1 {
                    let seg = &mut dst[(r - r0) * g.ow..(r - r0 + 1) * g.ow];
                    let ih = (r * g.stride + a) as isize - pad;
                    if ih < 0 || ih >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    if g.stride == 1 {
                        // valid output columns: 0 <= oc + b - pad < w
                        let lo = (pad - b as isize).clamp(0, g.ow as isize) as usize;
                        let hi = (g.w as isize + pad - b as isize).clamp(lo as isize, g.ow as isize) as usize;
                        seg[..lo].fill(T::zero());
                        let start = (lo as isize + b as isize - pad) as usize;
                        seg[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        seg[hi..].fill(T::zero());
                    } else {
                        for (oc, v) in seg.iter_mut().enumerate() {
                            let iw = (oc * g.stride + b) as isize - pad;
                            *v = if iw >= 0 && iw < g.w as isize { src[iw as usize] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Adds `col` (K rows x pixels for output rows `r0..r1`) back into the input
/// gradient planes of one sample.
fn col2im<T: Scalar>(g: &Geometry, col: &[T], r0: usize, r1: usize, gx: &mut [T]) {
    let cols = (r1 - r0) * g.ow;
    let kk = g.kh * g.kw;
    gx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(ci, plane)| {
        for a in 0..g.kh {
            for b in 0..g.kw {
                let src = &col[(ci * kk + a * g.kw + b) * cols..][..cols];
                for r in r0..r1 {
                    let ih = (r * g.stride + a) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    let seg = &src[(r - r0) * g.ow..(r - r0 + 1) * g.ow];
                    for (oc, &v) in seg.iter().enumerate() {
                        let iw = (oc * g.stride + b) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    });
}

/// Cross-correlation `y = w * x + b` with weights `[cout, cin, kh, kw]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = Geometry::new("conv2d", x.shape(), w, Some(b.len()), stride, pad)?;
    let k = g.k();
    let weights = MatView::row_major(w.data(), g.cout, k);
    let items: Vec<(usize, usize, usize)> = (0..g.n)
        .flat_map(|n| g.tiles().map(move |(r0, r1)| (n, r0, r1)))
        .collect();
    let sample_len = g.cin * g.h * g.w;
    let tiles: Vec<Vec<T>> = items
        .par_iter()
        .map_init(Vec::new, |col, &(n, r0, r1)| {
            let cols = (r1 - r0) * g.ow;
            col.resize(k * cols, T::zero());
            im2col(&g, &x.data()[n * sample_len..(n + 1) * sample_len], r0, r1, col);
            let mut out: Vec<T> = b.iter().flat_map(|&bv| std::iter::repeat_n(bv, cols)).collect();
            gemm(T::one(), weights, MatView::row_major(col, k, cols), T::one(), &mut out, cols);
            out
        })
        .collect();

    let shape = g.out_shape();
    let plane = g.oh * g.ow;
    let mut y = Tensor::zeros(shape);
    let data = y.data_mut();
    for (&(n, r0, r1), tile) in items.iter().zip(&tiles) {
        let cols = (r1 - r0) * g.ow;
        for co in 0..g.cout {
            let dst = (n * g.cout + co) * plane + r0 * g.ow;
            data[dst..dst + cols].copy_from_slice(&tile[co * cols..(co + 1) * cols]);
        }
    }
    Ok(y)
}

/// Direct seven-loop convolution. Reference path for [`conv2d`].
pub fn conv2d_naive<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &[T],
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = Geometry::new("conv2d", x.shape(), w, Some(b.len()), stride, pad)?;
    let mut y = Tensor::zeros(g.out_shape());
    let plane = g.oh * g.ow;
    y.data_mut().par_chunks_mut(plane).enumerate().for_each(|(idx, out)| {
        let (n, co) = (idx / g.cout, idx % g.cout);
        out.fill(b[co]);
        for ci in 0..g.cin {
            let src = x.plane(n, ci);
            for a in 0..g.kh {
                for bb in 0..g.kw {
                    let wv = w.at(co, ci, a, bb);
                    for r in 0..g.oh {
                        let ih = (r * g.stride + a) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let row = &src[ih as usize * g.w..(ih as usize + 1) * g.w];
                        let dst = &mut out[r * g.ow..(r + 1) * g.ow];
                        // output columns whose tap lands inside the row
                        let lo = (g.pad.saturating_sub(bb)).div_ceil(g.stride);
                        let hi = ((g.w + g.pad).saturating_sub(bb)).div_ceil(g.stride).min(g.ow);
                        if lo >= hi {
                            continue;
                        }
                        let first = lo * g.stride + bb - g.pad;
                        if g.stride == 1 {
                            for (d, &v) in dst[lo..hi].iter_mut().zip(&row[first..]) {
                                *d += wv * v;
                            }
                        } else {
                            for (d, &v) in dst[lo..hi].iter_mut().zip(row[first..].iter().step_by(g.stride)) {
                                *d += wv * v;
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T = f32> {
    pub x: Tensor<T>,
    pub w: Tensor<T>,
    pub b: Vec<T>,
}

/// Adjoint of [`conv2d`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_y: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>, TensorError> {
    let g = Geometry::new("conv2d_backward", x.shape(), w, None, stride, pad)?;
    if grad_y.shape() != g.out_shape() {
        return Err(shape_err(
            "conv2d_backward",
            format!("grad_y {} but forward output is {}", grad_y.shape(), g.out_shape()),
        ));
    }
    let k = g.k();
    let plane = g.oh * g.ow;
    let sample_in = g.cin * g.h * g.w;
    let sample_out = g.cout * plane;
    let weights = MatView::row_major(w.data(), g.cout, k);

    let mut gx = Tensor::zeros(x.shape());
    let mut gw = vec![T::zero(); g.cout * k];
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    for n in 0..g.n {
        let xs = &x.data()[n * sample_in..(n + 1) * sample_in];
        for (r0, r1) in g.tiles() {
            let cols = (r1 - r0) * g.ow;
            col.resize(k * cols, T::zero());
            dcol.resize(k * cols, T::zero());
            im2col(&g, xs, r0, r1, &mut col);
            let gy_tile = MatView::strided(
                &grad_y.data()[n * sample_out + r0 * g.ow..],
                g.cout,
                cols,
                plane,
                1,
            );
            par_gemm(T::one(), gy_tile, MatView::row_major(&col, k, cols).t(), T::one(), &mut gw);
            par_gemm(T::one(), weights.t(), gy_tile, T::zero(), &mut dcol);
            col2im(&g, &dcol, r0, r1, &mut gx.data_mut()[n * sample_in..(n + 1) * sample_in]);
        }
    }

    let mut gb = vec![T::zero(); g.cout];
    for n in 0..g.n {
        for (co, acc) in gb.iter_mut().enumerate() {
            let start = n * sample_out + co * plane;
            for &v in &grad_y.data()[start..start + plane] {
                *acc += v;
            }
        }
    }
    Ok(ConvGrads {
        x: gx,
        w: Tensor::from_vec(w.shape(), gw)?,
        b: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::gradcheck::{gradcheck_input, random_tensor};

    #[test]
    fn identity_kernel() {
        let x = random_tensor::<f32>(Shape::new(2, 1, 5, 4), 1);
        let w = Tensor::filled(Shape::new(1, 1, 1, 1), 1.0f32);
        let y = conv2d(&x, &w, &[0.0], 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let c = 0.5f32;
        let x = Tensor::filled(Shape::new(1, 1, 5, 5), c);
        let w = Tensor::filled(Shape::new(1, 1, 3, 3), 1.0f32);
        let y = conv2d(&x, &w, &[0.0], 1, 1).unwrap();
        assert_eq!(y.at(0, 0, 2, 2), 9.0 * c);
        assert_eq!(y.at(0, 0, 0, 0), 4.0 * c);
        assert_eq!(y.at(0, 0, 0, 2), 6.0 * c);
    }

    #[test]
    fn same_padding_preserves_dims() {
        for k in [1, 3, 5] {
            let x = random_tensor::<f32>(Shape::new(1, 2, 7, 6), 3);
            let w = random_tensor::<f32>(Shape::new(3, 2, k, k), 4);
            let y = conv2d(&x, &w, &[0.0; 3], 1, (k - 1) / 2).unwrap();
            assert_eq!((y.shape().h, y.shape().w), (7, 6));
        }
    }

    #[test]
    fn blocked_matches_naive() {
        // wide enough to span several tiles
        for (shape, stride, pad) in [
            (Shape::new(2, 3, 70, 130), 1, 1),
            (Shape::new(1, 2, 9, 11), 2, 1),
            (Shape::new(1, 4, 8, 8), 1, 0),
        ] {
            let x = random_tensor::<f32>(shape, 5);
            let w = random_tensor::<f32>(Shape::new(5, shape.c, 3, 3), 6);
            let b = [0.1, -0.2, 0.3, 0.0, 0.5];
            let fast = conv2d(&x, &w, &b, stride, pad).unwrap();
            let slow = conv2d_naive(&x, &w, &b, stride, pad).unwrap();
            assert!(fast.max_abs_diff(&slow) < 1e-5);
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(Shape::new(1, 3, 3, 3));
        assert!(matches!(conv2d(&x, &w, &[0.0], 1, 1), Err(TensorError::Shape { .. })));
        let w = Tensor::<f32>::zeros(Shape::new(1, 2, 3, 3));
        assert!(matches!(conv2d(&x, &w, &[0.0], 2, 0), Err(TensorError::NonIntegral { .. })));
        assert!(matches!(conv2d(&x, &w, &[0.0, 1.0], 1, 1), Err(TensorError::Shape { .. })));
    }

    #[test]
    fn zero_upstream_gradient() {
        let x = random_tensor::<f64>(Shape::new(1, 2, 5, 5), 7);
        let w = random_tensor::<f64>(Shape::new(3, 2, 3, 3), 8);
        let gy = Tensor::zeros(Shape::new(1, 3, 5, 5));
        let g = conv2d_backward(&gy, &x, &w, 1, 1).unwrap();
        assert!(g.x.data().iter().chain(g.w.data()).chain(&g.b).all(|&v| v == 0.0));
    }

    #[test]
    fn unit_impulse_weight_gradient_is_input_patch() {
        let x = random_tensor::<f64>(Shape::new(1, 2, 5, 5), 9);
        let w = random_tensor::<f64>(Shape::new(1, 2, 3, 3), 10);
        let mut gy = Tensor::zeros(Shape::new(1, 1, 3, 3));
        gy.data_mut()[4] = 1.0; // output (1, 1)
        let g = conv2d_backward(&gy, &x, &w, 1, 0).unwrap();
        for ci in 0..2 {
            for a in 0..3 {
                for b in 0..3 {
                    assert_eq!(g.w.at(0, ci, a, b), x.at(0, ci, 1 + a, 1 + b));
                }
            }
        }
        assert_eq!(g.b, vec![1.0]);
    }

    #[test]
    fn linear_in_input_to_roundoff() {
        let w = random_tensor::<f64>(Shape::new(2, 2, 3, 3), 12);
        let x = random_tensor::<f64>(Shape::new(1, 2, 5, 5), 11);
        let gy = random_tensor::<f64>(Shape::new(1, 2, 5, 5), 13);
        let err = gradcheck_input(
            &x,
            |x| conv2d(x, &w, &[0.0, 0.0], 1, 1).unwrap(),
            &gy,
            |_| conv2d_backward(&gy, &x, &w, 1, 1).unwrap().x,
        );
        assert!(err < 1e-7, "{err}");
    }
}
