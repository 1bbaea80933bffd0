use rayon::prelude::*;

use super::{shape_err, Scalar, Shape, Tensor, TensorError};

/// Argmax positions recorded by [`maxpool2`], as offsets within each input plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Shape,
    argmax: Vec<u32>,
}

impl PoolIndices {
    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

/// 2x2 max pooling with stride 2. Ties resolve to the first element of the
/// window in row-major order.
pub fn maxpool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices), TensorError> {
    let s = x.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(TensorError::OddSpatial {
            op: "maxpool2",
            h: s.h,
            w: s.w,
        });
    }
    let out_shape = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut y = Tensor::zeros(out_shape);
    let mut argmax = vec![0u32; out_shape.len()];
    y.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .zip(x.data().par_chunks(s.h * s.w))
        .for_each(|((out, idx), plane)| {
            for r in 0..oh {
                for c in 0..ow {
                    let base = 2 * r * s.w + 2 * c;
                    let mut best = base;
                    for off in [base + 1, base + s.w, base + s.w + 1] {
                        if plane[off] > plane[best] {
                            best = off;
                        }
                    }
                    out[r * ow + c] = plane[best];
                    idx[r * ow + c] = best as u32;
                }
            }
        });
    Ok((
        y,
        PoolIndices {
            input_shape: s,
            argmax,
        },
    ))
}

pub fn maxpool2_backward<T: Scalar>(grad_y: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>, TensorError> {
    let s = indices.input_shape;
    if grad_y.shape() != Shape::new(s.n, s.c, s.h / 2, s.w / 2) {
        return Err(shape_err(
            "maxpool2_backward",
            format!("grad_y {} for input {s}", grad_y.shape()),
        ));
    }
    let mut gx = Tensor::zeros(s);
    let out_plane = (s.h / 2) * (s.w / 2);
    gx.data_mut()
        .par_chunks_mut(s.h * s.w)
        .zip(grad_y.data().par_chunks(out_plane))
        .zip(indices.argmax.par_chunks(out_plane))
        .for_each(|((plane, gy), idx)| {
            for (&g, &i) in gy.iter().zip(idx) {
                plane[i as usize] += g;
            }
        });
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_max_and_routing() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let gx = maxpool2_backward(&Tensor::filled(y.shape(), 1.0), &idx).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_route_to_first() {
        let x = Tensor::filled(Shape::new(1, 1, 2, 2), 0.7f32);
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[0.7]);
        let gx = maxpool2_backward(&Tensor::filled(y.shape(), 2.0), &idx).unwrap();
        assert_eq!(gx.data(), &[2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 4));
        assert!(matches!(maxpool2(&x), Err(TensorError::OddSpatial { .. })));
    }
}
