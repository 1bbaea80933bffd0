use rayon::prelude::*;

use super::{shape_err, Scalar, Tensor, TensorError};

pub const NORM_EPS: f64 = 1e-5;

/// Saved forward state for [`instance_norm_backward`].
#[derive(Clone, Debug)]
pub struct NormCache<T = f32> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormGrads<T = f32> {
    pub x: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Per-sample, per-channel normalization over the spatial plane using the
/// biased variance, followed by the affine map `gamma * xhat + beta`.
pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> Result<(Tensor<T>, NormCache<T>), TensorError> {
    let s = x.shape();
    if gamma.len() != s.c || beta.len() != s.c {
        return Err(shape_err(
            "instance_norm",
            format!("{} channels but gamma {} / beta {}", s.c, gamma.len(), beta.len()),
        ));
    }
    let plane = s.plane();
    let mut xhat = Tensor::zeros(s);
    let mut y = Tensor::zeros(s);
    let mut inv_std = vec![T::zero(); s.n * s.c];
    xhat.data_mut()
        .par_chunks_mut(plane)
        .zip(y.data_mut().par_chunks_mut(plane))
        .zip(inv_std.par_iter_mut())
        .zip(x.data().par_chunks(plane))
        .enumerate()
        .for_each(|(idx, (((xh, out), istd), src))| {
            let c = idx % s.c;
            let count = plane as f64;
            let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / count;
            let var = src.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / count;
            let inv = 1.0 / (var + eps).sqrt();
            *istd = T::cast(inv);
            let (g, b) = (gamma[c], beta[c]);
            for ((h, o), &v) in xh.iter_mut().zip(out.iter_mut()).zip(src) {
                *h = T::cast((v.as_f64() - mean) * inv);
                *o = g * *h + b;
            }
        });
    Ok((y, NormCache { xhat, inv_std }))
}

pub fn instance_norm_backward<T: Scalar>(
    grad_y: &Tensor<T>,
    cache: &NormCache<T>,
    gamma: &[T],
) -> Result<NormGrads<T>, TensorError> {
    let s = cache.xhat.shape();
    if grad_y.shape() != s || gamma.len() != s.c {
        return Err(shape_err(
            "instance_norm_backward",
            format!("grad_y {} for input {s}, gamma {}", grad_y.shape(), gamma.len()),
        ));
    }
    let plane = s.plane();
    let count = plane as f64;
    let mut gx = Tensor::zeros(s);
    // (sum gy, sum gy * xhat) per plane
    let sums: Vec<(f64, f64)> = grad_y
        .data()
        .par_chunks(plane)
        .zip(cache.xhat.data().par_chunks(plane))
        .map(|(gy, xh)| {
            gy.iter().zip(xh).fold((0.0, 0.0), |(a, b), (&g, &h)| {
                (a + g.as_f64(), b + g.as_f64() * h.as_f64())
            })
        })
        .collect();
    gx.data_mut()
        .par_chunks_mut(plane)
        .zip(grad_y.data().par_chunks(plane))
        .zip(cache.xhat.data().par_chunks(plane))
        .enumerate()
        .for_each(|(idx, ((out, gy), xh))| {
            let (sg, sgh) = sums[idx];
            let scale = gamma[idx % s.c].as_f64() * cache.inv_std[idx].as_f64() / count;
            for ((o, &g), &h) in out.iter_mut().zip(gy).zip(xh) {
                *o = T::cast(scale * (count * g.as_f64() - sg - h.as_f64() * sgh));
            }
        });
    let mut ggamma = vec![0.0f64; s.c];
    let mut gbeta = vec![0.0f64; s.c];
    for (idx, &(sg, sgh)) in sums.iter().enumerate() {
        ggamma[idx % s.c] += sgh;
        gbeta[idx % s.c] += sg;
    }
    Ok(NormGrads {
        x: gx,
        gamma: ggamma.into_iter().map(T::cast).collect(),
        beta: gbeta.into_iter().map(T::cast).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::gradcheck::{gradcheck_input, random_tensor};
    use crate::tensorkit::Shape;

    #[test]
    fn output_has_zero_mean_unit_variance() {
        let x = random_tensor::<f64>(Shape::new(2, 3, 5, 7), 4).map(|v| 3.0 * v + 1.0);
        let (y, _) = instance_norm(&x, &[1.0; 3], &[0.0; 3], NORM_EPS).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let p = y.plane(n, c);
                let mean = p.iter().sum::<f64>() / p.len() as f64;
                let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / p.len() as f64;
                assert!(mean.abs() < 1e-12);
                assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn constant_plane_maps_to_beta() {
        let x = Tensor::filled(Shape::new(1, 2, 3, 3), 5.0f64);
        let (y, _) = instance_norm(&x, &[2.0, 3.0], &[0.25, -1.0], NORM_EPS).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == -1.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let x = random_tensor::<f64>(Shape::new(2, 2, 3, 4), 8);
        let gamma = [0.7, -1.3];
        let beta = [0.1, 0.2];
        let proj = random_tensor::<f64>(x.shape(), 9);
        let err = gradcheck_input(
            &x,
            |t| instance_norm(t, &gamma, &beta, NORM_EPS).unwrap().0,
            &proj,
            |r| {
                let (_, cache) = instance_norm(&x, &gamma, &beta, NORM_EPS).unwrap();
                instance_norm_backward(r, &cache, &gamma).unwrap().x
            },
        );
        assert!(err < 1e-5, "{err}");
    }
}
