//! Finite-difference checks of every differentiable building block.

use serde::Serialize;

use super::{total_loss, LossWeights};
use crate::tensorkit::gradcheck::{gradcheck, random_tensor, Differentiable};
use crate::tensorkit::{
    conv2d, conv2d_backward, instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward, maxpool2,
    maxpool2_backward, sigmoid, sigmoid_backward, upconv2, upconv2_backward, Shape, Tensor, NORM_EPS,
};

/// Any primitive whose worst relative error exceeds this fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradRow {
    pub primitive: String,
    pub shape: String,
    pub max_rel_err: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

type Fwd = Box<dyn Fn(&[Tensor<f64>]) -> Tensor<f64>>;
type Bwd = Box<dyn Fn(&[Tensor<f64>], &Tensor<f64>) -> Vec<Tensor<f64>>>;

struct FnOp {
    name: &'static str,
    fwd: Fwd,
    bwd: Bwd,
}

impl Differentiable for FnOp {
    fn name(&self) -> String {
        self.name.to_string()
    }

    fn forward(&self, inputs: &[Tensor<f64>]) -> Tensor<f64> {
        (self.fwd)(inputs)
    }

    fn backward(&self, inputs: &[Tensor<f64>], grad_out: &Tensor<f64>) -> Vec<Tensor<f64>> {
        (self.bwd)(inputs, grad_out)
    }
}

fn vector(t: &Tensor<f64>) -> Tensor<f64> {
    Tensor::from_vec(Shape::new(1, t.len(), 1, 1), t.data().to_vec()).expect("same length")
}

/// Values that differ pairwise by at least `1 / len`, so no 2x2 window has
/// a near-tie a finite-difference step could flip.
fn distinct(shape: Shape, seed: u64) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.len();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 * 2.0 - 1.0).collect();
    v.shuffle(&mut rng);
    Tensor::from_vec(shape, v).expect("same length")
}

/// Random values pushed at least 0.05 away from zero.
fn off_kink(shape: Shape, seed: u64) -> Tensor<f64> {
    random_tensor::<f64>(shape, seed).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

fn conv_rows(seed: u64) -> Vec<GradRow> {
    // (n, cin, h, w, cout, k, stride, pad)
    let cases = [
        (1, 1, 5, 5, 2, 3, 1, 1),
        (2, 2, 4, 6, 3, 3, 1, 1),
        (1, 3, 7, 7, 2, 3, 2, 1),
        (1, 2, 5, 4, 1, 1, 1, 0),
        (2, 1, 6, 5, 2, 2, 1, 0),
    ];
    cases
        .iter()
        .enumerate()
        .map(|(i, &(n, cin, h, w, cout, k, stride, pad))| {
            let op = FnOp {
                name: "conv2d",
                fwd: Box::new(move |t| conv2d(&t[0], &t[1], t[2].data(), stride, pad).unwrap()),
                bwd: Box::new(move |t, g| {
                    let cg = conv2d_backward(g, &t[0], &t[1], stride, pad).unwrap();
                    vec![cg.x, cg.w, Tensor::from_vec(t[2].shape(), cg.b).unwrap()]
                }),
            };
            let s = seed + 10 * i as u64;
            let inputs = [
                random_tensor(Shape::new(n, cin, h, w), s),
                random_tensor(Shape::new(cout, cin, k, k), s + 1),
                random_tensor(Shape::new(1, cout, 1, 1), s + 2),
            ];
            row(&op, &inputs, format!("x {} w {} s{stride} p{pad}", inputs[0].shape(), inputs[1].shape()), s + 3)
        })
        .collect()
}

fn row(op: &FnOp, inputs: &[Tensor<f64>], shape: String, seed: u64) -> GradRow {
    GradRow {
        primitive: op.name.to_string(),
        shape,
        max_rel_err: gradcheck(op, inputs, seed),
    }
}

const SHAPES: [(usize, usize, usize, usize); 5] = [(1, 1, 2, 2), (1, 2, 4, 4), (2, 3, 4, 6), (1, 4, 6, 2), (3, 1, 8, 8)];

fn upconv_rows(seed: u64) -> Vec<GradRow> {
    SHAPES
        .iter()
        .enumerate()
        .map(|(i, &(n, c, h, w))| {
            let cout = 1 + i % 3;
            let op = FnOp {
                name: "upconv2",
                fwd: Box::new(|t| upconv2(&t[0], &t[1]).unwrap()),
                bwd: Box::new(|t, g| {
                    let ug = upconv2_backward(g, &t[0], &t[1]).unwrap();
                    vec![ug.x, ug.w]
                }),
            };
            let s = seed + 10 * i as u64;
            let inputs = [
                random_tensor(Shape::new(n, c, h, w), s),
                random_tensor(Shape::new(c, cout, 2, 2), s + 1),
            ];
            row(&op, &inputs, format!("x {} w {}", inputs[0].shape(), inputs[1].shape()), s + 2)
        })
        .collect()
}

fn maxpool_rows(seed: u64) -> Vec<GradRow> {
    SHAPES
        .iter()
        .enumerate()
        .map(|(i, &(n, c, h, w))| {
            let op = FnOp {
                name: "maxpool2",
                fwd: Box::new(|t| maxpool2(&t[0]).unwrap().0),
                bwd: Box::new(|t, g| {
                    let (_, idx) = maxpool2(&t[0]).unwrap();
                    vec![maxpool2_backward(g, &idx).unwrap()]
                }),
            };
            let s = seed + 10 * i as u64;
            let inputs = [distinct(Shape::new(n, c, h, w), s)];
            row(&op, &inputs, format!("x {}", inputs[0].shape()), s + 1)
        })
        .collect()
}

fn norm_rows(seed: u64) -> Vec<GradRow> {
    SHAPES
        .iter()
        .enumerate()
        .map(|(i, &(n, c, h, w))| {
            let op = FnOp {
                name: "instance_norm",
                fwd: Box::new(|t| instance_norm(&t[0], t[1].data(), t[2].data(), NORM_EPS).unwrap().0),
                bwd: Box::new(|t, g| {
                    let (_, cache) = instance_norm(&t[0], t[1].data(), t[2].data(), NORM_EPS).unwrap();
                    let ng = instance_norm_backward(g, &cache, t[1].data()).unwrap();
                    let shape = t[1].shape();
                    vec![
                        ng.x,
                        Tensor::from_vec(shape, ng.gamma).unwrap(),
                        Tensor::from_vec(shape, ng.beta).unwrap(),
                    ]
                }),
            };
            let s = seed + 10 * i as u64;
            let inputs = [
                random_tensor(Shape::new(n, c, h, w), s),
                vector(&random_tensor(Shape::new(1, c, 1, 1), s + 1)),
                vector(&random_tensor(Shape::new(1, c, 1, 1), s + 2)),
            ];
            row(&op, &inputs, format!("x {}", inputs[0].shape()), s + 3)
        })
        .collect()
}

fn pointwise_rows(seed: u64) -> Vec<GradRow> {
    let mut rows = Vec::new();
    for (i, &(n, c, h, w)) in SHAPES.iter().enumerate() {
        let s = seed + 10 * i as u64;
        let shape = Shape::new(n, c, h, w);
        let leaky = FnOp {
            name: "leaky_relu",
            fwd: Box::new(|t| leaky_relu(&t[0], 0.01)),
            bwd: Box::new(|t, g| vec![leaky_relu_backward(g, &t[0], 0.01).unwrap()]),
        };
        rows.push(row(&leaky, &[off_kink(shape, s)], format!("x {shape}"), s + 1));
        let sig = FnOp {
            name: "sigmoid",
            fwd: Box::new(|t| sigmoid(&t[0])),
            bwd: Box::new(|t, g| vec![sigmoid_backward(g, &sigmoid(&t[0])).unwrap()]),
        };
        rows.push(row(&sig, &[random_tensor::<f64>(shape, s + 2).map(|v| 4.0 * v)], format!("x {shape}"), s + 3));
    }
    rows
}

fn loss_rows(seed: u64) -> Vec<GradRow> {
    SHAPES
        .iter()
        .enumerate()
        .map(|(i, &(n, c, h, w))| {
            let s = seed + 10 * i as u64;
            let shape = Shape::new(n, c, h, w);
            let target = random_tensor::<f64>(shape, s).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let t2 = target.clone();
            let weights = LossWeights::default();
            let op = FnOp {
                name: "bce+dice",
                fwd: Box::new(move |t| {
                    let v = total_loss(&t[0], &target, &weights).unwrap().value;
                    Tensor::filled(Shape::new(1, 1, 1, 1), v)
                }),
                bwd: Box::new(move |t, g| {
                    let grad = total_loss(&t[0], &t2, &weights).unwrap().grad;
                    vec![grad.map(|v| v * g.data()[0])]
                }),
            };
            let inputs = [random_tensor::<f64>(shape, s + 1).map(|v| 3.0 * v)];
            row(&op, &inputs, format!("logits {shape}"), s + 2)
        })
        .collect()
}

/// Five shapes for each of conv2d, upconv2, maxpool2, instance_norm,
/// leaky_relu, sigmoid and the bce+dice loss, all in f64.
pub fn run_gradsuite(seed: u64) -> Vec<GradRow> {
    let mut rows = conv_rows(seed);
    rows.extend(upconv_rows(seed + 1000));
    rows.extend(maxpool_rows(seed + 2000));
    rows.extend(norm_rows(seed + 3000));
    rows.extend(pointwise_rows(seed + 4000));
    rows.extend(loss_rows(seed + 5000));
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        let rows = run_gradsuite(0);
        assert_eq!(rows.len(), 35);
        for r in &rows {
            assert!(r.passed(), "{} {}: {}", r.primitive, r.shape, r.max_rel_err);
        }
    }
}
