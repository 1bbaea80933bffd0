use super::ModelError;
use crate::tensorkit::{Scalar, Tensor};

pub const PROB_CLAMP: f64 = 1e-7;
pub const DICE_EPS: f64 = 1e-5;

/// Weights of the two loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_bce: f64,
    pub w_dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_bce: 1.0, w_dice: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !ok(self.w_bce) || !ok(self.w_dice) {
            return Err(ModelError::Config(format!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.w_bce, self.w_dice
            )));
        }
        if self.w_bce == 0.0 && self.w_dice == 0.0 {
            return Err(ModelError::Config("loss weights cannot both be zero".into()));
        }
        Ok(())
    }
}

fn check<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), ModelError> {
    if a.shape() != b.shape() {
        return Err(ModelError::Config(format!(
            "{op}: prediction {} vs target {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`. Targets are 0/1.
pub fn bce_loss<T: Scalar>(yhat: &Tensor<T>, y: &Tensor<T>) -> Result<f64, ModelError> {
    check("bce_loss", yhat, y)?;
    let n = yhat.len() as f64;
    let sum: f64 = yhat
        .data()
        .iter()
        .zip(y.data())
        .map(|(&p, &t)| {
            let p = p.as_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let t = t.as_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / n)
}

/// `(2 * sum(y * yhat) + eps) / (sum(y) + sum(yhat) + eps)` over the whole batch.
pub fn soft_dice<T: Scalar>(yhat: &Tensor<T>, y: &Tensor<T>) -> Result<f64, ModelError> {
    check("soft_dice", yhat, y)?;
    let (inter, total) = dice_sums(yhat, y);
    Ok((2.0 * inter + DICE_EPS) / (total + DICE_EPS))
}

pub fn dice_loss<T: Scalar>(yhat: &Tensor<T>, y: &Tensor<T>) -> Result<f64, ModelError> {
    Ok(1.0 - soft_dice(yhat, y)?)
}

fn dice_sums<T: Scalar>(yhat: &Tensor<T>, y: &Tensor<T>) -> (f64, f64) {
    yhat.data().iter().zip(y.data()).fold((0.0, 0.0), |(i, s), (&p, &t)| {
        let (p, t) = (p.as_f64(), t.as_f64());
        (i + p * t, s + p + t)
    })
}

#[derive(Clone, Debug)]
pub struct LossOutput<T: Scalar> {
    pub value: f64,
    pub bce: f64,
    pub dice: f64,
    /// Gradient of `value` with respect to the pre-sigmoid logits.
    pub grad: Tensor<T>,
}

/// `w_bce * bce + w_dice * dice` evaluated on `sigmoid(logits)`, with the
/// exact gradient through the sigmoid and the clamp.
pub fn total_loss<T: Scalar>(logits: &Tensor<T>, y: &Tensor<T>, weights: &LossWeights) -> Result<LossOutput<T>, ModelError> {
    check("total_loss", logits, y)?;
    let probs: Vec<f64> = logits.data().iter().map(|&z| sigmoid64(z.as_f64())).collect();
    let targets: Vec<f64> = y.data().iter().map(|t| t.as_f64()).collect();
    let n = probs.len() as f64;

    let mut bce = 0.0;
    let (mut inter, mut total) = (0.0, 0.0);
    for (&p, &t) in probs.iter().zip(&targets) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        bce -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        inter += p * t;
        total += p + t;
    }
    bce /= n;
    let denom = total + DICE_EPS;
    let numer = 2.0 * inter + DICE_EPS;
    let dice = 1.0 - numer / denom;

    let grad = Tensor::from_fn(logits.shape(), |i| {
        let (p, t) = (probs[i], targets[i]);
        let dsig = p * (1.0 - p);
        // inside the clamp, d(bce)/dz simplifies to p - t
        let g_bce = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) { (p - t) / n } else { 0.0 };
        let g_dice = -(2.0 * t * denom - numer) / (denom * denom) * dsig;
        T::cast(weights.w_bce * g_bce + weights.w_dice * g_dice)
    });
    Ok(LossOutput {
        value: weights.w_bce * bce + weights.w_dice * dice,
        bce,
        dice,
        grad,
    })
}

pub(crate) fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `lr0 * (1 - e / E)^p`, with `e` capped at `E`.
pub fn poly_lr(epoch: usize, total: usize, lr0: f64, exponent: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let frac = 1.0 - epoch.min(total) as f64 / total as f64;
    lr0 * frac.powf(exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorkit::gradcheck::{gradcheck_input, random_tensor};
    use crate::tensorkit::Shape;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    fn halves() -> (Tensor<f64>, Tensor<f64>) {
        let left = Tensor::from_fn(Shape::new(1, 1, 4, 4), |i| if i % 4 < 2 { 1.0 } else { 0.0 });
        let right = left.map(|v| 1.0 - v);
        (left, right)
    }

    #[test]
    fn bce_spot_values() {
        let ones = t(&[1.0; 6]);
        assert!(bce_loss(&ones, &ones).unwrap() <= 1e-6);
        let half = t(&[0.5; 4]);
        let y = t(&[1.0, 0.0, 1.0, 1.0]);
        assert!((bce_loss(&half, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let v = bce_loss(&t(&[0.0]), &t(&[1.0])).unwrap();
        assert!((v - 16.118_095_650_958_32).abs() < 1e-9 && v.is_finite());
    }

    #[test]
    fn dice_spot_values() {
        let (left, right) = halves();
        assert!(dice_loss(&left, &left).unwrap() <= 1e-4);
        let z = t(&[0.0; 5]);
        assert_eq!(dice_loss(&z, &z).unwrap(), 0.0);
        let d = dice_loss(&right, &left).unwrap();
        assert!((d - 1.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn degenerate_weights() {
        let z = random_tensor::<f64>(Shape::new(1, 1, 4, 4), 3).map(|v| 3.0 * v);
        let (y, _) = halves();
        let p = z.map(sigmoid64);
        let only_bce = total_loss(&z, &y, &LossWeights { w_bce: 1.0, w_dice: 0.0 }).unwrap();
        assert!((only_bce.value - bce_loss(&p, &y).unwrap()).abs() < 1e-12);
        let only_dice = total_loss(&z, &y, &LossWeights { w_bce: 0.0, w_dice: 1.0 }).unwrap();
        assert!((only_dice.value - dice_loss(&p, &y).unwrap()).abs() < 1e-12);
        assert!(LossWeights { w_bce: 0.0, w_dice: 0.0 }.validate().is_err());
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let z = random_tensor::<f64>(Shape::new(1, 1, 4, 4), 11).map(|v| 4.0 * v);
        let (y, _) = halves();
        let w = LossWeights::default();
        let unit = Tensor::filled(Shape::new(1, 1, 1, 1), 1.0);
        let err = gradcheck_input(
            &z,
            |x| Tensor::filled(Shape::new(1, 1, 1, 1), total_loss(x, &y, &w).unwrap().value),
            &unit,
            |_| total_loss(&z, &y, &w).unwrap().grad,
        );
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn poly_lr_spot_values() {
        assert_eq!(poly_lr(0, 100, 0.01, 0.9), 0.01);
        assert_eq!(poly_lr(100, 100, 0.01, 0.9), 0.0);
        assert!((poly_lr(50, 100, 0.01, 1.0) - 0.005).abs() < 1e-15);
    }
}
