use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{augment, poly_lr, total_loss, AugmentConfig, LossWeights, Model, TrainError};
use crate::specio::{save_checkpoint, BinaryMask, ImageGray, SpecioError};
use crate::tensorkit::{sgd_step, Scalar, SgdOptions, Shape, Tensor};

/// One training example, already preprocessed.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ImageGray,
    pub mask: BinaryMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub poly_exponent: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 = only after the last).
    pub checkpoint_every: usize,
    /// Where `epoch-N.sten` files go; `None` disables checkpointing.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            lr0: 0.01,
            poly_exponent: 0.9,
            momentum: 0.99,
            nesterov: true,
            weight_decay: 3e-5,
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if !(self.lr0.is_finite() && self.lr0 >= 0.0) {
            return bad(format!("train.lr0 must be finite and non-negative, got {}", self.lr0));
        }
        if !(self.poly_exponent.is_finite() && self.poly_exponent > 0.0) {
            return bad(format!("train.poly_exponent must be positive, got {}", self.poly_exponent));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("train.momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("train.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted mean total loss over the epoch's batches.
    pub loss: f64,
    /// Soft dice over every training prediction made during the epoch.
    pub soft_dice: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Stacks samples into an `n x 1 x h x w` image batch and a matching target.
pub fn batch_tensors<T: Scalar>(samples: &[&Sample]) -> Result<(Tensor<T>, Tensor<T>), TrainError> {
    let first = samples.first().ok_or(TrainError::EmptyDataset)?;
    let (h, w) = (first.image.height(), first.image.width());
    let shape = Shape::new(samples.len(), 1, h, w);
    let mut x = Vec::with_capacity(shape.len());
    let mut y = Vec::with_capacity(shape.len());
    for s in samples {
        if s.image.height() != h || s.image.width() != w || s.mask.height() != h || s.mask.width() != w {
            return Err(TrainError::Config(format!(
                "batch mixes sizes: {h}x{w} vs image {}x{} / mask {}x{}",
                s.image.height(),
                s.image.width(),
                s.mask.height(),
                s.mask.width()
            )));
        }
        x.extend(s.image.data().iter().map(|&v| T::cast(v)));
        y.extend(s.mask.data().iter().map(|&v| T::cast(v as f64)));
    }
    Ok((Tensor::from_vec(shape, x)?, Tensor::from_vec(shape, y)?))
}

/// Minibatch SGD with the polynomial schedule.
///
/// A single ChaCha8 stream seeded with `cfg.seed` drives everything random:
/// each epoch draws a shuffle of the sample order, then the augmentation
/// draws for each sample in batch order.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &[Sample],
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    weights: &LossWeights,
) -> Result<TrainOutcome, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    cfg.validate()?;
    aug.validate()?;
    weights.validate()?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::Io(SpecioError::io(dir, e)))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut out = TrainOutcome::default();
    model.zero_grads();
    for e in 0..cfg.epochs {
        let lr = poly_lr(e, cfg.epochs, cfg.lr0, cfg.poly_exponent);
        let opts = SgdOptions {
            lr,
            momentum: cfg.momentum,
            nesterov: cfg.nesterov,
            weight_decay: cfg.weight_decay,
        };
        order.shuffle(&mut rng);
        let (mut loss_sum, mut inter, mut total) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut augmented = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (image, mask) = augment(&data[i].image, &data[i].mask, aug, &mut rng)?;
                augmented.push(Sample { image, mask });
            }
            let refs: Vec<&Sample> = augmented.iter().collect();
            let (x, y) = batch_tensors::<T>(&refs)?;
            let (logits, trace) = model.forward_train(&x)?;
            let loss = total_loss(&logits, &y, weights)?;
            if !loss.value.is_finite() || !loss.grad.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch: e + 1,
                    batch: b,
                    loss: loss.value,
                    bce: loss.bce,
                    dice: loss.dice,
                });
            }
            model.backward(&trace, &loss.grad)?;
            sgd_step(&mut model.params_mut(), &opts);

            loss_sum += loss.value * chunk.len() as f64;
            let probs = crate::tensorkit::sigmoid(&logits);
            for (&p, &t) in probs.data().iter().zip(y.data()) {
                inter += p.as_f64() * t.as_f64();
                total += p.as_f64() + t.as_f64();
            }
        }
        out.history.push(EpochRecord {
            epoch: e + 1,
            lr,
            loss: loss_sum / data.len() as f64,
            soft_dice: (2.0 * inter + super::DICE_EPS) / (total + super::DICE_EPS),
        });

        let last = e + 1 == cfg.epochs;
        let due = cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0;
        if let (Some(dir), true) = (&cfg.checkpoint_dir, last || due) {
            let path = dir.join(format!("epoch-{}.sten", e + 1));
            save_checkpoint(&model.to_checkpoint((e + 1) as u64, cfg.seed), &path)?;
            out.checkpoints.push(path);
        }
    }
    Ok(out)
}

/// Soft dice of un-augmented predictions over the whole dataset.
pub fn dataset_soft_dice<T: Scalar>(model: &Model<T>, data: &[Sample], batch_size: usize) -> Result<f64, TrainError> {
    let (mut inter, mut total) = (0.0, 0.0);
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (x, y) = batch_tensors::<T>(&refs)?;
        let p = model.forward(&x)?;
        for (&p, &t) in p.data().iter().zip(y.data()) {
            inter += p.as_f64() * t.as_f64();
            total += p.as_f64() + t.as_f64();
        }
    }
    Ok((2.0 * inter + super::DICE_EPS) / (total + super::DICE_EPS))
}

/// Plain-text `epoch lr loss soft_dice` table.
pub fn history_table(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch  lr          loss        soft_dice\n");
    for r in history {
        let _ = writeln!(s, "{:<6} {:<11.6e} {:<11.6} {:.6}", r.epoch, r.lr, r.loss, r.soft_dice);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stenunet::ArchConfig;
    use crate::synth::vessel_dataset;

    fn tiny() -> ArchConfig {
        let mut a = ArchConfig::tiny(&[4, 8]);
        a.convs_per_stage = 1;
        a
    }

    #[test]
    fn zero_lr_keeps_params() {
        let data = vessel_dataset(1, 16, 3);
        let mut m = Model::<f32>::build(&tiny(), 1).unwrap();
        let before = m.to_checkpoint(0, 0).params;
        let cfg = TrainConfig {
            epochs: 2,
            lr0: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&mut m, &data, &cfg, &AugmentConfig::default(), &LossWeights::default()).unwrap();
        assert_eq!(out.history.len(), 2);
        assert_eq!(m.to_checkpoint(0, 0).params, before);
    }

    #[test]
    fn same_seed_same_history() {
        let data = vessel_dataset(3, 16, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = Model::<f32>::build(&tiny(), 2).unwrap();
            train(&mut m, &data, &cfg, &AugmentConfig::default(), &LossWeights::default())
                .unwrap()
                .history
        };
        let (a, b) = (run(), run());
        let bits = |h: &[EpochRecord]| h.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = Model::<f32>::build(&tiny(), 1).unwrap();
        let err = train(&mut m, &[], &TrainConfig::default(), &AugmentConfig::default(), &LossWeights::default());
        assert!(matches!(err, Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = vessel_dataset(1, 16, 5);
        let mut m = Model::<f32>::build(&tiny(), 1).unwrap();
        for p in m.params_mut() {
            p.value.fill(f32::NAN);
        }
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let err = train(&mut m, &data, &cfg, &AugmentConfig::disabled(), &LossWeights::default());
        assert!(matches!(err, Err(TrainError::NonFinite { epoch: 1, .. })), "{err:?}");
    }

    #[test]
    fn checkpoints_written_on_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let data = vessel_dataset(1, 16, 6);
        let mut m = Model::<f32>::build(&tiny(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            checkpoint_every: 2,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let out = train(&mut m, &data, &cfg, &AugmentConfig::disabled(), &LossWeights::default()).unwrap();
        let names: Vec<String> = out
            .checkpoints
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["epoch-2.sten", "epoch-3.sten"]);
    }
}
