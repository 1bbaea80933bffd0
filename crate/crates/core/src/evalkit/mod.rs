//! Per-image F1 in pixel and instance modes, dataset reports and timing.

mod timing;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use timing::{time_inference, TimingReport, DEFAULT_BUDGET_SECONDS};

use crate::postseg::{Connectivity, InstanceSet};
use crate::specio::BinaryMask;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{id}: prediction {ph}x{pw} vs ground truth {gh}x{gw}")]
    Dimensions {
        id: String,
        ph: usize,
        pw: usize,
        gh: usize,
        gw: usize,
    },
    #[error("iou threshold must be in (0, 1], got {0}")]
    IouThreshold(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Always 0 in instance mode.
    pub tn: u64,
}

pub fn pixel_confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, EvalError> {
    if !pred.same_dims(gt) {
        return Err(EvalError::Dimensions {
            id: String::new(),
            ph: pred.height(),
            pw: pred.width(),
            gh: gt.height(),
            gw: gt.width(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2 tp / (2 tp + fp + fn)`; an image with nothing predicted and nothing
/// annotated scores 1.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

/// One-to-one matching over an IoU matrix (`iou[pred][gt]`), highest IoU
/// first. Pairs below `iou_threshold`, or with no overlap, never match;
/// equal IoUs are taken in (prediction index, ground-truth index) order.
pub fn greedy_match(iou: &[Vec<f64>], iou_threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, row) in iou.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v > 0.0 && v >= iou_threshold {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let n_gt = iou.iter().map(Vec::len).max().unwrap_or(0);
    let mut pred_used = vec![false; iou.len()];
    let mut gt_used = vec![false; n_gt];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            out.push((i, j));
        }
    }
    out
}

pub fn iou_matrix(pred: &InstanceSet, gt: &InstanceSet) -> Vec<Vec<f64>> {
    pred.instances()
        .iter()
        .map(|p| gt.instances().iter().map(|g| p.iou(g)).collect())
        .collect()
}

/// Instance-level counts from [`greedy_match`]: matches are true positives,
/// unmatched predictions false positives, unmatched references false negatives.
pub fn instance_confusion(pred: &InstanceSet, gt: &InstanceSet, iou_threshold: f64) -> ConfusionCounts {
    let tp = greedy_match(&iou_matrix(pred, gt), iou_threshold).len() as u64;
    ConfusionCounts {
        tp,
        fp: pred.len() as u64 - tp,
        fn_: gt.len() as u64 - tp,
        tn: 0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Pixel,
    #[default]
    Instance,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "instance" => Ok(Self::Instance),
            other => Err(format!("unknown eval mode {other:?} (expected pixel or instance)")),
        }
    }
}

impl std::fmt::Display for EvalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pixel => "pixel",
            Self::Instance => "instance",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub iou_threshold: f64,
    /// Used to split masks into instances.
    pub connectivity: Connectivity,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: EvalMode::Instance,
            iou_threshold: 0.5,
            connectivity: Connectivity::Eight,
        }
    }
}

/// A prediction and its reference for one image.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub pred: BinaryMask,
    pub gt: BinaryMask,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: EvalMode,
    pub fingerprint: String,
    pub mean_f1: f64,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    pub images: Vec<ImageScore>,
}

pub fn score_image(item: &EvalItem, cfg: &EvalConfig) -> Result<ImageScore, EvalError> {
    if !item.pred.same_dims(&item.gt) {
        return Err(EvalError::Dimensions {
            id: item.id.clone(),
            ph: item.pred.height(),
            pw: item.pred.width(),
            gh: item.gt.height(),
            gw: item.gt.width(),
        });
    }
    let counts = match cfg.mode {
        EvalMode::Pixel => pixel_confusion(&item.pred, &item.gt)?,
        EvalMode::Instance => instance_confusion(
            &InstanceSet::from_mask(&item.pred, cfg.connectivity),
            &InstanceSet::from_mask(&item.gt, cfg.connectivity),
            cfg.iou_threshold,
        ),
    };
    Ok(ImageScore {
        id: item.id.clone(),
        f1: f1(&counts),
        counts,
        seconds: item.seconds,
    })
}

/// Scores every image and averages F1 arithmetically. Rows are sorted by id.
pub fn evaluate(items: &[EvalItem], cfg: &EvalConfig, fingerprint: &str) -> Result<Report, EvalError> {
    if !(cfg.iou_threshold > 0.0 && cfg.iou_threshold <= 1.0) {
        return Err(EvalError::IouThreshold(cfg.iou_threshold));
    }
    let mut images = items.iter().map(|it| score_image(it, cfg)).collect::<Result<Vec<_>, _>>()?;
    images.sort_by(|a, b| a.id.cmp(&b.id));
    let n = images.len().max(1) as f64;
    Ok(Report {
        mode: cfg.mode,
        fingerprint: fingerprint.to_string(),
        mean_f1: mean(images.iter().map(|s| s.f1)),
        mean_seconds: images.iter().map(|s| s.seconds).sum::<f64>() / n,
        max_seconds: images.iter().map(|s| s.seconds).fold(0.0, f64::max),
        images,
    })
}

/// Arithmetic mean; 0 for an empty sequence.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table of the per-image rows followed by the aggregates.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mode: {}", self.mode);
        let _ = writeln!(s, "fingerprint: {}", self.fingerprint);
        let _ = writeln!(s, "{:<24} {:>8} {:>8} {:>8} {:>8} {:>10}", "image", "f1", "tp", "fp", "fn", "seconds");
        for r in &self.images {
            let _ = writeln!(
                s,
                "{:<24} {:>8.4} {:>8} {:>8} {:>8} {:>10.3}",
                r.id, r.f1, r.counts.tp, r.counts.fp, r.counts.fn_, r.seconds
            );
        }
        let _ = writeln!(s, "mean f1: {:.4}", self.mean_f1);
        let _ = writeln!(s, "seconds: mean {:.3}, max {:.3}", self.mean_seconds, self.max_seconds);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn: 0 }
    }

    #[test]
    fn f1_spot_values() {
        assert_eq!(f1(&counts(1, 0, 0)), 1.0);
        assert_eq!(f1(&counts(1, 1, 1)), 0.5);
        assert_eq!(f1(&counts(0, 0, 0)), 1.0);
        assert_eq!(f1(&counts(0, 3, 0)), 0.0);
        assert_eq!(f1(&counts(0, 0, 2)), 0.0);
    }

    #[test]
    fn pixel_counts() {
        let gt = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let c = pixel_confusion(&gt, &gt).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 0, 0, 2));
        let empty = BinaryMask::zeros(2, 2).unwrap();
        let c = pixel_confusion(&empty, &gt).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_), (0, 0, 2));
        let full = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        assert_eq!(pixel_confusion(&full, &empty).unwrap().fp, 4);
        assert!(pixel_confusion(&full, &BinaryMask::zeros(2, 3).unwrap()).is_err());
    }

    #[test]
    fn greedy_prefers_higher_iou() {
        // one prediction against two references at IoU 0.6 and 0.55
        let m = greedy_match(&[vec![0.6, 0.55]], 0.5);
        assert_eq!(m, vec![(0, 0)]);
        // ties go to the lower (pred, gt) index pair
        let m = greedy_match(&[vec![0.7, 0.7], vec![0.7, 0.0]], 0.5);
        assert_eq!(m, vec![(0, 0)]);
        assert!(greedy_match(&[vec![0.49]], 0.5).is_empty());
    }

    #[test]
    fn partial_overlap_counts() {
        // pred 0..20 against A = 0..12 (IoU 0.6) and B = 15..35 (IoU 5/35)
        let pred = InstanceSet::from_pixel_lists(1, 64, vec![(0..20).collect()]).unwrap();
        let gt = InstanceSet::from_pixel_lists(1, 64, vec![(0..12).collect(), (15..35).collect()]).unwrap();
        let iou = iou_matrix(&pred, &gt);
        assert!((iou[0][0] - 0.6).abs() < 1e-12);
        let c = instance_confusion(&pred, &gt, 0.5);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 0, 1));
    }

    #[test]
    fn identical_and_disjoint_sets() {
        let a = InstanceSet::from_pixel_lists(4, 4, vec![vec![0, 1], vec![10, 11]]).unwrap();
        let b = InstanceSet::from_pixel_lists(4, 4, vec![vec![4, 5], vec![14], vec![7]]).unwrap();
        let c = instance_confusion(&a, &a, 0.5);
        assert_eq!((c.tp, c.fp, c.fn_), (2, 0, 0));
        let c = instance_confusion(&a, &b, 0.5);
        assert_eq!((c.tp, c.fp, c.fn_), (0, 2, 3));
    }

    #[test]
    fn evaluate_means_and_sorts() {
        let gt = BinaryMask::new(1, 2, vec![1, 0]).unwrap();
        let miss = BinaryMask::new(1, 2, vec![0, 1]).unwrap();
        let items = vec![
            EvalItem {
                id: "b".into(),
                pred: miss,
                gt: gt.clone(),
                seconds: 0.5,
            },
            EvalItem {
                id: "a".into(),
                pred: gt.clone(),
                gt,
                seconds: 0.25,
            },
        ];
        let r = evaluate(&items, &EvalConfig::default(), "abc").unwrap();
        assert_eq!(r.images[0].id, "a");
        assert_eq!(r.mean_f1, 0.5);
        assert_eq!(r.max_seconds, 0.5);
        let back: Report = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.summary().contains("mean f1: 0.5000"));
    }
}
