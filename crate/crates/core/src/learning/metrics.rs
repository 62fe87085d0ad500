//! Evaluation metrics: the expected similarity metric (ESM) between
//! predicted and ground-truth grasp sets, and AP / AUC / IoU of heatmaps.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{l1_points, Points};
use crate::error::{Error, Result};
use crate::geometry::{grasp_to_control_points, GraspPose, GripperSpec};
use crate::netcore::AffordanceHeatmap;
use crate::tape::Mat;

/// Predictions kept by [`esm`].
pub const ESM_SAMPLES: usize = 100;

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsmResult {
    pub value: f64,
    pub n_pred: usize,
    /// Distance from each kept prediction to its nearest ground-truth grasp.
    pub minima: Vec<f64>,
}

/// Mean over (up to 100) predictions of the control-point distance to the
/// nearest ground-truth grasp. Larger prediction sets are subsampled
/// uniformly with `seed`.
pub fn esm(predicted: &[GraspPose], gt: &[GraspPose], spec: &GripperSpec, seed: u64) -> Result<EsmResult> {
    if predicted.is_empty() || gt.is_empty() {
        return Err(Error::InvalidInput("ESM needs nonempty prediction and ground-truth sets".into()));
    }
    let kept: Vec<&GraspPose> = if predicted.len() > ESM_SAMPLES {
        // Canonical order first, so the subsample does not depend on input order.
        let mut sorted: Vec<&GraspPose> = predicted.iter().collect();
        sorted.sort_by(|a, b| {
            a.to_array().iter().zip(b.to_array().iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sorted.choose_multiple(&mut rng, ESM_SAMPLES).copied().collect()
    } else {
        predicted.iter().collect()
    };
    let gt_points: Vec<Points> = gt.iter().map(|g| grasp_to_control_points(g, spec).0).collect();
    let minima: Vec<f64> = kept
        .iter()
        .map(|p| {
            let cp = grasp_to_control_points(p, spec).0;
            gt_points.iter().map(|g| l1_points(&cp, g)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let value = minima.iter().sum::<f64>() / minima.len() as f64;
    Ok(EsmResult { value, n_pred: minima.len(), minima })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub ap: f64,
    /// `None` when the label has no negative points.
    pub auc: Option<f64>,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffordanceMetrics {
    /// `None` for labels without positive points.
    pub per_label: Vec<Option<LabelMetrics>>,
    pub mean_ap: f64,
    pub mean_auc: f64,
    pub mean_iou: f64,
}

/// Average precision as the sum over distinct score thresholds of
/// `(recall step) * precision`.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
        prev_recall = recall;
    }
    ap
}

/// Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of average ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += avg_rank * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

pub fn iou_at(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let p = s >= threshold;
        inter += (p && l) as usize;
        union += (p || l) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per-label AP, AUC and IoU of a heatmap against a binary `M x N` mask,
/// plus their means over labels that have positives.
pub fn affordance_metrics(pred: &AffordanceHeatmap, gt: &Mat) -> Result<AffordanceMetrics> {
    metrics_of_rows(&pred.values, gt)
}

pub fn metrics_of_rows(pred: &Mat, gt: &Mat) -> Result<AffordanceMetrics> {
    if pred.dim() != gt.dim() {
        return Err(Error::InvalidInput(format!("prediction {:?} and ground truth {:?} differ in shape", pred.dim(), gt.dim())));
    }
    if gt.iter().any(|&g| g != 0.0 && g != 1.0) {
        return Err(Error::InvalidInput("metric ground truth must be binary".into()));
    }
    let mut per_label = Vec::with_capacity(gt.nrows());
    let (mut aps, mut aucs, mut ious) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..gt.nrows() {
        let labels: Vec<bool> = gt.row(r).iter().map(|&g| g == 1.0).collect();
        if !labels.contains(&true) {
            per_label.push(None);
            continue;
        }
        let scores = pred.row(r).to_vec();
        let m = LabelMetrics {
            ap: average_precision(&scores, &labels),
            auc: roc_auc(&scores, &labels),
            iou: iou_at(&scores, &labels, IOU_THRESHOLD),
        };
        aps.push(m.ap);
        aucs.extend(m.auc);
        ious.push(m.iou);
        per_label.push(Some(m));
    }
    if aps.is_empty() {
        return Err(Error::MetricUndefined("no label has a positive point".into()));
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(AffordanceMetrics { mean_ap: mean(&aps), mean_auc: mean(&aucs), mean_iou: mean(&ious), per_label })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use proptest::prelude::*;

    fn shifted(x: f64) -> GraspPose {
        GraspPose::from_translation(Vec3::new(x, 0.0, 0.0))
    }

    #[test]
    fn esm_examples() {
        let spec = GripperSpec::default();
        let gt = vec![shifted(0.0), shifted(1.0)];
        assert_eq!(esm(&gt[..1], &gt, &spec, 0).unwrap().value, 0.0);
        let r = esm(&[shifted(0.1), shifted(1.3)], &gt, &spec, 0).unwrap();
        assert!((r.value - 0.2).abs() < 1e-12);
        assert_eq!(r.n_pred, 2);
        assert!(esm(&[], &gt, &spec, 0).is_err());
        assert!(esm(&gt, &[], &spec, 0).is_err());
    }

    #[test]
    fn esm_subsamples_to_one_hundred() {
        let spec = GripperSpec::default();
        let preds: Vec<GraspPose> = (0..250).map(|i| shifted(i as f64 * 1e-3)).collect();
        let a = esm(&preds, &[shifted(0.0)], &spec, 9).unwrap();
        assert_eq!(a.n_pred, 100);
        assert_eq!(a, esm(&preds, &[shifted(0.0)], &spec, 9).unwrap());
    }

    /// Brute-force oracles: AUC by enumerating positive/negative pairs and AP
    /// by walking the ranking one distinct threshold at a time.
    fn pair_auc(s: &[f64], l: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    fn threshold_ap(s: &[f64], l: &[bool]) -> f64 {
        let mut th: Vec<f64> = s.to_vec();
        th.sort_by(|a, b| b.total_cmp(a));
        th.dedup();
        let pos = l.iter().filter(|&&x| x).count() as f64;
        let (mut ap, mut prev) = (0.0, 0.0);
        for t in th {
            let sel: Vec<bool> = s.iter().zip(l).filter(|(&x, _)| x >= t).map(|(_, &y)| y).collect();
            let tp = sel.iter().filter(|&&y| y).count() as f64;
            let recall = tp / pos;
            ap += (recall - prev) * tp / sel.len() as f64;
            prev = recall;
        }
        ap
    }

    #[test]
    fn four_point_example_matches_brute_force() {
        let s = [0.9, 0.8, 0.2, 0.1];
        let l = [true, false, true, false];
        // Oracle values frozen from the enumerations above.
        assert_eq!(pair_auc(&s, &l), 0.75);
        assert!((threshold_ap(&s, &l) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(roc_auc(&s, &l), Some(0.75));
        assert!((average_precision(&s, &l) - 5.0 / 6.0).abs() < 1e-15);
        assert!((iou_at(&s, &l, 0.5) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let gt = Mat::from_shape_fn((2, 10), |(r, c)| ((c + r) % 3 == 0) as u8 as f64);
        let m = metrics_of_rows(&gt, &gt).unwrap();
        assert_eq!((m.mean_ap, m.mean_auc, m.mean_iou), (1.0, 1.0, 1.0));
        let flat = Mat::from_elem((2, 10), 0.5);
        assert_eq!(metrics_of_rows(&flat, &gt).unwrap().mean_auc, 0.5);
    }

    #[test]
    fn label_skipping_and_undefined() {
        let mut gt = Mat::zeros((3, 4));
        gt[[1, 2]] = 1.0;
        let pred = Mat::from_elem((3, 4), 0.3);
        let m = metrics_of_rows(&pred, &gt).unwrap();
        assert!(m.per_label[0].is_none() && m.per_label[2].is_none());
        assert!(m.per_label[1].is_some());
        assert!(matches!(metrics_of_rows(&pred, &Mat::zeros((3, 4))), Err(Error::MetricUndefined(_))));
        assert!(metrics_of_rows(&pred, &Mat::zeros((2, 4))).is_err());
    }

    proptest! {
        #[test]
        fn rank_metrics_match_oracles_and_monotone_transforms(
            raw in prop::collection::vec((0u8..6, any::<bool>()), 2..30),
        ) {
            let s: Vec<f64> = raw.iter().map(|(v, _)| *v as f64 / 5.0).collect();
            let l: Vec<bool> = raw.iter().map(|(_, b)| *b).collect();
            prop_assume!(l.contains(&true) && l.contains(&false));
            let auc = roc_auc(&s, &l).unwrap();
            prop_assert!((auc - pair_auc(&s, &l)).abs() < 1e-12);
            prop_assert!((average_precision(&s, &l) - threshold_ap(&s, &l)).abs() < 1e-12);
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert!((roc_auc(&t, &l).unwrap() - auc).abs() < 1e-12);
            prop_assert!((average_precision(&t, &l) - average_precision(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn esm_is_order_invariant_and_monotone_in_gt(
            p in prop::collection::vec(-1.0f64..1.0, 1..8),
            g in prop::collection::vec(-1.0f64..1.0, 1..8),
            extra in -1.0f64..1.0,
        ) {
            let spec = GripperSpec::default();
            let preds: Vec<GraspPose> = p.iter().map(|&x| shifted(x)).collect();
            let gts: Vec<GraspPose> = g.iter().map(|&x| shifted(x)).collect();
            let base = esm(&preds, &gts, &spec, 1).unwrap().value;
            let rp: Vec<GraspPose> = preds.iter().rev().copied().collect();
            let rg: Vec<GraspPose> = gts.iter().rev().copied().collect();
            prop_assert!((esm(&rp, &rg, &spec, 1).unwrap().value - base).abs() < 1e-12);
            let mut more = gts.clone();
            more.push(shifted(extra));
            prop_assert!(esm(&preds, &more, &spec, 1).unwrap().value <= base + 1e-15);
        }
    }
}
