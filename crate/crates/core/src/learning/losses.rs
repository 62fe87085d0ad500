//! Training losses with analytic gradients with respect to network outputs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grasp_to_control_points, GraspPose, GripperSpec, Mat3, Vec3, NUM_CONTROL_POINTS};
use crate::synthdata::AffordanceLabel;
use crate::tape::Mat;

pub const BCE_EPS: f64 = 1e-7;
pub const DICE_EPS: f64 = 1e-6;

/// Scalar loss with a per-task breakdown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub value: f64,
    pub per_task: BTreeMap<AffordanceLabel, f64>,
}

impl LossReport {
    fn from_terms(per_task: BTreeMap<AffordanceLabel, f64>) -> Self {
        let value = if per_task.is_empty() { 0.0 } else { per_task.values().sum::<f64>() / per_task.len() as f64 };
        Self { value, per_task }
    }
}

/// Which way the nearest-neighbour matching of the implicit loss runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchDirection {
    /// Each prediction is matched to its nearest ground-truth grasp.
    #[default]
    PredictionToTruth,
    /// Each ground-truth grasp is matched to its nearest prediction.
    TruthToPrediction,
}

/// The 7 control points of one grasp.
pub type Points = [Vec3; NUM_CONTROL_POINTS];

pub(crate) fn l1_points(a: &Points, b: &Points) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs().sum()).sum::<f64>() / NUM_CONTROL_POINTS as f64
}

/// Mean over the 7 control points of the L1 distance between them.
pub fn control_point_l1(a: &GraspPose, b: &GraspPose, spec: &GripperSpec) -> f64 {
    l1_points(&grasp_to_control_points(a, spec).0, &grasp_to_control_points(b, spec).0)
}

/// Raw head outputs: an unnormalized quaternion and a view-frame translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawPose {
    pub quat: [f64; 4],
    pub trans: [f64; 3],
}

/// Gradient of a scalar with respect to a [`RawPose`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseGrad {
    pub quat: [f64; 4],
    pub trans: [f64; 3],
}

fn unit_quat(q: [f64; 4]) -> Result<([f64; 4], f64)> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !n.is_finite() || n <= 1e-12 {
        return Err(Error::NonFinite("degenerate quaternion output".into()));
    }
    Ok((q.map(|v| v / n), n))
}

fn rot_of_unit([w, x, y, z]: [f64; 4]) -> Mat3 {
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of the rotation matrix with respect to `(w, x, y, z)`.
fn rot_partials([w, x, y, z]: [f64; 4]) -> [Mat3; 4] {
    let t = 2.0;
    [
        Mat3::new(0.0, -t * z, t * y, t * z, 0.0, -t * x, -t * y, t * x, 0.0),
        Mat3::new(0.0, t * y, t * z, t * y, -2.0 * t * x, -t * w, t * z, t * w, -2.0 * t * x),
        Mat3::new(-2.0 * t * y, t * x, t * w, t * x, 0.0, t * z, -t * w, t * z, -2.0 * t * y),
        Mat3::new(-2.0 * t * z, -t * w, t * x, t * w, -2.0 * t * z, t * y, t * x, t * y, 0.0),
    ]
}

impl RawPose {
    pub fn from_pose(p: &GraspPose) -> Self {
        let t = p.trans();
        Self { quat: p.quat(), trans: [t.x, t.y, t.z] }
    }

    pub fn to_pose(&self) -> Result<GraspPose> {
        GraspPose::new(self.quat, Vec3::new(self.trans[0], self.trans[1], self.trans[2]))
    }

    /// Control points `R p_i + scale * t`, i.e. in metric units relative to the view centroid.
    pub fn metric_points(&self, scale: f64, spec: &GripperSpec) -> Result<Points> {
        let (u, _) = unit_quat(self.quat)?;
        let r = rot_of_unit(u);
        let t = Vec3::new(self.trans[0], self.trans[1], self.trans[2]) * scale;
        Ok(std::array::from_fn(|i| r * spec.point(i) + t))
    }

    /// Back-propagates `d loss / d point_i` to the raw outputs.
    pub fn backprop(&self, scale: f64, spec: &GripperSpec, d_points: &Points) -> Result<PoseGrad> {
        let (u, n) = unit_quat(self.quat)?;
        let mut d_rot = Mat3::zeros();
        let mut d_t = Vec3::zeros();
        for (i, d) in d_points.iter().enumerate() {
            d_rot += d * spec.point(i).transpose();
            d_t += d;
        }
        let partials = rot_partials(u);
        let d_unit: [f64; 4] = std::array::from_fn(|k| partials[k].component_mul(&d_rot).sum());
        // Through q / |q|: (I - u u^T) / |q|.
        let dot: f64 = (0..4).map(|k| d_unit[k] * u[k]).sum();
        let quat = std::array::from_fn(|k| (d_unit[k] - dot * u[k]) / n);
        let trans = [d_t.x * scale, d_t.y * scale, d_t.z * scale];
        Ok(PoseGrad { quat, trans })
    }
}

/// Metric control points of a view-frame pose (relative to the view centroid).
pub fn metric_points(pose: &GraspPose, scale: f64, spec: &GripperSpec) -> Points {
    RawPose::from_pose(pose).metric_points(scale, spec).expect("poses carry unit quaternions")
}

fn l1_grad(a: &Points, b: &Points) -> Points {
    let k = 1.0 / NUM_CONTROL_POINTS as f64;
    std::array::from_fn(|i| (a[i] - b[i]).map(|d| if d == 0.0 { 0.0 } else { d.signum() * k }))
}

/// Control-point distance from a raw output to fixed target points, with its gradient.
pub fn raw_control_point_l1(pred: &RawPose, target: &Points, scale: f64, spec: &GripperSpec) -> Result<(f64, PoseGrad)> {
    let pts = pred.metric_points(scale, spec)?;
    let grad = pred.backprop(scale, spec, &l1_grad(&pts, target))?;
    Ok((l1_points(&pts, target), grad))
}

/// Implicit loss of one task from raw outputs in a view frame with the given
/// metric scale, with gradients for every prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskLoss {
    pub value: f64,
    pub grads: Vec<PoseGrad>,
    /// Whether some nearest-neighbour minimum was attained twice (the loss is
    /// not differentiable there).
    pub tie: bool,
}

/// Index and value of the smallest distance, and whether it was attained twice.
fn nearest(pool: impl Iterator<Item = (usize, f64)>) -> (usize, f64, bool) {
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for (j, d) in pool {
        match best {
            Some((_, bd)) if d > bd => {}
            Some((_, bd)) if d == bd => tied = true,
            _ => {
                best = Some((j, d));
                tied = false;
            }
        }
    }
    let (j, d) = best.expect("pool is nonempty");
    (j, d, tied)
}

pub fn implicit_task_loss(
    predictions: &[RawPose],
    truth: &[Points],
    scale: f64,
    spec: &GripperSpec,
    direction: MatchDirection,
) -> Result<TaskLoss> {
    if truth.is_empty() {
        return Err(Error::InvalidInput("empty ground-truth set for a predicted task".into()));
    }
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions for the task".into()));
    }
    let pred_pts = predictions.iter().map(|p| p.metric_points(scale, spec)).collect::<Result<Vec<_>>>()?;
    let mut d_points: Vec<Points> = vec![[Vec3::zeros(); NUM_CONTROL_POINTS]; predictions.len()];
    let mut tie = false;
    let mut total = 0.0;
    match direction {
        MatchDirection::PredictionToTruth => {
            let w = 1.0 / predictions.len() as f64;
            for (i, p) in pred_pts.iter().enumerate() {
                let (j, d, tied) = nearest(truth.iter().enumerate().map(|(j, g)| (j, l1_points(p, g))));
                tie |= tied;
                total += d * w;
                let g = l1_grad(p, &truth[j]);
                for k in 0..NUM_CONTROL_POINTS {
                    d_points[i][k] += g[k] * w;
                }
            }
        }
        MatchDirection::TruthToPrediction => {
            let w = 1.0 / truth.len() as f64;
            for g in truth {
                let (i, d, tied) = nearest(pred_pts.iter().enumerate().map(|(i, p)| (i, l1_points(p, g))));
                tie |= tied;
                total += d * w;
                let gr = l1_grad(&pred_pts[i], g);
                for k in 0..NUM_CONTROL_POINTS {
                    d_points[i][k] += gr[k] * w;
                }
            }
        }
    }
    let grads = predictions.iter().zip(&d_points).map(|(p, d)| p.backprop(scale, spec, d)).collect::<Result<Vec<_>>>()?;
    Ok(TaskLoss { value: total, grads, tie })
}

/// Multi-task implicit loss on poses sharing one frame: per task, the mean
/// over predictions of the distance to the nearest ground-truth grasp, then
/// the mean over tasks.
pub fn implicit_loss(
    predicted: &BTreeMap<AffordanceLabel, Vec<GraspPose>>,
    gt_sets: &BTreeMap<AffordanceLabel, Vec<GraspPose>>,
    spec: &GripperSpec,
) -> Result<LossReport> {
    implicit_loss_directed(predicted, gt_sets, spec, MatchDirection::PredictionToTruth)
}

pub fn implicit_loss_directed(
    predicted: &BTreeMap<AffordanceLabel, Vec<GraspPose>>,
    gt_sets: &BTreeMap<AffordanceLabel, Vec<GraspPose>>,
    spec: &GripperSpec,
    direction: MatchDirection,
) -> Result<LossReport> {
    let mut per_task = BTreeMap::new();
    for (task, preds) in predicted {
        if preds.is_empty() {
            continue;
        }
        let truth = gt_sets.get(task).filter(|g| !g.is_empty()).ok_or_else(|| {
            Error::InvalidInput(format!("task {task} has predictions but no ground truth"))
        })?;
        let truth: Vec<Points> = truth.iter().map(|g| grasp_to_control_points(g, spec).0).collect();
        let value = match direction {
            MatchDirection::PredictionToTruth => {
                preds
                    .iter()
                    .map(|p| {
                        let cp = grasp_to_control_points(p, spec).0;
                        truth.iter().map(|g| l1_points(&cp, g)).fold(f64::INFINITY, f64::min)
                    })
                    .sum::<f64>()
                    / preds.len() as f64
            }
            MatchDirection::TruthToPrediction => {
                let pred: Vec<Points> = preds.iter().map(|p| grasp_to_control_points(p, spec).0).collect();
                truth.iter().map(|g| pred.iter().map(|p| l1_points(p, g)).fold(f64::INFINITY, f64::min)).sum::<f64>()
                    / truth.len() as f64
            }
        };
        per_task.insert(*task, value);
    }
    Ok(LossReport::from_terms(per_task))
}

/// Binary cross-entropy with the probability clamped to `[eps, 1 - eps]`.
pub fn evaluator_bce(pred: f64, label: f64) -> f64 {
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

/// Derivative of [`evaluator_bce`] with respect to the probability (zero where clamped).
pub fn evaluator_bce_grad(pred: f64, label: f64) -> f64 {
    if pred < BCE_EPS || pred > 1.0 - BCE_EPS {
        return 0.0;
    }
    -label / pred + (1.0 - label) / (1.0 - pred)
}

/// Soft dice loss `1 - (2 sum(p g) + eps) / (sum p + sum g + eps)`.
pub fn dice_loss(pred: &[f64], gt: &[f64]) -> Result<f64> {
    Ok(dice_with_grad(pred, gt)?.0)
}

pub fn dice_with_grad(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidInput(format!("dice inputs differ in length: {} vs {}", pred.len(), gt.len())));
    }
    let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    let denom = pred.iter().sum::<f64>() + gt.iter().sum::<f64>() + DICE_EPS;
    let num = 2.0 * inter + DICE_EPS;
    let grad = gt.iter().map(|g| -(2.0 * g * denom - num) / (denom * denom)).collect();
    Ok((1.0 - num / denom, grad))
}

/// Weighted per-label cross-entropy plus dice, averaged over the rows of
/// `pred` and `gt` (both `labels x points`), with the gradient with respect
/// to `pred`.
pub fn affordance_loss_with_grad(pred: &Mat, gt: &Mat, w1: f64, w2: f64) -> Result<(f64, Vec<f64>, Mat)> {
    if pred.dim() != gt.dim() {
        return Err(Error::InvalidInput(format!("prediction {:?} and ground truth {:?} differ in shape", pred.dim(), gt.dim())));
    }
    if gt.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::InvalidInput("ground-truth scores must lie in [0, 1]".into()));
    }
    let (m, n) = pred.dim();
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput("empty affordance maps".into()));
    }
    let mut grad = Mat::zeros((m, n));
    let mut per_row = Vec::with_capacity(m);
    for r in 0..m {
        let p = pred.row(r).to_vec();
        let g = gt.row(r).to_vec();
        let ce = p.iter().zip(&g).map(|(&p, &g)| evaluator_bce(p, g)).sum::<f64>() / n as f64;
        let (dice, d_dice) = dice_with_grad(&p, &g)?;
        per_row.push(w1 * ce + w2 * dice);
        for c in 0..n {
            grad[[r, c]] = (w1 * evaluator_bce_grad(p[c], g[c]) / n as f64 + w2 * d_dice[c]) / m as f64;
        }
    }
    let value = per_row.iter().sum::<f64>() / m as f64;
    Ok((value, per_row, grad))
}

/// Cross-entropy plus dice loss of a full `M x N` heatmap.
pub fn affordance_loss(pred: &crate::netcore::AffordanceHeatmap, gt: &Mat, w1: f64, w2: f64) -> Result<LossReport> {
    let (_, per_row, _) = affordance_loss_with_grad(&pred.values, gt, w1, w2)?;
    let per_task = per_row
        .into_iter()
        .enumerate()
        .map(|(i, v)| AffordanceLabel::from_code(i).ok_or_else(|| Error::Shape("more rows than labels".into())).map(|l| (l, v)))
        .collect::<Result<_>>()?;
    Ok(LossReport::from_terms(per_task))
}
