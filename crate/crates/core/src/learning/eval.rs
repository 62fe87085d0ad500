//! Dataset-level evaluation: ESM per object and task, evaluator accuracy
//! against oracle labels, and heatmap metrics averaged over views.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{esm, metrics_of_rows};
use super::train::binary_masks;
use crate::error::{Error, Result};
use crate::geometry::{GraspPose, GripperSpec};
use crate::netcore::{sample_latent, AffordanceNet, Evaluator, GeneratorBank, VaeBank};
use crate::synthdata::dataset::mix_seed;
use crate::synthdata::{AffordanceLabel, Category, ViewRecord};

/// Anything that draws task-conditioned grasps (normalized view frame) for a view.
pub trait GraspSampler {
    fn supports(&self, category: Category, task: AffordanceLabel) -> bool;
    fn sample_grasps(&self, view: &ViewRecord, task: AffordanceLabel, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GraspPose>>;
}

impl GraspSampler for GeneratorBank {
    fn supports(&self, category: Category, task: AffordanceLabel) -> bool {
        self.generators.get(&category).is_some_and(|g| g.labels().contains(&task))
    }

    fn sample_grasps(&self, view: &ViewRecord, task: AffordanceLabel, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GraspPose>> {
        let g = self.get(view.category)?;
        let latents = (0..count).map(|_| sample_latent(rng, g.config.latent_len)).collect::<Result<Vec<_>>>()?;
        g.generate(&view.points, &latents, task)
    }
}

impl GraspSampler for VaeBank {
    fn supports(&self, category: Category, task: AffordanceLabel) -> bool {
        self.generators.get(&category).is_some_and(|g| g.labels().contains(&task))
    }

    fn sample_grasps(&self, view: &ViewRecord, task: AffordanceLabel, count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<GraspPose>> {
        self.get(view.category)?.generate(&view.points, count, task, rng)
    }
}

/// Stable 64-bit key of a view.
pub fn view_key(view: &ViewRecord) -> u64 {
    // FNV-1a over the object id, then the view index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in view.object_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    mix_seed(h, view.view_id as u64, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EsmEntry {
    pub object_id: String,
    pub category: Category,
    pub task: AffordanceLabel,
    /// Views that contributed.
    pub views: usize,
    pub esm: f64,
}

/// ESM per object and task: for every view and task with real (non-sentinel)
/// ground truth, `n_pred` grasps are sampled and compared in metric units;
/// the per-view values are then averaged per object.
pub fn esm_by_object<S: GraspSampler>(sampler: &S, views: &[ViewRecord], spec: &GripperSpec, n_pred: usize, seed: u64) -> Result<Vec<EsmEntry>> {
    let mut acc: BTreeMap<(String, AffordanceLabel), (Category, f64, usize)> = BTreeMap::new();
    for view in views {
        for task in view.category.labels() {
            let gt = view.ground_truth(task, false);
            if gt.is_empty() || !sampler.supports(view.category, task) {
                continue;
            }
            let key = mix_seed(seed, view_key(view), task.code() as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let preds: Vec<GraspPose> = sampler.sample_grasps(view, task, n_pred, &mut rng)?.iter().map(|p| view.to_metric(p)).collect();
            let gt: Vec<GraspPose> = gt.iter().map(|g| view.to_metric(g)).collect();
            let r = esm(&preds, &gt, spec, key)?;
            let e = acc.entry((view.object_id.clone(), task)).or_insert((view.category, 0.0, 0));
            e.1 += r.value;
            e.2 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|((object_id, task), (category, sum, n))| EsmEntry { object_id, category, task, views: n, esm: sum / n as f64 })
        .collect())
}

/// Mean ESM over entries.
pub fn mean_esm(entries: &[EsmEntry]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::MetricUndefined("no object has ground truth for any task".into()));
    }
    Ok(entries.iter().map(|e| e.esm).sum::<f64>() / entries.len() as f64)
}

/// Fraction of oracle-labeled grasps whose evaluator score falls on the
/// oracle's side of 0.5, using at most `per_view` grasps of each view.
pub fn evaluator_accuracy(evaluator: &Evaluator, views: &[ViewRecord], spec: &GripperSpec, per_view: Option<usize>, seed: u64) -> Result<f64> {
    let (mut correct, mut total) = (0usize, 0usize);
    for view in views {
        let mut labeled: Vec<(GraspPose, bool)> = view.oracle_labeled().map(|(p, s)| (*p, s)).collect();
        if let Some(cap) = per_view {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, view_key(view), 0x6576));
            labeled.shuffle(&mut rng);
            labeled.truncate(cap);
        }
        if labeled.is_empty() {
            continue;
        }
        let poses: Vec<GraspPose> = labeled.iter().map(|(p, _)| *p).collect();
        let scores = evaluator.score(&view.points, &poses, &spec.scaled(1.0 / view.scale))?;
        correct += scores.iter().zip(&labeled).filter(|(&s, (_, ok))| (s >= 0.5) == *ok).count();
        total += labeled.len();
    }
    if total == 0 {
        return Err(Error::MetricUndefined("no oracle-labeled grasps".into()));
    }
    Ok(correct as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSummary {
    pub ap: f64,
    pub auc: f64,
    pub iou: f64,
    /// Views with at least one positive point.
    pub views: usize,
}

/// AP, AUC and IoU of the predicted heatmaps against binarized masks of the
/// category's labels, averaged over views.
pub fn heatmap_summary(net: &AffordanceNet, views: &[ViewRecord]) -> Result<HeatmapSummary> {
    let (mut ap, mut auc, mut iou, mut n, mut n_auc) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for view in views {
        let labels = view.category.labels();
        let heat = net.forward(&view.points)?;
        let pred = ndarray::Array2::from_shape_fn((labels.len(), view.n_points()), |(r, c)| heat.values[[labels[r].code(), c]]);
        match metrics_of_rows(&pred, &binary_masks(view, &labels)) {
            Ok(m) => {
                ap += m.mean_ap;
                iou += m.mean_iou;
                if m.mean_auc.is_finite() {
                    auc += m.mean_auc;
                    n_auc += 1;
                }
                n += 1;
            }
            Err(Error::MetricUndefined(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if n == 0 {
        return Err(Error::MetricUndefined("no view has a positive affordance point".into()));
    }
    let auc = if n_auc == 0 { f64::NAN } else { auc / n_auc as f64 };
    Ok(HeatmapSummary { ap: ap / n as f64, auc, iou: iou / n as f64, views: n })
}
