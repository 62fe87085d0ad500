//! Training loops for the generator bank, the evaluator, the affordance
//! network and the VAE baseline. Every loop is deterministic given the seed.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::losses::{
    affordance_loss_with_grad, evaluator_bce, evaluator_bce_grad, implicit_task_loss, metric_points, raw_control_point_l1,
    MatchDirection, Points, PoseGrad, RawPose,
};
use super::metrics::metrics_of_rows;
use crate::error::{Error, Result};
use crate::geometry::{random_rotation, GraspPose, GripperSpec, Vec3};
use crate::netcore::encoder::{EncoderConfig, Grouping};
use crate::netcore::evaluator::PreparedInput;
use crate::netcore::vae::kl_divergence;
use crate::netcore::{sample_latent, AffordanceNet, Evaluator, GeneratorBank, VaeBank};
use crate::synthdata::dataset::mix_seed;
use crate::synthdata::{AffordanceLabel, Category, ViewRecord};
use crate::tape::{Adam, Grads, Mat, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Latent draws per view and task for the implicit loss (ground-truth
    /// samples per view and task for the VAE).
    pub imle_samples: usize,
    pub w1: f64,
    pub w2: f64,
    pub include_sentinels: bool,
    pub direction: MatchDirection,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Rotate every view by a fresh uniform rotation each time it is used.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
            imle_samples: 8,
            w1: 0.4,
            w2: 0.6,
            include_sentinels: true,
            direction: MatchDirection::PredictionToTruth,
            max_steps: None,
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.imle_samples == 0 {
            return Err(Error::InvalidInput("epochs, batch size and sample count must be positive".into()));
        }
        if !(self.lr > 0.0 && self.w1 > 0.0 && self.w2 > 0.0) {
            return Err(Error::InvalidInput("step size and loss weights must be positive".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, 0x7472_6169_6e00, stream))
    }

    fn exhausted(&self, steps: usize) -> bool {
        self.max_steps.is_some_and(|m| steps >= m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub metric: Option<f64>,
    /// Mean loss of each task in the step, where the model is per task.
    pub task_losses: BTreeMap<AffordanceLabel, f64>,
}

/// Per-step training log.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    fn push(&mut self, step: usize, epoch: usize, loss: f64, metric: Option<f64>) {
        self.rows.push(TraceRow { step, epoch, loss, metric, task_losses: BTreeMap::new() });
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    /// Mean step loss of each epoch.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for r in &self.rows {
            let e = acc.entry(r.epoch).or_default();
            e.0 += r.loss;
            e.1 += 1;
        }
        acc.values().map(|(s, n)| s / *n as f64).collect()
    }

    /// One line per step: `step,epoch,loss,metric` followed by one loss
    /// column per label (empty where the step had no such task).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,loss,metric");
        for l in AffordanceLabel::ALL {
            write!(out, ",loss_{}", l.name()).expect("writing to a string");
        }
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|m| m.to_string()).unwrap_or_default();
        for r in &self.rows {
            write!(out, "{},{},{},{}", r.step, r.epoch, r.loss, opt(r.metric)).expect("writing to a string");
            for l in AffordanceLabel::ALL {
                write!(out, ",{}", opt(r.task_losses.get(&l).copied())).expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Precomputed neighbourhoods of the training views, or none when every use
/// of a view sees a fresh rotation.
struct GroupingCache<'a> {
    encoder: &'a EncoderConfig,
    cached: Option<BTreeMap<usize, Grouping>>,
}

impl<'a> GroupingCache<'a> {
    fn new(views: &[ViewRecord], by_cat: &BTreeMap<Category, Vec<usize>>, encoder: &'a EncoderConfig, augment: bool) -> Result<Self> {
        let cached = if augment {
            None
        } else {
            Some(by_cat.values().flatten().map(|&i| Ok((i, Grouping::build(&views[i].points, encoder)?))).collect::<Result<_>>()?)
        };
        Ok(Self { encoder, cached })
    }

    fn get(&self, i: usize, view: &ViewRecord) -> Result<Cow<'_, Grouping>> {
        match &self.cached {
            Some(map) => Ok(Cow::Borrowed(&map[&i])),
            None => Ok(Cow::Owned(Grouping::build(&view.points, self.encoder)?)),
        }
    }
}

/// View `i`, randomly rotated about its centroid when augmenting.
fn training_view<'a>(views: &'a [ViewRecord], i: usize, augment: bool, rng: &mut ChaCha8Rng) -> Cow<'a, ViewRecord> {
    if augment {
        Cow::Owned(views[i].rotated(&random_rotation(rng)))
    } else {
        Cow::Borrowed(&views[i])
    }
}

fn shuffled_batches(indices: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx = indices.to_vec();
    idx.shuffle(rng);
    idx.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Category-pure batches of view indices for one epoch, in a seeded order.
fn category_batches(by_cat: &BTreeMap<Category, Vec<usize>>, batch: usize, rng: &mut ChaCha8Rng) -> Vec<(Category, Vec<usize>)> {
    let mut jobs: Vec<(Category, Vec<usize>)> =
        by_cat.iter().flat_map(|(&c, idx)| shuffled_batches(idx, batch, rng).into_iter().map(move |b| (c, b))).collect();
    jobs.shuffle(rng);
    jobs
}

fn group_by_category(views: &[ViewRecord], keep: impl Fn(Category) -> bool) -> BTreeMap<Category, Vec<usize>> {
    let mut by_cat: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
    for (i, v) in views.iter().enumerate() {
        if keep(v.category) {
            by_cat.entry(v.category).or_default().push(i);
        }
    }
    by_cat
}

fn pose_grad_seeds(grads: &[PoseGrad], weight: f64) -> (Mat, Mat) {
    let q = Array2::from_shape_fn((grads.len(), 4), |(b, k)| grads[b].quat[k] * weight);
    let t = Array2::from_shape_fn((grads.len(), 3), |(b, k)| grads[b].trans[k] * weight);
    (q, t)
}

fn raw_rows(q: &Mat, t: &Mat) -> Vec<RawPose> {
    (0..q.nrows())
        .map(|b| RawPose { quat: [q[[b, 0]], q[[b, 1]], q[[b, 2]], q[[b, 3]]], trans: [t[[b, 0]], t[[b, 1]], t[[b, 2]]] })
        .collect()
}

fn check_step(step: usize, loss: f64, grads: &Grads) -> Result<()> {
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence { step, loss });
    }
    Ok(())
}

/// Tasks of a view's category that have ground truth, with their metric control points.
fn view_targets(view: &ViewRecord, labels: &[AffordanceLabel], include_sentinels: bool, spec: &GripperSpec) -> Vec<(AffordanceLabel, Vec<Points>)> {
    labels
        .iter()
        .filter_map(|&task| {
            let gt = view.ground_truth(task, include_sentinels);
            (!gt.is_empty()).then(|| (task, gt.iter().map(|g| metric_points(g, view.scale, spec)).collect()))
        })
        .collect()
}

/// Trains each category's generator with the implicit loss: for every view
/// and task, `imle_samples` latents are pushed through the task stream and
/// each prediction is pulled toward its nearest ground-truth grasp.
/// `spec` is the gripper in metric units.
pub fn train_generator(config: &TrainConfig, views: &[ViewRecord], bank: &mut GeneratorBank, spec: &GripperSpec) -> Result<Trace> {
    config.validate()?;
    let by_cat = group_by_category(views, |c| bank.generators.contains_key(&c));
    if by_cat.is_empty() {
        return Err(Error::InvalidInput("no training view matches a generator category".into()));
    }
    let cache = GroupingCache::new(views, &by_cat, &bank.config.encoder, config.augment)?;
    let mut optimizers: BTreeMap<Category, Adam> = bank.generators.iter().map(|(&c, g)| (c, Adam::new(&g.params, config.lr))).collect();
    let latent_len = bank.config.latent_len;
    let mut rng = config.rng(1);
    let mut trace = Trace::default();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        for (cat, batch) in category_batches(&by_cat, config.batch_size, &mut rng) {
            if config.exhausted(step) {
                break 'epochs;
            }
            let generator = bank.generators.get_mut(&cat).expect("grouped by bank categories");
            let labels = generator.labels();
            let mut targets = Vec::with_capacity(batch.len());
            for &i in &batch {
                let view = training_view(views, i, config.augment, &mut rng);
                let tasks = view_targets(&view, &labels, config.include_sentinels, spec);
                if !tasks.is_empty() {
                    targets.push((cache.get(i, &view)?, view.scale, tasks));
                }
            }
            let mut grads = Grads::new(&generator.params);
            let mut total = 0.0;
            let mut per_task: BTreeMap<AffordanceLabel, (f64, usize)> = BTreeMap::new();
            for (grouping, scale, tasks) in &targets {
                let view_weight = 1.0 / (targets.len() * tasks.len()) as f64;
                for (task, truth) in tasks {
                    let latents = (0..config.imle_samples).map(|_| sample_latent(&mut rng, latent_len)).collect::<Result<Vec<_>>>()?;
                    let mut tape = Tape::new(&generator.params);
                    let (q, t) = generator.forward_raw(&mut tape, *task, grouping, &latents)?;
                    let preds = raw_rows(tape.value(q), tape.value(t));
                    let loss = implicit_task_loss(&preds, truth, *scale, spec, config.direction)?;
                    let (dq, dt) = pose_grad_seeds(&loss.grads, view_weight);
                    tape.backward(&[(q, dq), (t, dt)], &mut grads);
                    total += loss.value * view_weight;
                    let e = per_task.entry(*task).or_default();
                    e.0 += loss.value;
                    e.1 += 1;
                }
            }
            if targets.is_empty() {
                continue;
            }
            check_step(step, total, &grads)?;
            optimizers.get_mut(&cat).expect("one optimizer per category").step(&mut generator.params, &grads);
            trace.push(step, epoch, total, None);
            let row = trace.rows.last_mut().expect("row just pushed");
            row.task_losses = per_task.into_iter().map(|(task, (sum, n))| (task, sum / n as f64)).collect();
            step += 1;
        }
    }
    Ok(trace)
}

/// Oracle-labeled grasps of the given views, split by outcome, as `(view, pose)`.
fn labeled_samples(views: &[ViewRecord]) -> (Vec<(usize, GraspPose)>, Vec<(usize, GraspPose)>) {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (i, v) in views.iter().enumerate() {
        for (pose, success) in v.oracle_labeled() {
            if success { pos.push((i, *pose)) } else { neg.push((i, *pose)) }
        }
    }
    (pos, neg)
}

/// Trains the evaluator with cross-entropy on balanced batches: each step
/// draws half its grasps from the successes and half from the failures.
/// One epoch is enough steps to visit the smaller class twice over.
pub fn train_evaluator(config: &TrainConfig, views: &[ViewRecord], evaluator: &mut Evaluator, spec: &GripperSpec) -> Result<Trace> {
    config.validate()?;
    let (pos, neg) = labeled_samples(views);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput(format!("evaluator training needs both classes ({} successes, {} failures)", pos.len(), neg.len())));
    }
    let half = (config.batch_size / 2).max(1);
    let steps_per_epoch = (2 * pos.len().min(neg.len())).div_ceil(2 * half).max(1);
    let mut adam = Adam::new(&evaluator.params, config.lr);
    let mut rng = config.rng(2);
    let mut trace = Trace::default();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        for _ in 0..steps_per_epoch {
            if config.exhausted(step) {
                break 'epochs;
            }
            let mut batch: Vec<(usize, GraspPose, f64)> = Vec::with_capacity(2 * half);
            for _ in 0..half {
                let (i, p) = pos[rng.gen_range(0..pos.len())];
                batch.push((i, p, 1.0));
                let (i, p) = neg[rng.gen_range(0..neg.len())];
                batch.push((i, p, 0.0));
            }
            let mut prepared = Vec::with_capacity(batch.len());
            for (i, pose, _) in &batch {
                let local_spec = spec.scaled(1.0 / views[*i].scale);
                prepared.push(if config.augment {
                    let r = random_rotation(&mut rng);
                    let points: Vec<_> = views[*i].points.iter().map(|p| r * p).collect();
                    evaluator.prepare_grasp(&points, &pose.transformed(&r, &Vec3::zeros()), &local_spec)?
                } else {
                    evaluator.prepare_grasp(&views[*i].points, pose, &local_spec)?
                });
            }
            let refs: Vec<&PreparedInput> = prepared.iter().collect();
            let mut grads = Grads::new(&evaluator.params);
            let (loss, correct) = {
                let mut tape = Tape::new(&evaluator.params);
                let out = evaluator.forward_prepared(&mut tape, &refs)?;
                let probs = tape.value(out).column(0).to_vec();
                let n = batch.len() as f64;
                let loss = probs.iter().zip(&batch).map(|(&p, b)| evaluator_bce(p, b.2)).sum::<f64>() / n;
                let correct = probs.iter().zip(&batch).filter(|(&p, b)| (p >= 0.5) == (b.2 == 1.0)).count();
                let seed = Array2::from_shape_fn((batch.len(), 1), |(r, _)| evaluator_bce_grad(probs[r], batch[r].2) / n);
                tape.backward(&[(out, seed)], &mut grads);
                (loss, correct)
            };
            check_step(step, loss, &grads)?;
            adam.step(&mut evaluator.params, &grads);
            trace.push(step, epoch, loss, Some(correct as f64 / batch.len() as f64));
            step += 1;
        }
    }
    Ok(trace)
}

/// Binary masks (`labels x N`) of a view's category labels.
pub fn binary_masks(view: &ViewRecord, labels: &[AffordanceLabel]) -> Mat {
    Array2::from_shape_fn((labels.len(), view.n_points()), |(r, c)| (view.mask(labels[r])[c] >= 0.5) as u8 as f64)
}

/// Trains the affordance network with weighted cross-entropy plus dice on
/// the labels each view's category affords. The metric column holds the
/// batch mean AP.
pub fn train_affordance(config: &TrainConfig, views: &[ViewRecord], net: &mut AffordanceNet) -> Result<Trace> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidInput("no training views".into()));
    }
    if net.config.outputs != AffordanceLabel::COUNT {
        return Err(Error::Shape(format!("affordance net has {} outputs, labels need {}", net.config.outputs, AffordanceLabel::COUNT)));
    }
    let all: Vec<usize> = (0..views.len()).collect();
    let mut adam = Adam::new(&net.params, config.lr);
    let mut rng = config.rng(3);
    let mut trace = Trace::default();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        for batch in shuffled_batches(&all, config.batch_size, &mut rng) {
            if config.exhausted(step) {
                break 'epochs;
            }
            let mut grads = Grads::new(&net.params);
            let (mut total, mut aps) = (0.0, Vec::new());
            for &i in &batch {
                let view = training_view(views, i, config.augment, &mut rng);
                let labels = view.category.labels();
                let soft = Array2::from_shape_fn((labels.len(), view.n_points()), |(r, c)| view.mask(labels[r])[c]);
                let mut tape = Tape::new(&net.params);
                let out = net.forward_graph(&mut tape, &view.points)?;
                let probs = tape.value(out);
                let pred = Array2::from_shape_fn(soft.dim(), |(r, c)| probs[[c, labels[r].code()]]);
                let (loss, _, g) = affordance_loss_with_grad(&pred, &soft, config.w1, config.w2)?;
                let w = 1.0 / batch.len() as f64;
                let mut seed = Mat::zeros(probs.dim());
                for (r, l) in labels.iter().enumerate() {
                    for c in 0..view.n_points() {
                        seed[[c, l.code()]] = g[[r, c]] * w;
                    }
                }
                if let Ok(m) = metrics_of_rows(&pred, &binary_masks(&view, &labels)) {
                    aps.push(m.mean_ap);
                }
                tape.backward(&[(out, seed)], &mut grads);
                total += loss * w;
            }
            check_step(step, total, &grads)?;
            adam.step(&mut net.params, &grads);
            let metric = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
            trace.push(step, epoch, total, metric);
            step += 1;
        }
    }
    Ok(trace)
}

/// Trains the VAE baseline: per view and task, `imle_samples` ground-truth
/// grasps are encoded, decoded through the reparameterized latent and scored
/// by the control-point distance plus `beta` times the KL term.
pub fn train_vae(config: &TrainConfig, views: &[ViewRecord], bank: &mut VaeBank, spec: &GripperSpec) -> Result<Trace> {
    config.validate()?;
    let by_cat = group_by_category(views, |c| bank.generators.contains_key(&c));
    if by_cat.is_empty() {
        return Err(Error::InvalidInput("no training view matches a VAE category".into()));
    }
    let cache = GroupingCache::new(views, &by_cat, &bank.config.encoder, config.augment)?;
    let mut optimizers: BTreeMap<Category, Adam> = bank.generators.iter().map(|(&c, g)| (c, Adam::new(&g.params, config.lr))).collect();
    let (latent_len, beta) = (bank.config.latent_len, bank.config.beta);
    let mut rng = config.rng(4);
    let mut trace = Trace::default();
    let mut step = 0;
    'epochs: for epoch in 0..config.epochs {
        for (cat, batch) in category_batches(&by_cat, config.batch_size, &mut rng) {
            if config.exhausted(step) {
                break 'epochs;
            }
            let vae = bank.generators.get_mut(&cat).expect("grouped by bank categories");
            let labels = vae.labels();
            let mut targets = Vec::with_capacity(batch.len());
            for &i in &batch {
                let view = training_view(views, i, config.augment, &mut rng);
                let tasks: Vec<AffordanceLabel> =
                    labels.iter().copied().filter(|&l| !view.ground_truth(l, config.include_sentinels).is_empty()).collect();
                if !tasks.is_empty() {
                    targets.push((cache.get(i, &view)?, view, tasks));
                }
            }
            let mut grads = Grads::new(&vae.params);
            let mut total = 0.0;
            for (grouping, view, tasks) in &targets {
                let local_spec = spec.scaled(1.0 / view.scale);
                for &task in tasks {
                    let gt = view.ground_truth(task, config.include_sentinels);
                    let picks: Vec<GraspPose> = (0..config.imle_samples).map(|_| gt[rng.gen_range(0..gt.len())]).collect();
                    let posteriors = picks.iter().map(|g| vae.prepare_posterior(&view.points, g, &local_spec)).collect::<Result<Vec<_>>>()?;
                    let refs: Vec<&PreparedInput> = posteriors.iter().collect();
                    let eps = Array2::from_shape_simple_fn((picks.len(), latent_len), || rng.sample(StandardNormal));
                    let w = 1.0 / (targets.len() * tasks.len() * picks.len()) as f64;
                    let mut tape = Tape::new(&vae.params);
                    let vars = vae.forward_train(&mut tape, task, grouping, &refs, &eps)?;
                    let preds = raw_rows(tape.value(vars.quat), tape.value(vars.trans));
                    let (mu, logvar) = (tape.value(vars.mu).clone(), tape.value(vars.logvar).clone());
                    let mut pose_grads = Vec::with_capacity(picks.len());
                    let mut dmu = Mat::zeros(mu.dim());
                    let mut dlv = Mat::zeros(logvar.dim());
                    for (b, (pred, target)) in preds.iter().zip(&picks).enumerate() {
                        let (l1, g) = raw_control_point_l1(pred, &metric_points(target, view.scale, spec), view.scale, spec)?;
                        let (kl, gm, gl) = kl_divergence(mu.row(b).as_slice().unwrap(), logvar.row(b).as_slice().unwrap());
                        total += (l1 + beta * kl) * w;
                        pose_grads.push(g);
                        for k in 0..latent_len {
                            dmu[[b, k]] = beta * gm[k] * w;
                            dlv[[b, k]] = beta * gl[k] * w;
                        }
                    }
                    let (dq, dt) = pose_grad_seeds(&pose_grads, w);
                    tape.backward(&[(vars.quat, dq), (vars.trans, dt), (vars.mu, dmu), (vars.logvar, dlv)], &mut grads);
                }
            }
            if targets.is_empty() {
                continue;
            }
            check_step(step, total, &grads)?;
            optimizers.get_mut(&cat).expect("one optimizer per category").step(&mut vae.params, &grads);
            trace.push(step, epoch, total, None);
            step += 1;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{AffordanceConfig, EvaluatorConfig, GeneratorConfig, VaeConfig};
    use crate::synthdata::dataset::make_objects;
    use crate::synthdata::{render_views, DatasetConfig};

    fn tiny_views(categories: &[Category]) -> Vec<ViewRecord> {
        let cfg = DatasetConfig {
            n_points: 64,
            rotations_per_object: 3,
            surface_points: 1024,
            grasps_per_object: 60,
            perturbed_per_object: 20,
            ..DatasetConfig::desk()
        };
        render_views(&make_objects(categories, 1, 0, cfg.surface_points), &cfg).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig { epochs: 2, batch_size: 2, imle_samples: 4, ..TrainConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { w2: f64::NAN, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn batches_are_category_pure_and_cover_every_view() {
        let by_cat: BTreeMap<Category, Vec<usize>> = [(Category::Mug, vec![0, 1, 2, 3, 4]), (Category::Hat, vec![5, 6, 7])].into();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let jobs = category_batches(&by_cat, 2, &mut rng);
        let mut seen: Vec<usize> = Vec::new();
        for (c, b) in &jobs {
            assert!(b.len() <= 2);
            assert!(b.iter().all(|i| by_cat[c].contains(i)));
            seen.extend(b);
        }
        seen.sort();
        assert_eq!(seen, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn csv_has_one_line_per_step() {
        let mut t = Trace::default();
        t.push(0, 0, 0.5, None);
        t.rows[0].task_losses.insert(AffordanceLabel::Wrap, 0.25);
        t.push(1, 1, 0.75, Some(1.0));
        assert_eq!(
            t.to_csv(),
            "step,epoch,loss,metric,loss_grasp,loss_wrap,loss_pour,loss_contain,loss_cut_stab,loss_wear\n\
             0,0,0.5,,,0.25,,,,\n\
             1,1,0.75,1,,,,,,\n"
        );
        assert_eq!(t.epoch_means(), vec![0.5, 0.75]);
    }

    #[test]
    fn generator_training_is_deterministic_and_respects_max_steps() {
        let views = tiny_views(&[Category::Mug]);
        let spec = GripperSpec::default();
        let cfg = TrainConfig { max_steps: Some(3), ..tiny_config() };
        let run = || {
            let mut bank = GeneratorBank::new(&[Category::Mug], &GeneratorConfig::desk(), 0).unwrap();
            let trace = train_generator(&cfg, &views, &mut bank, &spec).unwrap();
            (bank, trace)
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(ta, tb);
        assert_eq!(a.generators[&Category::Mug].params, b.generators[&Category::Mug].params);
        assert_eq!(ta.steps(), 3);
        assert!(ta.rows.iter().all(|r| r.loss.is_finite() && !r.task_losses.is_empty()));
    }

    #[test]
    fn other_loops_run_and_log_every_step() {
        let views = tiny_views(&[Category::Bowl]);
        let spec = GripperSpec::default();
        let cfg = TrainConfig { epochs: 1, max_steps: Some(2), ..tiny_config() };
        let mut ev = Evaluator::new(&EvaluatorConfig::desk(), 0).unwrap();
        let t = train_evaluator(&cfg, &views, &mut ev, &spec).unwrap();
        assert_eq!(t.steps(), 2);
        assert!(t.rows.iter().all(|r| r.metric.is_some_and(|m| (0.0..=1.0).contains(&m))));
        let mut net = AffordanceNet::new(&AffordanceConfig::desk(), 0).unwrap();
        assert!(train_affordance(&cfg, &views, &mut net).unwrap().losses().iter().all(|l| l.is_finite()));
        let mut vae = VaeBank::new(&[Category::Bowl], &VaeConfig::desk(), 0).unwrap();
        assert!(train_vae(&cfg, &views, &mut vae, &spec).unwrap().steps() > 0);
    }

    #[test]
    fn single_class_evaluator_data_is_rejected() {
        let mut views = tiny_views(&[Category::Bowl]);
        for v in &mut views {
            v.grasps.retain(|g| g.success || g.sentinel);
        }
        let mut ev = Evaluator::new(&EvaluatorConfig::desk(), 0).unwrap();
        assert!(train_evaluator(&tiny_config(), &views, &mut ev, &GripperSpec::default()).is_err());
    }

    #[test]
    fn affordance_training_reduces_loss_on_one_view() {
        let views: Vec<ViewRecord> = tiny_views(&[Category::Mug]).into_iter().take(1).collect();
        let cfg = TrainConfig { epochs: 40, lr: 3e-3, ..tiny_config() };
        let mut net = AffordanceNet::new(&AffordanceConfig::desk(), 0).unwrap();
        let losses = train_affordance(&cfg, &views, &mut net).unwrap().losses();
        assert!(losses.last().unwrap() < &(0.8 * losses[0]), "{losses:?}");
    }
}
