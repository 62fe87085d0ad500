//! The six commands. Each returns a structured result; `main` prints it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use affgrasp_core::fusion::{generate_fine_candidates, top_affordance_points, CandidateRecord, FineResult};
use affgrasp_core::geometry::{normalize_cloud, GripperSpec, PointCloud, Vec3};
use affgrasp_core::learning::{
    esm_by_object, evaluator_accuracy, heatmap_summary, mean_esm, train_affordance, train_evaluator, train_generator, train_vae, EsmEntry,
    HeatmapSummary, Trace,
};
use affgrasp_core::netcore::{AffordanceConfig, AffordanceNet, Checkpoint, Evaluator, GeneratorBank, GeneratorConfig, VaeBank};
use affgrasp_core::synthdata::dataset::make_objects;
use affgrasp_core::synthdata::{load_dataset, render_dataset, AffordanceLabel, Category, ViewRecord};
use affgrasp_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, NOVEL_SEED_BASE};
use crate::ply::render_ply;
use crate::report::{self, AblationRow, SummaryRow};
use crate::CliError;

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Seed encoded in an object id (`<category>_<seed>`).
pub fn object_seed(object_id: &str) -> Option<u64> {
    object_id.rsplit('_').next()?.parse().ok()
}

pub fn is_novel(view: &ViewRecord) -> bool {
    object_seed(&view.object_id).is_some_and(|s| s >= NOVEL_SEED_BASE)
}

/// Training views, held-out rotations of the training objects, and views
/// of novel objects.
#[derive(Clone, Debug, Default)]
pub struct Splits {
    pub train: Vec<ViewRecord>,
    pub held_out: Vec<ViewRecord>,
    pub novel: Vec<ViewRecord>,
}

pub fn split_views(views: Vec<ViewRecord>, categories: &[Category], rotations: usize, holdout: usize) -> Splits {
    let mut s = Splits::default();
    let first_held = rotations.saturating_sub(holdout);
    for v in views.into_iter().filter(|v| categories.contains(&v.category)) {
        if is_novel(&v) {
            s.novel.push(v);
        } else if v.view_id >= first_held {
            s.held_out.push(v);
        } else {
            s.train.push(v);
        }
    }
    s
}

fn manifest_path(cfg: &RunConfig) -> PathBuf {
    cfg.data_dir.join("manifest.json")
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let path = manifest_path(cfg);
    if !path.is_file() {
        return Err(CliError::MissingArtifact(format!("dataset manifest {} (run gen-data first)", path.display())));
    }
    let reader = load_dataset(&path)?;
    let rotations = reader.manifest().config.rotations_per_object;
    if cfg.holdout_views >= rotations {
        return Err(CliError::Config(format!("holdout_views {} leaves no training view of {rotations}", cfg.holdout_views)));
    }
    Ok(split_views(reader.load_all()?, &cfg.categories, rotations, cfg.holdout_views))
}

#[derive(Clone, Debug, Serialize)]
pub struct GenDataOutput {
    pub rows: Vec<SummaryRow>,
    pub views: usize,
    pub manifest_sha256: String,
}

impl GenDataOutput {
    pub fn render(&self) -> String {
        format!("{}\n{} view records, manifest sha256 {}\n", report::summary_table(&self.rows), self.views, self.manifest_sha256)
    }
}

/// Renders the existing and novel objects into `data_dir`.
pub fn gen_data(cfg: &RunConfig) -> Result<GenDataOutput, CliError> {
    let dcfg = cfg.dataset_config();
    let mut objects = make_objects(&cfg.categories, cfg.objects_per_category, 0, dcfg.surface_points);
    objects.extend(make_objects(&cfg.categories, cfg.novel_per_category, NOVEL_SEED_BASE, dcfg.surface_points));
    let manifest = render_dataset(&objects, &dcfg, &cfg.data_dir)?;
    let path = manifest_path(cfg);
    let bytes = fs::read(&path).map_err(|e| io_error(&path, e))?;
    let rows = cfg
        .categories
        .iter()
        .map(|&c| SummaryRow {
            category: c,
            affordances: c.labels(),
            objects: objects.iter().filter(|o| o.category == c).count(),
            views: manifest.records.iter().filter(|r| r.category == c).count(),
        })
        .collect();
    Ok(GenDataOutput { rows, views: manifest.records.len(), manifest_sha256: hex::encode(Sha256::digest(&bytes)) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Generator,
    Evaluator,
    Affordance,
    VaeBaseline,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Generator => "generator",
            Model::Evaluator => "evaluator",
            Model::Affordance => "affordance",
            Model::VaeBaseline => "vae-baseline",
        }
    }

    pub fn checkpoint_path(self, cfg: &RunConfig) -> PathBuf {
        cfg.checkpoint_dir().join(format!("{}.ckpt", self.name()))
    }

    pub fn trace_path(self, cfg: &RunConfig) -> PathBuf {
        cfg.trace_dir().join(format!("{}.csv", self.name()))
    }
}

pub fn load_checkpoint(cfg: &RunConfig, model: Model) -> Result<Checkpoint, CliError> {
    let path = model.checkpoint_path(cfg);
    if !path.is_file() {
        return Err(CliError::MissingArtifact(format!("{} checkpoint {} (run `train {}` first)", model.name(), path.display(), model.name())));
    }
    Ok(Checkpoint::load(&path)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutput {
    pub model: Model,
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
}

impl TrainOutput {
    pub fn render(&self) -> String {
        let first = self.epoch_losses.first().copied().unwrap_or(f64::NAN);
        let last = self.epoch_losses.last().copied().unwrap_or(f64::NAN);
        format!(
            "{}: {} steps, epoch loss {first:.5} -> {last:.5}\ncheckpoint {}\ntrace {}\n",
            self.model.name(),
            self.steps,
            self.checkpoint.display(),
            self.trace.display()
        )
    }
}

fn train_generator_bank(cfg: &RunConfig, gcfg: &GeneratorConfig, views: &[ViewRecord]) -> Result<(GeneratorBank, Trace), CliError> {
    let mut bank = GeneratorBank::new(&cfg.categories, gcfg, cfg.seed)?;
    let trace = train_generator(&cfg.train_config(), views, &mut bank, &GripperSpec::default())?;
    Ok((bank, trace))
}

fn train_affordance_net(cfg: &RunConfig, acfg: &AffordanceConfig, views: &[ViewRecord]) -> Result<(AffordanceNet, Trace), CliError> {
    let mut net = AffordanceNet::new(acfg, cfg.seed)?;
    let trace = train_affordance(&cfg.train_config(), views, &mut net)?;
    Ok((net, trace))
}

/// Trains one model on the training split and writes its checkpoint and
/// per-step trace.
pub fn train(cfg: &RunConfig, model: Model) -> Result<TrainOutput, CliError> {
    let splits = load_splits(cfg)?;
    if splits.train.is_empty() {
        return Err(CliError::MissingArtifact(format!("no training views for {:?} in {}", cfg.categories, cfg.data_dir.display())));
    }
    let spec = GripperSpec::default();
    let tc = cfg.train_config();
    let (ckpt, trace) = match model {
        Model::Generator => {
            let (bank, trace) = train_generator_bank(cfg, &cfg.generator, &splits.train)?;
            (bank.to_checkpoint(), trace)
        }
        Model::Evaluator => {
            let mut ev = Evaluator::new(&cfg.evaluator, cfg.seed)?;
            let trace = train_evaluator(&tc, &splits.train, &mut ev, &spec)?;
            (ev.to_checkpoint(), trace)
        }
        Model::Affordance => {
            let (net, trace) = train_affordance_net(cfg, &cfg.affordance, &splits.train)?;
            (net.to_checkpoint(), trace)
        }
        Model::VaeBaseline => {
            let mut bank = VaeBank::new(&cfg.categories, &cfg.vae, cfg.seed)?;
            let trace = train_vae(&tc, &splits.train, &mut bank, &spec)?;
            (bank.to_checkpoint(), trace)
        }
    };
    let checkpoint = model.checkpoint_path(cfg);
    if let Some(dir) = checkpoint.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    ckpt.save(&checkpoint)?;
    let trace_path = model.trace_path(cfg);
    trace.write_csv(&trace_path)?;
    Ok(TrainOutput { model, steps: trace.steps(), epoch_losses: trace.epoch_means(), checkpoint, trace: trace_path })
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalOutput {
    pub existing: Vec<EsmEntry>,
    pub novel: Vec<EsmEntry>,
    pub vae_existing: Option<Vec<EsmEntry>>,
    pub vae_novel: Option<Vec<EsmEntry>>,
    pub affordance: Option<HeatmapSummary>,
    pub evaluator_accuracy: Option<f64>,
    #[serde(skip)]
    pub categories: Vec<Category>,
}

impl EvalOutput {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "ESM on existing objects (held-out views)\n{}", report::esm_table(&self.existing)).unwrap();
        if !self.novel.is_empty() {
            writeln!(out, "ESM on novel objects\n{}", report::esm_table(&self.novel)).unwrap();
        }
        let ien: Vec<EsmEntry> = self.existing.iter().chain(&self.novel).cloned().collect();
        let vae: Option<Vec<EsmEntry>> =
            self.vae_existing.as_ref().map(|e| e.iter().chain(self.vae_novel.iter().flatten()).cloned().collect());
        let mut methods: Vec<(&str, &[EsmEntry])> = vec![("IEN", &ien)];
        if let Some(v) = &vae {
            methods.push(("VAE", v));
        }
        writeln!(out, "Generator comparison (mean ESM)\n{}", report::comparison_table(&methods, &self.categories)).unwrap();
        if let Some(m) = &self.affordance {
            let row = vec!["full".to_string(), format!("{:.4}", m.ap), format!("{:.4}", m.auc), format!("{:.4}", m.iou)];
            writeln!(out, "Affordance heatmaps (held-out views)\n{}", report::table(&["Model", "AP", "AUC", "IoU"], &[row])).unwrap();
        }
        if let Some(a) = self.evaluator_accuracy {
            writeln!(out, "Evaluator accuracy against oracle labels (held-out views): {a:.4}").unwrap();
        }
        out
    }
}

fn optional_checkpoint(cfg: &RunConfig, model: Model) -> Result<Option<Checkpoint>, CliError> {
    match load_checkpoint(cfg, model) {
        Ok(c) => Ok(Some(c)),
        Err(CliError::MissingArtifact(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// ESM tables for the generator (required) and the VAE baseline, heatmap
/// metrics and evaluator accuracy when those checkpoints exist.
pub fn eval(cfg: &RunConfig) -> Result<EvalOutput, CliError> {
    let bank = GeneratorBank::from_checkpoint(&load_checkpoint(cfg, Model::Generator)?)?;
    let splits = load_splits(cfg)?;
    let spec = GripperSpec::default();
    let existing = esm_by_object(&bank, &splits.held_out, &spec, cfg.esm_samples, cfg.seed)?;
    let novel = esm_by_object(&bank, &splits.novel, &spec, cfg.esm_samples, cfg.seed)?;
    let (vae_existing, vae_novel) = match optional_checkpoint(cfg, Model::VaeBaseline)? {
        Some(c) => {
            let vae = VaeBank::from_checkpoint(&c)?;
            let run = |v: &[ViewRecord]| esm_by_object(&vae, v, &spec, cfg.esm_samples, cfg.seed);
            (Some(run(&splits.held_out)?), Some(run(&splits.novel)?))
        }
        None => (None, None),
    };
    let affordance = match optional_checkpoint(cfg, Model::Affordance)? {
        Some(c) if !splits.held_out.is_empty() => Some(heatmap_summary(&AffordanceNet::from_checkpoint(&c)?, &splits.held_out)?),
        _ => None,
    };
    let evaluator_accuracy = match optional_checkpoint(cfg, Model::Evaluator)? {
        Some(c) if !splits.held_out.is_empty() => Some(evaluator_accuracy(&Evaluator::from_checkpoint(&c)?, &splits.held_out, &spec, None, cfg.seed)?),
        _ => None,
    };
    let out = EvalOutput { existing, novel, vae_existing, vae_novel, affordance, evaluator_accuracy, categories: cfg.categories.clone() };
    write_text(&cfg.report_dir().join("eval.txt"), &out.render())?;
    let json = serde_json::to_string_pretty(&out).map_err(|e| CliError::Core(Error::Json { path: cfg.report_dir().join("eval.json"), source: e }))?;
    write_text(&cfg.report_dir().join("eval.json"), &json)?;
    Ok(out)
}

fn require_held_out(splits: &Splits) -> Result<(), CliError> {
    if splits.held_out.is_empty() || splits.train.is_empty() {
        return Err(CliError::Config("needs training and held-out views (holdout_views >= 1)".into()));
    }
    Ok(())
}

/// Trains one generator per latent length and reports held-out ESM.
pub fn sweep_latent(cfg: &RunConfig, lengths: &[usize]) -> Result<Vec<(usize, f64)>, CliError> {
    let splits = load_splits(cfg)?;
    require_held_out(&splits)?;
    let spec = GripperSpec::default();
    let mut rows = Vec::with_capacity(lengths.len());
    for &l in lengths {
        if l == 0 {
            return Err(CliError::Config("latent lengths must be positive".into()));
        }
        let gcfg = GeneratorConfig { latent_len: l, ..cfg.generator.clone() };
        let (bank, _) = train_generator_bank(cfg, &gcfg, &splits.train)?;
        rows.push((l, mean_esm(&esm_by_object(&bank, &splits.held_out, &spec, cfg.esm_samples, cfg.seed)?)?));
    }
    write_text(&cfg.report_dir().join("sweep_latent.csv"), &report::sweep_csv(&rows))?;
    Ok(rows)
}

/// Branch toggles of the ablation, in report order: each branch dropped in
/// turn, then the full model.
pub const ABLATIONS: [(bool, bool, bool); 4] = [(false, true, true), (true, false, true), (true, true, false), (true, true, true)];

pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>, CliError> {
    let splits = load_splits(cfg)?;
    require_held_out(&splits)?;
    let mut rows = Vec::with_capacity(ABLATIONS.len());
    for (point, edge, mhsa) in ABLATIONS {
        let acfg = AffordanceConfig { use_point: point, use_edge: edge, use_attention: mhsa, ..cfg.affordance.clone() };
        let (net, _) = train_affordance_net(cfg, &acfg, &splits.train)?;
        rows.push(AblationRow { point, edge, mhsa, metrics: heatmap_summary(&net, &splits.held_out)? });
    }
    write_text(&cfg.report_dir().join("ablation.csv"), &report::ablation_csv(&rows))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ViewSource {
    /// A view of the rendered dataset.
    Dataset { object_id: String, view_id: usize },
    /// An ASCII file of `x y z` lines in metres; `#` starts a comment.
    Cloud { path: PathBuf, category: Category },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferRequest {
    pub source: ViewSource,
    pub task: AffordanceLabel,
    /// Defaults to `<out_dir>/candidates.json`.
    pub output: Option<PathBuf>,
    pub export_viz: Option<PathBuf>,
}

/// Candidate file contents. Poses and `S_V` are in the normalized frame of
/// the view (centred on `centroid`, divided by `scale`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferOutput {
    pub source: String,
    pub category: Category,
    pub task: AffordanceLabel,
    pub seed: u64,
    pub centroid: [f64; 3],
    pub scale: f64,
    pub coarse_only: bool,
    pub generated: usize,
    pub survivors: usize,
    pub region_size: usize,
    pub candidates: Vec<CandidateRecord>,
}

pub fn read_xyz(path: &Path) -> Result<PointCloud, CliError> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::MissingArtifact(format!("cloud file {}", path.display())),
        _ => io_error(path, e),
    })?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if v.len() != 3 {
            return Err(CliError::Config(format!("{}:{}: expected 3 coordinates, got {}", path.display(), i + 1, v.len())));
        }
        points.push(Vec3::new(v[0], v[1], v[2]));
    }
    Ok(PointCloud::new(points)?)
}

pub fn write_xyz(path: &Path, points: &[Vec3]) -> Result<(), CliError> {
    let mut text = String::new();
    for p in points {
        writeln!(text, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    write_text(path, &text)
}

struct LoadedView {
    label: String,
    category: Category,
    points: Vec<Vec3>,
    centroid: Vec3,
    scale: f64,
}

fn load_view(cfg: &RunConfig, source: &ViewSource) -> Result<LoadedView, CliError> {
    match source {
        ViewSource::Dataset { object_id, view_id } => {
            let path = manifest_path(cfg);
            if !path.is_file() {
                return Err(CliError::MissingArtifact(format!("dataset manifest {}", path.display())));
            }
            for view in load_dataset(&path)? {
                let view = view?;
                if view.object_id == *object_id && view.view_id == *view_id {
                    return Ok(LoadedView {
                        label: format!("{object_id}/{view_id}"),
                        category: view.category,
                        centroid: view.centroid,
                        scale: view.scale,
                        points: view.points,
                    });
                }
            }
            Err(CliError::MissingArtifact(format!("view {view_id} of object {object_id} in {}", path.display())))
        }
        ViewSource::Cloud { path, category } => {
            let (cloud, centroid, scale) = normalize_cloud(&read_xyz(path)?)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(LoadedView { label: name, category: *category, points: cloud.points().to_vec(), centroid, scale })
        }
    }
}

/// Coarse-to-fine candidates for one view and task.
pub fn infer(cfg: &RunConfig, req: &InferRequest) -> Result<InferOutput, CliError> {
    let generators = GeneratorBank::from_checkpoint(&load_checkpoint(cfg, Model::Generator)?)?;
    let evaluator = Evaluator::from_checkpoint(&load_checkpoint(cfg, Model::Evaluator)?)?;
    let affordance = AffordanceNet::from_checkpoint(&load_checkpoint(cfg, Model::Affordance)?)?;
    let view = load_view(cfg, &req.source)?;
    let generator = generators.get(view.category)?;
    let spec = GripperSpec::default().scaled(1.0 / view.scale);
    let fcfg = cfg.fusion_config();
    let result: FineResult = match generate_fine_candidates(generator, &evaluator, &affordance, &view.points, req.task, &spec, &fcfg) {
        Ok(r) => r,
        Err(Error::NoCandidate { generated, threshold }) => {
            let heat = affordance.forward(&view.points)?;
            let k = fcfg.top_k.min(view.points.len());
            let region = top_affordance_points(&heat.row(req.task), &view.points, k, fcfg.filter_sigma, fcfg.min_value).map(|r| r.len()).unwrap_or(0);
            return Err(CliError::NoCandidate(format!(
                "0 of {generated} coarse grasps scored at least {threshold}; affordance region size {region}"
            )));
        }
        Err(e) => return Err(e.into()),
    };
    let out = InferOutput {
        source: view.label,
        category: view.category,
        task: req.task,
        seed: cfg.seed,
        centroid: [view.centroid.x, view.centroid.y, view.centroid.z],
        scale: view.scale,
        coarse_only: result.coarse_only,
        generated: result.generated,
        survivors: result.survivors,
        region_size: result.region.as_ref().map_or(0, |r| r.len()),
        candidates: CandidateRecord::from_ranked(&result.candidates),
    };
    let json = serde_json::to_string_pretty(&out).expect("candidate records serialize");
    let path = req.output.clone().unwrap_or_else(|| cfg.out_dir.join("candidates.json"));
    write_text(&path, &json)?;
    if let Some(viz) = &req.export_viz {
        let heat = affordance.forward(&view.points)?.row(req.task);
        write_text(viz, &render_ply(&view.points, &heat, &result.candidates, &spec))?;
    }
    Ok(out)
}
