//! Rendering per-view training records to disk and reading them back.
//!
//! Layout under the dataset directory:
//!
//! ```text
//! manifest.json
//! objects/<id>.json            object parameters and labeled grasps (object frame)
//! views/<id>_<k>.pts.f32       N x 3 little-endian f32, row-major, normalized view frame
//! views/<id>_<k>.grasps.json   labeled grasps in the normalized view frame
//! views/<id>_<k>.mask.f32      6 x N little-endian f32, row = label code
//! ```
//!
//! Grasp translations in a view are mapped like the points:
//! `t_view = (R t_obj - centroid) / scale`. Sentinel grasps are stored verbatim.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::oracle::{label_grasps, propose_grasps, OracleConfig};
use super::{affordance_regions, AffordanceLabel, Category, LabeledGrasp, ObjectRecord};
use crate::error::{Error, Result};
use crate::geometry::{
    axis_angle, dropout_indices, euler_xy_rotation, fps_points, jitter_points, median_nn_spacing, normalize_cloud,
    partial_view_indices, GraspPose, GripperSpec, Mat3, PointCloud, Vec3,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_points: usize,
    pub rotations_per_object: usize,
    pub seed: u64,
    pub surface_points: usize,
    /// Antipodal proposals per object.
    pub grasps_per_object: usize,
    /// Extra proposals displaced off their contact pair, mostly failures.
    pub perturbed_per_object: usize,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    pub dropout_max: f64,
    pub friction_mu: f64,
}

impl Default for DatasetConfig {
    /// Full-scale settings: 900 rotations per object and 2048 points per view.
    fn default() -> Self {
        Self {
            n_points: 2048,
            rotations_per_object: 900,
            seed: 0,
            surface_points: 8192,
            grasps_per_object: 512,
            perturbed_per_object: 128,
            jitter_sigma: 0.005,
            jitter_clip: 0.01,
            dropout_max: 0.2,
            friction_mu: 0.5,
        }
    }
}

impl DatasetConfig {
    pub fn desk() -> Self {
        Self {
            n_points: 256,
            rotations_per_object: 32,
            surface_points: 2048,
            grasps_per_object: 160,
            perturbed_per_object: 48,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub path: String,
    pub shape: [usize; 2],
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub object_id: String,
    pub category: Category,
    pub view_id: usize,
    /// Euler angles `(x, y)` of the object rotation, radians.
    pub rotation: [f64; 2],
    pub centroid: [f64; 3],
    pub scale: f64,
    pub points: BlobRef,
    pub grasps: FileRef,
    pub mask: BlobRef,
}

impl ManifestRecord {
    pub fn record_id(&self) -> String {
        format!("{}_{}", self.object_id, self.view_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub records: Vec<ManifestRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ObjectFile {
    id: String,
    category: Category,
    seed: u64,
    n_surface_points: usize,
    params: BTreeMap<String, f64>,
    grasps: Vec<LabeledGrasp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ViewGraspFile {
    object_id: String,
    view_id: usize,
    grasps: Vec<LabeledGrasp>,
}

/// One rendered view, loaded into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewRecord {
    pub object_id: String,
    pub category: Category,
    pub view_id: usize,
    pub rotation: [f64; 2],
    pub centroid: Vec3,
    pub scale: f64,
    /// Normalized view-frame points.
    pub points: Vec<Vec3>,
    pub grasps: Vec<LabeledGrasp>,
    /// `masks[label code][point]`.
    pub masks: Vec<Vec<f64>>,
}

impl ViewRecord {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Successful grasps of `label` in the normalized view frame.
    pub fn ground_truth(&self, label: AffordanceLabel, include_sentinel: bool) -> Vec<GraspPose> {
        self.grasps
            .iter()
            .filter(|g| g.success && g.label == Some(label) && (include_sentinel || !g.sentinel))
            .map(|g| g.pose)
            .collect()
    }

    /// Maps a normalized-frame pose into the metric (rotated object) frame.
    pub fn to_metric(&self, pose: &GraspPose) -> GraspPose {
        pose.with_trans(pose.trans() * self.scale + self.centroid)
    }

    /// Maps a metric-frame pose into the normalized view frame.
    pub fn to_normalized(&self, pose: &GraspPose) -> GraspPose {
        pose.with_trans((pose.trans() - self.centroid) / self.scale)
    }

    /// The same view seen after rotating the object by `r` about the view
    /// centroid: points and grasps rotate (sentinels stay constant), everything
    /// else is kept.
    pub fn rotated(&self, r: &Mat3) -> ViewRecord {
        let origin = Vec3::zeros();
        ViewRecord {
            points: self.points.iter().map(|p| r * p).collect(),
            grasps: self
                .grasps
                .iter()
                .map(|g| if g.sentinel { *g } else { LabeledGrasp { pose: g.pose.transformed(r, &origin), ..*g } })
                .collect(),
            ..self.clone()
        }
    }

    pub fn mask(&self, label: AffordanceLabel) -> &[f64] {
        &self.masks[label.code()]
    }

    /// Non-sentinel grasps with their oracle outcome.
    pub fn oracle_labeled(&self) -> impl Iterator<Item = (&GraspPose, bool)> {
        self.grasps.iter().filter(|g| !g.sentinel).map(|g| (&g.pose, g.success))
    }
}

/// 64-bit mix of a base seed with two stream keys (splitmix64 finalizer).
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Proposes, perturbs and oracle-labels grasps for one object.
pub fn annotate_object(object: &ObjectRecord, cfg: &DatasetConfig, index: u64) -> Vec<LabeledGrasp> {
    let spec = GripperSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, index, u64::MAX));
    let mut poses = propose_grasps(object, cfg.grasps_per_object, &spec, &mut rng);
    if !poses.is_empty() {
        for _ in 0..cfg.perturbed_per_object {
            let base = poses[rng.gen_range(0..cfg.grasps_per_object.min(poses.len()))];
            let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let offset = dir.normalize() * rng.gen_range(0.02..0.08);
            let tilt = axis_angle(&Vec3::new(rng.gen(), rng.gen(), rng.gen::<f64>() + 0.1), rng.gen_range(-0.8..0.8));
            let rot = base.rotation() * tilt;
            poses.push(GraspPose::from_rotation(&rot, base.trans() + offset));
        }
    }
    let oracle = OracleConfig { friction_mu: cfg.friction_mu, ..OracleConfig::default() };
    label_grasps(object, &poses, &spec, &oracle)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<String> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn f32_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(|v| (v as f32).to_le_bytes()).collect()
}

/// Renders `rotations_per_object` partial views of every object.
///
/// Each view: random Euler rotation `x in [0, 2pi)`, `y in [-pi/2, pi/2]`;
/// z-buffer visibility; jitter; dropout with `p ~ U[0, dropout_max]`; FPS to
/// `n_points` (cycling the FPS order when fewer points are visible);
/// mean-centring and unit scaling.
pub fn render_dataset(objects: &[ObjectRecord], cfg: &DatasetConfig, out_dir: &Path) -> Result<DatasetManifest> {
    if cfg.rotations_per_object == 0 {
        return Err(Error::InvalidInput("rotations_per_object must be at least 1".into()));
    }
    if cfg.n_points < 64 {
        return Err(Error::InvalidInput(format!("n_points {} < 64", cfg.n_points)));
    }
    let objects_dir = out_dir.join("objects");
    let views_dir = out_dir.join("views");
    for d in [&objects_dir, &views_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d.as_path(), e))?;
    }
    let mut records = Vec::new();
    for (oi, object) in objects.iter().enumerate() {
        let grasps = annotate_object(object, cfg, oi as u64);
        let file = ObjectFile {
            id: object.id.clone(),
            category: object.category,
            seed: object.seed,
            n_surface_points: object.surface.len(),
            params: object.params.clone(),
            grasps: grasps.clone(),
        };
        let path = objects_dir.join(format!("{}.json", object.id));
        let json = serde_json::to_vec_pretty(&file).map_err(|e| Error::json(&path, e))?;
        write_file(&path, &json)?;

        let (slab, resolution) = view_params(object);
        for k in 0..cfg.rotations_per_object {
            let view = render_view(object, &grasps, cfg, oi as u64, k, slab, resolution)?;
            records.push(write_view(&view, out_dir)?);
        }
    }
    let manifest = DatasetManifest { format_version: MANIFEST_VERSION, config: cfg.clone(), records };
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    write_file(&path, &json)?;
    Ok(manifest)
}

/// Renders every view of every object in memory, as [`render_dataset`]
/// would write them.
pub fn render_views(objects: &[ObjectRecord], cfg: &DatasetConfig) -> Result<Vec<ViewRecord>> {
    let mut views = Vec::with_capacity(objects.len() * cfg.rotations_per_object);
    for (oi, object) in objects.iter().enumerate() {
        let grasps = annotate_object(object, cfg, oi as u64);
        let (slab, resolution) = view_params(object);
        for k in 0..cfg.rotations_per_object {
            views.push(render_view(object, &grasps, cfg, oi as u64, k, slab, resolution)?);
        }
    }
    Ok(views)
}

/// Z-buffer slab (twice the median point spacing) and a grid resolution
/// giving cells about 2.5 spacings wide.
pub fn view_params(object: &ObjectRecord) -> (f64, usize) {
    let spacing = median_nn_spacing(object.surface.points());
    let diameter = 2.0 * object.surface.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
    let resolution = ((diameter / (2.5 * spacing)).round() as usize).clamp(8, 256);
    (2.0 * spacing, resolution)
}

/// Renders view `k` of `object` in memory.
pub fn render_view(
    object: &ObjectRecord,
    grasps: &[LabeledGrasp],
    cfg: &DatasetConfig,
    object_index: u64,
    k: usize,
    slab: f64,
    resolution: usize,
) -> Result<ViewRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, object_index, k as u64));
    let ax = rng.gen_range(0.0..std::f64::consts::TAU);
    let ay = rng.gen_range(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2);
    let rot = euler_xy_rotation(ax, ay);
    let visible = partial_view_indices(&object.surface, &rot, resolution, slab)?;
    let view = object.surface.rotated(&rot).select(&visible);
    let view = jitter_points(&view, cfg.jitter_sigma, cfg.jitter_clip, &mut rng);
    let p_drop = rng.gen_range(0.0..=cfg.dropout_max);
    let kept = dropout_indices(view.len(), p_drop, &mut rng);
    let kept_pts: Vec<Vec3> = kept.iter().map(|&i| view.points()[i]).collect();
    let order = fps_points(&kept_pts, cfg.n_points.min(kept_pts.len()), 0)?;
    let chosen: Vec<usize> = (0..cfg.n_points).map(|i| order[i % order.len()]).collect();
    let sampled = PointCloud::new(chosen.iter().map(|&i| kept_pts[i]).collect())?;
    let (normalized, centroid, scale) = normalize_cloud(&sampled)?;
    let tags: Vec<_> = chosen.iter().map(|&i| object.tags[visible[kept[i]]]).collect();

    let regions = affordance_regions(object.category);
    let masks = AffordanceLabel::ALL
        .iter()
        .map(|l| {
            let parts = regions.get(l);
            tags.iter().map(|t| parts.is_some_and(|p| p.contains(t)) as u8 as f64).collect()
        })
        .collect();
    let view_grasps = grasps
        .iter()
        .map(|g| {
            if g.sentinel {
                *g
            } else {
                let moved = g.pose.transformed(&rot, &Vec3::zeros());
                LabeledGrasp { pose: moved.with_trans((moved.trans() - centroid) / scale), ..*g }
            }
        })
        .collect();
    Ok(ViewRecord {
        object_id: object.id.clone(),
        category: object.category,
        view_id: k,
        rotation: [ax, ay],
        centroid,
        scale,
        points: normalized.points().to_vec(),
        grasps: view_grasps,
        masks,
    })
}

fn write_view(view: &ViewRecord, root: &Path) -> Result<ManifestRecord> {
    let stem = format!("views/{}_{}", view.object_id, view.view_id);
    let n = view.n_points();
    let pts_path = format!("{stem}.pts.f32");
    let pts_hash = write_file(&root.join(&pts_path), &f32_bytes(view.points.iter().flat_map(|p| [p.x, p.y, p.z])))?;
    let mask_path = format!("{stem}.mask.f32");
    let mask_hash = write_file(&root.join(&mask_path), &f32_bytes(view.masks.iter().flatten().copied()))?;
    let grasp_path = format!("{stem}.grasps.json");
    let file = ViewGraspFile { object_id: view.object_id.clone(), view_id: view.view_id, grasps: view.grasps.clone() };
    let json = serde_json::to_vec_pretty(&file).map_err(|e| Error::json(root.join(&grasp_path), e))?;
    let grasp_hash = write_file(&root.join(&grasp_path), &json)?;
    Ok(ManifestRecord {
        object_id: view.object_id.clone(),
        category: view.category,
        view_id: view.view_id,
        rotation: view.rotation,
        centroid: [view.centroid.x, view.centroid.y, view.centroid.z],
        scale: view.scale,
        points: BlobRef { path: pts_path, shape: [n, 3], sha256: pts_hash },
        grasps: FileRef { path: grasp_path, sha256: grasp_hash },
        mask: BlobRef { path: mask_path, shape: [AffordanceLabel::COUNT, n], sha256: mask_hash },
    })
}

/// Streaming reader over a rendered dataset.
pub struct DatasetReader {
    root: PathBuf,
    manifest: DatasetManifest,
    next: usize,
}

impl DatasetReader {
    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn read_checked(&self, rec: &ManifestRecord, rel: &str, sha: &str) -> Result<Vec<u8>> {
        let path = self.root.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::Load { record: rec.record_id(), reason: format!("{}: {e}", path.display()) })?;
        if hex::encode(Sha256::digest(&bytes)) != sha {
            return Err(Error::Load { record: rec.record_id(), reason: format!("checksum mismatch for {rel}") });
        }
        Ok(bytes)
    }

    fn read_blob(&self, rec: &ManifestRecord, blob: &BlobRef) -> Result<Vec<f64>> {
        let path = self.root.join(&blob.path);
        let len = fs::metadata(&path)
            .map_err(|e| Error::Load { record: rec.record_id(), reason: format!("{}: {e}", path.display()) })?
            .len() as usize;
        let expected = blob.shape[0] * blob.shape[1] * 4;
        if len != expected {
            return Err(Error::Load {
                record: rec.record_id(),
                reason: format!("{} has {len} bytes, expected {expected} for shape {:?}", blob.path, blob.shape),
            });
        }
        let bytes = self.read_checked(rec, &blob.path, &blob.sha256)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    }

    fn load(&self, rec: &ManifestRecord) -> Result<ViewRecord> {
        if rec.points.shape[1] != 3 || rec.mask.shape != [AffordanceLabel::COUNT, rec.points.shape[0]] {
            return Err(Error::Load { record: rec.record_id(), reason: "inconsistent blob shapes".into() });
        }
        let pts = self.read_blob(rec, &rec.points)?;
        let mask = self.read_blob(rec, &rec.mask)?;
        let grasp_bytes = self.read_checked(rec, &rec.grasps.path, &rec.grasps.sha256)?;
        let grasps: ViewGraspFile = serde_json::from_slice(&grasp_bytes)
            .map_err(|e| Error::Load { record: rec.record_id(), reason: format!("grasp file: {e}") })?;
        let n = rec.points.shape[0];
        Ok(ViewRecord {
            object_id: rec.object_id.clone(),
            category: rec.category,
            view_id: rec.view_id,
            rotation: rec.rotation,
            centroid: Vec3::from(rec.centroid),
            scale: rec.scale,
            points: pts.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect(),
            grasps: grasps.grasps,
            masks: mask.chunks_exact(n).map(|r| r.to_vec()).collect(),
        })
    }

    /// Loads every record, failing on the first bad one.
    pub fn load_all(self) -> Result<Vec<ViewRecord>> {
        self.collect()
    }
}

impl Iterator for DatasetReader {
    type Item = Result<ViewRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.manifest.records.get(self.next)?.clone();
        self.next += 1;
        Some(self.load(&rec))
    }
}

/// Opens `manifest.json` (or a dataset directory containing it).
pub fn load_dataset(manifest_path: &Path) -> Result<DatasetReader> {
    let path = if manifest_path.is_dir() { manifest_path.join("manifest.json") } else { manifest_path.to_path_buf() };
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::InvalidInput(format!("unsupported manifest version {}", manifest.format_version)));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetReader { root, manifest, next: 0 })
}

/// Reads the object-frame labeled grasps written next to a manifest.
pub fn load_object_grasps(root: &Path, object_id: &str) -> Result<Vec<LabeledGrasp>> {
    let path = root.join("objects").join(format!("{object_id}.json"));
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let file: ObjectFile = serde_json::from_slice(&bytes).map_err(|e| Error::json(&path, e))?;
    Ok(file.grasps)
}

/// One object per requested category, seeds `seed_base + i`.
pub fn make_objects(categories: &[Category], per_category: usize, seed_base: u64, surface_points: usize) -> Vec<ObjectRecord> {
    categories
        .iter()
        .flat_map(|&c| (0..per_category).map(move |i| super::make_object(c, seed_base + i as u64, surface_points)))
        .collect()
}
