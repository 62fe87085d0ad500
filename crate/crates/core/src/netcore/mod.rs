//! The differentiable models: the multi-stream implicit grasp generator, the
//! grasp evaluator, the point-wise affordance network and a conditional VAE
//! baseline generator, plus their checkpoint container.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GraspPose, GripperSpec, Vec3};
use crate::tape::Mat;

pub mod affordance;
pub mod checkpoint;
pub mod encoder;
pub mod evaluator;
pub mod generator;
pub mod vae;

pub use affordance::{AffordanceConfig, AffordanceHeatmap, AffordanceNet};
pub use checkpoint::Checkpoint;
pub use encoder::{Encoder, EncoderConfig, Grouping, SaLevel};
pub use evaluator::{Evaluator, EvaluatorConfig};
pub use generator::{Generator, GeneratorBank, GeneratorConfig};
pub use vae::{VaeBank, VaeConfig, VaeGenerator};

/// Latent indicator fed to the generator alongside the cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentIndicator(pub Vec<f64>);

impl LatentIndicator {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// `len` independent standard-normal draws.
pub fn sample_latent<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Result<LatentIndicator> {
    if len == 0 {
        return Err(Error::InvalidInput("latent length must be at least 1".into()));
    }
    Ok(LatentIndicator((0..len).map(|_| rng.sample(StandardNormal)).collect()))
}

/// Directed kNN graph: `neighbors[i * k .. (i + 1) * k]` lists the neighbours of point `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub k: usize,
    pub neighbors: Vec<usize>,
}

impl KnnGraph {
    pub fn of(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// `(source, neighbour)` pairs in source order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors.iter().enumerate().map(move |(e, &j)| (e / self.k, j))
    }
}

/// Exact kNN by Euclidean distance, self excluded, ties broken by index.
pub fn knn_graph(cloud: &[Vec3], k: usize) -> Result<KnnGraph> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("k = {k} needs 0 < k < N = {n}")));
    }
    let mut neighbors = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for (i, p) in cloud.iter().enumerate() {
        cand.clear();
        cand.extend(cloud.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| ((p - q).norm_squared(), j)));
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let head = &mut cand[..k];
        head.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        neighbors.extend(head.iter().map(|&(_, j)| j));
    }
    Ok(KnnGraph { k, neighbors })
}

/// Object points flagged 0 followed by `gripper_samples` skeleton points of
/// the posed gripper flagged 1, as an `(N + g) x 4` array.
///
/// `spec` must be expressed in the same units as the cloud.
pub fn assemble_evaluator_input(object_cloud: &[Vec3], pose: &GraspPose, spec: &GripperSpec, gripper_samples: usize) -> Result<Mat> {
    if gripper_samples < crate::geometry::NUM_CONTROL_POINTS {
        return Err(Error::InvalidInput(format!("need at least 7 gripper samples, got {gripper_samples}")));
    }
    let r = pose.rotation();
    let t = pose.trans();
    let gripper = spec.skeleton_samples(gripper_samples);
    let mut out = Array2::zeros((object_cloud.len() + gripper.len(), 4));
    for (i, p) in object_cloud.iter().enumerate() {
        out[[i, 0]] = p.x;
        out[[i, 1]] = p.y;
        out[[i, 2]] = p.z;
    }
    for (k, g) in gripper.iter().enumerate() {
        let q = r * g + t;
        let row = object_cloud.len() + k;
        out[[row, 0]] = q.x;
        out[[row, 1]] = q.y;
        out[[row, 2]] = q.z;
        out[[row, 3]] = 1.0;
    }
    Ok(out)
}

/// Points of an `N x >=3` array as vectors.
pub fn rows_to_points(m: &Mat) -> Vec<Vec3> {
    m.rows().into_iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()
}

/// Unit quaternion and translation from raw head outputs.
pub fn pose_from_raw(quat: &[f64], trans: &[f64]) -> Result<GraspPose> {
    GraspPose::new([quat[0], quat[1], quat[2], quat[3]], Vec3::new(trans[0], trans[1], trans[2]))
}
