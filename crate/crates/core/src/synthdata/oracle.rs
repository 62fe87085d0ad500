//! Antipodal grasp proposals and a geometric success oracle.
//!
//! The oracle works in the gripper frame (closing axis `x`, approach `+z`,
//! palm at `z = 0`). A grasp succeeds when both jaws meet surface whose mean
//! normal lies inside the friction cone of the closing direction and no
//! surface point intrudes into the fingers, palm or approach column.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{affordance_regions, AffordanceLabel, LabeledGrasp, ObjectRecord};
use crate::geometry::{axis_angle, grasp_to_control_points, GraspPose, GripperSpec, Mat3, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub friction_mu: f64,
    /// Half extent of the finger pads along `y`.
    pub pad_half_width: f64,
    /// Finger thickness along `x`, outside the opening.
    pub finger_thickness: f64,
    pub palm_thickness: f64,
    /// Half side of the square approach column between palm and base.
    pub column_half_width: f64,
    /// Points within this distance of the extreme jaw coordinate count as contacts.
    pub contact_band: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            friction_mu: 0.5,
            pad_half_width: 0.01,
            finger_thickness: 0.01,
            palm_thickness: 0.01,
            column_half_width: 0.01,
            contact_band: 0.0015,
        }
    }
}

/// Result of one oracle evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleOutcome {
    pub success: bool,
    pub collision: bool,
    /// Surface indices touched by the jaws (empty when nothing is between them).
    pub contacts: Vec<usize>,
}

pub fn oracle_contacts(object: &ObjectRecord, pose: &GraspPose, spec: &GripperSpec, cfg: &OracleConfig) -> OracleOutcome {
    let rt = pose.rotation().transpose();
    let t = pose.trans();
    let normals = object.surface.normals().expect("object surfaces carry normals");
    let half = spec.width / 2.0;
    let base_z = spec.control_points[0][2];
    let mut inside = Vec::new();
    let mut collision = false;
    for (i, p) in object.surface.points().iter().enumerate() {
        let q = rt * (p - t);
        if q.y.abs() <= cfg.pad_half_width && q.z >= 0.0 && q.z <= spec.finger_depth {
            if q.x.abs() < half {
                inside.push((i, q.x));
            } else if q.x.abs() <= half + cfg.finger_thickness {
                collision = true;
            }
        } else if q.z < 0.0 && q.z >= -cfg.palm_thickness {
            if q.x.abs() <= half + cfg.finger_thickness && q.y.abs() <= cfg.pad_half_width {
                collision = true;
            }
        } else if q.z < -cfg.palm_thickness
            && q.z >= base_z
            && q.x.abs() <= cfg.column_half_width
            && q.y.abs() <= cfg.column_half_width
        {
            collision = true;
        }
    }
    if inside.is_empty() {
        return OracleOutcome { success: false, collision, contacts: Vec::new() };
    }
    let xmin = inside.iter().map(|&(_, x)| x).fold(f64::INFINITY, f64::min);
    let xmax = inside.iter().map(|&(_, x)| x).fold(f64::NEG_INFINITY, f64::max);
    let left: Vec<usize> = inside.iter().filter(|&&(_, x)| x <= xmin + cfg.contact_band).map(|&(i, _)| i).collect();
    let right: Vec<usize> = inside.iter().filter(|&&(_, x)| x >= xmax - cfg.contact_band).map(|&(i, _)| i).collect();
    let cos_cone = 1.0 / (1.0 + cfg.friction_mu * cfg.friction_mu).sqrt();
    let in_cone = |set: &[usize], dir: f64| {
        let mean = set.iter().fold(Vec3::zeros(), |a, &i| a + rt * normals[i]);
        let norm = mean.norm();
        norm > 1e-12 && dir * mean.x / norm >= cos_cone
    };
    let disjoint = xmax - xmin > cfg.contact_band;
    let grip = disjoint && in_cone(&left, -1.0) && in_cone(&right, 1.0);
    let contacts = inside
        .iter()
        .filter(|&&(_, x)| x <= xmin + cfg.contact_band || x >= xmax - cfg.contact_band)
        .map(|&(i, _)| i)
        .collect();
    OracleOutcome { success: grip && !collision, collision, contacts }
}

/// Geometric stand-in for a physics grasp trial.
pub fn grasp_oracle(object: &ObjectRecord, pose: &GraspPose, friction_mu: f64) -> bool {
    let cfg = OracleConfig { friction_mu, ..OracleConfig::default() };
    oracle_contacts(object, pose, &GripperSpec::default(), &cfg).success
}

/// Friction coefficient of the antipodal test used when proposing grasps.
const PROPOSAL_FRICTION: f64 = 0.5;

/// Antipodal proposals: a random surface point, a ray along its inward
/// normal to an opposing surface within the gripper opening whose normal
/// lies inside the friction cone about the ray, an approach from outside the
/// object with a random roll about the closing axis, and a random contact
/// depth on the fingers, backed off until the palm footprint is clear of the
/// surface.
///
/// Makes at most `20 n` attempts, so thin-walled or oversized objects may
/// yield fewer than `n` poses.
pub fn propose_grasps<R: Rng>(object: &ObjectRecord, n: usize, spec: &GripperSpec, rng: &mut R) -> Vec<GraspPose> {
    let pts = object.surface.points();
    let normals = object.surface.normals().expect("object surfaces carry normals");
    let centroid = object.surface.centroid();
    let ray_radius = 0.003;
    let min_gap = 0.0015;
    let max_gap = spec.width - 0.004;
    let cos_cone = 1.0 / (1.0 + PROPOSAL_FRICTION * PROPOSAL_FRICTION).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0;
    while out.len() < n && attempts < 20 * n {
        attempts += 1;
        let i = rng.gen_range(0..pts.len());
        let p = pts[i];
        let dir = -normals[i];
        // Any opposing surface along the ray may serve as the second jaw, so
        // thin walls give both wall pinches and whole-body wraps.
        let hits: Vec<usize> = pts
            .iter()
            .enumerate()
            .filter(|&(j, q)| {
                let d = q - p;
                let s = d.dot(&dir);
                s > min_gap && s <= max_gap && normals[j].dot(&dir) >= cos_cone && (d - dir * s).norm() <= ray_radius
            })
            .map(|(j, _)| j)
            .collect();
        if hits.is_empty() {
            continue;
        }
        let j = hits[rng.gen_range(0..hits.len())];
        let x_axis = dir;
        let center = p + dir * (0.5 * (pts[j] - p).dot(&dir));
        // Approach from outside: aim the approach axis at the centroid, then
        // roll about the closing axis by up to 30 degrees either way.
        let outward = center - centroid;
        let radial = outward - x_axis * outward.dot(&x_axis);
        let perp = if radial.norm() > 1e-6 {
            -radial.normalize()
        } else {
            let seed_axis = if x_axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            x_axis.cross(&seed_axis).normalize()
        };
        let roll = rng.gen_range(-std::f64::consts::FRAC_PI_6..std::f64::consts::FRAC_PI_6);
        let z_axis = axis_angle(&x_axis, roll) * perp;
        // Back off so the palm clears everything in its footprint.
        let footprint_x = spec.width / 2.0 + 0.01;
        let footprint_y = 0.01;
        let y_axis = z_axis.cross(&x_axis);
        let clearance = pts
            .iter()
            .filter_map(|q| {
                let d = q - center;
                (d.dot(&x_axis).abs() <= footprint_x && d.dot(&y_axis).abs() <= footprint_y).then(|| d.dot(&z_axis))
            })
            .fold(f64::INFINITY, f64::min);
        let lo = (0.2 * spec.finger_depth).max(-clearance + 0.002);
        let hi = 0.8 * spec.finger_depth;
        if hi <= lo {
            continue;
        }
        let depth = rng.gen_range(lo..hi);
        let r = Mat3::from_columns(&[x_axis, y_axis, z_axis]);
        out.push(GraspPose::from_rotation(&r, center - z_axis * depth));
    }
    out
}

/// Label chosen by majority of contact points; ties go to the lower code.
fn majority_label(object: &ObjectRecord, contacts: &[usize]) -> Option<AffordanceLabel> {
    let regions = affordance_regions(object.category);
    let mut best: Option<(usize, AffordanceLabel)> = None;
    for (label, parts) in &regions {
        let count = contacts.iter().filter(|&&i| parts.contains(&object.tags[i])).count();
        if count > 0 && best.map_or(true, |(c, _)| count > c) {
            best = Some((count, *label));
        }
    }
    best.map(|(_, l)| l)
}

fn nearest_region_label(object: &ObjectRecord, pose: &GraspPose, spec: &GripperSpec) -> Option<AffordanceLabel> {
    let mid = grasp_to_control_points(pose, spec).mid(spec);
    let regions = affordance_regions(object.category);
    object
        .surface
        .points()
        .iter()
        .enumerate()
        .filter(|&(i, _)| regions.values().any(|parts| parts.contains(&object.tags[i])))
        .min_by(|a, b| (a.1 - mid).norm_squared().partial_cmp(&(b.1 - mid).norm_squared()).unwrap().then(a.0.cmp(&b.0)))
        .and_then(|(i, _)| majority_label(object, &[i]))
}

/// Oracle-tests every pose and assigns affordance labels; appends one
/// sentinel per afforded label that received no successful grasp.
pub fn label_grasps(object: &ObjectRecord, poses: &[GraspPose], spec: &GripperSpec, cfg: &OracleConfig) -> Vec<LabeledGrasp> {
    let mut out: Vec<LabeledGrasp> = poses
        .iter()
        .map(|pose| {
            let outcome = oracle_contacts(object, pose, spec, cfg);
            let label = if outcome.success {
                majority_label(object, &outcome.contacts)
            } else {
                majority_label(object, &outcome.contacts).or_else(|| nearest_region_label(object, pose, spec))
            };
            LabeledGrasp { pose: *pose, label, success: outcome.success, sentinel: false }
        })
        .collect();
    for label in object.category.labels() {
        if !out.iter().any(|g| g.success && g.label == Some(label)) {
            out.push(LabeledGrasp::sentinel(label));
        }
    }
    out
}
