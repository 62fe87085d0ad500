//! Rigid-body and point-cloud primitives.
//!
//! Quaternions are stored in `(w, x, y, z)` order and canonicalized so that
//! `w >= 0`. Rotation matrices act on column vectors.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of gripper control points.
pub const NUM_CONTROL_POINTS: usize = 7;

/// A 6-DoF parallel-jaw grasp: unit quaternion plus translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    quat: [f64; 4],
    trans: [f64; 3],
}

impl GraspPose {
    /// Builds a pose, normalizing the quaternion and flipping it so `w >= 0`.
    pub fn new(quat: [f64; 4], trans: Vec3) -> Result<Self> {
        let q = normalize_quat(quat)?;
        if !trans.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("grasp translation".into()));
        }
        Ok(Self { quat: q, trans: [trans.x, trans.y, trans.z] })
    }

    pub fn identity() -> Self {
        Self { quat: [1.0, 0.0, 0.0, 0.0], trans: [0.0; 3] }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self { quat: [1.0, 0.0, 0.0, 0.0], trans: [t.x, t.y, t.z] }
    }

    /// Builds a pose from a rotation matrix (assumed orthonormal) and a translation.
    pub fn from_rotation(r: &Mat3, trans: Vec3) -> Self {
        let quat = quaternion_from_rotation(r);
        Self::new(quat, trans).expect("rotation matrix yields a finite quaternion")
    }

    pub fn quat(&self) -> [f64; 4] {
        self.quat
    }

    pub fn trans(&self) -> Vec3 {
        Vec3::new(self.trans[0], self.trans[1], self.trans[2])
    }

    pub fn rotation(&self) -> Mat3 {
        quat_to_matrix_unit(self.quat)
    }

    /// Applies the rigid transform `x -> r x + t` on the left of this pose.
    pub fn transformed(&self, r: &Mat3, t: &Vec3) -> Self {
        Self::from_rotation(&(r * self.rotation()), r * self.trans() + t)
    }

    /// Replaces the translation, keeping the rotation.
    pub fn with_trans(&self, t: Vec3) -> Self {
        Self { quat: self.quat, trans: [t.x, t.y, t.z] }
    }

    /// The pose as a flat `[qw, qx, qy, qz, x, y, z]` vector.
    pub fn to_array(&self) -> [f64; 7] {
        let [w, x, y, z] = self.quat;
        [w, x, y, z, self.trans[0], self.trans[1], self.trans[2]]
    }
}

fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("quaternion".into()));
    }
    if norm <= 1e-12 {
        return Err(Error::InvalidInput("zero-norm quaternion".into()));
    }
    let s = if q[0] < 0.0 { -1.0 / norm } else { 1.0 / norm };
    Ok([q[0] * s, q[1] * s, q[2] * s, q[3] * s])
}

fn quat_to_matrix_unit([w, x, y, z]: [f64; 4]) -> Mat3 {
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

/// Rotation matrix of a (not necessarily unit) quaternion in `(w, x, y, z)` order.
pub fn rotation_from_quaternion(q: [f64; 4]) -> Result<Mat3> {
    Ok(quat_to_matrix_unit(normalize_quat(q)?))
}

/// Shepperd's method; the result has `w >= 0`.
pub fn quaternion_from_rotation(r: &Mat3) -> [f64; 4] {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    normalize_quat(q).unwrap_or([1.0, 0.0, 0.0, 0.0])
}

/// Extrinsic X-then-Y rotation with zero Z: `R = Ry(y) * Rx(x)`.
///
/// A point is first rotated about the fixed x axis by `x`, then about the
/// fixed y axis by `y`.
pub fn euler_xy_rotation(x: f64, y: f64) -> Mat3 {
    let (sx, cx) = x.sin_cos();
    let (sy, cy) = y.sin_cos();
    let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Mat3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    ry * rx
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| normal.sample(rng));
        if let Ok(r) = rotation_from_quaternion(q) {
            return r;
        }
    }
}

/// Rotation about an arbitrary unit axis (Rodrigues).
pub fn axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
    let a = axis.normalize();
    let (s, c) = angle.sin_cos();
    let k = Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Mat3::identity() + k * s + k * k * (1.0 - c)
}

/// Parallel-jaw gripper geometry in its own frame: closing axis `x`,
/// approach axis `+z`, palm at `z = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    pub width: f64,
    pub finger_depth: f64,
    pub base_offset: f64,
    pub control_points: [[f64; 3]; NUM_CONTROL_POINTS],
    pub mid_index: usize,
}

impl Default for GripperSpec {
    /// Rows: base, approach, mid (palm centre), left shoulder, right shoulder,
    /// left fingertip, right fingertip.
    fn default() -> Self {
        Self {
            width: 0.08,
            finger_depth: 0.046,
            base_offset: 0.066,
            control_points: [
                [0.0, 0.0, -0.066],
                [0.0, 0.0, -0.033],
                [0.0, 0.0, 0.0],
                [-0.04, 0.0, 0.0],
                [0.04, 0.0, 0.0],
                [-0.04, 0.0, 0.046],
                [0.04, 0.0, 0.046],
            ],
            mid_index: 2,
        }
    }
}

impl GripperSpec {
    pub fn point(&self, i: usize) -> Vec3 {
        let p = self.control_points[i];
        Vec3::new(p[0], p[1], p[2])
    }

    /// The same gripper with every length multiplied by `factor`, e.g. to
    /// express it in a scale-normalized view frame.
    pub fn scaled(&self, factor: f64) -> GripperSpec {
        GripperSpec {
            width: self.width * factor,
            finger_depth: self.finger_depth * factor,
            base_offset: self.base_offset * factor,
            control_points: self.control_points.map(|p| p.map(|v| v * factor)),
            mid_index: self.mid_index,
        }
    }

    /// Skeleton segments as index pairs into the control-point table.
    pub fn skeleton(&self) -> [(usize, usize); 5] {
        [(0, 1), (1, self.mid_index), (3, 4), (3, 5), (4, 6)]
    }

    /// `total` points along the skeleton in the gripper frame: the 7 control
    /// points first, then evenly spaced interior points distributed over the
    /// segments in proportion to their length.
    pub fn skeleton_samples(&self, total: usize) -> Vec<Vec3> {
        let mut out: Vec<Vec3> = (0..NUM_CONTROL_POINTS).map(|i| self.point(i)).collect();
        if total <= NUM_CONTROL_POINTS {
            out.truncate(total);
            return out;
        }
        let extra = total - NUM_CONTROL_POINTS;
        let segs = self.skeleton();
        let lengths: Vec<f64> = segs.iter().map(|&(a, b)| (self.point(a) - self.point(b)).norm()).collect();
        let counts = largest_remainder(&lengths, extra);
        for (&(a, b), &n) in segs.iter().zip(&counts) {
            let (pa, pb) = (self.point(a), self.point(b));
            for k in 1..=n {
                let t = k as f64 / (n + 1) as f64;
                out.push(pa + (pb - pa) * t);
            }
        }
        out
    }
}

/// Splits `total` into integer shares proportional to `weights`.
pub(crate) fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        let mut out = vec![0; weights.len()];
        for i in 0..total {
            out[i % weights.len()] += 1;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total - assigned) {
        out[i] += 1;
    }
    out
}

/// Seven gripper control points expressed in some outer frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlPointSet(pub [Vec3; NUM_CONTROL_POINTS]);

impl ControlPointSet {
    pub fn points(&self) -> &[Vec3; NUM_CONTROL_POINTS] {
        &self.0
    }

    pub fn mid(&self, spec: &GripperSpec) -> Vec3 {
        self.0[spec.mid_index]
    }
}

pub fn grasp_to_control_points(pose: &GraspPose, spec: &GripperSpec) -> ControlPointSet {
    let r = pose.rotation();
    let t = pose.trans();
    ControlPointSet(std::array::from_fn(|i| r * spec.point(i) + t))
}

/// An `N x 3` point set with optional unit normals.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        Self::validate(&points, None)?;
        Ok(Self { points, normals: None })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        Self::validate(&points, Some(&normals))?;
        Ok(Self { points, normals: Some(normals) })
    }

    fn validate(points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
        if points.is_empty() {
            return Err(Error::InvalidInput("point cloud must have at least one point".into()));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        if let Some(n) = normals {
            if n.len() != points.len() {
                return Err(Error::Shape(format!("{} normals for {} points", n.len(), points.len())));
            }
            if n.iter().any(|v| (v.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::InvalidInput("normals must have unit length".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            normals: self.normals.as_ref().map(|n| idx.iter().map(|&i| n[i]).collect()),
        }
    }

    pub fn rotated(&self, r: &Mat3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| r * p).collect(),
            normals: self.normals.as_ref().map(|n| n.iter().map(|v| (r * v).normalize()).collect()),
        }
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().fold(Vec3::zeros(), |a, p| a + p) / self.points.len() as f64
    }
}

/// Greedy farthest-point sampling. Ties go to the smallest index.
pub fn farthest_point_sample(cloud: &PointCloud, n: usize, start: usize) -> Result<Vec<usize>> {
    fps_points(cloud.points(), n, start)
}

pub(crate) fn fps_points(points: &[Vec3], n: usize, start: usize) -> Result<Vec<usize>> {
    let total = points.len();
    if n == 0 || n > total {
        return Err(Error::InvalidInput(format!("cannot sample {n} of {total} points")));
    }
    if start >= total {
        return Err(Error::InvalidInput(format!("start index {start} out of range for {total} points")));
    }
    let mut selected = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; total];
    let mut taken = vec![false; total];
    let mut cur = start;
    for _ in 0..n {
        selected.push(cur);
        taken[cur] = true;
        let c = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = (p - c).norm_squared();
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
    Ok(selected)
}

/// Mean-centres the cloud and scales it to unit maximum radius.
pub fn normalize_cloud(cloud: &PointCloud) -> Result<(PointCloud, Vec3, f64)> {
    let c = cloud.centroid();
    let scale = cloud.points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    if scale <= 1e-12 {
        return Err(Error::Degenerate("all points coincide; cannot normalize".into()));
    }
    let points = cloud.points.iter().map(|p| (p - c) / scale).collect();
    Ok((PointCloud { points, normals: cloud.normals.clone() }, c, scale))
}

/// Gaussian per-coordinate noise clamped to `[-clip, clip]`.
pub fn jitter_points<R: Rng + ?Sized>(cloud: &PointCloud, sigma: f64, clip: f64, rng: &mut R) -> PointCloud {
    if sigma <= 0.0 {
        return cloud.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    let points = cloud
        .points
        .iter()
        .map(|p| {
            p + Vec3::new(
                normal.sample(rng).clamp(-clip, clip),
                normal.sample(rng).clamp(-clip, clip),
                normal.sample(rng).clamp(-clip, clip),
            )
        })
        .collect();
    PointCloud { points, normals: cloud.normals.clone() }
}

/// Indices kept by random dropout; at least the first point always survives.
pub fn dropout_indices<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Vec<usize> {
    let mut keep: Vec<usize> = (0..n).filter(|_| p <= 0.0 || rng.gen::<f64>() >= p).collect();
    if keep.is_empty() && n > 0 {
        keep.push(0);
    }
    keep
}

pub fn dropout_points<R: Rng + ?Sized>(cloud: &PointCloud, p: f64, rng: &mut R) -> PointCloud {
    let keep = dropout_indices(cloud.len(), p, rng);
    cloud.select(&keep)
}

/// Median distance from each point to its nearest neighbour (brute force).
pub fn median_nn_spacing(points: &[Vec3]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut d: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    d[d.len() / 2]
}

/// Indices of `surface` (after rotation by `camera_rotation`) visible to a
/// viewer at `-z` looking along `+z`.
///
/// A `resolution x resolution` depth grid spans the rotated cloud's xy
/// bounding box; per cell, points within `slab` of the nearest depth survive,
/// and back-facing points (`n_z > 0`) are discarded. Returned indices are in
/// increasing order.
pub fn partial_view_indices(
    surface: &PointCloud,
    camera_rotation: &Mat3,
    resolution: usize,
    slab: f64,
) -> Result<Vec<usize>> {
    let normals = surface
        .normals()
        .ok_or_else(|| Error::InvalidInput("partial view needs surface normals".into()))?;
    if resolution < 8 {
        return Err(Error::InvalidInput(format!("resolution {resolution} < 8")));
    }
    let pts: Vec<Vec3> = surface.points().iter().map(|p| camera_rotation * p).collect();
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let cell = |v: f64, lo: f64, hi: f64| -> usize {
        if hi - lo <= 0.0 {
            return 0;
        }
        (((v - lo) / (hi - lo) * resolution as f64).floor() as usize).min(resolution - 1)
    };
    let cells: Vec<usize> = pts.iter().map(|p| cell(p.y, ymin, ymax) * resolution + cell(p.x, xmin, xmax)).collect();
    let mut nearest = vec![f64::INFINITY; resolution * resolution];
    for (p, &c) in pts.iter().zip(&cells) {
        nearest[c] = nearest[c].min(p.z);
    }
    let visible: Vec<usize> = (0..pts.len())
        .filter(|&i| {
            let n_z = (camera_rotation * normals[i]).z;
            n_z <= 0.0 && pts[i].z <= nearest[cells[i]] + slab
        })
        .collect();
    if visible.is_empty() {
        return Err(Error::Degenerate("no surface point is visible from the camera".into()));
    }
    Ok(visible)
}

pub fn partial_view(surface: &PointCloud, camera_rotation: &Mat3, resolution: usize, slab: f64) -> Result<PointCloud> {
    let idx = partial_view_indices(surface, camera_rotation, resolution, slab)?;
    Ok(surface.rotated(camera_rotation).select(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn assert_mat_eq(a: &Mat3, b: &Mat3, tol: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert!((a[(i, j)] - b[(i, j)]).abs() < tol, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn quaternion_examples() {
        assert_mat_eq(&rotation_from_quaternion([1.0, 0.0, 0.0, 0.0]).unwrap(), &Mat3::identity(), 1e-15);
        let h = 2f64.sqrt() / 2.0;
        let rz = rotation_from_quaternion([h, 0.0, 0.0, h]).unwrap();
        assert_mat_eq(&rz, &Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0), 1e-12);
        assert_mat_eq(&rotation_from_quaternion([2.0, 0.0, 0.0, 0.0]).unwrap(), &Mat3::identity(), 1e-15);
        assert!(matches!(rotation_from_quaternion([0.0; 4]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn euler_examples() {
        assert_mat_eq(&euler_xy_rotation(0.0, 0.0), &Mat3::identity(), 1e-15);
        assert_mat_eq(&euler_xy_rotation(PI, 0.0), &Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)), 1e-12);
        let v = euler_xy_rotation(0.0, FRAC_PI_2) * Vec3::z();
        assert_abs_diff_eq!((v - Vec3::x()).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn control_point_examples() {
        let spec = GripperSpec::default();
        let cp = grasp_to_control_points(&GraspPose::identity(), &spec);
        for i in 0..7 {
            assert_eq!(cp.0[i], spec.point(i));
        }
        let shifted = grasp_to_control_points(&GraspPose::from_translation(Vec3::new(0.0, 0.0, 0.1)), &spec);
        for i in 0..7 {
            assert_abs_diff_eq!((shifted.0[i] - spec.point(i) - Vec3::new(0.0, 0.0, 0.1)).norm(), 0.0, epsilon = 1e-15);
        }
        let h = 2f64.sqrt() / 2.0;
        let rot = GraspPose::new([h, 0.0, 0.0, h], Vec3::zeros()).unwrap();
        let cp = grasp_to_control_points(&rot, &spec);
        assert_abs_diff_eq!((cp.0[4] - Vec3::new(0.0, 0.04, 0.0)).norm(), 0.0, epsilon = 1e-12);
        assert_eq!(cp.mid(&spec), Vec3::zeros());
    }

    #[test]
    fn gripper_table_is_symmetric() {
        let spec = GripperSpec::default();
        for i in 0..3 {
            assert_eq!(spec.control_points[i][0], 0.0);
        }
        for (l, r) in [(3, 4), (5, 6)] {
            assert_eq!(spec.control_points[l][0], -spec.control_points[r][0]);
            assert_eq!(spec.control_points[l][2], spec.control_points[r][2]);
        }
        let s = spec.skeleton_samples(7);
        assert_eq!(s.len(), 7);
        assert_eq!(spec.skeleton_samples(32).len(), 32);
    }

    fn line_cloud() -> PointCloud {
        PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(0.9, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn fps_examples() {
        let c = line_cloud();
        assert_eq!(farthest_point_sample(&c, 2, 0).unwrap(), vec![0, 3]);
        assert_eq!(farthest_point_sample(&c, 2, 3).unwrap(), vec![3, 0]);
        let mut all = farthest_point_sample(&c, 4, 0).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(farthest_point_sample(&c, 5, 0).is_err());
    }

    #[test]
    fn fps_matches_exhaustive_greedy() {
        // Brute-force greedy: each step scans every candidate against every selected point.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vec3> = (0..40).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let fast = farthest_point_sample(&cloud, 12, 5).unwrap();
        let mut sel = vec![5usize];
        while sel.len() < 12 {
            let mut best = (f64::NEG_INFINITY, 0);
            for i in 0..pts.len() {
                if sel.contains(&i) {
                    continue;
                }
                let d = sel.iter().map(|&s| (pts[i] - pts[s]).norm()).fold(f64::INFINITY, f64::min);
                if d > best.0 {
                    best = (d, i);
                }
            }
            sel.push(best.1);
        }
        assert_eq!(fast, sel);
    }

    #[test]
    fn normalize_examples() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 1.0, 1.0), Vec3::new(3.0, 1.0, 1.0)]).unwrap();
        let (n, centroid, scale) = normalize_cloud(&c).unwrap();
        assert_eq!(centroid, Vec3::new(2.0, 1.0, 1.0));
        assert_eq!(scale, 1.0);
        assert_eq!(n.points(), &[Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]);
        let (again, _, s2) = normalize_cloud(&n).unwrap();
        assert_eq!(s2, 1.0);
        assert_eq!(again, n);
        let dup = PointCloud::new(vec![Vec3::new(0.5, 0.5, 0.5); 3]).unwrap();
        assert!(matches!(normalize_cloud(&dup), Err(Error::Degenerate(_))));
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect()).unwrap()
    }

    #[test]
    fn jitter_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_cloud(&mut rng, 10_000);
        assert_eq!(jitter_points(&c, 0.0, 0.02, &mut rng), c);
        let j = jitter_points(&c, 0.01, 0.02, &mut rng);
        let max = c.points().iter().zip(j.points()).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max);
        assert!(max <= 0.02 + 1e-12);
        let j = jitter_points(&c, 0.01, 1.0, &mut rng);
        let deltas: Vec<f64> = c.points().iter().zip(j.points()).flat_map(|(a, b)| (b - a).iter().copied().collect::<Vec<_>>()).collect();
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        let std = (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / deltas.len() as f64).sqrt();
        assert!((0.008..=0.012).contains(&std), "std {std}");
    }

    #[test]
    fn dropout_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_cloud(&mut rng, 10_000);
        assert_eq!(dropout_points(&c, 0.0, &mut rng), c);
        let kept = dropout_points(&c, 0.5, &mut rng).len();
        assert!((4500..=5500).contains(&kept), "kept {kept}");
        let one = PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        for _ in 0..20 {
            assert_eq!(dropout_points(&one, 0.99, &mut rng), one);
        }
    }

    #[test]
    fn partial_view_examples() {
        let toward = Vec3::new(0.0, 0.0, -1.0);
        let single = PointCloud::with_normals(vec![Vec3::zeros()], vec![toward]).unwrap();
        assert_eq!(partial_view(&single, &Mat3::identity(), 8, 0.01).unwrap().len(), 1);

        let pair = PointCloud::with_normals(vec![Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0)], vec![toward, toward]).unwrap();
        let idx = partial_view_indices(&pair, &Mat3::identity(), 8, 0.01).unwrap();
        assert_eq!(idx, vec![0]);

        // Fibonacci sphere.
        let n = 4000;
        let pts: Vec<Vec3> = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = i as f64 * PI * (3.0 - 5f64.sqrt());
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        let sphere = PointCloud::with_normals(pts.clone(), pts).unwrap();
        let slab = 2.0 * median_nn_spacing(sphere.points());
        let vis = partial_view(&sphere, &euler_xy_rotation(0.3, 0.2), 32, slab).unwrap();
        let frac = vis.len() as f64 / n as f64;
        assert!((0.35..=0.65).contains(&frac), "fraction {frac}");

        let back = PointCloud::with_normals(vec![Vec3::zeros()], vec![Vec3::z()]).unwrap();
        assert!(matches!(partial_view(&back, &Mat3::identity(), 8, 0.01), Err(Error::Degenerate(_))));
    }

    fn arb_quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter("non-zero", |q| q.iter().map(|v| v * v).sum::<f64>() > 1e-3)
    }

    fn arb_vec() -> impl Strategy<Value = Vec3> {
        prop::array::uniform3(-1.0f64..1.0).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
    }

    proptest! {
        #[test]
        fn rotation_is_proper_and_double_covered(q in arb_quat()) {
            let r = rotation_from_quaternion(q).unwrap();
            let neg = rotation_from_quaternion([-q[0], -q[1], -q[2], -q[3]]).unwrap();
            prop_assert!((r.transpose() * r - Mat3::identity()).amax() < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            prop_assert!((r - neg).amax() < 1e-12);
            let back = rotation_from_quaternion(quaternion_from_rotation(&r)).unwrap();
            prop_assert!((r - back).amax() < 1e-9);
            let pose = GraspPose::new(q, Vec3::zeros()).unwrap();
            let norm: f64 = pose.quat().iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9 && pose.quat()[0] >= 0.0);
        }

        #[test]
        fn control_points_are_equivariant(q in arb_quat(), t in arb_vec(), g in arb_quat(), s in arb_vec()) {
            let spec = GripperSpec::default();
            let pose = GraspPose::new(q, t).unwrap();
            let r = rotation_from_quaternion(g).unwrap();
            let moved = grasp_to_control_points(&pose.transformed(&r, &s), &spec);
            let base = grasp_to_control_points(&pose, &spec);
            for i in 0..7 {
                prop_assert!((moved.0[i] - (r * base.0[i] + s)).norm() < 1e-9);
            }
        }

        #[test]
        fn normalize_round_trips(pts in prop::collection::vec(arb_vec(), 2..40)) {
            let cloud = PointCloud::new(pts).unwrap();
            if let Ok((n, c, s)) = normalize_cloud(&cloud) {
                prop_assert!(n.centroid().norm() < 1e-9);
                let max = n.points().iter().map(|p| p.norm()).fold(0.0, f64::max);
                prop_assert!((max - 1.0).abs() < 1e-9);
                for (a, b) in n.points().iter().zip(cloud.points()) {
                    prop_assert!((a * s + c - b).norm() < 1e-9);
                }
            }
        }

        #[test]
        fn fps_is_a_deterministic_subset(pts in prop::collection::vec(arb_vec(), 1..40), frac in 0.0f64..1.0) {
            let cloud = PointCloud::new(pts).unwrap();
            let n = 1 + ((cloud.len() - 1) as f64 * frac) as usize;
            let a = farthest_point_sample(&cloud, n, 0).unwrap();
            let b = farthest_point_sample(&cloud, n, 0).unwrap();
            prop_assert_eq!(&a, &b);
            let mut sorted = a.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), n);
            prop_assert!(a.iter().all(|&i| i < cloud.len()));
        }
    }
}
