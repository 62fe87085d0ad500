//! ASCII PLY export: the view cloud colored by heatmap value plus one
//! seven-vertex gripper skeleton per candidate, joined by edges.

use std::fmt::Write;

use affgrasp_core::fusion::GraspCandidate;
use affgrasp_core::geometry::{grasp_to_control_points, GripperSpec, Vec3, NUM_CONTROL_POINTS};

pub fn render_ply(cloud: &[Vec3], heat: &[f64], candidates: &[GraspCandidate], spec: &GripperSpec) -> String {
    let skeleton = spec.skeleton();
    let n_vertices = cloud.len() + NUM_CONTROL_POINTS * candidates.len();
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "ply\nformat ascii 1.0").unwrap();
    writeln!(w, "element vertex {n_vertices}").unwrap();
    writeln!(w, "property float x\nproperty float y\nproperty float z").unwrap();
    writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue").unwrap();
    writeln!(w, "element edge {}", skeleton.len() * candidates.len()).unwrap();
    writeln!(w, "property int vertex1\nproperty int vertex2\nend_header").unwrap();
    for (p, &h) in cloud.iter().zip(heat) {
        // Low values grey, high values red.
        let h = h.clamp(0.0, 1.0);
        let red = (128.0 + 127.0 * h).round() as u8;
        let other = (128.0 * (1.0 - h)).round() as u8;
        writeln!(w, "{} {} {} {red} {other} {other}", p.x, p.y, p.z).unwrap();
    }
    for c in candidates {
        for p in grasp_to_control_points(&c.pose, spec).points() {
            writeln!(w, "{} {} {} 0 200 0", p.x, p.y, p.z).unwrap();
        }
    }
    for k in 0..candidates.len() {
        let base = cloud.len() + k * NUM_CONTROL_POINTS;
        for (a, b) in skeleton {
            writeln!(w, "{} {}", base + a, base + b).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use affgrasp_core::geometry::GraspPose;
    use affgrasp_core::synthdata::AffordanceLabel;

    #[test]
    fn counts_match_header() {
        let spec = GripperSpec::default();
        let cloud = vec![Vec3::zeros(); 10];
        let heat = vec![0.5; 10];
        let cand = GraspCandidate { pose: GraspPose::identity(), task: AffordanceLabel::Grasp, coarse_score: 0.9, vision_distance: None, fused_score: None };
        let ply = render_ply(&cloud, &heat, &[cand; 3], &spec);
        assert!(ply.contains("element vertex 31\n"));
        assert!(ply.contains("element edge 15\n"));
        let body: Vec<&str> = ply.split("end_header\n").nth(1).unwrap().lines().collect();
        assert_eq!(body.len(), 31 + 15);
        assert_eq!(body[31], "10 11");
        assert_eq!(body.last().unwrap().split(' ').count(), 2);
    }
}
