//! Coarse-to-fine candidate generation.
//!
//! Coarse grasps come from the generator and are ranked by evaluator
//! confidence `S_C`. The affordance heatmap of the task gives a region of its
//! highest-valued points; each surviving grasp gets the distance `S_V` from
//! its middle control point to that region. Since `S_C` is a probability and
//! `S_V` a distance, the distance is first mapped to a similarity
//! `exp(-S_V / tau)` so that a larger fused score `S_F` is always better.
//! All distances are in the units of the cloud passed in (normalized view
//! units in the pipeline), which is also the unit of `tau`.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grasp_to_control_points, GraspPose, GripperSpec, Vec3};
use crate::netcore::{sample_latent, AffordanceNet, Evaluator, Generator};
use crate::synthdata::AffordanceLabel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionConfig {
    pub n_coarse: usize,
    pub keep: usize,
    /// Size of the affordance region.
    pub top_k: usize,
    pub filter_sigma: f64,
    /// Heatmap values below this never enter the region.
    pub min_value: f64,
    pub tau: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub success_threshold: f64,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            n_coarse: 3000,
            keep: 20,
            top_k: 100,
            filter_sigma: 2.0,
            min_value: 0.5,
            tau: 0.02,
            alpha1: 0.5,
            alpha2: 0.5,
            success_threshold: 0.5,
            seed: 0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_coarse == 0 || self.keep == 0 || self.top_k == 0 {
            return Err(Error::InvalidInput("n_coarse, keep and top_k must be positive".into()));
        }
        if !(self.tau > 0.0 && self.filter_sigma > 0.0) {
            return Err(Error::InvalidInput("tau and filter_sigma must be positive".into()));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(Error::InvalidInput("fusion weights must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub pose: GraspPose,
    pub task: AffordanceLabel,
    pub coarse_score: f64,
    pub vision_distance: Option<f64>,
    pub fused_score: Option<f64>,
}

/// The highest-valued heatmap points, values descending.
#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceRegion {
    pub indices: Vec<usize>,
    pub points: Vec<Vec3>,
    pub values: Vec<f64>,
}

impl AffordanceRegion {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Indices of `pts` lying more than `k` robust deviations from the
/// coordinate-wise median. The deviation is `1.4826 * median distance`,
/// floored at 1e-6.
fn outliers(pts: &[Vec3], k: f64) -> Vec<usize> {
    let centre = Vec3::new(
        median(pts.iter().map(|p| p.x).collect()),
        median(pts.iter().map(|p| p.y).collect()),
        median(pts.iter().map(|p| p.z).collect()),
    );
    let dist: Vec<f64> = pts.iter().map(|p| (p - centre).norm()).collect();
    let sigma = (1.4826 * median(dist.clone())).max(1e-6);
    dist.iter().enumerate().filter(|(_, &d)| d > k * sigma).map(|(i, _)| i).collect()
}

/// The `k` highest-valued points with values of at least `min_value`,
/// dropping points far from the bulk of the selection and refilling from
/// the next-ranked points.
pub fn top_affordance_points(values: &[f64], cloud: &[Vec3], k: usize, filter_sigma: f64, min_value: f64) -> Result<AffordanceRegion> {
    if values.len() != cloud.len() {
        return Err(Error::InvalidInput(format!("{} heatmap values for {} points", values.len(), cloud.len())));
    }
    if k == 0 || k > cloud.len() {
        return Err(Error::InvalidInput(format!("region size {k} must lie in 1..={}", cloud.len())));
    }
    let mut ranked: Vec<usize> = (0..values.len()).filter(|&i| values[i] >= min_value && values[i] > 0.0).collect();
    if ranked.is_empty() {
        return Err(Error::EmptyRegion(format!("no heatmap value reaches {min_value}")));
    }
    ranked.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut next = k.min(ranked.len());
    let mut chosen: Vec<usize> = ranked[..next].to_vec();
    loop {
        let pts: Vec<Vec3> = chosen.iter().map(|&i| cloud[i]).collect();
        let drop = outliers(&pts, filter_sigma);
        if drop.is_empty() {
            break;
        }
        chosen = chosen.iter().enumerate().filter(|(j, _)| !drop.contains(j)).map(|(_, &i)| i).collect();
        while chosen.len() < k && next < ranked.len() {
            chosen.push(ranked[next]);
            next += 1;
        }
        if chosen.len() < 2 {
            break;
        }
    }
    chosen.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(AffordanceRegion { points: chosen.iter().map(|&i| cloud[i]).collect(), values: chosen.iter().map(|&i| values[i]).collect(), indices: chosen })
}

/// Smallest distance from the middle control point of `pose` to the region.
pub fn vision_guided_score(pose: &GraspPose, region: &AffordanceRegion, spec: &GripperSpec) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::EmptyRegion("vision-guided score needs region points".into()));
    }
    let mid = grasp_to_control_points(pose, spec).mid(spec);
    Ok(region.points.iter().map(|p| (p - mid).norm()).fold(f64::INFINITY, f64::min))
}

pub fn distance_to_similarity(s_v: f64, tau: f64) -> f64 {
    (-s_v / tau).exp()
}

pub fn fuse_scores(s_c: f64, similarity: f64, alpha1: f64, alpha2: f64) -> f64 {
    alpha1 * s_c + alpha2 * similarity
}

fn by_coarse(a: &GraspCandidate, b: &GraspCandidate) -> Ordering {
    b.coarse_score.total_cmp(&a.coarse_score)
}

/// Scores coarse-ranked candidates against a region and re-sorts them by
/// fused score; ties keep the coarse order.
pub fn rank_fine(coarse: &[GraspCandidate], region: &AffordanceRegion, spec: &GripperSpec, cfg: &FusionConfig) -> Result<Vec<GraspCandidate>> {
    let mut out = coarse
        .iter()
        .map(|c| {
            let s_v = vision_guided_score(&c.pose, region, spec)?;
            let s_f = fuse_scores(c.coarse_score, distance_to_similarity(s_v, cfg.tau), cfg.alpha1, cfg.alpha2);
            Ok(GraspCandidate { vision_distance: Some(s_v), fused_score: Some(s_f), ..*c })
        })
        .collect::<Result<Vec<_>>>()?;
    // Stable sort: equal fused scores stay in coarse order.
    out.sort_by(|a, b| b.fused_score.unwrap_or(f64::NEG_INFINITY).total_cmp(&a.fused_score.unwrap_or(f64::NEG_INFINITY)));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineResult {
    /// Best `keep` candidates, best first.
    pub candidates: Vec<GraspCandidate>,
    /// Set when the region was empty and the ranking is the coarse one.
    pub coarse_only: bool,
    pub generated: usize,
    /// Coarse candidates at or above the success threshold.
    pub survivors: usize,
    pub region: Option<AffordanceRegion>,
    /// All survivors in coarse order.
    pub coarse: Vec<GraspCandidate>,
}

/// Samples `n_coarse` grasps, keeps those the evaluator scores at or above
/// the success threshold, and re-ranks them by fused score (or by `S_C`
/// alone when the task's heatmap region is empty). `spec` must be in the
/// units of `cloud`.
pub fn generate_fine_candidates(
    generator: &Generator,
    evaluator: &Evaluator,
    affordance: &AffordanceNet,
    cloud: &[Vec3],
    task: AffordanceLabel,
    spec: &GripperSpec,
    cfg: &FusionConfig,
) -> Result<FineResult> {
    cfg.validate()?;
    generator.stream(task)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let latents = (0..cfg.n_coarse).map(|_| sample_latent(&mut rng, generator.config.latent_len)).collect::<Result<Vec<_>>>()?;
    let poses = generator.generate(cloud, &latents, task)?;
    let scores = evaluator.score(cloud, &poses, spec)?;
    let mut coarse: Vec<GraspCandidate> = poses
        .iter()
        .zip(&scores)
        .filter(|(_, &s)| s >= cfg.success_threshold)
        .map(|(p, &s)| GraspCandidate { pose: *p, task, coarse_score: s, vision_distance: None, fused_score: None })
        .collect();
    if coarse.is_empty() {
        return Err(Error::NoCandidate { generated: poses.len(), threshold: cfg.success_threshold });
    }
    coarse.sort_by(by_coarse);
    let heat = affordance.forward(cloud)?;
    let k = cfg.top_k.min(cloud.len());
    let (candidates, coarse_only, region) = match top_affordance_points(&heat.row(task), cloud, k, cfg.filter_sigma, cfg.min_value) {
        Ok(region) => (rank_fine(&coarse, &region, spec, cfg)?, false, Some(region)),
        Err(Error::EmptyRegion(_)) => (coarse.clone(), true, None),
        Err(e) => return Err(e),
    };
    Ok(FineResult {
        candidates: candidates.into_iter().take(cfg.keep).collect(),
        coarse_only,
        generated: poses.len(),
        survivors: coarse.len(),
        region,
        coarse,
    })
}

/// One ranked candidate as exported to JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub quat: [f64; 4],
    pub trans: [f64; 3],
    pub task: AffordanceLabel,
    #[serde(rename = "S_C")]
    pub s_c: f64,
    #[serde(rename = "S_V")]
    pub s_v: Option<f64>,
    #[serde(rename = "S_F")]
    pub s_f: Option<f64>,
    pub rank: usize,
}

impl CandidateRecord {
    pub fn from_ranked(candidates: &[GraspCandidate]) -> Vec<CandidateRecord> {
        candidates
            .iter()
            .enumerate()
            .map(|(rank, c)| {
                let t = c.pose.trans();
                CandidateRecord {
                    quat: c.pose.quat(),
                    trans: [t.x, t.y, t.z],
                    task: c.task,
                    s_c: c.coarse_score,
                    s_v: c.vision_distance,
                    s_f: c.fused_score,
                    rank,
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn far_point_is_replaced_by_next_rank() {
        let cloud = [v(0.0, 0.0, 0.0), v(0.01, 0.0, 0.0), v(10.0, 0.0, 0.0), v(0.0, 0.01, 0.0)];
        let values = [0.9, 0.8, 0.7, 0.6];
        let r = top_affordance_points(&values, &cloud, 3, 2.0, 0.5).unwrap();
        assert_eq!(r.indices, vec![0, 1, 3]);
        assert_eq!(r.values, vec![0.9, 0.8, 0.6]);
    }

    #[test]
    fn tight_cluster_is_kept_whole() {
        let cloud: Vec<Vec3> = (0..20).map(|i| v(i as f64 * 1e-3, 0.0, 0.0)).chain((0..30).map(|i| v(5.0, i as f64, 0.0))).collect();
        let values: Vec<f64> = (0..50).map(|i| if i < 20 { 1.0 - i as f64 * 0.01 } else { 0.0 }).collect();
        let r = top_affordance_points(&values, &cloud, 20, 2.0, 0.5).unwrap();
        assert_eq!(r.indices, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn empty_heatmap_is_an_error() {
        let cloud = [v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)];
        assert!(matches!(top_affordance_points(&[0.0, 0.0], &cloud, 1, 2.0, 0.5), Err(Error::EmptyRegion(_))));
        assert!(matches!(top_affordance_points(&[0.3, 0.2], &cloud, 1, 2.0, 0.5), Err(Error::EmptyRegion(_))));
    }

    fn region(points: Vec<Vec3>) -> AffordanceRegion {
        let n = points.len();
        AffordanceRegion { indices: (0..n).collect(), values: vec![1.0; n], points }
    }

    /// Pose whose middle control point lands on `target`.
    fn pose_with_mid_at(target: Vec3, spec: &GripperSpec) -> GraspPose {
        let mid = grasp_to_control_points(&GraspPose::identity(), spec).mid(spec);
        GraspPose::from_translation(target - mid)
    }

    #[test]
    fn vision_score_examples() {
        let spec = GripperSpec::default();
        let r = region(vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0)]);
        let p = pose_with_mid_at(v(0.2, 0.0, 0.0), &spec);
        assert!((vision_guided_score(&p, &r, &spec).unwrap() - 0.2).abs() < 1e-12);
        let on = pose_with_mid_at(v(1.0, 0.0, 0.0), &spec);
        assert!(vision_guided_score(&on, &r, &spec).unwrap() < 1e-12);
    }

    #[test]
    fn similarity_and_fusion_examples() {
        assert_eq!(distance_to_similarity(0.0, 0.02), 1.0);
        assert!((distance_to_similarity(0.02, 0.02) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(distance_to_similarity(0.1, 0.02) < distance_to_similarity(0.05, 0.02));
        assert!((fuse_scores(0.8, 1.0, 0.5, 0.5) - 0.9).abs() < 1e-15);
    }

    fn candidates(scores: &[f64], mids: &[Vec3], spec: &GripperSpec) -> Vec<GraspCandidate> {
        let mut c: Vec<GraspCandidate> = scores
            .iter()
            .zip(mids)
            .map(|(&s, &m)| GraspCandidate { pose: pose_with_mid_at(m, spec), task: AffordanceLabel::Grasp, coarse_score: s, vision_distance: None, fused_score: None })
            .collect();
        c.sort_by(by_coarse);
        c
    }

    #[test]
    fn equal_confidence_prefers_the_region() {
        let spec = GripperSpec::default();
        let r = region(vec![v(0.0, 0.0, 0.0)]);
        let c = candidates(&[0.7, 0.7], &[v(0.5, 0.0, 0.0), v(0.0, 0.0, 0.0)], &spec);
        let ranked = rank_fine(&c, &r, &spec, &FusionConfig::default()).unwrap();
        assert!(ranked[0].vision_distance.unwrap() < 1e-12);
    }

    #[test]
    fn mixed_weights_are_not_invariant_to_rescaled_similarity() {
        // S_C = (0.9, 0.6), S_V = (0.04, 0): with similarity exp(-d/tau) the
        // near grasp wins; squaring the similarity flips the order.
        let tau = 0.02;
        let (a, b) = ((0.9, 0.04), (0.6, 0.0));
        let fused = |s: (f64, f64), f: &dyn Fn(f64) -> f64| fuse_scores(s.0, f(distance_to_similarity(s.1, tau)), 0.5, 0.5);
        assert!(fused(b, &|x| x) > fused(a, &|x| x));
        assert!(fused(b, &|x| x * 0.1) < fused(a, &|x| x * 0.1));
        let only = |s: (f64, f64), f: &dyn Fn(f64) -> f64| fuse_scores(s.0, f(distance_to_similarity(s.1, tau)), 0.0, 1.0);
        assert!((only(b, &|x| x) > only(a, &|x| x)) == (only(b, &|x| x * 0.1) > only(a, &|x| x * 0.1)));
    }

    proptest! {
        #[test]
        fn zero_alpha2_keeps_coarse_order(
            raw in prop::collection::vec((0.5f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..20),
        ) {
            let spec = GripperSpec::default();
            let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
            let mids: Vec<Vec3> = raw.iter().map(|r| v(r.1, r.2, 0.0)).collect();
            let c = candidates(&scores, &mids, &spec);
            let r = region(vec![v(0.0, 0.0, 0.0), v(0.3, 0.3, 0.0)]);
            let cfg = FusionConfig { alpha2: 0.0, ..FusionConfig::default() };
            let ranked = rank_fine(&c, &r, &spec, &cfg).unwrap();
            prop_assert_eq!(ranked.iter().map(|x| x.pose).collect::<Vec<_>>(), c.iter().map(|x| x.pose).collect::<Vec<_>>());
        }

        #[test]
        fn vision_score_is_rigidly_invariant_and_monotone(
            pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..10),
            extra in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            t in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            angle in -3.0f64..3.0,
        ) {
            let spec = GripperSpec::default();
            let pts: Vec<Vec3> = pts.into_iter().map(|p| v(p.0, p.1, p.2)).collect();
            let pose = GraspPose::new([0.9, 0.1, -0.3, 0.2], v(0.1, 0.2, 0.3)).unwrap();
            let base = vision_guided_score(&pose, &region(pts.clone()), &spec).unwrap();
            let rot = crate::geometry::axis_angle(&v(1.0, 2.0, 3.0), angle);
            let tr = v(t.0, t.1, t.2);
            let moved: Vec<Vec3> = pts.iter().map(|p| rot * p + tr).collect();
            let moved_score = vision_guided_score(&pose.transformed(&rot, &tr), &region(moved), &spec).unwrap();
            prop_assert!((base - moved_score).abs() < 1e-9);
            let mut more = pts.clone();
            more.push(v(extra.0, extra.1, extra.2));
            prop_assert!(vision_guided_score(&pose, &region(more), &spec).unwrap() <= base);
        }

        #[test]
        fn region_is_a_subset_with_sorted_values(
            raw in prop::collection::vec((0.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 5..40),
            k in 1usize..5,
        ) {
            let cloud: Vec<Vec3> = raw.iter().map(|r| v(r.1, r.2, 0.0)).collect();
            let values: Vec<f64> = raw.iter().map(|r| r.0).collect();
            if let Ok(r) = top_affordance_points(&values, &cloud, k, 2.0, 0.5) {
                prop_assert!(r.len() <= k);
                for (j, &i) in r.indices.iter().enumerate() {
                    prop_assert_eq!(r.points[j], cloud[i]);
                    prop_assert_eq!(r.values[j], values[i]);
                    prop_assert!(values[i] >= 0.5);
                }
                prop_assert!(r.values.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}
