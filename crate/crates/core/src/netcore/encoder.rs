//! Two-level set-abstraction encoder with global max pooling.
//!
//! Neighbourhoods are computed outside the graph from coordinates alone, so
//! the trainable part only sees constant grouped inputs. Centroid selection
//! starts from the point farthest from the cloud centroid (ties broken by
//! coordinates), which keeps the whole encoder a function of the point set
//! rather than of the point order.

use std::cmp::Ordering;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps_points, Vec3};
use crate::tape::{Mat, Mlp, ParamStore, Tape, Var};

/// One abstraction level: FPS centroids, ball-query neighbourhoods, shared MLP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaLevel {
    pub centroids: usize,
    pub radius: f64,
    pub neighbors: usize,
    pub mlp: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub sa1: SaLevel,
    pub sa2: SaLevel,
    /// Per-centroid MLP before the global max pool; the last width is the
    /// feature size.
    pub global: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            sa1: SaLevel { centroids: 512, radius: 0.2, neighbors: 32, mlp: vec![64, 64, 128] },
            sa2: SaLevel { centroids: 128, radius: 0.4, neighbors: 64, mlp: vec![128, 128, 256] },
            global: vec![256, 512, 1024],
        }
    }
}

impl EncoderConfig {
    /// Narrow encoder for CPU-sized experiments.
    pub fn desk() -> Self {
        Self {
            sa1: SaLevel { centroids: 32, radius: 0.2, neighbors: 16, mlp: vec![16, 16, 32] },
            sa2: SaLevel { centroids: 8, radius: 0.4, neighbors: 16, mlp: vec![32, 32, 64] },
            global: vec![64, 128],
        }
    }

    pub fn out_width(&self) -> usize {
        *self.global.last().expect("encoder has a global MLP")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [("sa1", &self.sa1), ("sa2", &self.sa2)] {
            if l.centroids == 0 || l.neighbors == 0 || l.mlp.is_empty() || !(l.radius > 0.0) {
                return Err(Error::InvalidInput(format!("encoder level {name} needs centroids, neighbors, radius and widths")));
            }
        }
        if self.global.is_empty() {
            return Err(Error::InvalidInput("encoder global MLP is empty".into()));
        }
        Ok(())
    }
}

/// Precomputed neighbourhoods of one point set for both abstraction levels.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    pub n_points: usize,
    /// Indices into the input points.
    pub l1_centers: Vec<usize>,
    /// `l1_centers.len() * sa1.neighbors` indices into the input points.
    pub l1_neighbors: Vec<usize>,
    pub l1_rel: Vec<Vec3>,
    /// Indices into `l1_centers`.
    pub l2_centers: Vec<usize>,
    pub l2_neighbors: Vec<usize>,
    pub l2_rel: Vec<Vec3>,
    pub l2_xyz: Vec<Vec3>,
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Start index for order-independent FPS: farthest from the centroid, ties by coordinates.
fn fps_start(points: &[Vec3]) -> usize {
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let d = (p - c).norm_squared();
        let db = (points[best] - c).norm_squared();
        if d > db || (d == db && lex_cmp(p, &points[best]) == Ordering::Greater) {
            best = i;
        }
    }
    best
}

/// The `k` nearest points within `radius` of `center` (by distance, then
/// coordinates), padded by repeating the nearest.
fn ball_query(points: &[Vec3], center: &Vec3, radius: f64, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut inside: Vec<(f64, usize)> =
        points.iter().enumerate().map(|(i, p)| ((p - center).norm_squared(), i)).filter(|(d, _)| *d <= r2).collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lex_cmp(&points[a.1], &points[b.1])));
    inside.truncate(k);
    let mut out: Vec<usize> = inside.iter().map(|&(_, i)| i).collect();
    let nearest = out[0];
    out.resize(k, nearest);
    out
}

impl Grouping {
    pub fn build(points: &[Vec3], cfg: &EncoderConfig) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("cannot encode an empty point set".into()));
        }
        let s1 = cfg.sa1.centroids.min(points.len());
        let l1_centers = fps_points(points, s1, fps_start(points))?;
        let mut l1_neighbors = Vec::with_capacity(s1 * cfg.sa1.neighbors);
        let mut l1_rel = Vec::with_capacity(s1 * cfg.sa1.neighbors);
        for &c in &l1_centers {
            for j in ball_query(points, &points[c], cfg.sa1.radius, cfg.sa1.neighbors) {
                l1_neighbors.push(j);
                l1_rel.push(points[j] - points[c]);
            }
        }
        let l1_xyz: Vec<Vec3> = l1_centers.iter().map(|&i| points[i]).collect();
        let s2 = cfg.sa2.centroids.min(s1);
        let l2_centers = fps_points(&l1_xyz, s2, fps_start(&l1_xyz))?;
        let mut l2_neighbors = Vec::with_capacity(s2 * cfg.sa2.neighbors);
        let mut l2_rel = Vec::with_capacity(s2 * cfg.sa2.neighbors);
        for &c in &l2_centers {
            for j in ball_query(&l1_xyz, &l1_xyz[c], cfg.sa2.radius, cfg.sa2.neighbors) {
                l2_neighbors.push(j);
                l2_rel.push(l1_xyz[j] - l1_xyz[c]);
            }
        }
        let l2_xyz = l2_centers.iter().map(|&i| l1_xyz[i]).collect();
        Ok(Self { n_points: points.len(), l1_centers, l1_neighbors, l1_rel, l2_centers, l2_neighbors, l2_rel, l2_xyz })
    }

    pub fn l1_count(&self) -> usize {
        self.l1_centers.len()
    }

    pub fn l2_count(&self) -> usize {
        self.l2_centers.len()
    }
}

/// One encoder input: a grouping plus per-point features (`N x F`, `F` may be 0).
pub struct EncoderInput<'a> {
    pub grouping: &'a Grouping,
    pub features: &'a Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub feature_width: usize,
    pub sa1: Mlp,
    pub sa2: Mlp,
    pub global: Mlp,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: &EncoderConfig, feature_width: usize, rng: &mut R) -> Self {
        let sa1 = Mlp::new(store, &format!("{name}.sa1"), 3 + feature_width, &config.sa1.mlp, rng);
        let sa2 = Mlp::new(store, &format!("{name}.sa2"), 3 + sa1.out_width(), &config.sa2.mlp, rng);
        let global = Mlp::new(store, &format!("{name}.global"), 3 + sa2.out_width(), &config.global, rng);
        Self { config: config.clone(), feature_width, sa1, sa2, global }
    }

    pub fn out_width(&self) -> usize {
        self.global.out_width()
    }

    /// Encodes a batch of point sets into a `B x out_width` feature matrix.
    ///
    /// All items must yield the same number of second-level centroids.
    pub fn forward(&self, tape: &mut Tape, items: &[EncoderInput]) -> Result<Var> {
        let Some(first) = items.first() else {
            return Err(Error::InvalidInput("empty encoder batch".into()));
        };
        let s2 = first.grouping.l2_count();
        let k1 = self.config.sa1.neighbors;
        let k2 = self.config.sa2.neighbors;
        let f = self.feature_width;
        let rows1: usize = items.iter().map(|it| it.grouping.l1_count() * k1).sum();
        let mut in1 = Array2::zeros((rows1, 3 + f));
        let mut gather2 = Vec::with_capacity(items.len() * s2 * k2);
        let mut rel2 = Array2::zeros((items.len() * s2 * k2, 3));
        let mut xyz3 = Array2::zeros((items.len() * s2, 3));
        let (mut r1, mut r2, mut offset) = (0, 0, 0);
        for (b, it) in items.iter().enumerate() {
            let g = it.grouping;
            if g.l2_count() != s2 {
                return Err(Error::Shape("encoder batch items differ in centroid count".into()));
            }
            if it.features.dim() != (g.n_points, f) {
                return Err(Error::Shape(format!(
                    "features are {:?}, expected ({}, {f})",
                    it.features.dim(),
                    g.n_points
                )));
            }
            for (&j, rel) in g.l1_neighbors.iter().zip(&g.l1_rel) {
                let mut row = in1.row_mut(r1);
                row[0] = rel.x;
                row[1] = rel.y;
                row[2] = rel.z;
                for c in 0..f {
                    row[3 + c] = it.features[[j, c]];
                }
                r1 += 1;
            }
            for (&j, rel) in g.l2_neighbors.iter().zip(&g.l2_rel) {
                gather2.push(offset + j);
                rel2[[r2, 0]] = rel.x;
                rel2[[r2, 1]] = rel.y;
                rel2[[r2, 2]] = rel.z;
                r2 += 1;
            }
            for (i, p) in g.l2_xyz.iter().enumerate() {
                xyz3[[b * s2 + i, 0]] = p.x;
                xyz3[[b * s2 + i, 1]] = p.y;
                xyz3[[b * s2 + i, 2]] = p.z;
            }
            offset += g.l1_count();
        }
        let x1 = tape.constant(in1);
        let h1 = self.sa1.forward(tape, x1);
        let p1 = tape.segment_max(h1, k1);
        let g2 = tape.gather(p1, gather2);
        let rel2 = tape.constant(rel2);
        let x2 = tape.concat_cols(&[rel2, g2]);
        let h2 = self.sa2.forward(tape, x2);
        let p2 = tape.segment_max(h2, k2);
        let xyz3 = tape.constant(xyz3);
        let x3 = tape.concat_cols(&[xyz3, p2]);
        let h3 = self.global.forward(tape, x3);
        Ok(tape.segment_max(h3, s2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect()
    }

    #[test]
    fn ball_query_pads_with_nearest_and_respects_radius() {
        let pts = vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.5, 0.0, 0.0)];
        assert_eq!(ball_query(&pts, &pts[0], 0.2, 4), vec![0, 1, 0, 0]);
        assert_eq!(ball_query(&pts, &pts[2], 0.2, 2), vec![2, 2]);
    }

    #[test]
    fn grouping_is_order_independent() {
        let pts = cloud(100, 1);
        let cfg = EncoderConfig::desk();
        let g = Grouping::build(&pts, &cfg).unwrap();
        let mut perm: Vec<usize> = (0..pts.len()).rev().collect();
        perm.rotate_left(17);
        let shuffled: Vec<Vec3> = perm.iter().map(|&i| pts[i]).collect();
        let h = Grouping::build(&shuffled, &cfg).unwrap();
        let a: Vec<Vec3> = g.l1_centers.iter().map(|&i| pts[i]).collect();
        let b: Vec<Vec3> = h.l1_centers.iter().map(|&i| shuffled[i]).collect();
        assert_eq!(a, b);
        assert_eq!(g.l2_xyz, h.l2_xyz);
        assert_eq!(g.l1_rel, h.l1_rel);
    }

    #[test]
    fn centroid_counts_clamp_to_small_inputs() {
        let pts = cloud(10, 2);
        let g = Grouping::build(&pts, &EncoderConfig::default()).unwrap();
        assert_eq!(g.l1_count(), 10);
        assert_eq!(g.l2_count(), 10);
        assert_eq!(g.l1_neighbors.len(), 10 * 32);
    }

    #[test]
    fn batch_rows_match_single_items() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cfg = EncoderConfig::desk();
        let enc = Encoder::new(&mut store, "enc", &cfg, 2, &mut rng);
        let (pa, pb) = (cloud(64, 4), cloud(64, 5));
        let (ga, gb) = (Grouping::build(&pa, &cfg).unwrap(), Grouping::build(&pb, &cfg).unwrap());
        let fa = Mat::from_elem((64, 2), 0.3);
        let fb = Mat::from_elem((64, 2), -0.7);
        let mut tape = Tape::new(&store);
        let both = enc
            .forward(&mut tape, &[EncoderInput { grouping: &ga, features: &fa }, EncoderInput { grouping: &gb, features: &fb }])
            .unwrap();
        let single = enc.forward(&mut tape, &[EncoderInput { grouping: &gb, features: &fb }]).unwrap();
        let (both, single) = (tape.value(both).clone(), tape.value(single).clone());
        assert_eq!(both.nrows(), 2);
        assert_eq!(both.row(1), single.row(0));
    }
}
