//! Procedural object surfaces built from analytic primitives.
//!
//! Every primitive carries the part tag of the points it emits, so tags are
//! exact by construction. Points are allocated to primitives in proportion to
//! surface area and sampled uniformly on each.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Category, ObjectRecord, PartTag};
use crate::geometry::{largest_remainder, PointCloud, Vec3};

#[derive(Clone, Debug)]
enum Shape {
    /// Lateral surface of a z-aligned cylinder centred on the z axis.
    Cylinder { radius: f64, z0: f64, z1: f64, outward: bool },
    /// Flat ring at height `z`, normal `+z` if `up`.
    Annulus { r_in: f64, r_out: f64, z: f64, up: bool },
    /// Lateral surface of a cone frustum, radius `r0` at `z0` to `r1` at `z1`.
    Frustum { r0: f64, z0: f64, r1: f64, z1: f64 },
    /// Sphere zone between local heights `h0 < h1` (relative to `center`).
    Zone { center: Vec3, radius: f64, h0: f64, h1: f64, outward: bool },
    /// Torus with ring in the plane spanned by `e1, e2`, swept over angles `[t0, t1]`.
    Torus { center: Vec3, e1: Vec3, e2: Vec3, major: f64, minor: f64, t0: f64, t1: f64 },
    /// Rectangle with centre, half-axes `u, v` and unit normal.
    Rect { center: Vec3, u: Vec3, v: Vec3, normal: Vec3 },
}

impl Shape {
    fn area(&self) -> f64 {
        match *self {
            Shape::Cylinder { radius, z0, z1, .. } => TAU * radius * (z1 - z0),
            Shape::Annulus { r_in, r_out, .. } => PI * (r_out * r_out - r_in * r_in),
            Shape::Frustum { r0, z0, r1, z1 } => PI * (r0 + r1) * ((r0 - r1).powi(2) + (z1 - z0).powi(2)).sqrt(),
            Shape::Zone { radius, h0, h1, .. } => TAU * radius * (h1 - h0),
            Shape::Torus { major, minor, t0, t1, .. } => TAU * minor * major * (t1 - t0),
            Shape::Rect { u, v, .. } => 4.0 * u.norm() * v.norm(),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> (Vec3, Vec3) {
        match *self {
            Shape::Cylinder { radius, z0, z1, outward } => {
                let t = rng.gen_range(0.0..TAU);
                let z = rng.gen_range(z0..z1);
                let n = Vec3::new(t.cos(), t.sin(), 0.0);
                (Vec3::new(radius * t.cos(), radius * t.sin(), z), if outward { n } else { -n })
            }
            Shape::Annulus { r_in, r_out, z, up } => {
                let r = rng.gen_range(r_in * r_in..r_out * r_out).sqrt();
                let t = rng.gen_range(0.0..TAU);
                (Vec3::new(r * t.cos(), r * t.sin(), z), if up { Vec3::z() } else { -Vec3::z() })
            }
            Shape::Frustum { r0, z0, r1, z1 } => {
                let rmax = r0.max(r1);
                let s = loop {
                    let s: f64 = rng.gen();
                    if rng.gen::<f64>() * rmax <= r0 + (r1 - r0) * s {
                        break s;
                    }
                };
                let r = r0 + (r1 - r0) * s;
                let z = z0 + (z1 - z0) * s;
                let t = rng.gen_range(0.0..TAU);
                let n = Vec3::new(t.cos() * (z1 - z0), t.sin() * (z1 - z0), r0 - r1).normalize();
                (Vec3::new(r * t.cos(), r * t.sin(), z), n)
            }
            Shape::Zone { center, radius, h0, h1, outward } => {
                let h = rng.gen_range(h0..h1);
                let t = rng.gen_range(0.0..TAU);
                let rho = (radius * radius - h * h).max(0.0).sqrt();
                let local = Vec3::new(rho * t.cos(), rho * t.sin(), h);
                let n = local / radius;
                (center + local, if outward { n } else { -n })
            }
            Shape::Torus { center, e1, e2, major, minor, t0, t1 } => {
                let axis = e1.cross(&e2);
                loop {
                    let t = rng.gen_range(t0..t1);
                    let phi = rng.gen_range(0.0..TAU);
                    if rng.gen::<f64>() * (major + minor) > major + minor * phi.cos() {
                        continue;
                    }
                    let u = e1 * t.cos() + e2 * t.sin();
                    let n = u * phi.cos() + axis * phi.sin();
                    return (center + u * major + n * minor, n);
                }
            }
            Shape::Rect { center, u, v, normal } => {
                let a = rng.gen_range(-1.0..1.0);
                let b = rng.gen_range(-1.0..1.0);
                (center + u * a + v * b, normal)
            }
        }
    }
}

/// Six faces of a box rotated by `yaw` about z.
fn box_faces(center: Vec3, half: Vec3, yaw: f64, tag: PartTag) -> Vec<(Shape, PartTag)> {
    let (s, c) = yaw.sin_cos();
    let ex = Vec3::new(c, s, 0.0);
    let ey = Vec3::new(-s, c, 0.0);
    let ez = Vec3::z();
    let axes = [(ex, half.x), (ey, half.y), (ez, half.z)];
    let mut out = Vec::new();
    for k in 0..3 {
        let (n, h) = axes[k];
        let (u, hu) = axes[(k + 1) % 3];
        let (v, hv) = axes[(k + 2) % 3];
        for sign in [1.0, -1.0] {
            out.push((Shape::Rect { center: center + n * (h * sign), u: u * hu, v: v * hv, normal: n * sign }, tag));
        }
    }
    out
}

struct Builder {
    parts: Vec<(Shape, PartTag)>,
    params: BTreeMap<String, f64>,
}

impl Builder {
    fn new() -> Self {
        Self { parts: Vec::new(), params: BTreeMap::new() }
    }

    fn param<R: Rng>(&mut self, rng: &mut R, name: &str, lo: f64, hi: f64) -> f64 {
        let v = rng.gen_range(lo..hi);
        self.params.insert(name.to_string(), v);
        v
    }

    fn add(&mut self, shape: Shape, tag: PartTag) {
        self.parts.push((shape, tag));
    }

    fn build<R: Rng>(self, rng: &mut R, n: usize, id: String, category: Category, seed: u64) -> ObjectRecord {
        let areas: Vec<f64> = self.parts.iter().map(|(s, _)| s.area()).collect();
        let counts = largest_remainder(&areas, n);
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        for ((shape, tag), &count) in self.parts.iter().zip(&counts) {
            for _ in 0..count {
                let (p, nrm) = shape.sample(rng);
                points.push(p);
                normals.push(nrm.normalize());
                tags.push(*tag);
            }
        }
        let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / points.len() as f64;
        for p in &mut points {
            *p -= centroid;
        }
        let mut params = self.params;
        params.insert("centroid_x".into(), centroid.x);
        params.insert("centroid_y".into(), centroid.y);
        params.insert("centroid_z".into(), centroid.z);
        let surface = PointCloud::with_normals(points, normals).expect("primitive samples are finite with unit normals");
        ObjectRecord { id, category, seed, params, surface, tags }
    }
}

pub fn object_id(category: Category, seed: u64) -> String {
    format!("{}_{:04}", category.name(), seed)
}

/// Generates an object of `category` with `n_surface_points` surface samples.
///
/// Deterministic in `(category, seed, n_surface_points)`. The surface is
/// re-centred on its centroid; dimensions are in metres.
pub fn make_object(category: Category, seed: u64, n_surface_points: usize) -> ObjectRecord {
    assert!(n_surface_points >= 512, "objects need at least 512 surface points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((category as u64 + 1) << 40));
    let mut b = Builder::new();
    let id = object_id(category, seed);
    match category {
        Category::Mug => {
            let r = b.param(&mut rng, "radius", 0.030, 0.035);
            let h = b.param(&mut rng, "height", 0.085, 0.105);
            let a = b.param(&mut rng, "handle_major", 0.022, 0.027);
            let (t, band, tb, minor) = (0.004, 0.012, 0.006, 0.0055);
            b.add(Shape::Cylinder { radius: r, z0: 0.0, z1: h - band, outward: true }, PartTag::Body);
            b.add(Shape::Cylinder { radius: r, z0: h - band, z1: h, outward: true }, PartTag::Rim);
            b.add(Shape::Cylinder { radius: r - t, z0: tb, z1: h - band, outward: false }, PartTag::Interior);
            b.add(Shape::Cylinder { radius: r - t, z0: h - band, z1: h, outward: false }, PartTag::Rim);
            b.add(Shape::Annulus { r_in: r - t, r_out: r, z: h, up: true }, PartTag::Rim);
            b.add(Shape::Annulus { r_in: 0.0, r_out: r, z: 0.0, up: false }, PartTag::Body);
            b.add(Shape::Annulus { r_in: 0.0, r_out: r - t, z: tb, up: true }, PartTag::Interior);
            // Half torus in the xz plane, attached to the outer wall.
            let cut = (minor / a).asin();
            b.add(
                Shape::Torus {
                    center: Vec3::new(r, 0.0, h * 0.5),
                    e1: Vec3::x(),
                    e2: Vec3::z(),
                    major: a,
                    minor,
                    t0: -FRAC_PI_2 + cut,
                    t1: FRAC_PI_2 - cut,
                },
                PartTag::Handle,
            );
        }
        Category::Bottle => {
            let r = b.param(&mut rng, "radius", 0.028, 0.034);
            let hb = b.param(&mut rng, "body_height", 0.11, 0.14);
            let rn = b.param(&mut rng, "neck_radius", 0.012, 0.015);
            let ln = b.param(&mut rng, "neck_length", 0.035, 0.045);
            let (hs, band) = (0.03, 0.01);
            let top = hb + hs + ln;
            b.add(Shape::Cylinder { radius: r, z0: 0.0, z1: hb, outward: true }, PartTag::Body);
            b.add(Shape::Annulus { r_in: 0.0, r_out: r, z: 0.0, up: false }, PartTag::Body);
            b.add(Shape::Frustum { r0: r, z0: hb, r1: rn, z1: hb + hs }, PartTag::Body);
            b.add(Shape::Cylinder { radius: rn, z0: hb + hs, z1: top - band, outward: true }, PartTag::Neck);
            b.add(Shape::Cylinder { radius: rn, z0: top - band, z1: top, outward: true }, PartTag::Rim);
            b.add(Shape::Annulus { r_in: 0.0, r_out: rn, z: top, up: true }, PartTag::Rim);
        }
        Category::Bowl => {
            let ro = b.param(&mut rng, "radius", 0.055, 0.07);
            let (t, band) = (0.004, 0.012);
            let ri = ro - t;
            let c = Vec3::new(0.0, 0.0, ro);
            b.add(Shape::Zone { center: c, radius: ro, h0: -ro, h1: -band, outward: true }, PartTag::Body);
            b.add(Shape::Zone { center: c, radius: ro, h0: -band, h1: 0.0, outward: true }, PartTag::Rim);
            b.add(Shape::Zone { center: c, radius: ri, h0: -ri, h1: -band, outward: false }, PartTag::Interior);
            b.add(Shape::Zone { center: c, radius: ri, h0: -band, h1: 0.0, outward: false }, PartTag::Rim);
            b.add(Shape::Annulus { r_in: ri, r_out: ro, z: ro, up: true }, PartTag::Rim);
        }
        Category::Hat => {
            let rd = b.param(&mut rng, "dome_radius", 0.075, 0.09);
            let w = b.param(&mut rng, "brim_width", 0.03, 0.045);
            let (t, tb) = (0.004, 0.004);
            let o = Vec3::zeros();
            b.add(Shape::Zone { center: o, radius: rd, h0: 0.0, h1: rd, outward: true }, PartTag::Dome);
            b.add(Shape::Zone { center: o, radius: rd - t, h0: 0.0, h1: rd - t, outward: false }, PartTag::Dome);
            b.add(Shape::Annulus { r_in: rd, r_out: rd + w, z: 0.0, up: true }, PartTag::Brim);
            b.add(Shape::Annulus { r_in: rd - t, r_out: rd + w, z: -tb, up: false }, PartTag::Brim);
            b.add(Shape::Cylinder { radius: rd + w, z0: -tb, z1: 0.0, outward: true }, PartTag::Brim);
        }
        Category::Knife => {
            let lh = b.param(&mut rng, "handle_length", 0.09, 0.11);
            let lb = b.param(&mut rng, "blade_length", 0.11, 0.14);
            let hh = b.param(&mut rng, "handle_half_width", 0.008, 0.010);
            for f in box_faces(Vec3::new(-lh / 2.0, 0.0, 0.0), Vec3::new(lh / 2.0, hh, 0.007), 0.0, PartTag::Handle) {
                b.add(f.0, f.1);
            }
            for f in box_faces(Vec3::new(lb / 2.0, 0.0, 0.005), Vec3::new(lb / 2.0, 0.0012, 0.012), 0.0, PartTag::Blade) {
                b.add(f.0, f.1);
            }
        }
        Category::Scissor => {
            let lb = b.param(&mut rng, "blade_length", 0.08, 0.1);
            let spread = b.param(&mut rng, "spread", 0.10, 0.16);
            let ring = b.param(&mut rng, "ring_major", 0.012, 0.015);
            let minor = 0.0035;
            for (sign, dz) in [(1.0, 0.0016), (-1.0, -0.0016)] {
                let yaw = sign * spread / 2.0;
                let len = lb + 0.02;
                let (s, c) = yaw.sin_cos();
                let center = Vec3::new(c, s, 0.0) * (len / 2.0 - 0.02) + Vec3::new(0.0, 0.0, dz);
                for f in box_faces(center, Vec3::new(len / 2.0, 0.006, 0.0015), yaw, PartTag::Blade) {
                    b.add(f.0, f.1);
                }
                b.add(
                    Shape::Torus {
                        center: Vec3::new(-0.02 - ring, sign * (ring + 0.004), dz),
                        e1: Vec3::x(),
                        e2: Vec3::y(),
                        major: ring,
                        minor,
                        t0: 0.0,
                        t1: TAU,
                    },
                    PartTag::RingHandle,
                );
            }
        }
    }
    b.build(&mut rng, n_surface_points, id, category, seed)
}

/// A closed cylinder (side plus caps) tagged as body; used as a probe object.
pub fn cylinder(radius: f64, height: f64, n: usize, seed: u64) -> ObjectRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new();
    b.params.insert("radius".into(), radius);
    b.params.insert("height".into(), height);
    b.add(Shape::Cylinder { radius, z0: 0.0, z1: height, outward: true }, PartTag::Body);
    b.add(Shape::Annulus { r_in: 0.0, r_out: radius, z: 0.0, up: false }, PartTag::Body);
    b.add(Shape::Annulus { r_in: 0.0, r_out: radius, z: height, up: true }, PartTag::Body);
    b.build(&mut rng, n, format!("cylinder_{seed:04}"), Category::Bottle, seed)
}

/// A thin square plate in the yz plane (normals `±x`), `side` wide, `thickness` thick.
pub fn plate(side: f64, thickness: f64, n: usize, seed: u64) -> ObjectRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::new();
    for f in box_faces(Vec3::zeros(), Vec3::new(thickness / 2.0, side / 2.0, side / 2.0), 0.0, PartTag::Handle) {
        b.add(f.0, f.1);
    }
    b.build(&mut rng, n, format!("plate_{seed:04}"), Category::Knife, seed)
}
