//! Point-wise affordance network.
//!
//! Three per-point feature branches run side by side: shared per-point
//! convolutions, an edge convolution over the kNN graph followed by a shared
//! perceptron, and a stack of multi-head self-attention layers. Their outputs
//! are concatenated per point and decoded into one logistic value per label.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::knn_graph;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::synthdata::AffordanceLabel;
use crate::tape::{Linear, Mat, Mlp, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffordanceConfig {
    pub conv: Vec<usize>,
    pub edge_conv: usize,
    pub edge_mlp: usize,
    pub k: usize,
    pub attention: Vec<usize>,
    pub heads: usize,
    pub decoder: Vec<usize>,
    pub outputs: usize,
    pub use_point: bool,
    pub use_edge: bool,
    pub use_attention: bool,
}

impl Default for AffordanceConfig {
    fn default() -> Self {
        Self {
            conv: vec![64, 128, 256],
            edge_conv: 64,
            edge_mlp: 512,
            k: 20,
            attention: vec![64, 128],
            heads: 4,
            decoder: vec![512, 256, 128],
            outputs: AffordanceLabel::COUNT,
            use_point: true,
            use_edge: true,
            use_attention: true,
        }
    }
}

impl AffordanceConfig {
    pub fn desk() -> Self {
        Self {
            conv: vec![32, 64, 64],
            edge_conv: 32,
            edge_mlp: 64,
            k: 20,
            attention: vec![32, 32],
            heads: 4,
            decoder: vec![64, 64, 32],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.use_point || self.use_edge || self.use_attention) {
            return Err(Error::InvalidInput("affordance network needs at least one feature branch".into()));
        }
        if self.heads == 0 || self.attention.iter().any(|w| w % self.heads != 0) {
            return Err(Error::InvalidInput("attention widths must be multiples of the head count".into()));
        }
        if self.conv.is_empty() || self.decoder.is_empty() || self.outputs == 0 || self.k == 0 {
            return Err(Error::InvalidInput("affordance widths must be nonempty".into()));
        }
        Ok(())
    }

    /// Width of the concatenated per-point feature.
    pub fn fused_width(&self) -> usize {
        let mut w = 0;
        if self.use_point {
            w += self.conv.last().copied().unwrap_or(0);
        }
        if self.use_edge {
            w += self.edge_mlp;
        }
        if self.use_attention {
            w += self.attention.last().copied().unwrap_or(3);
        }
        w
    }
}

/// Multi-head self-attention over per-point tokens with an output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Mhsa {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl Mhsa {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, width: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            heads,
            q: Linear::new(store, &format!("{name}.q"), fan_in, width, rng),
            k: Linear::new(store, &format!("{name}.k"), fan_in, width, rng),
            v: Linear::new(store, &format!("{name}.v"), fan_in, width, rng),
            out: Linear::new(store, &format!("{name}.out"), width, width, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.out.fan_out
    }

    fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let q = self.q.forward(tape, x);
        let k = self.k.forward(tape, x);
        let v = self.v.forward(tape, x);
        let dh = self.width() / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let qh = tape.slice_cols(q, lo, hi);
            let kh = tape.slice_cols(k, lo, hi);
            let vh = tape.slice_cols(v, lo, hi);
            let scores = tape.matmul_bt(qh, kh);
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            outs.push(tape.matmul(attn, vh));
        }
        let cat = tape.concat_cols(&outs);
        let y = self.out.forward(tape, cat);
        tape.relu(y)
    }
}

/// `M x N` per-label, per-point values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceHeatmap {
    pub values: Mat,
}

impl AffordanceHeatmap {
    pub fn new(values: Mat) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput("heatmap values must lie in [0, 1]".into()));
        }
        Ok(Self { values })
    }

    pub fn labels(&self) -> usize {
        self.values.nrows()
    }

    pub fn points(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, label: AffordanceLabel) -> Vec<f64> {
        self.values.row(label.code()).to_vec()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceNet {
    pub config: AffordanceConfig,
    pub point: Option<Mlp>,
    pub edge: Option<(Linear, Linear)>,
    pub attention: Vec<Mhsa>,
    pub decoder: Mlp,
    pub head: Linear,
    pub params: ParamStore,
}

/// Constant EdgeConv input rows `[x_i, x_j - x_i]` for every kNN edge.
fn edge_features(cloud: &[Vec3], k: usize) -> Result<Mat> {
    let graph = knn_graph(cloud, k)?;
    let mut m = Array2::zeros((cloud.len() * k, 6));
    for (e, (i, j)) in graph.edges().enumerate() {
        let (p, d) = (cloud[i], cloud[j] - cloud[i]);
        for c in 0..3 {
            m[[e, c]] = p[c];
            m[[e, 3 + c]] = d[c];
        }
    }
    Ok(m)
}

fn xyz_matrix(cloud: &[Vec3]) -> Mat {
    Array2::from_shape_fn((cloud.len(), 3), |(r, c)| cloud[r][c])
}

impl AffordanceNet {
    pub const KIND: &'static str = "affordance";

    pub fn new(config: &AffordanceConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let point = config.use_point.then(|| Mlp::new(&mut params, "point", 3, &config.conv, &mut rng));
        let edge = config.use_edge.then(|| {
            (
                Linear::new(&mut params, "edge.conv", 6, config.edge_conv, &mut rng),
                Linear::new(&mut params, "edge.mlp", config.edge_conv, config.edge_mlp, &mut rng),
            )
        });
        let mut attention = Vec::new();
        if config.use_attention {
            let mut prev = 3;
            for (i, &w) in config.attention.iter().enumerate() {
                attention.push(Mhsa::new(&mut params, &format!("mhsa.{i}"), prev, w, config.heads, &mut rng));
                prev = w;
            }
        }
        let decoder = Mlp::new(&mut params, "decoder", config.fused_width(), &config.decoder, &mut rng);
        let head = Linear::new(&mut params, "head", decoder.out_width(), config.outputs, &mut rng);
        Ok(Self { config: config.clone(), point, edge, attention, decoder, head, params })
    }

    /// `N x M` probabilities for a normalized cloud.
    pub fn forward_graph(&self, tape: &mut Tape, cloud: &[Vec3]) -> Result<Var> {
        let xyz = tape.constant(xyz_matrix(cloud));
        let mut parts = Vec::new();
        if let Some(point) = &self.point {
            parts.push(point.forward(tape, xyz));
        }
        if let Some((conv, mlp)) = &self.edge {
            let k = self.config.k.min(cloud.len().saturating_sub(1));
            let e = tape.constant(edge_features(cloud, k)?);
            let h = conv.forward(tape, e);
            let h = tape.relu(h);
            let pooled = tape.segment_max(h, k);
            let h = mlp.forward(tape, pooled);
            parts.push(tape.relu(h));
        }
        if self.config.use_attention {
            let mut x = xyz;
            for layer in &self.attention {
                x = layer.forward(tape, x);
            }
            parts.push(x);
        }
        let fused = if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts) };
        let h = self.decoder.forward(tape, fused);
        let logits = self.head.forward(tape, h);
        Ok(tape.sigmoid(logits))
    }

    pub fn forward(&self, cloud: &[Vec3]) -> Result<AffordanceHeatmap> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_graph(&mut tape, cloud)?;
        AffordanceHeatmap::new(tape.value(out).t().to_owned())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_stores(Self::KIND, &self.config, &[("affordance".to_string(), &self.params)])
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: AffordanceConfig = ckpt.config_as(Self::KIND)?;
        let mut net = Self::new(&config, 0)?;
        ckpt.restore_into("affordance", &mut net.params)?;
        Ok(net)
    }
}
