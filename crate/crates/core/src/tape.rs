//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices.
//!
//! A [`ParamStore`] owns named trainable arrays. A [`Tape`] borrows the store,
//! records a forward computation as a list of nodes, and
//! [`Tape::backward`] accumulates parameter gradients into a [`Grads`]
//! buffer given seed gradients on any set of output nodes. Loss functions
//! live outside the graph and supply those seeds analytically.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Named trainable arrays in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an array; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    /// Glorot-uniform weight matrix `fan_in x fan_out`.
    pub fn add_weight<R: Rng + ?Sized>(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut R) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        let w = Mat::from_shape_simple_fn((fan_in, fan_out), || dist.sample(rng));
        self.add(name, w)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replaces every array from `other`, which must have the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(Error::Checkpoint("parameter names do not match the model".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.dim() != src.dim() {
                return Err(Error::Checkpoint("parameter shapes do not match the model".into()));
            }
            dst.assign(src);
        }
        Ok(())
    }
}

/// Gradient buffer aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Grads {
    slots: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Self { slots: vec![None; store.len()] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.slots[id.0].as_ref()
    }

    fn accumulate(&mut self, id: ParamId, g: &Mat) {
        match &mut self.slots[id.0] {
            Some(acc) => *acc += g,
            slot => *slot = Some(g.clone()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn clear(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat)> {
        self.slots.iter().enumerate().filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`.
    MatMulBt(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Gather(Var, Vec<usize>),
    SegmentMax(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SoftmaxRows(Var),
}

struct Node {
    /// `None` for parameters, whose value lives in the store.
    value: Option<Mat>,
    op: Op,
}

/// A recorded forward computation.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("only parameter nodes are stored by reference"),
        }
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Const)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulBt(a, b))
    }

    /// Adds a `1 x C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        self.push(v, Op::Exp(a))
    }

    /// Rows of `a` picked by `idx` (repeats allowed).
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        self.push(v, Op::Gather(a, idx))
    }

    /// Column-wise max over contiguous groups of `group` rows.
    pub fn segment_max(&mut self, a: Var, group: usize) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        assert!(group > 0 && rows % group == 0, "rows {rows} not divisible by group {group}");
        let out_rows = rows / group;
        let mut out = Mat::zeros((out_rows, cols));
        let mut argmax = vec![0usize; out_rows * cols];
        for g in 0..out_rows {
            for c in 0..cols {
                let mut best = g * group;
                for r in g * group + 1..(g + 1) * group {
                    if x[[r, c]] > x[[best, c]] {
                        best = r;
                    }
                }
                out[[g, c]] = x[[best, c]];
                argmax[g * cols + c] = best;
            }
        }
        self.push(out, Op::SegmentMax(a, argmax))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concatenated parts share a row count");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Back-propagates the seed gradients and adds parameter gradients into `grads`.
    pub fn backward(&self, seeds: &[(Var, Mat)], grads: &mut Grads) {
        let mut g: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, seed) in seeds {
            assert_eq!(seed.dim(), self.value(*v).dim(), "seed shape must match node shape");
            add_grad(&mut g, *v, seed.clone());
        }
        let top = seeds.iter().map(|(v, _)| v.0).max().map_or(0, |m| m + 1);
        for i in (0..top).rev() {
            let Some(gi) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param(id) => grads.accumulate(*id, &gi),
                Op::MatMul(a, b) => {
                    let da = gi.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&gi);
                    add_grad(&mut g, *a, da);
                    add_grad(&mut g, *b, db);
                }
                Op::MatMulBt(a, b) => {
                    let da = gi.dot(self.value(*b));
                    let db = gi.t().dot(self.value(*a));
                    add_grad(&mut g, *a, da);
                    add_grad(&mut g, *b, db);
                }
                Op::AddRow(a, row) => {
                    let dr = gi.sum_axis(Axis(0)).insert_axis(Axis(0));
                    add_grad(&mut g, *row, dr);
                    add_grad(&mut g, *a, gi);
                }
                Op::Add(a, b) => {
                    add_grad(&mut g, *b, gi.clone());
                    add_grad(&mut g, *a, gi);
                }
                Op::Sub(a, b) => {
                    add_grad(&mut g, *b, -&gi);
                    add_grad(&mut g, *a, gi);
                }
                Op::Mul(a, b) => {
                    let da = &gi * self.value(*b);
                    let db = &gi * self.value(*a);
                    add_grad(&mut g, *a, da);
                    add_grad(&mut g, *b, db);
                }
                Op::Scale(a, c) => add_grad(&mut g, *a, gi * *c),
                Op::Relu(a) => {
                    let mut d = gi;
                    d.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    add_grad(&mut g, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = gi;
                    d.zip_mut_with(self.value(Var(i)), |d, &y| *d *= y * (1.0 - y));
                    add_grad(&mut g, *a, d);
                }
                Op::Exp(a) => add_grad(&mut g, *a, gi * self.value(Var(i))),
                Op::Gather(a, idx) => {
                    let mut d = Mat::zeros(self.value(*a).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(src);
                        dst += &gi.row(r);
                    }
                    add_grad(&mut g, *a, d);
                }
                Op::SegmentMax(a, argmax) => {
                    let mut d = Mat::zeros(self.value(*a).dim());
                    let cols = gi.ncols();
                    for ((r, c), &v) in gi.indexed_iter() {
                        d[[argmax[r * cols + c], c]] += v;
                    }
                    add_grad(&mut g, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        add_grad(&mut g, p, gi.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let mut d = Mat::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*end]).assign(&gi);
                    add_grad(&mut g, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(i));
                    let mut d = gi;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        drow.zip_mut_with(&yrow, |dv, &yv| *dv = yv * (*dv - dot));
                    }
                    add_grad(&mut g, *a, d);
                }
            }
        }
    }
}

fn add_grad(g: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut g[v.0] {
        Some(acc) => *acc += &d,
        slot => *slot = Some(d),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected layer `y = x W + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add_weight(format!("{name}.w"), fan_in, fan_out, rng);
        let b = store.add(format!("{name}.b"), Mat::zeros((1, fan_out)));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Stack of linear layers, each followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, widths: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = fan_in;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{name}.{i}"), prev, w, rng));
            prev = w;
        }
        Self { layers }
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.fan_out).collect()
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Var {
        for layer in &self.layers {
            let y = layer.forward(tape, x);
            x = tape.relu(y);
        }
        x
    }
}

/// Adam optimizer state.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Mat> = store.values.iter().map(|p| Mat::zeros(p.dim())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update from the gradients present in `grads`; absent entries are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (id, g) in grads.iter() {
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let p = &mut store.values[id.0];
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
    }
}
