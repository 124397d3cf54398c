//! The scene graph network: a point-set encoder and descriptor per node, an
//! edge MLP over raw edge features, two message-passing layers
//! (heterogeneous SAGE, its homogeneous flattening, or HGT), an optional
//! edge-feature layer on collision edges, and node/edge classifier heads.
//!
//! All code is generic over the tape element so the same forward pass runs
//! in `f32` for training and in `f64` for gradient checks.

use std::collections::BTreeMap;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{edge_raw_feature, Descriptor, SAMPLE_SIZE};
use crate::rng;
use crate::scene::HeteroSceneGraph;
use crate::tensor::{AggregateMode, Element, NamedTensors, Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;
/// Width of the collision edge features.
pub const COLLISION_FEATURES: usize = 8;

named_enum!(Variant { HomoSage => "homo_sage", HetSage => "het_sage", Hgt => "hgt" });
named_enum!(FeatureMode { Plain => "plain", Label => "label", Embedding => "embedding" });
named_enum!(CollisionMode { None => "none", Add => "add", AddOnly => "add_only" });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub feature_mode: FeatureMode,
    pub collision: CollisionMode,
    pub hidden_dim: usize,
    pub encoder_dims: Vec<usize>,
    pub edge_mlp_dims: Vec<usize>,
    pub node_head_dim: usize,
    pub edge_head_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub num_predicates: usize,
    pub embedding_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::HetSage,
            feature_mode: FeatureMode::Embedding,
            collision: CollisionMode::None,
            hidden_dim: 128,
            encoder_dims: vec![32, 64, 128],
            edge_mlp_dims: vec![32, 64],
            node_head_dim: 64,
            edge_head_dim: 128,
            heads: 4,
            layers: 2,
            dropout: 0.5,
            num_classes: 27,
            num_predicates: 16,
            embedding_dim: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.hidden_dim, self.node_head_dim, self.edge_head_dim, self.heads, self.layers];
        if dims.contains(&0)
            || self.encoder_dims.is_empty()
            || self.edge_mlp_dims.is_empty()
            || self.encoder_dims.contains(&0)
            || self.edge_mlp_dims.contains(&0)
            || self.num_classes == 0
            || self.num_predicates == 0
        {
            return Err(Error::config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.variant == Variant::Hgt && !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!("{} heads do not divide hidden_dim {}", self.heads, self.hidden_dim)));
        }
        if self.uses_collisions() && self.layers < 2 {
            return Err(Error::config("the collision layer needs at least two message-passing layers"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.feature_mode == FeatureMode::Embedding && self.embedding_dim == 0 {
            return Err(Error::config("embedding mode needs embedding_dim > 0"));
        }
        Ok(())
    }

    pub fn label_dim(&self) -> usize {
        match self.feature_mode {
            FeatureMode::Plain => 0,
            FeatureMode::Label => self.num_classes,
            FeatureMode::Embedding => self.embedding_dim,
        }
    }

    pub fn point_dim(&self) -> usize {
        *self.encoder_dims.last().expect("validated")
    }

    pub fn edge_dim(&self) -> usize {
        *self.edge_mlp_dims.last().expect("validated")
    }

    /// Node type names and their input widths.
    pub fn node_types(&self) -> Vec<(&'static str, usize)> {
        let base = self.point_dim() + Descriptor::LEN;
        match self.variant {
            Variant::HomoSage => vec![("node", base + self.label_dim())],
            _ => vec![("global", base + self.label_dim()), ("local", base)],
        }
    }

    /// Message-passing relations as `(name, source type, target type)`.
    pub fn relations(&self) -> Vec<(&'static str, usize, usize)> {
        match self.variant {
            Variant::HomoSage => vec![("edge", 0, 0)],
            _ => {
                let mut r = vec![("local_near_local", 1, 1), ("global_match_local", 0, 1)];
                if self.collision != CollisionMode::AddOnly {
                    r.insert(1, ("global_near_global", 0, 0));
                }
                r
            }
        }
    }

    pub fn uses_collisions(&self) -> bool {
        self.collision != CollisionMode::None
    }

    /// Whether `layer` updates nodes of type `t`. Global nodes feed no head,
    /// so the last heterogeneous layer only updates the local layer.
    pub fn updates_type(&self, layer: usize, t: usize) -> bool {
        self.variant == Variant::HomoSage || t != 0 || layer + 1 < self.layers
    }

    /// Relations passing messages in `layer`.
    pub fn layer_relations(&self, layer: usize) -> Vec<(&'static str, usize, usize)> {
        self.relations().into_iter().filter(|r| self.updates_type(layer, r.2)).collect()
    }

    /// Whether `layer` applies the collision edge layer. It only updates
    /// global nodes, which matters only before the last layer.
    pub fn edge_info_in(&self, layer: usize) -> bool {
        self.uses_collisions() && layer + 1 < self.layers
    }
}

/// How parameters are initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform(usize),
    Zeros,
    Ones,
}

/// Every parameter of a configuration with its shape and initializer.
pub fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = Vec::new();
    let dense = |specs: &mut Vec<_>, name: &str, i: usize, o: usize, bias: bool| {
        specs.push((format!("{name}.w"), vec![i, o], Init::Uniform(i)));
        if bias {
            specs.push((format!("{name}.b"), vec![o], Init::Zeros));
        }
    };
    let norm = |specs: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize| {
        specs.push((format!("{name}.g"), vec![d], Init::Ones));
        specs.push((format!("{name}.b"), vec![d], Init::Zeros));
    };
    let mlp = |specs: &mut Vec<_>, prefix: &str, input: usize, dims: &[usize]| {
        let mut d = input;
        for (i, &o) in dims.iter().enumerate() {
            dense(specs, &format!("{prefix}.{i}"), d, o, true);
            if i + 1 < dims.len() {
                norm(specs, &format!("{prefix}.{i}.ln"), o);
            }
            d = o;
        }
    };
    mlp(&mut specs, "enc", 3, &cfg.encoder_dims);
    mlp(&mut specs, "edge", Descriptor::LEN, &cfg.edge_mlp_dims);
    let types = cfg.node_types();
    let h = cfg.hidden_dim;
    for l in 0..cfg.layers {
        let width = |t: usize| if l == 0 { types[t].1 } else { h };
        let updated = |t: usize| cfg.updates_type(l, t);
        match cfg.variant {
            Variant::HomoSage | Variant::HetSage => {
                for (t, (name, _)) in types.iter().enumerate().filter(|(t, _)| updated(*t)) {
                    dense(&mut specs, &format!("gnn.{l}.self.{name}"), width(t), h, true);
                }
                for (name, src, _) in cfg.layer_relations(l) {
                    dense(&mut specs, &format!("gnn.{l}.rel.{name}"), width(src), h, false);
                }
            }
            Variant::Hgt => {
                for (t, (name, _)) in types.iter().enumerate() {
                    let incoming = cfg.layer_relations(l).iter().any(|r| r.2 == t);
                    let kinds: &[&str] = if incoming { &["k", "q", "v"] } else { &["k", "v"] };
                    for kind in kinds {
                        dense(&mut specs, &format!("gnn.{l}.{kind}.{name}"), width(t), h, true);
                    }
                    if !updated(t) {
                        continue;
                    }
                    if incoming {
                        dense(&mut specs, &format!("gnn.{l}.out.{name}"), h, h, false);
                    }
                    if width(t) != h {
                        dense(&mut specs, &format!("gnn.{l}.res.{name}"), width(t), h, false);
                    }
                }
                let dk = h / cfg.heads;
                for (name, _, _) in cfg.layer_relations(l) {
                    specs.push((format!("gnn.{l}.att.{name}"), vec![h, h], Init::Uniform(dk)));
                    specs.push((format!("gnn.{l}.msg.{name}"), vec![h, h], Init::Uniform(dk)));
                    specs.push((format!("gnn.{l}.mu.{name}"), vec![cfg.heads], Init::Ones));
                }
            }
        }
        if cfg.edge_info_in(l) {
            dense(&mut specs, &format!("gnn.{l}.eq3.gamma"), width(0), h, true);
            dense(&mut specs, &format!("gnn.{l}.eq3.phi"), COLLISION_FEATURES, h, true);
        }
        for (_, (name, _)) in types.iter().enumerate().filter(|(t, _)| updated(*t)) {
            norm(&mut specs, &format!("gnn.{l}.{name}.ln"), h);
        }
    }
    mlp(&mut specs, "head.node", h, &[cfg.node_head_dim, cfg.num_classes]);
    mlp(&mut specs, "head.edge", 2 * h + cfg.edge_dim(), &[cfg.edge_head_dim, cfg.num_predicates]);
    specs
}

/// Seeded parameters; each tensor draws from its own name-derived stream.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<NamedTensors> {
    cfg.validate()?;
    let mut out = NamedTensors::new();
    for (name, shape, init) in param_specs(cfg) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(fan_in) => {
                let bound = 1.0 / (fan_in as f32).sqrt();
                let mut r = rng::stream(seed, &[rng::name_id(&name)]);
                (0..n).map(|_| r.random_range(-bound..bound)).collect()
            }
        };
        out.insert(name, Tensor::new(shape, data)?);
    }
    Ok(out)
}

/// Trainable parameters bound on a tape.
pub type Bound = BTreeMap<String, Var>;

pub fn bind<T: Element>(tape: &mut Tape<T>, params: &NamedTensors) -> Bound {
    params.iter().map(|(k, v)| (k.clone(), tape.param(v.cast()))).collect()
}

fn get(p: &Bound, name: &str) -> Result<Var> {
    p.get(name).copied().ok_or_else(|| Error::Parameter(format!("missing parameter {name}")))
}

/// Train/eval switch and dropout seed of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardMode {
    pub training: bool,
    pub seed: u64,
}

impl ForwardMode {
    pub const EVAL: ForwardMode = ForwardMode { training: false, seed: 0 };

    pub fn train(seed: u64) -> Self {
        Self { training: true, seed }
    }
}

/// Shared state of a forward pass.
pub struct Ctx<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a Bound,
    pub cfg: &'a ModelConfig,
    pub mode: ForwardMode,
}

impl<T: Element> Ctx<'_, T> {
    fn dense(&mut self, name: &str, x: Var, bias: bool) -> Result<Var> {
        let w = get(self.params, &format!("{name}.w"))?;
        let b = if bias { Some(get(self.params, &format!("{name}.b"))?) } else { None };
        self.tape.linear(x, w, b)
    }

    fn norm(&mut self, name: &str, x: Var) -> Result<Var> {
        let g = get(self.params, &format!("{name}.g"))?;
        let b = get(self.params, &format!("{name}.b"))?;
        self.tape.layer_norm(x, g, b, LN_EPS)
    }

    /// ReLU, layer norm, then dropout (dropout skipped when `drop` is false).
    fn activate(&mut self, name: &str, x: Var, drop: bool) -> Result<Var> {
        let x = self.tape.relu(x);
        let x = self.norm(&format!("{name}.ln"), x)?;
        if drop {
            let stream = rng::name_id(name);
            self.tape.dropout(x, self.cfg.dropout, self.mode.training, self.mode.seed, stream)
        } else {
            Ok(x)
        }
    }

    /// Linear layers with activation between them; the last layer is linear.
    fn mlp(&mut self, prefix: &str, x: Var, layers: usize, drop: bool) -> Result<Var> {
        let mut h = x;
        for i in 0..layers {
            let name = format!("{prefix}.{i}");
            h = self.dense(&name, h, true)?;
            if i + 1 < layers {
                h = self.activate(&name, h, drop)?;
            }
        }
        Ok(h)
    }

    fn constant(&mut self, t: &Tensor<f32>) -> Var {
        self.tape.constant(t.cast())
    }

    /// Per-point MLP over `[nodes·256 × 3]` centered points, max-pooled per
    /// node.
    pub fn encode_points(&mut self, points: Var) -> Result<Var> {
        let rows = self.tape.value(points).rows();
        if !rows.is_multiple_of(SAMPLE_SIZE) || self.tape.value(points).cols() != 3 {
            return Err(Error::shape(format!(
                "point encoder needs [k·{SAMPLE_SIZE} × 3], got {:?}",
                self.tape.value(points).shape()
            )));
        }
        let h = self.mlp("enc", points, self.cfg.encoder_dims.len(), false)?;
        self.tape.max_pool_groups(h, SAMPLE_SIZE)
    }
}

/// Edges of one relation, as row indices into the source and target types.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationEdges {
    pub name: &'static str,
    pub src_type: usize,
    pub dst_type: usize,
    pub edges: Vec<(usize, usize)>,
}

/// Everything a message-passing layer needs about the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGraph {
    pub counts: Vec<usize>,
    pub relations: Vec<RelationEdges>,
    /// Edges of the edge-feature layer between nodes of type 0 with their
    /// `[edges × 8]` features.
    pub collisions: Option<(Vec<(usize, usize)>, Tensor<f32>)>,
}

fn split(edges: &[(usize, usize)]) -> (Vec<usize>, Vec<usize>) {
    edges.iter().copied().unzip()
}

/// Edge-feature update for type-0 nodes: `γ(x_i) + Σ_j φ(x_ji)`.
pub fn edge_info_layer<T: Element>(
    ctx: &mut Ctx<'_, T>,
    layer: usize,
    x: Var,
    edges: &[(usize, usize)],
    features: &Tensor<f32>,
) -> Result<Var> {
    let n = ctx.tape.value(x).rows();
    let gamma = ctx.dense(&format!("gnn.{layer}.eq3.gamma"), x, true)?;
    if edges.is_empty() {
        return Ok(gamma);
    }
    let f = ctx.constant(features);
    let phi = ctx.dense(&format!("gnn.{layer}.eq3.phi"), f, true)?;
    let (_, dst) = split(edges);
    let summed = ctx.tape.segment_aggregate(phi, &dst, n, AggregateMode::Sum)?;
    ctx.tape.add(gamma, summed)
}

fn finish_layer<T: Element>(
    ctx: &mut Ctx<'_, T>,
    layer: usize,
    type_name: &str,
    t: usize,
    mut acc: Var,
    x: Var,
    graph: &LayerGraph,
) -> Result<Var> {
    if t == 0 && ctx.cfg.edge_info_in(layer) {
        if let Some((edges, feats)) = &graph.collisions {
            let extra = edge_info_layer(ctx, layer, x, edges, feats)?;
            acc = ctx.tape.add(acc, extra)?;
        }
    }
    ctx.activate(&format!("gnn.{layer}.{type_name}"), acc, true)
}

/// One SAGE-style layer: per-relation mean of source features through a
/// relation map, summed with a target-type self map.
pub fn sage_layer<T: Element>(
    ctx: &mut Ctx<'_, T>,
    layer: usize,
    graph: &LayerGraph,
    x: &[Option<Var>],
) -> Result<Vec<Option<Var>>> {
    let types = ctx.cfg.node_types();
    let mut out = Vec::with_capacity(x.len());
    for (t, &(type_name, _)) in types.iter().enumerate() {
        let Some(xt) = x[t].filter(|_| ctx.cfg.updates_type(layer, t)) else {
            out.push(None);
            continue;
        };
        let mut acc = ctx.dense(&format!("gnn.{layer}.self.{type_name}"), xt, true)?;
        for rel in graph.relations.iter().filter(|r| r.dst_type == t && !r.edges.is_empty()) {
            let Some(xs) = x[rel.src_type] else { continue };
            let (src, dst) = split(&rel.edges);
            let gathered = ctx.tape.gather_rows(xs, &src)?;
            let mean = ctx.tape.segment_aggregate(gathered, &dst, graph.counts[t], AggregateMode::Mean)?;
            let w = get(ctx.params, &format!("gnn.{layer}.rel.{}.w", rel.name))?;
            let msg = ctx.tape.matmul(mean, w)?;
            acc = ctx.tape.add(acc, msg)?;
        }
        out.push(Some(finish_layer(ctx, layer, type_name, t, acc, xt, graph)?));
    }
    Ok(out)
}

/// Attention weights of one HGT target type: `[incoming edges × heads]`
/// with the target of each row.
#[derive(Clone, Debug)]
pub struct Attention {
    pub dst_type: usize,
    pub targets: Vec<usize>,
    pub weights: Var,
}

fn head_indicator(hidden: usize, heads: usize) -> Tensor<f32> {
    let dk = hidden / heads;
    let mut g = Tensor::zeros(vec![hidden, heads]);
    for c in 0..hidden {
        g.data_mut()[c * heads + c / dk] = 1.0;
    }
    g
}

fn block_mask(hidden: usize, heads: usize) -> Tensor<f32> {
    let dk = hidden / heads;
    let mut m = Tensor::zeros(vec![hidden, hidden]);
    for r in 0..hidden {
        for c in 0..hidden {
            if r / dk == c / dk {
                m.data_mut()[r * hidden + c] = 1.0;
            }
        }
    }
    m
}

fn transpose(t: &Tensor<f32>) -> Tensor<f32> {
    let (r, c) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(vec![c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data_mut()[j * r + i] = t.at(i, j);
        }
    }
    out
}

/// One HGT layer: type-specific K/Q/V, relation-specific block-diagonal
/// attention and message maps with per-head priors, softmax over each
/// target's incoming edges, target-type output map plus residual.
pub fn hgt_layer<T: Element>(
    ctx: &mut Ctx<'_, T>,
    layer: usize,
    graph: &LayerGraph,
    x: &[Option<Var>],
) -> Result<(Vec<Option<Var>>, Vec<Attention>)> {
    let types = ctx.cfg.node_types();
    let (h, heads) = (ctx.cfg.hidden_dim, ctx.cfg.heads);
    let scale = 1.0 / ((h / heads) as f64).sqrt();
    let indicator = head_indicator(h, heads);
    let g = ctx.constant(&indicator);
    let gt = ctx.constant(&transpose(&indicator));
    let mask = ctx.constant(&block_mask(h, heads));
    let mut kqv = Vec::new();
    for (t, &(name, _)) in types.iter().enumerate() {
        kqv.push(match x[t] {
            Some(xt) => Some((
                ctx.dense(&format!("gnn.{layer}.k.{name}"), xt, true)?,
                ctx.dense(&format!("gnn.{layer}.v.{name}"), xt, true)?,
            )),
            None => None,
        });
    }
    let mut out = Vec::with_capacity(types.len());
    let mut attention = Vec::new();
    for (t, &(name, width)) in types.iter().enumerate() {
        let Some(xt) = x[t].filter(|_| ctx.cfg.updates_type(layer, t)) else {
            out.push(None);
            continue;
        };
        let (mut scores, mut messages, mut targets) = (Vec::new(), Vec::new(), Vec::new());
        let mut q_t = None;
        for rel in graph.relations.iter().filter(|r| r.dst_type == t && !r.edges.is_empty()) {
            let Some((k_s, v_s)) = kqv[rel.src_type] else { continue };
            let q_t = match q_t {
                Some(q) => q,
                None => *q_t.insert(ctx.dense(&format!("gnn.{layer}.q.{name}"), xt, true)?),
            };
            let (src, dst) = split(&rel.edges);
            let att = get(ctx.params, &format!("gnn.{layer}.att.{}", rel.name))?;
            let att = ctx.tape.mul(att, mask)?;
            let msg = get(ctx.params, &format!("gnn.{layer}.msg.{}", rel.name))?;
            let msg = ctx.tape.mul(msg, mask)?;
            let mu = get(ctx.params, &format!("gnn.{layer}.mu.{}", rel.name))?;
            let k = ctx.tape.gather_rows(k_s, &src)?;
            let k = ctx.tape.matmul(k, att)?;
            let q = ctx.tape.gather_rows(q_t, &dst)?;
            let kq = ctx.tape.mul(k, q)?;
            let s = ctx.tape.matmul(kq, g)?;
            let s = ctx.tape.mul_row(s, mu)?;
            scores.push(ctx.tape.affine(s, scale, 0.0));
            let v = ctx.tape.gather_rows(v_s, &src)?;
            messages.push(ctx.tape.matmul(v, msg)?);
            targets.extend(dst);
        }
        let in_width = if layer == 0 { width } else { h };
        let residual = if in_width == h {
            xt
        } else {
            ctx.dense(&format!("gnn.{layer}.res.{name}"), xt, false)?
        };
        let acc = if scores.is_empty() {
            residual
        } else {
            let scores = ctx.tape.concat(&scores, 0)?;
            let messages = ctx.tape.concat(&messages, 0)?;
            let alpha = ctx.tape.segment_softmax(scores, &targets, graph.counts[t])?;
            attention.push(Attention { dst_type: t, targets: targets.clone(), weights: alpha });
            let spread = ctx.tape.matmul(alpha, gt)?;
            let weighted = ctx.tape.mul(messages, spread)?;
            let agg = ctx.tape.segment_aggregate(weighted, &targets, graph.counts[t], AggregateMode::Sum)?;
            let o = ctx.dense(&format!("gnn.{layer}.out.{name}"), agg, false)?;
            ctx.tape.add(o, residual)?
        };
        out.push(Some(finish_layer(ctx, layer, name, t, acc, xt, graph)?));
    }
    Ok((out, attention))
}

/// Model input for one frame, built from the heterogeneous graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    /// `[global·256 × 3]` points centered per node.
    pub global_points: Tensor<f32>,
    pub global_descriptors: Tensor<f32>,
    /// Class carried by each global node.
    pub global_labels: Vec<usize>,
    pub local_points: Tensor<f32>,
    pub local_descriptors: Tensor<f32>,
    pub local_edges: Vec<(usize, usize)>,
    /// `[local edges × 11]`
    pub local_edge_features: Tensor<f32>,
    pub global_edges: Vec<(usize, usize)>,
    /// `(global, local)`
    pub match_edges: Vec<(usize, usize)>,
    pub collision_edges: Vec<(usize, usize)>,
    pub collision_features: Tensor<f32>,
}

fn centered_points<'a>(nodes: impl Iterator<Item = (&'a [[f32; 3]], &'a Descriptor)>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut count = 0;
    for (points, d) in nodes {
        if points.len() != SAMPLE_SIZE {
            return Err(Error::shape(format!("node has {} points, expected {SAMPLE_SIZE}", points.len())));
        }
        for p in points {
            data.extend((0..3).map(|k| p[k] - d.centroid[k]));
        }
        count += 1;
    }
    Tensor::new(vec![count * SAMPLE_SIZE, 3], data)
}

fn descriptor_rows<'a>(ds: impl Iterator<Item = &'a Descriptor>) -> Result<Tensor<f32>> {
    let rows: Vec<[f32; 11]> = ds.map(Descriptor::to_array).collect();
    let n = rows.len();
    Tensor::new(vec![n, Descriptor::LEN], rows.concat())
}

impl GraphInput {
    pub fn from_graph(graph: &HeteroSceneGraph, with_collisions: bool) -> Result<Self> {
        let g = &graph.global;
        let l = &graph.local;
        let local_edges: Vec<(usize, usize)> = l.edges.iter().map(|e| (e.src, e.dst)).collect();
        let feats: Vec<[f32; 11]> = local_edges
            .iter()
            .map(|&(s, d)| edge_raw_feature(&l.nodes[s].descriptor, &l.nodes[d].descriptor))
            .collect();
        let (collision_edges, collision_features) = if with_collisions {
            let layer = graph.collision_layer();
            let rows: Vec<[f32; 8]> = layer.edges.iter().map(|e| e.features).collect();
            let n = rows.len();
            (layer.edges.iter().map(|e| (e.src, e.dst)).collect(), Tensor::new(vec![n, 8], rows.concat())?)
        } else {
            (Vec::new(), Tensor::zeros(vec![0, 8]))
        };
        Ok(Self {
            global_points: centered_points(g.iter().map(|n| (n.points.as_slice(), &n.descriptor)))?,
            global_descriptors: descriptor_rows(g.iter().map(|n| &n.descriptor))?,
            global_labels: g.iter().map(|n| n.predicted_class).collect(),
            local_points: centered_points(l.nodes.iter().map(|n| (n.points.as_slice(), &n.descriptor)))?,
            local_descriptors: descriptor_rows(l.nodes.iter().map(|n| &n.descriptor))?,
            local_edge_features: Tensor::new(vec![local_edges.len(), Descriptor::LEN], feats.concat())?,
            local_edges,
            global_edges: graph.global_near_edges(),
            match_edges: graph.match_edges(),
            collision_edges,
            collision_features,
        })
    }

    pub fn num_global(&self) -> usize {
        self.global_labels.len()
    }

    pub fn num_local(&self) -> usize {
        self.local_descriptors.rows()
    }

    /// Relations and collision edges as seen by the configured variant.
    pub fn layer_graph(&self, cfg: &ModelConfig) -> LayerGraph {
        let (ng, nl) = (self.num_global(), self.num_local());
        let collisions =
            cfg.uses_collisions().then(|| (self.collision_edges.clone(), self.collision_features.clone()));
        let keep_global = cfg.collision != CollisionMode::AddOnly;
        match cfg.variant {
            Variant::HomoSage => {
                let mut edges: Vec<(usize, usize)> =
                    self.local_edges.iter().map(|&(s, d)| (ng + s, ng + d)).collect();
                if keep_global {
                    edges.extend(self.global_edges.iter().copied());
                }
                edges.extend(self.match_edges.iter().map(|&(g, l)| (g, ng + l)));
                LayerGraph {
                    counts: vec![ng + nl],
                    relations: vec![RelationEdges { name: "edge", src_type: 0, dst_type: 0, edges }],
                    collisions,
                }
            }
            _ => {
                let mut relations = Vec::new();
                for (name, src_type, dst_type) in cfg.relations() {
                    let edges = match name {
                        "local_near_local" => self.local_edges.clone(),
                        "global_near_global" => self.global_edges.clone(),
                        _ => self.match_edges.clone(),
                    };
                    relations.push(RelationEdges { name, src_type, dst_type, edges });
                }
                LayerGraph { counts: vec![ng, nl], relations, collisions }
            }
        }
    }
}

/// Local-layer logits of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Output {
    /// `[local nodes × classes]`
    pub node_logits: Var,
    /// `[local edges × predicates]`
    pub edge_logits: Var,
}

fn label_block(cfg: &ModelConfig, table: Option<&Tensor<f32>>, labels: &[usize]) -> Result<Option<Tensor<f32>>> {
    let d = cfg.label_dim();
    match cfg.feature_mode {
        FeatureMode::Plain => Ok(None),
        FeatureMode::Label => {
            let mut t = Tensor::zeros(vec![labels.len(), d]);
            for (i, &c) in labels.iter().enumerate() {
                if c >= d {
                    return Err(Error::data(format!("label {c} outside {d} classes")));
                }
                t.data_mut()[i * d + c] = 1.0;
            }
            Ok(Some(t))
        }
        FeatureMode::Embedding => {
            let table = table.ok_or_else(|| Error::config("embedding mode needs a label table"))?;
            if table.cols() != d || table.rows() != cfg.num_classes {
                return Err(Error::config(format!(
                    "label table {:?} does not match {} classes × {d}",
                    table.shape(),
                    cfg.num_classes
                )));
            }
            let mut data = Vec::with_capacity(labels.len() * d);
            for &c in labels {
                if c >= cfg.num_classes {
                    return Err(Error::data(format!("label {c} outside {} classes", cfg.num_classes)));
                }
                data.extend_from_slice(table.row(c));
            }
            Ok(Some(Tensor::new(vec![labels.len(), d], data)?))
        }
    }
}

/// Padding of the label slots of local nodes in the homogeneous variant.
fn local_padding(cfg: &ModelConfig, n: usize) -> Option<Tensor<f32>> {
    match cfg.feature_mode {
        FeatureMode::Plain => None,
        FeatureMode::Label => Some(Tensor::full(vec![n, cfg.label_dim()], -1.0)),
        FeatureMode::Embedding => Some(Tensor::zeros(vec![n, cfg.label_dim()])),
    }
}

impl<T: Element> Ctx<'_, T> {
    fn node_inputs(&mut self, points: &Tensor<f32>, descriptors: &Tensor<f32>, labels: Option<Tensor<f32>>) -> Result<Option<Var>> {
        if descriptors.rows() == 0 {
            return Ok(None);
        }
        let p = self.constant(points);
        let enc = self.encode_points(p)?;
        let mut parts = vec![enc, self.constant(descriptors)];
        if let Some(l) = labels {
            parts.push(self.constant(&l));
        }
        Ok(Some(self.tape.concat(&parts, 1)?))
    }

    /// Full forward pass producing logits for the local layer.
    pub fn forward(&mut self, input: &GraphInput, label_table: Option<&Tensor<f32>>) -> Result<Output> {
        let cfg = self.cfg;
        let (ng, nl) = (input.num_global(), input.num_local());
        if nl == 0 {
            return Err(Error::data("frame has no local nodes"));
        }
        let global_labels = label_block(cfg, label_table, &input.global_labels)?;
        let global = self.node_inputs(&input.global_points, &input.global_descriptors, global_labels)?;
        let local_labels = match cfg.variant {
            Variant::HomoSage => local_padding(cfg, nl),
            _ => None,
        };
        let local = self.node_inputs(&input.local_points, &input.local_descriptors, local_labels)?.expect("nl > 0");
        let graph = input.layer_graph(cfg);
        let mut x = match cfg.variant {
            Variant::HomoSage => vec![Some(match global {
                Some(g) => self.tape.concat(&[g, local], 0)?,
                None => local,
            })],
            _ => vec![global, Some(local)],
        };
        for layer in 0..cfg.layers {
            x = match cfg.variant {
                Variant::Hgt => hgt_layer(self, layer, &graph, &x)?.0,
                _ => sage_layer(self, layer, &graph, &x)?,
            };
        }
        let local_h = match cfg.variant {
            Variant::HomoSage => {
                let rows: Vec<usize> = (ng..ng + nl).collect();
                let all = x[0].expect("homogeneous features");
                self.tape.gather_rows(all, &rows)?
            }
            _ => x[1].expect("local features"),
        };
        let node_logits = self.mlp("head.node", local_h, 2, true)?;
        let edge_logits = if input.local_edges.is_empty() {
            self.tape.constant(Tensor::zeros(vec![0, cfg.num_predicates]))
        } else {
            let raw = self.constant(&input.local_edge_features);
            let e = self.mlp("edge", raw, cfg.edge_mlp_dims.len(), true)?;
            let (src, dst) = split(&input.local_edges);
            let hs = self.tape.gather_rows(local_h, &src)?;
            let hd = self.tape.gather_rows(local_h, &dst)?;
            let joined = self.tape.concat(&[hs, hd, e], 1)?;
            self.mlp("head.edge", joined, 2, true)?
        };
        Ok(Output { node_logits, edge_logits })
    }
}

/// Configuration, parameters and the label table used for label features.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: NamedTensors,
    /// `[classes × embedding_dim]` rows for embedding mode.
    pub label_table: Option<Tensor<f32>>,
}

/// Checkpoint entry holding the label table.
pub const LABEL_TABLE_KEY: &str = "const.label_table";

impl Model {
    pub fn new(config: ModelConfig, label_table: Option<Tensor<f32>>, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        let model = Self { config, params, label_table };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.config.feature_mode == FeatureMode::Embedding {
            label_block(&self.config, self.label_table.as_ref(), &[])?;
        }
        for (name, shape, _) in param_specs(&self.config) {
            match self.params.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::config(format!("parameter {name} has shape {:?}, expected {shape:?}", t.shape())))
                }
                None => return Err(Error::config(format!("parameter {name} missing for this configuration"))),
            }
        }
        if self.params.len() != param_specs(&self.config).len() {
            return Err(Error::config("checkpoint has parameters this configuration does not use"));
        }
        Ok(())
    }

    /// Parameters plus the label table, as written to checkpoints.
    pub fn to_tensors(&self) -> NamedTensors {
        let mut all = self.params.clone();
        if let Some(t) = &self.label_table {
            all.insert(LABEL_TABLE_KEY.to_string(), t.clone());
        }
        all
    }

    pub fn from_tensors(config: ModelConfig, mut tensors: NamedTensors) -> Result<Self> {
        let label_table = tensors.remove(LABEL_TABLE_KEY);
        let model = Self { config, params: tensors, label_table };
        model.check()?;
        Ok(model)
    }

    /// Eval-mode logits in `f32`.
    pub fn predict(&self, input: &GraphInput) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut tape = Tape::<f32>::new();
        let params = bind(&mut tape, &self.params);
        let mut ctx = Ctx { tape: &mut tape, params: &params, cfg: &self.config, mode: ForwardMode::EVAL };
        let out = ctx.forward(input, self.label_table.as_ref())?;
        Ok((tape.value(out.node_logits).clone(), tape.value(out.edge_logits).clone()))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }
}
