//! Finite-difference checks of every network layer and of every full model
//! variant on a small heterogeneous graph.

use std::time::Instant;

use rand::RngExt;

use crate::error::Result;
use crate::geometry::{Point, SAMPLE_SIZE};
use crate::gradcheck::{random_tensor, weighted_sum, Bound, CheckReport, Coverage, GradCheck, Inputs, LossFn};
use crate::model::*;
use crate::rng;
use crate::scene::{build_local_graph, FrameObservation, HeteroSceneGraph, Instance, InstanceIdMatcher, Prediction};
use crate::tensor::{NamedTensors, Tape, Tensor};
use crate::train::{class_weights, composite_loss};

fn cloud(min: Point, size: [f32; 3], n: usize, seed: u64) -> Vec<Point> {
    let mut r = rng::stream(seed, &[0x70]);
    (0..n).map(|_| [0, 1, 2].map(|k| min[k] + size[k] * r.random::<f32>())).collect()
}

fn instance(id: u32, class: usize, x: f32, relations: Vec<(u32, usize)>, seed: u64) -> Instance {
    let size = [1.0, 0.8, 0.6 + 0.1 * id as f32];
    Instance { id, class: Some(class), points: cloud([x, 0.0, 0.0], size, 300, seed), relations }
}

/// Two overlapping global nodes joined by a near edge, and a local layer of
/// three nodes: two matched and adjacent, one unseen and isolated.
pub fn toy_graph() -> Result<HeteroSceneGraph> {
    let mut g = HeteroSceneGraph::new();
    let first = FrameObservation {
        index: 0,
        instances: vec![instance(1, 6, 0.0, vec![(2, 15)], 1), instance(2, 4, 0.8, vec![(1, 15)], 2)],
    };
    let local = build_local_graph(&first, &mut rng::stream(3, &[0]))?;
    let truth = Prediction::ground_truth(&local)?;
    g.attach_local(local, &InstanceIdMatcher)?;
    g.merge(&truth, &mut rng::stream(3, &[1]))?;
    let second = FrameObservation {
        index: 1,
        instances: vec![
            instance(1, 6, 0.05, vec![(2, 0)], 4),
            instance(2, 4, 0.9, vec![], 5),
            instance(3, 12, 5.0, vec![], 6),
        ],
    };
    let local = build_local_graph(&second, &mut rng::stream(3, &[2]))?;
    g.attach_local(local, &InstanceIdMatcher)?;
    Ok(g)
}

/// Reduced widths for per-layer checks over every coordinate.
pub fn reduced_config(variant: Variant, feature_mode: FeatureMode, collision: CollisionMode) -> ModelConfig {
    ModelConfig {
        variant,
        feature_mode,
        collision,
        hidden_dim: 4,
        encoder_dims: vec![3, 4],
        edge_mlp_dims: vec![3, 4],
        node_head_dim: 3,
        edge_head_dim: 3,
        heads: 2,
        embedding_dim: 3,
        ..ModelConfig::default()
    }
}

fn label_table(cfg: &ModelConfig) -> Option<Tensor<f32>> {
    (cfg.feature_mode == FeatureMode::Embedding)
        .then(|| random_tensor(vec![cfg.num_classes, cfg.embedding_dim], 17, 0).cast())
}

fn to_inputs(params: &NamedTensors, keep: impl Fn(&str) -> bool) -> Inputs {
    params.iter().filter(|(k, _)| keep(k)).map(|(k, v)| (k.clone(), v.cast())).collect()
}

/// Binds checked inputs over the remaining parameters as constants.
fn all_params(tape: &mut Tape<f64>, bound: &Bound, params: &NamedTensors) -> Bound {
    let mut p = bound.clone();
    for (k, v) in params {
        p.entry(k.clone()).or_insert_with(|| tape.constant(v.cast()));
    }
    p
}

/// Options of a check run.
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Sampled directions per tensor in the full-variant checks.
    pub directions: usize,
    pub seed: u64,
    /// Test hook: corrupt the analytic gradient of this input everywhere.
    pub corrupt: Option<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { tolerance: 1e-3, step: 1e-6, directions: 2, seed: 0, corrupt: None }
    }
}

fn checker(opts: &SuiteOptions, coverage: Coverage) -> GradCheck {
    GradCheck { step: opts.step, tolerance: opts.tolerance, coverage, corrupt: opts.corrupt.clone() }
}

/// Named results with timing.
#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub reports: Vec<CheckReport>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }
}

fn layer_check(
    opts: &SuiteOptions,
    name: &str,
    cfg: &ModelConfig,
    keep: impl Fn(&str) -> bool,
    extra: Inputs,
    body: impl Fn(&mut Ctx<'_, f64>, &Bound) -> Result<crate::tensor::Var>,
) -> Result<CheckReport> {
    let params = init_params(cfg, opts.seed)?;
    let mut inputs = to_inputs(&params, keep);
    inputs.extend(extra);
    let f = |tape: &mut Tape<f64>, b: &Bound| {
        let p = all_params(tape, b, &params);
        let mut ctx = Ctx { tape, params: &p, cfg, mode: ForwardMode::train(opts.seed) };
        let out = body(&mut ctx, b)?;
        weighted_sum(ctx.tape, out, opts.seed)
    };
    checker(opts, Coverage::Every).run(name, &inputs, &f)
}

fn features(g: &LayerGraph, cfg: &ModelConfig, seed: u64) -> Inputs {
    cfg.node_types()
        .iter()
        .zip(&g.counts)
        .enumerate()
        .map(|(t, (&(name, w), &n))| (format!("x.{name}"), random_tensor(vec![n, w], seed, t as u64)))
        .collect()
}

/// Checks each layer at reduced widths over every coordinate.
pub fn layer_checks(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let graph = toy_graph()?;
    let mut out = Vec::new();
    let base = reduced_config(Variant::HetSage, FeatureMode::Label, CollisionMode::Add);

    let pts = random_tensor(vec![SAMPLE_SIZE, 3], opts.seed, 1);
    let mut extra = Inputs::new();
    extra.insert("points".into(), pts);
    out.push(layer_check(opts, "encoder", &base, |k| k.starts_with("enc."), extra, |ctx, b| {
        ctx.encode_points(b["points"])
    })?);

    let mut extra = Inputs::new();
    extra.insert("raw".into(), random_tensor(vec![2, 11], opts.seed, 2));
    out.push(layer_check(opts, "edge_mlp", &base, |k| k.starts_with("edge."), extra, |ctx, b| {
        let mut h = b["raw"];
        for i in 0..2 {
            let name = format!("edge.{i}");
            let w = ctx.params[&format!("{name}.w")];
            let bias = ctx.params[&format!("{name}.b")];
            h = ctx.tape.linear(h, w, Some(bias))?;
            if i == 0 {
                h = ctx.tape.relu(h);
                h = ctx.tape.layer_norm(h, ctx.params["edge.0.ln.g"], ctx.params["edge.0.ln.b"], LN_EPS)?;
            }
        }
        Ok(h)
    })?);

    for (name, cfg) in [
        ("het_sage_layer", base.clone()),
        ("homo_sage_layer", reduced_config(Variant::HomoSage, FeatureMode::Label, CollisionMode::Add)),
        ("hgt_layer", reduced_config(Variant::Hgt, FeatureMode::Label, CollisionMode::Add)),
    ] {
        let input = GraphInput::from_graph(&graph, true)?;
        let g = input.layer_graph(&cfg);
        let x = features(&g, &cfg, opts.seed);
        let types = cfg.node_types();
        out.push(layer_check(opts, name, &cfg, |k| k.starts_with("gnn.0."), x, |ctx, b| {
            let xs: Vec<Option<_>> = types.iter().map(|(n, _)| Some(b[&format!("x.{n}")])).collect();
            let y = match cfg.variant {
                Variant::Hgt => hgt_layer(ctx, 0, &g, &xs)?.0,
                _ => sage_layer(ctx, 0, &g, &xs)?,
            };
            let parts: Vec<_> = y.into_iter().flatten().collect();
            ctx.tape.concat(&parts, 0)
        })?);
    }

    let input = GraphInput::from_graph(&graph, true)?;
    let collisions = (input.collision_edges.clone(), input.collision_features.clone());
    let width = base.node_types()[0].1;
    let mut extra = Inputs::new();
    extra.insert("x.global".into(), random_tensor(vec![input.num_global(), width], opts.seed, 3));
    out.push(layer_check(opts, "edge_info_layer", &base, |k| k.starts_with("gnn.0.eq3."), extra, |ctx, b| {
        edge_info_layer(ctx, 0, b["x.global"], &collisions.0, &collisions.1)
    })?);

    for (name, prefix, width) in [
        ("node_head", "head.node.", base.hidden_dim),
        ("edge_head", "head.edge.", 2 * base.hidden_dim + base.edge_dim()),
    ] {
        let mut extra = Inputs::new();
        extra.insert("x".into(), random_tensor(vec![3, width], opts.seed, 4));
        let head = prefix.trim_end_matches('.').to_string();
        out.push(layer_check(opts, name, &base, |k| k.starts_with(prefix), extra, |ctx, b| {
            let w0 = ctx.params[&format!("{head}.0.w")];
            let b0 = ctx.params[&format!("{head}.0.b")];
            let h = ctx.tape.linear(b["x"], w0, Some(b0))?;
            let h = ctx.tape.relu(h);
            let h = ctx.tape.layer_norm(h, ctx.params[&format!("{head}.0.ln.g")], ctx.params[&format!("{head}.0.ln.b")], LN_EPS)?;
            let h = ctx.tape.dropout(h, ctx.cfg.dropout, true, opts.seed, 7)?;
            let w1 = ctx.params[&format!("{head}.1.w")];
            let b1 = ctx.params[&format!("{head}.1.b")];
            ctx.tape.linear(h, w1, Some(b1))
        })?);
    }
    Ok(out)
}

/// Composite-loss check of one full variant at its configured widths.
pub fn variant_check(cfg: &ModelConfig, graph: &HeteroSceneGraph, opts: &SuiteOptions) -> Result<CheckReport> {
    let params = init_params(cfg, opts.seed)?;
    let table = label_table(cfg);
    let input = GraphInput::from_graph(graph, cfg.uses_collisions())?;
    let classes = graph.local.gt_classes().expect("toy graph has ground truth");
    let predicates: Vec<Vec<usize>> = graph.local.edges.iter().map(|e| e.gt_predicates.clone()).collect();
    let mut node_counts = vec![0.0; cfg.num_classes];
    classes.iter().for_each(|&c| node_counts[c] += 1.0);
    let mut edge_counts = vec![0.0; cfg.num_predicates];
    predicates.iter().flatten().for_each(|&p| edge_counts[p] += 1.0);
    let weights = class_weights(&node_counts, &edge_counts);
    let inputs = to_inputs(&params, |_| true);
    let f = |tape: &mut Tape<f64>, b: &Bound| {
        let mut ctx = Ctx { tape, params: b, cfg, mode: ForwardMode::train(opts.seed) };
        let out = ctx.forward(&input, table.as_ref())?;
        composite_loss(ctx.tape, out.node_logits, &classes, out.edge_logits, &predicates, &weights)
    };
    let name = format!("{}+{}+{}", cfg.variant, cfg.feature_mode, cfg.collision);
    let coverage = Coverage::Sampled { directions: opts.directions, coordinates: 0, seed: opts.seed };
    checker(opts, coverage).run(&name, &inputs, &f as &dyn LossFn)
}

/// Every layer, then every variant × feature mode × collision mode at
/// default widths.
pub fn full_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut reports = layer_checks(opts)?;
    let graph = toy_graph()?;
    for &variant in Variant::ALL {
        for &feature_mode in FeatureMode::ALL {
            for &collision in CollisionMode::ALL {
                let cfg = ModelConfig { variant, feature_mode, collision, ..ModelConfig::default() };
                reports.push(variant_check(&cfg, &graph, opts)?);
            }
        }
    }
    Ok(SuiteReport { reports, seconds: start.elapsed().as_secs_f64() })
}
