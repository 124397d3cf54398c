//! Composite loss, teacher-forced training samples, the training loop with
//! step decay and early stopping, and incremental evaluation.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::SceneSequence;
use crate::error::{Error, Result};
use crate::metrics::{argmax, sigmoid, FramePrediction, FrameTruth, MetricAccumulator, MetricReport, PREDICATE_THRESHOLD};
use crate::model::{bind, Ctx, ForwardMode, GraphInput, Model, ModelConfig, Variant};
use crate::rng;
use crate::scene::{build_local_graph, GraphSnapshot, HeteroSceneGraph, InstanceIdMatcher, LabelSpace, Prediction};
use crate::tensor::{read_checkpoint, write_checkpoint, Adam, AdamConfig, Element, NamedTensors, StepLr, Tape, Tensor, Var};

pub const DEFAULT_ALPHA: f64 = 40.0;
/// Clamp applied to predicate probabilities before the logarithm.
pub const PROBABILITY_EPS: f64 = 1e-7;

named_enum!(
    /// Where α multiplies the edge loss: `positive` weights only the
    /// positive-label term of each predicate, `global` the whole edge term.
    AlphaMode { Positive => "positive", Global => "global" }
);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
}

/// `10 / ln n` with the denominator clamped at 0.5.
pub fn inverse_log_weight(count: f64) -> f64 {
    10.0 / count.ln().max(0.5)
}

/// Weights from class occurrence counts; absent classes get the clamped
/// maximum.
pub fn class_weights(node_counts: &[f64], edge_counts: &[f64]) -> LossWeights {
    LossWeights {
        node: node_counts.iter().map(|&n| inverse_log_weight(n)).collect(),
        edge: edge_counts.iter().map(|&n| inverse_log_weight(n) + 1.0).collect(),
        alpha: DEFAULT_ALPHA,
        alpha_mode: AlphaMode::Positive,
    }
}

impl LossWeights {
    /// All weights 1 and the given α.
    pub fn uniform(classes: usize, predicates: usize, alpha: f64) -> Self {
        Self { node: vec![1.0; classes], edge: vec![1.0; predicates], alpha, alpha_mode: AlphaMode::Positive }
    }
}

/// `L_n + L_e`: class-weighted cross-entropy over nodes plus
/// predicate-weighted binary cross-entropy over edges, both mean-reduced.
pub fn composite_loss<T: Element>(
    tape: &mut Tape<T>,
    node_logits: Var,
    node_targets: &[usize],
    edge_logits: Var,
    edge_targets: &[Vec<usize>],
    weights: &LossWeights,
) -> Result<Var> {
    let (n, c) = (tape.value(node_logits).rows(), tape.value(node_logits).cols());
    if n != node_targets.len() || c != weights.node.len() || n == 0 {
        return Err(Error::contract(format!(
            "node logits {:?} against {} targets and {} class weights",
            tape.value(node_logits).shape(),
            node_targets.len(),
            weights.node.len()
        )));
    }
    let mut pick = Tensor::<T>::zeros(vec![n, c]);
    for (i, &y) in node_targets.iter().enumerate() {
        if y >= c {
            return Err(Error::contract(format!("node target {y} outside {c} classes")));
        }
        pick.data_mut()[i * c + y] = T::of(-weights.node[y] / n as f64);
    }
    let logp = tape.log_softmax_rows(node_logits)?;
    let pick = tape.constant(pick);
    let picked = tape.mul(logp, pick)?;
    let node_loss = tape.sum(picked);

    let e = edge_targets.len();
    let shape = tape.value(edge_logits).shape().to_vec();
    let p = weights.edge.len();
    if shape.first() == Some(&0) && e == 0 {
        return Ok(node_loss);
    }
    if shape != [e, p] {
        return Err(Error::contract(format!("edge logits {shape:?} against {e} targets and {p} predicate weights")));
    }
    let scale = 1.0 / (e * p) as f64;
    let (pos_alpha, all_alpha) = match weights.alpha_mode {
        AlphaMode::Positive => (weights.alpha, 1.0),
        AlphaMode::Global => (1.0, weights.alpha),
    };
    let mut pos = Tensor::<T>::zeros(vec![e, p]);
    let mut neg = Tensor::<T>::zeros(vec![e, p]);
    for (k, targets) in edge_targets.iter().enumerate() {
        for j in 0..p {
            neg.data_mut()[k * p + j] = T::of(-all_alpha * scale * weights.edge[j]);
        }
        for &y in targets {
            if y >= p {
                return Err(Error::contract(format!("predicate target {y} outside {p} predicates")));
            }
            pos.data_mut()[k * p + y] = T::of(-all_alpha * pos_alpha * scale * weights.edge[y]);
            neg.data_mut()[k * p + y] = T::of(0.0);
        }
    }
    let s = tape.sigmoid(edge_logits);
    let s = tape.clamp(s, PROBABILITY_EPS, 1.0 - PROBABILITY_EPS);
    let log_s = tape.log(s)?;
    let one_minus = tape.affine(s, -1.0, 1.0);
    let log_1ms = tape.log(one_minus)?;
    let pos = tape.constant(pos);
    let neg = tape.constant(neg);
    let a = tape.mul(log_s, pos)?;
    let b = tape.mul(log_1ms, neg)?;
    let both = tape.add(a, b)?;
    let edge_loss = tape.sum(both);
    tape.add(node_loss, edge_loss)
}

/// One frame ready for a training step: the model input built from the
/// global graph of its scene plus local ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub scene_id: String,
    pub frame: usize,
    pub input: GraphInput,
    pub classes: Vec<usize>,
    pub predicates: Vec<Vec<usize>>,
    /// Global labels corrupted in this snapshot.
    pub falsified: usize,
    pub global_nodes: usize,
}

fn frame_stream(seed: u64, scene_id: &str, frame: usize, purpose: u64) -> rng::Rng {
    rng::stream(seed, &[rng::name_id(scene_id), frame as u64, purpose])
}

const SAMPLE_POINTS: u64 = 1;
const MERGE_POINTS: u64 = 2;
const FALSIFY: u64 = 3;

fn local_truth(graph: &HeteroSceneGraph, labels: &LabelSpace) -> Result<(Vec<usize>, Vec<Vec<usize>>)> {
    let classes = graph
        .local
        .gt_classes()
        .ok_or_else(|| Error::data(format!("frame {} lacks ground-truth classes", graph.local.frame_index)))?;
    if let Some(&c) = classes.iter().find(|&&c| c >= labels.num_objects()) {
        return Err(Error::config(format!("class {c} outside the {} classes of the model", labels.num_objects())));
    }
    let predicates: Vec<Vec<usize>> = graph.local.edges.iter().map(|e| e.gt_predicates.clone()).collect();
    if let Some(&p) = predicates.iter().flatten().find(|&&p| p >= labels.num_predicates()) {
        return Err(Error::config(format!("predicate {p} outside the {} predicates of the model", labels.num_predicates())));
    }
    Ok((classes, predicates))
}

/// Teacher-forced samples: each frame sees the global graph merged from the
/// ground truth of its predecessors, with a fixed `falsify` fraction of
/// global labels corrupted per snapshot.
pub fn teacher_forced_samples(
    scenes: &[SceneSequence],
    labels: &LabelSpace,
    with_collisions: bool,
    falsify: f64,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let mut out = Vec::new();
    for seq in scenes {
        let mut graph = HeteroSceneGraph::new();
        for frame in &seq.frames {
            let local = build_local_graph(frame, &mut frame_stream(seed, &seq.scene_id, frame.index, SAMPLE_POINTS))?;
            graph.attach_local(local, &InstanceIdMatcher)?;
            if graph.local.nodes.is_empty() {
                warn!("{} frame {}: no local nodes, skipped", seq.scene_id, frame.index);
                graph.merge(&Prediction { classes: vec![], predicates: vec![] }, &mut rng::stream(seed, &[]))?;
                continue;
            }
            let (classes, predicates) = local_truth(&graph, labels)?;
            let mut view = graph.clone();
            let falsified = view.falsify_labels(
                falsify,
                labels.num_objects(),
                &mut frame_stream(seed, &seq.scene_id, frame.index, FALSIFY),
            )?;
            out.push(TrainSample {
                scene_id: seq.scene_id.clone(),
                frame: frame.index,
                input: GraphInput::from_graph(&view, with_collisions)?,
                classes: classes.clone(),
                predicates: predicates.clone(),
                falsified,
                global_nodes: view.global.len(),
            });
            graph.merge(
                &Prediction { classes, predicates },
                &mut frame_stream(seed, &seq.scene_id, frame.index, MERGE_POINTS),
            )?;
        }
    }
    Ok(out)
}

/// Local node classes and edge predicates over training samples.
pub fn class_counts(samples: &[TrainSample], classes: usize, predicates: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; classes];
    let mut edges = vec![0.0; predicates];
    for s in samples {
        s.classes.iter().for_each(|&c| nodes[c] += 1.0);
        s.predicates.iter().flatten().for_each(|&p| edges[p] += 1.0);
    }
    (nodes, edges)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub gamma: f64,
    pub step_size: usize,
    pub seed: u64,
    pub alpha: f64,
    pub alpha_mode: AlphaMode,
    pub falsify: f64,
    /// Optional cap on optimization steps over the whole run.
    pub max_steps: Option<usize>,
}

impl TrainConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let (lr, step_size) = match variant {
            Variant::Hgt => (1e-4, 20),
            _ => (1.498e-4, 30),
        };
        Self {
            max_epochs: 100,
            patience: 5,
            lr,
            gamma: 0.05,
            step_size,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            alpha_mode: AlphaMode::Positive,
            falsify: 0.0,
            max_steps: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 || self.max_epochs == 0 || self.step_size == 0 {
            return Err(Error::config("patience, max_epochs and step_size must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.falsify) {
            return Err(Error::config(format!("falsify fraction {} outside [0, 1]", self.falsify)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha {} must be positive", self.alpha)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepLr {
        StepLr { base: self.lr, gamma: self.gamma, step_size: self.step_size }
    }

    /// Class weights counted over `samples`, with this configuration's α.
    pub fn loss_weights(&self, samples: &[TrainSample], classes: usize, predicates: usize) -> LossWeights {
        let (n, e) = class_counts(samples, classes, predicates);
        LossWeights { alpha: self.alpha, alpha_mode: self.alpha_mode, ..class_weights(&n, &e) }
    }
}

/// Patience counter over strictly improving losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, bad_epochs: 0 }
    }

    /// Records the loss of `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub steps: usize,
}

/// Everything needed to continue a run after an epoch.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub best: NamedTensors,
    pub adam: Adam,
    pub stopper: EarlyStopping,
    pub epoch: usize,
    pub steps: usize,
    pub history: Vec<EpochRecord>,
    pub finished: bool,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    stopper: EarlyStopping,
    epoch: usize,
    steps: usize,
    history: Vec<EpochRecord>,
    finished: bool,
}

impl TrainState {
    pub fn new(model: Model, cfg: &TrainConfig) -> Self {
        Self {
            best: model.params.clone(),
            model,
            adam: Adam::new(AdamConfig::default()),
            stopper: EarlyStopping::new(cfg.patience),
            epoch: 0,
            steps: 0,
            history: Vec::new(),
            finished: false,
        }
    }

    /// Whether early stopping fired or the epoch or step budget of `cfg`
    /// is used up.
    pub fn budget_spent(&self, cfg: &TrainConfig) -> bool {
        self.stopper.should_stop() || self.epoch >= cfg.max_epochs || cfg.max_steps.is_some_and(|m| self.steps >= m)
    }

    /// The model with the best validation loss seen so far.
    pub fn best_model(&self) -> Model {
        Model { params: self.best.clone(), ..self.model.clone() }
    }

    /// Writes `state.ckpt` (current and best parameters, optimizer moments)
    /// and `state.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut all = self.adam.state();
        for (k, v) in self.model.to_tensors() {
            all.insert(format!("current.{k}"), v);
        }
        for (k, v) in &self.best {
            all.insert(format!("best.{k}"), v.clone());
        }
        write_checkpoint(&dir.join("state.ckpt"), &all)?;
        let meta = StateMeta {
            stopper: self.stopper.clone(),
            epoch: self.epoch,
            steps: self.steps,
            history: self.history.clone(),
            finished: self.finished,
        };
        fs::write(dir.join("state.json"), serde_json::to_string(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, config: ModelConfig) -> Result<Self> {
        let all = read_checkpoint(&dir.join("state.ckpt"))?;
        let meta: StateMeta = serde_json::from_str(&fs::read_to_string(dir.join("state.json"))?)?;
        let pick = |prefix: &str| -> NamedTensors {
            all.iter().filter_map(|(k, v)| k.strip_prefix(prefix).map(|n| (n.to_string(), v.clone()))).collect()
        };
        let model = Model::from_tensors(config, pick("current."))?;
        let best = pick("best.");
        let adam = Adam::from_state(AdamConfig::default(), &all)?;
        Ok(Self {
            model,
            best,
            adam,
            stopper: meta.stopper,
            epoch: meta.epoch,
            steps: meta.steps,
            history: meta.history,
            finished: meta.finished,
        })
    }
}

/// Loss of one sample in `f32` with gradients when `train` is set.
fn sample_loss(
    model: &Model,
    sample: &TrainSample,
    weights: &LossWeights,
    mode: ForwardMode,
    with_grads: bool,
) -> Result<(f64, Option<NamedTensors>)> {
    let mut tape = Tape::<f32>::new();
    let params = bind(&mut tape, &model.params);
    let mut ctx = Ctx { tape: &mut tape, params: &params, cfg: &model.config, mode };
    let out = ctx.forward(&sample.input, model.label_table.as_ref())?;
    let loss = composite_loss(&mut tape, out.node_logits, &sample.classes, out.edge_logits, &sample.predicates, weights)?;
    let value = tape.value(loss).item() as f64;
    if !value.is_finite() {
        let norms: Vec<String> =
            model.params.iter().map(|(k, v)| format!("{k}={:.4e}", v.norm())).collect();
        return Err(Error::Numeric(format!(
            "non-finite loss {value} on {} frame {}; parameter norms: {}",
            sample.scene_id,
            sample.frame,
            norms.join(", ")
        )));
    }
    if !with_grads {
        return Ok((value, None));
    }
    let grads = tape.backward(loss)?;
    let named = params
        .iter()
        .map(|(k, &v)| (k.clone(), grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(model.params[k].shape().to_vec()))))
        .collect();
    Ok((value, Some(named)))
}

/// Mean eval-mode loss over samples.
pub fn mean_loss(model: &Model, samples: &[TrainSample], weights: &LossWeights) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in samples {
        total += sample_loss(model, s, weights, ForwardMode::EVAL, false)?.0;
    }
    Ok(total / samples.len() as f64)
}

/// Runs one epoch of training on `state`. Returns whether training is over.
pub fn train_epoch(
    state: &mut TrainState,
    train: &[TrainSample],
    val: &[TrainSample],
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<bool> {
    if state.finished {
        return Ok(true);
    }
    if train.is_empty() {
        return Err(Error::data("no training frames"));
    }
    let epoch = state.epoch + 1;
    let lr = cfg.schedule().rate(epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, &[0xe90c, epoch as u64]));
    let mut total = 0.0;
    let mut taken = 0;
    for &i in &order {
        if cfg.max_steps.is_some_and(|m| state.steps >= m) {
            break;
        }
        let mode = ForwardMode::train(rng::stream_id(&[cfg.seed, epoch as u64, state.steps as u64]));
        let (loss, grads) = sample_loss(&state.model, &train[i], weights, mode, true)?;
        state.adam.step(lr, &mut state.model.params, &grads.expect("requested"))?;
        state.steps += 1;
        taken += 1;
        total += loss;
    }
    let train_loss = if taken > 0 { total / taken as f64 } else { f64::NAN };
    let val_loss = if val.is_empty() { mean_loss(&state.model, train, weights)? } else { mean_loss(&state.model, val, weights)? };
    if state.stopper.observe(epoch, val_loss) {
        state.best = state.model.params.clone();
    }
    let record = EpochRecord { epoch, train_loss, val_loss, lr, steps: state.steps };
    info!(
        "epoch {epoch}: train {train_loss:.5} val {val_loss:.5} lr {lr:.3e} (best epoch {})",
        state.stopper.best_epoch
    );
    state.history.push(record);
    state.epoch = epoch;
    state.finished = state.budget_spent(cfg);
    Ok(state.finished)
}

/// Trains until early stopping, `max_epochs` or `max_steps`, calling
/// `after_epoch` once per finished epoch.
pub fn train(
    mut state: TrainState,
    train: &[TrainSample],
    val: &[TrainSample],
    weights: &LossWeights,
    cfg: &TrainConfig,
    after_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if val.is_empty() {
        warn!("no validation frames; early stopping watches the training loss");
    }
    state.finished = state.budget_spent(cfg);
    while !state.finished {
        train_epoch(&mut state, train, val, weights, cfg)?;
        after_epoch(&state)?;
    }
    Ok(state)
}

named_enum!(
    /// Labels carried by global nodes while evaluating: the model's own
    /// predictions of earlier frames, or their ground truth.
    EvalPrior { Predicted => "predicted", GroundTruth => "ground_truth" }
);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub prior: EvalPrior,
    /// Fraction of global labels corrupted before each frame's prediction.
    pub falsify: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { prior: EvalPrior::Predicted, falsify: 0.0, seed: 0 }
    }
}

/// Per-frame output of incremental inference.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub scene_id: String,
    pub frame: usize,
    pub prediction: FramePrediction,
    pub truth: Option<FrameTruth>,
    /// Global graph after merging this frame.
    pub snapshot: GraphSnapshot,
}

fn predicted_graph(pred: &FramePrediction) -> Prediction {
    let classes = (0..pred.node_logits.rows()).map(|i| argmax(pred.node_logits.row(i))).collect();
    let predicates = (0..pred.edges.len())
        .map(|e| {
            (0..pred.edge_logits.cols()).filter(|&p| sigmoid(pred.edge_logits.at(e, p)) >= PREDICATE_THRESHOLD).collect()
        })
        .collect();
    Prediction { classes, predicates }
}

/// Streams the frames of one scene through the model, merging each frame
/// into the global graph before the next.
pub fn run_scene(
    model: &Model,
    seq: &SceneSequence,
    labels: &LabelSpace,
    cfg: &EvalConfig,
    visit: &mut dyn FnMut(FrameResult) -> Result<()>,
) -> Result<()> {
    if labels.num_objects() != model.config.num_classes || labels.num_predicates() != model.config.num_predicates {
        return Err(Error::config(format!(
            "model predicts {} classes / {} predicates, data has {} / {}",
            model.config.num_classes,
            model.config.num_predicates,
            labels.num_objects(),
            labels.num_predicates()
        )));
    }
    let needs_truth = cfg.prior == EvalPrior::GroundTruth;
    let mut graph = HeteroSceneGraph::new();
    for frame in &seq.frames {
        let local = build_local_graph(frame, &mut frame_stream(cfg.seed, &seq.scene_id, frame.index, SAMPLE_POINTS))?;
        graph.attach_local(local, &InstanceIdMatcher)?;
        let merge_rng = &mut frame_stream(cfg.seed, &seq.scene_id, frame.index, MERGE_POINTS);
        if graph.local.nodes.is_empty() {
            graph.merge(&Prediction { classes: vec![], predicates: vec![] }, merge_rng)?;
            continue;
        }
        let truth = match graph.local.gt_classes() {
            Some(_) => {
                let (classes, predicates) = local_truth(&graph, labels)?;
                Some(FrameTruth { classes, predicates, unseen: graph.unseen_mask() })
            }
            None if needs_truth => {
                return Err(Error::data(format!("{} frame {} lacks ground truth", seq.scene_id, frame.index)))
            }
            None => None,
        };
        let mut view = graph.clone();
        view.falsify_labels(
            cfg.falsify,
            labels.num_objects(),
            &mut frame_stream(cfg.seed, &seq.scene_id, frame.index, FALSIFY),
        )?;
        let input = GraphInput::from_graph(&view, model.config.uses_collisions())?;
        let (node_logits, edge_logits) = model.predict(&input)?;
        let prediction = FramePrediction { node_logits, edge_logits, edges: input.local_edges.clone() };
        let merged = match (&truth, cfg.prior) {
            (Some(t), EvalPrior::GroundTruth) => Prediction { classes: t.classes.clone(), predicates: t.predicates.clone() },
            _ => predicted_graph(&prediction),
        };
        graph.merge(&merged, merge_rng)?;
        debug!("{} frame {}: {} global nodes", seq.scene_id, frame.index, graph.global.len());
        visit(FrameResult {
            scene_id: seq.scene_id.clone(),
            frame: frame.index,
            snapshot: graph.snapshot(frame.index, labels),
            prediction,
            truth,
        })?;
    }
    Ok(())
}

/// Incremental evaluation over scenes.
pub fn evaluate(model: &Model, scenes: &[SceneSequence], labels: &LabelSpace, cfg: &EvalConfig) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::new(model.config.num_predicates);
    for seq in scenes {
        run_scene(model, seq, labels, cfg, &mut |r| match &r.truth {
            Some(t) => acc.add_frame(&r.prediction, t),
            None => Err(Error::data(format!("{} frame {} lacks ground truth", r.scene_id, r.frame))),
        })?;
    }
    Ok(acc.report())
}

/// Appends history records as JSON lines.
pub fn write_history(out: &mut impl Write, records: &[EpochRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
