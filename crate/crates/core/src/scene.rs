//! The two-layer scene graph: a local graph per frame, the global graph
//! accumulated from earlier predictions, match edges between them, merging,
//! label falsification and the collision layer.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use log::warn;
use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compute_descriptor, harmonic_centrality, overlap_volume, proximity_edges, sample_points, AxisAlignedBox,
    Descriptor, Point, PROXIMITY_THRESHOLD, SAMPLE_SIZE,
};
use crate::rng::Rng;

pub const OBJECT_CLASSES: [&str; 27] = [
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window", "counter", "shelf", "curtain",
    "pillow", "clothes", "ceiling", "fridge", "tv", "towel", "plant", "box", "nightstand", "toilet", "sink", "lamp",
    "bathtub", "object", "blanket",
];

pub const PREDICATE_CLASSES: [&str; 16] = [
    "supported by", "attached to", "standing on", "lying on", "hanging on", "connected to", "leaning against",
    "part of", "belonging to", "build in", "standing in", "cover", "lying in", "hanging in", "same as", "close by",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub objects: Vec<String>,
    pub predicates: Vec<String>,
}

impl LabelSpace {
    pub fn new(objects: Vec<String>, predicates: Vec<String>) -> Result<Self> {
        for (kind, names) in [("object", &objects), ("predicate", &predicates)] {
            if names.is_empty() {
                return Err(Error::data(format!("empty {kind} label list")));
            }
            let mut seen = HashSet::new();
            if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
                return Err(Error::data(format!("duplicate {kind} label {dup:?}")));
            }
        }
        Ok(Self { objects, predicates })
    }

    /// The 27-object / 16-predicate space.
    pub fn rio27() -> Self {
        Self {
            objects: OBJECT_CLASSES.iter().map(|s| s.to_string()).collect(),
            predicates: PREDICATE_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o == name)
    }

    pub fn predicate_index(&self, name: &str) -> Option<usize> {
        self.predicates.iter().position(|p| p == name)
    }
}

/// One segmented instance as seen in a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<usize>,
    pub points: Vec<Point>,
    /// Ground-truth out-relations `(target id, predicate)`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<(u32, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameObservation {
    pub index: usize,
    pub instances: Vec<Instance>,
}

impl FrameObservation {
    pub fn validate(&self, labels: &LabelSpace) -> Result<()> {
        let mut ids = HashSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.id) {
                return Err(Error::data(format!("frame {}: duplicate instance id {}", self.index, inst.id)));
            }
            if inst.class.is_some_and(|c| c >= labels.num_objects()) {
                return Err(Error::data(format!("frame {}: instance {} class out of range", self.index, inst.id)));
            }
            if inst.relations.iter().any(|&(_, p)| p >= labels.num_predicates()) {
                return Err(Error::data(format!("frame {}: instance {} predicate out of range", self.index, inst.id)));
            }
            if inst.points.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::data(format!("frame {}: instance {} has non-finite points", self.index, inst.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalNode {
    pub instance_id: u32,
    pub points: Vec<Point>,
    pub bbox: AxisAlignedBox,
    pub descriptor: Descriptor,
    pub gt_class: Option<usize>,
}

/// Directed near edge between two local nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct NearEdge {
    pub src: usize,
    pub dst: usize,
    /// Sorted ground-truth predicates (empty at inference).
    pub gt_predicates: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalGraph {
    pub frame_index: usize,
    pub nodes: Vec<LocalNode>,
    pub edges: Vec<NearEdge>,
    /// Instances dropped because their point cloud was empty.
    pub skipped: Vec<u32>,
    /// Ground-truth relations between visible instances that are not near
    /// pairs and therefore have no candidate edge.
    pub dropped_relations: usize,
}

impl LocalGraph {
    pub fn gt_classes(&self) -> Option<Vec<usize>> {
        self.nodes.iter().map(|n| n.gt_class).collect()
    }
}

/// Samples every instance to [`SAMPLE_SIZE`] points and connects instances
/// whose boxes are closer than the proximity threshold.
pub fn build_local_graph(frame: &FrameObservation, rng: &mut Rng) -> Result<LocalGraph> {
    let mut graph = LocalGraph { frame_index: frame.index, ..Default::default() };
    let mut boxes = Vec::new();
    for inst in &frame.instances {
        let Some(bbox) = AxisAlignedBox::from_points(&inst.points) else {
            warn!("frame {}: instance {} has no points, skipped", frame.index, inst.id);
            graph.skipped.push(inst.id);
            continue;
        };
        let points = sample_points(&inst.points, SAMPLE_SIZE, rng)?;
        let descriptor = compute_descriptor(&points)?;
        boxes.push(bbox);
        graph.nodes.push(LocalNode { instance_id: inst.id, points, bbox, descriptor, gt_class: inst.class });
    }
    let position: HashMap<u32, usize> = graph.nodes.iter().enumerate().map(|(i, n)| (n.instance_id, i)).collect();
    let mut labels: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for inst in &frame.instances {
        let Some(&src) = position.get(&inst.id) else { continue };
        for &(target, pred) in &inst.relations {
            if let Some(&dst) = position.get(&target) {
                labels.entry((src, dst)).or_default().insert(pred);
            }
        }
    }
    for (src, dst) in proximity_edges(&boxes, PROXIMITY_THRESHOLD) {
        let gt_predicates = labels.remove(&(src, dst)).map(|s| s.into_iter().collect()).unwrap_or_default();
        graph.edges.push(NearEdge { src, dst, gt_predicates });
    }
    graph.dropped_relations = labels.values().map(|s| s.len()).sum();
    Ok(graph)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalNode {
    pub instance_id: u32,
    pub points: Vec<Point>,
    pub bbox: AxisAlignedBox,
    pub descriptor: Descriptor,
    /// Class carried as the node's label feature.
    pub predicted_class: usize,
    pub gt_class: Option<usize>,
    pub first_seen_frame: usize,
}

/// Per-local-node classes and per-local-edge predicate sets, either predicted
/// or taken from ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub classes: Vec<usize>,
    pub predicates: Vec<Vec<usize>>,
}

impl Prediction {
    pub fn ground_truth(local: &LocalGraph) -> Result<Self> {
        let classes = local.gt_classes().ok_or_else(|| Error::data("local graph lacks ground-truth classes"))?;
        Ok(Self { classes, predicates: local.edges.iter().map(|e| e.gt_predicates.clone()).collect() })
    }
}

/// Links local nodes to global nodes of the same object.
pub trait Matcher {
    /// `(local index, global index)` pairs.
    fn match_nodes(&self, global: &[GlobalNode], local: &LocalGraph) -> Vec<(usize, usize)>;
}

/// Matches equal instance ids. Used for ground-truth matching and as the
/// default tracker, i.e. segmentation provides persistent ids.
#[derive(Clone, Copy, Debug, Default)]
pub struct InstanceIdMatcher;

impl Matcher for InstanceIdMatcher {
    fn match_nodes(&self, global: &[GlobalNode], local: &LocalGraph) -> Vec<(usize, usize)> {
        let index: HashMap<u32, usize> = global.iter().enumerate().map(|(i, n)| (n.instance_id, i)).collect();
        local
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(l, n)| index.get(&n.instance_id).map(|&g| (l, g)))
            .collect()
    }
}

/// Runs the matcher and validates that the result is a partial injection
/// from local to global nodes.
pub fn match_instances(global: &[GlobalNode], local: &LocalGraph, matcher: &dyn Matcher) -> Result<Vec<Option<usize>>> {
    let mut out = vec![None; local.nodes.len()];
    let mut used = HashSet::new();
    for (l, g) in matcher.match_nodes(global, local) {
        if l >= local.nodes.len() || g >= global.len() {
            return Err(Error::contract(format!("match ({l}, {g}) out of range")));
        }
        if out[l].is_some() {
            return Err(Error::contract(format!("local node {l} matched twice")));
        }
        if !used.insert(g) {
            return Err(Error::contract(format!("global node {g} matched twice")));
        }
        out[l] = Some(g);
    }
    Ok(out)
}

/// Edge of the collision layer with its 8 features
/// `[overlap, extents of i, extents of j, H(i) - H(j)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollisionEdge {
    pub src: usize,
    pub dst: usize,
    pub features: [f32; 8],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CollisionLayer {
    pub edges: Vec<CollisionEdge>,
    pub centrality: Vec<f32>,
}

/// Collision edges (both directions) between global boxes with positive
/// overlap; centrality is computed on the collision graph itself.
pub fn build_collision_layer(global: &[GlobalNode]) -> CollisionLayer {
    let mut pairs = Vec::new();
    for i in 0..global.len() {
        for j in i + 1..global.len() {
            let v = overlap_volume(&global[i].bbox, &global[j].bbox);
            if v > 0.0 {
                pairs.push((i, j, v));
            }
        }
    }
    let undirected: Vec<(usize, usize)> = pairs.iter().map(|&(i, j, _)| (i, j)).collect();
    let centrality = harmonic_centrality(global.len(), &undirected);
    let feature = |i: usize, j: usize, v: f32| {
        let (ei, ej) = (global[i].bbox.extents(), global[j].bbox.extents());
        [v, ei[0], ei[1], ei[2], ej[0], ej[1], ej[2], centrality[i] - centrality[j]]
    };
    let mut edges = Vec::with_capacity(2 * pairs.len());
    for &(i, j, v) in &pairs {
        edges.push(CollisionEdge { src: i, dst: j, features: feature(i, j, v) });
        edges.push(CollisionEdge { src: j, dst: i, features: feature(j, i, v) });
    }
    edges.sort_by_key(|e| (e.src, e.dst));
    CollisionLayer { edges, centrality }
}

/// The heterogeneous graph: global layer, the current local layer and the
/// match edges between them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeteroSceneGraph {
    pub global: Vec<GlobalNode>,
    /// Global near edges with the latest positive predicate set.
    pub global_edges: BTreeMap<(usize, usize), Vec<usize>>,
    pub local: LocalGraph,
    /// Global match of each local node.
    pub matches: Vec<Option<usize>>,
}

impl HeteroSceneGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the local layer and computes its match edges.
    pub fn attach_local(&mut self, local: LocalGraph, matcher: &dyn Matcher) -> Result<()> {
        self.matches = match_instances(&self.global, &local, matcher)?;
        self.local = local;
        Ok(())
    }

    /// `(global, local)` match edges.
    pub fn match_edges(&self) -> Vec<(usize, usize)> {
        self.matches.iter().enumerate().filter_map(|(l, g)| g.map(|g| (g, l))).collect()
    }

    /// Local nodes without a match edge.
    pub fn unseen_mask(&self) -> Vec<bool> {
        self.matches.iter().map(Option::is_none).collect()
    }

    pub fn global_near_edges(&self) -> Vec<(usize, usize)> {
        self.global_edges.keys().copied().collect()
    }

    /// Integrates the predicted local layer into the global layer and clears
    /// the local layer.
    pub fn merge(&mut self, prediction: &Prediction, rng: &mut Rng) -> Result<()> {
        let local = std::mem::take(&mut self.local);
        let matches = std::mem::take(&mut self.matches);
        if prediction.classes.len() != local.nodes.len() || prediction.predicates.len() != local.edges.len() {
            return Err(Error::contract(format!(
                "prediction covers {} nodes / {} edges, local layer has {} / {}",
                prediction.classes.len(),
                prediction.predicates.len(),
                local.nodes.len(),
                local.edges.len()
            )));
        }
        if matches.len() != local.nodes.len() {
            return Err(Error::contract("local layer was not matched before merging"));
        }
        let mut to_global = Vec::with_capacity(local.nodes.len());
        for ((node, &class), matched) in local.nodes.into_iter().zip(&prediction.classes).zip(matches) {
            let g = match matched {
                Some(g) => {
                    let target = &mut self.global[g];
                    let mut pool = std::mem::take(&mut target.points);
                    pool.extend_from_slice(&node.points);
                    target.points = sample_points(&pool, SAMPLE_SIZE, rng)?;
                    target.bbox = AxisAlignedBox::from_points(&target.points).expect("non-empty sample");
                    target.descriptor = compute_descriptor(&target.points)?;
                    target.predicted_class = class;
                    g
                }
                None => {
                    self.global.push(GlobalNode {
                        instance_id: node.instance_id,
                        bbox: AxisAlignedBox::from_points(&node.points).expect("non-empty sample"),
                        points: node.points,
                        descriptor: node.descriptor,
                        predicted_class: class,
                        gt_class: node.gt_class,
                        first_seen_frame: local.frame_index,
                    });
                    self.global.len() - 1
                }
            };
            to_global.push(g);
        }
        for (edge, preds) in local.edges.iter().zip(&prediction.predicates) {
            if !preds.is_empty() {
                let mut preds = preds.clone();
                preds.sort_unstable();
                preds.dedup();
                self.global_edges.insert((to_global[edge.src], to_global[edge.dst]), preds);
            }
        }
        // Touched nodes moved; drop near edges among them that are no longer near.
        let touched: HashSet<usize> = to_global.iter().copied().collect();
        let global = &self.global;
        self.global_edges.retain(|&(a, b), _| {
            !(touched.contains(&a) && touched.contains(&b))
                || global[a].bbox.distance(&global[b].bbox) < PROXIMITY_THRESHOLD
        });
        Ok(())
    }

    /// Replaces the label of exactly `round(fraction · N)` global nodes with a
    /// uniformly drawn different class. Returns the number changed.
    pub fn falsify_labels(&mut self, fraction: f64, num_classes: usize, rng: &mut Rng) -> Result<usize> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Parameter(format!("falsify fraction {fraction} outside [0, 1]")));
        }
        let count = (fraction * self.global.len() as f64).round() as usize;
        if count == 0 {
            return Ok(0);
        }
        if num_classes < 2 {
            return Err(Error::Parameter("falsifying labels needs at least two classes".into()));
        }
        let mut order: Vec<usize> = (0..self.global.len()).collect();
        order.shuffle(rng);
        for &i in &order[..count] {
            let old = self.global[i].predicted_class;
            let draw = rng.random_range(0..num_classes - 1);
            self.global[i].predicted_class = if draw >= old { draw + 1 } else { draw };
        }
        Ok(count)
    }

    pub fn collision_layer(&self) -> CollisionLayer {
        build_collision_layer(&self.global)
    }

    /// Snapshot of the global layer for export.
    pub fn snapshot(&self, frame: usize, labels: &LabelSpace) -> GraphSnapshot {
        let nodes = self
            .global
            .iter()
            .map(|n| NodeRecord {
                id: n.instance_id,
                class: labels.objects.get(n.predicted_class).cloned().unwrap_or_default(),
                descriptor: n.descriptor.to_array(),
            })
            .collect();
        let mut edges: Vec<EdgeRecord> = self
            .global_edges
            .iter()
            .map(|(&(a, b), preds)| EdgeRecord {
                src: self.global[a].instance_id,
                dst: self.global[b].instance_id,
                relation: "global_near_global".into(),
                predicates: preds.iter().filter_map(|&p| labels.predicates.get(p).cloned()).collect(),
            })
            .collect();
        edges.extend(self.collision_layer().edges.iter().map(|e| EdgeRecord {
            src: self.global[e.src].instance_id,
            dst: self.global[e.dst].instance_id,
            relation: "global_collides_global".into(),
            predicates: Vec::new(),
        }));
        GraphSnapshot { frame, nodes, edges }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u32,
    pub class: String,
    pub descriptor: [f32; 11],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: u32,
    pub dst: u32,
    pub relation: String,
    pub predicates: Vec<String>,
}

/// The global graph after integrating one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSnapshot {
    pub frame: usize,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<EdgeRecord>,
}

impl GraphSnapshot {
    pub fn write_jsonl(&self, out: &mut impl Write) -> Result<()> {
        serde_json::to_writer(&mut *out, self)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}
