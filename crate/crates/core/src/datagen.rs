//! Synthetic indoor scenes observed through sliding windows, the JSON-lines
//! scene file format, dataset splits and label embedding tables.
//!
//! Scenes are axis-aligned boxes on a floor slab in front of a wall. Some
//! classes share a size distribution on purpose (chair / nightstand / toilet,
//! cabinet / fridge, the soft items, lamp / plant, window / curtain), so
//! geometry alone cannot separate them while a label carried from an earlier
//! frame can.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngExt;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{overlap_volume, AxisAlignedBox, Point};
use crate::rng::{self, Rng};
use crate::scene::{FrameObservation, Instance, LabelSpace};
use crate::tensor::Tensor;

pub const SUPPORTED_BY: usize = 0;
pub const ATTACHED_TO: usize = 1;
pub const CLOSE_BY: usize = 15;

/// Vertical tolerance for resting contact (m).
pub const SUPPORT_TOLERANCE: f32 = 0.02;
/// Lateral gap below which side-by-side objects are attached (m).
pub const ATTACH_GAP: f32 = 0.05;
/// Centroid distance below which objects are close by (m).
pub const CLOSE_DISTANCE: f32 = 1.0;

const ROOM_DEPTH: f32 = 4.0;
const WALL_HEIGHT: f32 = 2.5;
const SLAB: f32 = 0.05;
const PLACEMENT_TRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Placement {
    Floor,
    /// On top of one of the supporting classes.
    OnSupport,
    /// Against the wall with the bottom at the given height.
    Wall(f32),
}

struct Template {
    class: &'static str,
    size: [f32; 3],
    placement: Placement,
    supports_items: bool,
}

const fn t(class: &'static str, size: [f32; 3], placement: Placement, supports_items: bool) -> Template {
    Template { class, size, placement, supports_items }
}

const TEMPLATES: [Template; 22] = [
    t("bed", [2.0, 1.6, 0.5], Placement::Floor, true),
    t("sofa", [1.9, 0.9, 0.85], Placement::Floor, true),
    t("table", [1.2, 0.8, 0.75], Placement::Floor, true),
    t("counter", [1.6, 0.6, 0.9], Placement::Floor, true),
    t("bathtub", [1.7, 0.75, 0.55], Placement::Floor, false),
    t("cabinet", [0.7, 0.6, 1.8], Placement::Floor, false),
    t("fridge", [0.7, 0.6, 1.8], Placement::Floor, false),
    t("chair", [0.5, 0.5, 0.65], Placement::Floor, false),
    t("nightstand", [0.5, 0.5, 0.65], Placement::Floor, true),
    t("toilet", [0.5, 0.5, 0.65], Placement::Floor, false),
    t("pillow", [0.45, 0.35, 0.12], Placement::OnSupport, false),
    t("clothes", [0.45, 0.35, 0.12], Placement::OnSupport, false),
    t("towel", [0.45, 0.35, 0.12], Placement::OnSupport, false),
    t("blanket", [0.45, 0.35, 0.12], Placement::OnSupport, false),
    t("lamp", [0.3, 0.3, 0.45], Placement::OnSupport, false),
    t("plant", [0.3, 0.3, 0.45], Placement::OnSupport, false),
    t("box", [0.25, 0.25, 0.25], Placement::OnSupport, false),
    t("window", [1.0, 0.06, 1.2], Placement::Wall(0.8), false),
    t("curtain", [1.0, 0.06, 1.2], Placement::Wall(0.8), false),
    t("door", [0.9, 0.06, 2.0], Placement::Wall(0.0), false),
    t("tv", [1.0, 0.08, 0.6], Placement::Wall(1.0), false),
    t("shelf", [1.0, 0.3, 0.35], Placement::Wall(1.3), false),
];

/// Parameters of one synthetic scene and of how it is observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    /// Objects besides the floor and the wall.
    pub num_objects: usize,
    pub frames_per_scene: usize,
    /// Points for a fully visible instance.
    pub points_per_instance: usize,
    pub noise_std: f32,
    /// Relative per-axis size jitter.
    pub size_jitter: f32,
    /// Width of the visibility window as a fraction of the room length.
    pub window_fraction: f32,
    /// Room extent along x (m); grows with `num_objects` when unset.
    pub room_length: Option<f32>,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            num_objects: 8,
            frames_per_scene: 6,
            points_per_instance: 400,
            noise_std: 0.005,
            size_jitter: 0.1,
            window_fraction: 0.4,
            room_length: None,
            seed: 0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_objects >= 1
            && self.frames_per_scene >= 1
            && self.points_per_instance >= 1
            && self.noise_std >= 0.0
            && (0.0..1.0).contains(&self.size_jitter)
            && self.window_fraction > 0.0
            && self.window_fraction <= 1.0
            && self.room_length.is_none_or(|l| l >= 2.5);
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid scene spec {self:?}")))
        }
    }

    pub fn room_length(&self) -> f32 {
        self.room_length.unwrap_or(2.0 + 0.6 * self.num_objects as f32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub class: usize,
    pub bbox: AxisAlignedBox,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub objects: Vec<SceneObject>,
    /// `(subject id, object id, predicate)`, sorted.
    pub relations: Vec<(u32, u32, usize)>,
    pub room: AxisAlignedBox,
}

fn intervals_overlap(a0: f32, a1: f32, b0: f32, b1: f32) -> bool {
    a0.max(b0) < a1.min(b1)
}

/// `a` rests on top of `b`.
pub fn is_supported_by(a: &AxisAlignedBox, b: &AxisAlignedBox) -> bool {
    (a.min[2] - b.max[2]).abs() <= SUPPORT_TOLERANCE
        && intervals_overlap(a.min[0], a.max[0], b.min[0], b.max[0])
        && intervals_overlap(a.min[1], a.max[1], b.min[1], b.max[1])
}

/// Side-by-side contact: vertical overlap, disjoint footprints, lateral gap
/// below [`ATTACH_GAP`].
pub fn is_attached(a: &AxisAlignedBox, b: &AxisAlignedBox) -> bool {
    let g = a.gaps(b);
    intervals_overlap(a.min[2], a.max[2], b.min[2], b.max[2]) && !footprints_overlap(a, b) && g[0].max(g[1]) < ATTACH_GAP
}

fn footprints_overlap(a: &AxisAlignedBox, b: &AxisAlignedBox) -> bool {
    intervals_overlap(a.min[0], a.max[0], b.min[0], b.max[0]) && intervals_overlap(a.min[1], a.max[1], b.min[1], b.max[1])
}

pub fn is_close_by(a: &AxisAlignedBox, b: &AxisAlignedBox) -> bool {
    let (ca, cb) = (a.center(), b.center());
    let d2: f32 = (0..3).map(|k| (ca[k] - cb[k]).powi(2)).sum();
    d2.sqrt() < CLOSE_DISTANCE
}

/// Applies the geometric relation rules to every ordered object pair.
/// Floor and wall only take part in support and attachment.
pub fn derive_relations(objects: &[SceneObject], labels: &LabelSpace) -> Vec<(u32, u32, usize)> {
    let structural: Vec<usize> = ["floor", "wall"].iter().filter_map(|c| labels.object_index(c)).collect();
    let mut out = Vec::new();
    for a in objects {
        for b in objects {
            if a.id == b.id {
                continue;
            }
            if is_supported_by(&a.bbox, &b.bbox) {
                out.push((a.id, b.id, SUPPORTED_BY));
            }
            if is_attached(&a.bbox, &b.bbox) {
                out.push((a.id, b.id, ATTACHED_TO));
            }
            let either_structural = structural.contains(&a.class) || structural.contains(&b.class);
            if !either_structural && is_close_by(&a.bbox, &b.bbox) {
                out.push((a.id, b.id, CLOSE_BY));
            }
        }
    }
    out.sort_unstable();
    out
}

fn jittered(size: [f32; 3], jitter: f32, r: &mut Rng) -> [f32; 3] {
    size.map(|s| s * (1.0 + jitter * r.random_range(-1.0f32..=1.0)))
}

fn free(candidate: &AxisAlignedBox, placed: &[SceneObject], skip: usize) -> bool {
    // `skip` leading objects (floor, wall) are exempt from the overlap test.
    placed[skip..].iter().all(|o| overlap_volume(candidate, &o.bbox) == 0.0)
}

fn place(
    template: &Template,
    spec: &SyntheticSceneSpec,
    placed: &[SceneObject],
    supports: &[usize],
    r: &mut Rng,
) -> Option<AxisAlignedBox> {
    let length = spec.room_length();
    let mut size = jittered(template.size, spec.size_jitter, r);
    for _ in 0..PLACEMENT_TRIES {
        let candidate = match template.placement {
            Placement::Floor => {
                if r.random_bool(0.5) {
                    size.swap(0, 1);
                }
                if size[0] > length || size[1] > ROOM_DEPTH {
                    continue;
                }
                let x = r.random_range(0.0..=length - size[0]);
                let y = r.random_range(0.0..=ROOM_DEPTH - size[1]);
                AxisAlignedBox { min: [x, y, 0.0], max: [x + size[0], y + size[1], size[2]] }
            }
            Placement::Wall(z) => {
                let x = r.random_range(0.0..=length - size[0]);
                AxisAlignedBox {
                    min: [x, ROOM_DEPTH - size[1], z],
                    max: [x + size[0], ROOM_DEPTH, z + size[2]],
                }
            }
            Placement::OnSupport => {
                let &s = supports.choose(r)?;
                let top = placed[s].bbox;
                let (fx, fy) = (size[0].min(top.max[0] - top.min[0]), size[1].min(top.max[1] - top.min[1]));
                let x = r.random_range(top.min[0]..=top.max[0] - fx);
                let y = r.random_range(top.min[1]..=top.max[1] - fy);
                AxisAlignedBox { min: [x, y, top.max[2]], max: [x + fx, y + fy, top.max[2] + size[2]] }
            }
        };
        if free(&candidate, placed, 2) {
            return Some(candidate);
        }
    }
    None
}

/// Builds one scene; a pure function of `spec`.
pub fn generate_scene(spec: &SyntheticSceneSpec, id: &str, labels: &LabelSpace) -> Result<Scene> {
    spec.validate()?;
    let class = |name: &str| {
        labels.object_index(name).ok_or_else(|| Error::Generation(format!("label space has no class {name:?}")))
    };
    let mut r = rng::stream(spec.seed, &[0x5ce7e]);
    let length = spec.room_length();
    let mut objects = vec![
        SceneObject {
            id: 1,
            class: class("floor")?,
            bbox: AxisAlignedBox { min: [0.0, 0.0, -SLAB], max: [length, ROOM_DEPTH, 0.0] },
        },
        SceneObject {
            id: 2,
            class: class("wall")?,
            bbox: AxisAlignedBox { min: [0.0, ROOM_DEPTH, 0.0], max: [length, ROOM_DEPTH + SLAB, WALL_HEIGHT] },
        },
    ];
    let mut supports = Vec::new();
    while objects.len() < spec.num_objects + 2 {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let template = TEMPLATES.choose(&mut r).expect("templates are non-empty");
            if template.placement == Placement::OnSupport && supports.is_empty() {
                continue;
            }
            if let Some(bbox) = place(template, spec, &objects, &supports, &mut r) {
                placed = Some((template, bbox));
                break;
            }
        }
        let Some((template, bbox)) = placed else {
            return Err(Error::Generation(format!(
                "scene {id}: could not place object {} of {} in a {length:.1} m room",
                objects.len() - 1,
                spec.num_objects
            )));
        };
        if template.supports_items {
            supports.push(objects.len());
        }
        objects.push(SceneObject { id: objects.len() as u32 + 1, class: class(template.class)?, bbox });
    }
    let relations = derive_relations(&objects, labels);
    let room = AxisAlignedBox { min: [0.0, 0.0, -SLAB], max: [length, ROOM_DEPTH + SLAB, WALL_HEIGHT] };
    Ok(Scene { id: id.to_string(), objects, relations, room })
}

fn clip_x(b: &AxisAlignedBox, x0: f32, x1: f32) -> Option<AxisAlignedBox> {
    let lo = b.min[0].max(x0);
    let hi = b.max[0].min(x1);
    (hi > lo).then(|| AxisAlignedBox { min: [lo, b.min[1], b.min[2]], max: [hi, b.max[1], b.max[2]] })
}

/// Uniform points on the surface of a box, with isotropic Gaussian noise.
pub fn sample_box_surface(b: &AxisAlignedBox, n: usize, noise: &Normal<f32>, r: &mut Rng) -> Vec<Point> {
    let e = b.extents();
    let faces = [e[1] * e[2], e[1] * e[2], e[0] * e[2], e[0] * e[2], e[0] * e[1], e[0] * e[1]];
    let total: f32 = faces.iter().sum();
    (0..n)
        .map(|_| {
            let mut p = [0, 1, 2].map(|k| b.min[k] + r.random::<f32>() * e[k]);
            if total > 0.0 {
                let mut pick = r.random::<f32>() * total;
                let mut face = 5;
                for (f, &area) in faces.iter().enumerate() {
                    if pick < area {
                        face = f;
                        break;
                    }
                    pick -= area;
                }
                let axis = face / 2;
                p[axis] = if face % 2 == 0 { b.min[axis] } else { b.max[axis] };
            }
            p.map(|v| v + noise.sample(r))
        })
        .collect()
}

/// Observes the scene through `frames_per_scene` windows sliding along x.
pub fn generate_frames(scene: &Scene, spec: &SyntheticSceneSpec) -> Result<Vec<FrameObservation>> {
    spec.validate()?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let length = scene.room.max[0] - scene.room.min[0];
    let width = length * spec.window_fraction;
    let frames = spec.frames_per_scene;
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = if frames > 1 { scene.room.min[0] + f as f32 * (length - width) / (frames - 1) as f32 } else { scene.room.min[0] };
        out.push(frame_in_window(scene, spec, f, start, start + width, &noise)?);
    }
    Ok(out)
}

/// One observation of everything whose x-extent is sufficiently inside
/// `[x0, x1]`.
pub fn frame_in_window(
    scene: &Scene,
    spec: &SyntheticSceneSpec,
    index: usize,
    x0: f32,
    x1: f32,
    noise: &Normal<f32>,
) -> Result<FrameObservation> {
    let mut r = rng::stream(spec.seed, &[0xf4a3e, index as u64]);
    let mut visible = Vec::new();
    for o in &scene.objects {
        let Some(part) = clip_x(&o.bbox, x0, x1) else { continue };
        let seen = part.max[0] - part.min[0];
        let covered = seen / (o.bbox.max[0] - o.bbox.min[0]);
        if covered >= 0.3 || seen >= 0.3 {
            let n = ((spec.points_per_instance as f32 * covered.min(1.0)).round() as usize).max(32);
            visible.push((o, sample_box_surface(&part, n, noise, &mut r)));
        }
    }
    let ids: HashSet<u32> = visible.iter().map(|(o, _)| o.id).collect();
    let instances = visible
        .into_iter()
        .map(|(o, points)| Instance {
            id: o.id,
            class: Some(o.class),
            points,
            relations: scene
                .relations
                .iter()
                .filter(|&&(s, d, _)| s == o.id && ids.contains(&d))
                .map(|&(_, d, p)| (d, p))
                .collect(),
        })
        .collect();
    Ok(FrameObservation { index, instances })
}

/// A scene id with its observed frames, as stored in scene files.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSequence {
    pub scene_id: String,
    pub frames: Vec<FrameObservation>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Scene { scene_id: String, objects: Vec<String>, predicates: Vec<String> },
    Frame { index: usize, instances: Vec<WireInstance> },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireInstance {
    id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<usize>,
    /// `x0 y0 z0 x1 y1 z1 ...`
    points: Vec<f32>,
    #[serde(default)]
    relations: Vec<(u32, usize)>,
}

/// Writes scenes as JSON lines: a `scene` header line, then one `frame`
/// line per frame.
pub fn write_scenes(out: &mut impl Write, labels: &LabelSpace, scenes: &[SceneSequence]) -> Result<()> {
    for s in scenes {
        let header =
            Line::Scene { scene_id: s.scene_id.clone(), objects: labels.objects.clone(), predicates: labels.predicates.clone() };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for f in &s.frames {
            let line = Line::Frame {
                index: f.index,
                instances: f
                    .instances
                    .iter()
                    .map(|i| WireInstance {
                        id: i.id,
                        class: i.class,
                        points: i.points.iter().flatten().copied().collect(),
                        relations: i.relations.clone(),
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Parses a scene file, checking every scene's label space against `labels`
/// and every frame against its contract.
pub fn read_scenes(input: impl BufRead, labels: &LabelSpace) -> Result<Vec<SceneSequence>> {
    let mut scenes: Vec<SceneSequence> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::data(format!("line {}: {e}", n + 1)))?;
        match parsed {
            Line::Scene { scene_id, objects, predicates } => {
                if objects != labels.objects || predicates != labels.predicates {
                    return Err(Error::data(format!("line {}: scene {scene_id} uses a different label space", n + 1)));
                }
                scenes.push(SceneSequence { scene_id, frames: Vec::new() });
            }
            Line::Frame { index, instances } => {
                let scene = scenes
                    .last_mut()
                    .ok_or_else(|| Error::data(format!("line {}: frame before any scene header", n + 1)))?;
                if scene.frames.last().is_some_and(|f| f.index >= index) {
                    return Err(Error::data(format!("line {}: frame indices must increase", n + 1)));
                }
                let mut frame = FrameObservation { index, instances: Vec::with_capacity(instances.len()) };
                for w in instances {
                    if w.points.len() % 3 != 0 {
                        return Err(Error::data(format!("line {}: instance {} point list not a multiple of 3", n + 1, w.id)));
                    }
                    let points = w.points.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
                    frame.instances.push(Instance { id: w.id, class: w.class, points, relations: w.relations });
                }
                frame.validate(labels).map_err(|e| Error::data(format!("line {}: {e}", n + 1)))?;
                scene.frames.push(frame);
            }
        }
    }
    Ok(scenes)
}

pub fn write_scene_file(path: &Path, labels: &LabelSpace, scenes: &[SceneSequence]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_scenes(&mut out, labels, scenes)?;
    out.flush()?;
    Ok(())
}

pub fn read_scene_file(path: &Path, labels: &LabelSpace) -> Result<Vec<SceneSequence>> {
    let file = File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    read_scenes(BufReader::new(file), labels)
}

/// Scene-level split: `floor(0.1 n)` scenes each for validation and test,
/// the rest for training, after a seeded shuffle.
pub fn split_scenes(ids: &[String], seed: u64) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut order = ids.to_vec();
    order.shuffle(&mut rng::stream(seed, &[0x5b117]));
    let held = ids.len() / 10;
    let test = order.split_off(order.len() - held);
    let val = order.split_off(order.len() - held);
    if held == 0 {
        warn!("{} scene(s): validation and test splits are empty", ids.len());
    }
    (order, val, test)
}

/// Generates `num_scenes` scenes with per-scene seeds derived from `spec.seed`.
pub fn generate_dataset(spec: &SyntheticSceneSpec, num_scenes: usize, labels: &LabelSpace) -> Result<Vec<SceneSequence>> {
    (0..num_scenes)
        .map(|i| {
            let scene_spec = SyntheticSceneSpec { seed: rng::stream_id(&[spec.seed, i as u64]), ..spec.clone() };
            let id = format!("scene_{i:04}");
            let scene = generate_scene(&scene_spec, &id, labels)?;
            Ok(SceneSequence { scene_id: id, frames: generate_frames(&scene, &scene_spec)? })
        })
        .collect()
}

/// Class name to vector, all vectors of one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(vectors: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        let dim = vectors.values().next().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::data("embedding table is empty"));
        }
        if let Some((name, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::data(format!("embedding {name:?} has dimension {}, expected {dim}", v.len())));
        }
        Ok(Self { dim, vectors })
    }

    /// Deterministic unit vectors for every object class.
    pub fn pseudo(labels: &LabelSpace, dim: usize, seed: u64) -> Result<Self> {
        let vectors = labels
            .objects
            .iter()
            .map(|name| Ok((name.clone(), pseudo_embedding(name, dim, seed)?)))
            .collect::<Result<_>>()?;
        Self::new(vectors)
    }

    /// Parses `name f1 f2 ...` lines and requires an entry for every class.
    pub fn parse(input: impl BufRead, labels: &LabelSpace) -> Result<Self> {
        let mut vectors = BTreeMap::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(name) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f32>().map_err(|e| Error::data(format!("line {}: {f:?}: {e}", n + 1))))
                .collect::<Result<Vec<_>>>()?;
            vectors.insert(name.to_string(), values);
        }
        let table = Self::new(vectors)?;
        if let Some(missing) = labels.objects.iter().find(|c| !table.vectors.contains_key(*c)) {
            return Err(Error::data(format!("embedding table has no entry for class {missing:?}")));
        }
        Ok(table)
    }

    pub fn load(path: &Path, labels: &LabelSpace) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        Self::parse(BufReader::new(file), labels)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, name: &str) -> Result<&[f32]> {
        self.vectors.get(name).map(Vec::as_slice).ok_or_else(|| Error::data(format!("no embedding for {name:?}")))
    }

    /// Rows in label-space order.
    pub fn rows(&self, labels: &LabelSpace) -> Result<Vec<Vec<f32>>> {
        labels.objects.iter().map(|c| self.get(c).map(<[f32]>::to_vec)).collect()
    }

    /// `[classes × dim]` matrix in label-space order.
    pub fn to_tensor(&self, labels: &LabelSpace) -> Result<Tensor<f32>> {
        Tensor::from_rows(&self.rows(labels)?)
    }
}

/// Unit-norm vector seeded by the hash of `label` and `seed`.
pub fn pseudo_embedding(label: &str, dim: usize, seed: u64) -> Result<Vec<f32>> {
    if dim < 2 {
        return Err(Error::data(format!("embedding dimension {dim} < 2")));
    }
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut r = rng::stream(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")), &[0xe3b]);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(v.iter().map(|x| (x / norm) as f32).collect())
}
