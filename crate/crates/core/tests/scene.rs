use std::collections::HashSet;

use incsg::geometry::{AxisAlignedBox, Point, SAMPLE_SIZE};
use incsg::rng;
use incsg::scene::*;
use proptest::prelude::*;

fn box_points(min: Point, size: [f32; 3], n: usize) -> Vec<Point> {
    // Deterministic lattice filling the box, corners included.
    let side = (n as f32).cbrt().ceil() as usize;
    let mut pts = Vec::new();
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                let t = [i, j, k].map(|s| s as f32 / (side - 1).max(1) as f32);
                pts.push([min[0] + t[0] * size[0], min[1] + t[1] * size[1], min[2] + t[2] * size[2]]);
            }
        }
    }
    pts
}

fn instance(id: u32, class: usize, x: f32, relations: Vec<(u32, usize)>) -> Instance {
    Instance { id, class: Some(class), points: box_points([x, 0.0, 0.0], [1.0, 1.0, 1.0], 300), relations }
}

fn frame(index: usize, instances: Vec<Instance>) -> FrameObservation {
    FrameObservation { index, instances }
}

fn local(f: &FrameObservation) -> LocalGraph {
    build_local_graph(f, &mut rng::stream(0, &[f.index as u64])).unwrap()
}

fn global_node(id: u32, class: usize, x: f32) -> GlobalNode {
    // Corners first so the stored sample spans the whole unit box.
    let mut points = box_points([x, 0.0, 0.0], [1.0, 1.0, 1.0], 8);
    points.extend_from_slice(&box_points([x, 0.0, 0.0], [1.0, 1.0, 1.0], 300)[..SAMPLE_SIZE - 8]);
    GlobalNode {
        instance_id: id,
        bbox: AxisAlignedBox::from_points(&points).unwrap(),
        descriptor: incsg::geometry::compute_descriptor(&points).unwrap(),
        points,
        predicted_class: class,
        gt_class: Some(class),
        first_seen_frame: 0,
    }
}

#[test]
fn label_space_sizes() {
    let l = LabelSpace::rio27();
    assert_eq!((l.num_objects(), l.num_predicates()), (27, 16));
    assert_eq!(l.object_index("chair"), Some(4));
    assert!(LabelSpace::new(vec!["a".into(), "a".into()], vec!["p".into()]).is_err());
}

#[test]
fn local_graph_examples() {
    let g = local(&frame(0, vec![instance(1, 0, 0.0, vec![])]));
    assert_eq!((g.nodes.len(), g.edges.len()), (1, 0));
    assert_eq!(g.nodes[0].points.len(), SAMPLE_SIZE);

    let g = local(&frame(0, vec![instance(1, 0, 0.0, vec![(2, 15)]), instance(2, 1, 1.2, vec![])]));
    assert_eq!(g.nodes.len(), 2);
    let pairs: Vec<_> = g.edges.iter().map(|e| (e.src, e.dst)).collect();
    assert_eq!(pairs, vec![(0, 1), (1, 0)]);
    assert_eq!(g.edges[0].gt_predicates, vec![15]);
    assert!(g.edges[1].gt_predicates.is_empty());

    // Gaps: 0.3 between the first pair, 0.3 between the second, 1.6 across.
    let g = local(&frame(
        0,
        vec![instance(1, 0, 0.0, vec![]), instance(2, 0, 1.3, vec![]), instance(3, 0, 2.6, vec![(1, 3)])],
    ));
    let pairs: Vec<_> = g.edges.iter().map(|e| (e.src, e.dst)).collect();
    assert_eq!(pairs, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    assert_eq!(g.dropped_relations, 1);
}

#[test]
fn empty_instance_skipped() {
    let mut empty = instance(7, 0, 0.0, vec![]);
    empty.points.clear();
    let g = local(&frame(0, vec![empty, instance(8, 0, 5.0, vec![])]));
    assert_eq!(g.skipped, vec![7]);
    assert_eq!(g.nodes.len(), 1);
}

#[test]
fn frame_validation() {
    let l = LabelSpace::rio27();
    let f = frame(0, vec![instance(1, 0, 0.0, vec![]), instance(1, 0, 3.0, vec![])]);
    assert!(f.validate(&l).is_err());
    let f = frame(0, vec![instance(1, 27, 0.0, vec![])]);
    assert!(f.validate(&l).is_err());
    let f = frame(0, vec![instance(1, 0, 0.0, vec![(2, 16)])]);
    assert!(f.validate(&l).is_err());
}

#[test]
fn matching_examples() {
    let f = frame(0, vec![instance(1, 0, 0.0, vec![]), instance(2, 0, 3.0, vec![]), instance(3, 0, 6.0, vec![])]);
    let l = local(&f);
    assert_eq!(match_instances(&[], &l, &InstanceIdMatcher).unwrap(), vec![None; 3]);

    let all: Vec<_> = (1..=3).map(|id| global_node(id, 0, 3.0 * (id as f32 - 1.0))).collect();
    let m = match_instances(&all, &l, &InstanceIdMatcher).unwrap();
    assert_eq!(m.iter().flatten().count(), 3);

    let mixed = vec![global_node(9, 0, 10.0), global_node(3, 0, 6.0), global_node(1, 0, 0.0)];
    let m = match_instances(&mixed, &l, &InstanceIdMatcher).unwrap();
    assert_eq!(m, vec![Some(2), None, Some(1)]);
}

struct Duplicate;
impl Matcher for Duplicate {
    fn match_nodes(&self, _: &[GlobalNode], _: &LocalGraph) -> Vec<(usize, usize)> {
        vec![(0, 0), (0, 1)]
    }
}

#[test]
fn duplicate_match_is_contract_error() {
    let l = local(&frame(0, vec![instance(1, 0, 0.0, vec![])]));
    let g = vec![global_node(1, 0, 0.0), global_node(2, 0, 3.0)];
    assert!(matches!(match_instances(&g, &l, &Duplicate), Err(incsg::Error::Contract(_))));
}

fn integrate(graph: &mut HeteroSceneGraph, f: &FrameObservation) {
    graph.attach_local(local(f), &InstanceIdMatcher).unwrap();
    let p = Prediction::ground_truth(&graph.local).unwrap();
    graph.merge(&p, &mut rng::stream(1, &[f.index as u64])).unwrap();
}

#[test]
fn merge_into_empty_copies_local_layer() {
    let f = frame(0, vec![instance(1, 2, 0.0, vec![(2, 1)]), instance(2, 3, 1.2, vec![])]);
    let l = local(&f);
    let mut g = HeteroSceneGraph::new();
    integrate(&mut g, &f);
    assert_eq!(g.global.len(), 2);
    for (gn, ln) in g.global.iter().zip(&l.nodes) {
        assert_eq!(gn.points, ln.points);
        assert_eq!(gn.descriptor, ln.descriptor);
        assert_eq!(Some(gn.predicted_class), ln.gt_class);
    }
    assert_eq!(g.global_near_edges(), vec![(0, 1)]);
    assert!(g.local.nodes.is_empty() && g.matches.is_empty());
}

#[test]
fn merge_twice_keeps_node_set_and_resamples_from_union() {
    let f = frame(0, vec![instance(1, 2, 0.0, vec![]), instance(2, 3, 4.0, vec![])]);
    let mut g = HeteroSceneGraph::new();
    integrate(&mut g, &f);
    let before: Vec<Vec<Point>> = g.global.iter().map(|n| n.points.clone()).collect();
    let f2 = frame(1, f.instances.clone());
    let l2 = local(&f2);
    integrate(&mut g, &f2);
    assert_eq!(g.global.len(), 2);
    for (i, node) in g.global.iter().enumerate() {
        assert_eq!(node.points.len(), SAMPLE_SIZE);
        let pool: Vec<Point> = before[i].iter().chain(&l2.nodes[i].points).copied().collect();
        assert!(node.points.iter().all(|p| pool.contains(p)));
        assert_eq!(node.descriptor, incsg::geometry::compute_descriptor(&node.points).unwrap());
    }
}

#[test]
fn merge_rejects_missing_prediction() {
    let f = frame(0, vec![instance(1, 2, 0.0, vec![])]);
    let mut g = HeteroSceneGraph::new();
    g.attach_local(local(&f), &InstanceIdMatcher).unwrap();
    let p = Prediction { classes: vec![], predicates: vec![] };
    assert!(matches!(g.merge(&p, &mut rng::stream(0, &[])), Err(incsg::Error::Contract(_))));
}

fn falsify_fixture(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>, usize) {
    let mut g = HeteroSceneGraph::new();
    g.global = (0..n).map(|i| global_node(i as u32, i % 27, 3.0 * i as f32)).collect();
    let before: Vec<usize> = g.global.iter().map(|n| n.predicted_class).collect();
    let changed = g.falsify_labels(fraction, 27, &mut rng::stream(seed, &[])).unwrap();
    (before, g.global.iter().map(|n| n.predicted_class).collect(), changed)
}

#[test]
fn falsify_examples() {
    let (a, b, c) = falsify_fixture(10, 0.0, 3);
    assert_eq!((a, c), (b, 0));
    let (a, b, c) = falsify_fixture(10, 1.0, 3);
    assert_eq!(c, 10);
    assert!(a.iter().zip(&b).all(|(x, y)| x != y));
    let (a, b, c) = falsify_fixture(10, 0.2, 3);
    assert_eq!(c, 2);
    assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 2);
}

proptest! {
    #[test]
    fn falsify_changes_exact_count(n in 0usize..40, fraction in 0.0f64..=1.0, seed in any::<u64>()) {
        let (a, b, c) = falsify_fixture(n, fraction, seed);
        prop_assert_eq!(c, (fraction * n as f64).round() as usize);
        prop_assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), c);
        prop_assert!(b.iter().all(|&x| x < 27));
    }

    #[test]
    fn matches_are_id_intersection(
        frame_ids in prop::collection::btree_set(0u32..30, 1..8),
        global_ids in prop::collection::btree_set(0u32..30, 0..8),
    ) {
        let f = frame(0, frame_ids.iter().enumerate().map(|(k, &id)| instance(id, 0, 3.0 * k as f32, vec![])).collect());
        let g: Vec<_> = global_ids.iter().map(|&id| global_node(id, 0, 0.0)).collect();
        let l = local(&f);
        let m = match_instances(&g, &l, &InstanceIdMatcher).unwrap();
        for (li, gi) in m.iter().enumerate() {
            match gi {
                Some(gi) => prop_assert_eq!(g[*gi].instance_id, l.nodes[li].instance_id),
                None => prop_assert!(!global_ids.contains(&l.nodes[li].instance_id)),
            }
        }
        let unseen: HashSet<u32> = l.nodes.iter().zip(&m).filter(|(_, g)| g.is_none()).map(|(n, _)| n.instance_id).collect();
        let expected: HashSet<u32> = frame_ids.difference(&global_ids).copied().collect();
        prop_assert_eq!(unseen, expected);
    }
}

#[test]
fn collision_layer_examples() {
    let apart = vec![global_node(1, 0, 0.0), global_node(2, 0, 3.0)];
    let c = build_collision_layer(&apart);
    assert!(c.edges.is_empty());
    assert_eq!(c.centrality, vec![0.0, 0.0]);

    let pair = vec![global_node(1, 0, 0.0), global_node(2, 0, 0.5)];
    let c = build_collision_layer(&pair);
    assert_eq!(c.edges.len(), 2);
    assert!(c.edges.iter().all(|e| e.features[7] == 0.0));
    assert!((c.edges[0].features[0] - 0.5).abs() < 1e-6);

    let chain = vec![global_node(1, 0, 0.0), global_node(2, 0, 0.8), global_node(3, 0, 1.6)];
    let c = build_collision_layer(&chain);
    assert_eq!(c.centrality, vec![1.5, 2.0, 1.5]);
    assert_eq!(c.edges.len(), 4);
    let e = c.edges.iter().find(|e| (e.src, e.dst) == (1, 0)).unwrap();
    assert_eq!(e.features[7], 0.5);
}

#[test]
fn snapshot_lists_nodes_and_edges() {
    let f = frame(0, vec![instance(1, 2, 0.0, vec![(2, 1)]), instance(2, 3, 1.2, vec![])]);
    let mut g = HeteroSceneGraph::new();
    integrate(&mut g, &f);
    let s = g.snapshot(0, &LabelSpace::rio27());
    assert_eq!(s.nodes.len(), 2);
    assert_eq!(s.nodes[0].class, "cabinet");
    assert_eq!(s.edges[0].predicates, vec!["attached to".to_string()]);
    let mut buf = Vec::new();
    s.write_jsonl(&mut buf).unwrap();
    let back: GraphSnapshot = serde_json::from_slice(&buf).unwrap();
    assert_eq!(back, s);
}
