//! Brute-force reference implementations shared by test targets.
#![allow(dead_code)]

use incsg::metrics::{FramePrediction, FrameTruth};
use incsg::rng;
use incsg::tensor::Tensor;
use rand::RngExt;

fn softmax_max(row: &[f32]) -> (f64, usize) {
    let mut best = 0;
    for c in 1..row.len() {
        if row[c] > row[best] {
            best = c;
        }
    }
    let m = row[best] as f64;
    let z: f64 = row.iter().map(|&l| (l as f64 - m).exp()).sum();
    (1.0 / z, best)
}

/// Detected ground-truth triples among the top `k`, by counting for each
/// triple how many candidates outrank it.
pub fn ng_recall_enumeration(pred: &FramePrediction, truth: &FrameTruth, k: usize) -> (usize, usize) {
    let nodes: Vec<(f64, usize)> = (0..pred.node_logits.rows()).map(|i| softmax_max(pred.node_logits.row(i))).collect();
    let np = pred.edge_logits.cols();
    let score = |e: usize, p: usize| {
        let (i, j) = pred.edges[e];
        let s = 1.0 / (1.0 + (-(pred.edge_logits.at(e, p) as f64)).exp());
        nodes[i].0 * s * nodes[j].0
    };
    let mut detected = 0;
    let mut total = 0;
    for (e, preds) in truth.predicates.iter().enumerate() {
        for &p in preds {
            total += 1;
            let mine = score(e, p);
            let mut ahead = 0;
            for e2 in 0..pred.edges.len() {
                for p2 in 0..np {
                    let s = score(e2, p2);
                    if s > mine || (s == mine && (e2, p2) < (e, p)) {
                        ahead += 1;
                    }
                }
            }
            let (i, j) = pred.edges[e];
            if ahead < k && nodes[i].1 == truth.classes[i] && nodes[j].1 == truth.classes[j] {
                detected += 1;
            }
        }
    }
    (detected, total)
}

/// Random frame with at most `max_nodes` nodes; logits are drawn from a
/// coarse grid so score ties occur.
pub fn random_frame(seed: u64, max_nodes: usize, classes: usize, predicates: usize) -> (FramePrediction, FrameTruth) {
    let mut r = rng::stream(seed, &[0x6f7261]);
    let n = r.random_range(1..=max_nodes);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && r.random_bool(0.6) {
                edges.push((i, j));
            }
        }
    }
    let grid = |r: &mut rng::Rng| r.random_range(-4..=4) as f32 * 0.5;
    let node_logits = Tensor::new(vec![n, classes], (0..n * classes).map(|_| grid(&mut r)).collect()).unwrap();
    let edge_logits =
        Tensor::new(vec![edges.len(), predicates], (0..edges.len() * predicates).map(|_| grid(&mut r)).collect())
            .unwrap();
    let classes_gt: Vec<usize> = (0..n)
        .map(|i| if r.random_bool(0.5) { incsg::metrics::argmax(node_logits.row(i)) } else { r.random_range(0..classes) })
        .collect();
    let preds_gt: Vec<Vec<usize>> =
        edges.iter().map(|_| (0..predicates).filter(|_| r.random_bool(0.2)).collect()).collect();
    let unseen = (0..n).map(|_| r.random_bool(0.5)).collect();
    (
        FramePrediction { node_logits, edge_logits, edges },
        FrameTruth { classes: classes_gt, predicates: preds_gt, unseen },
    )
}
