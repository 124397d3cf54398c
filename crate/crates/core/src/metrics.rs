//! Node accuracy, mean predicate recall, ng-Recall@k over triples and
//! unseen-node accuracy, accumulated over frames with integer counters so the
//! result does not depend on frame order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NG_RECALL_KS: [usize; 2] = [50, 100];
pub const PREDICATE_THRESHOLD: f64 = 0.5;

/// Model outputs for the local layer of one frame.
#[derive(Clone, Debug)]
pub struct FramePrediction {
    /// `[nodes × classes]`
    pub node_logits: Tensor<f32>,
    /// `[edges × predicates]`
    pub edge_logits: Tensor<f32>,
    /// `(src, dst)` per edge row.
    pub edges: Vec<(usize, usize)>,
}

/// Ground truth for the same frame.
#[derive(Clone, Debug)]
pub struct FrameTruth {
    pub classes: Vec<usize>,
    pub predicates: Vec<Vec<usize>>,
    pub unseen: Vec<bool>,
}

/// Classes ranked strictly ahead of `target`; ties go to the lower index.
pub fn rank_of(logits: &[f32], target: usize) -> usize {
    let t = logits[target];
    logits.iter().enumerate().filter(|&(c, &l)| l > t || (l == t && c < target)).count()
}

/// Highest logit, lowest index on ties.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (c, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = c;
        }
    }
    best
}

pub fn sigmoid(x: f32) -> f64 {
    1.0 / (1.0 + (-(x as f64)).exp())
}

/// Largest softmax probability of a logit row.
pub fn max_probability(logits: &[f32]) -> f64 {
    let m = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    1.0 / logits.iter().map(|&l| (l as f64 - m).exp()).sum::<f64>()
}

/// Nodes whose target lies in the top `k`.
pub fn count_top_k(logits: &Tensor<f32>, targets: &[usize], k: usize) -> usize {
    targets.iter().enumerate().filter(|&(i, &t)| rank_of(logits.row(i), t) < k).count()
}

pub fn accuracy_at_k(logits: &Tensor<f32>, targets: &[usize], k: usize) -> f64 {
    fraction(count_top_k(logits, targets, k), targets.len())
}

/// Per predicate `(true positives, ground-truth positives)` with the
/// positive decision `sigmoid ≥ 0.5`.
pub fn predicate_counts(logits: &Tensor<f32>, targets: &[Vec<usize>], num_predicates: usize) -> Vec<(usize, usize)> {
    let mut counts = vec![(0, 0); num_predicates];
    for (e, preds) in targets.iter().enumerate() {
        for &p in preds {
            counts[p].1 += 1;
            if sigmoid(logits.at(e, p)) >= PREDICATE_THRESHOLD {
                counts[p].0 += 1;
            }
        }
    }
    counts
}

/// Macro mean of per-predicate recall over predicates with a positive.
pub fn mean_recall_from_counts(counts: &[(usize, usize)]) -> f64 {
    let present: Vec<f64> = counts.iter().filter(|c| c.1 > 0).map(|&(tp, n)| tp as f64 / n as f64).collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

pub fn mean_predicate_recall(logits: &Tensor<f32>, targets: &[Vec<usize>]) -> f64 {
    mean_recall_from_counts(&predicate_counts(logits, targets, logits.cols()))
}

/// `(detected, total)` ground-truth triples for top-`k` candidate triples
/// without graph constraint.
pub fn ng_recall_counts(pred: &FramePrediction, truth: &FrameTruth, k: usize) -> Result<(usize, usize)> {
    Ok(ng_recall_counts_multi(pred, truth, &[k])?[0])
}

fn ng_recall_counts_multi(pred: &FramePrediction, truth: &FrameTruth, ks: &[usize]) -> Result<Vec<(usize, usize)>> {
    if ks.contains(&0) {
        return Err(Error::Parameter("ng-Recall@k needs k >= 1".into()));
    }
    let n = pred.node_logits.rows();
    let maxp: Vec<f64> = (0..n).map(|i| max_probability(pred.node_logits.row(i))).collect();
    let arg: Vec<usize> = (0..n).map(|i| argmax(pred.node_logits.row(i))).collect();
    let np = pred.edge_logits.cols();
    let mut candidates = Vec::with_capacity(pred.edges.len() * np);
    for (e, &(i, j)) in pred.edges.iter().enumerate() {
        for p in 0..np {
            candidates.push((maxp[i] * sigmoid(pred.edge_logits.at(e, p)) * maxp[j], e, p));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    let mut rank = vec![usize::MAX; candidates.len()];
    for (r, &(_, e, p)) in candidates.iter().enumerate() {
        rank[e * np + p] = r;
    }
    let total: usize = truth.predicates.iter().map(Vec::len).sum();
    Ok(ks
        .iter()
        .map(|&k| {
            let detected = truth
                .predicates
                .iter()
                .enumerate()
                .flat_map(|(e, ps)| ps.iter().map(move |&p| (e, p)))
                .filter(|&(e, p)| {
                    let (i, j) = pred.edges[e];
                    rank[e * np + p] < k && arg[i] == truth.classes[i] && arg[j] == truth.classes[j]
                })
                .count();
            (detected, total)
        })
        .collect())
}

pub fn ng_recall_at_k(pred: &FramePrediction, truth: &FrameTruth, k: usize) -> Result<f64> {
    let (d, t) = ng_recall_counts(pred, truth, k)?;
    Ok(fraction(d, t))
}

fn fraction(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub frames: usize,
    pub nodes: usize,
    pub edges: usize,
    pub triples: usize,
    pub unseen_nodes: usize,
}

/// Aggregated evaluation result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc1: f64,
    pub acc5: f64,
    pub mean_recall: f64,
    /// Keyed by k.
    pub ng_recall: BTreeMap<String, f64>,
    pub unseen_acc1: f64,
    pub unseen_acc5: f64,
    pub per_predicate_recall: Vec<Option<f64>>,
    pub counts: Counts,
}

impl MetricReport {
    pub fn ng_recall_at(&self, k: usize) -> f64 {
        self.ng_recall.get(&k.to_string()).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricAccumulator {
    counts: Counts,
    top1: usize,
    top5: usize,
    unseen_top1: usize,
    unseen_top5: usize,
    predicates: Vec<(usize, usize)>,
    detected: Vec<usize>,
}

impl MetricAccumulator {
    pub fn new(num_predicates: usize) -> Self {
        Self {
            counts: Counts::default(),
            top1: 0,
            top5: 0,
            unseen_top1: 0,
            unseen_top5: 0,
            predicates: vec![(0, 0); num_predicates],
            detected: vec![0; NG_RECALL_KS.len()],
        }
    }

    pub fn add_frame(&mut self, pred: &FramePrediction, truth: &FrameTruth) -> Result<()> {
        let n = truth.classes.len();
        let e = pred.edges.len();
        if pred.node_logits.rows() != n && n > 0 || truth.unseen.len() != n {
            return Err(Error::contract("node logits, classes and unseen mask disagree"));
        }
        if truth.predicates.len() != e
            || e > 0 && (pred.edge_logits.rows() != e || pred.edge_logits.cols() != self.predicates.len())
        {
            return Err(Error::contract("edge logits, edges and predicate targets disagree"));
        }
        self.counts.frames += 1;
        self.counts.nodes += n;
        self.counts.edges += pred.edges.len();
        for (i, &t) in truth.classes.iter().enumerate() {
            let r = rank_of(pred.node_logits.row(i), t);
            self.top1 += (r < 1) as usize;
            self.top5 += (r < 5) as usize;
            if truth.unseen[i] {
                self.counts.unseen_nodes += 1;
                self.unseen_top1 += (r < 1) as usize;
                self.unseen_top5 += (r < 5) as usize;
            }
        }
        if !pred.edges.is_empty() {
            for (acc, c) in self.predicates.iter_mut().zip(predicate_counts(
                &pred.edge_logits,
                &truth.predicates,
                pred.edge_logits.cols(),
            )) {
                acc.0 += c.0;
                acc.1 += c.1;
            }
            let found = ng_recall_counts_multi(pred, truth, &NG_RECALL_KS)?;
            self.counts.triples += found[0].1;
            for (d, (hits, _)) in self.detected.iter_mut().zip(found) {
                *d += hits;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> MetricReport {
        let c = &self.counts;
        MetricReport {
            acc1: fraction(self.top1, c.nodes),
            acc5: fraction(self.top5, c.nodes),
            mean_recall: mean_recall_from_counts(&self.predicates),
            ng_recall: NG_RECALL_KS
                .iter()
                .zip(&self.detected)
                .map(|(k, &d)| (k.to_string(), fraction(d, c.triples)))
                .collect(),
            unseen_acc1: fraction(self.unseen_top1, c.unseen_nodes),
            unseen_acc5: fraction(self.unseen_top5, c.unseen_nodes),
            per_predicate_recall: self
                .predicates
                .iter()
                .map(|&(tp, n)| (n > 0).then(|| tp as f64 / n as f64))
                .collect(),
            counts: c.clone(),
        }
    }
}
