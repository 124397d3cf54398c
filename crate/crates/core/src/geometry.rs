//! Point-cloud sampling and the geometric quantities derived from it:
//! per-object descriptors, raw edge features, proximity edges, box overlap
//! and harmonic centrality.

use std::collections::VecDeque;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f32; 3];

/// Points per stored object sample.
pub const SAMPLE_SIZE: usize = 256;
/// Objects closer than this (box-to-box, meters) get proximity edges.
pub const PROXIMITY_THRESHOLD: f32 = 0.5;
/// Guard for length ratios (m).
pub const LENGTH_EPS: f32 = 1e-6;
/// Guard for volume ratios (m³).
pub const VOLUME_EPS: f32 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisAlignedBox {
    pub min: Point,
    pub max: Point,
}

impl AxisAlignedBox {
    pub fn new(min: Point, max: Point) -> Result<Self> {
        if (0..3).any(|k| !(min[k] <= max[k])) {
            return Err(Error::data(format!("box corners out of order: {min:?} > {max:?}")));
        }
        Ok(Self { min, max })
    }

    pub fn from_points(points: &[Point]) -> Option<Self> {
        let first = *points.first()?;
        let mut b = Self { min: first, max: first };
        for p in &points[1..] {
            for k in 0..3 {
                b.min[k] = b.min[k].min(p[k]);
                b.max[k] = b.max[k].max(p[k]);
            }
        }
        Some(b)
    }

    pub fn extents(&self) -> [f32; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }

    pub fn volume(&self) -> f32 {
        let e = self.extents();
        e[0] * e[1] * e[2]
    }

    pub fn center(&self) -> Point {
        [0, 1, 2].map(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            min: [0, 1, 2].map(|k| self.min[k].min(other.min[k])),
            max: [0, 1, 2].map(|k| self.max[k].max(other.max[k])),
        }
    }

    /// Per-axis separation between the boxes, 0 where they overlap.
    pub fn gaps(&self, other: &Self) -> [f32; 3] {
        [0, 1, 2].map(|k| (self.min[k] - other.max[k]).max(other.min[k] - self.max[k]).max(0.0))
    }

    /// Minimum Euclidean distance between the two boxes.
    pub fn distance(&self, other: &Self) -> f32 {
        let g = self.gaps(other);
        (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }
}

/// Geometric summary of an object sample, serialized as
/// `[c, std, l, w, h, L, V]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub centroid: [f32; 3],
    pub std: [f32; 3],
    pub extents: [f32; 3],
    pub max_extent: f32,
    pub volume: f32,
}

impl Descriptor {
    pub const LEN: usize = 11;

    pub fn to_array(&self) -> [f32; 11] {
        let (c, s, e) = (self.centroid, self.std, self.extents);
        [c[0], c[1], c[2], s[0], s[1], s[2], e[0], e[1], e[2], self.max_extent, self.volume]
    }
}

/// Draws exactly `n` points: without replacement when the cloud is large
/// enough, with replacement otherwise.
pub fn sample_points<R: rand::Rng + ?Sized>(points: &[Point], n: usize, rng: &mut R) -> Result<Vec<Point>> {
    if points.is_empty() {
        return Err(Error::data("cannot sample from an empty point cloud"));
    }
    if points.len() >= n {
        Ok(rand::seq::index::sample(rng, points.len(), n).iter().map(|i| points[i]).collect())
    } else {
        Ok((0..n).map(|_| points[rng.random_range(0..points.len())]).collect())
    }
}

/// Centroid, population standard deviation, box extents, max extent and
/// box volume of a non-empty cloud.
pub fn compute_descriptor(points: &[Point]) -> Result<Descriptor> {
    let bbox = AxisAlignedBox::from_points(points).ok_or_else(|| Error::data("descriptor of an empty point cloud"))?;
    let n = points.len() as f64;
    let mut mean = [0f64; 3];
    for p in points {
        for k in 0..3 {
            mean[k] += p[k] as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0f64; 3];
    for p in points {
        for k in 0..3 {
            let d = p[k] as f64 - mean[k];
            var[k] += d * d;
        }
    }
    let extents = bbox.extents();
    Ok(Descriptor {
        centroid: mean.map(|m| m as f32),
        std: var.map(|v| (v / n).sqrt() as f32),
        extents,
        max_extent: extents[0].max(extents[1]).max(extents[2]),
        volume: extents[0] * extents[1] * extents[2],
    })
}

fn log_ratio(num: f32, den: f32, eps: f32) -> f32 {
    // Difference of logs keeps the feature exactly antisymmetric in (i, j).
    num.max(eps).ln() - den.max(eps).ln()
}

/// Raw feature of the directed edge i→j:
/// `[c_j−c_i, std_j−std_i, log(l_j/l_i), log(w_j/w_i), log(h_j/h_i), log(L_j/L_i), log(V_j/V_i)]`.
pub fn edge_raw_feature(di: &Descriptor, dj: &Descriptor) -> [f32; 11] {
    let mut out = [0f32; 11];
    for k in 0..3 {
        out[k] = dj.centroid[k] - di.centroid[k];
        out[3 + k] = dj.std[k] - di.std[k];
        out[6 + k] = log_ratio(dj.extents[k], di.extents[k], LENGTH_EPS);
    }
    out[9] = log_ratio(dj.max_extent, di.max_extent, LENGTH_EPS);
    out[10] = log_ratio(dj.volume, di.volume, VOLUME_EPS);
    out
}

/// Directed edges (both directions) between boxes whose minimum distance is
/// strictly below `threshold`, in lexicographic order.
pub fn proximity_edges(boxes: &[AxisAlignedBox], threshold: f32) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..boxes.len() {
        for j in 0..boxes.len() {
            if i != j && boxes[i].distance(&boxes[j]) < threshold {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Volume of the intersection of two boxes.
pub fn overlap_volume(a: &AxisAlignedBox, b: &AxisAlignedBox) -> f32 {
    let mut v = 1.0f32;
    for k in 0..3 {
        let lo = a.min[k].max(b.min[k]);
        let hi = a.max[k].min(b.max[k]);
        if hi <= lo {
            return 0.0;
        }
        v *= hi - lo;
    }
    v
}

/// `H(v) = Σ_{u≠v} 1/d(u, v)` with hop distances on an undirected graph;
/// unreachable pairs contribute nothing.
pub fn harmonic_centrality(num_nodes: usize, edges: &[(usize, usize)]) -> Vec<f32> {
    let mut adj = vec![Vec::new(); num_nodes];
    for &(a, b) in edges {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut dist = vec![usize::MAX; num_nodes];
    let mut queue = VecDeque::new();
    (0..num_nodes)
        .map(|source| {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[source] = 0;
            queue.push_back(source);
            let mut total = 0f64;
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        total += 1.0 / dist[w] as f64;
                        queue.push_back(w);
                    }
                }
            }
            total as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn unit_box(x: f32) -> AxisAlignedBox {
        AxisAlignedBox::new([x, 0.0, 0.0], [x + 1.0, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn sampling_sizes_and_membership() {
        let cloud: Vec<Point> = (0..1000).map(|i| [i as f32, 0.0, 0.0]).collect();
        let mut r = rng::stream(1, &[0]);
        let s = sample_points(&cloud, 256, &mut r).unwrap();
        let mut xs: Vec<i32> = s.iter().map(|p| p[0] as i32).collect();
        xs.sort();
        xs.dedup();
        assert_eq!(xs.len(), 256);

        let exact: Vec<Point> = cloud[..256].to_vec();
        let mut perm: Vec<i32> = sample_points(&exact, 256, &mut r).unwrap().iter().map(|p| p[0] as i32).collect();
        perm.sort();
        assert_eq!(perm, (0..256).collect::<Vec<_>>());

        let few = &cloud[..10];
        let s = sample_points(few, 256, &mut r).unwrap();
        assert_eq!(s.len(), 256);
        assert!(s.iter().all(|p| p[0] < 10.0));

        assert!(matches!(sample_points(&[], 256, &mut r), Err(Error::Data(_))));
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let cloud: Vec<Point> = (0..300).map(|i| [i as f32, 1.0, 2.0]).collect();
        let a = sample_points(&cloud, 256, &mut rng::stream(5, &[1])).unwrap();
        let b = sample_points(&cloud, 256, &mut rng::stream(5, &[1])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_cube_corners() {
        let corners: Vec<Point> =
            (0..8).map(|i| [(i & 1) as f32, ((i >> 1) & 1) as f32, ((i >> 2) & 1) as f32]).collect();
        let d = compute_descriptor(&corners).unwrap();
        assert_eq!(d.centroid, [0.5; 3]);
        assert_eq!(d.std, [0.5; 3]);
        assert_eq!(d.extents, [1.0; 3]);
        assert_eq!(d.max_extent, 1.0);
        assert_eq!(d.volume, 1.0);
    }

    #[test]
    fn repeated_point_is_degenerate() {
        let p = [0.3, -1.2, 4.0];
        let d = compute_descriptor(&[p; 17]).unwrap();
        assert_eq!(d.centroid, p);
        assert_eq!(d.std, [0.0; 3]);
        assert_eq!(d.extents, [0.0; 3]);
        assert_eq!(d.volume, 0.0);
    }

    #[test]
    fn edge_feature_examples() {
        let base = Descriptor {
            centroid: [1.0, 2.0, 3.0],
            std: [0.1, 0.2, 0.3],
            extents: [1.0, 2.0, 1.0],
            max_extent: 2.0,
            volume: 2.0,
        };
        assert_eq!(edge_raw_feature(&base, &base), [0.0; 11]);

        let mut longer = base;
        longer.extents[0] = 2.0;
        let f = edge_raw_feature(&base, &longer);
        assert!((f[6] - std::f32::consts::LN_2).abs() < 1e-6);
        assert_eq!(&f[7..9], &[0.0, 0.0]);

        let mut flat = base;
        flat.extents[2] = 0.0;
        let f = edge_raw_feature(&flat, &base);
        assert!((f[8] - (1.0f32 / LENGTH_EPS).ln()).abs() < 1e-4);
        assert!((f[8] - 13.8155).abs() < 1e-3);
        assert!(f.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn proximity_examples() {
        let a = unit_box(0.0);
        let b = unit_box(1.3);
        assert_eq!(proximity_edges(&[a, b], PROXIMITY_THRESHOLD), vec![(0, 1), (1, 0)]);
        let c = unit_box(1.5);
        assert!(proximity_edges(&[a, c], PROXIMITY_THRESHOLD).is_empty());
        assert!(proximity_edges(&[a], PROXIMITY_THRESHOLD).is_empty());
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_volume(&unit_box(0.0), &unit_box(0.0)), 1.0);
        assert_eq!(overlap_volume(&unit_box(0.0), &unit_box(3.0)), 0.0);
        assert_eq!(overlap_volume(&unit_box(0.0), &unit_box(0.5)), 0.5);
    }

    #[test]
    fn centrality_examples() {
        assert_eq!(harmonic_centrality(3, &[(0, 1), (1, 2)]), vec![1.5, 2.0, 1.5]);
        assert_eq!(harmonic_centrality(2, &[]), vec![0.0, 0.0]);
        let k4: Vec<(usize, usize)> = (0..4).flat_map(|a| (a + 1..4).map(move |b| (a, b))).collect();
        assert_eq!(harmonic_centrality(4, &k4), vec![3.0; 4]);
    }

    #[test]
    fn box_rejects_inverted_corners() {
        assert!(AxisAlignedBox::new([1.0, 0.0, 0.0], [0.0, 1.0, 1.0]).is_err());
    }
}
