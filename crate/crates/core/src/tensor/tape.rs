use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AggregateMode {
    Mean,
    Sum,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Affine(Var, T),
    Neg(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Clamp { x: Var, lo: T, hi: T },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Gather { x: Var, index: Vec<usize> },
    SegmentAggregate { x: Var, index: Vec<usize>, scale: Vec<T> },
    SegmentSoftmax { x: Var, index: Vec<usize>, groups: usize },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    MaxPool { x: Var, argmax: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    SliceCols { x: Var, start: usize },
    SumAll(Var),
    RowSum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of every primitive evaluated in one forward pass.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// operations that consume them; [`Tape::backward`] visits each node once in
/// reverse.
#[derive(Debug, Default)]
pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to the tape's trainable leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T: Element = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn matrix_dims<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::shape(format!("{what} expects a matrix, got shape {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = matrix_dims(self.value(a), "matmul")?;
        let (k2, n) = matrix_dims(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what} of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor { shape: x.shape().to_vec(), data }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.zip(a, b, |p, q| p + q);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.zip(a, b, |p, q| p - q);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.zip(a, b, |p, q| p * q);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast_dims(&self, a: Var, row: Var, what: &str) -> Result<(usize, usize)> {
        let (n, d) = matrix_dims(self.value(a), what)?;
        if self.value(row).len() != d {
            return Err(Error::shape(format!(
                "{what} of {:?} with row {:?}",
                self.value(a).shape(),
                self.value(row).shape()
            )));
        }
        Ok((n, d))
    }

    /// Adds a length-`d` vector to every row of an `n x d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, d) = self.row_broadcast_dims(a, row, "add_row")?;
        let r = self.value(row).data();
        let x = self.value(a);
        let data = x.data().iter().enumerate().map(|(i, &v)| v + r[i % d]).collect();
        let value = Tensor { shape: x.shape().to_vec(), data };
        Ok(self.push(value, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies every row of an `n x d` matrix elementwise by a length-`d` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, d) = self.row_broadcast_dims(a, row, "mul_row")?;
        let r = self.value(row).data();
        let x = self.value(a);
        let data = x.data().iter().enumerate().map(|(i, &v)| v * r[i % d]).collect();
        let value = Tensor { shape: x.shape().to_vec(), data };
        Ok(self.push(value, Op::MulRow(a, row), &[a, row]))
    }

    /// Scales row `i` of an `n x d` matrix by entry `i` of an `n x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(a), "mul_col")?;
        if self.value(col).len() != n {
            return Err(Error::shape(format!(
                "mul_col of {:?} with column {:?}",
                self.value(a).shape(),
                self.value(col).shape()
            )));
        }
        let c = self.value(col).data();
        let x = self.value(a);
        let data = x.data().iter().enumerate().map(|(i, &v)| v * c[i / d.max(1)]).collect();
        let value = Tensor { shape: x.shape().to_vec(), data };
        Ok(self.push(value, Op::MulCol(a, col), &[a, col]))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::of(scale), T::of(shift));
        let value = self.value(a).map(|v| s * v + t);
        self.push(value, Op::Affine(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| -v);
        self.push(value, Op::Neg(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).data().iter().find(|&&v| !(v > T::zero())) {
            return Err(Error::Domain(format!("log of non-positive value {bad:?}")));
        }
        let value = self.value(a).map(|v| v.ln());
        Ok(self.push(value, Op::Log(a), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.exp());
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let value = self.value(a).map(|v| v.max(lo).min(hi));
        self.push(value, Op::Clamp { x: a, lo, hi }, &[a])
    }

    /// Per-row normalization with biased variance, then `* gain + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "layer_norm")?;
        if d == 0 {
            return Err(Error::shape("layer_norm needs at least one feature".to_string()));
        }
        if self.value(gain).len() != d || self.value(bias).len() != d {
            return Err(Error::shape(format!(
                "layer_norm over {d} features with gain {:?} and bias {:?}",
                self.value(gain).shape(),
                self.value(bias).shape()
            )));
        }
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let s = T::one() / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Inverted dropout. Returns `x` unchanged in eval mode or at rate 0.
    pub fn dropout(&mut self, x: Var, rate: f64, training: bool, seed: u64, stream: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let keep = T::of(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let src = self.value(x);
        let data = src.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor { shape: src.shape().to_vec(), data };
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "gather_rows")?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            if i >= n {
                return Err(Error::Index(format!("row {i} of a {n}-row matrix")));
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let value = Tensor::new(vec![index.len(), d], out)?;
        Ok(self.push(value, Op::Gather { x, index: index.to_vec() }, &[x]))
    }

    /// Row `t` of the result is the sum or mean of the rows of `values` whose
    /// target is `t`; targets without rows get zeros.
    pub fn segment_aggregate(
        &mut self,
        values: Var,
        target_index: &[usize],
        num_targets: usize,
        mode: AggregateMode,
    ) -> Result<Var> {
        let (e, d) = matrix_dims(self.value(values), "segment_aggregate")?;
        if target_index.len() != e {
            return Err(Error::shape(format!(
                "segment_aggregate: {e} rows but {} target indices",
                target_index.len()
            )));
        }
        let mut counts = vec![0usize; num_targets];
        for &t in target_index {
            if t >= num_targets {
                return Err(Error::Index(format!("target {t} with {num_targets} targets")));
            }
            counts[t] += 1;
        }
        let scale: Vec<T> = counts
            .iter()
            .map(|&c| match mode {
                AggregateMode::Sum => T::one(),
                AggregateMode::Mean if c > 0 => T::one() / T::of(c as f64),
                AggregateMode::Mean => T::zero(),
            })
            .collect();
        let src = self.value(values).data();
        let mut out = vec![T::zero(); num_targets * d];
        for (row, &t) in target_index.iter().enumerate() {
            for j in 0..d {
                out[t * d + j] += src[row * d + j];
            }
        }
        for t in 0..num_targets {
            for j in 0..d {
                out[t * d + j] *= scale[t];
            }
        }
        let value = Tensor::new(vec![num_targets, d], out)?;
        let op = Op::SegmentAggregate { x: values, index: target_index.to_vec(), scale };
        Ok(self.push(value, op, &[values]))
    }

    /// Column-wise softmax over the rows that share a group index.
    pub fn segment_softmax(&mut self, x: Var, group_index: &[usize], num_groups: usize) -> Result<Var> {
        let (e, h) = matrix_dims(self.value(x), "segment_softmax")?;
        if group_index.len() != e {
            return Err(Error::shape(format!(
                "segment_softmax: {e} rows but {} group indices",
                group_index.len()
            )));
        }
        if let Some(&g) = group_index.iter().find(|&&g| g >= num_groups) {
            return Err(Error::Index(format!("group {g} with {num_groups} groups")));
        }
        let src = self.value(x).data();
        let mut max = vec![T::neg_infinity(); num_groups * h];
        for (r, &g) in group_index.iter().enumerate() {
            for c in 0..h {
                let m = &mut max[g * h + c];
                *m = m.max(src[r * h + c]);
            }
        }
        let mut out = vec![T::zero(); e * h];
        let mut denom = vec![T::zero(); num_groups * h];
        for (r, &g) in group_index.iter().enumerate() {
            for c in 0..h {
                let v = (src[r * h + c] - max[g * h + c]).exp();
                out[r * h + c] = v;
                denom[g * h + c] += v;
            }
        }
        for (r, &g) in group_index.iter().enumerate() {
            for c in 0..h {
                out[r * h + c] = out[r * h + c] / denom[g * h + c];
            }
        }
        let value = Tensor::new(vec![e, h], out)?;
        let op = Op::SegmentSoftmax { x, index: group_index.to_vec(), groups: num_groups };
        Ok(self.push(value, op, &[x]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "softmax_rows")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for j in 0..d {
                let v = (row[j] - m).exp();
                out[r * d + j] = v;
                s += v;
            }
            for j in 0..d {
                out[r * d + j] = out[r * d + j] / s;
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(value, Op::SoftmaxRows(x), &[x]))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "log_softmax_rows")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * d];
        for r in 0..n {
            let row = &src[r * d..(r + 1) * d];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for j in 0..d {
                out[r * d + j] = row[j] - lse;
            }
        }
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(value, Op::LogSoftmaxRows(x), &[x]))
    }

    /// Column-wise maximum over all rows, as a `1 x d` matrix.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let rows = self.value(x).rows();
        self.max_pool_groups(x, rows)
    }

    /// Column-wise maximum over consecutive blocks of `group` rows. The
    /// gradient goes to the first row attaining the maximum.
    pub fn max_pool_groups(&mut self, x: Var, group: usize) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "max_pool")?;
        if n == 0 || group == 0 {
            return Err(Error::Domain("max pooling over an empty set of rows".to_string()));
        }
        if n % group != 0 {
            return Err(Error::shape(format!("{n} rows do not split into groups of {group}")));
        }
        let src = self.value(x).data();
        let groups = n / group;
        let mut out = vec![T::zero(); groups * d];
        let mut argmax = vec![0usize; groups * d];
        for g in 0..groups {
            let base = g * group;
            for c in 0..d {
                let mut best = base * d + c;
                for r in base + 1..base + group {
                    if src[r * d + c] > src[best] {
                        best = r * d + c;
                    }
                }
                out[g * d + c] = src[best];
                argmax[g * d + c] = best;
            }
        }
        let value = Tensor::new(vec![groups, d], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Joins matrices along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::shape("concat of zero tensors".to_string()));
        }
        let dims: Vec<(usize, usize)> = inputs
            .iter()
            .map(|&v| matrix_dims(self.value(v), "concat"))
            .collect::<Result<_>>()?;
        let value = match axis {
            0 => {
                let d = dims[0].1;
                if dims.iter().any(|&(_, c)| c != d) {
                    return Err(Error::shape(format!("row concat of column counts {dims:?}")));
                }
                let mut out = Vec::new();
                for &v in inputs {
                    out.extend_from_slice(self.value(v).data());
                }
                let n = dims.iter().map(|&(r, _)| r).sum();
                Tensor::new(vec![n, d], out)?
            }
            1 => {
                let n = dims[0].0;
                if dims.iter().any(|&(r, _)| r != n) {
                    return Err(Error::shape(format!("column concat of row counts {dims:?}")));
                }
                let d: usize = dims.iter().map(|&(_, c)| c).sum();
                let mut out = Vec::with_capacity(n * d);
                for r in 0..n {
                    for (&v, &(_, c)) in inputs.iter().zip(&dims) {
                        out.extend_from_slice(&self.value(v).data()[r * c..(r + 1) * c]);
                    }
                }
                Tensor::new(vec![n, d], out)?
            }
            _ => return Err(Error::shape(format!("concat axis {axis} on matrices"))),
        };
        Ok(self.push(value, Op::Concat { inputs: inputs.to_vec(), axis }, inputs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "slice_cols")?;
        if start > end || end > d {
            return Err(Error::shape(format!("columns {start}..{end} of {d}")));
        }
        let w = end - start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * w);
        for r in 0..n {
            out.extend_from_slice(&src[r * d + start..r * d + end]);
        }
        let value = Tensor::new(vec![n, w], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::SumAll(x), &[x])
    }

    /// Sum of each row as an `n x 1` column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let (n, d) = matrix_dims(self.value(x), "row_sum")?;
        let src = self.value(x).data();
        let out = (0..n).map(|r| src[r * d..(r + 1) * d].iter().copied().sum()).collect();
        let value = Tensor::new(vec![n, 1], out)?;
        Ok(self.push(value, Op::RowSum(x), &[x]))
    }

    /// `x·w (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Reverse pass from a scalar; returns gradients for trainable leaves.
    /// Leaves that did not influence the loss get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let mut grads = Gradients::default();
        self.accumulate_backward(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`], but adds into an existing gradient set.
    pub fn accumulate_backward(&self, loss: Var, into: &mut Gradients<T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut g: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = g[i].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                g[i] = Some(gout);
                continue;
            }
            self.propagate(i, &gout, &mut g);
        }
        if into.grads.len() < self.nodes.len() {
            into.grads.resize(self.nodes.len(), None);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !(node.needs_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let slot = into.grads[i].get_or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
            if let Some(Some(gi)) = g.get(i) {
                for (a, &b) in slot.data_mut().iter_mut().zip(gi) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    fn slot<'a>(&self, g: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.needs(v) {
            return None;
        }
        let len = self.value(v).len();
        Some(g[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn propagate(&self, i: usize, gout: &[T], g: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if let Some(ga) = self.slot(g, *a) {
                    T::gemm(m, n, k, gout, false, self.value(*b).data(), true, ga, true);
                }
                if let Some(gb) = self.slot(g, *b) {
                    T::gemm(k, m, n, self.value(*a).data(), true, gout, false, gb, true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(g, v) {
                        gv.iter_mut().zip(gout).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(g, *a) {
                    ga.iter_mut().zip(gout).for_each(|(x, &y)| *x += y);
                }
                if let Some(gb) = self.slot(g, *b) {
                    gb.iter_mut().zip(gout).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(g, *a) {
                    let bv = self.value(*b).data();
                    ga.iter_mut().zip(gout.iter().zip(bv)).for_each(|(x, (&y, &z))| *x += y * z);
                }
                if let Some(gb) = self.slot(g, *b) {
                    let av = self.value(*a).data();
                    gb.iter_mut().zip(gout.iter().zip(av)).for_each(|(x, (&y, &z))| *x += y * z);
                }
            }
            Op::AddRow(a, row) => {
                let d = self.value(*row).len();
                if let Some(ga) = self.slot(g, *a) {
                    ga.iter_mut().zip(gout).for_each(|(x, &y)| *x += y);
                }
                if let Some(gr) = self.slot(g, *row) {
                    for (idx, &y) in gout.iter().enumerate() {
                        gr[idx % d] += y;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let d = self.value(*row).len();
                let r = self.value(*row).data();
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(g, *a) {
                    for (idx, &y) in gout.iter().enumerate() {
                        ga[idx] += y * r[idx % d];
                    }
                }
                if let Some(gr) = self.slot(g, *row) {
                    for (idx, &y) in gout.iter().enumerate() {
                        gr[idx % d] += y * av[idx];
                    }
                }
            }
            Op::MulCol(a, col) => {
                let d = self.value(*a).cols().max(1);
                let c = self.value(*col).data();
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(g, *a) {
                    for (idx, &y) in gout.iter().enumerate() {
                        ga[idx] += y * c[idx / d];
                    }
                }
                if let Some(gc) = self.slot(g, *col) {
                    for (idx, &y) in gout.iter().enumerate() {
                        gc[idx / d] += y * av[idx];
                    }
                }
            }
            Op::Affine(a, s) => {
                if let Some(ga) = self.slot(g, *a) {
                    ga.iter_mut().zip(gout).for_each(|(x, &y)| *x += *s * y);
                }
            }
            Op::Neg(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    ga.iter_mut().zip(gout).for_each(|(x, &y)| *x -= y);
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(gout).zip(out) {
                        if o > T::zero() {
                            *x += y;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(gout).zip(out) {
                        *x += y * o * (T::one() - o);
                    }
                }
            }
            Op::Log(a) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(g, *a) {
                    for ((x, &y), &v) in ga.iter_mut().zip(gout).zip(av) {
                        *x += y / v;
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = self.slot(g, *a) {
                    for ((x, &y), &o) in ga.iter_mut().zip(gout).zip(out) {
                        *x += y * o;
                    }
                }
            }
            Op::Clamp { x: a, lo, hi } => {
                let av = self.value(*a).data();
                if let Some(ga) = self.slot(g, *a) {
                    for ((x, &y), &v) in ga.iter_mut().zip(gout).zip(av) {
                        if v >= *lo && v <= *hi {
                            *x += y;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.value(*gain).len();
                let n = rstd.len();
                let gv = self.value(*gain).data();
                if let Some(gx) = self.slot(g, *x) {
                    let dn = T::of(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for r in 0..n {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let v = gout[r * d + j] * gv[j];
                            dxhat[j] = v;
                            s1 += v;
                            s2 += v * xhat[r * d + j];
                        }
                        let k = rstd[r] / dn;
                        for j in 0..d {
                            gx[r * d + j] += k * (dn * dxhat[j] - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
                if let Some(gg) = self.slot(g, *gain) {
                    for (idx, &y) in gout.iter().enumerate() {
                        gg[idx % d] += y * xhat[idx];
                    }
                }
                if let Some(gb) = self.slot(g, *bias) {
                    for (idx, &y) in gout.iter().enumerate() {
                        gb[idx % d] += y;
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(gx) = self.slot(g, *x) {
                    for ((a, &y), &m) in gx.iter_mut().zip(gout).zip(mask) {
                        *a += y * m;
                    }
                }
            }
            Op::Gather { x, index } => {
                let d = self.value(*x).cols();
                if let Some(gx) = self.slot(g, *x) {
                    for (row, &src) in index.iter().enumerate() {
                        for j in 0..d {
                            gx[src * d + j] += gout[row * d + j];
                        }
                    }
                }
            }
            Op::SegmentAggregate { x, index, scale } => {
                let d = self.value(*x).cols();
                if let Some(gx) = self.slot(g, *x) {
                    for (row, &t) in index.iter().enumerate() {
                        for j in 0..d {
                            gx[row * d + j] += gout[t * d + j] * scale[t];
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, index, groups } => {
                let h = self.value(*x).cols();
                if let Some(gx) = self.slot(g, *x) {
                    let mut dot = vec![T::zero(); groups * h];
                    for (r, &grp) in index.iter().enumerate() {
                        for c in 0..h {
                            dot[grp * h + c] += gout[r * h + c] * out[r * h + c];
                        }
                    }
                    for (r, &grp) in index.iter().enumerate() {
                        for c in 0..h {
                            let k = r * h + c;
                            gx[k] += out[k] * (gout[k] - dot[grp * h + c]);
                        }
                    }
                }
            }
            Op::SoftmaxRows(x) => {
                let d = node.value.cols();
                if let Some(gx) = self.slot(g, *x) {
                    for r in 0..node.value.rows() {
                        let range = r * d..(r + 1) * d;
                        let s: T = gout[range.clone()].iter().zip(&out[range.clone()]).map(|(&a, &b)| a * b).sum();
                        for k in range {
                            gx[k] += out[k] * (gout[k] - s);
                        }
                    }
                }
            }
            Op::LogSoftmaxRows(x) => {
                let d = node.value.cols();
                if let Some(gx) = self.slot(g, *x) {
                    for r in 0..node.value.rows() {
                        let range = r * d..(r + 1) * d;
                        let s: T = gout[range.clone()].iter().copied().sum();
                        for k in range {
                            gx[k] += gout[k] - out[k].exp() * s;
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(gx) = self.slot(g, *x) {
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += gout[o];
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let total = node.value.cols();
                let mut offset = 0;
                for &v in inputs {
                    let (rows, cols) = (self.value(v).rows(), self.value(v).cols());
                    if let Some(gv) = self.slot(g, v) {
                        if *axis == 0 {
                            let start = offset * cols;
                            gv.iter_mut().zip(&gout[start..start + rows * cols]).for_each(|(a, &b)| *a += b);
                        } else {
                            for r in 0..rows {
                                let src = &gout[r * total + offset..r * total + offset + cols];
                                gv[r * cols..(r + 1) * cols].iter_mut().zip(src).for_each(|(a, &b)| *a += b);
                            }
                        }
                    }
                    offset += if *axis == 0 { rows } else { cols };
                }
            }
            Op::SliceCols { x, start } => {
                let d = self.value(*x).cols();
                let w = node.value.cols();
                if let Some(gx) = self.slot(g, *x) {
                    for r in 0..node.value.rows() {
                        for j in 0..w {
                            gx[r * d + start + j] += gout[r * w + j];
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.slot(g, *x) {
                    gx.iter_mut().for_each(|a| *a += gout[0]);
                }
            }
            Op::RowSum(x) => {
                let d = self.value(*x).cols().max(1);
                if let Some(gx) = self.slot(g, *x) {
                    for (k, a) in gx.iter_mut().enumerate() {
                        *a += gout[k / d];
                    }
                }
            }
        }
    }
}
