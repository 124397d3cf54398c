//! Central finite-difference checks of tape gradients.
//!
//! Checks run in `f64` instantiations of the tape so that the finite
//! difference itself is accurate to well below the tolerance.

use std::collections::BTreeMap;

use rand::RngExt;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub type Inputs = BTreeMap<String, Tensor<f64>>;
pub type Bound = BTreeMap<String, Var>;

/// Builds a scalar loss from inputs bound on a fresh tape.
pub trait LossFn: Fn(&mut Tape<f64>, &Bound) -> Result<Var> {}
impl<F: Fn(&mut Tape<f64>, &Bound) -> Result<Var>> LossFn for F {}

/// Gradients smaller than this are compared in absolute terms.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, MAGNITUDE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(MAGNITUDE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Coverage {
    /// Every coordinate of every input.
    Every,
    /// Per input tensor: `directions` random unit directions spanning the
    /// whole tensor plus `coordinates` randomly chosen single entries.
    Sampled { directions: usize, coordinates: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub step: f64,
    pub tolerance: f64,
    pub coverage: Coverage,
    /// Test hook: perturbs the analytic gradient of the named input so the
    /// check must report a failure.
    pub corrupt: Option<String>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { step: 1e-3, tolerance: 1e-3, coverage: Coverage::Every, corrupt: None }
    }
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    pub checks: usize,
    pub worst_error: f64,
    pub worst_at: String,
    pub passed: bool,
}

fn bind(tape: &mut Tape<f64>, inputs: &Inputs) -> Bound {
    inputs.iter().map(|(k, t)| (k.clone(), tape.param(t.clone()))).collect()
}

fn evaluate(inputs: &Inputs, f: &dyn LossFn) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, inputs);
    let loss = f(&mut tape, &bound)?;
    Ok(tape.value(loss).item())
}

/// Analytic gradients of `f` with respect to every input.
pub fn analytic_gradients(inputs: &Inputs, f: &dyn LossFn) -> Result<Inputs> {
    let mut tape = Tape::new();
    let bound = bind(&mut tape, inputs);
    let loss = f(&mut tape, &bound)?;
    let grads = tape.backward(loss)?;
    bound
        .iter()
        .map(|(k, &v)| {
            let g = grads.get(v).cloned().ok_or_else(|| Error::contract(format!("no gradient for {k}")))?;
            Ok((k.clone(), g))
        })
        .collect()
}

impl GradCheck {
    pub fn run(&self, name: &str, inputs: &Inputs, f: &dyn LossFn) -> Result<CheckReport> {
        let mut analytic = analytic_gradients(inputs, f)?;
        if let Some(target) = &self.corrupt {
            if let Some(g) = analytic.get_mut(target) {
                if let Some(first) = g.data_mut().first_mut() {
                    *first += 1.0 + first.abs();
                }
            }
        }
        let mut report =
            CheckReport { name: name.to_string(), checks: 0, worst_error: 0.0, worst_at: String::new(), passed: true };
        let mut record = |label: String, a: f64, n: f64| {
            let err = relative_error(a, n);
            report.checks += 1;
            if !(err <= report.worst_error) {
                report.worst_error = err;
                report.worst_at = label;
            }
        };
        let h = self.step;
        for (key, x) in inputs {
            let g = &analytic[key];
            match &self.coverage {
                Coverage::Every => {
                    for i in 0..x.len() {
                        let n = self.coordinate(inputs, key, i, f)?;
                        record(format!("{key}[{i}]"), g.data()[i], n);
                    }
                }
                Coverage::Sampled { directions, coordinates, seed } => {
                    let mut rng = rng::stream(*seed, &[rng::name_id(key)]);
                    for d in 0..*directions {
                        let mut u: Vec<f64> = (0..x.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        u.iter_mut().for_each(|v| *v /= norm);
                        let shifted = |sign: f64| -> Result<f64> {
                            let mut moved = inputs.clone();
                            let t = moved.get_mut(key).expect("key from inputs");
                            t.data_mut().iter_mut().zip(&u).for_each(|(v, &ui)| *v += sign * h * ui);
                            evaluate(&moved, f)
                        };
                        let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
                        let a: f64 = g.data().iter().zip(&u).map(|(p, q)| p * q).sum();
                        record(format!("{key}<dir {d}>"), a, numeric);
                    }
                    for _ in 0..(*coordinates).min(x.len()) {
                        let i = rng.random_range(0..x.len());
                        let n = self.coordinate(inputs, key, i, f)?;
                        record(format!("{key}[{i}]"), g.data()[i], n);
                    }
                }
            }
        }
        report.passed = report.worst_error <= self.tolerance;
        Ok(report)
    }

    fn coordinate(&self, inputs: &Inputs, key: &str, i: usize, f: &dyn LossFn) -> Result<f64> {
        let mut moved = inputs.clone();
        let base = inputs[key].data()[i];
        moved.get_mut(key).expect("key from inputs").data_mut()[i] = base + self.step;
        let up = evaluate(&moved, f)?;
        moved.get_mut(key).expect("key from inputs").data_mut()[i] = base - self.step;
        let down = evaluate(&moved, f)?;
        Ok((up - down) / (2.0 * self.step))
    }
}

/// Uniform random tensor in `[-1, 1]`.
pub fn random_tensor(shape: Vec<usize>, seed: u64, stream: u64) -> Tensor<f64> {
    let mut rng = rng::stream(seed, &[stream]);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Contracts any output to a scalar with fixed random weights, so the check
/// sees a generic upstream gradient instead of all ones.
pub fn weighted_sum(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = random_tensor(shape, seed, 0xfeed);
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}
