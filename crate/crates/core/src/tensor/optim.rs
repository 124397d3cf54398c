use std::collections::BTreeMap;

use super::{NamedTensors, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient.
    pub fn step(&mut self, lr: f64, params: &mut NamedTensors, grads: &NamedTensors) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(Error::shape(format!(
                    "gradient for {name} has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for ((w, &gi), (mi, vi)) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(v.iter_mut())) {
                let gi = gi as f64;
                let mn = beta1 * *mi as f64 + (1.0 - beta1) * gi;
                let vn = beta2 * *vi as f64 + (1.0 - beta2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                let update = lr * (mn / c1) / ((vn / c2).sqrt() + eps);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }

    /// Optimizer state as named tensors, for resumable checkpoints.
    pub fn state(&self) -> NamedTensors {
        let mut out = NamedTensors::new();
        out.insert("adam.step".to_string(), Tensor::vector(vec![self.step as f32]));
        for (name, (m, v)) in &self.moments {
            out.insert(format!("adam.m.{name}"), Tensor::vector(m.clone()));
            out.insert(format!("adam.v.{name}"), Tensor::vector(v.clone()));
        }
        out
    }

    pub fn from_state(config: AdamConfig, state: &NamedTensors) -> Result<Self> {
        let step = state
            .get("adam.step")
            .map(|t| t.item() as u64)
            .ok_or_else(|| Error::data("optimizer state without adam.step"))?;
        let mut moments = BTreeMap::new();
        for (key, m) in state.range("adam.m.".to_string()..) {
            let Some(name) = key.strip_prefix("adam.m.") else { break };
            let v = state
                .get(&format!("adam.v.{name}"))
                .ok_or_else(|| Error::data(format!("optimizer state for {name} lacks second moment")))?;
            moments.insert(name.to_string(), (m.data().to_vec(), v.data().to_vec()));
        }
        Ok(Self { config, step, moments })
    }
}

/// Multiplies the base rate by `gamma` every `step_size` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub gamma: f64,
    pub step_size: usize,
}

impl StepLr {
    /// Rate for a 1-based epoch number.
    pub fn rate(&self, epoch: usize) -> f64 {
        let decays = epoch.saturating_sub(1) / self.step_size.max(1);
        self.base * self.gamma.powi(decays as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, value: f32) -> NamedTensors {
        NamedTensors::from([(name.to_string(), Tensor::vector(vec![value]))])
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = one("w", 0.75);
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..3 {
            adam.step(0.1, &mut params, &one("w", 0.0)).unwrap();
        }
        assert_eq!(params["w"].item(), 0.75);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g|+eps).
        let mut params = one("w", 0.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(1e-3, &mut params, &one("w", 1.0)).unwrap();
        assert!((params["w"].item() + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut params = one("w", 0.3);
            let mut adam = Adam::new(AdamConfig::default());
            for i in 0..20 {
                adam.step(0.01, &mut params, &one("w", (i as f32 * 0.37).sin())).unwrap();
            }
            params["w"].item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn state_round_trip_continues_identically() {
        let grads = |i: i32| one("w", (i as f32).cos());
        let mut a = Adam::new(AdamConfig::default());
        let mut pa = one("w", 1.0);
        for i in 0..5 {
            a.step(0.01, &mut pa, &grads(i)).unwrap();
        }
        let mut b = Adam::from_state(AdamConfig::default(), &a.state()).unwrap();
        let mut pb = pa.clone();
        a.step(0.01, &mut pa, &grads(5)).unwrap();
        b.step(0.01, &mut pb, &grads(5)).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn step_schedule_decays_on_boundaries() {
        let s = StepLr { base: 0.0001498, gamma: 0.05, step_size: 30 };
        assert_eq!(s.rate(1), 0.0001498);
        assert_eq!(s.rate(30), 0.0001498);
        assert!((s.rate(31) - 7.49e-6).abs() < 1e-12);
        assert!((s.rate(61) - 0.0001498 * 0.0025).abs() < 1e-12);
    }
}
