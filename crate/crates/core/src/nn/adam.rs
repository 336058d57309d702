use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Adaptive-moment optimizer state over a flat `f64` parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Linear warmup followed by cosine decay to `final_factor · base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningRate {
    pub base: f64,
    pub warmup_fraction: f64,
    pub final_factor: f64,
    /// Multiplier on the step of `ln s`.
    pub sharpness_factor: f64,
}

impl Default for LearningRate {
    fn default() -> Self {
        Self {
            base: 5e-4,
            warmup_fraction: 0.02,
            final_factor: 0.05,
            sharpness_factor: 10.0,
        }
    }
}

impl LearningRate {
    /// Rate for zero-based iteration `it` out of `total`.
    pub fn at(&self, it: u64, total: u64) -> f64 {
        let total = total.max(1) as f64;
        let it = it as f64;
        let warm = (self.warmup_fraction * total).floor();
        if it < warm {
            return self.base * (it + 1.0) / warm;
        }
        let span = (total - warm).max(1.0);
        let progress = ((it - warm) / span).min(1.0);
        let cos = 0.5 * (1.0 + (core::f64::consts::PI * progress).cos());
        self.base * (self.final_factor + (1.0 - self.final_factor) * cos)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut a = Adam::new(2);
        let mut p = [1.0, -1.0];
        a.update(&mut p, &[3.0, -0.5], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_rate_keeps_parameters() {
        let mut a = Adam::new(1);
        let mut p = [0.25];
        a.update(&mut p, &[10.0], 0.0);
        assert_eq!(p, [0.25]);
    }

    #[test]
    fn schedule_shape() {
        let s = LearningRate::default();
        assert!((s.at(0, 1000) - 5e-4 / 20.0).abs() < 1e-15);
        assert!((s.at(19, 1000) - 5e-4).abs() < 1e-15);
        assert!((s.at(20, 1000) - 5e-4).abs() < 1e-15);
        assert!((s.at(1000, 1000) - 5e-4 * 0.05).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for it in 20..1000 {
            let r = s.at(it, 1000);
            assert!(r <= prev);
            prev = r;
        }
    }
}
