//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::model::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `0` disables clipping.
    pub clip_norm: f64,
    /// Linear warmup length in steps.
    pub warmup: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9, clip_norm: 1.0, warmup: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: usize,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ModelParams<T>) -> Self {
        let m: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        Self { config, v: m.clone(), m, step: 0 }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Applies one update. `grads[i] == None` leaves parameter `i` untouched,
    /// as do frozen parameters. Returns the pre-clipping gradient norm.
    pub fn update(&mut self, params: &mut ModelParams<T>, grads: &[Option<Vec<T>>]) -> f64 {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        let c = &self.config;
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm { c.clip_norm / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as f64;
        let warm = if c.warmup > 0 { (t / c.warmup as f64).min(1.0) } else { 1.0 };
        let lr = c.lr * warm * (1.0 - c.beta2.powf(t)).sqrt() / (1.0 - c.beta1.powf(t));
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
        let (lr, clip) = (T::lit(lr), T::lit(clip));
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if params.is_frozen(i) {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let w = params.tensors_mut()[i].data_mut();
            for j in 0..w.len() {
                let gj = g[j] * clip;
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                w[j] -= lr * m[j] / (v[j].sqrt() + eps);
            }
        }
        norm
    }
}
