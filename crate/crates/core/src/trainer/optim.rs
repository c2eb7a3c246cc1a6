//! AdamW with decoupled weight decay.

use crate::encoders::ModelParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers for one tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One update at 1-based step `t`:
/// `theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
pub fn adamw_step(theta: &mut [f64], grad: &[f64], moments: &mut Moments, cfg: &AdamWConfig, t: u64) {
    assert!(t >= 1, "step index is 1-based");
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        let m = cfg.beta1 * moments.m[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * moments.v[i] + (1.0 - cfg.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        theta[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[i]);
    }
}

/// AdamW over every trainable tensor in a [`ModelParams`].
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    moments: Vec<Moments>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ModelParams) -> Self {
        let moments = params.named().iter().map(|(_, p)| Moments::zeros(p.len())).collect();
        Self { config, moments, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update using each tensor's grad buffer. Every gradient is
    /// checked before anything is modified. The temperature is not decayed.
    pub fn step(&mut self, params: &mut ModelParams) -> Result<()> {
        for (name, p) in params.named() {
            if let Some(g) = p.grad() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient { param: name.to_string() });
                }
            }
        }
        self.t += 1;
        for ((name, p), mom) in params.named_mut().into_iter().zip(&mut self.moments) {
            if !p.requires_grad() {
                continue;
            }
            let Some(g) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let mut cfg = self.config;
            if name == "temperature" {
                cfg.weight_decay = 0.0;
            }
            adamw_step(p.data_mut(), &g, mom, &cfg, self.t);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_fixed_point() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut theta = vec![0.3, -1.2, 5.0];
        let before = theta.clone();
        let mut m = Moments::zeros(3);
        for t in 1..=10 {
            adamw_step(&mut theta, &[0.0; 3], &mut m, &cfg, t);
        }
        assert_eq!(theta, before);
    }

    #[test]
    fn zero_gradient_with_decay_shrinks() {
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut theta = vec![2.0, -3.0];
        let mut m = Moments::zeros(2);
        adamw_step(&mut theta, &[0.0, 0.0], &mut m, &cfg, 1);
        for (got, want) in theta.iter().zip([2.0 * (1.0 - 0.001), -3.0 * (1.0 - 0.001)]) {
            assert!((got - want).abs() <= 1e-15 * want.abs(), "{got} vs {want}");
        }
    }

    /// Scalar Adam written out step by step.
    fn scalar_oracle(g: f64, steps: u64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut theta, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        theta
    }

    #[test]
    fn constant_gradient_matches_scalar_oracle() {
        let cfg = AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut theta = vec![0.0];
        let mut m = Moments::zeros(1);
        adamw_step(&mut theta, &[1.0], &mut m, &cfg, 1);
        assert!((theta[0] - scalar_oracle(1.0, 1, 0.05)).abs() < 1e-12);
        assert!((theta[0] + 0.05).abs() < 1e-8);
        for t in 2..=25 {
            adamw_step(&mut theta, &[1.0], &mut m, &cfg, t);
        }
        assert!((theta[0] - scalar_oracle(1.0, 25, 0.05)).abs() < 1e-12);
    }
}
