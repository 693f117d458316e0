use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

/// Linear warmup to `peak_lr`, then optional linear decay to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    /// When set, the rate decays linearly from the end of warmup to zero at
    /// this step. Otherwise it stays at `peak_lr`.
    pub total_steps: Option<u64>,
}

impl WarmupSchedule {
    /// Learning rate used for the 1-based update `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps > 0 && step <= self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        match self.total_steps {
            Some(total) if total > self.warmup_steps => {
                let left = total.saturating_sub(step) as f64;
                self.peak_lr * left / (total - self.warmup_steps) as f64
            }
            _ => self.peak_lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub schedule: WarmupSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, warmup_steps: u64) -> Self {
        Self {
            schedule: WarmupSchedule { peak_lr: lr, warmup_steps, total_steps: None },
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Restores the update counter and moments, e.g. after a resume.
    pub fn restore(&mut self, step: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) {
        self.step = step;
        self.m = m;
        self.v = v;
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Applies one update to every parameter. `grads[i]` pairs with `params[i]`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(TensorError::Shape {
                op: "adamw_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.numel() != g.len() {
                return Err(TensorError::Shape {
                    op: "adamw_step",
                    left: p.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c = self.config;
        let lr = c.schedule.lr_at(self.step);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + c.eps);
                *w -= lr * (update + c.weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 3.5])];
        let before = params.clone();
        let mut opt = AdamW::new(AdamWConfig::new(1e-2, 0));
        opt.step(&mut params, &[vec![0.0; 3]]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn one_step_on_square_descends() {
        let mut params = vec![Tensor::vector(vec![1.0])];
        let mut opt = AdamW::new(AdamWConfig::new(1e-2, 0));
        let grad = 2.0 * params[0].data()[0];
        opt.step(&mut params, &[vec![grad]]).unwrap();
        let w = params[0].data()[0];
        assert!(w * w < 1.0);
    }

    #[test]
    fn warmup_is_linear() {
        let s = WarmupSchedule { peak_lr: 5e-5, warmup_steps: 1000, total_steps: None };
        assert!((s.lr_at(500) - 2.5e-5).abs() < 1e-20);
        assert_eq!(s.lr_at(1000), 5e-5);
        assert_eq!(s.lr_at(4000), 5e-5);
        let d = WarmupSchedule { total_steps: Some(2000), ..s };
        assert!((d.lr_at(1500) - 2.5e-5).abs() < 1e-20);
        assert_eq!(d.lr_at(2000), 0.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut opt = AdamW::new(AdamWConfig::new(1e-3, 0));
        assert!(opt.step(&mut params, &[vec![0.0]]).is_err());
        assert!(opt.step(&mut params, &[]).is_err());
    }
}
