//! Bias-corrected Adam with a cosine-annealed learning rate.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Length of the cosine schedule, in optimizer steps.
    pub total_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 1,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("adam lr0 must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return bad("adam eps must be > 0");
        }
        if self.total_steps == 0 {
            return bad("schedule length must be >= 1 step");
        }
        Ok(())
    }
}

/// `lr0 · (1 + cos(π · step / T)) / 2`, no restarts.
pub fn cosine_lr(cfg: &AdamConfig, step: u64) -> Result<f64> {
    let total = cfg.total_steps;
    if step > total {
        return Err(Error::StepOutOfRange { step, total });
    }
    Ok(cfg.lr0 * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos()))
}

/// Moment buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    fn check(&self, params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        let mismatch = |expected: usize, actual: usize| Err(Error::ShapeMismatch { expected, actual });
        if params.len() != self.m.len() {
            return mismatch(self.m.len(), params.len());
        }
        if grads.len() != self.m.len() {
            return mismatch(self.m.len(), grads.len());
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() {
                return mismatch(m.len(), p.len());
            }
            if g.len() != m.len() {
                return mismatch(m.len(), g.len());
            }
        }
        Ok(())
    }

    /// One update at learning rate `lr(t)` from the cosine schedule, where `t`
    /// is the number of steps already taken. Returns the rate used.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], cfg: &AdamConfig) -> Result<f64> {
        let lr = cosine_lr(cfg, self.t)?;
        self.step_with_lr(params, grads, cfg, lr)?;
        Ok(lr)
    }

    /// One update at an explicit learning rate.
    pub fn step_with_lr(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        cfg: &AdamConfig,
        lr: f64,
    ) -> Result<()> {
        self.check(params, grads)?;
        let t = self.t + 1;
        let bc1 = 1.0 - cfg.beta1.powf(t as f64);
        let bc2 = 1.0 - cfg.beta2.powf(t as f64);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        self.t = t;
        Ok(())
    }
}
