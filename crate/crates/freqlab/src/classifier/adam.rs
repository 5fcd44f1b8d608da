//! Adam optimizer over a flat parameter vector.

/// Paper-default hyperparameters: lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-7.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, cfg: AdamConfig) -> Self {
        Adam { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn learning_rate(&self) -> f64 {
        self.cfg.learning_rate
    }

    /// Per-coordinate step scale of the latest update, lr / (sqrt(v_hat) + eps).
    /// Proximal operators threshold in this metric so shrinkage keeps pace
    /// with the adaptive step size.
    pub fn step_scales(&self) -> Vec<f64> {
        let b2t = 1.0 - self.cfg.beta2.powi(self.t.max(1) as i32);
        self.v
            .iter()
            .map(|&v| self.cfg.learning_rate / ((v / b2t).sqrt() + self.cfg.eps))
            .collect()
    }

    /// One bias-corrected update step in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.cfg.beta1 * self.m[i] + (1.0 - self.cfg.beta1) * grads[i];
            self.v[i] = self.cfg.beta2 * self.v[i] + (1.0 - self.cfg.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.cfg.learning_rate * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
    }
}

/// Shared training-loop knobs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 100,
            early_stop_patience: 10,
            rng_seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Adam::new(2, AdamConfig { learning_rate: 0.1, ..Default::default() });
        let mut p = vec![5.0, -3.0];
        for _ in 0..500 {
            let g = vec![2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
        assert!((p[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn zero_learning_rate_freezes_params() {
        let mut opt = Adam::new(1, AdamConfig { learning_rate: 0.0, ..Default::default() });
        let mut p = vec![1.25];
        opt.step(&mut p, &[10.0]);
        assert_eq!(p[0], 1.25);
    }
}
