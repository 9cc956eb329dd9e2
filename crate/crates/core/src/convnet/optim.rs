use serde::{Deserialize, Serialize};

/// First-order update rule over a flat parameter vector.
pub trait Optimizer {
    fn step(&mut self, params: &mut [f32], grad: &[f32]);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

pub struct Adam {
    lr: f64,
    cfg: AdamConfig,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, cfg: AdamConfig) -> Self {
        Adam { lr, cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let step = (self.lr * (1.0 - beta2.powi(self.t)).sqrt() / (1.0 - beta1.powi(self.t))) as f32;
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        // eps is applied to the bias-corrected second moment
        let eps_hat = (eps * (1.0 - beta2.powi(self.t)).sqrt()) as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps_hat);
        }
    }
}

/// Plain SGD with L2 weight decay added to the gradient.
pub struct Sgd {
    pub lr: f64,
    pub weight_decay: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [f32], grad: &[f32]) {
        let (lr, wd) = (self.lr as f32, self.weight_decay as f32);
        for (p, &g) in params.iter_mut().zip(grad) {
            *p -= lr * (g + wd * *p);
        }
    }
}
