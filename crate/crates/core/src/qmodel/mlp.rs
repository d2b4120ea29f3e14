use rand::Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Fully connected layer living at `offset` in a flat parameter vector:
/// weights `[outputs][inputs]` row-major, then `outputs` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
    pub tanh: bool,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &p[self.offset..self.offset + self.inputs * self.outputs];
        let b = &p[self.offset + self.inputs * self.outputs..self.offset + self.param_count()];
        (0..self.outputs)
            .map(|o| {
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                if self.tanh {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&self, p: &[f64], x: &[f64], y: &[f64], gy: &[f64], gp: &mut [f64]) -> Vec<f64> {
        let n = self.inputs;
        let mut gx = vec![0.0; n];
        for o in 0..self.outputs {
            let gz = if self.tanh { gy[o] * (1.0 - y[o] * y[o]) } else { gy[o] };
            if gz == 0.0 {
                continue;
            }
            let w0 = self.offset + o * n;
            for i in 0..n {
                gp[w0 + i] += gz * x[i];
                gx[i] += gz * p[w0 + i];
            }
            gp[self.offset + n * self.outputs + o] += gz;
        }
        gx
    }
}

/// Stack of dense layers; hidden layers use tanh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Layers `sizes[0] -> sizes[1] -> ..`, parameters starting at `offset`.
    pub fn new(sizes: &[usize], offset: usize, tanh_output: bool) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least one layer");
        let mut layers = Vec::new();
        let mut at = offset;
        for (i, w) in sizes.windows(2).enumerate() {
            let last = i == sizes.len() - 2;
            let d = Dense { inputs: w[0], outputs: w[1], offset: at, tanh: !last || tanh_output };
            at += d.param_count();
            layers.push(d);
        }
        Self { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn end(&self) -> usize {
        self.layers.last().map_or(0, |l| l.offset + l.param_count())
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        for l in &self.layers {
            let a = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut params[l.offset..l.offset + l.inputs * l.outputs] {
                *w = rng.gen_range(-a..a);
            }
            for b in &mut params[l.offset + l.inputs * l.outputs..l.offset + l.param_count()] {
                *b = 0.0;
            }
        }
    }

    /// Activations of every layer, input first.
    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for l in &self.layers {
            let y = l.forward(params, acts.last().unwrap());
            acts.push(y);
        }
        acts
    }

    pub fn output(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(params, x).pop().unwrap()
    }

    /// Backpropagates `grad_out` through cached activations into `grads`;
    /// returns the gradient with respect to the input.
    pub fn backward(&self, params: &[f64], acts: &[Vec<f64>], grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            g = l.backward(params, &acts[i], &acts[i + 1], &g, grads);
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

/// Step rule with decoupled weight decay: `p -= lr * (update + decay * p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, lr: 0.5e-5, weight_decay: 1e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment state; unused by plain gradient descent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn apply(&mut self, cfg: &OptimizerConfig, params: &mut [f64], grads: &[f64]) {
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= cfg.lr * (g + cfg.weight_decay * *p);
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
                let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                    self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                    let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
                    params[i] -= cfg.lr * (update + cfg.weight_decay * params[i]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_by_hand() {
        let net = Mlp::new(&[2, 1], 0, false);
        let p = [2.0, -1.0, 0.5];
        assert_eq!(net.output(&p, &[3.0, 4.0]), vec![2.5]);
        let acts = net.forward(&p, &[3.0, 4.0]);
        let mut g = [0.0; 3];
        let gx = net.backward(&p, &acts, &[1.0], &mut g);
        assert_eq!(g, [3.0, 4.0, 1.0]);
        assert_eq!(gx, vec![2.0, -1.0]);
    }

    #[test]
    fn sgd_step_with_decay() {
        let cfg = OptimizerConfig { kind: OptimizerKind::Sgd, lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut p = [1.0, -2.0];
        Adam::default().apply(&cfg, &mut p, &[1.0, 0.0]);
        assert!((p[0] - (1.0 - 0.1 * 1.5)).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let cfg = OptimizerConfig { lr: 0.01, weight_decay: 0.0, ..Default::default() };
        let mut p = [0.0, 0.0];
        Adam::default().apply(&cfg, &mut p, &[3.0, -0.001]);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }
}
