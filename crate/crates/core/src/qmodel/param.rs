use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use super::mlp::{Adam, Dense, Mlp, OptimizerConfig};
use super::{QFunction, Trainable};
use crate::blockworld::{ActionLayout, Observation};
use crate::encoding::{f2, f3};
use crate::grid::Grid;

/// Number of global scene features appended to every level input.
const GLOBAL_FEATURES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConfig {
    pub layout: ActionLayout,
    /// Side of the local crops (odd).
    pub crop: usize,
    /// Channels of the in-hand image.
    pub in_hand_channels: usize,
    pub hidden: Vec<usize>,
    /// Heights are divided by this before entering the network.
    pub height_scale: f64,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

#[derive(Debug, Clone, PartialEq)]
struct LevelNet {
    trunk: Mlp,
    heads: [Mlp; 2],
}

/// Per-level network: a tanh trunk shared by a pick head and a place head.
///
/// Level 0 scores every cell from the crop around it (one output per cell);
/// deeper levels score their partial actions from the crop of the chosen
/// prefix. Every level also sees the in-hand image and global height stats.
#[derive(Debug, Clone)]
pub struct ParamCascade {
    config: ParamConfig,
    dims: Vec<usize>,
    nets: Vec<LevelNet>,
    params: Vec<f64>,
    grads: Vec<f64>,
    adam: Adam,
}

impl ParamCascade {
    pub fn new(config: ParamConfig) -> Self {
        let dims = config.layout.dims();
        let m2 = config.crop * config.crop;
        let input = m2 * (1 + config.in_hand_channels) + GLOBAL_FEATURES;
        let mut at = 0;
        let mut nets = Vec::new();
        for (level, &width) in dims.iter().enumerate() {
            let mut sizes = vec![input];
            sizes.extend(&config.hidden);
            let trunk = Mlp::new(&sizes, at, true);
            at = trunk.end();
            let feat = *sizes.last().unwrap();
            let out = if level == 0 { 1 } else { width };
            let pick = Mlp::new(&[feat, out], at, false);
            at = pick.end();
            let place = Mlp::new(&[feat, out], at, false);
            at = place.end();
            nets.push(LevelNet { trunk, heads: [pick, place] });
        }
        let mut params = vec![0.0; at];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for n in &nets {
            n.trunk.init(&mut params, &mut rng);
            n.heads[0].init(&mut params, &mut rng);
            n.heads[1].init(&mut params, &mut rng);
        }
        Self { grads: vec![0.0; at], dims, nets, params, config, adam: Adam::default() }
    }

    pub fn config(&self) -> &ParamConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) {
        assert_eq!(params.len(), self.params.len(), "parameter count");
        self.params = params;
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Named tensors `(name, shape, offset)` in parameter order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut out = Vec::new();
        for (i, n) in self.nets.iter().enumerate() {
            for (part, mlp) in [("trunk", &n.trunk), ("pick", &n.heads[0]), ("place", &n.heads[1])] {
                for (j, l) in mlp.layers.iter().enumerate() {
                    out.push((format!("level{i}.{part}.{j}.w"), vec![l.outputs, l.inputs], l.offset));
                    out.push((format!("level{i}.{part}.{j}.b"), vec![l.outputs], l.offset + l.inputs * l.outputs));
                }
            }
        }
        out
    }

    /// Parameter index range of one head, for isolation checks.
    pub fn head_range(&self, level: usize, head: usize) -> std::ops::Range<usize> {
        let h = &self.nets[level].heads[head];
        h.layers[0].offset..h.end()
    }

    fn crop_at(&self, scene: &Grid, prefix: &[usize]) -> Grid {
        let layout = &self.config.layout;
        let (x, y) = layout.xy(prefix[0]);
        if prefix.len() >= 2 {
            f3(scene, x, y, prefix[1] as f64 * FRAC_PI_2, self.config.crop)
        } else {
            f2(scene, x, y, self.config.crop)
        }
    }

    fn context(&self, obs: &Observation) -> Vec<f64> {
        let s = self.config.height_scale;
        let mut v: Vec<f64> = obs.in_hand.iter().flat_map(|g| g.data().iter().map(|&h| h as f64 / s)).collect();
        v.resize(self.config.crop * self.config.crop * self.config.in_hand_channels, 0.0);
        let n = obs.scene.data().len().max(1) as f64;
        v.push(obs.scene.max() as f64 / s);
        v.push(obs.scene.sum() as f64 / (n * s));
        v
    }

    fn input(&self, crop: &Grid, context: &[f64]) -> Vec<f64> {
        let s = self.config.height_scale;
        let mut x: Vec<f64> = crop.data().iter().map(|&h| h as f64 / s).collect();
        x.extend_from_slice(context);
        x
    }

    /// Inputs feeding the level of `prefix`: one per cell at level 0.
    fn inputs(&self, obs: &Observation, prefix: &[usize]) -> Vec<Vec<f64>> {
        let ctx = self.context(obs);
        if prefix.is_empty() {
            let layout = &self.config.layout;
            (0..self.dims[0])
                .map(|cell| {
                    let (x, y) = layout.xy(cell);
                    self.input(&f2(&obs.scene, x, y, self.config.crop), &ctx)
                })
                .collect()
        } else {
            vec![self.input(&self.crop_at(&obs.scene, prefix), &ctx)]
        }
    }

    /// Values under an explicit parameter vector.
    pub fn values_with(&self, params: &[f64], obs: &Observation, prefix: &[usize]) -> Vec<f64> {
        let net = &self.nets[prefix.len()];
        let head = &net.heads[obs.gripper.bit()];
        self.inputs(obs, prefix).iter().flat_map(|x| head.output(params, &net.trunk.output(params, x))).collect()
    }

    /// Accumulates `d loss / d params` into `grads` under explicit parameters.
    pub fn backward_with(
        &self,
        params: &[f64],
        obs: &Observation,
        prefix: &[usize],
        row_grad: &[f64],
        grads: &mut [f64],
    ) {
        let net = &self.nets[prefix.len()];
        let head = &net.heads[obs.gripper.bit()];
        let inputs = self.inputs(obs, prefix);
        let per_input = head.outputs();
        for (i, x) in inputs.iter().enumerate() {
            let g = &row_grad[i * per_input..(i + 1) * per_input];
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let trunk_acts = net.trunk.forward(params, x);
            let feat = trunk_acts.last().unwrap();
            let head_acts = head.forward(params, feat);
            let g_feat = head.backward(params, &head_acts, g, grads);
            net.trunk.backward(params, &trunk_acts, &g_feat, grads);
        }
    }

    pub fn layers(&self) -> Vec<Dense> {
        self.nets
            .iter()
            .flat_map(|n| n.trunk.layers.iter().chain(&n.heads[0].layers).chain(&n.heads[1].layers).copied())
            .collect()
    }
}

impl QFunction<Observation> for ParamCascade {
    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn values(&self, state: &Observation, prefix: &[usize]) -> Vec<f64> {
        self.values_with(&self.params, state, prefix)
    }
}

impl Trainable<Observation> for ParamCascade {
    fn backward(&mut self, state: &Observation, prefix: &[usize], row_grad: &[f64]) {
        let mut grads = std::mem::take(&mut self.grads);
        self.backward_with(&self.params, state, prefix, row_grad, &mut grads);
        self.grads = grads;
    }

    fn step(&mut self) {
        let cfg = self.config.optimizer;
        self.adam.apply(&cfg, &mut self.params, &self.grads);
        self.zero_grad();
    }
}
