use rand::seq::SliceRandom;
use rand::Rng;

use super::{MarginKind, Result, TargetRule, TrainConfig, TrainError};
use crate::blockworld::{ActionMasks, BlockWorld, BlockWorldConfig, Observation};
use crate::losses::{ce_loss, lm_loss, masked_row_loss, slm_loss, td_loss, MarginFn, RowLoss};
use crate::qmodel::{
    greedy_action, n_step_target, one_step_targets, ParamCascade, ParamConfig, QFunction, QModel, Representation,
    TabularCascade, Trainable,
};
use crate::transition::TransitionRecord;

/// Builds a fresh model for `env` in the requested representation.
pub fn build_model(repr: Representation, env: &BlockWorldConfig, train: &TrainConfig) -> Result<QModel> {
    let world = BlockWorld::new(env.clone())?;
    let layout = world.layout();
    match repr {
        Representation::Cascade => {
            let height_scale =
                env.inventory.iter().map(|b| b.heights.iter().copied().max().unwrap_or(1) as f64).sum::<f64>().max(1.0);
            Ok(QModel::Cascade(ParamCascade::new(ParamConfig {
                layout,
                crop: env.crop,
                in_hand_channels: world.crop().channels(),
                hidden: train.hidden.clone(),
                height_scale,
                seed: train.seed,
                optimizer: train.optimizer,
            })))
        }
        Representation::Tabular => {
            Ok(QModel::Tabular(TabularCascade::new(layout.dims(), 0.0).with_step(train.tabular_lr, 0.0)))
        }
        Representation::FlatTabular => {
            QModel::flat(layout.dims(), 0.0, train.tabular_lr, 0.0).map_err(TrainError::InvalidConfig)
        }
    }
}

/// Gradients a single record contributes at one cascade level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGrad {
    pub prefix: Vec<usize>,
    pub td: Vec<f64>,
    /// `None` when no imitation term applies to the record.
    pub imitation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordGrad {
    pub levels: Vec<LevelGrad>,
    pub td_loss: f64,
    pub imitation_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub batch: usize,
    pub td_loss: f64,
    pub imitation_loss: f64,
}

impl UpdateStats {
    pub fn total(&self) -> f64 {
        self.td_loss + self.imitation_loss
    }
}

/// Online model, target copy and the loss wiring of one algorithm.
#[derive(Debug, Clone)]
pub struct Agent {
    model: QModel,
    target: QModel,
    config: TrainConfig,
    updates: u64,
}

impl Agent {
    pub fn new(model: QModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { target: model.clone(), model, config, updates: 0 })
    }

    pub fn model(&self) -> &QModel {
        &self.model
    }

    pub fn target(&self) -> &QModel {
        &self.target
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn into_model(self) -> QModel {
        self.model
    }

    /// Greedy tuple in environment coordinates.
    pub fn act(&self, obs: &Observation, masks: &ActionMasks) -> Result<Vec<usize>> {
        let m = self.model.mask(masks);
        let g = greedy_action(&self.model, obs, Some(&*m))?;
        Ok(self.model.to_env_action(&g.action))
    }

    /// ε-greedy; the generator is only consulted when `epsilon > 0`.
    pub fn act_epsilon<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        masks: &ActionMasks,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            let tuples = masks.feasible_tuples();
            if let Some(t) = tuples.choose(rng) {
                return Ok(t.clone());
            }
        }
        self.act(obs, masks)
    }

    fn targets(&self, rec: &TransitionRecord, action: &[usize]) -> Result<Vec<f64>> {
        let c = &self.config;
        let next_mask = rec.next_masks.as_ref().map(|m| self.target.mask(m));
        let next = match (&rec.next_obs, rec.done) {
            (Some(o), false) => Some((o, next_mask.as_deref())),
            _ => None,
        };
        match c.target_rule {
            TargetRule::NStep => {
                let y = n_step_target(&self.target, rec.reward, c.gamma, rec.done, next)?;
                Ok(vec![y; self.model.levels()])
            }
            TargetRule::OneStep => {
                let m = self.target.mask(&rec.masks);
                Ok(one_step_targets(&self.target, &rec.obs, Some(&*m), action, rec.reward, c.gamma, rec.done, next)?)
            }
        }
    }

    /// Per-level gradients of one record's loss, each scaled by `scale`.
    /// Imitation terms only apply to expert records.
    pub fn record_grad(&self, rec: &TransitionRecord, scale: f64) -> Result<RecordGrad> {
        let c = &self.config;
        let action = self.model.to_model_action(&rec.action);
        let use_td = c.td_weight > 0.0;
        let use_margin = rec.expert && c.margin_weight > 0.0;
        let use_ce = rec.expert && c.ce_weight > 0.0;
        let ys = if use_td { self.targets(rec, &action)? } else { Vec::new() };
        let mask = (use_margin || use_ce).then(|| self.model.mask(&rec.masks));
        let margin = MarginFn::new(c.margin);
        let mut out = RecordGrad { levels: Vec::with_capacity(action.len()), td_loss: 0.0, imitation_loss: 0.0 };
        for (i, &a) in action.iter().enumerate() {
            let prefix = &action[..i];
            let row = self.model.values(&rec.obs, prefix);
            let mut td = vec![0.0; row.len()];
            if use_td {
                let (l, g) = td_loss(row[a], ys[i])?;
                td[a] = c.td_weight * g * scale;
                out.td_loss += c.td_weight * l * scale;
            }
            let imitation = match &mask {
                None => None,
                Some(m) => {
                    let lm = m.level_mask(prefix);
                    let mut grad = vec![0.0; row.len()];
                    let mut add = |r: RowLoss, w: f64| {
                        out.imitation_loss += w * r.loss * scale;
                        for (g, v) in grad.iter_mut().zip(&r.grad) {
                            *g += w * v * scale;
                        }
                    };
                    if use_margin {
                        let r = match c.margin_kind {
                            MarginKind::Strict => masked_row_loss(&row, Some(&lm), a, |q, e| slm_loss(q, e, margin))?,
                            MarginKind::Large => masked_row_loss(&row, Some(&lm), a, |q, e| lm_loss(q, e, margin))?,
                        };
                        add(r, c.margin_weight);
                    }
                    if use_ce {
                        let r = masked_row_loss(&row, Some(&lm), a, |q, e| ce_loss(q, e, c.ce_beta))?;
                        add(r, c.ce_weight);
                    }
                    Some(grad)
                }
            };
            out.levels.push(LevelGrad { prefix: prefix.to_vec(), td, imitation });
        }
        Ok(out)
    }

    /// One gradient step on the batch mean, then a target refresh when due.
    pub fn update(&mut self, batch: &[&TransitionRecord]) -> Result<UpdateStats> {
        let mut stats = UpdateStats { batch: batch.len(), ..UpdateStats::default() };
        if batch.is_empty() {
            return Ok(stats);
        }
        let scale = 1.0 / batch.len() as f64;
        let grads = batch.iter().map(|rec| self.record_grad(rec, scale)).collect::<Result<Vec<_>>>()?;
        for (rec, g) in batch.iter().zip(grads) {
            stats.td_loss += g.td_loss;
            stats.imitation_loss += g.imitation_loss;
            for level in g.levels {
                let mut row = level.td;
                if let Some(im) = level.imitation {
                    for (r, v) in row.iter_mut().zip(im) {
                        *r += v;
                    }
                }
                self.model.backward(&rec.obs, &level.prefix, &row);
            }
        }
        self.model.step();
        self.updates += 1;
        if self.updates.is_multiple_of(self.config.target_update) {
            self.target = self.model.clone();
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockworld::tasks::builtin;
    use crate::expert::generate;
    use crate::training::Algorithm;

    fn expert_records(task: &str, episodes: usize) -> Vec<TransitionRecord> {
        let cfg = builtin(task).unwrap();
        let (eps, _) = generate(&cfg, episodes, 3).unwrap();
        eps.into_iter().flat_map(|e| e.records).collect()
    }

    fn agent(task: &str, repr: Representation, algo: Algorithm) -> Agent {
        let mut c = TrainConfig::desk(algo);
        c.hidden = vec![8];
        let model = build_model(repr, &builtin(task).unwrap(), &c).unwrap();
        Agent::new(model, c).unwrap()
    }

    #[test]
    fn imitation_terms_skip_self_play_records() {
        let mut recs = expert_records("h2", 1);
        let a = agent("h2", Representation::Cascade, Algorithm::Sdqfd);
        let with = a.record_grad(&recs[0], 1.0).unwrap();
        assert!(with.levels.iter().all(|l| l.imitation.is_some()));
        recs[0].expert = false;
        let without = a.record_grad(&recs[0], 1.0).unwrap();
        assert!(without.levels.iter().all(|l| l.imitation.is_none()));
        assert_eq!(without.imitation_loss, 0.0);
        for (x, y) in with.levels.iter().zip(&without.levels) {
            assert_eq!(x.td, y.td);
        }
    }

    #[test]
    fn target_refresh_schedule() {
        let recs = expert_records("2s", 2);
        let mut a = agent("2s", Representation::Tabular, Algorithm::Sdqfd);
        a.config.target_update = 3;
        let batch: Vec<&TransitionRecord> = recs.iter().collect();
        let s = &recs[0].obs;
        for i in 1..=3 {
            a.update(&batch).unwrap();
            let same = a.target.values(s, &[]) == a.model.values(s, &[]);
            assert_eq!(same, i == 3, "update {i}");
        }
    }

    #[test]
    fn epsilon_one_draws_feasible_random_actions() {
        use rand::SeedableRng;
        let a = agent("h2", Representation::Cascade, Algorithm::Dqn);
        let mut env = BlockWorld::new(builtin("h2").unwrap()).unwrap();
        let obs = env.reset(4).unwrap();
        let masks = env.masks();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut distinct = std::collections::HashSet::new();
        for _ in 0..20 {
            let t = a.act_epsilon(&obs, &masks, 1.0, &mut rng).unwrap();
            assert!(masks.tuple_feasible(&t));
            distinct.insert(t);
        }
        assert!(distinct.len() > 1);
    }
}
