//! Replay buffers, the pretrain and self-play phases, target refresh, the
//! ε schedule and per-algorithm loss wiring.

mod agent;
mod buffer;
mod run;

pub use agent::{build_model, Agent, LevelGrad, RecordGrad, UpdateStats};
pub use buffer::{ReplayBuffer, DEFAULT_CAPACITY};
pub use run::{
    compose_batch, evaluate, evaluate_with, moving_success, pretrain, run, self_play, thread_count, CheckpointHook,
    EvalReport, LogRow, RunLog, RunSummary, Trainer, CSV_HEADER,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::blockworld::BlockWorldError;
use crate::config::{ConfigError, KvConfig};
use crate::losses::LossError;
use crate::qmodel::{CheckpointError, OptimizerConfig, OptimizerKind, QError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("expert buffer is empty")]
    EmptyExpertBuffer,
    #[error("{0} needs an expert buffer; generate one with `gen-expert`")]
    MissingExpert(Algorithm),
    #[error("environment error in episode {episode}: {source}")]
    Env {
        episode: usize,
        #[source]
        source: BlockWorldError,
    },
    #[error(transparent)]
    World(#[from] BlockWorldError),
    #[error(transparent)]
    Q(#[from] QError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    Sdqfd,
    Dqfd,
    Adet,
    Dqn,
    Bc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Sdqfd, Algorithm::Dqfd, Algorithm::Adet, Algorithm::Dqn, Algorithm::Bc];

    /// Everything but DQN learns from demonstrations.
    pub fn needs_expert(self) -> bool {
        self != Algorithm::Dqn
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Sdqfd => "sdqfd",
            Algorithm::Dqfd => "dqfd",
            Algorithm::Adet => "adet",
            Algorithm::Dqn => "dqn",
            Algorithm::Bc => "bc",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected sdqfd, dqfd, adet, dqn or bc)"))
    }
}

/// Which imitation loss the margin term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarginKind {
    Strict,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetRule {
    /// One target for every level, bootstrapped from the last level at `s'`.
    NStep,
    /// Level `i` bootstraps from level `i + 1` at the same state.
    OneStep,
}

impl FromStr for TargetRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "n-step" | "nstep" => Ok(TargetRule::NStep),
            "1-step" | "one-step" => Ok(TargetRule::OneStep),
            other => Err(format!("unknown target rule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub batch: usize,
    pub td_weight: f64,
    pub margin_weight: f64,
    pub margin: f64,
    pub margin_kind: MarginKind,
    pub ce_weight: f64,
    pub ce_beta: f64,
    /// Gradient steps between target-network copies.
    pub target_update: u64,
    pub pretrain_steps: usize,
    pub self_play_episodes: usize,
    pub expert_fraction: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_episodes: usize,
    pub buffer_capacity: usize,
    pub optimizer: OptimizerConfig,
    /// Step size of the tabular representations.
    pub tabular_lr: f64,
    pub hidden: Vec<usize>,
    pub target_rule: TargetRule,
    /// Moving-average window of the run log.
    pub window: usize,
    /// Stop self-play once a full window reaches this success rate.
    pub early_stop: Option<f64>,
    pub checkpoint_every: Option<usize>,
    /// Record real elapsed time in the log instead of 0.
    pub wall_clock: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_algorithm(Algorithm::Sdqfd)
    }
}

pub const TRAIN_KEYS: [&str; 26] = [
    "algo",
    "gamma",
    "batch",
    "td_weight",
    "margin_weight",
    "margin",
    "ce_weight",
    "ce_beta",
    "target_update",
    "pretrain_steps",
    "self_play_episodes",
    "expert_fraction",
    "epsilon_start",
    "epsilon_end",
    "epsilon_anneal_episodes",
    "buffer_capacity",
    "optimizer",
    "lr",
    "weight_decay",
    "tabular_lr",
    "hidden",
    "target_rule",
    "window",
    "early_stop",
    "checkpoint_every",
    "seed",
];

impl TrainConfig {
    /// Defaults with the loss wiring of `algorithm`.
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        let mut c = Self {
            algorithm,
            gamma: 0.9,
            batch: 32,
            td_weight: 1.0,
            margin_weight: 0.1,
            margin: 0.1,
            margin_kind: MarginKind::Strict,
            ce_weight: 0.0,
            ce_beta: 10.0,
            target_update: 100,
            pretrain_steps: 2_000,
            self_play_episodes: 5_000,
            expert_fraction: 0.5,
            epsilon_start: 0.5,
            epsilon_end: 0.0,
            epsilon_anneal_episodes: 20_000,
            buffer_capacity: DEFAULT_CAPACITY,
            optimizer: OptimizerConfig::default(),
            tabular_lr: 1.0,
            hidden: vec![32],
            target_rule: TargetRule::NStep,
            window: 1000,
            early_stop: None,
            checkpoint_every: None,
            wall_clock: false,
            seed: 0,
        };
        match algorithm {
            Algorithm::Sdqfd => {}
            Algorithm::Dqfd => c.margin_kind = MarginKind::Large,
            Algorithm::Adet => {
                c.margin_weight = 0.0;
                c.ce_weight = 0.01;
            }
            Algorithm::Dqn => {
                c.margin_weight = 0.0;
                c.expert_fraction = 0.0;
            }
            Algorithm::Bc => {
                c.td_weight = 0.0;
                c.margin_weight = 0.0;
                c.ce_weight = 1.0;
            }
        }
        c
    }

    /// Larger steps for short runs on small grids.
    pub fn desk(algorithm: Algorithm) -> Self {
        let mut c = Self::for_algorithm(algorithm);
        c.optimizer.lr = 1e-3;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        let weights = [self.td_weight, self.margin_weight, self.margin, self.ce_weight, self.ce_beta];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("loss weights must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.expert_fraction) {
            return bad("expert_fraction must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch == 0 || self.window == 0 || self.buffer_capacity == 0 || self.target_update == 0 {
            return bad("batch, window, buffer_capacity and target_update must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if !(self.optimizer.lr > 0.0) || !(self.tabular_lr > 0.0) || self.optimizer.weight_decay < 0.0 {
            return bad("step sizes must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Exploration rate for an episode: linear anneal for DQN, 0 otherwise.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.algorithm != Algorithm::Dqn {
            return 0.0;
        }
        if self.epsilon_anneal_episodes == 0 || episode >= self.epsilon_anneal_episodes {
            return self.epsilon_end;
        }
        let t = episode as f64 / self.epsilon_anneal_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * t
    }

    /// Overrides from a `key = value` file. `algo` resets the loss wiring
    /// before the remaining keys apply.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        kv.check_keys(&TRAIN_KEYS)?;
        if let Some(a) = kv.parse::<Algorithm>("algo")? {
            let keep = self.clone();
            *self = Self::for_algorithm(a);
            self.optimizer = keep.optimizer;
            self.seed = keep.seed;
        }
        macro_rules! set {
            ($($key:literal => $field:expr),* $(,)?) => {
                $(if let Some(v) = kv.parse($key)? { $field = v; })*
            };
        }
        set! {
            "gamma" => self.gamma,
            "batch" => self.batch,
            "td_weight" => self.td_weight,
            "margin_weight" => self.margin_weight,
            "margin" => self.margin,
            "ce_weight" => self.ce_weight,
            "ce_beta" => self.ce_beta,
            "target_update" => self.target_update,
            "pretrain_steps" => self.pretrain_steps,
            "self_play_episodes" => self.self_play_episodes,
            "expert_fraction" => self.expert_fraction,
            "epsilon_start" => self.epsilon_start,
            "epsilon_end" => self.epsilon_end,
            "epsilon_anneal_episodes" => self.epsilon_anneal_episodes,
            "buffer_capacity" => self.buffer_capacity,
            "lr" => self.optimizer.lr,
            "weight_decay" => self.optimizer.weight_decay,
            "tabular_lr" => self.tabular_lr,
            "target_rule" => self.target_rule,
            "window" => self.window,
            "seed" => self.seed,
        }
        if let Some(k) = kv.parse::<OptimizerKind>("optimizer")? {
            self.optimizer.kind = k;
        }
        if let Some(e) = kv.last("hidden") {
            self.hidden = e
                .value
                .split(',')
                .map(|w| w.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| KvConfig::value_error(e, "expected comma-separated widths"))?;
        }
        if let Some(v) = kv.parse::<f64>("early_stop")? {
            self.early_stop = Some(v);
        }
        if let Some(v) = kv.parse::<usize>("checkpoint_every")? {
            self.checkpoint_every = (v > 0).then_some(v);
        }
        self.validate()
    }
}
