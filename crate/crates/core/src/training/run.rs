use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use super::{Agent, ReplayBuffer, Result, TrainConfig, TrainError, UpdateStats};
use crate::blockworld::{BlockWorld, BlockWorldConfig, BlockWorldError, Observation};
use crate::expert::episode_seed;
use crate::qmodel::{QModel, Representation};
use crate::transition::TransitionRecord;

/// Column order of the run log. The fourth column holds the moving success
/// rate over the configured window (1000 by default).
pub const CSV_HEADER: &str = "episode,steps,reward,moving_success_1000,wall_ms";

/// Salt separating environment seeds from the trainer's sampling stream.
const ENV_SALT: u64 = 0x5eed_0fe4_u64;

/// Parallelism cap: `ASRSE3_THREADS`, else the number of available cores.
pub fn thread_count() -> usize {
    std::env::var("ASRSE3_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Mean of the last `min(window, len)` outcomes; 0 when empty.
pub fn moving_success(outcomes: &[bool], window: usize) -> f64 {
    let n = outcomes.len().min(window);
    if n == 0 {
        return 0.0;
    }
    outcomes[outcomes.len() - n..].iter().filter(|&&s| s).count() as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub episode: usize,
    pub steps: usize,
    pub reward: f64,
    pub moving_success: f64,
    pub wall_ms: u64,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{:.6},{}", self.episode, self.steps, self.reward, self.moving_success, self.wall_ms)
    }
}

/// Per-episode metrics, optionally streamed to a CSV sink as they arrive.
pub struct RunLog {
    window: usize,
    rows: Vec<LogRow>,
    recent: VecDeque<bool>,
    hits: usize,
    sink: Option<Box<dyn Write>>,
}

impl RunLog {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "window must be positive");
        Self { window, rows: Vec::new(), recent: VecDeque::new(), hits: 0, sink: None }
    }

    /// Streams rows to `sink`, writing the header first.
    pub fn with_sink(mut self, mut sink: Box<dyn Write>) -> std::io::Result<Self> {
        writeln!(sink, "{CSV_HEADER}")?;
        self.sink = Some(sink);
        Ok(self)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn rows(&self) -> &[LogRow] {
        &self.rows
    }

    pub fn moving_success(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.hits as f64 / self.recent.len() as f64
        }
    }

    /// True once a whole window has been observed.
    pub fn window_full(&self) -> bool {
        self.recent.len() == self.window
    }

    pub fn push(&mut self, steps: usize, reward: f64, wall_ms: u64) -> std::io::Result<&LogRow> {
        let success = reward >= 1.0;
        self.recent.push_back(success);
        self.hits += success as usize;
        if self.recent.len() > self.window {
            self.hits -= self.recent.pop_front().unwrap() as usize;
        }
        let row = LogRow { episode: self.rows.len(), steps, reward, moving_success: self.moving_success(), wall_ms };
        if let Some(s) = &mut self.sink {
            writeln!(s, "{}", row.csv_line())?;
            s.flush()?;
        }
        self.rows.push(row);
        Ok(self.rows.last().unwrap())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub pretrain_steps: usize,
    pub episodes: usize,
    pub updates: u64,
    pub final_moving_success: f64,
    pub early_stopped: bool,
}

/// Expert-fraction composition: `round(batch * fraction)` expert records
/// (bounded by what is stored), the rest from self-play.
pub fn compose_batch<'a>(
    expert: Option<&'a ReplayBuffer>,
    replay: &'a ReplayBuffer,
    batch: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a TransitionRecord> {
    let n_expert = match expert {
        Some(e) if !e.is_empty() => ((batch as f64 * fraction).round() as usize).min(e.len()),
        _ => 0,
    };
    let mut out = match expert {
        Some(e) if n_expert > 0 => e.sample(rng, n_expert),
        _ => Vec::new(),
    };
    out.extend(replay.sample(rng, batch - n_expert));
    out
}

/// Everything a run owns: the agent, the environment and both buffers.
pub struct Trainer {
    pub agent: Agent,
    pub env: BlockWorld,
    pub expert: Option<ReplayBuffer>,
    pub replay: ReplayBuffer,
    pub log: RunLog,
    rng: ChaCha8Rng,
    episode: usize,
    pretrained: usize,
}

pub type CheckpointHook<'a> = dyn FnMut(usize, &QModel) -> Result<()> + 'a;

impl Trainer {
    /// Fails when a demonstration-based algorithm gets no expert data.
    pub fn new(
        env: &BlockWorldConfig,
        config: TrainConfig,
        repr: Representation,
        expert: Option<Vec<TransitionRecord>>,
    ) -> Result<Self> {
        config.validate()?;
        let expert = expert.filter(|r| !r.is_empty());
        if config.algorithm.needs_expert() && expert.is_none() {
            return Err(TrainError::MissingExpert(config.algorithm));
        }
        let model = super::build_model(repr, env, &config)?;
        Ok(Self {
            env: BlockWorld::new(env.clone())?,
            expert: expert.map(|r| ReplayBuffer::from_records(r, config.buffer_capacity, true)),
            replay: ReplayBuffer::new(config.buffer_capacity, false),
            log: RunLog::new(config.window),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            agent: Agent::new(model, config)?,
            episode: 0,
            pretrained: 0,
        })
    }

    pub fn with_log(mut self, log: RunLog) -> Self {
        self.log = log;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        self.agent.config()
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn pretrain(&mut self, steps: usize) -> Result<Vec<UpdateStats>> {
        let expert = self.expert.as_ref().ok_or(TrainError::EmptyExpertBuffer)?;
        let stats = pretrain(&mut self.agent, expert, steps, &mut self.rng)?;
        self.pretrained += steps;
        Ok(stats)
    }

    /// Runs up to `episodes` self-play episodes. Returns whether early
    /// stopping fired. On an environment error the trainer keeps its state
    /// so the caller can checkpoint it.
    pub fn self_play(&mut self, episodes: usize, hook: &mut CheckpointHook<'_>) -> Result<bool> {
        let started = Instant::now();
        let cfg = self.agent.config().clone();
        for _ in 0..episodes {
            let index = self.episode;
            let env_err = |source: BlockWorldError| TrainError::Env { episode: index, source };
            let mut obs = self.env.reset(episode_seed(cfg.seed ^ ENV_SALT, index as u64)).map_err(env_err)?;
            let eps = cfg.epsilon(index);
            let (mut steps, mut total) = (0usize, 0.0);
            loop {
                let masks = self.env.masks();
                let action = self.agent.act_epsilon(&obs, &masks, eps, &mut self.rng)?;
                let out = self.env.step(&action).map_err(env_err)?;
                let next_masks = self.env.masks();
                self.replay.push(TransitionRecord {
                    obs: std::mem::replace(&mut obs, out.observation.clone()),
                    masks,
                    action,
                    reward: out.reward,
                    next_obs: (!out.done).then_some(out.observation),
                    next_masks: (!out.done).then_some(next_masks),
                    done: out.done,
                    expert: false,
                });
                let batch =
                    compose_batch(self.expert.as_ref(), &self.replay, cfg.batch, cfg.expert_fraction, &mut self.rng);
                self.agent.update(&batch)?;
                steps += 1;
                total += out.reward;
                if out.done {
                    break;
                }
            }
            let wall = if cfg.wall_clock { started.elapsed().as_millis() as u64 } else { 0 };
            self.log.push(steps, total, wall)?;
            self.episode += 1;
            if cfg.checkpoint_every.is_some_and(|n| self.episode.is_multiple_of(n)) {
                hook(self.episode, self.agent.model())?;
            }
            if let Some(threshold) = cfg.early_stop {
                if self.log.window_full() && self.log.moving_success() >= threshold {
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// Pretraining (when expert data is present) then self-play.
    pub fn run(&mut self, hook: &mut CheckpointHook<'_>) -> Result<RunSummary> {
        let cfg = self.agent.config().clone();
        if self.expert.is_some() && cfg.pretrain_steps > 0 {
            self.pretrain(cfg.pretrain_steps)?;
        }
        let early_stopped = self.self_play(cfg.self_play_episodes, hook)?;
        Ok(RunSummary {
            pretrain_steps: self.pretrained,
            episodes: self.episode,
            updates: self.agent.updates(),
            final_moving_success: self.log.moving_success(),
            early_stopped,
        })
    }
}

/// `steps` updates on expert data alone.
pub fn pretrain(
    agent: &mut Agent,
    expert: &ReplayBuffer,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<UpdateStats>> {
    if expert.is_empty() {
        return Err(TrainError::EmptyExpertBuffer);
    }
    let batch = agent.config().batch;
    (0..steps).map(|_| agent.update(&expert.sample(rng, batch))).collect()
}

/// Self-play over a fresh trainer state; see [`Trainer::self_play`].
pub fn self_play(trainer: &mut Trainer, episodes: usize) -> Result<bool> {
    trainer.self_play(episodes, &mut |_, _| Ok(()))
}

/// Convenience wrapper: builds a trainer and runs both phases.
pub fn run(
    env: &BlockWorldConfig,
    config: TrainConfig,
    repr: Representation,
    expert: Option<Vec<TransitionRecord>>,
) -> Result<(Trainer, RunSummary)> {
    let mut t = Trainer::new(env, config, repr, expert)?;
    let summary = t.run(&mut |_, _| Ok(()))?;
    Ok((t, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_length: f64,
}

/// Runs `episodes` episodes of `policy`, spread over [`thread_count`]
/// threads. Episode `i` uses a seed derived from `(seed, i)` for both the
/// environment and the generator handed to the policy, so the result does
/// not depend on the thread count.
pub fn evaluate_with<P>(env: &BlockWorldConfig, episodes: usize, seed: u64, policy: P) -> Result<EvalReport>
where
    P: Fn(&BlockWorld, &Observation, &mut ChaCha8Rng) -> Result<Vec<usize>> + Sync,
{
    let threads = thread_count().clamp(1, episodes.max(1));
    let one = |i: usize| -> Result<(bool, usize)> {
        let s = episode_seed(seed, i as u64);
        let mut world = BlockWorld::new(env.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut obs = world.reset(s)?;
        let mut steps = 0;
        loop {
            let a = policy(&world, &obs, &mut rng)?;
            let out = world.step(&a)?;
            steps += 1;
            if out.done {
                return Ok((out.reward >= 1.0, steps));
            }
            obs = out.observation;
        }
    };
    let results: Vec<Result<(bool, usize)>> = if threads == 1 {
        (0..episodes).map(one).collect()
    } else {
        let mut slots: Vec<Option<Result<(bool, usize)>>> = (0..episodes).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let one = &one;
                    scope.spawn(move || (t..episodes).step_by(threads).map(|i| (i, one(i))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluation worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every episode ran")).collect()
    };
    let mut successes = 0;
    let mut total_len = 0;
    for r in results {
        let (ok, len) = r?;
        successes += ok as usize;
        total_len += len;
    }
    let n = episodes.max(1) as f64;
    Ok(EvalReport { episodes, successes, success_rate: successes as f64 / n, mean_length: total_len as f64 / n })
}

/// Greedy evaluation of a frozen model.
pub fn evaluate(model: &QModel, env: &BlockWorldConfig, episodes: usize, seed: u64) -> Result<EvalReport> {
    use crate::qmodel::greedy_action;
    evaluate_with(env, episodes, seed, |world, obs, _| {
        let masks = world.masks();
        let m = model.mask(&masks);
        let g = greedy_action(model, obs, Some(&*m))?;
        Ok(model.to_env_action(&g.action))
    })
}
