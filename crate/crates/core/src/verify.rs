//! Oracle property suites behind `asrse3 verify`: augmentation equivalence,
//! hierarchical argmax, target consistency, loss identities, gradient checks
//! and expert reversal replay.
//!
//! Every property reports how many instances it checked and the worst error
//! it saw. The first failing instance is kept as a counterexample: an MDP
//! fixture for the MDP-based properties, a JSON description otherwise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fmt;
use std::str::FromStr;

use crate::blockworld::{tasks, BlockWorld};
use crate::expert;
use crate::losses::{ce_loss, lm_loss, slm_loss, td_loss, violation_set, MarginFn, RowLoss};
use crate::mdp::fixture::to_fixture;
use crate::mdp::random::{random_dims, random_mdp, RandomMdpSpec};
use crate::mdp::{augment, flat_qstar, value_iteration, AugmentedState, FactoredMdp, SolverOptions};
use crate::qmodel::{
    grad_check, greedy_action, n_step_target, one_step_targets, AugmentedMask, LevelMask, OptimizerConfig,
    ParamCascade, ParamConfig, QFunction, TabularCascade, REL_FLOOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Suite {
    All,
    Augmentation,
    Argmax,
    Targets,
    Losses,
    Gradients,
    Reversal,
}

impl Suite {
    pub const NAMES: [&'static str; 7] =
        ["all", "augmentation", "argmax", "targets", "losses", "gradients", "reversal"];

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "all" => Suite::All,
            "augmentation" => Suite::Augmentation,
            "argmax" => Suite::Argmax,
            "targets" => Suite::Targets,
            "losses" => Suite::Losses,
            "gradients" => Suite::Gradients,
            "reversal" => Suite::Reversal,
            other => return Err(format!("unknown suite `{other}` (expected one of {:?})", Suite::NAMES)),
        })
    }
}

/// Deliberate bugs used to check that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Negates the strict-margin gradient.
    SlmGradientSign,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "slm-grad-sign" => Ok(Fault::SlmGradientSign),
            other => Err(format!("unknown fault `{other}` (expected slm-grad-sign)")),
        }
    }
}

/// Instance counts per property.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sizes {
    pub mdps: usize,
    pub flat_tables: usize,
    pub target_mdps: usize,
    pub loss_rows: usize,
    pub gradient_instances: usize,
    pub expert_episodes: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            mdps: 100,
            flat_tables: 100,
            target_mdps: 20,
            loss_rows: 100_000,
            gradient_instances: 50,
            expert_episodes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub sizes: Sizes,
    pub fault: Option<Fault>,
}

impl VerifyOptions {
    pub fn new(seed: u64) -> Self {
        Self { seed, sizes: Sizes::default(), fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    /// `mdp-fixture` or `json`.
    pub kind: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub counterexample: Option<Counterexample>,
}

impl PropertyReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.into(), instances: 0, failures: 0, max_error: 0.0, tolerance, counterexample: None }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.instances > 0
    }

    /// Records one instance with error `err`; `false` when the instance fails.
    fn check(&mut self, err: f64, counterexample: impl FnOnce() -> Counterexample) -> bool {
        self.instances += 1;
        if err.is_nan() || err > self.max_error {
            self.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
        let ok = err <= self.tolerance;
        if !ok {
            self.failures += 1;
            if self.counterexample.is_none() {
                self.counterexample = Some(counterexample());
            }
        }
        ok
    }

    /// Records a pass/fail instance without a numeric error.
    fn check_bool(&mut self, ok: bool, counterexample: impl FnOnce() -> Counterexample) {
        self.check(if ok { 0.0 } else { f64::INFINITY }, counterexample);
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} instances, {} failures, max error {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.failures,
            self.max_error,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub properties: Vec<PropertyReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(PropertyReport::passed)
    }

    pub fn property(&self, name: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.name == name)
    }
}

fn fixture(mdp: &FactoredMdp) -> Counterexample {
    Counterexample { kind: "mdp-fixture".into(), text: to_fixture(mdp) }
}

fn json_case(value: serde_json::Value) -> Counterexample {
    Counterexample { kind: "json".into(), text: value.to_string() }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `|V*_aug(base) - V*_orig|` over random MDPs with k in {2, 3, 5}.
pub fn augmentation_equivalence(seed: u64, count: usize) -> PropertyReport {
    let mut rep = PropertyReport::new("augmentation_equivalence", 1e-9);
    let mut rng = rng_for(seed, 1);
    let opts = SolverOptions::default();
    for i in 0..count {
        let k = [2, 3, 5][i % 3];
        let dims = random_dims(&mut rng, k, 4);
        let spec = RandomMdpSpec {
            num_states: rng.gen_range(1..=20),
            max_outcomes: rng.gen_range(1..=3),
            done_prob: rng.gen_range(0.0..0.3),
            infeasible_prob: rng.gen_range(0.0..0.5),
            ..RandomMdpSpec::default()
        };
        let mdp = random_mdp(&mut rng, &dims, spec).expect("valid random dims");
        let aug = augment(mdp.clone());
        let err = match (value_iteration(&mdp, opts), value_iteration(&aug, opts)) {
            (Ok(orig), Ok(aug_sol)) => (0..mdp.num_states())
                .map(|s| (aug_sol.values[aug.index_of(&AugmentedState::base(s))] - orig.values[s]).abs())
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        };
        rep.check(err, || fixture(&mdp));
    }
    rep
}

/// Greedy cascade selection over max-marginalized flat tables reaches the
/// flat maximum exactly.
pub fn hierarchical_argmax(seed: u64, count: usize) -> PropertyReport {
    let mut rep = PropertyReport::new("hierarchical_argmax", 0.0);
    let mut rng = rng_for(seed, 2);
    for i in 0..count {
        let k = [2, 3, 5][i % 3];
        let dims = random_dims(&mut rng, k, 4);
        let spec = RandomMdpSpec {
            num_states: rng.gen_range(1..=10),
            infeasible_prob: rng.gen_range(0.0..0.5),
            ..RandomMdpSpec::default()
        };
        let mdp = random_mdp(&mut rng, &dims, spec).expect("valid random dims");
        let Ok(flat) = flat_qstar(&mdp, SolverOptions::default()) else {
            rep.check(f64::INFINITY, || fixture(&mdp));
            continue;
        };
        let cascade = TabularCascade::from_flat(&flat);
        let err = (0..mdp.num_states())
            .map(|s| match greedy_action(&cascade, &s, None) {
                Ok(g) => {
                    let j = mdp.action_space().encode(&g.action);
                    if flat.get(s, j) == flat.max(s) {
                        0.0
                    } else {
                        (flat.get(s, j) - flat.max(s)).abs().max(f64::MIN_POSITIVE)
                    }
                }
                Err(_) => f64::INFINITY,
            })
            .fold(0.0, f64::max);
        rep.check(err, || fixture(&mdp));
    }
    rep
}

/// With the cascade set to the exact augmented optimum, n-step and 1-step
/// targets reproduce its entries on every transition of deterministic MDPs.
pub fn target_fixed_point(seed: u64, count: usize) -> PropertyReport {
    let mut rep = PropertyReport::new("target_fixed_point", 1e-9);
    let mut rng = rng_for(seed, 3);
    for i in 0..count {
        let k = [2, 3, 5][i % 3];
        let dims = random_dims(&mut rng, k, 3);
        let spec = RandomMdpSpec {
            num_states: rng.gen_range(2..=10),
            done_prob: 0.2,
            infeasible_prob: rng.gen_range(0.0..0.4),
            ..RandomMdpSpec::default()
        };
        let mdp = random_mdp(&mut rng, &dims, spec).expect("valid random dims");
        let aug = augment(mdp.clone());
        let err = match value_iteration(&aug, SolverOptions::default()) {
            Ok(sol) => target_error(&mdp, &aug, &sol),
            Err(_) => f64::INFINITY,
        };
        rep.check(err, || fixture(&mdp));
    }
    rep
}

fn target_error(mdp: &FactoredMdp, aug: &crate::mdp::AugmentedMdp, sol: &crate::mdp::Solution) -> f64 {
    let cascade = TabularCascade::from_augmented(aug, sol);
    let space = mdp.action_space();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.num_states() {
        let here = AugmentedMask { mdp: aug, base: s };
        for a in space.iter().collect::<Vec<_>>() {
            let j = space.encode(&a);
            if !mdp.is_feasible(s, j) {
                continue;
            }
            let o = mdp.outcomes(s, j)[0];
            let next = AugmentedMask { mdp: aug, base: o.next };
            let succ = (!o.done).then_some((&o.next, Some(&next as &dyn LevelMask)));
            let exact_last = cascade.values(&s, &a[..a.len() - 1])[a[a.len() - 1]];
            match n_step_target(&cascade, o.reward, mdp.gamma(), o.done, succ) {
                Ok(y) => worst = worst.max((y - exact_last).abs()),
                Err(_) => return f64::INFINITY,
            }
            match one_step_targets(&cascade, &s, Some(&here), &a, o.reward, mdp.gamma(), o.done, succ) {
                Ok(ys) => {
                    for (i, y) in ys.iter().enumerate() {
                        worst = worst.max((y - cascade.values(&s, &a[..i])[a[i]]).abs());
                    }
                }
                Err(_) => return f64::INFINITY,
            }
        }
    }
    worst
}

fn slm(q: &[f64], e: usize, m: MarginFn, fault: Option<Fault>) -> RowLoss {
    let mut r = slm_loss(q, e, m).expect("valid row");
    if fault == Some(Fault::SlmGradientSign) {
        r.grad.iter_mut().for_each(|g| *g = -*g);
    }
    r
}

/// Worked examples, the single-violator identity and the zero-iff-empty
/// identity over random rows.
pub fn loss_identities(seed: u64, rows: usize, fault: Option<Fault>) -> Vec<PropertyReport> {
    let l = MarginFn::new(0.1);
    let mut examples = PropertyReport::new("slm_worked_examples", 1e-12);
    for (q, want) in [(vec![1.0, 0.95, 0.5], 0.05), (vec![1.0, 0.8], 0.0), (vec![0.5, 0.9, 0.85], 0.475)] {
        let got = slm(&q, 0, l, fault).loss;
        examples.check((got - want).abs(), || json_case(json!({"q": q, "expert": 0, "want": want, "got": got})));
    }
    let single = {
        let q = [1.0, 0.95, 0.5];
        (slm(&q, 0, l, fault).loss - lm_loss(&q, 0, l).unwrap().loss).abs()
    };
    examples.check(single, || json_case(json!({"q": [1.0, 0.95, 0.5], "slm_minus_lm": single})));

    let mut zero_iff = PropertyReport::new("slm_zero_iff_no_violation", 0.0);
    let mut single_violator = PropertyReport::new("slm_equals_lm_single_violator", 1e-12);
    let mut rng = rng_for(seed, 4);
    for _ in 0..rows {
        let n = rng.gen_range(1..=8);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = rng.gen_range(0..n);
        let r = slm(&q, e, l, fault);
        let set = violation_set(&q, e, l);
        let ok = r.loss >= 0.0 && ((r.loss == 0.0) == set.is_empty());
        zero_iff.check_bool(ok, || json_case(json!({"q": q, "expert": e, "loss": r.loss, "violators": set})));
        if set.len() == 1 {
            let lm = lm_loss(&q, e, l).unwrap().loss;
            let v = set[0];
            let top = (0..n).all(|a| q[a] + l.eval(e, a) <= q[v] + l.eval(e, v));
            if top {
                single_violator
                    .check((r.loss - lm).abs(), || json_case(json!({"q": q, "expert": e, "slm": r.loss, "lm": lm})));
            }
        }
    }
    vec![examples, zero_iff, single_violator]
}

/// Central differences of a scalar function of a row.
fn numeric_grad(q: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = q.to_vec();
    (0..q.len())
        .map(|i| {
            let o = p[i];
            p[i] = o + h;
            let up = f(&p);
            p[i] = o - h;
            let down = f(&p);
            p[i] = o;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    a.iter().zip(n).map(|(a, n)| (a - n).abs() / (a.abs() + n.abs() + REL_FLOOR)).fold(0.0, f64::max)
}

/// A row whose margin terms sit at least `gap` from every kink.
fn smooth_row(rng: &mut ChaCha8Rng, l: MarginFn, gap: f64) -> (Vec<f64>, usize) {
    loop {
        let n = rng.gen_range(2..=8);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = rng.gen_range(0..n);
        let shifted: Vec<f64> = (0..n).map(|a| q[a] + l.eval(e, a)).collect();
        let near_boundary = (0..n).any(|a| a != e && (shifted[a] - q[e]).abs() < gap);
        let mut sorted = shifted.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if !near_boundary && sorted[0] - sorted[1] >= gap {
            return (q, e);
        }
    }
}

/// Loss gradients against central differences.
pub fn loss_gradients(seed: u64, count: usize, fault: Option<Fault>) -> PropertyReport {
    let mut rep = PropertyReport::new("loss_gradients", 1e-4);
    let mut rng = rng_for(seed, 5);
    let l = MarginFn::new(0.1);
    let h = 1e-5;
    for _ in 0..count {
        let (q, e) = smooth_row(&mut rng, l, 1e-3);
        let cases: [(&str, Box<dyn Fn(&[f64]) -> RowLoss>); 3] = [
            ("slm", Box::new(|r: &[f64]| slm(r, e, l, fault))),
            ("lm", Box::new(|r: &[f64]| lm_loss(r, e, l).unwrap())),
            ("ce", Box::new(|r: &[f64]| ce_loss(r, e, 10.0).unwrap())),
        ];
        for (name, f) in cases {
            let analytic = f(&q).grad;
            let numeric = numeric_grad(&q, h, |r| f(r).loss);
            let err = rel_error(&analytic, &numeric);
            rep.check(err, || {
                json_case(json!({"loss": name, "q": q, "expert": e, "analytic": analytic, "numeric": numeric}))
            });
        }
        let (qp, y) = loop {
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let d: f64 = a - b;
            if (d.abs() - 1.0).abs() > 1e-3 {
                break (a, b);
            }
        };
        let (_, g) = td_loss(qp, y).unwrap();
        let n = numeric_grad(&[qp], h, |r| td_loss(r[0], y).unwrap().0);
        let err = rel_error(&[g], &n);
        rep.check(err, || json_case(json!({"loss": "huber", "q": qp, "y": y, "analytic": g, "numeric": n[0]})));
    }
    rep
}

/// Parameter gradients of the parametric cascade on random observations.
pub fn model_gradients(seed: u64, count: usize) -> PropertyReport {
    let mut rep = PropertyReport::new("model_gradients", 1e-4);
    let mut rng = rng_for(seed, 6);
    let tasks_used = ["2s", "h2", "2s-xytz"];
    for i in 0..count {
        let cfg = tasks::builtin(tasks_used[i % tasks_used.len()]).expect("built-in task");
        let mut world = BlockWorld::new(cfg.clone()).expect("valid task");
        let mut obs = world.reset(rng.gen()).expect("reset");
        for _ in 0..rng.gen_range(0..3) {
            let tuples = world.masks().feasible_tuples();
            let t = tuples.choose(&mut rng).expect("feasible action").clone();
            let out = world.step(&t).expect("feasible step");
            if out.done {
                break;
            }
            obs = out.observation;
        }
        let model = ParamCascade::new(ParamConfig {
            layout: world.layout(),
            crop: 3,
            in_hand_channels: world.crop().channels(),
            hidden: vec![4],
            height_scale: 2.0,
            seed: rng.gen(),
            optimizer: OptimizerConfig::default(),
        });
        let masks = world.masks();
        let tuple = masks.feasible_tuples().choose(&mut rng).expect("feasible action").clone();
        let level = rng.gen_range(0..tuple.len());
        let prefix = tuple[..level].to_vec();
        let width = model.dims()[level];
        let weights: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let result = grad_check(
            model.params(),
            |p| {
                let v = model.values_with(p, &obs, &prefix);
                let loss = v.iter().zip(&weights).map(|(a, b)| a * b).sum();
                let mut g = vec![0.0; p.len()];
                model.backward_with(p, &obs, &prefix, &weights, &mut g);
                Ok((loss, g))
            },
            1e-5,
        );
        let err = result.map_or(f64::INFINITY, |r| r.max_rel_error);
        rep.check(err, || {
            json_case(json!({"task": cfg.name, "level": level, "prefix": prefix, "params": model.params().len()}))
        });
    }
    rep
}

/// Generated construction episodes replay to reward 1 with no rejections.
pub fn expert_reversal(seed: u64, per_task: usize, tasks_used: &[&str]) -> PropertyReport {
    let mut rep = PropertyReport::new("expert_reversal", 0.0);
    for name in tasks_used {
        let cfg = tasks::builtin(name).expect("built-in task");
        match expert::generate(&cfg, per_task, seed) {
            Ok((episodes, report)) => {
                rep.check_bool(report.rejected == 0 && episodes.len() == per_task, || {
                    json_case(json!({"task": name, "report": report}))
                });
                for ep in &episodes {
                    let replay = expert::replay(&cfg, &ep.start, &ep.actions, 0);
                    let ok = matches!(&replay, Ok((recs, _, reached)) if *reached && recs.len() == ep.actions.len());
                    rep.check_bool(ok, || json_case(json!({"task": name, "actions": ep.actions})));
                }
            }
            Err(e) => rep.check_bool(false, || json_case(json!({"task": name, "error": e.to_string()}))),
        }
    }
    rep
}

pub const EXPERT_TASKS: [&str; 5] = ["2s", "4s", "h2", "h4", "imdis"];

pub fn run_suite(suite: Suite, options: &VerifyOptions) -> VerifyReport {
    let s = options.seed;
    let n = &options.sizes;
    let mut properties = Vec::new();
    if suite.includes(Suite::Augmentation) {
        properties.push(augmentation_equivalence(s, n.mdps));
    }
    if suite.includes(Suite::Argmax) {
        properties.push(hierarchical_argmax(s, n.flat_tables));
    }
    if suite.includes(Suite::Targets) {
        properties.push(target_fixed_point(s, n.target_mdps));
    }
    if suite.includes(Suite::Losses) {
        properties.extend(loss_identities(s, n.loss_rows, options.fault));
    }
    if suite.includes(Suite::Gradients) {
        properties.push(loss_gradients(s, n.gradient_instances, options.fault));
        properties.push(model_gradients(s, n.gradient_instances));
    }
    if suite.includes(Suite::Reversal) {
        properties.push(expert_reversal(s, n.expert_episodes, &EXPERT_TASKS));
    }
    VerifyReport { seed: s, fault: options.fault, properties }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> VerifyOptions {
        VerifyOptions {
            seed,
            sizes: Sizes {
                mdps: 9,
                flat_tables: 9,
                target_mdps: 3,
                loss_rows: 2_000,
                gradient_instances: 6,
                expert_episodes: 2,
            },
            fault: None,
        }
    }

    #[test]
    fn clean_build_passes_every_property() {
        let r = run_suite(Suite::All, &small(1));
        for p in &r.properties {
            assert!(p.passed(), "{p}");
        }
        assert!(r.properties.len() >= 8);
    }

    #[test]
    fn injected_slm_sign_error_is_caught() {
        let mut o = small(2);
        o.fault = Some(Fault::SlmGradientSign);
        let r = run_suite(Suite::Gradients, &o);
        assert!(!r.passed());
        let p = r.property("loss_gradients").unwrap();
        assert!(p.failures > 0);
        let c = p.counterexample.as_ref().unwrap();
        assert!(c.text.contains("slm"));
    }

    #[test]
    fn suite_names_parse() {
        for n in Suite::NAMES {
            n.parse::<Suite>().unwrap();
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
