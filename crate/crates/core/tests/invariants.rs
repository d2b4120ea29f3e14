//! Property tests for the structural invariants of each module.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

use asrse3::argmax_masked;
use asrse3::blockworld::{tasks, BlockState, BlockWorld, Gripper};
use asrse3::losses::{ce_loss, lm_loss, masked_row_loss, slm_loss, violation_set, MarginFn};
use asrse3::mdp::fixture::{from_fixture, to_fixture};
use asrse3::mdp::random::{random_mdp, RandomMdpSpec};
use asrse3::mdp::{augment, value_iteration, ActionSpace, AugmentedState, SolverOptions};
use asrse3::qmodel::{load_checkpoint, save_checkpoint, OptimizerConfig, ParamCascade, ParamConfig, QModel};
use asrse3::training::ReplayBuffer;
use asrse3::TransitionRecord;

fn voxel_count(state: &BlockState) -> usize {
    let mut seen = HashSet::new();
    for b in state.placed() {
        let z0 = b.pose.unwrap().z;
        for (x, y) in b.cells() {
            for z in z0..b.top() {
                seen.insert((x, y, z));
            }
        }
    }
    seen.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_play_preserves_world_invariants(task in 0usize..6, seed in any::<u64>()) {
        let cfg = tasks::builtin(tasks::BUILTIN_TASKS[task]).unwrap();
        let (w, h) = (cfg.grid_w, cfg.grid_h);
        let mut env = BlockWorld::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        env.reset(seed).unwrap();
        let total = env.state().total_volume();
        loop {
            let masks = env.masks();
            let tuples = masks.feasible_tuples();
            prop_assert!(!tuples.is_empty());
            let t = tuples.choose(&mut rng).unwrap().clone();
            let out = env.step(&t).unwrap();
            let s = env.state();
            prop_assert_eq!(s.audit(w, h), Ok(()));
            prop_assert_eq!(voxel_count(s) + s.held_volume(), total);
            prop_assert!(out.reward == 0.0 || out.reward == 1.0);
            prop_assert_eq!(out.reward == 1.0, env.goal_reached() && s.holding.is_none());
            if out.reward == 1.0 {
                prop_assert!(out.done);
            }
            let expected = if s.holding.is_some() { Gripper::Holding } else { Gripper::Open };
            prop_assert_eq!(out.observation.gripper, expected);
            if out.done {
                break;
            }
        }
    }

    #[test]
    fn replay_buffer_keeps_the_newest_records(cap in 1usize..20, n in 0usize..60) {
        let mut env = BlockWorld::new(tasks::builtin("2s").unwrap()).unwrap();
        let obs = env.reset(0).unwrap();
        let mut b = ReplayBuffer::new(cap, false);
        for i in 0..n {
            b.push(TransitionRecord {
                obs: obs.clone(),
                masks: env.masks(),
                action: vec![i],
                reward: 0.0,
                next_obs: None,
                next_masks: None,
                done: true,
                expert: true,
            });
            prop_assert!(b.len() <= cap);
        }
        let kept: Vec<usize> = b.iter().map(|r| r.action[0]).collect();
        let want: Vec<usize> = (n.saturating_sub(cap)..n).collect();
        prop_assert_eq!(kept, want);
        prop_assert!(b.iter().all(|r| !r.expert));
    }

    #[test]
    fn augmented_values_match_the_original(seed in any::<u64>(), k in 1usize..4, states in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=3)).collect();
        let spec = RandomMdpSpec { num_states: states, max_outcomes: 2, done_prob: 0.1, infeasible_prob: 0.3, ..RandomMdpSpec::default() };
        let mdp = random_mdp(&mut rng, &dims, spec).unwrap();
        let orig = value_iteration(&mdp, SolverOptions::default()).unwrap();
        let aug = augment(mdp.clone());
        let sol = value_iteration(&aug, SolverOptions::default()).unwrap();
        for s in 0..states {
            let v = sol.values[aug.index_of(&AugmentedState::base(s))];
            prop_assert!((v - orig.values[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn fixtures_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = RandomMdpSpec { num_states: 4, max_outcomes: 3, done_prob: 0.2, infeasible_prob: 0.2, ..RandomMdpSpec::default() };
        let mdp = random_mdp(&mut rng, &[2, 3], spec).unwrap();
        let text = to_fixture(&mdp);
        let back = from_fixture(&text).unwrap();
        prop_assert_eq!(to_fixture(&back), text);
    }

    #[test]
    fn joint_indices_round_trip(dims in prop::collection::vec(1usize..5, 1..5), pick in any::<u64>()) {
        let space = ActionSpace::new(dims.clone()).unwrap();
        let j = (pick % space.size() as u64) as usize;
        let a = space.decode(j);
        prop_assert!(a.iter().zip(&dims).all(|(x, d)| x < d));
        prop_assert_eq!(space.encode(&a), j);
    }

    #[test]
    fn argmax_prefers_the_lowest_maximal_index(values in prop::collection::vec(-3i32..3, 1..10)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let first = v.iter().position(|&x| x == best).unwrap();
        prop_assert_eq!(argmax_masked(&v, None), Some(first));
    }

    #[test]
    fn margin_loss_identities(row in prop::collection::vec(-1.0f64..1.0, 1..8), e in any::<prop::sample::Index>(), shift in -5.0f64..5.0) {
        let expert = e.index(row.len());
        let l = MarginFn::new(0.1);
        let r = slm_loss(&row, expert, l).unwrap();
        prop_assert!(r.loss >= 0.0);
        prop_assert_eq!(r.loss == 0.0, violation_set(&row, expert, l).is_empty());
        prop_assert!(lm_loss(&row, expert, l).unwrap().loss >= 0.0);
        let shifted: Vec<f64> = row.iter().map(|q| q + shift).collect();
        prop_assert!((slm_loss(&shifted, expert, l).unwrap().loss - r.loss).abs() < 1e-9);
        prop_assert!((lm_loss(&shifted, expert, l).unwrap().loss - lm_loss(&row, expert, l).unwrap().loss).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_falls_as_the_expert_rises(row in prop::collection::vec(-1.0f64..1.0, 2..8), e in any::<prop::sample::Index>(), bump in 0.01f64..1.0) {
        let expert = e.index(row.len());
        let before = ce_loss(&row, expert, 10.0).unwrap().loss;
        let mut up = row.clone();
        up[expert] += bump;
        prop_assert!(ce_loss(&up, expert, 10.0).unwrap().loss < before);
    }

    #[test]
    fn masked_entries_get_no_gradient(row in prop::collection::vec(-1.0f64..1.0, 2..8), mask_bits in any::<u8>(), e in any::<prop::sample::Index>()) {
        let expert = e.index(row.len());
        let mask: Vec<bool> = (0..row.len()).map(|i| i == expert || mask_bits & (1 << (i % 8)) != 0).collect();
        let r = masked_row_loss(&row, Some(&mask), expert, |q, a| slm_loss(q, a, MarginFn::new(0.1))).unwrap();
        for (i, g) in r.grad.iter().enumerate() {
            if !mask[i] {
                prop_assert_eq!(*g, 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn heads_only_receive_their_own_gradient(seed in any::<u64>(), task in 0usize..3) {
        let name = ["2s", "h2", "2s-xytz"][task];
        let mut env = BlockWorld::new(tasks::builtin(name).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = env.reset(seed).unwrap();
        if rng.gen_bool(0.5) {
            let t = env.masks().feasible_tuples().choose(&mut rng).unwrap().clone();
            obs = env.step(&t).unwrap().observation;
        }
        let model = ParamCascade::new(ParamConfig {
            layout: env.layout(),
            crop: 3,
            in_hand_channels: env.crop().channels(),
            hidden: vec![4],
            height_scale: 2.0,
            seed,
            optimizer: OptimizerConfig::default(),
        });
        let levels = env.layout().levels();
        let level = rng.gen_range(0..levels);
        let tuple = env.masks().feasible_tuples().choose(&mut rng).unwrap().clone();
        let prefix = &tuple[..level];
        let width = asrse3::qmodel::QFunction::dims(&model)[level];
        let row: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut grads = vec![0.0; model.params().len()];
        model.backward_with(model.params(), &obs, prefix, &row, &mut grads);
        let idle = 1 - obs.gripper.bit();
        for l in 0..levels {
            prop_assert!(grads[model.head_range(l, idle)].iter().all(|&g| g == 0.0));
            if l != level {
                prop_assert!(grads[model.head_range(l, obs.gripper.bit())].iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>()) {
        let env = BlockWorld::new(tasks::builtin("h2").unwrap()).unwrap();
        let mut m = ParamCascade::new(ParamConfig {
            layout: env.layout(),
            crop: 3,
            in_hand_channels: env.crop().channels(),
            hidden: vec![3],
            height_scale: 2.0,
            seed,
            optimizer: OptimizerConfig::default(),
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = m.params().iter().map(|_| rng.gen::<f64>() * 10f64.powi(rng.gen_range(-300..300))).collect();
        m.set_params(p.clone());
        let mut bytes = Vec::new();
        save_checkpoint(&QModel::Cascade(m), &mut bytes).unwrap();
        let QModel::Cascade(back) = load_checkpoint(&bytes[..]).unwrap() else { panic!("kind") };
        prop_assert_eq!(back.params(), &p[..]);
    }
}
