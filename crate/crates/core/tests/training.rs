use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use asrse3::blockworld::{tasks, BlockWorld};
use asrse3::expert::generate;
use asrse3::qmodel::{save_checkpoint, QFunction, QModel, Representation};
use asrse3::training::{
    build_model, evaluate, evaluate_with, pretrain, Agent, Algorithm, ReplayBuffer, TrainConfig, Trainer,
};
use asrse3::TransitionRecord;

fn expert(task: &str, episodes: usize, seed: u64) -> Vec<TransitionRecord> {
    let cfg = tasks::builtin(task).unwrap();
    let (eps, report) = generate(&cfg, episodes, seed).unwrap();
    assert_eq!(report.rejected, 0);
    eps.into_iter().flat_map(|e| e.records).collect()
}

fn checkpoint_bytes(model: &QModel) -> Vec<u8> {
    let mut out = Vec::new();
    save_checkpoint(model, &mut out).unwrap();
    out
}

#[test]
fn behaviour_cloning_loss_decreases_on_a_small_fixture() {
    let records: Vec<_> = expert("2s", 5, 11).into_iter().take(10).collect();
    assert_eq!(records.len(), 10);
    for seed in 0..3 {
        let mut c = TrainConfig::desk(Algorithm::Bc);
        c.seed = seed;
        let cfg = tasks::builtin("2s").unwrap();
        let model = build_model(Representation::Cascade, &cfg, &c).unwrap();
        let mut agent = Agent::new(model, c).unwrap();
        let buf = ReplayBuffer::from_records(records.clone(), 100, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = pretrain(&mut agent, &buf, 100, &mut rng).unwrap();
        assert!(stats.iter().all(|s| s.td_loss == 0.0 && s.batch == 10));
        for w in stats.windows(2) {
            assert!(w[1].imitation_loss < w[0].imitation_loss, "seed {seed}: {w:?}");
        }
    }
}

#[test]
fn tabular_agent_reproduces_a_single_expert_episode() {
    let cfg = tasks::builtin("2s").unwrap();
    let (eps, _) = generate(&cfg, 1, 5).unwrap();
    let ep = &eps[0];
    let mut c = TrainConfig::for_algorithm(Algorithm::Sdqfd);
    c.tabular_lr = 0.5;
    let model = build_model(Representation::Tabular, &cfg, &c).unwrap();
    let mut agent = Agent::new(model, c).unwrap();
    let buf = ReplayBuffer::from_records(ep.records.clone(), 100, true);
    pretrain(&mut agent, &buf, 300, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();

    let mut env = BlockWorld::new(cfg).unwrap();
    let mut obs = env.reset_to(ep.start.clone(), 0).unwrap();
    for (_, expected) in &ep.actions {
        let a = agent.act(&obs, &env.masks()).unwrap();
        assert_eq!(&a, expected);
        let out = env.step(&a).unwrap();
        obs = out.observation;
    }
    assert!(env.goal_reached());
}

#[test]
fn zero_imitation_weights_match_dqn_updates_bit_for_bit() {
    let cfg = tasks::builtin("h2").unwrap();
    let records = expert("h2", 8, 2);
    let batch: Vec<&TransitionRecord> = records.iter().take(16).collect();
    let mut reference: Option<Vec<u8>> = None;
    for algo in [Algorithm::Dqn, Algorithm::Sdqfd, Algorithm::Dqfd, Algorithm::Adet] {
        let mut c = TrainConfig::desk(algo);
        c.margin_weight = 0.0;
        c.ce_weight = 0.0;
        c.hidden = vec![6];
        let model = build_model(Representation::Cascade, &cfg, &c).unwrap();
        let mut agent = Agent::new(model, c).unwrap();
        for _ in 0..5 {
            agent.update(&batch).unwrap();
        }
        let bytes = checkpoint_bytes(agent.model());
        match &reference {
            None => reference = Some(bytes),
            Some(r) => assert!(r == &bytes, "{algo} diverged from dqn"),
        }
    }
}

#[test]
fn imitation_gradient_vanishes_on_self_play_records() {
    let cfg = tasks::builtin("h2").unwrap();
    for algo in [Algorithm::Sdqfd, Algorithm::Dqfd, Algorithm::Adet, Algorithm::Bc] {
        let mut c = TrainConfig::desk(algo);
        c.hidden = vec![6];
        let agent = Agent::new(build_model(Representation::Cascade, &cfg, &c).unwrap(), c).unwrap();
        for mut r in expert("h2", 3, 9) {
            let with = agent.record_grad(&r, 1.0).unwrap();
            assert!(with.imitation_loss >= 0.0);
            r.expert = false;
            let g = agent.record_grad(&r, 1.0).unwrap();
            assert_eq!(g.imitation_loss, 0.0);
            assert!(g.levels.iter().all(|l| l.imitation.is_none()));
        }
    }
}

fn short_run(seed: u64) -> (String, Vec<u8>) {
    let cfg = tasks::builtin("2s").unwrap();
    let mut c = TrainConfig::desk(Algorithm::Sdqfd);
    c.seed = seed;
    c.hidden = vec![8];
    c.pretrain_steps = 20;
    c.self_play_episodes = 15;
    c.window = 5;
    let mut t = Trainer::new(&cfg, c, Representation::Cascade, Some(expert("2s", 10, seed))).unwrap();
    let mut saved = Vec::new();
    let summary = t.run(&mut |_, _| Ok(())).unwrap();
    assert_eq!(summary.episodes, 15);
    assert_eq!(summary.pretrain_steps, 20);
    saved.extend(checkpoint_bytes(t.agent.model()));
    (t.log.to_csv(), saved)
}

#[test]
fn runs_are_reproducible() {
    let (a, ma) = short_run(4);
    let (b, mb) = short_run(4);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_eq!(a.lines().count(), 16);
}

#[test]
fn checkpoints_fire_on_schedule() {
    let cfg = tasks::builtin("2s").unwrap();
    let mut c = TrainConfig::for_algorithm(Algorithm::Dqn);
    c.self_play_episodes = 7;
    c.checkpoint_every = Some(3);
    let mut t = Trainer::new(&cfg, c, Representation::Tabular, None).unwrap();
    let mut seen = Vec::new();
    t.run(&mut |ep, _| {
        seen.push(ep);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![3, 6]);
}

#[test]
fn early_stop_needs_a_full_window() {
    let cfg = tasks::builtin("2s").unwrap();
    let mut c = TrainConfig::desk(Algorithm::Sdqfd);
    c.hidden = vec![8];
    c.pretrain_steps = 300;
    c.self_play_episodes = 100;
    c.window = 10;
    c.early_stop = Some(0.9);
    let mut t = Trainer::new(&cfg, c, Representation::Cascade, Some(expert("2s", 30, 1))).unwrap();
    let s = t.run(&mut |_, _| Ok(())).unwrap();
    assert!(s.early_stopped);
    assert!(s.episodes >= 10 && s.episodes < 100);
    assert!(s.final_moving_success >= 0.9);
}

#[test]
fn scripted_agent_solves_two_stack_and_random_agent_is_reported() {
    let cfg = tasks::builtin("2s").unwrap();
    let scripted = |w: &BlockWorld, _: &_, _: &mut ChaCha8Rng| {
        let masks = w.masks();
        let hm = w.heightmap();
        let layout = w.layout();
        // picking and stacking both target a lone cube of height one
        let want = 1;
        let t = masks
            .feasible_tuples()
            .into_iter()
            .find(|t| {
                let (x, y) = layout.xy(t[0]);
                hm.get(x, y) == want
            })
            .expect("a cube to pick or stack on");
        Ok(t)
    };
    let r = evaluate_with(&cfg, 50, 3, scripted).unwrap();
    assert_eq!(r.success_rate, 1.0);
    assert_eq!(r.mean_length, 2.0);

    let four = tasks::builtin("4s").unwrap();
    let random =
        |w: &BlockWorld, _: &_, rng: &mut ChaCha8Rng| Ok(w.masks().feasible_tuples().choose(rng).unwrap().clone());
    let a = evaluate_with(&four, 100, 8, random).unwrap();
    let b = evaluate_with(&four, 100, 8, random).unwrap();
    assert_eq!(a, b);
    println!("random agent on 4s: success rate {:.3}", a.success_rate);
}

#[test]
fn evaluation_of_a_model_is_deterministic() {
    let cfg = tasks::builtin("h2").unwrap();
    let mut c = TrainConfig::desk(Algorithm::Sdqfd);
    c.hidden = vec![6];
    let model = build_model(Representation::Cascade, &cfg, &c).unwrap();
    assert_eq!(model.levels(), 2);
    let a = evaluate(&model, &cfg, 10, 1).unwrap();
    let b = evaluate(&model, &cfg, 10, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn flat_tables_respect_the_enumeration_cap() {
    let cfg = tasks::builtin("2s-xytz").unwrap();
    let c = TrainConfig::default();
    assert!(build_model(Representation::FlatTabular, &cfg, &c).is_ok());
    let mut big = cfg.clone();
    big.grid_w = 800;
    big.grid_h = 800;
    assert!(build_model(Representation::FlatTabular, &big, &c).is_err());
}
