use rpcl::actor_critic::{ActMode, PolicyModel};
use rpcl::env::{env_reward_reads_on_thread, reset, rollout, EnvId};
use rpcl::eval::{
    ablate_discount_sets, ablation_csv, ac_env_reward_train, action_agreement, behavior_cloning,
    default_axes, evaluate, paired_eval, reward_surface, trial_table, AblationOutcome, Axis,
    BcConfig, Contestant, EvalError, EvalSpec,
};
use rpcl::experts::{Demonstrator, LqrGain};
use rpcl::net::{Network, OutputActivation};
use rpcl::optim::OptimizerKind;
use rpcl::reward::{DiscountSet, RewardModel};
use rpcl::rng::rng_from_seed;
use rpcl::train::RpclConfig;

fn random_policy(env: EnvId, seed: u64) -> PolicyModel {
    PolicyModel::for_env(env, &[8], &mut rng_from_seed(seed)).unwrap()
}

fn lqr() -> Demonstrator {
    Demonstrator::Lqr(LqrGain::CARTPOLE)
}

#[test]
fn identical_contestants_get_identical_rows() {
    let p = random_policy(EnvId::CartPole, 1);
    let cs = [
        Contestant::policy("a", p.clone(), ActMode::Sample),
        Contestant::policy("b", p, ActMode::Sample),
    ];
    let pe = paired_eval(&cs, EnvId::CartPole, EvalSpec::new(40, 3)).unwrap();
    for pair in pe.trials.chunks(2) {
        assert_eq!(pair[0].initial_state, pair[1].initial_state);
        assert_eq!(pair[0].steps, pair[1].steps);
        assert_eq!(pair[0].env_score, pair[1].env_score);
    }
    assert_eq!(pe.stats[0].1, pe.stats[1].1);
}

#[test]
fn trials_share_initial_states_bit_for_bit() {
    let cs = [
        Contestant::policy("rand", random_policy(EnvId::CartPole, 2), ActMode::Greedy),
        Contestant::demonstrator("lqr", lqr()),
    ];
    let pe = paired_eval(&cs, EnvId::CartPole, EvalSpec::new(25, 9)).unwrap();
    assert_eq!(pe.trials.len(), 50);
    for pair in pe.trials.chunks(2) {
        assert_eq!(pair[0].trial, pair[1].trial);
        let a: Vec<u64> = pair[0].initial_state.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = pair[1].initial_state.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn single_trial_has_zero_spread() {
    let cs = [
        Contestant::demonstrator("lqr", lqr()),
        Contestant::policy("rand", random_policy(EnvId::CartPole, 4), ActMode::Sample),
    ];
    let pe = paired_eval(&cs, EnvId::CartPole, EvalSpec::new(1, 0)).unwrap();
    for (_, s) in &pe.stats {
        assert_eq!(s.trials, 1);
        assert_eq!(s.std_steps, 0.0);
        assert_eq!(s.std_env_score, 0.0);
    }
}

#[test]
fn paired_eval_preconditions() {
    let one = [Contestant::demonstrator("lqr", lqr())];
    assert!(matches!(
        paired_eval(&one, EnvId::CartPole, EvalSpec::new(3, 0)),
        Err(EvalError::TooFewContestants { .. })
    ));
    let two = [
        one[0].clone(),
        Contestant::policy("p", random_policy(EnvId::CartPole, 0), ActMode::Sample),
    ];
    assert!(matches!(
        paired_eval(&two, EnvId::CartPole, EvalSpec::new(0, 0)),
        Err(EvalError::NoTrials)
    ));
    let mixed = [
        Contestant::policy("cp", random_policy(EnvId::CartPole, 0), ActMode::Sample),
        Contestant::policy(
            "mc",
            random_policy(EnvId::MountainCarDiscrete, 0),
            ActMode::Sample,
        ),
    ];
    assert!(matches!(
        paired_eval(&mixed, EnvId::CartPole, EvalSpec::new(3, 0)),
        Err(EvalError::EnvMismatch(label, _)) if label == "mc"
    ));
    let recorded = [
        Contestant::demonstrator("rec", Demonstrator::Recorded(vec![])),
        one[0].clone(),
    ];
    assert!(matches!(
        paired_eval(&recorded, EnvId::CartPole, EvalSpec::new(3, 0)),
        Err(EvalError::CannotAct(_))
    ));
}

#[test]
fn worker_pool_matches_sequential_run() {
    let cs = [
        Contestant::policy(
            "p",
            random_policy(EnvId::MountainCarContinuous, 5),
            ActMode::Sample,
        ),
        Contestant::policy(
            "q",
            random_policy(EnvId::MountainCarContinuous, 6),
            ActMode::Sample,
        ),
    ];
    let seq = paired_eval(&cs, EnvId::MountainCarContinuous, EvalSpec::new(12, 1)).unwrap();
    let par = paired_eval(
        &cs,
        EnvId::MountainCarContinuous,
        EvalSpec {
            workers: 3,
            ..EvalSpec::new(12, 1)
        },
    )
    .unwrap();
    assert_eq!(seq, par);
    assert_eq!(seq.trials_csv(), par.trials_csv());
}

#[test]
fn csv_shapes() {
    let cs = [
        Contestant::demonstrator("lqr", lqr()),
        Contestant::policy("p", random_policy(EnvId::CartPole, 0), ActMode::Sample),
    ];
    let pe = paired_eval(&cs, EnvId::CartPole, EvalSpec::new(4, 0)).unwrap();
    let trials = pe.trials_csv();
    assert!(trials.starts_with("trial,policy,steps,env_score\n"));
    assert_eq!(trials.lines().count(), 1 + 8);
    let summary = pe.summary_csv();
    assert!(summary.starts_with(
        "policy,trials,mean_steps,std_steps,mean_env_score,std_env_score,completions\n"
    ));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn evaluation_reads_env_reward_through_the_counter() {
    let before = env_reward_reads_on_thread();
    evaluate(
        &Contestant::demonstrator("lqr", lqr()),
        EnvId::CartPole,
        EvalSpec::new(3, 0),
    )
    .unwrap();
    assert!(env_reward_reads_on_thread() > before);
}

#[test]
fn single_contestant_table_uses_paired_states() {
    let c = Contestant::demonstrator("lqr", lqr());
    let solo = trial_table(
        std::slice::from_ref(&c),
        EnvId::CartPole,
        EvalSpec::new(5, 2),
    )
    .unwrap();
    let pair = paired_eval(
        &[
            c,
            Contestant::policy("p", random_policy(EnvId::CartPole, 0), ActMode::Sample),
        ],
        EnvId::CartPole,
        EvalSpec::new(5, 2),
    )
    .unwrap();
    let paired_lqr: Vec<_> = pair
        .trials
        .iter()
        .filter(|r| r.policy == "lqr")
        .cloned()
        .collect();
    assert_eq!(solo.trials, paired_lqr);
}

#[test]
fn empty_set_list_gives_empty_table() {
    let cfg = RpclConfig::defaults_for(EnvId::CartPole);
    let rows = ablate_discount_sets(
        EnvId::CartPole,
        &[],
        &cfg,
        &lqr(),
        EvalSpec::new(5, 0),
        ActMode::Sample,
    );
    assert!(rows.is_empty());
    assert_eq!(ablation_csv(&rows).lines().count(), 1);
}

#[test]
fn ablation_reports_failures_as_rows() {
    // Too few episodes to learn anything on MountainCar: the run never meets
    // its stop condition and a random policy almost never reaches the goal.
    let mut cfg = RpclConfig::defaults_for(EnvId::MountainCarDiscrete);
    cfg.max_episodes = 2;
    cfg.min_episodes = 0;
    let expert = Demonstrator::Pretrained {
        policy: random_policy(EnvId::MountainCarDiscrete, 0),
        mode: ActMode::Sample,
    };
    let sets = vec![DiscountSet::new(vec![0.9]).unwrap()];
    let rows = ablate_discount_sets(
        EnvId::MountainCarDiscrete,
        &sets,
        &cfg,
        &expert,
        EvalSpec::new(5, 0),
        ActMode::Greedy,
    );
    assert_eq!(rows.len(), 1);
    if let AblationOutcome::Fail(why) = &rows[0].outcome {
        assert!(why.contains("0 of 100"), "{why}");
    }
    assert_eq!(rows[0].label(), "{0.9}");
    // a demonstrator that cannot serve the env is a failed row, not an error
    let rows = ablate_discount_sets(
        EnvId::MountainCarDiscrete,
        &sets,
        &cfg,
        &lqr(),
        EvalSpec::new(5, 0),
        ActMode::Sample,
    );
    assert!(matches!(rows[0].outcome, AblationOutcome::Fail(_)));
    assert!(ablation_csv(&rows).contains("Fail"));
}

#[test]
fn env_reward_baseline_with_zero_steps_keeps_init() {
    let mut cfg = RpclConfig::defaults_for(EnvId::CartPole);
    cfg.max_episodes = 5;
    cfg.min_episodes = 5;
    cfg.policy_lr = 0.0;
    cfg.critic_lr = 0.0;
    let init = PolicyModel::for_env(
        EnvId::CartPole,
        &cfg.policy_hidden,
        &mut rpcl::rng::stream(cfg.seed, rpcl::rng::streams::POLICY_INIT),
    )
    .unwrap();
    let p = ac_env_reward_train(EnvId::CartPole, &cfg).unwrap();
    assert_eq!(p, init);
    cfg.optimizer = OptimizerKind::Adam;
    assert_eq!(ac_env_reward_train(EnvId::CartPole, &cfg).unwrap(), init);
}

#[test]
fn env_reward_baseline_is_reproducible() {
    let mut cfg = RpclConfig::defaults_for(EnvId::CartPole);
    cfg.max_episodes = 30;
    cfg.min_episodes = 30;
    let a = ac_env_reward_train(EnvId::CartPole, &cfg).unwrap();
    let b = ac_env_reward_train(EnvId::CartPole, &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 1;
    assert_ne!(a, ac_env_reward_train(EnvId::CartPole, &cfg).unwrap());
}

fn lqr_demo(seed: u64) -> rpcl::experts::Demonstration {
    let env = EnvId::CartPole;
    lqr()
        .demonstrate(
            env,
            &reset(env, &mut rng_from_seed(seed)),
            1000,
            &mut rng_from_seed(seed + 1),
        )
        .unwrap()
}

#[test]
fn cloning_with_zero_epochs_returns_init() {
    let env = EnvId::CartPole;
    let cfg = BcConfig {
        epochs: 0,
        ..BcConfig::defaults_for(env)
    };
    let out = behavior_cloning(env, &[lqr_demo(0)], &cfg).unwrap();
    let init = PolicyModel::for_env(
        env,
        &cfg.hidden,
        &mut rpcl::rng::stream(cfg.seed, rpcl::rng::streams::POLICY_INIT),
    )
    .unwrap();
    assert_eq!(out.policy, init);
    assert_eq!(out.losses.len(), 1);
}

#[test]
fn cloning_loss_decreases_with_small_steps() {
    let env = EnvId::CartPole;
    let mut demo = lqr_demo(3);
    demo.trajectory.states.truncate(41);
    demo.trajectory.actions.as_mut().unwrap().truncate(40);
    let cfg = BcConfig {
        hidden: vec![8],
        epochs: 10,
        lr: 1e-3,
        batch_size: 0,
        optimizer: OptimizerKind::Sgd,
        seed: 2,
    };
    let out = behavior_cloning(env, &[demo], &cfg).unwrap();
    assert_eq!(out.losses.len(), 11);
    for w in out.losses.windows(2) {
        assert!(w[1] <= w[0], "{:?}", out.losses);
    }
}

#[test]
fn cloning_rejects_demos_without_actions() {
    let env = EnvId::CartPole;
    let demo = lqr_demo(0);
    let bare = rpcl::experts::Demonstration {
        trajectory: demo.trajectory.states_only(),
        source: "bare".into(),
    };
    let cfg = BcConfig::defaults_for(env);
    assert!(matches!(
        behavior_cloning(env, &[demo, bare], &cfg),
        Err(EvalError::MissingActions(1))
    ));
    assert!(matches!(
        behavior_cloning(env, &[], &cfg),
        Err(EvalError::NoDemos)
    ));
}

#[test]
fn cloning_continuous_actions() {
    let env = EnvId::MountainCarContinuous;
    let teacher = random_policy(env, 11);
    let demo = Demonstrator::Pretrained {
        policy: teacher,
        mode: ActMode::Greedy,
    }
    .demonstrate(
        env,
        &reset(env, &mut rng_from_seed(0)),
        200,
        &mut rng_from_seed(1),
    )
    .unwrap();
    let out = behavior_cloning(
        env,
        std::slice::from_ref(&demo),
        &BcConfig::defaults_for(env),
    )
    .unwrap();
    assert!(out.losses.last().unwrap() < &out.losses[0]);
    assert!(action_agreement(&out.policy, &demo).unwrap() > 0.5);
}

#[test]
fn zero_weight_reward_gives_zero_grid() {
    let env = EnvId::CartPole;
    let net = Network::zeros(&[4, 8, 1], OutputActivation::Identity).unwrap();
    let model = RewardModel::from_network(env, net).unwrap();
    let (x, y) = default_axes(env);
    let g = reward_surface(&model, env, x, y, &[0.0; 4], 7).unwrap();
    assert!(g.cells().all(|(_, _, v)| v == 0.0));
    assert_eq!(g.cells().count(), 49);
}

#[test]
fn resolution_two_is_two_by_two() {
    let env = EnvId::MountainCarDiscrete;
    let model = RewardModel::for_env(env, &[4], &mut rng_from_seed(0)).unwrap();
    let (x, y) = default_axes(env);
    let g = reward_surface(&model, env, x, y, &[0.0, 0.0], 2).unwrap();
    assert_eq!(g.values.len(), 2);
    assert!(g.values.iter().all(|r| r.len() == 2));
    assert_eq!(g.xs, vec![x.lo, x.hi]);
    assert_eq!(
        g.values[1][0],
        model.immediate_reward(&[x.hi, y.lo]).unwrap()
    );
    let csv = g.to_csv();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn surface_holds_other_dims_fixed() {
    let env = EnvId::CartPole;
    let model = RewardModel::for_env(env, &[4], &mut rng_from_seed(1)).unwrap();
    let (x, y) = default_axes(env);
    let fixed = [0.0, 0.3, 0.0, -0.2];
    let g = reward_surface(&model, env, x, y, &fixed, 3).unwrap();
    let expect = model.immediate_reward(&[x.lo, 0.3, y.hi, -0.2]).unwrap();
    assert_eq!(g.values[0][2], expect);
}

#[test]
fn surface_rejects_bad_axes() {
    let env = EnvId::MountainCarDiscrete;
    let model = RewardModel::for_env(env, &[4], &mut rng_from_seed(0)).unwrap();
    let a = Axis {
        dim: 0,
        lo: -1.0,
        hi: 1.0,
    };
    let b = Axis {
        dim: 2,
        lo: -1.0,
        hi: 1.0,
    };
    assert!(matches!(
        reward_surface(&model, env, a, a, &[0.0; 2], 3),
        Err(EvalError::Surface(_))
    ));
    assert!(matches!(
        reward_surface(&model, env, a, b, &[0.0; 2], 3),
        Err(EvalError::Surface(_))
    ));
    let c = Axis { dim: 1, ..a };
    assert!(matches!(
        reward_surface(&model, env, a, c, &[0.0; 2], 1),
        Err(EvalError::Surface(_))
    ));
    assert!(matches!(
        reward_surface(&model, env, a, c, &[0.0; 3], 3),
        Err(EvalError::Surface(_))
    ));
}

#[test]
fn greedy_rollout_matches_eval_steps() {
    let env = EnvId::CartPole;
    let c = Contestant::demonstrator("lqr", lqr());
    let pe = trial_table(std::slice::from_ref(&c), env, EvalSpec::new(3, 4)).unwrap();
    for r in &pe.trials {
        let t = rollout(
            env,
            &LqrGain::CARTPOLE,
            &mut rng_from_seed(0),
            1000,
            Some(r.initial_state.clone()),
        )
        .unwrap();
        assert_eq!(t.len(), r.steps);
    }
}
