//! The concurrent reward/policy learning loop.
//!
//! Each episode rolls out the stochastic policy, scores it with the current
//! learned reward, and takes one actor and one critic step. The trajectory
//! goes into a bounded sample inventory. Whenever the episode number reaches
//! the next element of the Fibonacci schedule `[0, 1, 1, 2, 3, 5, …]`, the
//! policy is frozen as θ⁺ and the reward model gets a block of `K` updates,
//! each pairing a fresh θ⁺ rollout with a demonstration from the same
//! initial state. ρ decays by η after every block.
//!
//! The inventory keeps whole state sequences rather than scalar returns: the
//! reward gradient needs `∇φ g(s)` at the current φ, which a stored scalar
//! cannot supply.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use thiserror::Error;

use crate::actor_critic::{
    advantage_from_rewards, critic_gradient, policy_gradient, returns_to_go, ActMode, CriticModel,
    PolicyError, PolicyModel,
};
use crate::env::{reset, reset_anywhere, rollout, EnvError, EnvId, Trajectory};
use crate::experts::{Demonstrator, ExpertError};
use crate::net::{Direction, NetError};
use crate::optim::{Optimizer, OptimizerKind};
use crate::reward::{DiscountSet, ReturnTerm, RewardError, RewardModel};
use crate::rng::{self, streams, SimRng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("demonstrator failed: {0}")]
    Expert(#[from] ExpertError),
    #[error("sample inventory is empty")]
    EmptyInventory,
}

/// Training aborted; carries the log up to the failure.
#[derive(Debug, Error)]
#[error("training stopped at episode {}: {error}", log.records.len() + 1)]
pub struct TrainFailure {
    #[source]
    pub error: TrainError,
    pub log: TrainLog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// Moving average must reach at least the threshold.
    AtLeast,
    /// Moving average must fall to at most the threshold.
    AtMost,
}

/// Early stop on the moving average of episode lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct StopCondition {
    pub window: usize,
    pub threshold: f64,
    pub rule: StopRule,
}

impl StopCondition {
    pub fn for_env(env: EnvId) -> Self {
        match env {
            EnvId::CartPole => StopCondition {
                window: 50,
                threshold: 995.0,
                rule: StopRule::AtLeast,
            },
            EnvId::MountainCarDiscrete => StopCondition {
                window: 50,
                threshold: 140.0,
                rule: StopRule::AtMost,
            },
            EnvId::MountainCarContinuous => StopCondition {
                window: 50,
                threshold: 300.0,
                rule: StopRule::AtMost,
            },
        }
    }

    pub fn holds(&self, log: &TrainLog) -> bool {
        if self.window == 0 || log.records.len() < self.window {
            return false;
        }
        let recent = &log.records[log.records.len() - self.window..];
        let mean = recent.iter().map(|r| r.steps as f64).sum::<f64>() / self.window as f64;
        match self.rule {
            StopRule::AtLeast => mean >= self.threshold,
            StopRule::AtMost => mean <= self.threshold,
        }
    }
}

/// Hyperparameters of the concurrent learning loop.
#[derive(Clone, Debug, PartialEq)]
pub struct RpclConfig {
    /// Margin weight ρ ∈ [0, 1).
    pub rho: f64,
    /// Multiplicative decay η ∈ (0, 1] applied to ρ after each reward block.
    pub eta: f64,
    /// Discount factor of the policy-optimisation return.
    pub gamma: f64,
    /// Discount set Γ of the stereo utility.
    pub discount_set: DiscountSet,
    /// Episodes before the stop condition is consulted (e).
    pub min_episodes: usize,
    /// Reward updates per block (K).
    pub phi_updates_per_block: usize,
    /// Episode budget (E).
    pub max_episodes: usize,
    /// ε₁.
    pub reward_lr: f64,
    /// ε₂.
    pub policy_lr: f64,
    pub critic_lr: f64,
    /// Inventory samples per reward update (n).
    pub sample_count: usize,
    /// Inventory capacity (N).
    pub inventory_capacity: usize,
    pub policy_hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub seed: u64,
    pub stop: StopCondition,
    pub return_term: ReturnTerm,
    pub normalize_advantages: bool,
    pub reward_weight_decay: f64,
    /// Update rule for actor and critic.
    pub optimizer: OptimizerKind,
    /// Gradient-norm clip for actor and critic; 0 disables.
    pub max_grad_norm: f64,
    /// Gradient-norm clip for reward updates; 0 disables.
    pub reward_max_grad_norm: f64,
}

impl RpclConfig {
    /// Hyperparameters reported for the CartPole and MountainCar runs.
    pub fn defaults_for(env: EnvId) -> Self {
        let (policy_hidden, reward_hidden) = match env {
            EnvId::CartPole => (vec![32], vec![32]),
            EnvId::MountainCarDiscrete | EnvId::MountainCarContinuous => (vec![128], vec![32]),
        };
        RpclConfig {
            rho: 0.99,
            eta: 0.99,
            gamma: 0.995,
            discount_set: DiscountSet::new(vec![0.9, 0.995]).expect("valid set"),
            min_episodes: 200,
            phi_updates_per_block: 1,
            max_episodes: 5000,
            reward_lr: 0.1,
            policy_lr: 0.01,
            critic_lr: 0.001,
            sample_count: 1,
            inventory_capacity: 1000,
            critic_hidden: policy_hidden.clone(),
            policy_hidden,
            reward_hidden,
            seed: 0,
            stop: StopCondition::for_env(env),
            return_term: ReturnTerm::Discounted,
            normalize_advantages: false,
            reward_weight_decay: 0.0,
            optimizer: OptimizerKind::Sgd,
            max_grad_norm: 0.0,
            reward_max_grad_norm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Config(m));
        if !(0.0..1.0).contains(&self.rho) {
            return fail(format!("rho = {} must lie in [0, 1)", self.rho));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return fail(format!("eta = {} must lie in (0, 1]", self.eta));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma = {} must lie in (0, 1]", self.gamma));
        }
        if self.sample_count == 0 || self.sample_count >= self.inventory_capacity {
            return fail(format!(
                "sample_count = {} must satisfy 1 <= n < N = {}",
                self.sample_count, self.inventory_capacity
            ));
        }
        if self.min_episodes > self.max_episodes {
            return fail(format!(
                "min_episodes = {} exceeds max_episodes = {}",
                self.min_episodes, self.max_episodes
            ));
        }
        for (name, v) in [
            ("reward_lr", self.reward_lr),
            ("policy_lr", self.policy_lr),
            ("critic_lr", self.critic_lr),
            ("reward_weight_decay", self.reward_weight_decay),
            ("max_grad_norm", self.max_grad_norm),
            ("reward_max_grad_norm", self.reward_max_grad_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        for (name, h) in [
            ("policy_hidden", &self.policy_hidden),
            ("reward_hidden", &self.reward_hidden),
            ("critic_hidden", &self.critic_hidden),
        ] {
            if h.contains(&0) {
                return fail(format!("{name} contains a zero-width layer"));
            }
        }
        Ok(())
    }
}

/// Ring buffer of recent learner trajectories; the oldest is overwritten
/// once `capacity` is reached.
#[derive(Clone, Debug)]
pub struct SampleInventory {
    items: VecDeque<Trajectory>,
    capacity: usize,
}

impl SampleInventory {
    pub fn new(capacity: usize) -> Self {
        SampleInventory {
            items: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
        }
    }

    pub fn push(&mut self, traj: Trajectory) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(traj);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter()
    }

    /// `n` draws, uniform and with replacement.
    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Result<Vec<&Trajectory>, TrainError> {
        if self.items.is_empty() {
            return Err(TrainError::EmptyInventory);
        }
        Ok((0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect())
    }
}

/// Episode thresholds `[0, 1, 1, 2, 3, 5, …]` with a cursor. An episode
/// triggers a reward block when it is at least the element under the cursor;
/// the caller then advances the cursor by one.
#[derive(Clone, Debug, PartialEq)]
pub struct FibSchedule {
    seq: Vec<u64>,
    index: usize,
}

impl FibSchedule {
    /// Sequence extended until its last element is at least `max_episode`.
    pub fn new(max_episode: u64) -> Self {
        let mut seq = vec![0u64, 1];
        while *seq.last().expect("nonempty") < max_episode {
            let n = seq.len();
            seq.push(seq[n - 1] + seq[n - 2]);
        }
        FibSchedule { seq, index: 0 }
    }

    pub fn from_sequence(seq: Vec<u64>) -> Self {
        FibSchedule { seq, index: 0 }
    }

    pub fn sequence(&self) -> &[u64] {
        &self.seq
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn advance(&mut self) {
        self.index += 1;
    }
}

/// True iff `episode >= F[index]`; false once the cursor runs off the end.
pub fn should_update_phi(episode: u64, sched: &FibSchedule) -> bool {
    sched.seq.get(sched.index).is_some_and(|&f| episode >= f)
}

/// Elements of the Fibonacci schedule not exceeding `max_episode`: the
/// demonstration budget per reward update.
pub fn fib_elements_up_to(max_episode: u64) -> usize {
    FibSchedule::new(max_episode)
        .sequence()
        .iter()
        .filter(|&&f| f <= max_episode)
        .count()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    /// `G_φ(τ, γ)` of the episode under the reward in force during it.
    pub learned_return: f64,
    /// ρ after this episode (decayed if a block ran).
    pub rho: f64,
    pub phi_updated: bool,
    pub demos_total: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpisodeRecord>,
}

pub const TRAIN_LOG_HEADER: &str = "episode,steps,learned_return,rho,phi_updated,demos_total";

impl EpisodeRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.learned_return,
            self.rho,
            u8::from(self.phi_updated),
            self.demos_total
        )
    }
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAIN_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.csv_line());
            out.push('\n');
        }
        out
    }

    pub fn phi_update_episodes(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.phi_updated)
            .map(|r| r.episode)
            .collect()
    }
}

impl fmt::Display for TrainLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_csv())
    }
}

/// Inputs of one reward-update block.
#[derive(Clone, Debug)]
pub struct BlockParams<'a> {
    pub env: EnvId,
    pub updates: usize,
    pub sample_count: usize,
    pub rho: f64,
    pub eta: f64,
    pub gamma: f64,
    pub discount_set: &'a DiscountSet,
    pub reward_lr: f64,
    pub return_term: ReturnTerm,
    pub weight_decay: f64,
    pub max_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockOutcome {
    pub rho_after: f64,
    pub demos_used: usize,
}

/// `K` reward updates against the frozen learner `frozen` (θ⁺), then
/// `ρ ← ρ·η`. On any failure the reward model is restored to its value at
/// entry.
pub fn phi_update_block(
    reward: &mut RewardModel,
    inventory: &SampleInventory,
    frozen: &PolicyModel,
    expert: &Demonstrator,
    params: &BlockParams<'_>,
    rng: &mut SimRng,
) -> Result<BlockOutcome, TrainError> {
    if inventory.is_empty() {
        return Err(TrainError::EmptyInventory);
    }
    let saved = reward.clone();
    let result = run_block(reward, inventory, frozen, expert, params, rng);
    if result.is_err() {
        *reward = saved;
    }
    result
}

fn run_block(
    reward: &mut RewardModel,
    inventory: &SampleInventory,
    frozen: &PolicyModel,
    expert: &Demonstrator,
    p: &BlockParams<'_>,
    rng: &mut SimRng,
) -> Result<BlockOutcome, TrainError> {
    let cap = p.env.episode_cap();
    let mut demos = 0;
    for _ in 0..p.updates {
        let sampled = inventory.sample(p.sample_count, rng)?;
        let s0 = reset(p.env, rng);
        let learner = rollout(p.env, frozen, rng, cap, Some(s0.clone()))?;
        let demo = expert.demonstrate(p.env, &s0, cap, rng)?;
        demos += 1;
        let mut grad = reward.phi_gradient(
            &sampled,
            &learner,
            &demo.trajectory,
            p.gamma,
            p.discount_set,
            p.rho,
            p.return_term,
        )?;
        if p.weight_decay > 0.0 {
            let params = reward.net().params().to_vec();
            for (g, w) in grad.0.iter_mut().zip(params) {
                *g += p.weight_decay * w;
            }
        }
        Optimizer::new(OptimizerKind::Sgd, p.max_grad_norm).step(
            reward.net_mut(),
            &grad,
            p.reward_lr,
            Direction::Descent,
        )?;
    }
    Ok(BlockOutcome {
        rho_after: p.rho * p.eta,
        demos_used: demos,
    })
}

/// Actor-critic hyperparameters shared by the learned-reward loop and the
/// environment-reward baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct AcSettings {
    pub gamma: f64,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub normalize_advantages: bool,
    pub optimizer: OptimizerKind,
    pub max_grad_norm: f64,
}

impl AcSettings {
    pub fn from_config(c: &RpclConfig) -> Self {
        AcSettings {
            gamma: c.gamma,
            policy_lr: c.policy_lr,
            critic_lr: c.critic_lr,
            normalize_advantages: c.normalize_advantages,
            optimizer: c.optimizer,
            max_grad_norm: c.max_grad_norm,
        }
    }
}

/// One actor step and one critic step per episode, with optimiser state.
#[derive(Clone, Debug)]
pub struct AcUpdater {
    settings: AcSettings,
    policy_opt: Optimizer,
    critic_opt: Optimizer,
}

impl AcUpdater {
    pub fn new(settings: AcSettings) -> Self {
        AcUpdater {
            policy_opt: Optimizer::new(settings.optimizer, settings.max_grad_norm),
            critic_opt: Optimizer::new(settings.optimizer, settings.max_grad_norm),
            settings,
        }
    }

    pub fn settings(&self) -> &AcSettings {
        &self.settings
    }

    /// `state_rewards` holds one reward per state `s_0..s_T` of `traj`.
    pub fn update(
        &mut self,
        policy: &mut PolicyModel,
        critic: &mut CriticModel,
        traj: &Trajectory,
        state_rewards: &[f64],
    ) -> Result<(), TrainError> {
        let s = &self.settings;
        let mut adv = advantage_from_rewards(state_rewards, critic, traj, s.gamma)?;
        if s.normalize_advantages {
            adv.standardize();
        }
        let pg = policy_gradient(policy, traj, &adv)?;
        let targets = returns_to_go(state_rewards, s.gamma);
        let cg = critic_gradient(critic, traj, &targets)?;
        self.policy_opt
            .step(policy.net_mut(), &pg, s.policy_lr, Direction::Ascent)?;
        self.critic_opt
            .step(critic.net_mut(), &cg, s.critic_lr, Direction::Descent)?;
        Ok(())
    }
}

/// Models produced by training.
#[derive(Clone, Debug)]
pub struct Models {
    pub policy: PolicyModel,
    pub reward: RewardModel,
    pub critic: CriticModel,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub models: Models,
    pub log: TrainLog,
    pub final_rho: f64,
    pub demos_used: usize,
}

/// Stepwise driver of the learning loop.
pub struct Trainer<'a> {
    config: RpclConfig,
    env: EnvId,
    expert: &'a Demonstrator,
    models: Models,
    ac: AcUpdater,
    inventory: SampleInventory,
    schedule: FibSchedule,
    rho: f64,
    blocks_run: u64,
    demos_used: usize,
    log: TrainLog,
    finished: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: RpclConfig,
        env: EnvId,
        expert: &'a Demonstrator,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if !expert.supports(env) {
            return Err(TrainError::Expert(ExpertError::WrongEnv(env)));
        }
        let policy = PolicyModel::for_env(
            env,
            &config.policy_hidden,
            &mut rng::stream(config.seed, streams::POLICY_INIT),
        )?;
        let critic = CriticModel::for_env(
            env,
            &config.critic_hidden,
            &mut rng::stream(config.seed, streams::CRITIC_INIT),
        )?;
        let reward = RewardModel::for_env(
            env,
            &config.reward_hidden,
            &mut rng::stream(config.seed, streams::REWARD_INIT),
        )?;
        Ok(Trainer {
            ac: AcUpdater::new(AcSettings::from_config(&config)),
            inventory: SampleInventory::new(config.inventory_capacity),
            schedule: FibSchedule::new(config.max_episodes as u64),
            rho: config.rho,
            blocks_run: 0,
            demos_used: 0,
            log: TrainLog::default(),
            finished: config.max_episodes == 0,
            models: Models {
                policy,
                reward,
                critic,
            },
            config,
            env,
            expert,
        })
    }

    pub fn models(&self) -> &Models {
        &self.models
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn demos_used(&self) -> usize {
        self.demos_used
    }

    pub fn inventory(&self) -> &SampleInventory {
        &self.inventory
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Runs the next episode. Returns `None` once the budget is spent or the
    /// stop condition fired.
    pub fn step_episode(&mut self) -> Result<Option<&EpisodeRecord>, TrainError> {
        if self.finished {
            return Ok(None);
        }
        let episode = self.log.records.len() + 1;
        if episode > self.config.max_episodes
            || (episode > self.config.min_episodes && self.config.stop.holds(&self.log))
        {
            self.finished = true;
            return Ok(None);
        }
        let cfg = &self.config;
        let env = self.env;
        let mut ep_rng = rng::stream(
            rng::derive_seed(cfg.seed, streams::EPISODES),
            episode as u64,
        );
        let traj = rollout(
            env,
            &self.models.policy,
            &mut ep_rng,
            env.episode_cap(),
            None,
        )?;

        // One reward evaluation per state serves the advantage, the critic
        // targets and the logged return.
        let state_rewards = self.models.reward.state_rewards(&traj)?;
        self.ac.update(
            &mut self.models.policy,
            &mut self.models.critic,
            &traj,
            &state_rewards,
        )?;

        let mut discount = 1.0;
        let mut learned_return = 0.0;
        for r in &state_rewards[1..] {
            learned_return += discount * r;
            discount *= cfg.gamma;
        }
        if !learned_return.is_finite() {
            return Err(TrainError::Reward(RewardError::Net(
                NetError::NonFiniteGradient { count: 1, len: 1 },
            )));
        }
        let steps = traj.len();
        self.inventory.push(traj);

        let mut phi_updated = false;
        if should_update_phi(episode as u64, &self.schedule) {
            self.schedule.advance();
            let frozen = self.models.policy.clone();
            let params = BlockParams {
                env,
                updates: cfg.phi_updates_per_block,
                sample_count: cfg.sample_count,
                rho: self.rho,
                eta: cfg.eta,
                gamma: cfg.gamma,
                discount_set: &cfg.discount_set,
                reward_lr: cfg.reward_lr,
                return_term: cfg.return_term,
                weight_decay: cfg.reward_weight_decay,
                max_grad_norm: cfg.reward_max_grad_norm,
            };
            let mut block_rng = rng::stream(
                rng::derive_seed(cfg.seed, streams::PHI_BLOCKS),
                self.blocks_run,
            );
            let outcome = phi_update_block(
                &mut self.models.reward,
                &self.inventory,
                &frozen,
                self.expert,
                &params,
                &mut block_rng,
            )?;
            self.blocks_run += 1;
            self.rho = outcome.rho_after;
            self.demos_used += outcome.demos_used;
            phi_updated = true;
        }

        self.log.records.push(EpisodeRecord {
            episode,
            steps,
            learned_return,
            rho: self.rho,
            phi_updated,
            demos_total: self.demos_used,
        });
        Ok(self.log.records.last())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            models: self.models,
            log: self.log,
            final_rho: self.rho,
            demos_used: self.demos_used,
        }
    }
}

/// Runs the full loop. On failure the error carries the log so far.
pub fn train(
    config: &RpclConfig,
    env: EnvId,
    expert: &Demonstrator,
) -> Result<TrainOutcome, TrainFailure> {
    train_observed(config, env, expert, |_, _| {})
}

/// As [`train`], calling `observer` after every completed episode.
pub fn train_observed<F>(
    config: &RpclConfig,
    env: EnvId,
    expert: &Demonstrator,
    mut observer: F,
) -> Result<TrainOutcome, TrainFailure>
where
    F: FnMut(&EpisodeRecord, &Models),
{
    let mut trainer = Trainer::new(config.clone(), env, expert).map_err(|error| TrainFailure {
        error,
        log: TrainLog::default(),
    })?;
    loop {
        match trainer.step_episode() {
            Ok(Some(_)) => {
                let rec = trainer.log.records.last().expect("just pushed");
                observer(rec, &trainer.models);
            }
            Ok(None) => break,
            Err(error) => {
                return Err(TrainFailure {
                    error,
                    log: trainer.log.clone(),
                })
            }
        }
    }
    Ok(trainer.finish())
}

/// Hyperparameters of actor-critic trained directly on the environment
/// reward.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvAcConfig {
    pub ac: AcSettings,
    pub policy_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub max_episodes: usize,
    pub min_episodes: usize,
    pub seed: u64,
    pub stop: StopCondition,
    /// Start training episodes anywhere in the state space.
    pub exploring_starts: bool,
}

impl EnvAcConfig {
    /// Same architecture and step sizes as the learned-reward run.
    pub fn from_rpcl(c: &RpclConfig) -> Self {
        EnvAcConfig {
            ac: AcSettings::from_config(c),
            policy_hidden: c.policy_hidden.clone(),
            critic_hidden: c.critic_hidden.clone(),
            max_episodes: c.max_episodes,
            min_episodes: c.min_episodes,
            seed: c.seed,
            stop: c.stop.clone(),
            exploring_starts: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnvAcOutcome {
    pub policy: PolicyModel,
    pub critic: CriticModel,
    pub log: TrainLog,
}

/// Actor-critic on the environment's own reward: the transition reward
/// `r_t` of step `t` is credited to the state it leads to, `s_{t+1}`.
pub fn train_env_reward_ac<F>(
    env: EnvId,
    cfg: &EnvAcConfig,
    mut observer: F,
) -> Result<EnvAcOutcome, TrainFailure>
where
    F: FnMut(&EpisodeRecord, &PolicyModel),
{
    let fail = |error: TrainError, log: &TrainLog| TrainFailure {
        error,
        log: log.clone(),
    };
    let mut log = TrainLog::default();
    let mut policy = PolicyModel::for_env(
        env,
        &cfg.policy_hidden,
        &mut rng::stream(cfg.seed, streams::POLICY_INIT),
    )
    .map_err(|e| fail(e.into(), &log))?;
    let mut critic = CriticModel::for_env(
        env,
        &cfg.critic_hidden,
        &mut rng::stream(cfg.seed, streams::CRITIC_INIT),
    )
    .map_err(|e| fail(e.into(), &log))?;
    let mut ac = AcUpdater::new(cfg.ac.clone());
    for episode in 1..=cfg.max_episodes {
        if episode > cfg.min_episodes && cfg.stop.holds(&log) {
            break;
        }
        let mut ep_rng = rng::stream(
            rng::derive_seed(cfg.seed, streams::EPISODES),
            episode as u64,
        );
        let start = cfg
            .exploring_starts
            .then(|| reset_anywhere(env, &mut ep_rng));
        let traj = rollout(env, &policy, &mut ep_rng, env.episode_cap(), start)
            .map_err(|e| fail(e.into(), &log))?;
        let mut state_rewards = Vec::with_capacity(traj.states.len());
        state_rewards.push(0.0);
        state_rewards.extend_from_slice(traj.env_rewards().reveal());
        ac.update(&mut policy, &mut critic, &traj, &state_rewards)
            .map_err(|e| fail(e, &log))?;
        let mut discount = 1.0;
        let mut ret = 0.0;
        for r in &state_rewards[1..] {
            ret += discount * r;
            discount *= cfg.ac.gamma;
        }
        log.records.push(EpisodeRecord {
            episode,
            steps: traj.len(),
            learned_return: ret,
            rho: 0.0,
            phi_updated: false,
            demos_total: 0,
        });
        observer(log.records.last().expect("just pushed"), &policy);
    }
    Ok(EnvAcOutcome {
        policy,
        critic,
        log,
    })
}

/// Settings for pretraining a demonstrator on the environment reward.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertPretrainConfig {
    pub ac: EnvAcConfig,
    /// Candidate checkpoints are scored every this many episodes.
    pub eval_every: usize,
    pub eval_trials: usize,
    /// Mean episode length the chosen checkpoint should come closest to.
    pub target_steps: f64,
    pub mode: ActMode,
}

impl ExpertPretrainConfig {
    /// Exploring starts with adaptive steps; the target is the demonstrator
    /// quality reported for the MountainCar tasks.
    pub fn defaults_for(env: EnvId) -> Self {
        let mut base = RpclConfig::defaults_for(env);
        base.optimizer = OptimizerKind::Adam;
        base.normalize_advantages = true;
        base.max_episodes = 8000;
        let mut ac = EnvAcConfig::from_rpcl(&base);
        ac.exploring_starts = true;
        ac.stop.window = 0;
        let target_steps = match env {
            EnvId::CartPole => 716.0,
            EnvId::MountainCarDiscrete => 253.0,
            EnvId::MountainCarContinuous => 417.0,
        };
        ExpertPretrainConfig {
            ac,
            eval_every: 250,
            eval_trials: 100,
            target_steps,
            mode: ActMode::Sample,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExpertPretrainOutcome {
    pub policy: PolicyModel,
    /// Episode at which the chosen checkpoint was taken.
    pub episode: usize,
    pub mean_steps: f64,
    /// `(episode, mean steps)` of every scored checkpoint.
    pub scores: Vec<(usize, f64)>,
}

/// Mean episode length of `policy` from standard starts.
pub fn mean_episode_steps(
    env: EnvId,
    policy: &PolicyModel,
    mode: ActMode,
    trials: usize,
    seed: u64,
) -> Result<f64, EnvError> {
    let ctl = policy.controller(mode);
    let mut total = 0usize;
    for trial in 0..trials {
        let mut r = rng::stream(seed, trial as u64);
        total += rollout(env, &ctl, &mut r, env.episode_cap(), None)?.len();
    }
    Ok(total as f64 / trials.max(1) as f64)
}

/// Trains actor-critic on the environment reward and keeps the checkpoint
/// whose mean episode length is closest to `target_steps`.
pub fn pretrain_expert(
    env: EnvId,
    cfg: &ExpertPretrainConfig,
) -> Result<ExpertPretrainOutcome, TrainFailure> {
    if cfg.eval_every == 0 || cfg.eval_trials == 0 {
        return Err(TrainFailure {
            error: TrainError::Config("eval_every and eval_trials must be positive".into()),
            log: TrainLog::default(),
        });
    }
    let eval_seed = rng::derive_seed(cfg.ac.seed, streams::EVAL);
    let mut best: Option<(f64, usize, PolicyModel)> = None;
    let mut scores = Vec::new();
    let mut eval_error = None;
    train_env_reward_ac(env, &cfg.ac, |rec, policy| {
        if rec.episode % cfg.eval_every != 0 || eval_error.is_some() {
            return;
        }
        match mean_episode_steps(env, policy, cfg.mode, cfg.eval_trials, eval_seed) {
            Ok(mean) => {
                scores.push((rec.episode, mean));
                let gap = (mean - cfg.target_steps).abs();
                if best.as_ref().is_none_or(|(g, _, _)| gap < *g) {
                    best = Some((gap, rec.episode, policy.clone()));
                }
            }
            Err(e) => eval_error = Some(e),
        }
    })?;
    if let Some(e) = eval_error {
        return Err(TrainFailure {
            error: e.into(),
            log: TrainLog::default(),
        });
    }
    let (_, episode, policy) = best.ok_or_else(|| TrainFailure {
        error: TrainError::Config("episode budget shorter than the evaluation interval".into()),
        log: TrainLog::default(),
    })?;
    let mean_steps = scores
        .iter()
        .find(|(e, _)| *e == episode)
        .map(|(_, m)| *m)
        .unwrap_or(f64::NAN);
    Ok(ExpertPretrainOutcome {
        policy,
        episode,
        mean_steps,
        scores,
    })
}
