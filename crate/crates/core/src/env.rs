//! Classic-control simulators: CartPole, MountainCar (discrete) and
//! MountainCar (continuous).
//!
//! Stepping is a pure function of `(state, action, step_index)`. The
//! environment's own reward is computed but sealed: training code only ever
//! sees states, and the reward can be read back solely through
//! [`HiddenReward::reveal`] / [`HiddenRewards::reveal`], each of which bumps a
//! global access counter ([`env_reward_reads`]).
//!
//! Physics follows the reference Gym definitions (CartPole with
//! semi-implicit Euler integration, MountainCar with the `cos(3x)` hill),
//! with two changes: every task is capped at 1000 steps, and the continuous
//! MountainCar goal sits at position 0.5 like the discrete one.

use std::cell::Cell;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::InputMap;
use crate::rng::SimRng;

/// Step cap shared by all three tasks.
pub const EPISODE_CAP: usize = 1000;

pub mod cartpole {
    pub const GRAVITY: f64 = 9.8;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
    pub const FORCE: f64 = 10.0;
    pub const DT: f64 = 0.02;
    pub const X_LIMIT: f64 = 2.4;
    /// 12 degrees.
    pub const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
    pub const INIT_BOUND: f64 = 0.05;
}

pub mod mountain_car {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.6;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL_POSITION: f64 = 0.5;
    pub const FORCE: f64 = 0.001;
    pub const GRAVITY: f64 = 0.0025;
    pub const POWER: f64 = 0.0015;
    pub const INIT_LOW: f64 = -0.6;
    pub const INIT_HIGH: f64 = -0.4;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("action {action:?} is not valid for {env}")]
    InvalidAction { env: EnvId, action: Action },
    #[error("state for {env} must have {expected} components, got {got}")]
    StateDim {
        env: EnvId,
        expected: usize,
        got: usize,
    },
    #[error("state contains a non-finite component")]
    NonFiniteState,
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("malformed trajectory: {0}")]
    MalformedTrajectory(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvId {
    CartPole,
    MountainCarDiscrete,
    MountainCarContinuous,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: f64, high: f64 },
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [
        EnvId::CartPole,
        EnvId::MountainCarDiscrete,
        EnvId::MountainCarContinuous,
    ];

    pub fn state_dim(self) -> usize {
        match self {
            EnvId::CartPole => 4,
            EnvId::MountainCarDiscrete | EnvId::MountainCarContinuous => 2,
        }
    }

    pub fn action_space(self) -> ActionSpace {
        match self {
            EnvId::CartPole => ActionSpace::Discrete(2),
            EnvId::MountainCarDiscrete => ActionSpace::Discrete(3),
            EnvId::MountainCarContinuous => ActionSpace::Continuous {
                low: -1.0,
                high: 1.0,
            },
        }
    }

    pub fn episode_cap(self) -> usize {
        EPISODE_CAP
    }

    /// Short lowercase name used on the command line and in files.
    pub fn name(self) -> &'static str {
        match self {
            EnvId::CartPole => "cartpole",
            EnvId::MountainCarDiscrete => "mountaincar",
            EnvId::MountainCarContinuous => "mountaincar-continuous",
        }
    }

    /// Whether a long episode is good (CartPole) or bad (MountainCar).
    /// Normalisation applied to states before they reach a network, so that
    /// every coordinate spans roughly `[-1, 1]` over the operating region.
    pub fn input_map(self) -> InputMap {
        match self {
            EnvId::CartPole => InputMap::new(
                vec![0.0; 4],
                vec![
                    1.0 / cartpole::X_LIMIT,
                    0.5,
                    1.0 / cartpole::THETA_LIMIT,
                    0.5,
                ],
            ),
            EnvId::MountainCarDiscrete | EnvId::MountainCarContinuous => {
                let mid = 0.5 * (mountain_car::MIN_POSITION + mountain_car::MAX_POSITION);
                let half = 0.5 * (mountain_car::MAX_POSITION - mountain_car::MIN_POSITION);
                InputMap::new(
                    vec![mid, 0.0],
                    vec![1.0 / half, 1.0 / mountain_car::MAX_SPEED],
                )
            }
        }
    }

    pub fn longer_is_better(self) -> bool {
        matches!(self, EnvId::CartPole)
    }

    /// Whether an episode of `steps` transitions that ended with
    /// `terminated` accomplished the task.
    pub fn task_completed(self, steps: usize, terminated: bool) -> bool {
        match self {
            EnvId::CartPole => steps >= self.episode_cap(),
            _ => terminated,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cartpole" | "cartpole-v0" | "cp" => Ok(EnvId::CartPole),
            "mountaincar" | "mountaincar-v0" | "mountaincar-discrete" | "mc" => {
                Ok(EnvId::MountainCarDiscrete)
            }
            "mountaincar-continuous" | "mountaincarcontinuous-v0" | "mcc" => {
                Ok(EnvId::MountainCarContinuous)
            }
            _ => Err(EnvError::UnknownEnv(s.to_string())),
        }
    }
}

/// Raw observation vector. CartPole: `[x, x_dot, theta, theta_dot]`;
/// MountainCar: `[position, velocity]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn new(values: Vec<f64>) -> Self {
        State(values)
    }

    pub fn validate(&self, env: EnvId) -> Result<(), EnvError> {
        if self.0.len() != env.state_dim() {
            return Err(EnvError::StateDim {
                env,
                expected: env.state_dim(),
                got: self.0.len(),
            });
        }
        if self.0.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::NonFiniteState);
        }
        Ok(())
    }
}

impl Deref for State {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Action {
    Discrete(usize),
    /// Value as produced by the controller; the simulator clips it to the
    /// action bounds.
    Continuous(f64),
}

impl Action {
    pub fn validate(self, env: EnvId) -> Result<(), EnvError> {
        let ok = match (env.action_space(), self) {
            (ActionSpace::Discrete(n), Action::Discrete(i)) => i < n,
            (ActionSpace::Continuous { .. }, Action::Continuous(v)) => v.is_finite(),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidAction { env, action: self })
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Action::Discrete(i) => i as f64,
            Action::Continuous(v) => v,
        }
    }
}

static ENV_REWARD_READS: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static THREAD_ENV_REWARD_READS: Cell<u64> = const { Cell::new(0) };
}

fn record_env_reward_read() {
    ENV_REWARD_READS.fetch_add(1, Ordering::Relaxed);
    THREAD_ENV_REWARD_READS.with(|c| c.set(c.get() + 1));
}

/// Process-wide number of environment-reward reads.
pub fn env_reward_reads() -> u64 {
    ENV_REWARD_READS.load(Ordering::Relaxed)
}

/// Number of environment-reward reads performed by the calling thread.
///
/// Training is single-threaded, so comparing this before and after a call
/// isolates that call even while other threads are evaluating.
pub fn env_reward_reads_on_thread() -> u64 {
    THREAD_ENV_REWARD_READS.with(|c| c.get())
}

/// One immediate environment reward, sealed behind the access counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HiddenReward(f64);

impl HiddenReward {
    pub fn reveal(self) -> f64 {
        record_env_reward_read();
        self.0
    }
}

/// Per-transition environment rewards of a trajectory, sealed behind the
/// access counter. Empty for trajectories loaded from files.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HiddenRewards(Vec<f64>);

impl HiddenRewards {
    pub fn is_recorded(&self) -> bool {
        !self.0.is_empty()
    }

    pub fn reveal(&self) -> &[f64] {
        record_env_reward_read();
        &self.0
    }

    pub fn reveal_total(&self) -> f64 {
        self.reveal().iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub next_state: State,
    pub terminated: bool,
    pub truncated: bool,
    pub hidden_env_reward: HiddenReward,
}

/// Draws an initial state.
pub fn reset(env: EnvId, rng: &mut SimRng) -> State {
    match env {
        EnvId::CartPole => {
            let b = cartpole::INIT_BOUND;
            State((0..4).map(|_| rng.random_range(-b..=b)).collect())
        }
        EnvId::MountainCarDiscrete | EnvId::MountainCarContinuous => {
            let p = rng.random_range(mountain_car::INIT_LOW..=mountain_car::INIT_HIGH);
            State(vec![p, 0.0])
        }
    }
}

/// Draws a non-terminal state spread over the whole operating region rather
/// than the usual start distribution. Used for exploring starts when
/// pretraining demonstrators.
pub fn reset_anywhere(env: EnvId, rng: &mut SimRng) -> State {
    match env {
        EnvId::CartPole => {
            let b = cartpole::INIT_BOUND;
            State((0..4).map(|_| rng.random_range(-b..=b)).collect())
        }
        EnvId::MountainCarDiscrete | EnvId::MountainCarContinuous => {
            let p = rng.random_range(mountain_car::MIN_POSITION..mountain_car::GOAL_POSITION);
            let v = rng.random_range(-mountain_car::MAX_SPEED..=mountain_car::MAX_SPEED);
            State(vec![p, v])
        }
    }
}

/// Termination predicate on a state (not counting the step cap).
pub fn is_terminal(env: EnvId, state: &[f64]) -> bool {
    match env {
        EnvId::CartPole => {
            state[0].abs() > cartpole::X_LIMIT || state[2].abs() > cartpole::THETA_LIMIT
        }
        EnvId::MountainCarDiscrete | EnvId::MountainCarContinuous => {
            state[0] >= mountain_car::GOAL_POSITION
        }
    }
}

/// Advances the simulation by one step. `step_index` is the zero-based index
/// of this transition within its episode and drives truncation.
pub fn step(
    env: EnvId,
    state: &State,
    action: Action,
    step_index: usize,
) -> Result<Transition, EnvError> {
    state.validate(env)?;
    action.validate(env)?;
    let (next, reward) = match (env, action) {
        (EnvId::CartPole, Action::Discrete(a)) => (cartpole_step(state, a), 1.0),
        (EnvId::MountainCarDiscrete, Action::Discrete(a)) => {
            let force = (a as f64 - 1.0) * mountain_car::FORCE;
            (mountain_car_step(state, force), -1.0)
        }
        (EnvId::MountainCarContinuous, Action::Continuous(u)) => {
            let u = u.clamp(-1.0, 1.0);
            let next = mountain_car_step(state, u * mountain_car::POWER);
            let bonus = if is_terminal(env, &next) { 100.0 } else { 0.0 };
            (next, bonus - 0.1 * u * u)
        }
        _ => unreachable!("action validated against env"),
    };
    let terminated = is_terminal(env, &next);
    Ok(Transition {
        next_state: next,
        terminated,
        truncated: step_index + 1 >= env.episode_cap(),
        hidden_env_reward: HiddenReward(reward),
    })
}

fn cartpole_step(s: &[f64], action: usize) -> State {
    use cartpole::*;
    let (x, x_dot, theta, theta_dot) = (s[0], s[1], s[2], s[3]);
    let force = if action == 1 { FORCE } else { -FORCE };
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
    // semi-implicit Euler: velocities first, positions from the new velocities
    let x_dot = x_dot + DT * x_acc;
    let x = x + DT * x_dot;
    let theta_dot = theta_dot + DT * theta_acc;
    let theta = theta + DT * theta_dot;
    State(vec![x, x_dot, theta, theta_dot])
}

fn mountain_car_step(s: &[f64], accel: f64) -> State {
    use mountain_car::*;
    let (mut p, mut v) = (s[0], s[1]);
    v += accel - GRAVITY * (3.0 * p).cos();
    v = v.clamp(-MAX_SPEED, MAX_SPEED);
    p += v;
    p = p.clamp(MIN_POSITION, MAX_POSITION);
    if p <= MIN_POSITION && v < 0.0 {
        v = 0.0;
    }
    State(vec![p, v])
}

/// Anything that picks actions from states.
pub trait Controller {
    fn act(&self, state: &[f64], rng: &mut SimRng) -> Action;
}

impl<F> Controller for F
where
    F: Fn(&[f64], &mut SimRng) -> Action,
{
    fn act(&self, state: &[f64], rng: &mut SimRng) -> Action {
        self(state, rng)
    }
}

/// An episode: states `s_0..s_T` and, when known, actions `a_0..a_{T-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub env: EnvId,
    pub states: Vec<State>,
    pub actions: Option<Vec<Action>>,
    /// Ended through the task's termination predicate (not the step cap).
    pub terminated: bool,
    env_rewards: HiddenRewards,
}

impl Trajectory {
    /// Builds a trajectory without environment rewards (e.g. read from a
    /// file), checking the shape invariants.
    pub fn new(
        env: EnvId,
        states: Vec<State>,
        actions: Option<Vec<Action>>,
        terminated: bool,
    ) -> Result<Self, EnvError> {
        let t = Trajectory {
            env,
            states,
            actions,
            terminated,
            env_rewards: HiddenRewards::default(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.states.is_empty() {
            return Err(EnvError::MalformedTrajectory("no states".into()));
        }
        for s in &self.states {
            s.validate(self.env)?;
        }
        if let Some(actions) = &self.actions {
            if actions.len() + 1 != self.states.len() {
                return Err(EnvError::MalformedTrajectory(format!(
                    "{} actions for {} states",
                    actions.len(),
                    self.states.len()
                )));
            }
            for a in actions {
                a.validate(self.env)?;
            }
        }
        if self.len() > self.env.episode_cap() {
            return Err(EnvError::MalformedTrajectory(format!(
                "{} transitions exceed the cap of {}",
                self.len(),
                self.env.episode_cap()
            )));
        }
        Ok(())
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn initial_state(&self) -> &State {
        &self.states[0]
    }

    pub fn env_rewards(&self) -> &HiddenRewards {
        &self.env_rewards
    }

    pub fn task_completed(&self) -> bool {
        self.env.task_completed(self.len(), self.terminated)
    }

    /// Copy without actions or environment rewards, as a state-only
    /// demonstration would be stored.
    pub fn states_only(&self) -> Trajectory {
        Trajectory {
            env: self.env,
            states: self.states.clone(),
            actions: None,
            terminated: self.terminated,
            env_rewards: HiddenRewards::default(),
        }
    }
}

/// Runs `controller` from `initial` (or a fresh reset) until termination,
/// truncation, or `max_steps` transitions.
pub fn rollout<C: Controller + ?Sized>(
    env: EnvId,
    controller: &C,
    rng: &mut SimRng,
    max_steps: usize,
    initial: Option<State>,
) -> Result<Trajectory, EnvError> {
    let s0 = match initial {
        Some(s) => {
            s.validate(env)?;
            s
        }
        None => reset(env, rng),
    };
    let limit = max_steps.min(env.episode_cap());
    let mut states = Vec::with_capacity(limit.min(256) + 1);
    let mut actions = Vec::with_capacity(limit.min(256));
    let mut rewards = Vec::with_capacity(limit.min(256));
    let mut terminated = false;
    states.push(s0);
    for t in 0..limit {
        let s = states.last().expect("nonempty");
        let a = controller.act(s, rng);
        let tr = step(env, s, a, t)?;
        actions.push(a);
        rewards.push(tr.hidden_env_reward.0);
        states.push(tr.next_state);
        if tr.terminated {
            terminated = true;
            break;
        }
        if tr.truncated {
            break;
        }
    }
    Ok(Trajectory {
        env,
        states,
        actions: Some(actions),
        terminated,
        env_rewards: HiddenRewards(rewards),
    })
}
