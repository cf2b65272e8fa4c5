//! Finite-difference audits of every hand-written gradient: the assembled
//! reward loss, categorical and Gaussian log-probabilities, and the critic's
//! squared loss.
//!
//! Each suite draws seeded random instances (network, inputs, targets) and
//! compares backpropagation against central differences of a loss computed
//! by plain forward loops. Instances with any hidden pre-activation within
//! [`KINK_MARGIN`] of zero are redrawn, since a difference quotient across a
//! ReLU kink is not a derivative.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use thiserror::Error;

use crate::actor_critic::{
    critic_gradient, CriticModel, PolicyError, PolicyHead, PolicyModel, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::env::{Action, EnvError, EnvId, State, Trajectory};
use crate::net::{
    max_relative_error_floored, numeric_gradient, NetError, Network, OutputActivation,
};
use crate::reward::{DiscountSet, ReturnTerm, RewardError, RewardModel};
use crate::rng::{self, SimRng};

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const KINK_MARGIN: f64 = 1e-4;
pub const DEFAULT_INSTANCES: usize = 100;
/// Denominator floor of the relative error. Central differences carry a
/// round-off of about `ulp(loss) / 2ε`, up to ~1e-10 here, so a component whose true
/// value is exactly zero (for instance two cancelling margin terms) would
/// otherwise report a relative error of 1.
pub const DENOMINATOR_FLOOR: f64 = 1e-6;

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    max_relative_error_floored(analytic, numeric, DENOMINATOR_FLOOR)
}

/// Redraw budget per accepted instance.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("suite {0}: could not draw an instance away from ReLU kinks")]
    NoInstance(Suite),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Reward,
    Categorical,
    Gaussian,
    Critic,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Reward,
        Suite::Categorical,
        Suite::Gaussian,
        Suite::Critic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Reward => "reward-loss",
            Suite::Categorical => "categorical-log-prob",
            Suite::Gaussian => "gaussian-log-prob",
            Suite::Critic => "critic-squared-loss",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    /// Draws rejected for lying near a kink.
    pub redrawn: usize,
    pub max_rel_error: f64,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<22} {} instances={} redrawn={} max_rel_err={:.3e} time={:.2}s",
            self.suite.name(),
            if self.passed() { "PASS" } else { "FAIL" },
            self.instances,
            self.redrawn,
            self.max_rel_error,
            self.elapsed.as_secs_f64()
        )
    }
}

fn random_net(
    input: usize,
    output: usize,
    act: OutputActivation,
    rng: &mut SimRng,
) -> Result<Network, NetError> {
    let depth = rng.random_range(1..=2);
    let mut dims = vec![input];
    for _ in 0..depth {
        dims.push(rng.random_range(3..=16));
    }
    dims.push(output);
    let mut net = Network::zeros(&dims, act)?;
    for p in net.params_mut() {
        *p = rng.random_range(-0.8..0.8);
    }
    Ok(net)
}

fn random_state(dim: usize, rng: &mut SimRng) -> State {
    State((0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
}

fn random_traj(env: EnvId, rng: &mut SimRng) -> Result<Trajectory, EnvError> {
    let len = rng.random_range(2..=8);
    let states = (0..len)
        .map(|_| random_state(env.state_dim(), rng))
        .collect();
    Trajectory::new(env, states, None, false)
}

fn near_kink<'a>(
    net: &Network,
    inputs: impl IntoIterator<Item = &'a [f64]>,
) -> Result<bool, NetError> {
    for x in inputs {
        if net
            .hidden_preactivations(x)?
            .iter()
            .any(|z| z.abs() < KINK_MARGIN)
        {
            return Ok(true);
        }
    }
    Ok(false)
}

/// `Σ_{j≥1} γ^{j-1} g(s_j)` by direct summation.
fn loop_return(model: &RewardModel, traj: &Trajectory, gamma: f64) -> Result<f64, RewardError> {
    let mut total = 0.0;
    for (j, s) in traj.states.iter().enumerate().skip(1) {
        total += gamma.powi(j as i32 - 1) * model.immediate_reward(s)?;
    }
    Ok(total)
}

fn loop_utility(model: &RewardModel, traj: &Trajectory, set: &[f64]) -> Result<f64, RewardError> {
    let mut total = 0.0;
    for &g in set {
        total += loop_return(model, traj, g)?;
    }
    Ok(total / set.len() as f64)
}

/// One reward-loss instance; `None` when it lies near a kink.
fn reward_instance(rng: &mut SimRng) -> Result<Option<f64>, GradCheckError> {
    let env = if rng.random_bool(0.5) {
        EnvId::CartPole
    } else {
        EnvId::MountainCarDiscrete
    };
    let net = random_net(env.state_dim(), 1, OutputActivation::Identity, rng)?;
    let model = RewardModel::new(net)?;
    let n = rng.random_range(1..=3);
    let sampled: Vec<Trajectory> = (0..n)
        .map(|_| random_traj(env, rng))
        .collect::<Result<_, _>>()?;
    let learner = random_traj(env, rng)?;
    let demo = random_traj(env, rng)?;
    let all = sampled.iter().chain([&learner, &demo]);
    if near_kink(
        model.net(),
        all.flat_map(|t| t.states.iter().map(|s| &s[..])),
    )? {
        return Ok(None);
    }
    let mut gammas: Vec<f64> = vec![];
    for _ in 0..rng.random_range(1..=3) {
        let g: f64 = rng.random_range(0.5..1.0);
        if !gammas.contains(&g) {
            gammas.push(g);
        }
    }
    let set = DiscountSet::new(gammas.clone())?;
    let gamma = rng.random_range(0.5..1.0);
    let rho = rng.random_range(0.0..1.0);
    let refs: Vec<&Trajectory> = sampled.iter().collect();
    let analytic = model.phi_gradient(
        &refs,
        &learner,
        &demo,
        gamma,
        &set,
        rho,
        ReturnTerm::Discounted,
    )?;
    let numeric = numeric_gradient(model.net(), FD_STEP, |net| {
        let m = model.with_network(net.clone()).expect("same shape");
        let mut sum_g = 0.0;
        for t in &sampled {
            sum_g += loop_return(&m, t, gamma).expect("valid");
        }
        let margin = loop_utility(&m, &learner, &gammas).expect("valid")
            - loop_utility(&m, &demo, &gammas).expect("valid");
        -(1.0 - rho) / n as f64 * sum_g + rho * margin
    });
    Ok(Some(relative_error(analytic.as_slice(), &numeric)))
}

fn categorical_instance(rng: &mut SimRng) -> Result<Option<f64>, GradCheckError> {
    let (dim, k) = if rng.random_bool(0.5) { (4, 2) } else { (2, 3) };
    let net = random_net(dim, k, OutputActivation::Softmax, rng)?;
    let policy = PolicyModel::new(net, PolicyHead::Categorical { actions: k })?;
    let s = random_state(dim, rng);
    if near_kink(policy.net(), [&s[..]])? {
        return Ok(None);
    }
    let a = Action::Discrete(rng.random_range(0..k));
    let analytic = policy.log_prob_gradient(&s, a)?;
    let numeric = numeric_gradient(policy.net(), FD_STEP, |net| {
        let logits = net.forward_logits(&s).expect("dims");
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        let i = match a {
            Action::Discrete(i) => i,
            Action::Continuous(_) => unreachable!(),
        };
        logits[i] - m - z.ln()
    });
    Ok(Some(relative_error(analytic.as_slice(), &numeric)))
}

fn gaussian_instance(rng: &mut SimRng) -> Result<Option<f64>, GradCheckError> {
    let net = random_net(2, 2, OutputActivation::Identity, rng)?;
    let policy = PolicyModel::new(net, PolicyHead::Gaussian)?;
    let s = random_state(2, rng);
    if near_kink(policy.net(), [&s[..]])? {
        return Ok(None);
    }
    let raw_log_std = policy.net().forward_logits(&s)?[1];
    // The clamp is flat outside its range; stay clear of its corners.
    if (raw_log_std - LOG_STD_MIN).abs() < 1e-3 || (raw_log_std - LOG_STD_MAX).abs() < 1e-3 {
        return Ok(None);
    }
    let a = Action::Continuous(rng.random_range(-2.0..2.0));
    let analytic = policy.log_prob_gradient(&s, a)?;
    let numeric = numeric_gradient(policy.net(), FD_STEP, |net| {
        let out = net.forward_logits(&s).expect("dims");
        let log_std = out[1].clamp(LOG_STD_MIN, LOG_STD_MAX);
        let sigma = log_std.exp();
        let z = (a.as_f64() - out[0]) / sigma;
        -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln()
    });
    Ok(Some(relative_error(analytic.as_slice(), &numeric)))
}

fn critic_instance(rng: &mut SimRng) -> Result<Option<f64>, GradCheckError> {
    let env = if rng.random_bool(0.5) {
        EnvId::CartPole
    } else {
        EnvId::MountainCarDiscrete
    };
    let net = random_net(env.state_dim(), 1, OutputActivation::Identity, rng)?;
    let critic = CriticModel::new(net)?;
    let traj = random_traj(env, rng)?;
    if near_kink(critic.net(), traj.states.iter().map(|s| &s[..]))? {
        return Ok(None);
    }
    let targets: Vec<f64> = (0..traj.len())
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    let analytic = critic_gradient(&critic, &traj, &targets)?;
    let numeric = numeric_gradient(critic.net(), FD_STEP, |net| {
        let mut loss = 0.0;
        for (s, r) in traj.states.iter().zip(&targets) {
            let v = net.forward_logits(s).expect("dims")[0];
            loss += (v - r) * (v - r);
        }
        loss
    });
    Ok(Some(relative_error(analytic.as_slice(), &numeric)))
}

/// Runs one suite over `instances` accepted draws.
pub fn run_suite(suite: Suite, instances: usize, seed: u64) -> Result<SuiteReport, GradCheckError> {
    let start = Instant::now();
    let mut rng = rng::stream(seed, suite as u64 + 1);
    let mut worst = 0.0f64;
    let mut accepted = 0;
    let mut redrawn = 0;
    while accepted < instances {
        let outcome = match suite {
            Suite::Reward => reward_instance(&mut rng)?,
            Suite::Categorical => categorical_instance(&mut rng)?,
            Suite::Gaussian => gaussian_instance(&mut rng)?,
            Suite::Critic => critic_instance(&mut rng)?,
        };
        match outcome {
            Some(err) => {
                worst = worst.max(err);
                accepted += 1;
            }
            None => {
                redrawn += 1;
                if redrawn > MAX_REDRAWS * instances.max(1) {
                    return Err(GradCheckError::NoInstance(suite));
                }
            }
        }
    }
    Ok(SuiteReport {
        suite,
        instances,
        redrawn,
        max_rel_error: worst,
        elapsed: start.elapsed(),
    })
}

pub fn run_all(instances: usize, seed: u64) -> Result<Vec<SuiteReport>, GradCheckError> {
    Suite::ALL
        .iter()
        .map(|&s| run_suite(s, instances, seed))
        .collect()
}
