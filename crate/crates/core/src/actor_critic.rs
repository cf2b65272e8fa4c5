//! Stochastic policies, the critic, advantages under a state reward, and the
//! per-episode actor and critic updates.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::env::{Action, ActionSpace, Controller, EnvId, Trajectory};
use crate::net::{
    log_softmax, map_input, softmax, Direction, Gradient, InputMap, NetError, Network,
    OutputActivation,
};
use crate::reward::{check_gamma, RewardError, RewardModel};
use crate::rng::SimRng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("trajectory carries no actions")]
    MissingActions,
    #[error("{advantages} advantages for a trajectory of {steps} steps")]
    AdvantageLength { advantages: usize, steps: usize },
    #[error("action {0:?} does not fit the policy head")]
    ActionMismatch(Action),
    #[error("network shape does not fit a {0:?} head")]
    BadShape(PolicyHead),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyHead {
    Categorical {
        actions: usize,
    },
    /// Two outputs: mean and log standard deviation.
    Gaussian,
}

/// How a policy picks actions when used as a controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ActMode {
    #[default]
    Sample,
    /// Most likely action (arg-max / mean).
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Action as executed: continuous values clipped to `[-1, 1]`.
    pub action: Action,
    /// Action as drawn, before clipping.
    pub raw: Action,
    /// `log π(raw | s)`.
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    net: Network,
    head: PolicyHead,
    input: Option<InputMap>,
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl PolicyModel {
    pub fn new(net: Network, head: PolicyHead) -> Result<Self, PolicyError> {
        let ok = match head {
            PolicyHead::Categorical { actions } => {
                net.output_dim() == actions && net.output_activation() == OutputActivation::Softmax
            }
            PolicyHead::Gaussian => {
                net.output_dim() == 2 && net.output_activation() == OutputActivation::Identity
            }
        };
        if !ok {
            return Err(PolicyError::BadShape(head));
        }
        Ok(PolicyModel {
            net,
            head,
            input: None,
        })
    }

    /// Randomly initialised policy matching the environment's action space.
    pub fn for_env(env: EnvId, hidden: &[usize], rng: &mut SimRng) -> Result<Self, PolicyError> {
        let (out, act) = match env.action_space() {
            ActionSpace::Discrete(k) => (k, OutputActivation::Softmax),
            ActionSpace::Continuous { .. } => (2, OutputActivation::Identity),
        };
        let net = Network::random(&dims(env.state_dim(), hidden, out), act, rng)?;
        Self::from_network(env, net)
    }

    /// Wraps a trained network for `env`, attaching the environment's input
    /// normalisation.
    pub fn from_network(env: EnvId, net: Network) -> Result<Self, PolicyError> {
        let head = match env.action_space() {
            ActionSpace::Discrete(k) => PolicyHead::Categorical { actions: k },
            ActionSpace::Continuous { .. } => PolicyHead::Gaussian,
        };
        Ok(Self::new(net, head)?.with_input_map(env.input_map()))
    }

    pub fn with_input_map(mut self, map: InputMap) -> Self {
        self.input = Some(map);
        self
    }

    pub fn input_map(&self) -> Option<&InputMap> {
        self.input.as_ref()
    }

    /// Same head and input map around a different network.
    pub fn with_network(&self, net: Network) -> Result<Self, PolicyError> {
        let mut p = Self::new(net, self.head)?;
        p.input = self.input.clone();
        Ok(p)
    }

    fn logits(&self, state: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(self
            .net
            .forward_logits(&map_input(self.input.as_ref(), state))?)
    }

    pub fn head(&self) -> PolicyHead {
        self.head
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    /// Whether this policy can drive `env`.
    pub fn fits(&self, env: EnvId) -> bool {
        self.net.input_dim() == env.state_dim()
            && match (self.head, env.action_space()) {
                (PolicyHead::Categorical { actions }, ActionSpace::Discrete(k)) => actions == k,
                (PolicyHead::Gaussian, ActionSpace::Continuous { .. }) => true,
                _ => false,
            }
    }

    /// Action probabilities (categorical heads).
    pub fn probabilities(&self, state: &[f64]) -> Result<Vec<f64>, PolicyError> {
        Ok(softmax(&self.logits(state)?))
    }

    /// Mean and clamped log-std (Gaussian heads).
    pub fn gaussian_params(&self, state: &[f64]) -> Result<(f64, f64), PolicyError> {
        let out = self.logits(state)?;
        Ok((out[0], out[1].clamp(LOG_STD_MIN, LOG_STD_MAX)))
    }

    pub fn sample_action(&self, state: &[f64], rng: &mut SimRng) -> Result<Sample, PolicyError> {
        match self.head {
            PolicyHead::Categorical { .. } => {
                let logits = self.logits(state)?;
                let p = softmax(&logits);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut idx = p.len() - 1;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        idx = i;
                        break;
                    }
                }
                let lp = log_softmax(&logits)[idx];
                Ok(Sample {
                    action: Action::Discrete(idx),
                    raw: Action::Discrete(idx),
                    log_prob: lp,
                })
            }
            PolicyHead::Gaussian => {
                let (mean, log_std) = self.gaussian_params(state)?;
                let z: f64 = rng.sample(StandardNormal);
                let a = mean + log_std.exp() * z;
                Ok(Sample {
                    action: Action::Continuous(a.clamp(-1.0, 1.0)),
                    raw: Action::Continuous(a),
                    log_prob: gaussian_log_density(a, mean, log_std),
                })
            }
        }
    }

    pub fn greedy_action(&self, state: &[f64]) -> Result<Action, PolicyError> {
        match self.head {
            PolicyHead::Categorical { .. } => {
                let logits = self.logits(state)?;
                let mut best = 0;
                for (i, z) in logits.iter().enumerate() {
                    if *z > logits[best] {
                        best = i;
                    }
                }
                Ok(Action::Discrete(best))
            }
            PolicyHead::Gaussian => {
                let (mean, _) = self.gaussian_params(state)?;
                Ok(Action::Continuous(mean.clamp(-1.0, 1.0)))
            }
        }
    }

    pub fn log_prob(&self, state: &[f64], action: Action) -> Result<f64, PolicyError> {
        match (self.head, action) {
            (PolicyHead::Categorical { actions }, Action::Discrete(i)) if i < actions => {
                Ok(log_softmax(&self.logits(state)?)[i])
            }
            (PolicyHead::Gaussian, Action::Continuous(a)) => {
                let (mean, log_std) = self.gaussian_params(state)?;
                Ok(gaussian_log_density(a, mean, log_std))
            }
            _ => Err(PolicyError::ActionMismatch(action)),
        }
    }

    /// `∂ log π(a|s) / ∂ logits`.
    fn log_prob_upstream(&self, state: &[f64], action: Action) -> Result<Vec<f64>, PolicyError> {
        let out = self.logits(state)?;
        match (self.head, action) {
            (PolicyHead::Categorical { actions }, Action::Discrete(i)) if i < actions => {
                let mut up: Vec<f64> = softmax(&out).into_iter().map(|p| -p).collect();
                up[i] += 1.0;
                Ok(up)
            }
            (PolicyHead::Gaussian, Action::Continuous(a)) => {
                let mean = out[0];
                let log_std = out[1].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let var = (2.0 * log_std).exp();
                let diff = a - mean;
                let d_mean = diff / var;
                // the clamp has zero slope outside its range
                let d_log_std = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&out[1]) {
                    diff * diff / var - 1.0
                } else {
                    0.0
                };
                Ok(vec![d_mean, d_log_std])
            }
            _ => Err(PolicyError::ActionMismatch(action)),
        }
    }

    pub fn accumulate_log_prob_gradient(
        &self,
        state: &[f64],
        action: Action,
        scale: f64,
        grad: &mut Gradient,
    ) -> Result<(), PolicyError> {
        let mut up = self.log_prob_upstream(state, action)?;
        up.iter_mut().for_each(|v| *v *= scale);
        self.net
            .accumulate_backward_logits(&map_input(self.input.as_ref(), state), &up, grad)?;
        Ok(())
    }

    pub fn log_prob_gradient(
        &self,
        state: &[f64],
        action: Action,
    ) -> Result<Gradient, PolicyError> {
        let mut g = self.net.zero_gradient();
        self.accumulate_log_prob_gradient(state, action, 1.0, &mut g)?;
        Ok(g)
    }

    pub fn greedy(&self) -> GreedyPolicy<'_> {
        GreedyPolicy(self)
    }

    pub fn controller(&self, mode: ActMode) -> ModePolicy<'_> {
        ModePolicy { policy: self, mode }
    }
}

pub fn gaussian_log_density(a: f64, mean: f64, log_std: f64) -> f64 {
    let z = (a - mean) / log_std.exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Samples from the policy; continuous actions are passed unclipped so the
/// trajectory keeps the values whose log-probability the update needs.
impl Controller for PolicyModel {
    fn act(&self, state: &[f64], rng: &mut SimRng) -> Action {
        self.sample_action(state, rng)
            .expect("state dimension matches policy input")
            .raw
    }
}

pub struct GreedyPolicy<'a>(&'a PolicyModel);

impl Controller for GreedyPolicy<'_> {
    fn act(&self, state: &[f64], _rng: &mut SimRng) -> Action {
        self.0
            .greedy_action(state)
            .expect("state dimension matches policy input")
    }
}

pub struct ModePolicy<'a> {
    policy: &'a PolicyModel,
    mode: ActMode,
}

impl Controller for ModePolicy<'_> {
    fn act(&self, state: &[f64], rng: &mut SimRng) -> Action {
        match self.mode {
            ActMode::Sample => self.policy.act(state, rng),
            ActMode::Greedy => self.policy.greedy().act(state, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticModel {
    net: Network,
    input: Option<InputMap>,
}

impl CriticModel {
    pub fn new(net: Network) -> Result<Self, PolicyError> {
        if net.output_dim() != 1 || net.output_activation() != OutputActivation::Identity {
            return Err(PolicyError::BadShape(PolicyHead::Categorical {
                actions: 1,
            }));
        }
        Ok(CriticModel { net, input: None })
    }

    pub fn random(
        state_dim: usize,
        hidden: &[usize],
        rng: &mut SimRng,
    ) -> Result<Self, PolicyError> {
        Self::new(Network::random(
            &dims(state_dim, hidden, 1),
            OutputActivation::Identity,
            rng,
        )?)
    }

    /// Randomly initialised critic using the environment's input
    /// normalisation.
    pub fn for_env(env: EnvId, hidden: &[usize], rng: &mut SimRng) -> Result<Self, PolicyError> {
        Ok(Self::random(env.state_dim(), hidden, rng)?.with_input_map(env.input_map()))
    }

    pub fn with_input_map(mut self, map: InputMap) -> Self {
        self.input = Some(map);
        self
    }

    /// Same input map around a different network.
    pub fn with_network(&self, net: Network) -> Result<Self, PolicyError> {
        let mut c = Self::new(net)?;
        c.input = self.input.clone();
        Ok(c)
    }

    pub fn value(&self, state: &[f64]) -> Result<f64, PolicyError> {
        Ok(self
            .net
            .forward_logits(&map_input(self.input.as_ref(), state))?[0])
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageVector(pub Vec<f64>);

impl AdvantageVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Shifts to zero mean and scales to unit (population) deviation; left
    /// unscaled when the deviation vanishes.
    pub fn standardize(&mut self) {
        if self.0.is_empty() {
            return;
        }
        let n = self.0.len() as f64;
        let mean = self.0.iter().sum::<f64>() / n;
        let var = self.0.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        for a in &mut self.0 {
            *a -= mean;
            if std > 1e-8 {
                *a /= std;
            }
        }
    }
}

/// `R_t = Σ_{j=t..T} γ^{j-t} r_j` for `t = 0..T-1`, where `r` holds one
/// reward per state `s_0..s_T`.
pub fn returns_to_go(state_rewards: &[f64], gamma: f64) -> Vec<f64> {
    let t_len = state_rewards.len().saturating_sub(1);
    let mut out = vec![0.0; t_len];
    let mut acc = *state_rewards.last().unwrap_or(&0.0);
    for t in (0..t_len).rev() {
        acc = state_rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// `Â_t = Σ_{j=t..T} γ^{j-t} r_j − V̂(s_t)` with per-state rewards `r`.
pub fn advantage_from_rewards(
    state_rewards: &[f64],
    critic: &CriticModel,
    traj: &Trajectory,
    gamma: f64,
) -> Result<AdvantageVector, PolicyError> {
    check_gamma(gamma)?;
    if traj.actions.is_none() {
        return Err(PolicyError::MissingActions);
    }
    let targets = returns_to_go(state_rewards, gamma);
    let adv = targets
        .iter()
        .zip(&traj.states)
        .map(|(r, s)| Ok(r - critic.value(s)?))
        .collect::<Result<Vec<f64>, PolicyError>>()?;
    Ok(AdvantageVector(adv))
}

/// Advantages under the learned reward `g(·|φ)`.
pub fn advantage(
    reward: &RewardModel,
    critic: &CriticModel,
    traj: &Trajectory,
    gamma: f64,
) -> Result<AdvantageVector, PolicyError> {
    let r = reward.state_rewards(traj)?;
    advantage_from_rewards(&r, critic, traj, gamma)
}

/// Ascent step on `Σ_t log π(a_t|s_t) Â_t` with the advantages held fixed.
pub fn policy_gradient(
    policy: &PolicyModel,
    traj: &Trajectory,
    adv: &AdvantageVector,
) -> Result<Gradient, PolicyError> {
    let actions = traj.actions.as_ref().ok_or(PolicyError::MissingActions)?;
    if adv.len() != actions.len() {
        return Err(PolicyError::AdvantageLength {
            advantages: adv.len(),
            steps: actions.len(),
        });
    }
    let mut grad = policy.net.zero_gradient();
    for ((s, a), &w) in traj.states.iter().zip(actions).zip(adv.as_slice()) {
        if w != 0.0 {
            policy.accumulate_log_prob_gradient(s, *a, w, &mut grad)?;
        }
    }
    Ok(grad)
}

pub fn policy_step(
    policy: &mut PolicyModel,
    traj: &Trajectory,
    adv: &AdvantageVector,
    lr: f64,
) -> Result<(), PolicyError> {
    let grad = policy_gradient(policy, traj, adv)?;
    policy.net.apply_gradient(&grad, lr, Direction::Ascent)?;
    Ok(())
}

/// Gradient of `Σ_t (V̂(s_t) − R_t)²` for the given targets.
pub fn critic_gradient(
    critic: &CriticModel,
    traj: &Trajectory,
    targets: &[f64],
) -> Result<Gradient, PolicyError> {
    let mut grad = critic.net.zero_gradient();
    for (s, r) in traj.states.iter().zip(targets) {
        let v = critic.value(s)?;
        let d = 2.0 * (v - r);
        if d != 0.0 {
            critic.net.accumulate_backward_logits(
                &map_input(critic.input.as_ref(), s),
                &[d],
                &mut grad,
            )?;
        }
    }
    Ok(grad)
}

/// One descent step of the critic towards Monte-Carlo returns under the
/// learned reward.
pub fn critic_step(
    critic: &mut CriticModel,
    traj: &Trajectory,
    reward: &RewardModel,
    gamma: f64,
    lr: f64,
) -> Result<(), PolicyError> {
    check_gamma(gamma)?;
    let targets = returns_to_go(&reward.state_rewards(traj)?, gamma);
    let grad = critic_gradient(critic, traj, &targets)?;
    critic.net.apply_gradient(&grad, lr, Direction::Descent)?;
    Ok(())
}
