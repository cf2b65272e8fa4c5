//! Learned state-only reward, discounted returns, stereo utility over a set
//! of discount factors, the learner-vs-demonstrator utility margin, and the
//! gradient of the concurrent-learning loss with respect to the reward
//! parameters.
//!
//! Returns are indexed from the first post-action state:
//! `G(τ, γ) = Σ_{j=1..T} γ^{j-1} g(s_j)`. The initial state never contributes.

use thiserror::Error;

use crate::env::{EnvId, Trajectory};
use crate::net::{map_input, Gradient, InputMap, NetError, Network, OutputActivation};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("trajectory has no transitions")]
    EmptyTrajectory,
    #[error("trajectories come from different environments ({0} vs {1})")]
    EnvMismatch(EnvId, EnvId),
    #[error("no sampled trajectories")]
    EmptySample,
    #[error("discount factor {0} outside (0, 1]")]
    InvalidGamma(f64),
    #[error("mixing weight {0} outside [0, 1)")]
    InvalidRho(f64),
    #[error("discount set is empty")]
    EmptyDiscountSet,
    #[error("discount factor {0} appears twice")]
    DuplicateGamma(f64),
    #[error("reward network must map {expected} inputs to one identity output")]
    BadShape { expected: usize },
}

pub fn check_gamma(gamma: f64) -> Result<f64, RewardError> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(gamma)
    } else {
        Err(RewardError::InvalidGamma(gamma))
    }
}

/// Nonempty set of distinct discount factors in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountSet(Vec<f64>);

impl DiscountSet {
    pub fn new(gammas: Vec<f64>) -> Result<Self, RewardError> {
        if gammas.is_empty() {
            return Err(RewardError::EmptyDiscountSet);
        }
        for (i, &g) in gammas.iter().enumerate() {
            check_gamma(g)?;
            if gammas[..i].contains(&g) {
                return Err(RewardError::DuplicateGamma(g));
            }
        }
        Ok(DiscountSet(gammas))
    }

    pub fn gammas(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Weight of the `j`-th post-action state (1-based) in the stereo
    /// utility: the mean of `γ^{j-1}` over the set.
    fn weights(&self, t: usize) -> Vec<f64> {
        let mut w = vec![0.0; t];
        for &g in &self.0 {
            let mut p = 1.0;
            for wj in w.iter_mut() {
                *wj += p;
                p *= g;
            }
        }
        let k = self.0.len() as f64;
        w.iter_mut().for_each(|v| *v /= k);
        w
    }
}

fn discount_weights(gamma: f64, t: usize) -> Vec<f64> {
    let mut p = 1.0;
    (0..t)
        .map(|_| {
            let w = p;
            p *= gamma;
            w
        })
        .collect()
}

/// Which return the reward-maximisation term of the loss uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ReturnTerm {
    /// `G(τ, γ)` with the single training discount factor.
    #[default]
    Discounted,
    /// The stereo utility over the discount set.
    Stereo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardModel {
    net: Network,
    input: Option<InputMap>,
}

impl RewardModel {
    pub fn new(net: Network) -> Result<Self, RewardError> {
        if net.output_dim() != 1 || net.output_activation() != OutputActivation::Identity {
            return Err(RewardError::BadShape {
                expected: net.input_dim(),
            });
        }
        Ok(RewardModel { net, input: None })
    }

    /// `state_dim → hidden… → 1` with ReLU hidden layers.
    pub fn random(
        state_dim: usize,
        hidden: &[usize],
        rng: &mut SimRng,
    ) -> Result<Self, RewardError> {
        let dims: Vec<usize> = std::iter::once(state_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Self::new(Network::random(&dims, OutputActivation::Identity, rng)?)
    }

    /// Randomly initialised reward using the environment's input
    /// normalisation.
    pub fn for_env(env: EnvId, hidden: &[usize], rng: &mut SimRng) -> Result<Self, RewardError> {
        Ok(Self::random(env.state_dim(), hidden, rng)?.with_input_map(env.input_map()))
    }

    /// Wraps a trained network for `env`.
    pub fn from_network(env: EnvId, net: Network) -> Result<Self, RewardError> {
        Ok(Self::new(net)?.with_input_map(env.input_map()))
    }

    pub fn with_input_map(mut self, map: InputMap) -> Self {
        self.input = Some(map);
        self
    }

    /// Same input map around a different network.
    pub fn with_network(&self, net: Network) -> Result<Self, RewardError> {
        let mut r = Self::new(net)?;
        r.input = self.input.clone();
        Ok(r)
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn into_net(self) -> Network {
        self.net
    }

    pub fn immediate_reward(&self, state: &[f64]) -> Result<f64, RewardError> {
        Ok(self
            .net
            .forward_logits(&map_input(self.input.as_ref(), state))?[0])
    }

    /// `g(s_j)` for every state `s_0..s_T` of the trajectory.
    pub fn state_rewards(&self, traj: &Trajectory) -> Result<Vec<f64>, RewardError> {
        traj.states
            .iter()
            .map(|s| self.immediate_reward(s))
            .collect()
    }

    fn post_action_rewards(&self, traj: &Trajectory) -> Result<Vec<f64>, RewardError> {
        if traj.is_empty() {
            return Err(RewardError::EmptyTrajectory);
        }
        traj.states[1..]
            .iter()
            .map(|s| self.immediate_reward(s))
            .collect()
    }

    pub fn discounted_return(&self, traj: &Trajectory, gamma: f64) -> Result<f64, RewardError> {
        check_gamma(gamma)?;
        let r = self.post_action_rewards(traj)?;
        Ok(dot(&r, &discount_weights(gamma, r.len())))
    }

    /// Mean of the discounted returns over the discount set.
    pub fn stereo_utility(&self, traj: &Trajectory, set: &DiscountSet) -> Result<f64, RewardError> {
        let r = self.post_action_rewards(traj)?;
        let total: f64 = set
            .gammas()
            .iter()
            .map(|&g| dot(&r, &discount_weights(g, r.len())))
            .sum();
        Ok(total / set.len() as f64)
    }

    /// `U(τ⁺) − U(τ*)`: positive when the learner's trajectory is worth more
    /// than the demonstration under the current reward.
    pub fn utility_margin(
        &self,
        learner: &Trajectory,
        demo: &Trajectory,
        set: &DiscountSet,
    ) -> Result<f64, RewardError> {
        if learner.env != demo.env {
            return Err(RewardError::EnvMismatch(learner.env, demo.env));
        }
        Ok(self.stereo_utility(learner, set)? - self.stereo_utility(demo, set)?)
    }

    /// `grad += scale · Σ_j w_j ∇φ g(s_j)` over post-action states.
    fn accumulate_weighted(
        &self,
        traj: &Trajectory,
        weights: &[f64],
        scale: f64,
        grad: &mut Gradient,
    ) -> Result<(), RewardError> {
        for (s, w) in traj.states[1..].iter().zip(weights) {
            self.net.accumulate_backward_logits(
                &map_input(self.input.as_ref(), s),
                &[scale * w],
                grad,
            )?;
        }
        Ok(())
    }

    /// Gradient of
    /// `L(φ) = −(1−ρ)/n Σ_k G(τ_k, γ) + ρ (U(τ⁺) − U(τ*))`
    /// with respect to the reward parameters.
    #[allow(clippy::too_many_arguments)]
    pub fn phi_gradient(
        &self,
        sampled: &[&Trajectory],
        learner: &Trajectory,
        demo: &Trajectory,
        gamma: f64,
        set: &DiscountSet,
        rho: f64,
        return_term: ReturnTerm,
    ) -> Result<Gradient, RewardError> {
        if sampled.is_empty() {
            return Err(RewardError::EmptySample);
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(RewardError::InvalidRho(rho));
        }
        check_gamma(gamma)?;
        if learner.env != demo.env {
            return Err(RewardError::EnvMismatch(learner.env, demo.env));
        }
        for t in sampled.iter().copied().chain([learner, demo]) {
            if t.is_empty() {
                return Err(RewardError::EmptyTrajectory);
            }
        }

        let mut grad = self.net.zero_gradient();
        let n = sampled.len() as f64;
        let first_scale = -(1.0 - rho) / n;
        if first_scale != 0.0 {
            for traj in sampled {
                let w = match return_term {
                    ReturnTerm::Discounted => discount_weights(gamma, traj.len()),
                    ReturnTerm::Stereo => set.weights(traj.len()),
                };
                self.accumulate_weighted(traj, &w, first_scale, &mut grad)?;
            }
        }
        if rho != 0.0 {
            self.accumulate_weighted(learner, &set.weights(learner.len()), rho, &mut grad)?;
            self.accumulate_weighted(demo, &set.weights(demo.len()), -rho, &mut grad)?;
        }
        Ok(grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::State;
    use crate::net::numeric_gradient;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    /// Reward net whose output is the constant `c`.
    fn constant(c: f64, dim: usize) -> RewardModel {
        let mut params = vec![0.0; dim + 1];
        params[dim] = c;
        RewardModel::new(
            Network::from_params(&[dim, 1], OutputActivation::Identity, params).unwrap(),
        )
        .unwrap()
    }

    fn traj(env: EnvId, states: Vec<Vec<f64>>) -> Trajectory {
        Trajectory::new(env, states.into_iter().map(State).collect(), None, false).unwrap()
    }

    fn random_traj(rng: &mut SimRng, len: usize) -> Trajectory {
        let states = (0..=len)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        traj(EnvId::CartPole, states)
    }

    /// Independent summation: plain loop with `powi`.
    fn loop_return(model: &RewardModel, t: &Trajectory, gamma: f64) -> f64 {
        let mut total = 0.0;
        for j in 1..=t.len() {
            total += gamma.powi(j as i32 - 1) * model.immediate_reward(&t.states[j]).unwrap();
        }
        total
    }

    #[test]
    fn zero_model_gives_zero_reward() {
        let m = RewardModel::new(Network::zeros(&[4, 8, 1], OutputActivation::Identity).unwrap())
            .unwrap();
        assert_eq!(m.immediate_reward(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.0);
    }

    #[test]
    fn geometric_returns() {
        let m = constant(1.0, 4);
        let t = traj(EnvId::CartPole, vec![vec![0.0; 4]; 4]);
        assert_eq!(m.discounted_return(&t, 0.5).unwrap(), 1.75);
        let c = constant(2.5, 4);
        assert_eq!(c.discounted_return(&t, 1.0).unwrap(), 7.5);
    }

    #[test]
    fn stereo_of_two_step_constant() {
        let m = constant(1.0, 4);
        let t = traj(EnvId::CartPole, vec![vec![0.0; 4]; 3]);
        let set = DiscountSet::new(vec![0.5, 1.0]).unwrap();
        assert_eq!(m.stereo_utility(&t, &set).unwrap(), 1.75);
    }

    #[test]
    fn empty_trajectory_rejected() {
        let m = constant(1.0, 4);
        let t = traj(EnvId::CartPole, vec![vec![0.0; 4]]);
        assert!(matches!(
            m.discounted_return(&t, 0.9),
            Err(RewardError::EmptyTrajectory)
        ));
    }

    #[test]
    fn discount_set_validation() {
        assert!(matches!(
            DiscountSet::new(vec![]),
            Err(RewardError::EmptyDiscountSet)
        ));
        assert!(matches!(
            DiscountSet::new(vec![0.9, 0.9]),
            Err(RewardError::DuplicateGamma(_))
        ));
        assert!(matches!(
            DiscountSet::new(vec![0.0]),
            Err(RewardError::InvalidGamma(_))
        ));
        assert!(matches!(
            DiscountSet::new(vec![1.01]),
            Err(RewardError::InvalidGamma(_))
        ));
        assert!(DiscountSet::new(vec![1.0]).is_ok());
    }

    #[test]
    fn returns_match_loop_oracle() {
        let mut rng = rng_from_seed(21);
        for _ in 0..20 {
            let m = RewardModel::random(4, &[16], &mut rng).unwrap();
            let t = random_traj(&mut rng, 37);
            for gamma in [0.5, 0.9, 0.995, 1.0] {
                let a = m.discounted_return(&t, gamma).unwrap();
                let b = loop_return(&m, &t, gamma);
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
            let set = DiscountSet::new(vec![0.9, 0.995]).unwrap();
            let u = m.stereo_utility(&t, &set).unwrap();
            let oracle = (loop_return(&m, &t, 0.9) + loop_return(&m, &t, 0.995)) / 2.0;
            assert!((u - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn margin_manual_arithmetic() {
        // g(s) = 2 s0 - s1 + 0.5
        let net = Network::from_params(&[2, 1], OutputActivation::Identity, vec![2.0, -1.0, 0.5])
            .unwrap();
        let m = RewardModel::new(net).unwrap();
        let plus = traj(
            EnvId::MountainCarDiscrete,
            vec![vec![-0.5, 0.0], vec![-0.4, 0.01], vec![-0.3, 0.02]],
        );
        let star = traj(
            EnvId::MountainCarDiscrete,
            vec![vec![-0.5, 0.0], vec![0.1, 0.05], vec![0.3, 0.06]],
        );
        let set = DiscountSet::new(vec![0.5, 1.0]).unwrap();
        // plus rewards: -0.31, -0.12 ; star rewards: 0.65, 1.04
        let u_plus = ((-0.31 + 0.5 * -0.12) + (-0.31 - 0.12)) / 2.0;
        let u_star = ((0.65 + 0.5 * 1.04) + (0.65 + 1.04)) / 2.0;
        let d = m.utility_margin(&plus, &star, &set).unwrap();
        assert!((d - (u_plus - u_star)).abs() < 1e-12);
        assert_eq!(m.utility_margin(&plus, &plus, &set).unwrap(), 0.0);
    }

    #[test]
    fn margin_env_mismatch() {
        let m = constant(1.0, 2);
        let a = traj(EnvId::MountainCarDiscrete, vec![vec![0.0; 2]; 2]);
        let b = traj(EnvId::MountainCarContinuous, vec![vec![0.0; 2]; 2]);
        let set = DiscountSet::new(vec![0.9]).unwrap();
        assert!(matches!(
            m.utility_margin(&a, &b, &set),
            Err(RewardError::EnvMismatch(..))
        ));
    }

    #[test]
    fn rho_zero_is_pure_return_term() {
        let mut rng = rng_from_seed(5);
        let m = RewardModel::random(4, &[8], &mut rng).unwrap();
        let a = random_traj(&mut rng, 5);
        let b = random_traj(&mut rng, 7);
        let plus = random_traj(&mut rng, 3);
        let star = random_traj(&mut rng, 9);
        let set = DiscountSet::new(vec![0.9, 0.995]).unwrap();
        let g = m
            .phi_gradient(
                &[&a, &b],
                &plus,
                &star,
                0.99,
                &set,
                0.0,
                ReturnTerm::Discounted,
            )
            .unwrap();
        let mut expected = m.net().zero_gradient();
        for t in [&a, &b] {
            for j in 1..=t.len() {
                let gj = m.net().backward(&t.states[j], &[1.0]).unwrap();
                expected.add_scaled(&gj, -0.5 * 0.99f64.powi(j as i32 - 1));
            }
        }
        for (x, y) in g.as_slice().iter().zip(expected.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_pair_contributes_nothing() {
        let mut rng = rng_from_seed(6);
        let m = RewardModel::random(4, &[8], &mut rng).unwrap();
        let s = random_traj(&mut rng, 6);
        let same = random_traj(&mut rng, 12);
        let set = DiscountSet::new(vec![0.9, 0.995]).unwrap();
        let with_margin = m
            .phi_gradient(
                &[&s],
                &same,
                &same,
                0.995,
                &set,
                0.75,
                ReturnTerm::Discounted,
            )
            .unwrap();
        let rho0 = m
            .phi_gradient(
                &[&s],
                &same,
                &same,
                0.995,
                &set,
                0.0,
                ReturnTerm::Discounted,
            )
            .unwrap();
        for (x, y) in with_margin.as_slice().iter().zip(rho0.as_slice()) {
            assert!((x - 0.25 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(7);
        let set = DiscountSet::new(vec![0.9, 0.995]).unwrap();
        let mut done = 0;
        while done < 10 {
            let m = RewardModel::random(4, &[16], &mut rng).unwrap();
            let sampled = [random_traj(&mut rng, 8), random_traj(&mut rng, 4)];
            let plus = random_traj(&mut rng, 6);
            let star = random_traj(&mut rng, 11);
            let all_states = sampled
                .iter()
                .chain([&plus, &star])
                .flat_map(|t| t.states.iter());
            let near_kink = all_states.clone().any(|s| {
                m.net()
                    .hidden_preactivations(s)
                    .unwrap()
                    .iter()
                    .any(|z| z.abs() < 1e-4)
            });
            if near_kink {
                continue;
            }
            let rho = 0.6;
            let gamma = 0.97;
            let refs: Vec<&Trajectory> = sampled.iter().collect();
            let analytic = m
                .phi_gradient(
                    &refs,
                    &plus,
                    &star,
                    gamma,
                    &set,
                    rho,
                    ReturnTerm::Discounted,
                )
                .unwrap();
            let numeric = numeric_gradient(m.net(), 1e-5, |net| {
                let probe = RewardModel::new(net.clone()).unwrap();
                let mean_g: f64 = sampled
                    .iter()
                    .map(|t| loop_return(&probe, t, gamma))
                    .sum::<f64>()
                    / 2.0;
                let u = |t: &Trajectory| {
                    (loop_return(&probe, t, 0.9) + loop_return(&probe, t, 0.995)) / 2.0
                };
                -(1.0 - rho) * mean_g + rho * (u(&plus) - u(&star))
            });
            let err = crate::net::max_relative_error(analytic.as_slice(), &numeric);
            assert!(err < 1e-4, "relative error {err}");
            done += 1;
        }
    }

    #[test]
    fn phi_gradient_errors() {
        let m = constant(1.0, 4);
        let t = traj(EnvId::CartPole, vec![vec![0.0; 4]; 3]);
        let set = DiscountSet::new(vec![0.9]).unwrap();
        assert!(matches!(
            m.phi_gradient(&[], &t, &t, 0.9, &set, 0.5, ReturnTerm::Discounted),
            Err(RewardError::EmptySample)
        ));
        assert!(matches!(
            m.phi_gradient(&[&t], &t, &t, 0.9, &set, 1.0, ReturnTerm::Discounted),
            Err(RewardError::InvalidRho(_))
        ));
    }

    proptest! {
        #[test]
        fn singleton_set_reduces_to_return(seed in any::<u64>(), len in 1usize..40, gamma in 0.01f64..=1.0) {
            let mut rng = rng_from_seed(seed);
            let m = RewardModel::random(4, &[8], &mut rng).unwrap();
            let t = random_traj(&mut rng, len);
            let set = DiscountSet::new(vec![gamma]).unwrap();
            prop_assert_eq!(m.stereo_utility(&t, &set).unwrap(), m.discounted_return(&t, gamma).unwrap());
        }

        #[test]
        fn output_layer_linearity(seed in any::<u64>(), len in 1usize..20) {
            let mut rng = rng_from_seed(seed);
            let mut m = RewardModel::random(4, &[8], &mut rng).unwrap();
            let t = random_traj(&mut rng, len);
            let g1 = m.discounted_return(&t, 0.9).unwrap();
            // hidden biases are zero at init; scale the output layer only
            let n = m.net().num_params();
            for p in &mut m.net_mut().params_mut()[n - 9..] {
                *p *= 2.0;
            }
            let g2 = m.discounted_return(&t, 0.9).unwrap();
            prop_assert!((g2 - 2.0 * g1).abs() <= 1e-12 * g1.abs().max(1.0));
        }
    }
}
