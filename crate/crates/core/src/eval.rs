//! Evaluation harness: paired trials, discount-set ablation, the two
//! baselines (actor-critic on the environment reward, behaviour cloning) and
//! reward-surface grids.
//!
//! Paired trials draw one initial state per trial and replay it for every
//! contestant, with the same action-sampling stream, so two identical
//! contestants produce identical rows. Standard deviations are population
//! standard deviations.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::actor_critic::{ActMode, PolicyError, PolicyModel};
use crate::env::{reset, rollout, Action, Controller, EnvError, EnvId, State};
use crate::experts::{Demonstration, Demonstrator};
use crate::net::Direction;
use crate::optim::{Optimizer, OptimizerKind};
use crate::reward::{DiscountSet, RewardError, RewardModel};
use crate::rng::{self, streams};
use crate::train::{train, train_env_reward_ac, EnvAcConfig, RpclConfig, TrainFailure, TrainLog};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Train(#[from] TrainFailure),
    #[error("paired evaluation needs at least {needed} contestants, got {got}")]
    TooFewContestants { needed: usize, got: usize },
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("contestant `{0}` cannot act in {1}")]
    EnvMismatch(String, EnvId),
    #[error("contestant `{0}` is a recorded store and cannot act")]
    CannotAct(String),
    #[error("demonstration {0} carries no actions")]
    MissingActions(usize),
    #[error("no demonstrations given")]
    NoDemos,
    #[error("invalid surface: {0}")]
    Surface(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Aggregate over evaluation trials.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub trials: usize,
    pub mean_steps: f64,
    pub std_steps: f64,
    pub mean_env_score: f64,
    pub std_env_score: f64,
    /// Trials in which the task was accomplished.
    pub completions: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalStats {
    /// Two-pass mean and population standard deviation. `None` for no trials.
    pub fn from_trials(rows: &[TrialRecord]) -> Option<Self> {
        if rows.is_empty() {
            return None;
        }
        let steps: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
        let scores: Vec<f64> = rows.iter().map(|r| r.env_score).collect();
        let (mean_steps, std_steps) = mean_std(&steps);
        let (mean_env_score, std_env_score) = mean_std(&scores);
        Some(EvalStats {
            trials: rows.len(),
            mean_steps,
            std_steps,
            mean_env_score,
            std_env_score,
            completions: rows.iter().filter(|r| r.completed).count(),
        })
    }
}

/// Something that can be evaluated: a policy in a given mode, or a
/// controller-backed demonstrator.
#[derive(Clone, Debug)]
pub enum Agent {
    Policy(PolicyModel, ActMode),
    Demonstrator(Demonstrator),
}

#[derive(Clone, Debug)]
pub struct Contestant {
    pub label: String,
    pub agent: Agent,
}

impl Contestant {
    pub fn policy(label: impl Into<String>, policy: PolicyModel, mode: ActMode) -> Self {
        Contestant {
            label: label.into(),
            agent: Agent::Policy(policy, mode),
        }
    }

    pub fn demonstrator(label: impl Into<String>, demo: Demonstrator) -> Self {
        Contestant {
            label: label.into(),
            agent: Agent::Demonstrator(demo),
        }
    }

    fn controller(&self, env: EnvId) -> Result<Box<dyn Controller + Sync + '_>, EvalError> {
        match &self.agent {
            Agent::Policy(p, mode) => {
                if !p.fits(env) {
                    return Err(EvalError::EnvMismatch(self.label.clone(), env));
                }
                Ok(Box::new(p.controller(*mode)))
            }
            Agent::Demonstrator(d) => {
                if !d.supports(env) {
                    return Err(EvalError::EnvMismatch(self.label.clone(), env));
                }
                d.controller()
                    .ok_or_else(|| EvalError::CannotAct(self.label.clone()))
            }
        }
    }
}

/// One contestant's result in one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub policy: String,
    pub initial_state: State,
    pub steps: usize,
    pub env_score: f64,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedEval {
    /// Per contestant, in input order.
    pub stats: Vec<(String, EvalStats)>,
    /// Trial-major, contestant-minor.
    pub trials: Vec<TrialRecord>,
}

impl PairedEval {
    pub fn stats_for(&self, label: &str) -> Option<&EvalStats> {
        self.stats.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }

    pub fn trials_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial", "policy", "steps", "env_score"])
            .expect("in-memory write");
        for r in &self.trials {
            w.write_record([
                r.trial.to_string(),
                r.policy.clone(),
                r.steps.to_string(),
                r.env_score.to_string(),
            ])
            .expect("in-memory write");
        }
        into_string(w)
    }

    pub fn summary_csv(&self) -> String {
        summary_csv(self.stats.iter().map(|(l, s)| (l.as_str(), Some(s))))
    }
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "policy",
    "trials",
    "mean_steps",
    "std_steps",
    "mean_env_score",
    "std_env_score",
    "completions",
];

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Summary table; `None` rows are written as `Fail`.
pub fn summary_csv<'a>(rows: impl IntoIterator<Item = (&'a str, Option<&'a EvalStats>)>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for (label, stats) in rows {
        let rec = match stats {
            Some(s) => vec![
                label.to_string(),
                s.trials.to_string(),
                s.mean_steps.to_string(),
                s.std_steps.to_string(),
                s.mean_env_score.to_string(),
                s.std_env_score.to_string(),
                s.completions.to_string(),
            ],
            None => {
                let mut r = vec![label.to_string()];
                r.extend(std::iter::repeat_n(
                    "Fail".to_string(),
                    SUMMARY_HEADER.len() - 1,
                ));
                r
            }
        };
        w.write_record(&rec).expect("in-memory write");
    }
    into_string(w)
}

/// Evaluation budget shared by the harness operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalSpec {
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 or 1 runs on the calling thread.
    pub workers: usize,
}

impl EvalSpec {
    pub fn new(trials: usize, seed: u64) -> Self {
        EvalSpec {
            trials,
            seed,
            workers: 1,
        }
    }
}

/// Paired trials of at least two contestants.
pub fn paired_eval(
    contestants: &[Contestant],
    env: EnvId,
    spec: EvalSpec,
) -> Result<PairedEval, EvalError> {
    if contestants.len() < 2 {
        return Err(EvalError::TooFewContestants {
            needed: 2,
            got: contestants.len(),
        });
    }
    trial_table(contestants, env, spec)
}

/// Trials of a single contestant, with the same initial states a paired
/// evaluation under `spec` would use.
pub fn evaluate(
    contestant: &Contestant,
    env: EnvId,
    spec: EvalSpec,
) -> Result<EvalStats, EvalError> {
    let out = trial_table(std::slice::from_ref(contestant), env, spec)?;
    Ok(out.stats.into_iter().next().expect("one contestant").1)
}

/// Trials of one or more contestants on shared initial states.
pub fn trial_table(
    contestants: &[Contestant],
    env: EnvId,
    spec: EvalSpec,
) -> Result<PairedEval, EvalError> {
    if spec.trials == 0 {
        return Err(EvalError::NoTrials);
    }
    let controllers = contestants
        .iter()
        .map(|c| c.controller(env))
        .collect::<Result<Vec<_>, _>>()?;
    let base = rng::derive_seed(spec.seed, streams::EVAL);
    let one_trial = |trial: usize| -> Result<Vec<TrialRecord>, EvalError> {
        let trial_seed = rng::derive_seed(base, trial as u64);
        let s0 = reset(env, &mut rng::stream(trial_seed, 0));
        let mut rows = Vec::with_capacity(controllers.len());
        for (c, ctl) in contestants.iter().zip(&controllers) {
            let mut act_rng = rng::stream(trial_seed, 1);
            let traj = rollout(
                env,
                &**ctl,
                &mut act_rng,
                env.episode_cap(),
                Some(s0.clone()),
            )?;
            rows.push(TrialRecord {
                trial,
                policy: c.label.clone(),
                initial_state: s0.clone(),
                steps: traj.len(),
                env_score: traj.env_rewards().reveal_total(),
                completed: traj.task_completed(),
            });
        }
        Ok(rows)
    };
    let per_trial: Vec<Vec<TrialRecord>> = if spec.workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.workers)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?;
        pool.install(|| {
            (0..spec.trials)
                .into_par_iter()
                .map(one_trial)
                .collect::<Result<_, _>>()
        })?
    } else {
        (0..spec.trials).map(one_trial).collect::<Result<_, _>>()?
    };
    let trials: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
    let stats = contestants
        .iter()
        .map(|c| {
            let rows: Vec<TrialRecord> = trials
                .iter()
                .filter(|r| r.policy == c.label)
                .cloned()
                .collect();
            (
                c.label.clone(),
                EvalStats::from_trials(&rows).expect("trials >= 1"),
            )
        })
        .collect();
    Ok(PairedEval { stats, trials })
}

/// The discount sets compared in the ablation table.
pub fn ablation_sets() -> Vec<DiscountSet> {
    [
        vec![0.9],
        vec![0.995],
        vec![0.9, 0.995],
        vec![0.9, 0.99, 0.995],
    ]
    .into_iter()
    .map(|g| DiscountSet::new(g).expect("valid set"))
    .collect()
}

/// Trials used to decide whether an ablation run failed outright.
pub const FAIL_CHECK_TRIALS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub enum AblationOutcome {
    Stats(EvalStats),
    /// Training aborted, or never met its stop condition and the final policy
    /// completed none of the check trials.
    Fail(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub set: DiscountSet,
    pub outcome: AblationOutcome,
}

impl AblationRow {
    pub fn label(&self) -> String {
        let gs: Vec<String> = self.set.gammas().iter().map(|g| g.to_string()).collect();
        format!("{{{}}}", gs.join(","))
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let labels: Vec<String> = rows.iter().map(AblationRow::label).collect();
    summary_csv(labels.iter().zip(rows).map(|(l, r)| {
        let stats = match &r.outcome {
            AblationOutcome::Stats(s) => Some(s),
            AblationOutcome::Fail(_) => None,
        };
        (l.as_str(), stats)
    }))
}

fn stop_met(config: &RpclConfig, log: &TrainLog) -> bool {
    log.records.len() < config.max_episodes || config.stop.holds(log)
}

/// One full training run per discount set, each started from the configured
/// seed, then evaluated against the demonstrator on paired trials when it can
/// act. Failures are rows, not errors.
pub fn ablate_discount_sets(
    env: EnvId,
    sets: &[DiscountSet],
    config: &RpclConfig,
    expert: &Demonstrator,
    spec: EvalSpec,
    mode: ActMode,
) -> Vec<AblationRow> {
    sets.iter()
        .map(|set| {
            let mut cfg = config.clone();
            cfg.discount_set = set.clone();
            let outcome = ablation_run(env, &cfg, expert, spec, mode)
                .unwrap_or_else(|e| AblationOutcome::Fail(e.to_string()));
            AblationRow {
                set: set.clone(),
                outcome,
            }
        })
        .collect()
}

fn ablation_run(
    env: EnvId,
    cfg: &RpclConfig,
    expert: &Demonstrator,
    spec: EvalSpec,
    mode: ActMode,
) -> Result<AblationOutcome, EvalError> {
    let out = train(cfg, env, expert)?;
    let learner = Contestant::policy("rpcl", out.models.policy, mode);
    if !stop_met(cfg, &out.log) {
        let check = evaluate(
            &learner,
            env,
            EvalSpec {
                trials: FAIL_CHECK_TRIALS,
                ..spec
            },
        )?;
        if check.completions == 0 {
            return Ok(AblationOutcome::Fail(format!(
                "stop condition never met and 0 of {FAIL_CHECK_TRIALS} trials completed"
            )));
        }
    }
    let stats = if expert.controller().is_some() {
        let pe = paired_eval(
            &[learner, Contestant::demonstrator("expert", expert.clone())],
            env,
            spec,
        )?;
        pe.stats.into_iter().next().expect("learner row").1
    } else {
        evaluate(&learner, env, spec)?
    };
    Ok(AblationOutcome::Stats(stats))
}

/// Actor-critic with the same architecture and step sizes as `config`,
/// trained on the environment's own reward.
pub fn ac_env_reward_train(env: EnvId, config: &RpclConfig) -> Result<PolicyModel, TrainFailure> {
    config.validate().map_err(|error| TrainFailure {
        error,
        log: TrainLog::default(),
    })?;
    Ok(train_env_reward_ac(env, &EnvAcConfig::from_rpcl(config), |_, _| {})?.policy)
}

/// Supervised fit of a policy to demonstrated actions.
#[derive(Clone, Debug, PartialEq)]
pub struct BcConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Pairs per gradient step; 0 uses the whole dataset.
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl BcConfig {
    pub fn defaults_for(env: EnvId) -> Self {
        BcConfig {
            hidden: RpclConfig::defaults_for(env).policy_hidden,
            epochs: 200,
            lr: 0.01,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BcOutcome {
    pub policy: PolicyModel,
    /// Mean negative log-likelihood over the dataset after each epoch,
    /// preceded by its value at initialisation.
    pub losses: Vec<f64>,
}

/// (state, action) pairs of demonstrations, all of which must carry actions.
fn bc_pairs(demos: &[Demonstration]) -> Result<Vec<(&[f64], Action)>, EvalError> {
    if demos.is_empty() {
        return Err(EvalError::NoDemos);
    }
    let mut pairs = Vec::new();
    for (i, d) in demos.iter().enumerate() {
        let acts = d
            .trajectory
            .actions
            .as_ref()
            .ok_or(EvalError::MissingActions(i))?;
        pairs.extend(
            d.trajectory
                .states
                .iter()
                .zip(acts)
                .map(|(s, a)| (s.0.as_slice(), *a)),
        );
    }
    Ok(pairs)
}

fn mean_nll(policy: &PolicyModel, pairs: &[(&[f64], Action)]) -> Result<f64, EvalError> {
    let mut total = 0.0;
    for (s, a) in pairs {
        total -= policy.log_prob(s, *a)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// Maximum-likelihood behaviour cloning: cross-entropy for categorical
/// heads, Gaussian negative log-likelihood for continuous ones, with the
/// pair order reshuffled each epoch from a seeded stream.
pub fn behavior_cloning(
    env: EnvId,
    demos: &[Demonstration],
    cfg: &BcConfig,
) -> Result<BcOutcome, EvalError> {
    let pairs = bc_pairs(demos)?;
    if let Some(d) = demos.iter().find(|d| d.trajectory.env != env) {
        return Err(EvalError::EnvMismatch(d.source.clone(), env));
    }
    let mut policy = PolicyModel::for_env(
        env,
        &cfg.hidden,
        &mut rng::stream(cfg.seed, streams::POLICY_INIT),
    )?;
    let mut opt = Optimizer::new(cfg.optimizer, 0.0);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, streams::SHUFFLE);
    let batch = if cfg.batch_size == 0 {
        pairs.len()
    } else {
        cfg.batch_size
    };
    let mut losses = vec![mean_nll(&policy, &pairs)?];
    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(batch) {
            let mut g = policy.net().zero_gradient();
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (s, a) = pairs[i];
                policy.accumulate_log_prob_gradient(s, a, w, &mut g)?;
            }
            opt.step(policy.net_mut(), &g, cfg.lr, Direction::Ascent)
                .map_err(PolicyError::from)?;
        }
        losses.push(mean_nll(&policy, &pairs)?);
    }
    Ok(BcOutcome { policy, losses })
}

/// Largest action gap still counted as agreement for continuous actions.
pub const CONTINUOUS_AGREEMENT_TOL: f64 = 0.05;

/// Fraction of a demonstration's steps at which the policy's greedy action,
/// taken in the demonstrated state, matches the demonstrated action.
pub fn action_agreement(policy: &PolicyModel, demo: &Demonstration) -> Result<f64, EvalError> {
    let acts = demo
        .trajectory
        .actions
        .as_ref()
        .ok_or(EvalError::MissingActions(0))?;
    if acts.is_empty() {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for (s, a) in demo.trajectory.states.iter().zip(acts) {
        let g = policy.greedy_action(s)?;
        let same = match (g, a) {
            (Action::Discrete(x), Action::Discrete(y)) => x == *y,
            (x, y) => {
                (x.as_f64().clamp(-1.0, 1.0) - y.as_f64().clamp(-1.0, 1.0)).abs()
                    <= CONTINUOUS_AGREEMENT_TOL
            }
        };
        hits += same as usize;
    }
    Ok(hits as f64 / acts.len() as f64)
}

/// One grid axis: a state dimension sampled evenly over `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Axis {
    pub fn samples(&self, resolution: usize) -> Vec<f64> {
        let last = resolution - 1;
        (0..resolution)
            .map(|i| {
                if i == last {
                    self.hi
                } else {
                    self.lo + (self.hi - self.lo) * i as f64 / last as f64
                }
            })
            .collect()
    }
}

/// Default plotting axes: cart position against pole angle for CartPole,
/// position against velocity for MountainCar.
pub fn default_axes(env: EnvId) -> (Axis, Axis) {
    use crate::env::{cartpole, mountain_car};
    match env {
        EnvId::CartPole => (
            Axis {
                dim: 0,
                lo: -cartpole::X_LIMIT,
                hi: cartpole::X_LIMIT,
            },
            Axis {
                dim: 2,
                lo: -cartpole::THETA_LIMIT,
                hi: cartpole::THETA_LIMIT,
            },
        ),
        EnvId::MountainCarDiscrete | EnvId::MountainCarContinuous => (
            Axis {
                dim: 0,
                lo: mountain_car::MIN_POSITION,
                hi: mountain_car::MAX_POSITION,
            },
            Axis {
                dim: 1,
                lo: -mountain_car::MAX_SPEED,
                hi: mountain_car::MAX_SPEED,
            },
        ),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardGrid {
    pub x: Axis,
    pub y: Axis,
    /// Full state used for the dimensions not on an axis.
    pub fixed: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[i][j]` is ĝ at `(xs[i], ys[j])`.
    pub values: Vec<Vec<f64>>,
}

impl RewardGrid {
    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.xs
            .iter()
            .zip(&self.values)
            .flat_map(move |(&x, row)| self.ys.iter().zip(row).map(move |(&y, &v)| (x, y, v)))
    }

    /// Mean value over the cells whose x coordinate satisfies `keep`.
    pub fn mean_where(&self, keep: impl Fn(f64) -> bool) -> Option<f64> {
        let vals: Vec<f64> = self
            .cells()
            .filter(|(x, _, _)| keep(*x))
            .map(|(_, _, v)| v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Population standard deviation over mean magnitude across all cells.
    pub fn coefficient_of_variation(&self) -> f64 {
        let vals: Vec<f64> = self.cells().map(|c| c.2).collect();
        let (mean, std) = mean_std(&vals);
        std / mean.abs()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "y", "value"])
            .expect("in-memory write");
        for (x, y, v) in self.cells() {
            w.write_record([x.to_string(), y.to_string(), v.to_string()])
                .expect("in-memory write");
        }
        into_string(w)
    }
}

/// ĝ over the `resolution × resolution` cross product of the two axes, with
/// every other dimension held at its value in `fixed`.
pub fn reward_surface(
    model: &RewardModel,
    env: EnvId,
    x: Axis,
    y: Axis,
    fixed: &[f64],
    resolution: usize,
) -> Result<RewardGrid, EvalError> {
    let dim = env.state_dim();
    if x.dim >= dim || y.dim >= dim || x.dim == y.dim {
        return Err(EvalError::Surface(format!(
            "axes {} and {} must be distinct dimensions below {dim}",
            x.dim, y.dim
        )));
    }
    if resolution < 2 {
        return Err(EvalError::Surface(format!(
            "resolution {resolution} is below 2"
        )));
    }
    if fixed.len() != dim || !fixed.iter().all(|v| v.is_finite()) {
        return Err(EvalError::Surface(format!(
            "fixed state must hold {dim} finite values"
        )));
    }
    if !(x.lo.is_finite() && x.hi.is_finite() && y.lo.is_finite() && y.hi.is_finite()) {
        return Err(EvalError::Surface("axis bounds must be finite".into()));
    }
    let xs = x.samples(resolution);
    let ys = y.samples(resolution);
    let mut values = Vec::with_capacity(resolution);
    let mut s = fixed.to_vec();
    for &xv in &xs {
        let mut row = Vec::with_capacity(resolution);
        for &yv in &ys {
            s[x.dim] = xv;
            s[y.dim] = yv;
            row.push(model.immediate_reward(&s)?);
        }
        values.push(row);
    }
    Ok(RewardGrid {
        x,
        y,
        fixed: fixed.to_vec(),
        xs,
        ys,
        values,
    })
}
