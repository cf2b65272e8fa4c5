//! Demonstration sources and the demonstration file format.
//!
//! * [`LqrGain`]: bang-bang discretisation of a linear state-feedback law
//!   for CartPole (push right iff `k·s ≥ 0`).
//! * pretrained policies, queried greedily or stochastically;
//! * recorded demonstrations, served by nearest initial state.
//!
//! Demonstration files are JSON lines, one object per demonstration:
//! `{"env":…,"source":…,"states":[[…],…],"actions":[…]|null}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actor_critic::{ActMode, PolicyModel};
use crate::env::{rollout, Action, ActionSpace, Controller, EnvError, EnvId, State, Trajectory};
use crate::rng::SimRng;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("demonstrator cannot act in {0}")]
    WrongEnv(EnvId),
    #[error("no recorded demonstrations to serve")]
    EmptyStore,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// CartPole state-feedback gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LqrGain(pub [f64; 4]);

impl LqrGain {
    /// Gain from the CartPole linearisation with the reference physics.
    pub const CARTPOLE: LqrGain = LqrGain([-0.9299, -2.0221, 32.3251, 11.0069]);

    pub fn dot(&self, s: &[f64]) -> f64 {
        self.0.iter().zip(s).map(|(k, x)| k * x).sum()
    }
}

impl Default for LqrGain {
    fn default() -> Self {
        Self::CARTPOLE
    }
}

/// Discretised control: action 1 (push right, positive force) iff `k·s ≥ 0`.
///
/// A positive pole angle (leaning right) must be caught by pushing right, and
/// the dominant angle gain is positive, so the sign maps directly.
pub fn lqr_action(gain: &LqrGain, s: &[f64]) -> Action {
    if gain.dot(s) >= 0.0 {
        Action::Discrete(1)
    } else {
        Action::Discrete(0)
    }
}

impl Controller for LqrGain {
    fn act(&self, state: &[f64], _rng: &mut SimRng) -> Action {
        lqr_action(self, state)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub trajectory: Trajectory,
    pub source: String,
}

impl Demonstration {
    pub fn initial_state(&self) -> &State {
        self.trajectory.initial_state()
    }
}

#[derive(Clone, Debug)]
pub enum Demonstrator {
    Lqr(LqrGain),
    Pretrained { policy: PolicyModel, mode: ActMode },
    Recorded(Vec<Demonstration>),
}

impl Demonstrator {
    pub fn label(&self) -> &'static str {
        match self {
            Demonstrator::Lqr(_) => "lqr",
            Demonstrator::Pretrained { .. } => "pretrained",
            Demonstrator::Recorded(_) => "recorded",
        }
    }

    pub fn supports(&self, env: EnvId) -> bool {
        match self {
            Demonstrator::Lqr(_) => env == EnvId::CartPole,
            Demonstrator::Pretrained { policy, .. } => policy.fits(env),
            Demonstrator::Recorded(demos) => demos.iter().all(|d| d.trajectory.env == env),
        }
    }

    /// Demonstration starting from `s0`. Controller-backed kinds roll out from
    /// exactly `s0`; recorded stores return the demonstration whose initial
    /// state is nearest in Euclidean distance.
    pub fn demonstrate(
        &self,
        env: EnvId,
        s0: &State,
        max_steps: usize,
        rng: &mut SimRng,
    ) -> Result<Demonstration, ExpertError> {
        if !self.supports(env) {
            return Err(ExpertError::WrongEnv(env));
        }
        let trajectory = match self {
            Demonstrator::Lqr(gain) => rollout(env, gain, rng, max_steps, Some(s0.clone()))?,
            Demonstrator::Pretrained { policy, mode } => rollout(
                env,
                &policy.controller(*mode),
                rng,
                max_steps,
                Some(s0.clone()),
            )?,
            Demonstrator::Recorded(demos) => {
                let nearest = demos
                    .iter()
                    .min_by(|a, b| {
                        let da = sq_dist(a.initial_state(), s0);
                        let db = sq_dist(b.initial_state(), s0);
                        da.total_cmp(&db)
                    })
                    .ok_or(ExpertError::EmptyStore)?;
                return Ok(nearest.clone());
            }
        };
        Ok(Demonstration {
            trajectory,
            source: self.label().to_string(),
        })
    }

    /// As a controller, for evaluation. Recorded stores cannot act.
    pub fn controller(&self) -> Option<Box<dyn Controller + Sync + '_>> {
        match self {
            Demonstrator::Lqr(g) => Some(Box::new(*g)),
            Demonstrator::Pretrained { policy, mode } => Some(Box::new(policy.controller(*mode))),
            Demonstrator::Recorded(_) => None,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ActionsRepr {
    Discrete(Vec<usize>),
    Continuous(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemoRecord {
    env: String,
    source: String,
    states: Vec<Vec<f64>>,
    actions: Option<ActionsRepr>,
}

fn to_record(d: &Demonstration) -> DemoRecord {
    let t = &d.trajectory;
    let actions = t.actions.as_ref().map(|acts| match t.env.action_space() {
        ActionSpace::Discrete(_) => ActionsRepr::Discrete(
            acts.iter()
                .map(|a| match a {
                    Action::Discrete(i) => *i,
                    Action::Continuous(_) => unreachable!("validated trajectory"),
                })
                .collect(),
        ),
        ActionSpace::Continuous { .. } => {
            ActionsRepr::Continuous(acts.iter().map(|a| a.as_f64()).collect())
        }
    });
    DemoRecord {
        env: t.env.name().to_string(),
        source: d.source.clone(),
        states: t.states.iter().map(|s| s.0.clone()).collect(),
        actions,
    }
}

fn from_record(rec: DemoRecord) -> Result<Demonstration, String> {
    let env: EnvId = rec.env.parse().map_err(|e: EnvError| e.to_string())?;
    let actions = match (rec.actions, env.action_space()) {
        (None, _) => None,
        (Some(ActionsRepr::Discrete(v)), ActionSpace::Discrete(_)) => {
            Some(v.into_iter().map(Action::Discrete).collect())
        }
        (Some(ActionsRepr::Discrete(v)), ActionSpace::Continuous { .. }) => Some(
            v.into_iter()
                .map(|i| Action::Continuous(i as f64))
                .collect(),
        ),
        (Some(ActionsRepr::Continuous(v)), ActionSpace::Continuous { .. }) => {
            Some(v.into_iter().map(Action::Continuous).collect())
        }
        (Some(ActionsRepr::Continuous(_)), ActionSpace::Discrete(_)) => {
            return Err(format!("non-integer actions for {env}"));
        }
    };
    let states: Vec<State> = rec.states.into_iter().map(State).collect();
    let terminated = states
        .last()
        .is_some_and(|s| s.len() == env.state_dim() && crate::env::is_terminal(env, s));
    let trajectory =
        Trajectory::new(env, states, actions, terminated).map_err(|e| e.to_string())?;
    Ok(Demonstration {
        trajectory,
        source: rec.source,
    })
}

/// Serialises demonstrations as JSON lines.
pub fn demos_to_string(demos: &[Demonstration]) -> String {
    let mut out = String::new();
    for d in demos {
        out.push_str(&serde_json::to_string(&to_record(d)).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses JSON lines; blank lines are skipped. Any malformed line fails the
/// whole load.
pub fn demos_from_str(text: &str) -> Result<Vec<Demonstration>, ExpertError> {
    let mut demos = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| ExpertError::Parse {
            line: i + 1,
            message,
        };
        let rec: DemoRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        demos.push(from_record(rec).map_err(parse_err)?);
    }
    Ok(demos)
}

/// Writes via a temporary file in the target directory and renames it into
/// place.
pub fn save_demos(path: &Path, demos: &[Demonstration]) -> Result<(), ExpertError> {
    write_atomic(path, demos_to_string(demos).as_bytes())?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<Vec<Demonstration>, ExpertError> {
    demos_from_str(&fs::read_to_string(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reset;
    use crate::rng::rng_from_seed;

    #[test]
    fn lqr_boundary_and_signs() {
        let k = LqrGain::CARTPOLE;
        assert_eq!(lqr_action(&k, &[0.0; 4]), Action::Discrete(1));
        assert!((k.dot(&[0.0, 0.0, 0.1, 0.0]) - 3.23251).abs() < 1e-12);
        assert_eq!(lqr_action(&k, &[0.0, 0.0, 0.1, 0.0]), Action::Discrete(1));
        assert_eq!(lqr_action(&k, &[1.0, 0.0, 0.0, 0.0]), Action::Discrete(0));
    }

    #[test]
    fn lqr_balances_from_origin() {
        let d = Demonstrator::Lqr(LqrGain::CARTPOLE);
        let demo = d
            .demonstrate(
                EnvId::CartPole,
                &State(vec![0.0; 4]),
                1000,
                &mut rng_from_seed(0),
            )
            .unwrap();
        assert!(demo.trajectory.len() >= 200, "{}", demo.trajectory.len());
    }

    #[test]
    fn demonstrate_honours_initial_state_bit_for_bit() {
        let d = Demonstrator::Lqr(LqrGain::CARTPOLE);
        let mut rng = rng_from_seed(1);
        for _ in 0..10 {
            let s0 = reset(EnvId::CartPole, &mut rng);
            let demo = d.demonstrate(EnvId::CartPole, &s0, 1000, &mut rng).unwrap();
            assert!(demo
                .initial_state()
                .iter()
                .zip(s0.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn lqr_rejects_other_envs() {
        let d = Demonstrator::Lqr(LqrGain::CARTPOLE);
        let s0 = State(vec![-0.5, 0.0]);
        assert!(matches!(
            d.demonstrate(EnvId::MountainCarDiscrete, &s0, 10, &mut rng_from_seed(0)),
            Err(ExpertError::WrongEnv(_))
        ));
    }

    #[test]
    fn greedy_pretrained_is_deterministic() {
        let mut rng = rng_from_seed(2);
        let policy = PolicyModel::for_env(EnvId::MountainCarDiscrete, &[16], &mut rng).unwrap();
        let d = Demonstrator::Pretrained {
            policy,
            mode: ActMode::Greedy,
        };
        let s0 = State(vec![-0.5, 0.0]);
        let a = d
            .demonstrate(EnvId::MountainCarDiscrete, &s0, 300, &mut rng_from_seed(3))
            .unwrap();
        let b = d
            .demonstrate(EnvId::MountainCarDiscrete, &s0, 300, &mut rng_from_seed(4))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recorded_store_serves_nearest() {
        let mk = |x: f64| Demonstration {
            trajectory: Trajectory::new(
                EnvId::MountainCarDiscrete,
                vec![State(vec![x, 0.0]), State(vec![x + 0.01, 0.001])],
                None,
                false,
            )
            .unwrap(),
            source: format!("at {x}"),
        };
        let single = Demonstrator::Recorded(vec![mk(-0.45)]);
        let mut rng = rng_from_seed(0);
        for x in [-0.6, -0.5, -0.41] {
            let d = single
                .demonstrate(
                    EnvId::MountainCarDiscrete,
                    &State(vec![x, 0.0]),
                    10,
                    &mut rng,
                )
                .unwrap();
            assert_eq!(d.source, "at -0.45");
        }
        let many = Demonstrator::Recorded(vec![mk(-0.6), mk(-0.5), mk(-0.4)]);
        let d = many
            .demonstrate(
                EnvId::MountainCarDiscrete,
                &State(vec![-0.52, 0.0]),
                10,
                &mut rng,
            )
            .unwrap();
        assert_eq!(d.source, "at -0.5");
        let empty = Demonstrator::Recorded(vec![]);
        assert!(matches!(
            empty.demonstrate(
                EnvId::MountainCarDiscrete,
                &State(vec![-0.5, 0.0]),
                10,
                &mut rng
            ),
            Err(ExpertError::EmptyStore)
        ));
    }

    fn sample_demos() -> Vec<Demonstration> {
        let mut rng = rng_from_seed(5);
        let lqr = Demonstrator::Lqr(LqrGain::CARTPOLE);
        let mut demos: Vec<Demonstration> = (0..12)
            .map(|_| {
                let s0 = reset(EnvId::CartPole, &mut rng);
                lqr.demonstrate(EnvId::CartPole, &s0, 60, &mut rng).unwrap()
            })
            .collect();
        let policy = PolicyModel::for_env(EnvId::MountainCarContinuous, &[8], &mut rng).unwrap();
        let p = Demonstrator::Pretrained {
            policy,
            mode: ActMode::Sample,
        };
        let s0 = reset(EnvId::MountainCarContinuous, &mut rng);
        demos.push(
            p.demonstrate(EnvId::MountainCarContinuous, &s0, 40, &mut rng)
                .unwrap(),
        );
        let mut states_only = demos[0].clone();
        states_only.trajectory = states_only.trajectory.states_only();
        demos.push(states_only);
        demos
    }

    #[test]
    fn file_round_trip_is_bit_identical() {
        let demos = sample_demos();
        assert_eq!(demos.len(), 14);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.jsonl");
        save_demos(&path, &demos).unwrap();
        let back = load_demos(&path).unwrap();
        assert_eq!(back.len(), demos.len());
        for (a, b) in demos.iter().zip(&back) {
            assert_eq!(a.source, b.source);
            assert_eq!(a.trajectory.env, b.trajectory.env);
            assert_eq!(a.trajectory.actions, b.trajectory.actions);
            assert_eq!(a.trajectory.terminated, b.trajectory.terminated);
            for (sa, sb) in a.trajectory.states.iter().zip(&b.trajectory.states) {
                assert!(sa
                    .iter()
                    .zip(sb.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        assert_eq!(demos_to_string(&back), demos_to_string(&demos));
    }

    #[test]
    fn truncated_file_fails_whole_load() {
        let text = demos_to_string(&sample_demos());
        let cut = &text[..text.len() - 40];
        match demos_from_str(cut) {
            Err(ExpertError::Parse { line, .. }) => assert_eq!(line, 14),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_list_round_trip() {
        assert_eq!(demos_to_string(&[]), "");
        assert!(demos_from_str("").unwrap().is_empty());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        save_demos(&path, &[]).unwrap();
        assert!(load_demos(&path).unwrap().is_empty());
    }

    #[test]
    fn semantic_errors_carry_line_numbers() {
        let good = demos_to_string(&sample_demos()[..1]);
        let bad = r#"{"env":"cartpole","source":"x","states":[[0,0,0]],"actions":null}"#;
        match demos_from_str(&format!("{good}{bad}\n")) {
            Err(ExpertError::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        let wrong_env = r#"{"env":"pendulum","source":"x","states":[[0,0]],"actions":null}"#;
        assert!(matches!(
            demos_from_str(wrong_env),
            Err(ExpertError::Parse { line: 1, .. })
        ));
    }
}
