//! Flat `key = value` configuration files.
//!
//! One key per line, `#` starts a comment, blank lines are ignored. Every
//! training key must be present exactly once and unknown keys are rejected.
//! Lists (the discount set and hidden widths) are comma-separated; an empty
//! hidden list means no hidden layer.
//!
//! Alongside the training hyperparameters a file names the environment, the
//! demonstrator and optionally an output directory. Relative paths are
//! resolved against the directory holding the file.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::actor_critic::{ActMode, PolicyModel};
use crate::env::{EnvError, EnvId};
use crate::experts::{load_demos, Demonstrator, ExpertError, LqrGain};
use crate::net::{NetError, Network};
use crate::optim::OptimizerKind;
use crate::reward::{DiscountSet, ReturnTerm};
use crate::train::{RpclConfig, StopCondition, StopRule, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{0}` given more than once")]
    DuplicateKey(String),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("key `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
    #[error(transparent)]
    Rejected(#[from] TrainError),
}

/// Where demonstrations come from.
#[derive(Clone, Debug, PartialEq)]
pub enum ExpertSource {
    Lqr,
    /// Policy network checkpoint.
    Checkpoint(PathBuf),
    /// Recorded demonstration file.
    Demos(PathBuf),
}

impl ExpertSource {
    /// The built-in LQR for CartPole, the shipped checkpoints otherwise.
    pub fn default_for(env: EnvId) -> Self {
        match env {
            EnvId::CartPole => ExpertSource::Lqr,
            _ => ExpertSource::Checkpoint(shipped_expert_path(env)),
        }
    }

    fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let text = text.trim();
        if text == "lqr" {
            return Ok(ExpertSource::Lqr);
        }
        if text == "default" {
            return Err("`default` is resolved per environment by the caller".into());
        }
        match text.split_once(':') {
            Some(("checkpoint", p)) if !p.trim().is_empty() => {
                Ok(ExpertSource::Checkpoint(base.join(p.trim())))
            }
            Some(("demos", p)) if !p.trim().is_empty() => {
                Ok(ExpertSource::Demos(base.join(p.trim())))
            }
            _ => Err(format!(
                "`{text}` is not one of lqr, default, checkpoint:<path>, demos:<path>"
            )),
        }
    }

    fn render(&self) -> String {
        match self {
            ExpertSource::Lqr => "lqr".into(),
            ExpertSource::Checkpoint(p) => format!("checkpoint:{}", p.display()),
            ExpertSource::Demos(p) => format!("demos:{}", p.display()),
        }
    }

    pub fn load(&self, env: EnvId, mode: ActMode) -> Result<Demonstrator, ExpertLoadError> {
        let demo = match self {
            ExpertSource::Lqr => Demonstrator::Lqr(LqrGain::CARTPOLE),
            ExpertSource::Checkpoint(p) => {
                let net = Network::load(p)?;
                let policy = PolicyModel::from_network(env, net)
                    .map_err(|e| ExpertLoadError::Shape(p.clone(), e.to_string()))?;
                Demonstrator::Pretrained { policy, mode }
            }
            ExpertSource::Demos(p) => Demonstrator::Recorded(load_demos(p)?),
        };
        if !demo.supports(env) {
            return Err(ExpertError::WrongEnv(env).into());
        }
        Ok(demo)
    }
}

#[derive(Debug, Error)]
pub enum ExpertLoadError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error("{0}: {1}")]
    Shape(PathBuf, String),
}

/// Checkpoint shipped for a MountainCar task, regenerable with
/// `rpcl train-expert`.
pub fn shipped_expert_path(env: EnvId) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("experts")
        .join(format!("{}.json", env.name()))
}

/// Directory of the per-environment configuration files shipped in-repo.
pub fn shipped_config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

/// Everything in a configuration file besides the training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RunDescriptor {
    pub env: EnvId,
    pub expert: ExpertSource,
    /// How a checkpoint demonstrator picks actions.
    pub expert_mode: ActMode,
    pub out: Option<PathBuf>,
}

impl RunDescriptor {
    pub fn defaults_for(env: EnvId) -> Self {
        RunDescriptor {
            env,
            expert: ExpertSource::default_for(env),
            expert_mode: ActMode::Sample,
            out: None,
        }
    }
}

const DESCRIPTOR_KEYS: [&str; 4] = ["env", "expert", "expert_mode", "out"];

const TRAIN_KEYS: [&str; 25] = [
    "rho",
    "eta",
    "gamma",
    "discount_set",
    "min_episodes",
    "phi_updates_per_block",
    "max_episodes",
    "reward_lr",
    "policy_lr",
    "critic_lr",
    "sample_count",
    "inventory_capacity",
    "policy_hidden",
    "reward_hidden",
    "critic_hidden",
    "seed",
    "stop_window",
    "stop_threshold",
    "stop_rule",
    "return_term",
    "normalize_advantages",
    "reward_weight_decay",
    "optimizer",
    "max_grad_norm",
    "reward_max_grad_norm",
];

struct Entries(Vec<(String, String, bool)>);

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut out: Vec<(String, String, bool)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1 });
            }
            if !TRAIN_KEYS.contains(&k) && !DESCRIPTOR_KEYS.contains(&k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            if out.iter().any(|(seen, _, _)| seen == k) {
                return Err(ConfigError::DuplicateKey(k.to_string()));
            }
            out.push((k.to_string(), v.trim().to_string(), false));
        }
        Ok(Entries(out))
    }

    fn get(&mut self, key: &'static str) -> Option<&str> {
        let e = self.0.iter_mut().find(|(k, _, _)| k == key)?;
        e.2 = true;
        Some(e.1.as_str())
    }

    fn require(&mut self, key: &'static str) -> Result<&str, ConfigError> {
        self.get(key).ok_or(ConfigError::MissingKey(key))
    }

    fn typed<T: FromStr>(&mut self, key: &'static str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        v.parse::<T>().map_err(|e| ConfigError::Invalid {
            key,
            message: format!("`{v}`: {e}"),
        })
    }

    fn list<T: FromStr>(&mut self, key: &'static str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.require(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|item| {
                item.trim().parse::<T>().map_err(|e| ConfigError::Invalid {
                    key,
                    message: format!("`{}`: {e}", item.trim()),
                })
            })
            .collect()
    }
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        message: message.into(),
    }
}

fn parse_bool(key: &'static str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(invalid(key, format!("`{v}` is not true or false"))),
    }
}

fn parse_mode(key: &'static str, v: &str) -> Result<ActMode, ConfigError> {
    match v {
        "sample" => Ok(ActMode::Sample),
        "greedy" => Ok(ActMode::Greedy),
        _ => Err(invalid(key, format!("`{v}` is not sample or greedy"))),
    }
}

fn mode_name(m: ActMode) -> &'static str {
    match m {
        ActMode::Sample => "sample",
        ActMode::Greedy => "greedy",
    }
}

/// Parses a configuration document; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<(RpclConfig, RunDescriptor), ConfigError> {
    let mut e = Entries::parse(text)?;
    let env_text = e.require("env")?.to_string();
    let env: EnvId = env_text
        .parse()
        .map_err(|err: EnvError| invalid("env", err.to_string()))?;
    let expert = match e.get("expert") {
        None | Some("default") => ExpertSource::default_for(env),
        Some(v) => ExpertSource::parse(v, base).map_err(|m| invalid("expert", m))?,
    };
    let expert_mode = match e.get("expert_mode") {
        None => ActMode::Sample,
        Some(v) => parse_mode("expert_mode", v)?,
    };
    let out = e.get("out").filter(|v| !v.is_empty()).map(|v| base.join(v));

    let gammas: Vec<f64> = e.list("discount_set")?;
    let discount_set =
        DiscountSet::new(gammas).map_err(|err| invalid("discount_set", err.to_string()))?;
    let stop_rule = match e.require("stop_rule")? {
        "at_least" => StopRule::AtLeast,
        "at_most" => StopRule::AtMost,
        v => {
            return Err(invalid(
                "stop_rule",
                format!("`{v}` is not at_least or at_most"),
            ))
        }
    };
    let return_term = match e.require("return_term")? {
        "discounted" => ReturnTerm::Discounted,
        "stereo" => ReturnTerm::Stereo,
        v => {
            return Err(invalid(
                "return_term",
                format!("`{v}` is not discounted or stereo"),
            ))
        }
    };
    let normalize = e.require("normalize_advantages")?.to_string();
    let optimizer_text = e.require("optimizer")?.to_string();
    let config = RpclConfig {
        rho: e.typed("rho")?,
        eta: e.typed("eta")?,
        gamma: e.typed("gamma")?,
        discount_set,
        min_episodes: e.typed("min_episodes")?,
        phi_updates_per_block: e.typed("phi_updates_per_block")?,
        max_episodes: e.typed("max_episodes")?,
        reward_lr: e.typed("reward_lr")?,
        policy_lr: e.typed("policy_lr")?,
        critic_lr: e.typed("critic_lr")?,
        sample_count: e.typed("sample_count")?,
        inventory_capacity: e.typed("inventory_capacity")?,
        policy_hidden: e.list("policy_hidden")?,
        reward_hidden: e.list("reward_hidden")?,
        critic_hidden: e.list("critic_hidden")?,
        seed: e.typed("seed")?,
        stop: StopCondition {
            window: e.typed("stop_window")?,
            threshold: e.typed("stop_threshold")?,
            rule: stop_rule,
        },
        return_term,
        normalize_advantages: parse_bool("normalize_advantages", &normalize)?,
        reward_weight_decay: e.typed("reward_weight_decay")?,
        optimizer: optimizer_text
            .parse::<OptimizerKind>()
            .map_err(|m| invalid("optimizer", m))?,
        max_grad_norm: e.typed("max_grad_norm")?,
        reward_max_grad_norm: e.typed("reward_max_grad_norm")?,
    };
    if !config.stop.threshold.is_finite() {
        return Err(invalid("stop_threshold", "must be finite"));
    }
    config.validate()?;
    debug_assert!(e.0.iter().all(|(_, _, used)| *used));
    Ok((
        config,
        RunDescriptor {
            env,
            expert,
            expert_mode,
            out,
        },
    ))
}

pub fn load_config(path: &Path) -> Result<(RpclConfig, RunDescriptor), ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_config(&text, base)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Renders a configuration document that parses back to the same values.
pub fn config_to_string(c: &RpclConfig, d: &RunDescriptor) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        writeln!(s, "{k} = {v}").expect("write to string");
    };
    kv("env", d.env.name().to_string());
    kv("expert", d.expert.render());
    kv("expert_mode", mode_name(d.expert_mode).to_string());
    if let Some(out) = &d.out {
        kv("out", out.display().to_string());
    }
    kv("rho", c.rho.to_string());
    kv("eta", c.eta.to_string());
    kv("gamma", c.gamma.to_string());
    kv("discount_set", join(c.discount_set.gammas()));
    kv("min_episodes", c.min_episodes.to_string());
    kv("phi_updates_per_block", c.phi_updates_per_block.to_string());
    kv("max_episodes", c.max_episodes.to_string());
    kv("reward_lr", c.reward_lr.to_string());
    kv("policy_lr", c.policy_lr.to_string());
    kv("critic_lr", c.critic_lr.to_string());
    kv("sample_count", c.sample_count.to_string());
    kv("inventory_capacity", c.inventory_capacity.to_string());
    kv("policy_hidden", join(&c.policy_hidden));
    kv("reward_hidden", join(&c.reward_hidden));
    kv("critic_hidden", join(&c.critic_hidden));
    kv("seed", c.seed.to_string());
    kv("stop_window", c.stop.window.to_string());
    kv("stop_threshold", c.stop.threshold.to_string());
    kv(
        "stop_rule",
        match c.stop.rule {
            StopRule::AtLeast => "at_least",
            StopRule::AtMost => "at_most",
        }
        .to_string(),
    );
    kv(
        "return_term",
        match c.return_term {
            ReturnTerm::Discounted => "discounted",
            ReturnTerm::Stereo => "stereo",
        }
        .to_string(),
    );
    kv("normalize_advantages", c.normalize_advantages.to_string());
    kv("reward_weight_decay", c.reward_weight_decay.to_string());
    kv("optimizer", c.optimizer.to_string());
    kv("max_grad_norm", c.max_grad_norm.to_string());
    kv("reward_max_grad_norm", c.reward_max_grad_norm.to_string());
    s
}

pub fn save_config(path: &Path, c: &RpclConfig, d: &RunDescriptor) -> std::io::Result<()> {
    write_atomic(path, config_to_string(c, d).as_bytes())
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// The stabilising extensions used by the shipped configurations: Adam for
/// actor and critic, standardised advantages and a clipped reward step.
pub fn with_stable_extensions(mut c: RpclConfig) -> RpclConfig {
    c.optimizer = OptimizerKind::Adam;
    c.normalize_advantages = true;
    c.reward_max_grad_norm = 10.0;
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(env: EnvId) -> String {
        config_to_string(
            &RpclConfig::defaults_for(env),
            &RunDescriptor::defaults_for(env),
        )
    }

    #[test]
    fn defaults_round_trip() {
        for env in EnvId::ALL {
            let (c, d) = parse_config(&doc(env), Path::new("")).unwrap();
            assert_eq!(c, RpclConfig::defaults_for(env));
            assert_eq!(d, RunDescriptor::defaults_for(env));
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{}colour = blue\n", doc(EnvId::CartPole));
        assert!(
            matches!(parse_config(&text, Path::new("")), Err(ConfigError::UnknownKey(k)) if k == "colour")
        );
    }

    #[test]
    fn missing_key_named() {
        let text: String = doc(EnvId::CartPole)
            .lines()
            .filter(|l| !l.starts_with("eta "))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(matches!(
            parse_config(&text, Path::new("")),
            Err(ConfigError::MissingKey("eta"))
        ));
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = format!("{}rho = 0.5\n", doc(EnvId::CartPole));
        assert!(matches!(
            parse_config(&text, Path::new("")),
            Err(ConfigError::DuplicateKey(_))
        ));
    }

    #[test]
    fn bad_value_names_key() {
        let text = doc(EnvId::CartPole).replace("gamma = 0.995", "gamma = high");
        assert!(matches!(
            parse_config(&text, Path::new("")),
            Err(ConfigError::Invalid { key: "gamma", .. })
        ));
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = format!(
            "# header\n\n{}",
            doc(EnvId::CartPole).replace("rho = 0.99", "rho = 0.99  # margin weight")
        );
        assert!(parse_config(&text, Path::new("")).is_ok());
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let text = doc(EnvId::MountainCarDiscrete).replace(
            &format!(
                "expert = {}",
                ExpertSource::default_for(EnvId::MountainCarDiscrete).render()
            ),
            "expert = checkpoint:../experts/x.json",
        ) + "out = runs/a\n";
        let (_, d) = parse_config(&text, Path::new("/cfg")).unwrap();
        assert_eq!(
            d.expert,
            ExpertSource::Checkpoint(PathBuf::from("/cfg/../experts/x.json"))
        );
        assert_eq!(d.out, Some(PathBuf::from("/cfg/runs/a")));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
