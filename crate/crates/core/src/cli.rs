//! The `rpcl` command line.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when a
//! command fails at run time. Every artifact is written to a temporary file
//! and renamed into place. Verbosity follows the `RPCL_LOG` variable
//! (`error`, `warn`, `info`, `debug`, `trace`; default `info`).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info, warn};

use crate::actor_critic::{ActMode, PolicyModel};
use crate::config::{load_config, save_config, shipped_config_dir, write_atomic, RunDescriptor};
use crate::env::{reset, EnvId, EPISODE_CAP};
use crate::eval::{
    ablate_discount_sets, ablation_csv, ablation_sets, behavior_cloning, default_axes, paired_eval,
    reward_surface, trial_table, AblationOutcome, Axis, BcConfig, Contestant, EvalSpec,
};
use crate::experts::{demos_to_string, load_demos};
use crate::gradcheck;
use crate::net::Network;
use crate::reward::{DiscountSet, RewardModel};
use crate::rng::{self, streams};
use crate::train::{
    pretrain_expert, train_env_reward_ac, train_observed, EnvAcConfig, ExpertPretrainConfig,
    Models, RpclConfig,
};

/// Episodes between intermediate checkpoints.
pub const CHECKPOINT_EVERY: usize = 500;

#[derive(Parser, Debug)]
#[command(
    name = "rpcl",
    version,
    about = "Concurrent reward and policy learning from demonstrations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a reward and a policy from demonstrations.
    Train(TrainArgs),
    /// Evaluate one policy checkpoint.
    Eval(EvalArgs),
    /// Evaluate several policies (and optionally the demonstrator) on shared initial states.
    Compare(CompareArgs),
    /// Write demonstrations from the configured demonstrator.
    RecordDemos(RecordArgs),
    /// Pretrain a demonstrator policy on the environment reward.
    TrainExpert(TrainExpertArgs),
    /// Train and evaluate once per discount set.
    Ablate(AblateArgs),
    /// Tabulate a learned reward over two state dimensions.
    ExportRewardSurface(SurfaceArgs),
    /// Fit a policy to recorded demonstrations by maximum likelihood.
    BcTrain(BcArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    env: EnvId,
    /// Configuration file; defaults to the shipped file for the environment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalOpts {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long = "eval-seed", default_value_t = 0)]
    eval_seed: u64,
    /// Worker threads for evaluation rollouts.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, value_enum, default_value_t = Mode::Sample)]
    mode: Mode,
}

impl EvalOpts {
    fn spec(&self) -> EvalSpec {
        EvalSpec {
            trials: self.trials,
            seed: self.eval_seed,
            workers: self.workers,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Sample,
    Greedy,
}

impl From<Mode> for ActMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Sample => ActMode::Sample,
            Mode::Greedy => ActMode::Greedy,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Output directory; defaults to the configured `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train the actor-critic baseline on the environment reward instead.
    #[arg(long)]
    env_reward: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    env: EnvId,
    #[arg(long)]
    policy: PathBuf,
    #[command(flatten)]
    opts: EvalOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Policy checkpoints, labelled by file stem unless given as `label=path`.
    #[arg(long = "policy", required = true)]
    policies: Vec<String>,
    /// Include the configured demonstrator as a contestant.
    #[arg(long)]
    with_expert: bool,
    #[command(flatten)]
    opts: EvalOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RecordArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainExpertArgs {
    #[arg(long)]
    env: EnvId,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    episodes: Option<usize>,
    /// Mean episode length the kept checkpoint should be closest to.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Discount sets separated by `;`, gammas within a set by `,`.
    #[arg(long)]
    sets: Option<String>,
    #[command(flatten)]
    opts: EvalOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SurfaceArgs {
    #[arg(long)]
    env: EnvId,
    #[arg(long)]
    reward: PathBuf,
    #[arg(long, default_value_t = 41)]
    resolution: usize,
    #[arg(long)]
    x_dim: Option<usize>,
    #[arg(long)]
    y_dim: Option<usize>,
    /// `lo,hi`
    #[arg(long)]
    x_range: Option<String>,
    /// `lo,hi`
    #[arg(long)]
    y_range: Option<String>,
    /// Values of every state dimension; the axis dimensions are overwritten.
    #[arg(long)]
    fixed: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BcArgs {
    #[arg(long)]
    env: EnvId,
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = gradcheck::DEFAULT_INSTANCES)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failure classes, mapped onto exit codes.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().filter_or("RPCL_LOG", "info"))
        .format_timestamp(None)
        .try_init();
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::RecordDemos(a) => cmd_record(a),
        Command::TrainExpert(a) => cmd_train_expert(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::ExportRewardSurface(a) => cmd_surface(a),
        Command::BcTrain(a) => cmd_bc(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn resolve_config(a: &ConfigArgs) -> Result<(RpclConfig, RunDescriptor), Failure> {
    let path = a
        .config
        .clone()
        .unwrap_or_else(|| shipped_config_dir().join(format!("{}.cfg", a.env.name())));
    let (mut config, desc) = load_config(&path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(usage)?;
    if desc.env != a.env {
        return Err(usage(anyhow::anyhow!(
            "--env {} does not match `env = {}` in {}",
            a.env,
            desc.env,
            path.display()
        )));
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    Ok((config, desc))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

fn write_models(dir: &Path, m: &Models) -> anyhow::Result<()> {
    write_text(&dir.join("policy.json"), &m.policy.net().to_json())?;
    write_text(&dir.join("reward.json"), &m.reward.net().to_json())?;
    write_text(&dir.join("critic.json"), &m.critic.net().to_json())
}

fn load_policy(env: EnvId, path: &Path) -> anyhow::Result<PolicyModel> {
    let net = Network::load(path).with_context(|| format!("loading {}", path.display()))?;
    PolicyModel::from_network(env, net)
        .with_context(|| format!("{} does not fit {env}", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let (config, desc) = resolve_config(&a.cfg)?;
    let env = a.cfg.env;
    let out = a.out.clone().or(desc.out.clone()).ok_or_else(|| {
        usage(anyhow::anyhow!(
            "no output directory: pass --out or set `out`"
        ))
    })?;
    save_config(&out.join("config.cfg"), &config, &desc).context("writing config copy")?;
    if a.env_reward {
        let cfg = EnvAcConfig::from_rpcl(&config);
        let mut ck_err = None;
        let result = train_env_reward_ac(env, &cfg, |rec, policy| {
            if rec.episode % CHECKPOINT_EVERY == 0 && ck_err.is_none() {
                let p = out
                    .join("checkpoints")
                    .join(format!("episode-{}", rec.episode))
                    .join("policy.json");
                ck_err = write_text(&p, &policy.net().to_json()).err();
            }
        });
        return match result {
            Ok(o) => {
                if let Some(e) = ck_err {
                    return Err(e.into());
                }
                write_text(&out.join("train_log.csv"), &o.log.to_csv())?;
                write_text(&out.join("policy.json"), &o.policy.net().to_json())?;
                write_text(&out.join("critic.json"), &o.critic.net().to_json())?;
                info!("{} episodes", o.log.records.len());
                Ok(())
            }
            Err(f) => {
                write_text(&out.join("train_log.csv"), &f.log.to_csv())?;
                Err(anyhow::Error::new(f).into())
            }
        };
    }
    let expert = desc
        .expert
        .load(env, desc.expert_mode)
        .context("loading demonstrator")
        .map_err(usage)?;
    let mut ck_err = None;
    let result = train_observed(&config, env, &expert, |rec, models| {
        if rec.episode % 100 == 0 {
            info!(
                "episode {} steps {} rho {:.4}",
                rec.episode, rec.steps, rec.rho
            );
        } else {
            debug!("episode {} steps {}", rec.episode, rec.steps);
        }
        if rec.episode % CHECKPOINT_EVERY == 0 && ck_err.is_none() {
            ck_err = write_models(
                &out.join("checkpoints")
                    .join(format!("episode-{}", rec.episode)),
                models,
            )
            .err();
        }
    });
    match result {
        Ok(o) => {
            if let Some(e) = ck_err {
                return Err(e.into());
            }
            write_text(&out.join("train_log.csv"), &o.log.to_csv())?;
            write_models(&out, &o.models)?;
            info!(
                "{} episodes, {} demonstrations, final rho {}",
                o.log.records.len(),
                o.demos_used,
                o.final_rho
            );
            Ok(())
        }
        Err(f) => {
            write_text(&out.join("train_log.csv"), &f.log.to_csv())?;
            Err(anyhow::Error::new(f).into())
        }
    }
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let policy = load_policy(a.env, &a.policy).map_err(usage)?;
    let c = Contestant::policy(label_of(&a.policy), policy, a.opts.mode.into());
    let pe = trial_table(&[c], a.env, a.opts.spec()).map_err(anyhow::Error::new)?;
    write_text(&a.out.join("trials.csv"), &pe.trials_csv())?;
    write_text(&a.out.join("summary.csv"), &pe.summary_csv())?;
    print!("{}", pe.summary_csv());
    Ok(())
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "policy".into())
}

fn cmd_compare(a: CompareArgs) -> Result<(), Failure> {
    let (_, desc) = resolve_config(&a.cfg)?;
    let env = a.cfg.env;
    let mut contestants = Vec::new();
    for spec in &a.policies {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => (label_of(Path::new(spec)), PathBuf::from(spec)),
        };
        if contestants.iter().any(|c: &Contestant| c.label == label) {
            return Err(usage(anyhow::anyhow!("duplicate label `{label}`")));
        }
        contestants.push(Contestant::policy(
            label,
            load_policy(env, &path).map_err(usage)?,
            a.opts.mode.into(),
        ));
    }
    if a.with_expert {
        let expert = desc
            .expert
            .load(env, desc.expert_mode)
            .context("loading demonstrator")
            .map_err(usage)?;
        contestants.push(Contestant::demonstrator("expert", expert));
    }
    let pe =
        paired_eval(&contestants, env, a.opts.spec()).map_err(|e| usage(anyhow::Error::new(e)))?;
    write_text(&a.out.join("trials.csv"), &pe.trials_csv())?;
    write_text(&a.out.join("summary.csv"), &pe.summary_csv())?;
    print!("{}", pe.summary_csv());
    Ok(())
}

fn cmd_record(a: RecordArgs) -> Result<(), Failure> {
    let (config, desc) = resolve_config(&a.cfg)?;
    let env = a.cfg.env;
    let expert = desc
        .expert
        .load(env, desc.expert_mode)
        .context("loading demonstrator")
        .map_err(usage)?;
    let mut demos = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let mut r = rng::stream(rng::derive_seed(config.seed, streams::EPISODES), i as u64);
        let s0 = reset(env, &mut r);
        demos.push(
            expert
                .demonstrate(env, &s0, EPISODE_CAP, &mut r)
                .context("demonstrating")?,
        );
    }
    write_text(&a.out, &demos_to_string(&demos))?;
    info!(
        "wrote {} demonstrations to {}",
        demos.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train_expert(a: TrainExpertArgs) -> Result<(), Failure> {
    let mut cfg = ExpertPretrainConfig::defaults_for(a.env);
    cfg.ac.seed = a.seed;
    if let Some(e) = a.episodes {
        cfg.ac.max_episodes = e;
        cfg.ac.min_episodes = cfg.ac.min_episodes.min(e);
    }
    if let Some(t) = a.target {
        cfg.target_steps = t;
    }
    let o = pretrain_expert(a.env, &cfg).map_err(anyhow::Error::new)?;
    write_text(&a.out, &o.policy.net().to_json())?;
    let mut scores = String::from("episode,mean_steps\n");
    for (e, m) in &o.scores {
        scores.push_str(&format!("{e},{m}\n"));
    }
    write_text(&a.out.with_extension("scores.csv"), &scores)?;
    info!(
        "kept episode {} with mean {} steps",
        o.episode, o.mean_steps
    );
    Ok(())
}

fn parse_sets(text: &str) -> anyhow::Result<Vec<DiscountSet>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let gs = s
                .split(',')
                .map(|g| {
                    g.trim()
                        .parse::<f64>()
                        .with_context(|| format!("`{g}` in `{s}`"))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            DiscountSet::new(gs).with_context(|| format!("set `{s}`"))
        })
        .collect()
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Failure> {
    let (config, desc) = resolve_config(&a.cfg)?;
    let env = a.cfg.env;
    let sets = match &a.sets {
        Some(s) => parse_sets(s).map_err(usage)?,
        None => ablation_sets(),
    };
    let expert = desc
        .expert
        .load(env, desc.expert_mode)
        .context("loading demonstrator")
        .map_err(usage)?;
    let rows = ablate_discount_sets(
        env,
        &sets,
        &config,
        &expert,
        a.opts.spec(),
        a.opts.mode.into(),
    );
    for r in &rows {
        match &r.outcome {
            AblationOutcome::Stats(s) => info!(
                "{}: {:.1} ± {:.1} steps",
                r.label(),
                s.mean_steps,
                s.std_steps
            ),
            AblationOutcome::Fail(why) => warn!("{}: Fail ({why})", r.label()),
        }
    }
    let csv = ablation_csv(&rows);
    write_text(&a.out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn parse_pair(key: &str, text: &str) -> anyhow::Result<(f64, f64)> {
    let v: Vec<f64> = text
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--{key} `{text}`"))?;
    match v.as_slice() {
        [lo, hi] if lo < hi => Ok((*lo, *hi)),
        _ => bail!("--{key} must be `lo,hi` with lo < hi"),
    }
}

fn cmd_surface(a: SurfaceArgs) -> Result<(), Failure> {
    let net = Network::load(&a.reward)
        .with_context(|| format!("loading {}", a.reward.display()))
        .map_err(usage)?;
    let model = RewardModel::from_network(a.env, net).map_err(|e| usage(anyhow::Error::new(e)))?;
    let (dx, dy) = default_axes(a.env);
    let mut x = Axis {
        dim: a.x_dim.unwrap_or(dx.dim),
        ..dx
    };
    let mut y = Axis {
        dim: a.y_dim.unwrap_or(dy.dim),
        ..dy
    };
    if let Some(r) = &a.x_range {
        (x.lo, x.hi) = parse_pair("x-range", r).map_err(usage)?;
    }
    if let Some(r) = &a.y_range {
        (y.lo, y.hi) = parse_pair("y-range", r).map_err(usage)?;
    }
    let fixed = match &a.fixed {
        Some(t) => t
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .context("--fixed")
            .map_err(usage)?,
        None => vec![0.0; a.env.state_dim()],
    };
    let grid = reward_surface(&model, a.env, x, y, &fixed, a.resolution)
        .map_err(|e| usage(anyhow::Error::new(e)))?;
    write_text(&a.out, &grid.to_csv())?;
    Ok(())
}

fn cmd_bc(a: BcArgs) -> Result<(), Failure> {
    let demos = load_demos(&a.demos)
        .with_context(|| format!("loading {}", a.demos.display()))
        .map_err(usage)?;
    let mut cfg = BcConfig::defaults_for(a.env);
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    let o = behavior_cloning(a.env, &demos, &cfg).map_err(|e| usage(anyhow::Error::new(e)))?;
    write_text(&a.out, &o.policy.net().to_json())?;
    info!(
        "loss {:.4} -> {:.4} over {} epochs",
        o.losses[0],
        o.losses.last().copied().unwrap_or(f64::NAN),
        cfg.epochs
    );
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let reports = gradcheck::run_all(a.instances, a.seed).map_err(anyhow::Error::new)?;
    for r in &reports {
        println!("{r}");
    }
    if reports.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!("gradient check failed")))
    }
}
