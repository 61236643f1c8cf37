//! Run configuration: JSON file, command-line flags and defaults.
//!
//! Precedence is flag, then config file, then default. The seed additionally
//! falls back to `LIQGAME_SEED` before the default.

use std::fmt;
use std::fs;
use std::path::PathBuf;

use clap::Args;
use liqgame::convergence::Sampler;
use liqgame::{Penalty, PlayerParams, TimeGrid};
use serde::Deserialize;

pub const DEFAULT_SEED: u64 = 20240601;
pub const SEED_ENV: &str = "LIQGAME_SEED";

/// Figure-caption parameter set.
pub const CAPTION: PlayerParams = PlayerParams { eta: 0.1, lambda: 0.3, rho: 0.2, alpha: 1.0, beta: 1.1, gamma: 1.0 };
pub const DEFAULT_HORIZON: f64 = 5.0;
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_PENALTY: f64 = 1e4;

/// Invalid or inconsistent input. Maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// JSON config file; flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Horizon T
    #[arg(long = "T", visible_alias = "horizon")]
    pub horizon: Option<f64>,
    /// Number of time steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// Terminal penalty weight n, or "strict"
    #[arg(long)]
    pub penalty: Option<String>,
    /// Initial position of the representative (or single) player
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(long)]
    pub x1: Option<f64>,
    #[arg(long)]
    pub x2: Option<f64>,
    /// Population mean of initial positions
    #[arg(long = "mean-x0")]
    pub mean_x0: Option<f64>,
    /// Comma-separated initial positions
    #[arg(long, value_delimiter = ',')]
    pub initials: Option<Vec<f64>>,
    /// Number of players
    #[arg(long = "N", visible_alias = "players")]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ascending penalty weights for sweep-n
    #[arg(long, value_delimiter = ',')]
    pub penalties: Option<Vec<f64>>,
    /// Ascending player counts for converge
    #[arg(long = "n-list", value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Initial-position law: uniform:LO,HI | two-point:LO,HI | degenerate:V
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Deviation trials per player
    #[arg(long)]
    pub trials: Option<usize>,
    /// Monte Carlo paths
    #[arg(long)]
    pub paths: Option<usize>,
    /// Hawkes baseline intensity
    #[arg(long)]
    pub mu: Option<f64>,
    /// Constant signed trading rate driving the order flow
    #[arg(long)]
    pub rate: Option<f64>,
    /// Game for sweep-n and verify: mfg | single | two | nplayer
    #[arg(long)]
    pub instance: Option<String>,
    /// Regime for check: nplayer | mfg
    #[arg(long)]
    pub regime: Option<String>,
    /// Output file (directory for figures); stdout when omitted
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Deserialize, Clone, Copy, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub eta: Option<f64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Deserialize, Clone, Debug)]
#[serde(untagged)]
pub enum PenaltySpec {
    Weight(f64),
    Word(String),
}

#[derive(Deserialize, Clone, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Option<String>,
    pub eta: Option<f64>,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub params: Option<Vec<ParamEntry>>,
    #[serde(alias = "T", alias = "t")]
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub penalty: Option<PenaltySpec>,
    pub x: Option<f64>,
    pub x1: Option<f64>,
    pub x2: Option<f64>,
    pub mean_x0: Option<f64>,
    pub initials: Option<Vec<f64>>,
    #[serde(alias = "N")]
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub penalties: Option<Vec<f64>>,
    pub n_list: Option<Vec<usize>>,
    pub sampler: Option<Sampler>,
    pub replications: Option<usize>,
    pub trials: Option<usize>,
    pub paths: Option<usize>,
    pub mu: Option<f64>,
    pub rate: Option<f64>,
    pub instance: Option<String>,
    pub regime: Option<String>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved settings for one run.
#[derive(Clone, Debug)]
pub struct Settings {
    /// Common parameters after file and flag overrides.
    pub common: PlayerParams,
    per_player: Option<Vec<ParamEntry>>,
    flags: Flags,
    pub horizon: f64,
    pub steps: usize,
    pub penalty: Penalty,
    pub x: f64,
    pub x1: f64,
    pub x2: f64,
    pub mean_x0: f64,
    pub initials: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub seed: u64,
    pub penalties: Vec<f64>,
    pub n_list: Vec<usize>,
    pub sampler: Sampler,
    pub replications: usize,
    pub trials: usize,
    pub paths: usize,
    pub mu: f64,
    pub rate: f64,
    pub instance: Option<String>,
    pub regime: Option<String>,
    pub output: Option<PathBuf>,
}

fn overlay(base: PlayerParams, e: &ParamEntry) -> PlayerParams {
    PlayerParams {
        eta: e.eta.unwrap_or(base.eta),
        rho: e.rho.unwrap_or(base.rho),
        lambda: e.lambda.unwrap_or(base.lambda),
        alpha: e.alpha.unwrap_or(base.alpha),
        beta: e.beta.unwrap_or(base.beta),
        gamma: e.gamma.unwrap_or(base.gamma),
    }
}

fn flag_entry(f: &Flags) -> ParamEntry {
    ParamEntry { eta: f.eta, rho: f.rho, lambda: f.lambda, alpha: f.alpha, beta: f.beta, gamma: f.gamma }
}

pub fn parse_penalty(s: &str) -> anyhow::Result<Penalty> {
    let p = if s.eq_ignore_ascii_case("strict") {
        Penalty::Strict
    } else {
        let n: f64 =
            s.parse().map_err(|_| config_err(format!("penalty: expected a number or \"strict\", got {s:?}")))?;
        Penalty::Finite(n)
    };
    p.validate().map_err(|e| config_err(format!("penalty: {e}")))?;
    Ok(p)
}

pub fn parse_sampler(s: &str) -> anyhow::Result<Sampler> {
    let bad = || config_err(format!("sampler: cannot parse {s:?}; use uniform:LO,HI, two-point:LO,HI or degenerate:V"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    let nums: Vec<f64> = rest.split(',').map(|v| v.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let sampler = match (kind.trim(), nums.as_slice()) {
        ("uniform", [lo, hi]) => Sampler::Uniform { low: *lo, high: *hi },
        ("two-point" | "two_point", [lo, hi]) => Sampler::TwoPoint { low: *lo, high: *hi },
        ("degenerate", [v]) => Sampler::Degenerate { value: *v },
        _ => return Err(bad()),
    };
    sampler.validate().map_err(|e| config_err(format!("sampler: {e}")))?;
    Ok(sampler)
}

fn env_seed() -> anyhow::Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse().map(Some).map_err(|_| config_err(format!("{SEED_ENV}: not an unsigned integer: {v:?}")))
        }
        Err(_) => Ok(None),
    }
}

impl Settings {
    pub fn resolve(subcommand: &str, flags: Flags) -> anyhow::Result<Self> {
        let cfg = match &flags.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = &cfg.subcommand {
            if s != subcommand {
                return Err(config_err(format!("subcommand: config is for {s:?}, invoked as {subcommand:?}")));
            }
        }
        let file_common = ParamEntry {
            eta: cfg.eta,
            rho: cfg.rho,
            lambda: cfg.lambda,
            alpha: cfg.alpha,
            beta: cfg.beta,
            gamma: cfg.gamma,
        };
        let common = overlay(overlay(CAPTION, &file_common), &flag_entry(&flags));
        let penalty = match (&flags.penalty, &cfg.penalty) {
            (Some(s), _) => parse_penalty(s)?,
            (None, Some(PenaltySpec::Word(s))) => parse_penalty(s)?,
            (None, Some(PenaltySpec::Weight(n))) => parse_penalty(&n.to_string())?,
            (None, None) => Penalty::Finite(DEFAULT_PENALTY),
        };
        let sampler = match &flags.sampler {
            Some(s) => parse_sampler(s)?,
            None => cfg.sampler.unwrap_or(Sampler::Uniform { low: 1.0, high: 2.0 }),
        };
        sampler.validate().map_err(|e| config_err(format!("sampler: {e}")))?;
        let seed = match flags.seed.or(cfg.seed) {
            Some(s) => s,
            None => env_seed()?.unwrap_or(DEFAULT_SEED),
        };
        let settings = Settings {
            common,
            per_player: cfg.params.clone(),
            horizon: flags.horizon.or(cfg.horizon).unwrap_or(DEFAULT_HORIZON),
            steps: flags.steps.or(cfg.steps).unwrap_or(DEFAULT_STEPS),
            penalty,
            x: flags.x.or(cfg.x).unwrap_or(1.0),
            x1: flags.x1.or(cfg.x1).unwrap_or(1.0),
            x2: flags.x2.or(cfg.x2).unwrap_or(0.0),
            mean_x0: flags.mean_x0.or(cfg.mean_x0).unwrap_or(1.5),
            initials: flags.initials.clone().or(cfg.initials),
            n: flags.n.or(cfg.n),
            seed,
            penalties: flags.penalties.clone().or(cfg.penalties).unwrap_or_else(|| vec![10.0, 100.0, 1000.0, 1e4]),
            n_list: flags.n_list.clone().or(cfg.n_list).unwrap_or_else(|| vec![2, 8, 32, 128]),
            sampler,
            replications: flags.replications.or(cfg.replications).unwrap_or(20),
            trials: flags.trials.or(cfg.trials).unwrap_or(100),
            paths: flags.paths.or(cfg.paths).unwrap_or(0),
            mu: flags.mu.or(cfg.mu).unwrap_or(1.0),
            rate: flags.rate.or(cfg.rate).unwrap_or(0.0),
            instance: flags.instance.clone().or(cfg.instance),
            regime: flags.regime.clone().or(cfg.regime),
            output: flags.output.clone().or(cfg.output),
            flags,
        };
        for (name, v) in [
            ("T", settings.horizon),
            ("x", settings.x),
            ("x1", settings.x1),
            ("x2", settings.x2),
            ("mean_x0", settings.mean_x0),
            ("mu", settings.mu),
            ("rate", settings.rate),
        ] {
            if !v.is_finite() {
                return Err(config_err(format!("{name}: must be finite, got {v}")));
            }
        }
        if let Some(v) = &settings.initials {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(config_err("initials: all entries must be finite"));
            }
        }
        Ok(settings)
    }

    pub fn grid(&self) -> anyhow::Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.steps).map_err(|e| config_err(format!("T/steps: {e}")))
    }

    /// Parameters for `count` players: per-player config entries over the
    /// common values, with flags overriding both.
    pub fn players(&self, count: usize) -> anyhow::Result<Vec<PlayerParams>> {
        let flag = flag_entry(&self.flags);
        let out: Vec<PlayerParams> = match &self.per_player {
            None => vec![self.common; count],
            Some(list) if list.len() == 1 => vec![overlay(overlay(self.common, &list[0]), &flag); count],
            Some(list) if list.len() == count => list.iter().map(|e| overlay(overlay(self.common, e), &flag)).collect(),
            Some(list) => return Err(config_err(format!("params: {} entries for {count} players", list.len()))),
        };
        Ok(out)
    }

    /// Like [`Settings::players`], also checking model invariants.
    pub fn validated_players(&self, count: usize) -> anyhow::Result<Vec<PlayerParams>> {
        let ps = self.players(count)?;
        for (i, p) in ps.iter().enumerate() {
            p.validate().map_err(|e| {
                if ps.len() == 1 {
                    config_err(format!("params: {e}"))
                } else {
                    config_err(format!("params[{i}]: {e}"))
                }
            })?;
        }
        Ok(ps)
    }
}
