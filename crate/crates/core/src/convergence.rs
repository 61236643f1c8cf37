//! Mean-field consistency and the many-player limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibria::{compose_mfg_player, solve_mfg_mean, solve_nplayer_homogeneous, EquilibriumError, MeanPath};
use crate::matops::{integrate, TimeGrid};
use crate::model::{MarketSetup, ModelError, Penalty, PlayerParams};

/// Largest player count accepted by default.
pub const MAX_PLAYERS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvergenceError {
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

impl From<ModelError> for ConvergenceError {
    fn from(e: ModelError) -> Self {
        ConvergenceError::Equilibrium(e.into())
    }
}

/// Distribution of initial positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Degenerate {
        value: f64,
    },
    /// Equal weights on two points; draws alternate so every even batch is balanced.
    TwoPoint {
        low: f64,
        high: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

impl Sampler {
    pub fn mean(&self) -> f64 {
        match *self {
            Sampler::Degenerate { value } => value,
            Sampler::TwoPoint { low, high } | Sampler::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn validate(&self) -> Result<(), ConvergenceError> {
        match *self {
            Sampler::Degenerate { value } if value.is_finite() => Ok(()),
            Sampler::TwoPoint { low, high } | Sampler::Uniform { low, high }
                if low.is_finite() && high.is_finite() && low <= high =>
            {
                Ok(())
            }
            s => Err(ConvergenceError::Invalid(format!("bad sampler {s:?}"))),
        }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match *self {
            Sampler::Degenerate { value } => vec![value; n],
            Sampler::TwoPoint { low, high } => {
                let first_high = rng.gen::<bool>();
                (0..n).map(|i| if (i % 2 == 0) == first_high { high } else { low }).collect()
            }
            Sampler::Uniform { low, high } => (0..n).map(|_| low + (high - low) * rng.gen::<f64>()).collect(),
        }
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointResidual {
    /// sup_t |sample mean of ξ − μ|.
    pub rate: f64,
    /// sup_t |sample mean of X − ν|.
    pub position: f64,
    /// Standard errors of the two sup-norm statistics at the maximising node.
    pub rate_se: f64,
    pub position_se: f64,
}

/// Checks μ = 𝔼ξ*, ν = 𝔼X* against a sampled population of composed players.
pub fn mfg_fixed_point_residual(
    mean: &MeanPath,
    params: &PlayerParams,
    mean_x0: f64,
    sampler: &Sampler,
    num_samples: usize,
    seed: u64,
) -> Result<FixedPointResidual, ConvergenceError> {
    sampler.validate()?;
    if num_samples < 2 {
        return Err(ConvergenceError::Invalid("need at least two samples".into()));
    }
    let draws = sampler.sample(num_samples, &mut stream(seed, 0));
    let players: Vec<_> =
        draws.iter().map(|x| compose_mfg_player(*x, mean_x0, mean, params.eta, params.lambda)).collect();
    let nodes = mean.grid.len();
    let mu = mean.mean_rate();
    let nu = mean.mean_x();
    let n = num_samples as f64;
    let stat = |f: &dyn Fn(usize, usize) -> f64, target: &[f64]| {
        let mut best = (0.0f64, 0.0f64);
        for k in 0..nodes {
            let m = (0..num_samples).map(|i| f(i, k)).sum::<f64>() / n;
            let var = (0..num_samples).map(|i| (f(i, k) - m).powi(2)).sum::<f64>() / (n - 1.0);
            let dev = (m - target[k]).abs();
            if dev >= best.0 {
                best = (dev, (var / n).sqrt());
            }
        }
        best
    };
    let (rate, rate_se) = stat(&|i, k| players[i].xi[k], &mu);
    let (position, position_se) = stat(&|i, k| players[i].x[k], &nu);
    Ok(FixedPointResidual { rate, position, rate_se, position_se })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicationRow {
    pub n: usize,
    pub replication: usize,
    pub strategy_l2_error: f64,
    pub state_sup_error: f64,
    /// ∫|ξ̄ᴺ − μ|² dt for the sample-mean rate.
    pub mean_rate_l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub n_values: Vec<usize>,
    /// Replication averages of ∫|ξ^{1,N} − ξ̄¹|² dt.
    pub strategy_l2: Vec<f64>,
    pub state_sup: Vec<f64>,
    pub mean_rate_l2: Vec<f64>,
    pub rows: Vec<ReplicationRow>,
    pub seed: u64,
    pub sampler: Sampler,
    /// Log-log slope of `strategy_l2` against N.
    pub strategy_rate: f64,
    /// Log-log slope of `mean_rate_l2` against N.
    pub mean_rate_slope: f64,
    /// Last error at most half of the first.
    pub halved: bool,
    pub strictly_decreasing: bool,
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentOptions {
    pub replications: usize,
    pub penalty: f64,
    pub max_players: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self { replications: 20, penalty: 1e4, max_players: MAX_PLAYERS }
    }
}

/// Player 1 of sampled N-player games against the composed mean-field player.
///
/// Replication r at the j-th N draws initials from stream (j·2³² + r) of `seed`.
pub fn nplayer_to_mfg(
    params: &PlayerParams,
    n_list: &[usize],
    sampler: &Sampler,
    seed: u64,
    grid: &TimeGrid,
    opts: &ExperimentOptions,
) -> Result<ConvergenceReport, ConvergenceError> {
    sampler.validate()?;
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(ConvergenceError::Invalid("N list must be ascending and positive".into()));
    }
    if let Some(n) = n_list.iter().find(|n| **n > opts.max_players) {
        return Err(ConvergenceError::Invalid(format!("N = {n} exceeds the cap {}", opts.max_players)));
    }
    if opts.replications == 0 {
        return Err(ConvergenceError::Invalid("need at least one replication".into()));
    }
    let ex0 = sampler.mean();
    let (mean, _) = solve_mfg_mean(params, ex0, opts.penalty, grid)?;
    let mu = mean.mean_rate();
    let jobs: Vec<(usize, usize, usize)> =
        n_list.iter().enumerate().flat_map(|(j, n)| (0..opts.replications).map(move |r| (j, *n, r))).collect();
    let rows: Vec<ReplicationRow> = jobs
        .par_iter()
        .map(|&(j, n, r)| {
            let xs = sampler.sample(n, &mut stream(seed, ((j as u64) << 32) | r as u64));
            let setup = MarketSetup::new(grid.horizon(), Penalty::Finite(opts.penalty), xs.clone());
            let sol = solve_nplayer_homogeneous(params, &setup, grid)?;
            let target = compose_mfg_player(xs[0], ex0, &mean, params.eta, params.lambda);
            let p1 = &sol.players[0];
            let sq: Vec<f64> = p1.xi.iter().zip(&target.xi).map(|(a, b)| (a - b).powi(2)).collect();
            let sup = p1.x.iter().zip(&target.x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let inv = 1.0 / n as f64;
            let mr: Vec<f64> = (0..grid.len())
                .map(|k| (sol.players.iter().map(|p| p.xi[k]).sum::<f64>() * inv - mu[k]).powi(2))
                .collect();
            Ok(ReplicationRow {
                n,
                replication: r,
                strategy_l2_error: integrate(&sq, grid),
                state_sup_error: sup,
                mean_rate_l2: integrate(&mr, grid),
            })
        })
        .collect::<Result<_, EquilibriumError>>()?;
    let avg = |j: usize, f: &dyn Fn(&ReplicationRow) -> f64| {
        let r = &rows[j * opts.replications..(j + 1) * opts.replications];
        r.iter().map(f).sum::<f64>() / r.len() as f64
    };
    let strategy_l2: Vec<f64> = (0..n_list.len()).map(|j| avg(j, &|r| r.strategy_l2_error)).collect();
    let state_sup = (0..n_list.len()).map(|j| avg(j, &|r| r.state_sup_error)).collect();
    let mean_rate_l2: Vec<f64> = (0..n_list.len()).map(|j| avg(j, &|r| r.mean_rate_l2)).collect();
    let nf: Vec<f64> = n_list.iter().map(|n| *n as f64).collect();
    Ok(ConvergenceReport {
        n_values: n_list.to_vec(),
        strategy_rate: loglog_slope(&nf, &strategy_l2),
        mean_rate_slope: loglog_slope(&nf, &mean_rate_l2),
        halved: strategy_l2.last().unwrap() <= &(0.5 * strategy_l2[0]),
        strictly_decreasing: strategy_l2.windows(2).all(|w| w[1] < w[0]),
        strategy_l2,
        state_sup,
        mean_rate_l2,
        rows,
        seed,
        sampler: *sampler,
    })
}
