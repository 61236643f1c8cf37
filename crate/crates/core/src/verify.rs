//! Cost evaluation for arbitrary strategy profiles and Nash-deviation testing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::equilibria::{EquilibriumSolution, MeanPath, PlayerPath};
use crate::matops::{cumulative_integral, integrate, ExpStepper, MatError, Matrix, TimeGrid};
use crate::model::{
    assemble_mfg_blocks, assemble_nplayer_blocks, MarketSetup, ModelError, PlayerParams, SystemBlocks, STRICT_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Matrix(#[from] MatError),
    #[error("profile does not match the grid: {0}")]
    Shape(String),
    #[error("terminal positions differ by {mismatch:e} (> {tol:e}); the decomposition needs a round trip")]
    TerminalMismatch { mismatch: f64, tol: f64 },
}

/// Rate path ξ per player on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct StrategyProfile {
    pub grid: TimeGrid,
    pub rates: Vec<Vec<f64>>,
}

impl StrategyProfile {
    pub fn new(grid: TimeGrid, rates: Vec<Vec<f64>>) -> Result<Self, VerifyError> {
        for (i, r) in rates.iter().enumerate() {
            if r.len() != grid.len() {
                return Err(VerifyError::Shape(format!("player {i} has {} values, grid has {}", r.len(), grid.len())));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(VerifyError::Shape(format!("player {i} has non-finite rates")));
            }
        }
        Ok(Self { grid, rates })
    }

    pub fn from_solution(sol: &EquilibriumSolution) -> Self {
        Self { grid: sol.grid, rates: sol.players.iter().map(|p| p.xi.clone()).collect() }
    }
}

/// Where the aggregate χ = (ξ̄, X̄, 𝔼ξ̄) comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Aggregate {
    /// Averages over the players of the profile.
    FromProfile,
    /// A frozen mean field (μ, ν) per node.
    Frozen { rate: Vec<f64>, position: Vec<f64> },
}

/// Everything the cost functional needs besides the strategies.
#[derive(Clone, Debug)]
pub struct Game {
    pub params: Vec<PlayerParams>,
    pub blocks: Vec<SystemBlocks>,
    pub initials: Vec<f64>,
    pub penalty: f64,
    pub aggregate: Aggregate,
}

impl Game {
    pub fn nplayer(params: &[PlayerParams], setup: &MarketSetup) -> Result<Self, VerifyError> {
        Ok(Self {
            params: params.to_vec(),
            blocks: assemble_nplayer_blocks(params, setup)?,
            initials: setup.initial_positions.clone(),
            penalty: setup.penalty.weight(),
            aggregate: Aggregate::FromProfile,
        })
    }

    /// Representative player at `x` facing the solved mean field.
    pub fn mean_field(params: &PlayerParams, mean: &MeanPath, mean_x0: f64, x: f64) -> Result<Self, VerifyError> {
        Ok(Self {
            params: vec![*params],
            blocks: vec![assemble_mfg_blocks(params, mean_x0)?],
            initials: vec![x],
            penalty: mean.penalty,
            aggregate: Aggregate::Frozen { rate: mean.mean_rate(), position: mean.mean_x() },
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PlayerStates {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CostReport {
    pub total: f64,
    pub instantaneous: f64,
    pub transient: f64,
    pub risk: f64,
    pub terminal: f64,
    /// Rewritten form ∫X⟨Θ, −A𝒮 + Kχ + ℛ⟩ + ηξ² + λX², when the dynamics are known.
    pub rewritten: Option<f64>,
    /// Running cost minus the rewritten form; equals −X_T Y_T.
    pub rewritten_gap: Option<f64>,
}

fn check_len(v: &[f64], grid: &TimeGrid, what: &str) -> Result<(), VerifyError> {
    if v.len() != grid.len() {
        return Err(VerifyError::Shape(format!("{what} has {} values, grid has {}", v.len(), grid.len())));
    }
    Ok(())
}

fn aggregates(profile: &StrategyProfile, xs: &[Vec<f64>], agg: &Aggregate) -> Result<Vec<[f64; 3]>, VerifyError> {
    let m = profile.grid.len();
    match agg {
        Aggregate::FromProfile => {
            let inv = 1.0 / profile.rates.len() as f64;
            Ok((0..m)
                .map(|k| {
                    let r = profile.rates.iter().map(|v| v[k]).sum::<f64>() * inv;
                    let x = xs.iter().map(|v| v[k]).sum::<f64>() * inv;
                    [r, x, r]
                })
                .collect())
        }
        Aggregate::Frozen { rate, position } => {
            check_len(rate, &profile.grid, "frozen rate")?;
            check_len(position, &profile.grid, "frozen position")?;
            Ok(rate.iter().zip(position).map(|(r, x)| [*r, *x, *r]).collect())
        }
    }
}

fn positions(profile: &StrategyProfile, initials: &[f64]) -> Vec<Vec<f64>> {
    profile
        .rates
        .iter()
        .zip(initials)
        .map(|(r, x0)| cumulative_integral(r, &profile.grid).iter().map(|v| x0 - v).collect())
        .collect()
}

fn s_stepper(b: &SystemBlocks, grid: &TimeGrid) -> Result<ExpStepper, MatError> {
    let g = Matrix::from_rows(&[[-b.a[0][0], -b.a[0][1]], [-b.a[1][0], -b.a[1][1]]]);
    ExpStepper::new(&g, grid)
}

fn forcing(b: &SystemBlocks, chi: &[[f64; 3]]) -> Vec<Vec<f64>> {
    chi.iter()
        .map(|c| (0..2).map(|r| b.k[r][0] * c[0] + b.k[r][1] * c[1] + b.k[r][2] * c[2] + b.r0[r]).collect())
        .collect()
}

/// States (X, Y, C) of every player under the profile.
pub fn simulate_states(profile: &StrategyProfile, game: &Game) -> Result<Vec<PlayerStates>, VerifyError> {
    Ok(simulate_full(profile, game)?.0)
}

fn simulate_full(profile: &StrategyProfile, game: &Game) -> Result<(Vec<PlayerStates>, Vec<[f64; 3]>), VerifyError> {
    let n = profile.rates.len();
    if game.blocks.len() != n || game.initials.len() != n || game.params.len() != n {
        return Err(VerifyError::Shape(format!("profile has {n} players, game has {}", game.blocks.len())));
    }
    let xs = positions(profile, &game.initials);
    let chi = aggregates(profile, &xs, &game.aggregate)?;
    let mut out = Vec::with_capacity(n);
    for (b, x) in game.blocks.iter().zip(xs) {
        let s = s_stepper(b, &profile.grid)?.propagate(&[0.0, 0.0], &forcing(b, &chi));
        out.push(PlayerStates { x, y: s.iter().map(|v| v[0]).collect(), c: s.iter().map(|v| v[1]).collect() });
    }
    Ok((out, chi))
}

/// Direct cost terms from a stored path (no dynamics needed).
pub fn path_cost(path: &PlayerPath, params: &PlayerParams, penalty: f64, grid: &TimeGrid) -> CostReport {
    direct_cost(&path.xi, &path.x, &path.y, params, penalty, grid)
}

fn direct_cost(xi: &[f64], x: &[f64], y: &[f64], p: &PlayerParams, penalty: f64, grid: &TimeGrid) -> CostReport {
    let inst: Vec<f64> = xi.iter().map(|v| p.eta * v * v).collect();
    let tran: Vec<f64> = xi.iter().zip(y).map(|(a, b)| a * b).collect();
    let risk: Vec<f64> = x.iter().map(|v| p.lambda * v * v).collect();
    let xt = x.last().copied().unwrap_or(0.0);
    let (instantaneous, transient, risk) = (integrate(&inst, grid), integrate(&tran, grid), integrate(&risk, grid));
    let terminal = penalty * xt * xt;
    CostReport {
        total: instantaneous + transient + risk + terminal,
        instantaneous,
        transient,
        risk,
        terminal,
        rewritten: None,
        rewritten_gap: None,
    }
}

/// Cost of every player under the profile, with the rewritten-form cross-check.
pub fn cost(profile: &StrategyProfile, game: &Game) -> Result<Vec<CostReport>, VerifyError> {
    let (states, chi) = simulate_full(profile, game)?;
    let grid = &profile.grid;
    Ok(states
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let p = &game.params[i];
            let b = &game.blocks[i];
            let mut rep = direct_cost(&profile.rates[i], &st.x, &st.y, p, game.penalty, grid);
            let integrand: Vec<f64> = (0..grid.len())
                .map(|k| {
                    let dy = b.drift([st.y[k], st.c[k]], chi[k])[0];
                    st.x[k] * dy + p.eta * profile.rates[i][k].powi(2) + p.lambda * st.x[k].powi(2)
                })
                .collect();
            let rewritten = integrate(&integrand, grid);
            rep.rewritten = Some(rewritten);
            rep.rewritten_gap = Some(rep.total - rep.terminal - rewritten);
            rep
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionReport {
    /// J(ξ, ξ*⁻ⁱ) − J(ξ*).
    pub lhs: f64,
    /// ∫η(Δξ)² + λ(ΔX)² + ΔX⟨Θ, −AΔ𝒮 + KΔχ⟩.
    pub rhs: f64,
    /// lhs − rhs.
    pub gap: f64,
}

impl DecompositionReport {
    pub fn relative_gap(&self) -> f64 {
        self.gap.abs() / (1.0 + self.lhs.abs())
    }
}

/// Compares the direct cost difference of a unilateral deviation with the quadratic decomposition.
pub fn decomposition_check(
    candidate: &[f64],
    equilibrium: &StrategyProfile,
    game: &Game,
    player: usize,
) -> Result<DecompositionReport, VerifyError> {
    if player >= equilibrium.rates.len() {
        return Err(VerifyError::Shape(format!("player {player} out of range")));
    }
    check_len(candidate, &equilibrium.grid, "candidate")?;
    let mut dev = equilibrium.clone();
    dev.rates[player] = candidate.to_vec();
    let (s_star, chi_star) = simulate_full(equilibrium, game)?;
    let (s_dev, chi_dev) = simulate_full(&dev, game)?;
    let (a, b) = (&s_star[player], &s_dev[player]);
    let mismatch = (a.x.last().unwrap() - b.x.last().unwrap()).abs();
    if mismatch > STRICT_TOL {
        return Err(VerifyError::TerminalMismatch { mismatch, tol: STRICT_TOL });
    }
    let p = &game.params[player];
    let blk = &game.blocks[player];
    let grid = &equilibrium.grid;
    let j_star = direct_cost(&equilibrium.rates[player], &a.x, &a.y, p, game.penalty, grid).total;
    let j_dev = direct_cost(candidate, &b.x, &b.y, p, game.penalty, grid).total;
    let integrand: Vec<f64> = (0..grid.len())
        .map(|k| {
            let dxi = candidate[k] - equilibrium.rates[player][k];
            let dx = b.x[k] - a.x[k];
            let ds = [b.y[k] - a.y[k], b.c[k] - a.c[k]];
            let dchi = [chi_dev[k][0] - chi_star[k][0], chi_dev[k][1] - chi_star[k][1], chi_dev[k][2] - chi_star[k][2]];
            let lin = -(blk.a[0][0] * ds[0] + blk.a[0][1] * ds[1])
                + blk.k[0][0] * dchi[0]
                + blk.k[0][1] * dchi[1]
                + blk.k[0][2] * dchi[2];
            p.eta * dxi * dxi + p.lambda * dx * dx + dx * lin
        })
        .collect();
    let rhs = integrate(&integrand, grid);
    let lhs = j_dev - j_star;
    Ok(DecompositionReport { lhs, rhs, gap: lhs - rhs })
}

/// Smooth zero-volume deviations built from sin(2πkt/T), k = 1..modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BumpFamily {
    pub modes: usize,
    /// Upper bound on the random overall amplitude.
    pub max_amplitude: f64,
}

impl Default for BumpFamily {
    fn default() -> Self {
        Self { modes: 8, max_amplitude: 1.0 }
    }
}

impl BumpFamily {
    /// Rate perturbation with the given coefficients, normalised so that sup ≤ amplitude.
    pub fn evaluate(&self, grid: &TimeGrid, amplitude: f64, coeffs: &[f64]) -> Vec<f64> {
        let horizon = grid.horizon();
        let norm = coeffs.iter().map(|c| c.abs()).sum::<f64>().max(1e-300);
        grid.nodes()
            .iter()
            .map(|t| {
                let s: f64 = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * (2.0 * std::f64::consts::PI * (k + 1) as f64 * t / horizon).sin())
                    .sum();
                amplitude * s / norm
            })
            .collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
        let amplitude = rng.gen::<f64>() * self.max_amplitude;
        let coeffs = (0..self.modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (amplitude, coeffs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub player: usize,
    pub gap: f64,
    pub amplitude: f64,
    pub decomposition: DecompositionReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NashReport {
    pub min_gap: f64,
    pub trials: Vec<TrialResult>,
    /// Index into `trials` of the most negative gap when it is below zero.
    pub violating: Option<usize>,
    pub max_decomposition_gap: f64,
}

/// Random round-trip deviations for one player. Trial `k` draws from stream `k` of `seed`.
pub fn nash_deviation_test(
    equilibrium: &StrategyProfile,
    game: &Game,
    player: usize,
    num_trials: usize,
    seed: u64,
    family: &BumpFamily,
) -> Result<NashReport, VerifyError> {
    let trials: Vec<TrialResult> = (0..num_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial as u64);
            let (amplitude, coeffs) = family.sample(&mut rng);
            let bump = family.evaluate(&equilibrium.grid, amplitude, &coeffs);
            let candidate: Vec<f64> = equilibrium.rates[player].iter().zip(&bump).map(|(a, b)| a + b).collect();
            let decomposition = decomposition_check(&candidate, equilibrium, game, player)?;
            Ok(TrialResult { trial, player, gap: decomposition.lhs, amplitude, decomposition })
        })
        .collect::<Result<_, VerifyError>>()?;
    let min_gap = trials.iter().map(|t| t.gap).fold(f64::INFINITY, f64::min);
    let violating = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| t.gap < 0.0)
        .min_by(|a, b| a.1.gap.total_cmp(&b.1.gap))
        .map(|(i, _)| i);
    let max_decomposition_gap = trials.iter().map(|t| t.decomposition.relative_gap()).fold(0.0, f64::max);
    Ok(NashReport { min_gap: if trials.is_empty() { 0.0 } else { min_gap }, trials, violating, max_decomposition_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{solve_single_player, solve_two_player};
    use crate::model::Penalty;

    fn fig(alpha: f64, gamma: f64) -> PlayerParams {
        PlayerParams { eta: 0.1, lambda: 0.3, rho: 0.2, alpha, beta: 1.1, gamma }
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(5.0, 1000).unwrap()
    }

    fn two_game(gamma: f64, n: f64) -> (EquilibriumSolution, Game) {
        let p = fig(1.0, gamma);
        let sol = solve_two_player(&p, &p, 1.0, 0.0, n, &grid()).unwrap();
        let game = Game::nplayer(&[p, p], &MarketSetup::new(5.0, Penalty::Finite(n), vec![1.0, 0.0])).unwrap();
        (sol, game)
    }

    #[test]
    fn zero_profile_zero_cost() {
        let g = grid();
        let p = fig(1.0, 1.0);
        let game = Game::nplayer(&[p], &MarketSetup::new(5.0, Penalty::Finite(10.0), vec![0.0])).unwrap();
        let prof = StrategyProfile::new(g, vec![vec![0.0; g.len()]]).unwrap();
        let st = simulate_states(&prof, &game).unwrap();
        assert!(st[0].x.iter().chain(&st[0].y).chain(&st[0].c).all(|v| *v == 0.0));
        assert_eq!(cost(&prof, &game).unwrap()[0].total, 0.0);
    }

    #[test]
    fn no_excitation_no_child_flow() {
        let g = grid();
        let p = fig(0.0, 1.0);
        let game = Game::nplayer(&[p], &MarketSetup::new(5.0, Penalty::Finite(10.0), vec![1.0])).unwrap();
        let rates: Vec<f64> = g.nodes().iter().map(|t| (t * 3.0).cos()).collect();
        let prof = StrategyProfile::new(g, vec![rates]).unwrap();
        assert!(simulate_states(&prof, &game).unwrap()[0].c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn doubling_rate_quadruples_pure_quadratic_cost() {
        let g = grid();
        let p = PlayerParams { lambda: 0.0, gamma: 0.0, ..fig(0.5, 0.0) };
        let game = Game::nplayer(&[p], &MarketSetup::new(5.0, Penalty::Finite(0.0), vec![0.0])).unwrap();
        let r1: Vec<f64> = g.nodes().iter().map(|t| 0.3 + t.sin()).collect();
        let r2: Vec<f64> = r1.iter().map(|v| 2.0 * v).collect();
        let j1 = cost(&StrategyProfile::new(g, vec![r1]).unwrap(), &game).unwrap()[0].total;
        let j2 = cost(&StrategyProfile::new(g, vec![r2]).unwrap(), &game).unwrap()[0].total;
        assert!((j2 - 4.0 * j1).abs() <= 1e-12 * j2.abs());
    }

    #[test]
    fn simulated_states_reproduce_solver() {
        let (sol, game) = two_game(1.0, 1e4);
        let st = simulate_states(&StrategyProfile::from_solution(&sol), &game).unwrap();
        for (s, p) in st.iter().zip(&sol.players) {
            for (a, b) in [(&s.x, &p.x), (&s.y, &p.y), (&s.c, &p.c)] {
                let d = a.iter().zip(b).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
                assert!(d <= 1e-8, "{d}");
            }
        }
    }

    #[test]
    fn rewritten_form_matches_strict_single_player() {
        let s = solve_single_player(&fig(0.6, 1.0), 1.0, 1e8, &grid()).unwrap();
        let game = Game::nplayer(&[fig(0.6, 1.0)], &MarketSetup::new(5.0, Penalty::Strict, vec![1.0])).unwrap();
        let c = cost(&StrategyProfile::from_solution(&s), &game).unwrap();
        assert!(c[0].rewritten_gap.unwrap().abs() <= 1e-6 * (1.0 + c[0].total.abs()), "{:?}", c[0]);
        let direct = (c[0].total - s.costs[0].total).abs();
        assert!(direct <= 1e-8 * (1.0 + c[0].total.abs()), "{direct}");
    }

    #[test]
    fn equilibrium_deviation_is_zero() {
        let (sol, game) = two_game(1.0, 1e4);
        let prof = StrategyProfile::from_solution(&sol);
        let r = decomposition_check(&prof.rates[0].clone(), &prof, &game, 0).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn sinusoidal_bump_decomposes() {
        let (sol, game) = two_game(1.0, 1e4);
        let prof = StrategyProfile::from_solution(&sol);
        for player in 0..2 {
            let bump = BumpFamily { modes: 1, max_amplitude: 1.0 }.evaluate(&prof.grid, 0.1, &[1.0]);
            let cand: Vec<f64> = prof.rates[player].iter().zip(&bump).map(|(a, b)| a + b).collect();
            let r = decomposition_check(&cand, &prof, &game, player).unwrap();
            assert!(r.relative_gap() <= 1e-6, "{r:?}");
            assert!(r.rhs >= 0.0);
        }
    }

    #[test]
    fn net_volume_deviation_rejected() {
        let (sol, game) = two_game(1.0, 1e4);
        let prof = StrategyProfile::from_solution(&sol);
        let cand: Vec<f64> = prof.rates[0].iter().map(|v| v + 0.1).collect();
        assert!(matches!(decomposition_check(&cand, &prof, &game, 0), Err(VerifyError::TerminalMismatch { .. })));
    }

    #[test]
    fn zero_amplitude_bumps_give_zero_gaps() {
        let (sol, game) = two_game(0.1, 1e4);
        let prof = StrategyProfile::from_solution(&sol);
        let fam = BumpFamily { modes: 8, max_amplitude: 0.0 };
        let r = nash_deviation_test(&prof, &game, 1, 10, 7, &fam).unwrap();
        assert!(r.trials.iter().all(|t| t.gap == 0.0));
    }

    #[test]
    fn deviation_test_is_reproducible_and_quadratic() {
        let (sol, game) = two_game(1.0, 1e4);
        let prof = StrategyProfile::from_solution(&sol);
        let a = nash_deviation_test(&prof, &game, 0, 8, 11, &BumpFamily::default()).unwrap();
        let b = nash_deviation_test(&prof, &game, 0, 8, 11, &BumpFamily::default()).unwrap();
        assert_eq!(a, b);
        let fam = BumpFamily::default();
        let coeffs = [0.3, -0.7, 0.2, 0.0, 0.5, -0.1, 0.05, 0.4];
        let gap = |eps: f64| {
            let bump = fam.evaluate(&prof.grid, eps, &coeffs);
            let cand: Vec<f64> = prof.rates[0].iter().zip(&bump).map(|(a, b)| a + b).collect();
            decomposition_check(&cand, &prof, &game, 0).unwrap().lhs
        };
        let (g1, g2) = (gap(0.025), gap(0.05));
        assert!((g2 / g1 - 4.0).abs() <= 0.2, "{g1} {g2}");
    }
}
