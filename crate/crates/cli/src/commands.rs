//! One function per subcommand. Each returns the tables to write and a summary line.

use std::path::PathBuf;

use anyhow::{Context, Result};
use liqgame::convergence::{nplayer_to_mfg, ExperimentOptions};
use liqgame::equilibria::{
    compose_mfg_player, penalization_sweep, solve_mfg_mean, solve_nplayer, solve_nplayer_homogeneous,
    solve_single_player, solve_two_player, ComposedPlayer, Instance, MeanPath,
};
use liqgame::hawkes::{self, HawkesParams, TraderRate};
use liqgame::model::{check_weak_interaction, ConditionReport, Regime, ThetaSearch, STRICT_TOL};
use liqgame::verify::{cost, nash_deviation_test, BumpFamily, Game, StrategyProfile};
use liqgame::{EquilibriumSolution, MarketSetup, Penalty, PlayerParams, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{config_err, Settings};
use crate::output::{fmt_g, Table};

pub struct Outcome {
    /// Target path (None means stdout) and table.
    pub tables: Vec<(Option<PathBuf>, Table)>,
    pub summary: String,
}

impl Outcome {
    fn single(s: &Settings, table: Table, summary: String) -> Self {
        Self { tables: vec![(s.output.clone(), table)], summary }
    }
}

fn condition_summary(r: &ConditionReport) -> String {
    format!("holds_assumption_iii={} holds_stronger={}", r.holds_assumption_iii, r.holds_stronger)
}

/// In strict mode the penalised solution must actually liquidate.
fn check_liquidated(penalty: Penalty, terminal: impl IntoIterator<Item = f64>) -> Result<()> {
    if penalty.is_strict() {
        let worst = terminal.into_iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if worst > STRICT_TOL {
            anyhow::bail!("strict liquidation not reached: |X_T| = {worst:e} > {STRICT_TOL:e}");
        }
    }
    Ok(())
}

fn last(v: &[f64]) -> f64 {
    v.last().copied().unwrap_or(0.0)
}

struct MfgRun {
    mean: MeanPath,
    player: ComposedPlayer,
}

fn run_mfg(p: &PlayerParams, s: &Settings, grid: &TimeGrid) -> Result<MfgRun> {
    let (mean, _) = solve_mfg_mean(p, s.mean_x0, s.penalty.weight(), grid)?;
    let player = compose_mfg_player(s.x, s.mean_x0, &mean, p.eta, p.lambda);
    Ok(MfgRun { mean, player })
}

pub fn mfg(s: &Settings) -> Result<Outcome> {
    let p = s.validated_players(1)?[0];
    let grid = s.grid()?;
    let run = run_mfg(&p, s, &grid)?;
    check_liquidated(s.penalty, [last(&run.player.x), last(&run.player.mean_x)])?;
    let game = Game::mean_field(&p, &run.mean, s.mean_x0, s.x)?;
    let profile = StrategyProfile::new(grid, vec![run.player.xi.clone()])?;
    let c = cost(&profile, &game)?[0].clone();
    let ey: Vec<f64> = run.mean.f.iter().map(|v| v[1]).collect();
    let ec: Vec<f64> = run.mean.f.iter().map(|v| v[2]).collect();
    let table = Table::series(
        &grid.nodes(),
        &[
            ("mean_x".into(), &run.player.mean_x),
            ("x".into(), &run.player.x),
            ("mean_y".into(), &ey),
            ("mean_c".into(), &ec),
            ("mean_xi".into(), &run.player.mean_xi),
            ("xi".into(), &run.player.xi),
        ],
    );
    let report = check_weak_interaction(&[p], 1, Regime::MeanField, &ThetaSearch::default());
    let summary = format!(
        "mfg: ansatz_residual={} boundary_condition={} x_T={} mean_x_T={} cost={} {}",
        fmt_g(run.mean.ansatz_residual),
        fmt_g(run.mean.boundary_condition),
        fmt_g(last(&run.player.x)),
        fmt_g(last(&run.player.mean_x)),
        fmt_g(c.total),
        condition_summary(&report)
    );
    Ok(Outcome::single(s, table, summary))
}

fn residual_text(sol: &EquilibriumSolution) -> String {
    format!(
        "ansatz_residual={} boundary_condition={}",
        fmt_g(sol.diagnostics.ansatz_residual.unwrap_or(f64::NAN)),
        fmt_g(sol.diagnostics.boundary_condition.unwrap_or(f64::NAN))
    )
}

fn costs_text(sol: &EquilibriumSolution) -> String {
    sol.costs.iter().map(|c| fmt_g(c.total)).collect::<Vec<_>>().join(";")
}

pub fn single(s: &Settings) -> Result<Outcome> {
    let p = s.validated_players(1)?[0];
    let grid = s.grid()?;
    let sol = solve_single_player(&p, s.x, s.penalty.weight(), &grid)?;
    let pl = &sol.players[0];
    check_liquidated(s.penalty, [last(&pl.x)])?;
    let table = Table::series(
        &grid.nodes(),
        &[("x".into(), &pl.x), ("y".into(), &pl.y), ("c".into(), &pl.c), ("xi".into(), &pl.xi)],
    );
    let det = sol.diagnostics.generator_det.map(|(c, _)| fmt_g(c)).unwrap_or_default();
    let summary =
        format!("single: {} det={} x_T={} cost={}", residual_text(&sol), det, fmt_g(last(&pl.x)), costs_text(&sol));
    Ok(Outcome::single(s, table, summary))
}

fn two_solution(s: &Settings, grid: &TimeGrid) -> Result<(Vec<PlayerParams>, EquilibriumSolution)> {
    let ps = s.validated_players(2)?;
    let sol = solve_two_player(&ps[0], &ps[1], s.x1, s.x2, s.penalty.weight(), grid)?;
    check_liquidated(s.penalty, sol.players.iter().map(|p| last(&p.x)))?;
    Ok((ps, sol))
}

pub fn two(s: &Settings) -> Result<Outcome> {
    let grid = s.grid()?;
    let (ps, sol) = two_solution(s, &grid)?;
    let (a, b) = (&sol.players[0], &sol.players[1]);
    let table = Table::series(
        &grid.nodes(),
        &[
            ("x1".into(), &a.x),
            ("x2".into(), &b.x),
            ("xi1".into(), &a.xi),
            ("xi2".into(), &b.xi),
            ("y1".into(), &a.y),
            ("y2".into(), &b.y),
            ("c1".into(), &a.c),
            ("c2".into(), &b.c),
        ],
    );
    let report = check_weak_interaction(&ps, 2, Regime::NPlayer, &ThetaSearch::default());
    let summary = format!(
        "two: {} x1_T={} x2_T={} cost={} {}",
        residual_text(&sol),
        fmt_g(last(&a.x)),
        fmt_g(last(&b.x)),
        costs_text(&sol),
        condition_summary(&report)
    );
    Ok(Outcome::single(s, table, summary))
}

/// Initial positions: explicit list, else N draws from the sampler.
fn initials(s: &Settings) -> Result<Vec<f64>> {
    match (&s.initials, s.n) {
        (Some(v), Some(n)) if v.len() != n => Err(config_err(format!("initials: {} values for N = {n}", v.len()))),
        (Some(v), _) if v.is_empty() => Err(config_err("initials: empty list")),
        (Some(v), _) => Ok(v.clone()),
        (None, Some(0)) => Err(config_err("N: must be positive")),
        (None, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            Ok(s.sampler.sample(n, &mut rng))
        }
        (None, None) => Err(config_err("nplayer: give --initials or --N")),
    }
}

fn nplayer_solution(s: &Settings, grid: &TimeGrid) -> Result<(Vec<PlayerParams>, MarketSetup, EquilibriumSolution)> {
    let x0 = initials(s)?;
    let ps = s.validated_players(x0.len())?;
    let setup = MarketSetup::new(s.horizon, s.penalty, x0);
    setup.validate().map_err(|e| config_err(e.to_string()))?;
    let sol = if ps.iter().all(|p| *p == ps[0]) {
        solve_nplayer_homogeneous(&ps[0], &setup, grid)?
    } else {
        solve_nplayer(&ps, &setup, grid)?
    };
    check_liquidated(s.penalty, sol.players.iter().map(|p| last(&p.x)))?;
    Ok((ps, setup, sol))
}

pub fn nplayer(s: &Settings) -> Result<Outcome> {
    let grid = s.grid()?;
    let (ps, setup, sol) = nplayer_solution(s, &grid)?;
    let n = ps.len();
    let mut cols: Vec<(String, &[f64])> = Vec::with_capacity(2 * n);
    for (i, p) in sol.players.iter().enumerate() {
        cols.push((format!("x{}", i + 1), &p.x));
    }
    for (i, p) in sol.players.iter().enumerate() {
        cols.push((format!("xi{}", i + 1), &p.xi));
    }
    let table = Table::series(&grid.nodes(), &cols);
    let report = check_weak_interaction(&ps, n, Regime::NPlayer, &ThetaSearch::default());
    let worst_terminal = sol.players.iter().fold(0.0f64, |m, p| m.max(last(&p.x).abs()));
    let summary = format!(
        "nplayer: N={} {} mean_x0={} max_abs_x_T={} {}",
        n,
        residual_text(&sol),
        fmt_g(setup.population_mean),
        fmt_g(worst_terminal),
        condition_summary(&report)
    );
    Ok(Outcome::single(s, table, summary))
}

pub fn hawkes(s: &Settings) -> Result<Outcome> {
    let params = HawkesParams { mu: s.mu, alpha: s.common.alpha, beta: s.common.beta };
    params.validate().map_err(|e| config_err(e.to_string()))?;
    let grid = s.grid()?;
    let rate = if s.rate == 0.0 { TraderRate::Zero } else { TraderRate::constant(grid, s.rate) };
    let events = hawkes::simulate(&params, &rate, s.horizon, s.seed)?;
    let mut table = Table::new(["time", "side"]);
    for (t, side) in events.merged() {
        table.push(vec![fmt_g(t), if side > 0 { "sell".into() } else { "buy".into() }]);
    }
    let sell_mean = HawkesParams { mu: s.mu + s.rate.max(0.0), ..params }.mean_count(s.horizon);
    let buy_mean = HawkesParams { mu: s.mu + (-s.rate).max(0.0), ..params }.mean_count(s.horizon);
    let mut summary = format!(
        "hawkes: sells={} buys={} expected_sells={} expected_buys={}",
        events.sell_times.len(),
        events.buy_times.len(),
        fmt_g(sell_mean),
        fmt_g(buy_mean)
    );
    if s.paths > 0 {
        let est = hawkes::monte_carlo_sell_count(&params, &rate, s.horizon, s.paths, s.seed)?;
        summary.push_str(&format!(
            " paths={} mc_sells={} std_error={} within_3se={}",
            s.paths,
            fmt_g(est.mean),
            fmt_g(est.std_error),
            est.within(sell_mean, 3.0)
        ));
    }
    Ok(Outcome::single(s, table, summary))
}

fn instance(s: &Settings, default: &str) -> Result<String> {
    let name = s.instance.clone().unwrap_or_else(|| default.to_string());
    match name.as_str() {
        "mfg" | "single" | "two" | "nplayer" => Ok(name),
        other => Err(config_err(format!("instance: unknown {other:?}; use mfg, single, two or nplayer"))),
    }
}

pub fn sweep_n(s: &Settings) -> Result<Outcome> {
    let grid = s.grid()?;
    let inst = match instance(s, "single")?.as_str() {
        "mfg" => Instance::MeanField { params: s.validated_players(1)?[0], mean_x0: s.mean_x0 },
        "single" => Instance::Single { params: s.validated_players(1)?[0], x: s.x },
        "two" => {
            let ps = s.validated_players(2)?;
            Instance::Two { p1: ps[0], p2: ps[1], x1: s.x1, x2: s.x2 }
        }
        _ => {
            let x0 = initials(s)?;
            Instance::NPlayer { params: s.validated_players(x0.len())?, initials: x0 }
        }
    };
    if s.penalties.iter().any(|n| !(n.is_finite() && *n > 0.0)) {
        return Err(config_err("penalties: weights must be positive and finite"));
    }
    if s.penalties.windows(2).any(|w| w[1] <= w[0]) {
        return Err(config_err("penalties: list must be strictly ascending"));
    }
    let points = penalization_sweep(&inst, &s.penalties, &grid)?;
    let players = points.first().map(|p| p.terminal.len()).unwrap_or(0);
    let suffix = |i: usize| if players == 1 { String::new() } else { format!("_{}", i + 1) };
    let mut header = vec!["n".to_string()];
    header.extend((0..players).map(|i| format!("abs_x_terminal{}", suffix(i))));
    header.extend((0..players).map(|i| format!("n_abs_x_terminal{}", suffix(i))));
    header.push("distance_to_previous".into());
    let mut table = Table::new(header);
    for p in &points {
        let mut row = vec![fmt_g(p.penalty)];
        row.extend(p.terminal.iter().map(|x| fmt_g(*x)));
        row.extend(p.terminal.iter().map(|x| fmt_g(p.penalty * x)));
        row.push(p.distance_to_previous.map(fmt_g).unwrap_or_default());
        table.push(row);
    }
    let decreasing = (0..players).all(|i| points.windows(2).all(|w| w[1].terminal[i] < w[0].terminal[i]));
    let scaled: Vec<f64> = points.iter().flat_map(|p| p.terminal.iter().map(move |x| p.penalty * x)).collect();
    let spread = scaled.iter().cloned().fold(0.0f64, f64::max) / scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let summary = format!(
        "sweep-n: points={} terminal_strictly_decreasing={} scaled_spread={}",
        points.len(),
        decreasing,
        fmt_g(spread)
    );
    Ok(Outcome::single(s, table, summary))
}

pub fn converge(s: &Settings) -> Result<Outcome> {
    let p = s.validated_players(1)?[0];
    let grid = s.grid()?;
    if s.replications == 0 {
        return Err(config_err("replications: must be positive"));
    }
    let opts =
        ExperimentOptions { replications: s.replications, penalty: s.penalty.weight(), ..ExperimentOptions::default() };
    if s.n_list.iter().any(|n| *n > opts.max_players) {
        return Err(config_err(format!("n_list: N is capped at {}", opts.max_players)));
    }
    let report = nplayer_to_mfg(&p, &s.n_list, &s.sampler, s.seed, &grid, &opts).map_err(|e| match e {
        liqgame::convergence::ConvergenceError::Invalid(m) => config_err(format!("n_list: {m}")),
        other => other.into(),
    })?;
    let mut table = Table::new(["N", "replication", "strategy_l2_error", "state_sup_error"]);
    for r in &report.rows {
        table.push(vec![
            r.n.to_string(),
            r.replication.to_string(),
            fmt_g(r.strategy_l2_error),
            fmt_g(r.state_sup_error),
        ]);
    }
    let per_n = report
        .n_values
        .iter()
        .zip(&report.strategy_l2)
        .map(|(n, e)| format!("{n}:{}", fmt_g(*e)))
        .collect::<Vec<_>>()
        .join(",");
    let summary = format!(
        "converge: strategy_l2=[{}] strategy_rate={} mean_rate_slope={} strictly_decreasing={} halved={}",
        per_n,
        fmt_g(report.strategy_rate),
        fmt_g(report.mean_rate_slope),
        report.strictly_decreasing,
        report.halved
    );
    Ok(Outcome::single(s, table, summary))
}

pub fn verify(s: &Settings) -> Result<Outcome> {
    let grid = s.grid()?;
    let (profile, game, report) = match instance(s, "two")?.as_str() {
        "mfg" => {
            let p = s.validated_players(1)?[0];
            let run = run_mfg(&p, s, &grid)?;
            let game = Game::mean_field(&p, &run.mean, s.mean_x0, s.x)?;
            let profile = StrategyProfile::new(grid, vec![run.player.xi])?;
            (profile, game, check_weak_interaction(&[p], 1, Regime::MeanField, &ThetaSearch::default()))
        }
        "single" => {
            let p = s.validated_players(1)?[0];
            let sol = solve_single_player(&p, s.x, s.penalty.weight(), &grid)?;
            let game = Game::nplayer(&[p], &MarketSetup::new(s.horizon, s.penalty, vec![s.x]))?;
            (
                StrategyProfile::from_solution(&sol),
                game,
                check_weak_interaction(&[p], 1, Regime::NPlayer, &ThetaSearch::default()),
            )
        }
        "two" => {
            let (ps, sol) = two_solution(s, &grid)?;
            let game = Game::nplayer(&ps, &MarketSetup::new(s.horizon, s.penalty, vec![s.x1, s.x2]))?;
            (
                StrategyProfile::from_solution(&sol),
                game,
                check_weak_interaction(&ps, 2, Regime::NPlayer, &ThetaSearch::default()),
            )
        }
        _ => {
            let (ps, setup, sol) = nplayer_solution(s, &grid)?;
            let report = check_weak_interaction(&ps, ps.len(), Regime::NPlayer, &ThetaSearch::default());
            (StrategyProfile::from_solution(&sol), Game::nplayer(&ps, &setup)?, report)
        }
    };
    let family = BumpFamily::default();
    let mut table = Table::new(["trial", "player", "gap", "amplitude"]);
    let (mut min_gap, mut max_decomp) = (f64::INFINITY, 0.0f64);
    let mut violations = 0usize;
    for player in 0..game.params.len() {
        let r = nash_deviation_test(&profile, &game, player, s.trials, s.seed, &family)
            .with_context(|| format!("deviation test for player {}", player + 1))?;
        for t in &r.trials {
            table.push(vec![t.trial.to_string(), (t.player + 1).to_string(), fmt_g(t.gap), fmt_g(t.amplitude)]);
        }
        min_gap = min_gap.min(r.min_gap);
        max_decomp = max_decomp.max(r.max_decomposition_gap);
        violations += r.trials.iter().filter(|t| t.gap < -1e-8).count();
    }
    let summary = format!(
        "verify: trials_per_player={} min_gap={} violations={} max_decomposition_gap={} {}",
        s.trials,
        fmt_g(min_gap),
        violations,
        fmt_g(max_decomp),
        condition_summary(&report)
    );
    Ok(Outcome::single(s, table, summary))
}

pub fn check(s: &Settings) -> Result<Outcome> {
    let regime = match s.regime.as_deref().unwrap_or("nplayer") {
        "nplayer" => Regime::NPlayer,
        "mfg" => Regime::MeanField,
        other => return Err(config_err(format!("regime: unknown {other:?}; use nplayer or mfg"))),
    };
    let n = match regime {
        Regime::MeanField => 1,
        Regime::NPlayer => s.n.or(s.initials.as_ref().map(Vec::len)).unwrap_or(2),
    };
    if n == 0 {
        return Err(config_err("N: must be positive"));
    }
    let ps = s.players(n)?;
    let r = check_weak_interaction(&ps, n, regime, &ThetaSearch::default());
    let mut table = Table::new(["field", "value"]);
    let mut put = |k: &str, v: String| table.push(vec![k.to_string(), v]);
    put("regime", format!("{:?}", r.regime));
    put("num_players", r.num_players.to_string());
    put("stable", r.stable.to_string());
    put("rho_hat", fmt_g(r.rho_hat));
    put("rho_tilde", fmt_g(r.rho_tilde));
    put("b", fmt_g(r.b));
    put("theta", fmt_g(r.theta));
    for (i, t) in r.thetas.iter().enumerate() {
        put(&format!("theta_{i}"), fmt_g(*t));
    }
    put("holds_cond_a", r.holds_cond_a.to_string());
    put("holds_assumption_iii", r.holds_assumption_iii.to_string());
    put("slack_assumption_1", fmt_g(r.slack_assumption[0]));
    put("slack_assumption_2", fmt_g(r.slack_assumption[1]));
    put("holds_stronger", r.holds_stronger.to_string());
    put("slack_stronger_1", fmt_g(r.slack_stronger[0]));
    put("slack_stronger_2", fmt_g(r.slack_stronger[1]));
    let summary = format!(
        "check: regime={:?} N={} stable={} holds_cond_a={} {}",
        r.regime,
        n,
        r.stable,
        r.holds_cond_a,
        condition_summary(&r)
    );
    Ok(Outcome::single(s, table, summary))
}

pub const FIGURE_ALPHAS: [f64; 4] = [0.2, 0.6, 1.0, 1.05];
/// γ values for the transient-impact panel; the caption fixes only α = 1.
pub const FIGURE_GAMMAS: [f64; 4] = [0.1, 1.0, 5.0, 10.0];

pub fn figures(s: &Settings) -> Result<Outcome> {
    let grid = s.grid()?;
    let base = s.validated_players(1)?[0];
    let dir = s.output.clone().unwrap_or_else(|| PathBuf::from("figures"));
    std::fs::create_dir_all(&dir).map_err(|e| config_err(format!("output: cannot create {}: {e}", dir.display())))?;
    let t = grid.nodes();
    let w = s.penalty.weight();
    let mut tables = Vec::new();
    let mut worst_residual = 0.0f64;

    for gamma in [0.1, 1.0] {
        let mut cols = Vec::new();
        for alpha in FIGURE_ALPHAS {
            let p = PlayerParams { alpha, gamma, ..base };
            let run =
                run_mfg(&p, s, &grid).with_context(|| format!("mean-field game at alpha={alpha}, gamma={gamma}"))?;
            worst_residual = worst_residual.max(run.mean.ansatz_residual);
            cols.push((format!("x_alpha_{}", fmt_g(alpha)), run.player.x));
        }
        let refs: Vec<(String, &[f64])> = cols.iter().map(|(n, v)| (n.clone(), v.as_slice())).collect();
        tables.push((Some(dir.join(format!("fig1_gamma_{}.csv", fmt_g(gamma)))), Table::series(&t, &refs)));
    }

    let single_panel = |name: &str, label: &str, sets: Vec<(f64, PlayerParams)>, worst: &mut f64| -> Result<_> {
        let mut cols = Vec::new();
        for (v, p) in sets {
            let sol =
                solve_single_player(&p, s.x, w, &grid).with_context(|| format!("single player at {label}={v}"))?;
            *worst = worst.max(sol.diagnostics.ansatz_residual.unwrap_or(0.0));
            cols.push((format!("x_{label}_{}", fmt_g(v)), sol.players[0].x.clone()));
        }
        let refs: Vec<(String, &[f64])> = cols.iter().map(|(n, v)| (n.clone(), v.as_slice())).collect();
        Ok((Some(dir.join(name)), Table::series(&t, &refs)))
    };
    let by_alpha = FIGURE_ALPHAS.iter().map(|a| (*a, PlayerParams { alpha: *a, gamma: 1.0, ..base })).collect();
    tables.push(single_panel("fig2_alpha.csv", "alpha", by_alpha, &mut worst_residual)?);
    let by_gamma = FIGURE_GAMMAS.iter().map(|g| (*g, PlayerParams { alpha: 1.0, gamma: *g, ..base })).collect();
    tables.push(single_panel("fig2_gamma.csv", "gamma", by_gamma, &mut worst_residual)?);

    for gamma in [1.0, 0.1] {
        let p = PlayerParams { alpha: 1.0, gamma, ..base };
        let sol = solve_two_player(&p, &p, 1.0, 0.0, w, &grid)
            .with_context(|| format!("two-player game at gamma={gamma}"))?;
        worst_residual = worst_residual.max(sol.diagnostics.ansatz_residual.unwrap_or(0.0));
        let table = Table::series(&t, &[("x1".into(), &sol.players[0].x), ("x2".into(), &sol.players[1].x)]);
        tables.push((Some(dir.join(format!("fig3_gamma_{}.csv", fmt_g(gamma)))), table));
    }

    let summary =
        format!("figures: files={} dir={} max_ansatz_residual={}", tables.len(), dir.display(), fmt_g(worst_residual));
    Ok(Outcome { tables, summary })
}
