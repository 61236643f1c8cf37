//! Equilibrium solvers against independent oracles and structural invariants.

use liqgame::equilibria::*;
use liqgame::matops::{cumulative_integral, Matrix, TimeGrid};
use liqgame::model::{MarketSetup, Penalty};
use liqgame::PlayerParams;
use num_rational::Ratio;
use proptest::prelude::*;

type Q = Ratio<i64>;

fn caption(alpha: f64, gamma: f64) -> PlayerParams {
    PlayerParams { eta: 0.1, lambda: 0.3, rho: 0.2, alpha, beta: 1.1, gamma }
}

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

/// Right-hand side of the N-player state/adjoint system at z, read off the
/// Hamiltonian of each player with the rate eliminated.
fn nplayer_field(params: &[Coeffs<Q>], z: &[Q]) -> Vec<Q> {
    let n = params.len();
    let nn = Q::from_integer(n as i64);
    let d = 3 * n;
    let (xs, ys, cs) = (|i| z[3 * i], |i| z[3 * i + 1], |i| z[3 * i + 2]);
    let (ps, qs, rs) = (|i| z[d + 3 * i], |i| z[d + 3 * i + 1], |i| z[d + 3 * i + 2]);
    let rate = |i: usize| {
        let p = &params[i];
        (ps(i) - ys(i) - p.gamma * qs(i) / nn) / (Q::from_integer(2) * p.eta)
    };
    let mean_rate = (0..n).map(rate).fold(Q::from_integer(0), |a, b| a + b) / nn;
    let mean_x = (0..n).map(xs).fold(Q::from_integer(0), |a, b| a + b) / nn;
    let mut out = vec![Q::from_integer(0); 2 * d];
    for i in 0..n {
        let p = &params[i];
        let kappa = p.beta - p.alpha;
        let excite = -(p.alpha * mean_x);
        out[3 * i] = -rate(i);
        out[3 * i + 1] = -(p.rho * ys(i)) + p.gamma * (mean_rate - kappa * cs(i) + excite);
        out[3 * i + 2] = -(kappa * cs(i)) + excite;
        // adjoints: minus the state gradient of the Hamiltonian
        out[d + 3 * i] = -(Q::from_integer(2) * p.lambda * xs(i)) + p.alpha * (p.gamma * qs(i) + rs(i)) / nn;
        out[d + 3 * i + 1] = -rate(i) + p.rho * qs(i);
        out[d + 3 * i + 2] = kappa * (p.gamma * qs(i) + rs(i));
    }
    out
}

#[test]
fn three_player_generator_matches_hamiltonian_system() {
    let params = [
        Coeffs { eta: q(1, 10), lambda: q(3, 10), rho: q(1, 5), alpha: q(1, 1), beta: q(11, 10), gamma: q(1, 1) },
        Coeffs { eta: q(1, 4), lambda: q(1, 2), rho: q(1, 3), alpha: q(1, 2), beta: q(3, 2), gamma: q(2, 1) },
        Coeffs { eta: q(2, 5), lambda: q(0, 1), rho: q(3, 4), alpha: q(0, 1), beta: q(1, 1), gamma: q(1, 10) },
    ];
    let g = nplayer_generator(&params);
    let dim = 18;
    for col in 0..dim {
        let mut unit = vec![q(0, 1); dim];
        unit[col] = q(1, 1);
        let field = nplayer_field(&params, &unit);
        for row in 0..dim {
            assert_eq!(g[row][col], field[row], "entry ({row},{col})");
        }
    }
    assert_eq!(nplayer_forcing(&params, &[q(1, 1), q(2, 1), q(0, 1)])[..3], [q(0, 1), q(1, 1), q(1, 1)]);
    // a few entries by hand: player 1's impact responds to player 2's adjoint and to all positions
    assert_eq!(g[1][12], q(1, 1) / q(3, 1) / q(1, 2));
    assert_eq!(g[1][6], q(-1, 3));
    assert_eq!(g[2][3], q(-1, 3));
    assert_eq!(g[10][10], q(1, 5) + q(1, 6) / q(1, 10));
}

fn generator_blocks(g: &Matrix, d: usize) -> [Matrix; 4] {
    [g.block(0, 0, d, d), g.block(0, d, d, d), g.block(d, 0, d, d), g.block(d, d, d, d)]
}

/// max over interior nodes with t ≤ T − 0.5 of the central-difference residual of
/// D' = G₂₁ + G₂₂D − DG₁₁ − DG₁₂D.
fn riccati_residual(steps: usize) -> f64 {
    let p = caption(0.6, 0.1);
    let grid = TimeGrid::new(5.0, steps).unwrap();
    let (_, ric) = solve_mfg_mean(&p, 1.5, 1e4, &grid).unwrap();
    assert_eq!(ric.nodes, (0..=steps).collect::<Vec<_>>());
    let g = dense_to_matrix(&mfg_generator(&Coeffs::from(&p)));
    let [g11, g12, g21, g22] = generator_blocks(&g, 3);
    let h = grid.dt();
    let mut worst = 0.0f64;
    for k in 1..steps {
        if grid.node(k) > 4.5 {
            break;
        }
        let d = &ric.d[k];
        let fd = ric.d[k + 1].sub(&ric.d[k - 1]).scale(0.5 / h);
        let rhs = g21.add(&g22.matmul(d)).sub(&d.matmul(&g11)).sub(&d.matmul(&g12).matmul(d));
        worst = worst.max(fd.sub(&rhs).max_abs() / (1.0 + rhs.max_abs()));
    }
    worst
}

#[test]
fn riccati_feedback_satisfies_matrix_riccati() {
    let (coarse, fine) = (riccati_residual(500), riccati_residual(1000));
    assert!(fine < 1e-3, "{fine:e}");
    let ratio = coarse / fine;
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

fn assert_rates_integrate(x: &[f64], xi: &[f64], grid: &TimeGrid) {
    let sold = cumulative_integral(xi, grid);
    let sup = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (k, s) in sold.iter().enumerate() {
        let err = (x[0] - s - x[k]).abs();
        assert!(err <= 1e-8 * (1.0 + sup), "node {k}: {err:e}");
    }
}

#[test]
fn rates_are_minus_position_derivative() {
    let grid = TimeGrid::new(5.0, 1000).unwrap();
    for gamma in [0.1, 1.0] {
        let p = caption(1.0, gamma);
        let two = solve_two_player(&p, &p, 1.0, 0.0, 1e4, &grid).unwrap();
        for pl in &two.players {
            assert_rates_integrate(&pl.x, &pl.xi, &grid);
        }
        let one = solve_single_player(&caption(0.6, gamma), 1.0, 1e4, &grid).unwrap();
        assert_rates_integrate(&one.players[0].x, &one.players[0].xi, &grid);
        let (mean, _) = solve_mfg_mean(&caption(0.6, gamma), 1.5, 1e4, &grid).unwrap();
        assert_rates_integrate(&mean.mean_x(), &mean.mean_rate(), &grid);
        let composed = compose_mfg_player(1.0, 1.5, &mean, p.eta, p.lambda);
        assert_rates_integrate(&composed.x, &composed.xi, &grid);
    }
}

#[test]
fn boundary_solver_is_exact_on_coarse_grids() {
    let p = caption(0.6, 0.1);
    let fine = TimeGrid::new(5.0, 1000).unwrap();
    let (reference, _) = solve_mfg_mean(&p, 1.5, 1e4, &fine).unwrap();
    for steps in [10usize, 50, 250] {
        let grid = TimeGrid::new(5.0, steps).unwrap();
        let (coarse, _) = solve_mfg_mean(&p, 1.5, 1e4, &grid).unwrap();
        let stride = 1000 / steps;
        for k in 0..=steps {
            assert!((coarse.f[k][0] - reference.f[k * stride][0]).abs() < 1e-11);
        }
    }
}

#[test]
fn picard_converges_at_second_order_or_better() {
    let p = caption(0.6, 0.1);
    let fine = TimeGrid::new(5.0, 800).unwrap();
    let (mean, _) = solve_mfg_mean(&p, 1.5, 1e4, &fine).unwrap();
    let reference = mean.mean_x();
    let opts = PicardOptions { tol: 1e-12, max_iter: 2000, ..PicardOptions::default() };
    let problem = PicardProblem::mean_field(&p, 1.5, 1e4).unwrap();
    let errors: Vec<f64> = [25usize, 50, 100, 200]
        .iter()
        .map(|&steps| {
            let grid = TimeGrid::new(5.0, steps).unwrap();
            let sol = solve_picard(&problem, &grid, &opts).unwrap();
            let stride = 800 / steps;
            (0..=steps).map(|k| (sol.players[0].x[k] - reference[k * stride]).abs()).fold(0.0, f64::max)
        })
        .collect();
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "errors {errors:?}");
    }
}

#[test]
fn idiosyncratic_slope_matches_reciprocal_rk4() {
    // u = 1/A solves u' = 2λu² − 1/(2η) with u(T) = 0
    for (eta, lambda) in [(0.1, 0.3), (0.25, 0.0), (1.0, 2.0)] {
        let grid = TimeGrid::new(5.0, 100).unwrap();
        let a = idiosyncratic_coefficient(eta, lambda, &grid).unwrap();
        assert!(a.values[100].is_infinite());
        let f = |u: f64| 2.0 * lambda * u * u - 1.0 / (2.0 * eta);
        let sub = 200;
        let h = -grid.dt() / sub as f64;
        let mut u = 0.0;
        for k in (0..100).rev() {
            for _ in 0..sub {
                let k1 = f(u);
                let k2 = f(u + 0.5 * h * k1);
                let k3 = f(u + 0.5 * h * k2);
                let k4 = f(u + h * k3);
                u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            let oracle = 1.0 / u;
            assert!((a.values[k] - oracle).abs() < 1e-9 * oracle.abs(), "eta {eta} lambda {lambda} node {k}");
        }
    }
}

#[test]
fn composed_deviation_matches_shooting() {
    let p = caption(0.6, 0.1);
    let grid = TimeGrid::new(5.0, 500).unwrap();
    let (mean, _) = solve_mfg_mean(&p, 1.5, 1e4, &grid).unwrap();
    let composed = compose_mfg_player(0.25, 1.5, &mean, p.eta, p.lambda);
    let k2 = p.lambda / p.eta;
    // δ'' = k²δ as a first-order system, shot from δ(0) = x − 𝔼X₀ with two slopes
    let shoot = |slope: f64| {
        let mut s = [0.25 - 1.5, slope];
        let sub = 20;
        let h = grid.dt() / sub as f64;
        let rhs = |v: [f64; 2]| [v[1], k2 * v[0]];
        let mut path = vec![s[0]];
        for _ in 0..500 {
            for _ in 0..sub {
                let a = rhs(s);
                let b = rhs([s[0] + 0.5 * h * a[0], s[1] + 0.5 * h * a[1]]);
                let c = rhs([s[0] + 0.5 * h * b[0], s[1] + 0.5 * h * b[1]]);
                let d = rhs([s[0] + h * c[0], s[1] + h * c[1]]);
                s = [
                    s[0] + h / 6.0 * (a[0] + 2.0 * b[0] + 2.0 * c[0] + d[0]),
                    s[1] + h / 6.0 * (a[1] + 2.0 * b[1] + 2.0 * c[1] + d[1]),
                ];
            }
            path.push(s[0]);
        }
        path
    };
    let (y0, y1) = (shoot(0.0), shoot(1.0));
    let slope = -y0[500] / (y1[500] - y0[500]);
    let oracle = shoot(slope);
    for k in 0..=500 {
        let dev = composed.x[k] - composed.mean_x[k];
        assert!((dev - oracle[k]).abs() < 1e-8, "node {k}: {dev} vs {}", oracle[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solutions_are_linear_in_initial_data(scale in -3.0f64..3.0, x1 in -2.0f64..2.0, x2 in -2.0f64..2.0, gamma in 0.05f64..1.0) {
        let grid = TimeGrid::new(5.0, 200).unwrap();
        let p = caption(0.6, gamma);
        let base = solve_two_player(&p, &p, x1, x2, 1e3, &grid).unwrap();
        let scaled = solve_two_player(&p, &p, scale * x1, scale * x2, 1e3, &grid).unwrap();
        for (a, b) in base.players.iter().zip(&scaled.players) {
            let size = a.x.iter().chain(&a.xi).fold(0.0f64, |m, v| m.max(v.abs()));
            for (u, v) in a.x.iter().chain(&a.xi).zip(b.x.iter().chain(&b.xi)) {
                prop_assert!((scale * u - v).abs() <= 1e-10 * (1.0 + scale.abs() * size));
            }
        }
        let (m1, _) = solve_mfg_mean(&p, x1, 1e3, &grid).unwrap();
        let (m2, _) = solve_mfg_mean(&p, scale * x1, 1e3, &grid).unwrap();
        for (u, v) in m1.mean_x().iter().zip(m2.mean_x()) {
            prop_assert!((scale * u - v).abs() <= 1e-10 * (1.0 + (scale * x1).abs()));
        }
    }

    #[test]
    fn homogeneous_split_matches_dense(xs in proptest::collection::vec(0.0f64..2.0, 3..6), gamma in 0.05f64..1.0) {
        let grid = TimeGrid::new(2.0, 100).unwrap();
        let p = caption(0.6, gamma);
        let setup = MarketSetup::new(2.0, Penalty::Finite(100.0), xs.clone());
        let dense = solve_nplayer(&vec![p; xs.len()], &setup, &grid).unwrap();
        let split = solve_nplayer_homogeneous(&p, &setup, &grid).unwrap();
        prop_assert!(dense.sup_distance(&split) < 1e-9);
    }
}
