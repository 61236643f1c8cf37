//! Cost functional and deviation test on random admissible instances.

use liqgame::equilibria::{solve_mfg_mean, solve_two_player};
use liqgame::verify::{cost, decomposition_check, nash_deviation_test, BumpFamily, Game, StrategyProfile};
use liqgame::{MarketSetup, Penalty, PlayerParams, TimeGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng) -> PlayerParams {
    let beta = rng.gen_range(0.5..2.0);
    PlayerParams {
        eta: rng.gen_range(0.05..0.5),
        lambda: rng.gen_range(0.05..1.0),
        rho: rng.gen_range(0.1..1.0),
        alpha: rng.gen_range(0.0..0.9) * beta,
        beta,
        gamma: rng.gen_range(0.0..0.5),
    }
}

fn two_player(p1: &PlayerParams, p2: &PlayerParams, x: [f64; 2], n: f64, grid: &TimeGrid) -> (StrategyProfile, Game) {
    let sol = solve_two_player(p1, p2, x[0], x[1], n, grid).unwrap();
    let setup = MarketSetup::new(grid.horizon(), Penalty::Finite(n), x.to_vec());
    (StrategyProfile::from_solution(&sol), Game::nplayer(&[*p1, *p2], &setup).unwrap())
}

#[test]
fn costs_converge_at_fourth_order() {
    let p = PlayerParams { eta: 0.1, lambda: 0.3, rho: 0.2, alpha: 0.6, beta: 1.1, gamma: 0.5 };
    let horizon = 2.0;
    // a fixed smooth profile, so only the quadrature and the state propagation depend on M
    let profile_cost = |steps: usize| {
        let grid = TimeGrid::new(horizon, steps).unwrap();
        let rates: Vec<Vec<f64>> = [1.0, -0.5]
            .iter()
            .map(|a| grid.nodes().iter().map(|t| a * (1.0 + (3.0 * t).sin()) * (-t).exp()).collect())
            .collect();
        let setup = MarketSetup::new(horizon, Penalty::Finite(10.0), vec![1.0, 0.5]);
        let game = Game::nplayer(&[p, p], &setup).unwrap();
        cost(&StrategyProfile::new(grid, rates).unwrap(), &game)
            .unwrap()
            .into_iter()
            .map(|c| c.total)
            .collect::<Vec<_>>()
    };
    let (j1, j2, j4) = (profile_cost(200), profile_cost(400), profile_cost(800));
    for i in 0..2 {
        let ratio = (j1[i] - j2[i]) / (j2[i] - j4[i]);
        assert!(ratio > 12.0 && ratio < 20.0, "player {i}: ratio {ratio}");
        assert!((j2[i] - j4[i]).abs() < 1e-6 * (1.0 + j4[i].abs()));
    }
}

#[test]
fn decomposition_holds_on_random_instances() {
    let grid = TimeGrid::new(2.0, 400).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let family = BumpFamily::default();
    for instance in 0..5 {
        let (p1, p2) = (random_params(&mut rng), random_params(&mut rng));
        let x = [rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0)];
        let (prof, game) = two_player(&p1, &p2, x, 1e4, &grid);
        for player in 0..2 {
            let report = nash_deviation_test(&prof, &game, player, 25, 100 + instance, &family).unwrap();
            assert!(
                report.max_decomposition_gap <= 1e-6,
                "instance {instance} player {player}: {:e}",
                report.max_decomposition_gap
            );
        }
    }
}

#[test]
fn mean_field_player_decomposition() {
    let p = PlayerParams { eta: 0.1, lambda: 0.3, rho: 0.2, alpha: 0.6, beta: 1.1, gamma: 0.1 };
    let grid = TimeGrid::new(5.0, 1000).unwrap();
    let (mean, _) = solve_mfg_mean(&p, 1.5, 1e4, &grid).unwrap();
    let game = Game::mean_field(&p, &mean, 1.5, 1.5).unwrap();
    let prof = StrategyProfile::new(grid, vec![mean.mean_rate()]).unwrap();
    let report = nash_deviation_test(&prof, &game, 0, 30, 5, &BumpFamily::default()).unwrap();
    assert!(report.max_decomposition_gap <= 1e-6);
    assert!(report.violating.is_none(), "min gap {:e}", report.min_gap);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn round_trip_gap_is_quadratic(seed in 0u64..10_000, amp in 0.01f64..1.0) {
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p1, p2) = (random_params(&mut rng), random_params(&mut rng));
        let (prof, game) = two_player(&p1, &p2, [1.0, 0.3], 1e4, &grid);
        let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let family = BumpFamily { modes: 4, max_amplitude: 1.0 };
        let gap = |a: f64| {
            let bump = family.evaluate(&grid, a, &coeffs);
            let cand: Vec<f64> = prof.rates[0].iter().zip(&bump).map(|(u, v)| u + v).collect();
            decomposition_check(&cand, &prof, &game, 0).unwrap().lhs
        };
        let (g1, g2) = (gap(amp), gap(2.0 * amp));
        prop_assert!((g2 - 4.0 * g1).abs() <= 1e-7 * (1.0 + g2.abs()), "{g1:e} {g2:e}");
    }
}
