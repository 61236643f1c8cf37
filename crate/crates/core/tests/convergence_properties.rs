use liqgame::convergence::{nplayer_to_mfg, ExperimentOptions, Sampler};
use liqgame::{PlayerParams, TimeGrid};

#[test]
fn errors_shrink_with_population() {
    let p = PlayerParams { eta: 0.1, lambda: 0.3, rho: 0.2, alpha: 0.6, beta: 1.1, gamma: 0.1 };
    let grid = TimeGrid::new(5.0, 200).unwrap();
    let opts = ExperimentOptions { replications: 6, ..ExperimentOptions::default() };
    let report =
        nplayer_to_mfg(&p, &[2, 4, 8, 16, 32], &Sampler::Uniform { low: 1.0, high: 2.0 }, 3, &grid, &opts).unwrap();
    assert_eq!(report.rows.len(), 30);
    assert!(report.halved, "{:?}", report.strategy_l2);
    assert!(report.strategy_rate < -0.5, "slope {} for {:?}", report.strategy_rate, report.strategy_l2);
    let again =
        nplayer_to_mfg(&p, &[2, 4, 8, 16, 32], &Sampler::Uniform { low: 1.0, high: 2.0 }, 3, &grid, &opts).unwrap();
    assert_eq!(report, again);
}
