//! Self-exciting buy/sell order flow and its first-moment dynamics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::matops::{expm_with_integral, MatError, Matrix, TimeGrid};

/// Upper bound on the total intensity before a simulation is abandoned.
pub const MAX_INTENSITY: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HawkesError {
    #[error("invalid Hawkes parameters: {0}")]
    InvalidParams(String),
    #[error("intensity {intensity:e} exceeded the limit at t = {time}")]
    IntensityOverflow { intensity: f64, time: f64 },
    #[error("rate path has {got} values, expected {expected}")]
    RateShape { expected: usize, got: usize },
    #[error(transparent)]
    Matrix(#[from] MatError),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HawkesParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl HawkesParams {
    pub fn validate(&self) -> Result<(), HawkesError> {
        let p = self;
        if !(p.mu.is_finite() && p.alpha.is_finite() && p.beta.is_finite()) {
            return Err(HawkesError::InvalidParams("non-finite value".into()));
        }
        if p.mu < 0.0 {
            return Err(HawkesError::InvalidParams(format!("mu = {} must be nonnegative", p.mu)));
        }
        if !(p.alpha >= 0.0 && p.beta > p.alpha) {
            return Err(HawkesError::InvalidParams(format!(
                "need beta > alpha >= 0 (alpha = {}, beta = {})",
                p.alpha, p.beta
            )));
        }
        Ok(())
    }

    /// m(t) = μ(β − α e^{−(β−α)t})/(β − α), the mean intensity without a trader.
    pub fn mean_intensity(&self, t: f64) -> f64 {
        let k = self.beta - self.alpha;
        self.mu * (self.beta - self.alpha * (-k * t).exp()) / k
    }

    /// ∫₀ᵀ m(t) dt.
    pub fn mean_count(&self, horizon: f64) -> f64 {
        let k = self.beta - self.alpha;
        self.mu * (self.beta * horizon / k + self.alpha * (-k * horizon).exp_m1() / (k * k))
    }
}

/// Piecewise-constant signed trading rate; positive values are sells.
#[derive(Clone, Debug, PartialEq)]
pub enum TraderRate {
    Zero,
    /// Value `values[k]` holds on [t_k, t_{k+1}). A trailing node value is ignored.
    Piecewise {
        grid: TimeGrid,
        values: Vec<f64>,
    },
}

impl TraderRate {
    pub fn piecewise(grid: TimeGrid, values: Vec<f64>) -> Result<Self, HawkesError> {
        if values.len() != grid.steps() && values.len() != grid.len() {
            return Err(HawkesError::RateShape { expected: grid.steps(), got: values.len() });
        }
        Ok(TraderRate::Piecewise { grid, values })
    }

    pub fn constant(grid: TimeGrid, v: f64) -> Self {
        TraderRate::Piecewise { grid, values: vec![v; grid.steps()] }
    }

    /// (value, end of the constant piece) at time t.
    fn piece(&self, t: f64, horizon: f64) -> (f64, f64) {
        match self {
            TraderRate::Zero => (0.0, horizon),
            TraderRate::Piecewise { grid, values } => {
                let k = ((t / grid.dt()).floor() as usize).min(grid.steps() - 1);
                // guard against rounding at breakpoints
                let k = if grid.node(k + 1) <= t && k + 1 < grid.steps() { k + 1 } else { k };
                (values[k], grid.node(k + 1).min(horizon))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventStream {
    pub sell_times: Vec<f64>,
    pub buy_times: Vec<f64>,
}

impl EventStream {
    /// Events merged in time order as (time, side) with side +1 for sells.
    pub fn merged(&self) -> Vec<(f64, i8)> {
        let mut v: Vec<(f64, i8)> =
            self.sell_times.iter().map(|t| (*t, 1)).chain(self.buy_times.iter().map(|t| (*t, -1))).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        v
    }
}

/// Ogata thinning for one side with base μ + s·ξ⁺ (s = ±1 picks the part).
fn thin_side(
    params: &HawkesParams,
    rate: &TraderRate,
    sign: f64,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, HawkesError> {
    let mut times = Vec::new();
    let mut t = 0.0f64;
    // excitation part α Σ e^{−β(t−s)} at the current time
    let mut excite = 0.0f64;
    while t < horizon {
        let (xi, piece_end) = rate.piece(t, horizon);
        let base = params.mu + (sign * xi).max(0.0);
        let bound = base + excite;
        if bound > MAX_INTENSITY {
            return Err(HawkesError::IntensityOverflow { intensity: bound, time: t });
        }
        if bound <= 0.0 {
            excite *= (-params.beta * (piece_end - t)).exp();
            t = piece_end;
            continue;
        }
        let u: f64 = rng.gen();
        let w = -(1.0 - u).ln() / bound;
        let cand = t + w;
        if cand >= piece_end {
            excite *= (-params.beta * (piece_end - t)).exp();
            t = piece_end;
            continue;
        }
        excite *= (-params.beta * w).exp();
        t = cand;
        let accept: f64 = rng.gen();
        if accept * bound <= base + excite {
            if times.last().is_some_and(|last| *last >= t) {
                // coincident draw after rounding: skip to keep the stream strictly increasing
                continue;
            }
            times.push(t);
            excite += params.alpha;
        }
    }
    debug_assert!(times.iter().all(|s| *s <= horizon));
    Ok(times)
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// One event stream; equivalent to path 0 of `simulate_path`.
pub fn simulate(params: &HawkesParams, rate: &TraderRate, horizon: f64, seed: u64) -> Result<EventStream, HawkesError> {
    simulate_path(params, rate, horizon, seed, 0)
}

/// Stream `path` of the generator keyed by `seed`; paths are independent of thread count.
pub fn simulate_path(
    params: &HawkesParams,
    rate: &TraderRate,
    horizon: f64,
    seed: u64,
    path: u64,
) -> Result<EventStream, HawkesError> {
    params.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(HawkesError::InvalidParams(format!("horizon {horizon} must be positive")));
    }
    let mut rng = path_rng(seed, path);
    let sell_times = thin_side(params, rate, 1.0, horizon, &mut rng)?;
    let buy_times = thin_side(params, rate, -1.0, horizon, &mut rng)?;
    Ok(EventStream { sell_times, buy_times })
}

/// Sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Self { mean, std_error: (var / n).sqrt() }
    }

    pub fn within(&self, target: f64, num_se: f64) -> bool {
        (self.mean - target).abs() <= num_se * self.std_error
    }
}

/// Per-path statistics over `paths` streams, merged by path index.
fn per_path<T: Send>(
    params: &HawkesParams,
    rate: &TraderRate,
    horizon: f64,
    paths: usize,
    seed: u64,
    f: impl Fn(&EventStream) -> T + Sync,
) -> Result<Vec<T>, HawkesError> {
    (0..paths).into_par_iter().map(|p| simulate_path(params, rate, horizon, seed, p as u64).map(|s| f(&s))).collect()
}

/// Mean number of sell events on [0, T].
pub fn monte_carlo_sell_count(
    params: &HawkesParams,
    rate: &TraderRate,
    horizon: f64,
    paths: usize,
    seed: u64,
) -> Result<Estimate, HawkesError> {
    let v = per_path(params, rate, horizon, paths, seed, |s| s.sell_times.len() as f64)?;
    Ok(Estimate::from_samples(&v))
}

/// Mean sell-side intensity at each requested time.
pub fn monte_carlo_intensity(
    params: &HawkesParams,
    rate: &TraderRate,
    horizon: f64,
    times: &[f64],
    paths: usize,
    seed: u64,
) -> Result<Vec<Estimate>, HawkesError> {
    let v = per_path(params, rate, horizon, paths, seed, |s| {
        times
            .iter()
            .map(|t| {
                let base = params.mu + rate.piece(*t, horizon).0.max(0.0);
                base + s
                    .sell_times
                    .iter()
                    .filter(|u| *u < t)
                    .map(|u| params.alpha * (-params.beta * (t - u)).exp())
                    .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    })?;
    Ok((0..times.len()).map(|j| Estimate::from_samples(&v.iter().map(|r| r[j]).collect::<Vec<_>>())).collect())
}

/// Net expected child orders α Σ± sign·(1 − e^{−β(t−s)})/β at the grid nodes
/// (the integrated excitation α∫∫e^{−β(u−s)}dZ̄_s du).
pub fn monte_carlo_child_flow(
    params: &HawkesParams,
    rate: &TraderRate,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<Vec<Estimate>, HawkesError> {
    let nodes = grid.nodes();
    let (a, b) = (params.alpha, params.beta);
    let v = per_path(params, rate, grid.horizon(), paths, seed, |s| {
        nodes
            .iter()
            .map(|t| {
                let side = |ts: &[f64]| ts.iter().filter(|u| *u < t).map(|u| -(-b * (t - u)).exp_m1()).sum::<f64>();
                a * (side(&s.sell_times) - side(&s.buy_times)) / b
            })
            .collect::<Vec<f64>>()
    })?;
    Ok((0..nodes.len()).map(|j| Estimate::from_samples(&v.iter().map(|r| r[j]).collect::<Vec<_>>())).collect())
}

/// Expected net child-order count C and expected net sell count Z̄ on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowPath {
    pub grid: TimeGrid,
    pub c: Vec<f64>,
    pub z_bar: Vec<f64>,
}

fn check_stable(alpha: f64, beta: f64) -> Result<(), HawkesError> {
    if !(alpha >= 0.0 && beta > alpha && beta.is_finite()) {
        return Err(HawkesError::InvalidParams(format!("need beta > alpha >= 0 (alpha = {alpha}, beta = {beta})")));
    }
    Ok(())
}

/// C' = −(β−α)C + α v(t), C(0) = 0, for a traded volume v that is linear between nodes.
pub fn expected_child_flow(
    alpha: f64,
    beta: f64,
    traded_volume: &[f64],
    grid: &TimeGrid,
) -> Result<FlowPath, HawkesError> {
    check_stable(alpha, beta)?;
    if traded_volume.len() != grid.len() {
        return Err(HawkesError::RateShape { expected: grid.len(), got: traded_volume.len() });
    }
    let k = beta - alpha;
    let h = grid.dt();
    let e = (-k * h).exp();
    // ∫₀ʰ e^{−k(h−s)} ds and ∫₀ʰ e^{−k(h−s)} s ds
    let w0 = -(-k * h).exp_m1() / k;
    let w1 = (h - w0) / k;
    let mut c = vec![0.0; grid.len()];
    for j in 0..grid.steps() {
        let (v0, v1) = (traded_volume[j], traded_volume[j + 1]);
        c[j + 1] = e * c[j] + alpha * (v0 * w0 + (v1 - v0) / h * w1);
    }
    let z_bar = c.iter().zip(traded_volume).map(|(a, b)| a + b).collect();
    Ok(FlowPath { grid: *grid, c, z_bar })
}

/// Solves Z̄ = V + α∫e^{−β(t−s)}Z̄ ds with V' = 𝔼ξ piecewise constant (value `k` on [t_k, t_{k+1})).
pub fn net_flow_fixedpoint(
    params: &HawkesParams,
    trader_mean_rate: &[f64],
    grid: &TimeGrid,
) -> Result<FlowPath, HawkesError> {
    check_stable(params.alpha, params.beta)?;
    if trader_mean_rate.len() != grid.steps() && trader_mean_rate.len() != grid.len() {
        return Err(HawkesError::RateShape { expected: grid.steps(), got: trader_mean_rate.len() });
    }
    // state (V, W) with W = α∫e^{−β(t−s)}Z̄: V' = ξ, W' = α V + (α − β) W
    let g = Matrix::from_rows(&[[0.0, 0.0], [params.alpha, params.alpha - params.beta]]);
    let (e, j) = expm_with_integral(&g, grid.dt())?;
    let mut state = [0.0f64, 0.0];
    let mut c = vec![0.0];
    let mut z_bar = vec![0.0];
    for &xi in trader_mean_rate.iter().take(grid.steps()) {
        let a = e.mul_vec(&state);
        let f = j.mul_vec(&[xi, 0.0]);
        state = [a[0] + f[0], a[1] + f[1]];
        c.push(state[1]);
        z_bar.push(state[0] + state[1]);
    }
    Ok(FlowPath { grid: *grid, c, z_bar })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> HawkesParams {
        HawkesParams { mu: 1.0, alpha: 0.5, beta: 1.0 }
    }

    #[test]
    fn rejects_unstable() {
        assert!(HawkesParams { mu: 1.0, alpha: 1.0, beta: 1.0 }.validate().is_err());
        assert!(HawkesParams { mu: -1.0, alpha: 0.1, beta: 1.0 }.validate().is_err());
    }

    #[test]
    fn zero_base_gives_empty_streams() {
        let p = HawkesParams { mu: 0.0, ..params() };
        let s = simulate(&p, &TraderRate::Zero, 5.0, 3).unwrap();
        assert!(s.sell_times.is_empty() && s.buy_times.is_empty());
    }

    #[test]
    fn streams_are_sorted_bounded_and_reproducible() {
        let g = TimeGrid::new(5.0, 50).unwrap();
        let rate = TraderRate::piecewise(g, (0..50).map(|k| (k as f64 * 0.3).sin() * 2.0).collect()).unwrap();
        for path in 0..50 {
            let s = simulate_path(&params(), &rate, 5.0, 9, path).unwrap();
            for ts in [&s.sell_times, &s.buy_times] {
                assert!(ts.windows(2).all(|w| w[0] < w[1]));
                assert!(ts.iter().all(|t| *t >= 0.0 && *t <= 5.0));
            }
            assert_eq!(s, simulate_path(&params(), &rate, 5.0, 9, path).unwrap());
        }
    }

    #[test]
    fn overflow_is_reported() {
        let p = HawkesParams { mu: 2e9, alpha: 0.0, beta: 1.0 };
        assert!(matches!(simulate(&p, &TraderRate::Zero, 1.0, 1), Err(HawkesError::IntensityOverflow { .. })));
    }

    #[test]
    fn poisson_count_mean() {
        let p = HawkesParams { mu: 1.0, alpha: 0.0, beta: 1.0 };
        let e = monte_carlo_sell_count(&p, &TraderRate::Zero, 5.0, 100_000, 21).unwrap();
        assert!(e.within(5.0, 3.0), "{e:?}");
    }

    #[test]
    fn poisson_interarrivals_pass_ks() {
        let p = HawkesParams { mu: 1.0, alpha: 0.0, beta: 1.0 };
        let mut gaps = Vec::new();
        let mut path = 0;
        while gaps.len() < 10_000 {
            let s = simulate_path(&p, &TraderRate::Zero, 50.0, 5, path).unwrap();
            let mut prev = 0.0;
            for t in s.sell_times {
                gaps.push(t - prev);
                prev = t;
            }
            path += 1;
        }
        gaps.truncate(10_000);
        gaps.sort_by(f64::total_cmp);
        let n = gaps.len() as f64;
        let d = gaps.iter().enumerate().fold(0.0f64, |m, (i, x)| {
            let f = 1.0 - (-x).exp();
            m.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
        });
        assert!(d < 1.63 / n.sqrt(), "{d}");
    }

    #[test]
    fn mean_intensity_matches_first_moment() {
        let times = [0.5, 1.0, 2.5, 4.9];
        let est = monte_carlo_intensity(&params(), &TraderRate::Zero, 5.0, &times, 100_000, 4).unwrap();
        for (e, t) in est.iter().zip(times) {
            assert!(e.within(params().mean_intensity(t), 3.0), "{t}: {e:?}");
        }
    }

    #[test]
    fn child_flow_zero_volume() {
        let g = TimeGrid::new(5.0, 100).unwrap();
        let f = expected_child_flow(0.5, 1.0, &vec![0.0; 101], &g).unwrap();
        assert!(f.c.iter().all(|v| *v == 0.0));
        let z = net_flow_fixedpoint(&params(), &[0.0; 100], &g).unwrap();
        assert!(z.z_bar.iter().all(|v| *v == 0.0));
    }

    fn closed_form(alpha: f64, beta: f64, v: f64, t: f64) -> f64 {
        let k = beta - alpha;
        alpha * v * (t / k + (-k * t).exp_m1() / (k * k))
    }

    #[test]
    fn child_flow_constant_rate_closed_form() {
        let g = TimeGrid::new(5.0, 1000).unwrap();
        let v = 0.7;
        let vol: Vec<f64> = g.nodes().iter().map(|t| v * t).collect();
        let f = expected_child_flow(0.5, 1.0, &vol, &g).unwrap();
        for (c, t) in f.c.iter().zip(g.nodes()) {
            assert!((c - closed_form(0.5, 1.0, v, t)).abs() < 1e-12);
        }
        let z = net_flow_fixedpoint(&params(), &vec![v; 1000], &g).unwrap();
        let last = z.z_bar.last().unwrap() - v * 5.0;
        assert!((last - closed_form(0.5, 1.0, v, 5.0)).abs() < 1e-10);
    }

    #[test]
    fn renewal_matches_child_flow() {
        let g = TimeGrid::new(5.0, 400).unwrap();
        let rate: Vec<f64> = (0..400).map(|k| ((k / 40) as f64 - 4.0) * 0.1).collect();
        let mut vol = vec![0.0];
        for (k, r) in rate.iter().enumerate() {
            vol.push(vol[k] + r * g.dt());
        }
        let a = expected_child_flow(0.5, 1.0, &vol, &g).unwrap();
        let b = net_flow_fixedpoint(&params(), &rate, &g).unwrap();
        let d = a.c.iter().zip(&b.c).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(d <= 1e-10, "{d}");
    }

    #[test]
    fn monte_carlo_child_flow_matches_ode() {
        let g = TimeGrid::new(5.0, 50).unwrap();
        let rate = TraderRate::constant(g, 0.2);
        // x₀ − 𝔼X_t = 0.2 t for x₀ = 1
        let vol: Vec<f64> = g.nodes().iter().map(|t| 0.2 * t).collect();
        let ode = expected_child_flow(0.5, 1.0, &vol, &g).unwrap();
        let mc = monte_carlo_child_flow(&params(), &rate, &g, 100_000, 8).unwrap();
        for k in [10, 25, 50] {
            assert!(mc[k].within(ode.c[k], 3.0), "{k}: {:?} vs {}", mc[k], ode.c[k]);
        }
    }

    proptest! {
        #[test]
        fn child_flow_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, s1 in 0.1f64..2.0, s2 in 0.1f64..5.0) {
            let g = TimeGrid::new(5.0, 100).unwrap();
            let p1: Vec<f64> = g.nodes().iter().map(|t| (s1 * t).sin()).collect();
            let p2: Vec<f64> = g.nodes().iter().map(|t| t * t / s2).collect();
            let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect();
            let c1 = expected_child_flow(0.5, 1.0, &p1, &g).unwrap().c;
            let c2 = expected_child_flow(0.5, 1.0, &p2, &g).unwrap().c;
            let cm = expected_child_flow(0.5, 1.0, &mix, &g).unwrap().c;
            for k in 0..g.len() {
                let scale = 1.0 + (a * c1[k]).abs() + (b * c2[k]).abs();
                prop_assert!((cm[k] - a * c1[k] - b * c2[k]).abs() <= 1e-12 * scale);
            }
        }
    }
}
