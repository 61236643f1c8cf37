//! Player parameters, the drift blocks of the unified forward-backward
//! system and the weak-interaction admissibility checks.
//!
//! For one player the impact state is 𝒮 = (Y, C) with drift
//! `-A 𝒮 + K χ + ℛ`, where χ = (ξ̄, X̄, ξ̄) collects the aggregate rate and
//! position. `Θ = (1, 0)ᵀ` picks out the impact component Y.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Penalty weight used when strict liquidation is requested.
pub const STRICT_PENALTY: f64 = 1e8;
/// Tolerance on |X_T| accepted as "liquidated" in strict mode.
pub const STRICT_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unstable order flow: beta ({beta}) must exceed alpha ({alpha})")]
    Unstable { alpha: f64, beta: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter { name: &'static str, value: f64, reason: &'static str },
    #[error("positivity condition 4*rho > gamma^2*(beta-alpha) violated ({lhs} <= {rhs})")]
    ConditionViolated { lhs: f64, rhs: f64 },
    #[error("invalid setup: {0}")]
    InvalidSetup(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerParams {
    pub eta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl PlayerParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(ModelError::InvalidParameter { name, value, reason: "must be finite" });
            }
        }
        if self.eta <= 0.0 {
            return Err(ModelError::InvalidParameter { name: "eta", value: self.eta, reason: "must be positive" });
        }
        for (name, value) in [("lambda", self.lambda), ("rho", self.rho), ("alpha", self.alpha), ("gamma", self.gamma)]
        {
            if value < 0.0 {
                return Err(ModelError::InvalidParameter { name, value, reason: "must be nonnegative" });
            }
        }
        if self.beta <= self.alpha {
            return Err(ModelError::Unstable { alpha: self.alpha, beta: self.beta });
        }
        Ok(())
    }

    /// β − α, the net decay rate of the child-order flow.
    pub fn kappa(&self) -> f64 {
        self.beta - self.alpha
    }
}

/// Terminal treatment of open positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Penalty {
    /// Cost n·X_T² added to each player's objective.
    Finite(f64),
    /// X_T = 0, realised as a large penalty.
    Strict,
}

impl Penalty {
    pub fn weight(&self) -> f64 {
        match self {
            Penalty::Finite(n) => *n,
            Penalty::Strict => STRICT_PENALTY,
        }
    }

    pub fn is_strict(&self) -> bool {
        matches!(self, Penalty::Strict)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self {
            Penalty::Finite(n) if !(n.is_finite() && *n >= 0.0) => Err(ModelError::InvalidParameter {
                name: "penalty",
                value: *n,
                reason: "must be finite and nonnegative",
            }),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarketSetup {
    pub num_players: usize,
    pub horizon: f64,
    pub penalty: Penalty,
    pub initial_positions: Vec<f64>,
    /// 𝔼[𝒳]; only read by mean-field solvers.
    pub population_mean: f64,
}

impl MarketSetup {
    pub fn new(horizon: f64, penalty: Penalty, initial_positions: Vec<f64>) -> Self {
        let n = initial_positions.len();
        let mean = if n == 0 { 0.0 } else { initial_positions.iter().sum::<f64>() / n as f64 };
        Self { num_players: n, horizon, penalty, initial_positions, population_mean: mean }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_players == 0 {
            return Err(ModelError::InvalidSetup("need at least one player".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ModelError::InvalidSetup(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.initial_positions.len() != self.num_players {
            return Err(ModelError::InvalidSetup(format!(
                "{} initial positions for {} players",
                self.initial_positions.len(),
                self.num_players
            )));
        }
        if self.initial_positions.iter().chain(std::iter::once(&self.population_mean)).any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidSetup("initial positions must be finite".into()));
        }
        self.penalty.validate()
    }
}

/// Drift blocks of one player's equation in the unified system.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemBlocks {
    pub a: [[f64; 2]; 2],
    pub b1: [f64; 2],
    pub b2: [f64; 2],
    /// Columns act on (ξ̄, X̄, 𝔼ξ̄).
    pub k: [[f64; 3]; 2],
    pub r0: [f64; 2],
    /// Feedback vectors B̂⁽¹⁾, B̂⁽²⁾ (zero in the mean-field reduction).
    pub b_hat1: [f64; 2],
    pub b_hat2: [f64; 2],
    /// N in the 1/N feedback terms.
    pub num_players: usize,
}

impl SystemBlocks {
    pub fn k_column(&self, j: usize) -> [f64; 2] {
        [self.k[0][j], self.k[1][j]]
    }

    /// ⟨Θ, -A𝒮 + Kχ + ℛ⟩ and the full drift.
    pub fn drift(&self, s: [f64; 2], chi: [f64; 3]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (r, o) in out.iter_mut().enumerate() {
            *o = -(self.a[r][0] * s[0] + self.a[r][1] * s[1])
                + self.k[r][0] * chi[0]
                + self.k[r][1] * chi[1]
                + self.k[r][2] * chi[2]
                + self.r0[r];
        }
        out
    }
}

fn base_blocks(p: &PlayerParams) -> ([[f64; 2]; 2], [f64; 2], [f64; 2]) {
    let kappa = p.kappa();
    let a = [[p.rho, p.gamma * kappa], [0.0, kappa]];
    let b1 = [p.gamma, 0.0];
    let b2 = [-p.alpha * p.gamma, -p.alpha];
    (a, b1, b2)
}

/// Blocks of the N-player system; one entry per player.
pub fn assemble_nplayer_blocks(params: &[PlayerParams], setup: &MarketSetup) -> Result<Vec<SystemBlocks>, ModelError> {
    setup.validate()?;
    if params.len() != setup.num_players {
        return Err(ModelError::InvalidSetup(format!(
            "{} parameter sets for {} players",
            params.len(),
            setup.num_players
        )));
    }
    let n = setup.num_players as f64;
    let total: f64 = setup.initial_positions.iter().sum();
    params
        .iter()
        .map(|p| {
            p.validate()?;
            let (a, b1, b2) = base_blocks(p);
            Ok(SystemBlocks {
                a,
                b1,
                b2,
                k: [[b1[0], b2[0], 0.0], [b1[1], b2[1], 0.0]],
                r0: [p.alpha * p.gamma / n * total, p.alpha / n * total],
                b_hat1: b1,
                b_hat2: b2,
                num_players: setup.num_players,
            })
        })
        .collect()
}

/// Blocks of the representative player's system in the mean-field game.
pub fn assemble_mfg_blocks(params: &PlayerParams, mean_x0: f64) -> Result<SystemBlocks, ModelError> {
    params.validate()?;
    if !mean_x0.is_finite() {
        return Err(ModelError::InvalidSetup("population mean must be finite".into()));
    }
    let (a, b1, b2) = base_blocks(params);
    Ok(SystemBlocks {
        a,
        b1,
        b2,
        k: [[0.0, b2[0], b1[0]], [0.0, b2[1], b1[1]]],
        r0: [params.alpha * params.gamma * mean_x0, params.alpha * mean_x0],
        b_hat1: [0.0; 2],
        b_hat2: [0.0; 2],
        num_players: 1,
    })
}

/// Eigenvalues (ascending) of the symmetric matrix [[a, b], [b, d]].
pub fn sym2_eigenvalues(a: f64, b: f64, d: f64) -> (f64, f64) {
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Smallest eigenvalue of (M + Mᵀ)/2 for a 2×2 matrix M.
pub fn sym_min_eigenvalue(m: [[f64; 2]; 2]) -> f64 {
    sym2_eigenvalues(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]).0
}

/// Spectral norm of a 2×2 matrix.
pub fn spectral_norm(m: [[f64; 2]; 2]) -> f64 {
    let ata00 = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let ata01 = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let ata11 = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    sym2_eigenvalues(ata00, ata01, ata11).1.max(0.0).sqrt()
}

fn vnorm(v: [f64; 2]) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

/// Lower eigenvalue of (A + Aᵀ)/2 in closed form.
pub fn rho_hat(params: &PlayerParams) -> Result<f64, ModelError> {
    params.validate()?;
    let k = params.kappa();
    let (rho, g) = (params.rho, params.gamma);
    let lhs = 4.0 * rho;
    let rhs = g * g * k;
    if lhs <= rhs {
        return Err(ModelError::ConditionViolated { lhs, rhs });
    }
    let s = rho + k;
    Ok((s - (s * s - 4.0 * rho * k + g * g * k * k).sqrt()) / 2.0)
}

/// Which reduction of the unified system is being checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    NPlayer,
    /// Limit blocks: B̂ = 0, K = (0, B⁽²⁾, B⁽¹⁾).
    MeanField,
}

/// Log-uniform search grid for the free constants θ₀..θ₃.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaSearch {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    /// Rounds of local pattern search around the best grid point.
    pub refine_rounds: usize,
}

impl Default for ThetaSearch {
    fn default() -> Self {
        Self { lower: 1e-3, upper: 1e3, points: 25, refine_rounds: 60 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub regime: Regime,
    pub num_players: usize,
    pub stable: bool,
    pub rho_hat: f64,
    pub rho_tilde: f64,
    pub b: f64,
    /// Best θ₀..θ₃ for the existence inequalities.
    pub thetas: [f64; 4],
    /// θ = ‖B̂⁽¹⁾‖/(N ρ̃).
    pub theta: f64,
    pub holds_cond_a: bool,
    pub holds_assumption_iii: bool,
    pub slack_assumption: [f64; 2],
    /// Best θ₁..θ₃ for the verification inequalities (θ₀ unused, reported as 0).
    pub stronger_thetas: [f64; 4],
    pub holds_stronger: bool,
    pub slack_stronger: [f64; 2],
}

struct Norms {
    a: f64,
    k1: f64,
    k2: f64,
    k3: f64,
    bh1: f64,
    bh2: f64,
    b1: f64,
    b2: f64,
    rho_hat: f64,
    rho_tilde: f64,
    lambda_min: f64,
    eta_min: f64,
    n: f64,
}

impl Norms {
    fn common(&self, t1: f64, t2: f64) -> f64 {
        self.a * self.a / (2.0 * t1 * self.rho_hat * self.rho_hat) + 1.0 / (2.0 * t2)
    }

    fn assumption(&self, t: [f64; 4]) -> [f64; 2] {
        let [t0, t1, t2, t3] = t;
        let c = self.common(t1, t2);
        let s1 = 2.0 * self.lambda_min - (t0 + t1 + t2) / 2.0 - (1.0 + 1.0 / t3) * self.k2 * self.k2 * c;
        let n = self.n;
        let rt = self.rho_tilde;
        let s2 = 2.0 * self.eta_min
            - self.bh1 / (n * rt)
            - self.bh2 * self.bh2 / (2.0 * n * n * rt * rt * t0)
            - (1.0 + self.bh1 / (2.0 * n * self.eta_min * rt)).powi(2) * (1.0 + t3) * (self.k1 + self.k3).powi(2) * c;
        [s1, s2]
    }

    fn stronger(&self, t: [f64; 4]) -> [f64; 2] {
        let [_, t1, t2, t3] = t;
        let c = self.common(t1, t2);
        let n2 = self.n * self.n;
        let s1 = self.lambda_min - (t1 + t2) / 2.0 - self.b2 * self.b2 / n2 * (1.0 + 1.0 / t3) * c;
        let s2 = self.eta_min - (1.0 + t3) * self.b1 * self.b1 / n2 * c;
        [s1, s2]
    }
}

/// Maximises min(slack) over the θ grid, then polishes by pattern search.
fn search(search: &ThetaSearch, vary_t0: bool, f: impl Fn([f64; 4]) -> [f64; 2]) -> ([f64; 4], [f64; 2]) {
    let score = |t: [f64; 4]| {
        let s = f(t);
        let m = s[0].min(s[1]);
        if m.is_nan() {
            f64::NEG_INFINITY
        } else {
            m
        }
    };
    let (lo, hi) = (search.lower.ln(), search.upper.ln());
    let pts = search.points.max(2);
    let axis: Vec<f64> = (0..pts).map(|i| (lo + (hi - lo) * i as f64 / (pts - 1) as f64).exp()).collect();
    let t0_axis: Vec<f64> = if vary_t0 { axis.clone() } else { vec![0.0] };
    let mut best = [t0_axis[0], axis[0], axis[0], axis[0]];
    let mut best_score = f64::NEG_INFINITY;
    for &t0 in &t0_axis {
        for &t1 in &axis {
            for &t2 in &axis {
                for &t3 in &axis {
                    let t = [t0, t1, t2, t3];
                    let s = score(t);
                    if s > best_score {
                        best_score = s;
                        best = t;
                    }
                }
            }
        }
    }
    // Cyclic coordinate pattern search in log space, step halving.
    let mut step = (hi - lo) / (pts - 1) as f64;
    let first = if vary_t0 { 0 } else { 1 };
    for _ in 0..search.refine_rounds {
        let mut improved = false;
        for d in first..4 {
            for dir in [-1.0, 1.0] {
                let mut cand = best;
                cand[d] = (best[d].ln() + dir * step).clamp(lo, hi).exp();
                let s = score(cand);
                if s > best_score {
                    best_score = s;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, f(best))
}

/// Evaluates the admissibility conditions for the given players.
///
/// Homogeneous per-player quantities enter through their worst case over
/// players (suprema of norms, infima of η, λ, ρ̂, ρ̃).
pub fn check_weak_interaction(
    params: &[PlayerParams],
    num_players: usize,
    regime: Regime,
    theta_search: &ThetaSearch,
) -> ConditionReport {
    let n_eff = match regime {
        Regime::NPlayer => num_players.max(1),
        Regime::MeanField => 1,
    };
    let stable = !params.is_empty() && params.iter().all(|p| p.validate().is_ok());
    let mut norms = Norms {
        a: 0.0,
        k1: 0.0,
        k2: 0.0,
        k3: 0.0,
        bh1: 0.0,
        bh2: 0.0,
        b1: 0.0,
        b2: 0.0,
        rho_hat: f64::INFINITY,
        rho_tilde: f64::INFINITY,
        lambda_min: f64::INFINITY,
        eta_min: f64::INFINITY,
        n: n_eff as f64,
    };
    for p in params {
        let (a, b1, b2) = base_blocks(p);
        let (k1, k2, k3, bh1, bh2) = match regime {
            Regime::NPlayer => (b1, b2, [0.0; 2], b1, b2),
            Regime::MeanField => ([0.0; 2], b2, b1, [0.0; 2], [0.0; 2]),
        };
        norms.a = norms.a.max(spectral_norm(a));
        norms.k1 = norms.k1.max(vnorm(k1));
        norms.k2 = norms.k2.max(vnorm(k2));
        norms.k3 = norms.k3.max(vnorm(k3));
        norms.bh1 = norms.bh1.max(vnorm(bh1));
        norms.bh2 = norms.bh2.max(vnorm(bh2));
        norms.b1 = norms.b1.max(vnorm(b1));
        norms.b2 = norms.b2.max(vnorm(b2));
        norms.rho_hat = norms.rho_hat.min(sym_min_eigenvalue(a));
        // Aᵀ + Θ B̂⁽¹⁾ᵀ/(2Nη): the feedback term only touches the first row.
        let c = 1.0 / (2.0 * norms.n * p.eta);
        let at = [[a[0][0] + c * bh1[0], a[1][0] + c * bh1[1]], [a[0][1], a[1][1]]];
        norms.rho_tilde = norms.rho_tilde.min(sym_min_eigenvalue(at));
        norms.lambda_min = norms.lambda_min.min(p.lambda);
        norms.eta_min = norms.eta_min.min(p.eta);
    }
    let holds_cond_a = stable && norms.rho_hat > 0.0 && norms.rho_tilde > 0.0;
    let theta = norms.bh1 / (norms.n * norms.rho_tilde);
    let (thetas, slack_assumption, stronger_thetas, slack_stronger) = if holds_cond_a {
        let vary_t0 = norms.bh2 > 0.0;
        let (t, s) = search(theta_search, true, |t| {
            let t = if vary_t0 { t } else { [theta_search.lower, t[1], t[2], t[3]] };
            norms.assumption(t)
        });
        let t = if vary_t0 { t } else { [theta_search.lower, t[1], t[2], t[3]] };
        let (ts, ss) = search(theta_search, false, |t| norms.stronger(t));
        (t, s, ts, ss)
    } else {
        ([f64::NAN; 4], [f64::NEG_INFINITY; 2], [f64::NAN; 4], [f64::NEG_INFINITY; 2])
    };
    let holds_assumption_iii = holds_cond_a && slack_assumption.iter().all(|s| *s > 0.0);
    let holds_stronger = holds_cond_a && slack_stronger.iter().all(|s| *s >= 0.0);
    ConditionReport {
        regime,
        num_players: n_eff,
        stable,
        rho_hat: norms.rho_hat,
        rho_tilde: norms.rho_tilde,
        // Constant coefficients: η_min = ‖η‖ for every player.
        b: 1.0,
        thetas,
        theta,
        holds_cond_a,
        holds_assumption_iii,
        slack_assumption,
        stronger_thetas,
        holds_stronger,
        slack_stronger,
    }
}
