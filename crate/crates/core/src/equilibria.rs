//! Equilibrium solvers for the deterministic-coefficient games.
//!
//! The benchmark solvers write the first-order system as z' = G z + f with
//! z = (forward states, adjoints), solve one terminal boundary map for the
//! initial adjoints and then step the joint system exactly with e^{G h}.
//! The fixed-point solver instead iterates the best-response map built from
//! the affine ansatz M = 𝒜X + ℬ.

use num_traits::{FromPrimitive, Num};
use std::ops::Neg;
use thiserror::Error;

use crate::matops::{
    self, expm_with_integral, norm2, solve_linear_with_condition, ExpStepper, Lu, MatError, Matrix, TimeGrid,
};
use crate::model::{
    assemble_mfg_blocks, assemble_nplayer_blocks, MarketSetup, ModelError, Penalty, PlayerParams, SystemBlocks,
};
use crate::verify::{path_cost, CostReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("boundary map is singular (condition estimate {estimate:e})")]
    SingularBoundary { estimate: f64 },
    #[error(transparent)]
    Matrix(MatError),
    #[error("fixed-point iteration diverged after {iterations} iterations (last residual {last:e})")]
    Divergence { iterations: usize, last: f64, history: Vec<f64> },
    #[error("internal consistency check failed: {0}")]
    Internal(String),
}

impl From<MatError> for EquilibriumError {
    fn from(e: MatError) -> Self {
        match e {
            MatError::Singular { estimate } => EquilibriumError::SingularBoundary { estimate },
            other => EquilibriumError::Matrix(other),
        }
    }
}

// ---------------------------------------------------------------------------
// Generators, generic so that tests can assemble them in exact arithmetic.

pub trait Scalar: Copy + Num + Neg<Output = Self> + FromPrimitive {}
impl<T: Copy + Num + Neg<Output = T> + FromPrimitive> Scalar for T {}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coeffs<T> {
    pub eta: T,
    pub lambda: T,
    pub rho: T,
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl From<&PlayerParams> for Coeffs<f64> {
    fn from(p: &PlayerParams) -> Self {
        Self { eta: p.eta, lambda: p.lambda, rho: p.rho, alpha: p.alpha, beta: p.beta, gamma: p.gamma }
    }
}

pub type Dense<T> = Vec<Vec<T>>;

fn int<T: Scalar>(v: i64) -> T {
    T::from_i64(v).expect("small integer")
}

fn zeros<T: Scalar>(r: usize, c: usize) -> Dense<T> {
    vec![vec![T::zero(); c]; r]
}

fn join<T: Scalar>(b00: Dense<T>, b01: Dense<T>, b10: Dense<T>, b11: Dense<T>) -> Dense<T> {
    let top = b00.into_iter().zip(b01).map(|(mut a, b)| {
        a.extend(b);
        a
    });
    let bottom = b10.into_iter().zip(b11).map(|(mut a, b)| {
        a.extend(b);
        a
    });
    top.chain(bottom).collect()
}

pub fn dense_to_matrix(d: &Dense<f64>) -> Matrix {
    Matrix::from_rows(d)
}

/// 6×6 generator of the mean-field benchmark for (𝔼X, 𝔼Y, 𝔼C, 𝔼P, 𝔼Q, 𝔼R).
pub fn mfg_generator<T: Scalar>(p: &Coeffs<T>) -> Dense<T> {
    let z = T::zero();
    let h = T::one() / (int::<T>(2) * p.eta);
    let k = p.beta - p.alpha;
    let (a, g, r) = (p.alpha, p.gamma, p.rho);
    let f00 = vec![vec![z, h, z], vec![-(a * g), -r - g * h, -(g * k)], vec![-a, z, -k]];
    let f01 = vec![vec![-h, z, z], vec![g * h, z, z], vec![z, z, z]];
    let f10 = vec![vec![-(int::<T>(2) * p.lambda), z, z], vec![z, h, z], vec![z, z, z]];
    let f11 = vec![vec![z, z, z], vec![-h, r, z], vec![z, g * k, k]];
    join(f00, f01, f10, f11)
}

pub fn mfg_forcing<T: Scalar>(p: &Coeffs<T>, mean_x0: T) -> Vec<T> {
    vec![T::zero(), p.gamma * p.alpha * mean_x0, p.alpha * mean_x0]
}

/// 6×6 generator of the single-player benchmark for (X, Y, C, P, Q, R).
pub fn single_player_generator<T: Scalar>(p: &Coeffs<T>) -> Dense<T> {
    let z = T::zero();
    let h = T::one() / (int::<T>(2) * p.eta);
    let k = p.beta - p.alpha;
    let (a, g, r) = (p.alpha, p.gamma, p.rho);
    let s00 = vec![vec![z, h, z], vec![-(a * g), -r - g * h, -(g * k)], vec![-a, z, -k]];
    let s01 = vec![vec![-h, g * h, z], vec![g * h, -(g * g * h), z], vec![z, z, z]];
    let s10 = vec![vec![-(int::<T>(2) * p.lambda), z, z], vec![z, h, z], vec![z, z, z]];
    let s11 = vec![vec![z, a * g, a], vec![-h, r + g * h, z], vec![z, g * k, k]];
    join(s00, s01, s10, s11)
}

pub fn single_player_forcing<T: Scalar>(p: &Coeffs<T>, x: T) -> Vec<T> {
    vec![T::zero(), p.gamma * p.alpha * x, p.alpha * x]
}

/// Closed form of det of the single-player generator, −λρ²(β−α)²/η
/// (cofactor expansion of the blocks above).
pub fn single_player_generator_det(p: &PlayerParams) -> f64 {
    let k = p.kappa();
    -p.lambda * p.rho * p.rho * k * k / p.eta
}

/// 12×12 generator of the two-player benchmark, blocks written out entry by entry.
pub fn two_player_generator<T: Scalar>(p1: &Coeffs<T>, p2: &Coeffs<T>) -> Dense<T> {
    let z = T::zero();
    let two = int::<T>(2);
    let four = int::<T>(4);
    let eight = int::<T>(8);
    let (e1, e2) = (p1.eta, p2.eta);
    let (g1, g2) = (p1.gamma, p2.gamma);
    let (a1, a2) = (p1.alpha, p2.alpha);
    let (r1, r2) = (p1.rho, p2.rho);
    let (k1, k2) = (p1.beta - p1.alpha, p2.beta - p2.alpha);
    let phi00 = vec![
        vec![z, T::one() / (two * e1), z, z, z, z],
        vec![-(g1 * a1) / two, -r1 - g1 / (four * e1), -(g1 * k1), -(g1 * a1) / two, -g1 / (four * e2), z],
        vec![-a1 / two, z, -k1, -a1 / two, z, z],
        vec![z, z, z, z, T::one() / (two * e2), z],
        vec![-(g2 * a2) / two, -g2 / (four * e1), z, -(g2 * a2) / two, -r2 - g2 / (four * e2), -(g2 * k2)],
        vec![-a2 / two, z, z, -a2 / two, z, -k2],
    ];
    let phi01 = vec![
        vec![-T::one() / (two * e1), g1 / (four * e1), z, z, z, z],
        vec![g1 / (four * e1), -(g1 * g1) / (eight * e1), z, g1 / (four * e2), -(g1 * g2) / (eight * e2), z],
        vec![z; 6],
        vec![z, z, z, -T::one() / (two * e2), g2 / (four * e2), z],
        vec![g2 / (four * e1), -(g1 * g2) / (eight * e1), z, g2 / (four * e2), -(g2 * g2) / (eight * e2), z],
        vec![z; 6],
    ];
    let phi10 = vec![
        vec![-(two * p1.lambda), z, z, z, z, z],
        vec![z, T::one() / (two * e1), z, z, z, z],
        vec![z; 6],
        vec![z, z, z, -(two * p2.lambda), z, z],
        vec![z, z, z, z, T::one() / (two * e2), z],
        vec![z; 6],
    ];
    let phi11 = vec![
        vec![z, a1 * g1 / two, a1 / two, z, z, z],
        vec![-T::one() / (two * e1), r1 + g1 / (four * e1), z, z, z, z],
        vec![z, g1 * k1, k1, z, z, z],
        vec![z, z, z, z, a2 * g2 / two, a2 / two],
        vec![z, z, z, -T::one() / (two * e2), r2 + g2 / (four * e2), z],
        vec![z, z, z, z, g2 * k2, k2],
    ];
    join(phi00, phi01, phi10, phi11)
}

pub fn two_player_forcing<T: Scalar>(p1: &Coeffs<T>, p2: &Coeffs<T>, x1: T, x2: T) -> Vec<T> {
    let two = int::<T>(2);
    let s = x1 + x2;
    vec![
        T::zero(),
        p1.gamma * p1.alpha / two * s,
        p1.alpha / two * s,
        T::zero(),
        p2.gamma * p2.alpha / two * s,
        p2.alpha / two * s,
    ]
}

/// 6N×6N generator of the deterministic N-player system.
///
/// Layout: forward block (X¹,Y¹,C¹,…,Xᴺ,Yᴺ,Cᴺ), then adjoints (P¹,Q¹,R¹,…).
/// Player j trades at ξʲ = (Pʲ − Yʲ − γʲQʲ/N)/(2ηʲ) and the impact of
/// player i responds to the plain average (1/N)Σξʲ.
pub fn nplayer_generator<T: Scalar>(params: &[Coeffs<T>]) -> Dense<T> {
    nplayer_generator_scaled(params, T::from_usize(params.len()).expect("player count"))
}

/// Same pattern with the aggregate divisor `nn` decoupled from the player count.
fn nplayer_generator_scaled<T: Scalar>(params: &[Coeffs<T>], nn: T) -> Dense<T> {
    let n = params.len();
    let d = 3 * n;
    let mut g = zeros::<T>(2 * d, 2 * d);
    let two = int::<T>(2);
    let (x, y, c) = (|i: usize| 3 * i, |i: usize| 3 * i + 1, |i: usize| 3 * i + 2);
    let (pp, q, r) = (|i: usize| d + 3 * i, |i: usize| d + 3 * i + 1, |i: usize| d + 3 * i + 2);
    // coefficients of ξʲ on (Pʲ, Yʲ, Qʲ)
    let xi = |j: usize| {
        let pj = &params[j];
        let h = T::one() / (two * pj.eta);
        [(pp(j), h), (y(j), -h), (q(j), -(pj.gamma / nn) * h)]
    };
    for i in 0..n {
        let pi = &params[i];
        let k = pi.beta - pi.alpha;
        // X' = −ξ
        for (col, v) in xi(i) {
            g[x(i)][col] = g[x(i)][col] - v;
        }
        // Y' = −ρY − γ(β−α)C + (γ/N)Σξ − (αγ/N)ΣX + forcing
        g[y(i)][y(i)] = g[y(i)][y(i)] - pi.rho;
        g[y(i)][c(i)] = g[y(i)][c(i)] - pi.gamma * k;
        for j in 0..n {
            for (col, v) in xi(j) {
                g[y(i)][col] = g[y(i)][col] + pi.gamma / nn * v;
            }
            g[y(i)][x(j)] = g[y(i)][x(j)] - pi.alpha * pi.gamma / nn;
            g[c(i)][x(j)] = g[c(i)][x(j)] - pi.alpha / nn;
        }
        // C' = −(β−α)C − (α/N)ΣX + forcing
        g[c(i)][c(i)] = g[c(i)][c(i)] - k;
        // P' = −2λX + (αγ/N)Q + (α/N)R
        g[pp(i)][x(i)] = -(two * pi.lambda);
        g[pp(i)][q(i)] = pi.alpha * pi.gamma / nn;
        g[pp(i)][r(i)] = pi.alpha / nn;
        // Q' = −ξ + ρQ
        for (col, v) in xi(i) {
            g[q(i)][col] = g[q(i)][col] - v;
        }
        g[q(i)][q(i)] = g[q(i)][q(i)] + pi.rho;
        // R' = γ(β−α)Q + (β−α)R
        g[r(i)][q(i)] = pi.gamma * k;
        g[r(i)][r(i)] = k;
    }
    g
}

pub fn nplayer_forcing<T: Scalar>(params: &[Coeffs<T>], initials: &[T]) -> Vec<T> {
    let nn = T::from_usize(params.len()).expect("player count");
    let mean = initials.iter().fold(T::zero(), |s, v| s + *v) / nn;
    params.iter().flat_map(|p| [T::zero(), p.gamma * p.alpha * mean, p.alpha * mean]).collect()
}

/// f64 N-player generator from validated parameters.
pub fn assemble_nplayer_generator(params: &[PlayerParams], setup: &MarketSetup) -> Result<Matrix, EquilibriumError> {
    assemble_nplayer_blocks(params, setup)?;
    let coeffs: Vec<Coeffs<f64>> = params.iter().map(Coeffs::from).collect();
    Ok(dense_to_matrix(&nplayer_generator(&coeffs)))
}

// ---------------------------------------------------------------------------
// Solution containers.

/// Means of the forward states (𝔼X, 𝔼Y, 𝔼C) and adjoints (𝔼P, 𝔼Q, 𝔼R).
#[derive(Clone, Debug)]
pub struct MeanPath {
    pub grid: TimeGrid,
    pub eta: f64,
    pub penalty: f64,
    pub f: Vec<[f64; 3]>,
    pub b: Vec<[f64; 3]>,
    pub ansatz_residual: f64,
    pub boundary_condition: f64,
}

impl MeanPath {
    pub fn mean_x(&self) -> Vec<f64> {
        self.f.iter().map(|v| v[0]).collect()
    }

    /// μ_t = (𝔼P − 𝔼Y)/(2η).
    pub fn mean_rate(&self) -> Vec<f64> {
        self.f.iter().zip(&self.b).map(|(f, b)| (b[0] - f[1]) / (2.0 * self.eta)).collect()
    }
}

/// Affine feedback B = D F + D⁰ along the grid.
#[derive(Clone, Debug)]
pub struct RiccatiPath {
    pub grid: TimeGrid,
    /// Node indices at which D was evaluated (all nodes unless subsampled).
    pub nodes: Vec<usize>,
    pub d: Vec<Matrix>,
    pub d0: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlayerPath {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
    pub xi: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl PlayerPath {
    /// M = P − Y.
    pub fn m(&self) -> Vec<f64> {
        self.p.iter().zip(&self.y).map(|(p, y)| p - y).collect()
    }

    pub fn sup_distance(&self, other: &PlayerPath) -> f64 {
        self.x.iter().zip(&other.x).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicardInfo {
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
    pub homotopy: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub ansatz_residual: Option<f64>,
    pub boundary_condition: Option<f64>,
    /// (computed det, closed form) for the single-player generator.
    pub generator_det: Option<(f64, f64)>,
    pub picard: Option<PicardInfo>,
}

#[derive(Clone, Debug)]
pub struct EquilibriumSolution {
    pub grid: TimeGrid,
    pub penalty: f64,
    pub players: Vec<PlayerPath>,
    pub costs: Vec<CostReport>,
    pub diagnostics: Diagnostics,
}

impl EquilibriumSolution {
    pub fn sup_distance(&self, other: &EquilibriumSolution) -> f64 {
        self.players.iter().zip(&other.players).map(|(a, b)| a.sup_distance(b)).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Fundamental-solution boundary solve.

struct Bvp<'a> {
    g: &'a Matrix,
    /// Inhomogeneity of the forward block (adjoint block is unforced).
    forcing: Vec<f64>,
    f0: Vec<f64>,
    /// Indices of forward components carrying the terminal weight 2n.
    x_rows: Vec<usize>,
    penalty: f64,
}

struct BvpOutput {
    z: Vec<Vec<f64>>,
    riccati: RiccatiPath,
    residual: f64,
    condition: f64,
}

fn terminal_map(d: usize, x_rows: &[usize], penalty: f64) -> Matrix {
    let mut dt = Matrix::zeros(d, d);
    for &i in x_rows {
        dt[(i, i)] = 2.0 * penalty;
    }
    dt
}

/// (D_T, −I) Φ for a 2d×2d Φ.
fn left_apply(dt: &Matrix, phi: &Matrix) -> Matrix {
    let d = dt.rows();
    let top = phi.block(0, 0, d, 2 * d);
    let bottom = phi.block(d, 0, d, 2 * d);
    (dt * &top).sub(&bottom)
}

/// Largest forward dimension for which the feedback is stored at every node.
const ANCHOR_MAX_DIM: usize = 48;

fn solve_bvp(spec: &Bvp, grid: &TimeGrid, residual_stride: usize) -> Result<BvpOutput, EquilibriumError> {
    let n2 = spec.g.rows();
    let d = n2 / 2;
    let dt = terminal_map(d, &spec.x_rows, spec.penalty);
    let mut f = spec.forcing.clone();
    f.resize(n2, 0.0);

    let (phi_t, j_t) = expm_with_integral(spec.g, grid.horizon())?;
    let l = left_apply(&dt, &phi_t);
    let bd = l.block(0, d, d, d);
    let lf = l.block(0, 0, d, d);
    let lj = left_apply(&dt, &j_t).mul_vec(&f);
    let mut rhs: Vec<f64> = lf.mul_vec(&spec.f0).iter().zip(&lj).map(|(a, b)| -(a + b)).collect();
    // Row equilibration before the conditioned solve.
    let mut bd_s = bd.clone();
    for i in 0..d {
        let s = bd_s.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if s > 0.0 {
            for j in 0..d {
                bd_s[(i, j)] /= s;
            }
            rhs[i] /= s;
        }
    }
    let (b0, condition) = solve_linear_with_condition(&bd_s, &rhs)?;

    let (eh, jh) = expm_with_integral(spec.g, grid.dt())?;
    let step_forcing = jh.mul_vec(&f);
    let m = grid.steps();
    let anchored = d <= ANCHOR_MAX_DIM;
    let stride = if anchored { 1 } else { residual_stride.max(1) };

    // Per-node feedback from Φ(T,t_k) = Φ(T,t_{k+1}) e^{Gh} and the matching integral.
    let mut nodes = Vec::new();
    let mut ds = Vec::new();
    let mut d0s = Vec::new();
    let mut phi = Matrix::identity(n2);
    let mut jint = Matrix::zeros(n2, n2);
    for k in (0..=m).rev() {
        if k < m {
            jint = jint.add(&(&phi * &jh));
            phi = &phi * &eh;
        }
        if k % stride != 0 && k != m {
            continue;
        }
        let l = left_apply(&dt, &phi);
        let lu = Lu::new(&l.block(0, d, d, d))?;
        ds.push(lu.solve_matrix(&l.block(0, 0, d, d)).scale(-1.0));
        d0s.push(lu.solve(&left_apply(&dt, &jint).mul_vec(&f)).iter().map(|v| -v).collect::<Vec<f64>>());
        nodes.push(k);
    }
    nodes.reverse();
    ds.reverse();
    d0s.reverse();

    let step = |z: &[f64]| {
        let mut next = eh.mul_vec(z);
        for (a, b) in next.iter_mut().zip(&step_forcing) {
            *a += b;
        }
        next
    };
    let ansatz =
        |j: usize, fk: &[f64]| -> Vec<f64> { ds[j].mul_vec(fk).iter().zip(&d0s[j]).map(|(a, b)| a + b).collect() };
    let rel = |a: &[f64], b: &[f64]| {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&diff) / (1.0 + norm2(b))
    };
    let mut z = Vec::with_capacity(m + 1);
    let mut residual = 0.0f64;
    let mut z0 = spec.f0.clone();
    if anchored {
        // Each step starts from the feedback-consistent state, so the growing
        // mode of the joint system never sees accumulated rounding; the
        // residual is the one-step defect of the joint dynamics.
        let b0_ansatz = ansatz(0, &spec.f0);
        residual = rel(&b0, &b0_ansatz);
        z0.extend(b0_ansatz);
        z.push(z0);
        for k in 0..m {
            let mut next = step(&z[k]);
            let bk = ansatz(k + 1, &next[..d]);
            residual = residual.max(rel(&next[d..], &bk));
            next.truncate(d);
            next.extend(bk);
            z.push(next);
        }
    } else {
        z0.extend(b0);
        z.push(z0);
        for k in 0..m {
            let next = step(&z[k]);
            z.push(next);
        }
        for (j, &k) in nodes.iter().enumerate() {
            let (fk, bk) = z[k].split_at(d);
            residual = residual.max(rel(bk, &ansatz(j, fk)));
        }
    }
    if !residual.is_finite() {
        return Err(EquilibriumError::Internal("non-finite ansatz residual".into()));
    }
    Ok(BvpOutput { z, riccati: RiccatiPath { grid: *grid, nodes, d: ds, d0: d0s }, residual, condition })
}

fn residual_stride(d: usize, grid: &TimeGrid) -> usize {
    if d <= 12 {
        1
    } else {
        grid.steps().div_ceil(100)
    }
}

/// Player paths from an N-player style state vector (X,Y,C blocks, then P,Q,R).
fn extract_players(z: &[Vec<f64>], params: &[PlayerParams], feedback_n: f64) -> Vec<PlayerPath> {
    let n = params.len();
    let d = 3 * n;
    (0..n)
        .map(|i| {
            let col = |off: usize| z.iter().map(|v| v[off]).collect::<Vec<f64>>();
            let (x, y, c) = (col(3 * i), col(3 * i + 1), col(3 * i + 2));
            let (p, q, r) = (col(d + 3 * i), col(d + 3 * i + 1), col(d + 3 * i + 2));
            let pi = &params[i];
            let xi = (0..z.len()).map(|k| (p[k] - y[k] - pi.gamma / feedback_n * q[k]) / (2.0 * pi.eta)).collect();
            PlayerPath { x, y, c, xi, p, q, r }
        })
        .collect()
}

fn costs_for(players: &[PlayerPath], params: &[PlayerParams], penalty: f64, grid: &TimeGrid) -> Vec<CostReport> {
    players.iter().zip(params).map(|(pl, p)| path_cost(pl, p, penalty, grid)).collect()
}

// ---------------------------------------------------------------------------
// Benchmark solvers.

/// Mean-field benchmark: the mean path and its affine feedback.
pub fn solve_mfg_mean(
    params: &PlayerParams,
    mean_x0: f64,
    penalty: f64,
    grid: &TimeGrid,
) -> Result<(MeanPath, RiccatiPath), EquilibriumError> {
    params.validate()?;
    Penalty::Finite(penalty).validate()?;
    let g = dense_to_matrix(&mfg_generator(&Coeffs::from(params)));
    let spec = Bvp {
        g: &g,
        forcing: mfg_forcing(&Coeffs::from(params), mean_x0),
        f0: vec![mean_x0, 0.0, 0.0],
        x_rows: vec![0],
        penalty,
    };
    let out = solve_bvp(&spec, grid, 1)?;
    let f = out.z.iter().map(|v| [v[0], v[1], v[2]]).collect();
    let b = out.z.iter().map(|v| [v[3], v[4], v[5]]).collect();
    Ok((
        MeanPath {
            grid: *grid,
            eta: params.eta,
            penalty,
            f,
            b,
            ansatz_residual: out.residual,
            boundary_condition: out.condition,
        },
        out.riccati,
    ))
}

/// Slope A_t of the idiosyncratic feedback P − 𝔼P = A (X − 𝔼X).
#[derive(Clone, Debug)]
pub struct IdiosyncraticCoeff {
    pub grid: TimeGrid,
    /// A at every node; the terminal node holds +∞.
    pub values: Vec<f64>,
}

/// 2√(ηλ) coth(√(λ/η)(T − t)), with limit 2η/(T − t) at λ = 0.
pub fn idiosyncratic_value(eta: f64, lambda: f64, time_to_go: f64) -> f64 {
    if time_to_go <= 0.0 {
        return f64::INFINITY;
    }
    if lambda == 0.0 {
        return 2.0 * eta / time_to_go;
    }
    let k = (lambda / eta).sqrt();
    2.0 * (eta * lambda).sqrt() / (k * time_to_go).tanh()
}

pub fn idiosyncratic_coefficient(
    eta: f64,
    lambda: f64,
    grid: &TimeGrid,
) -> Result<IdiosyncraticCoeff, EquilibriumError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(ModelError::InvalidParameter { name: "eta", value: eta, reason: "must be positive" }.into());
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(
            ModelError::InvalidParameter { name: "lambda", value: lambda, reason: "must be nonnegative" }.into()
        );
    }
    let t = grid.horizon();
    let values = grid.nodes().iter().map(|s| idiosyncratic_value(eta, lambda, t - s)).collect();
    Ok(IdiosyncraticCoeff { grid: *grid, values })
}

/// sinh(k τ)/sinh(k T) and its τ-derivative, stable for large arguments.
fn sinh_ratio(k: f64, tau: f64, horizon: f64) -> (f64, f64) {
    if k == 0.0 {
        return (tau / horizon, 1.0 / horizon);
    }
    let (a, b) = (k * tau, k * horizon);
    let ratio = (a - b).exp() * (-(-2.0 * a).exp_m1()) / (-(-2.0 * b).exp_m1());
    let dratio = k * (a - b).exp() * (1.0 + (-2.0 * a).exp()) / (-(-2.0 * b).exp_m1());
    (ratio, dratio)
}

/// Representative player's path: mean path plus the idiosyncratic deviation.
#[derive(Clone, Debug)]
pub struct ComposedPlayer {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_xi: Vec<f64>,
    /// |X_T| left by the penalised mean path (the strict deviation vanishes at T).
    pub terminal_mismatch: f64,
}

pub fn compose_mfg_player(x_own: f64, mean_x0: f64, mean: &MeanPath, eta: f64, lambda: f64) -> ComposedPlayer {
    let horizon = mean.grid.horizon();
    let k = (lambda / eta).sqrt();
    let dev = x_own - mean_x0;
    let mean_x = mean.mean_x();
    let mean_xi = mean.mean_rate();
    let mut x = Vec::with_capacity(mean_x.len());
    let mut xi = Vec::with_capacity(mean_x.len());
    for (kk, t) in mean.grid.nodes().iter().enumerate() {
        let (s, ds) = sinh_ratio(k, horizon - t, horizon);
        x.push(mean_x[kk] + dev * s);
        xi.push(mean_xi[kk] + dev * ds);
    }
    let terminal_mismatch = x.last().copied().unwrap_or(0.0).abs();
    ComposedPlayer { x, xi, mean_x, mean_xi, terminal_mismatch }
}

pub fn solve_single_player(
    params: &PlayerParams,
    x: f64,
    penalty: f64,
    grid: &TimeGrid,
) -> Result<EquilibriumSolution, EquilibriumError> {
    params.validate()?;
    Penalty::Finite(penalty).validate()?;
    let c = Coeffs::from(params);
    let g = dense_to_matrix(&single_player_generator(&c));
    let computed = matops::det(&g)?;
    let closed = single_player_generator_det(params);
    let scale = (0..6).map(|i| norm2(g.row(i))).product::<f64>();
    if (computed - closed).abs() > 1e-9 * closed.abs().max(scale * 1e-6) {
        return Err(EquilibriumError::Internal(format!("generator determinant {computed:e} != {closed:e}")));
    }
    let spec = Bvp { g: &g, forcing: single_player_forcing(&c, x), f0: vec![x, 0.0, 0.0], x_rows: vec![0], penalty };
    let out = solve_bvp(&spec, grid, 1)?;
    let players = extract_players(&out.z, std::slice::from_ref(params), 1.0);
    Ok(EquilibriumSolution {
        grid: *grid,
        penalty,
        costs: costs_for(&players, std::slice::from_ref(params), penalty, grid),
        players,
        diagnostics: Diagnostics {
            ansatz_residual: Some(out.residual),
            boundary_condition: Some(out.condition),
            generator_det: Some((computed, closed)),
            picard: None,
        },
    })
}

pub fn solve_two_player(
    p1: &PlayerParams,
    p2: &PlayerParams,
    x1: f64,
    x2: f64,
    penalty: f64,
    grid: &TimeGrid,
) -> Result<EquilibriumSolution, EquilibriumError> {
    p1.validate()?;
    p2.validate()?;
    Penalty::Finite(penalty).validate()?;
    let (c1, c2) = (Coeffs::from(p1), Coeffs::from(p2));
    let g = dense_to_matrix(&two_player_generator(&c1, &c2));
    let spec = Bvp {
        g: &g,
        forcing: two_player_forcing(&c1, &c2, x1, x2),
        f0: vec![x1, 0.0, 0.0, x2, 0.0, 0.0],
        x_rows: vec![0, 3],
        penalty,
    };
    let out = solve_bvp(&spec, grid, 1)?;
    let params = [*p1, *p2];
    let players = extract_players(&out.z, &params, 2.0);
    Ok(EquilibriumSolution {
        grid: *grid,
        penalty,
        costs: costs_for(&players, &params, penalty, grid),
        players,
        diagnostics: Diagnostics {
            ansatz_residual: Some(out.residual),
            boundary_condition: Some(out.condition),
            generator_det: None,
            picard: None,
        },
    })
}

/// Dense 6N-dimensional boundary solve.
pub fn solve_nplayer(
    params: &[PlayerParams],
    setup: &MarketSetup,
    grid: &TimeGrid,
) -> Result<EquilibriumSolution, EquilibriumError> {
    let g = assemble_nplayer_generator(params, setup)?;
    let coeffs: Vec<Coeffs<f64>> = params.iter().map(Coeffs::from).collect();
    let n = params.len();
    let mut f0 = vec![0.0; 3 * n];
    for (i, x) in setup.initial_positions.iter().enumerate() {
        f0[3 * i] = *x;
    }
    let penalty = setup.penalty.weight();
    let spec = Bvp {
        g: &g,
        forcing: nplayer_forcing(&coeffs, &setup.initial_positions),
        f0,
        x_rows: (0..n).map(|i| 3 * i).collect(),
        penalty,
    };
    let out = solve_bvp(&spec, grid, residual_stride(3 * n, grid))?;
    let players = extract_players(&out.z, params, n as f64);
    Ok(EquilibriumSolution {
        grid: *grid,
        penalty,
        costs: costs_for(&players, params, penalty, grid),
        players,
        diagnostics: Diagnostics {
            ansatz_residual: Some(out.residual),
            boundary_condition: Some(out.condition),
            generator_det: None,
            picard: None,
        },
    })
}

/// N-player solve for identical coefficients via the mean/deviation split.
///
/// With common parameters the generator commutes with permutations of the
/// players, so initial data x̄ + dᵢ (Σdᵢ = 0) decomposes exactly into one
/// symmetric 6-dimensional problem at x̄ and one unforced 6-dimensional
/// problem for unit deviation, scaled by each dᵢ. Cost is independent of N.
pub fn solve_nplayer_homogeneous(
    params: &PlayerParams,
    setup: &MarketSetup,
    grid: &TimeGrid,
) -> Result<EquilibriumSolution, EquilibriumError> {
    let all = vec![*params; setup.num_players];
    assemble_nplayer_blocks(&all, setup)?;
    let n = setup.num_players;
    let penalty = setup.penalty.weight();
    let xbar = setup.initial_positions.iter().sum::<f64>() / n as f64;
    // Own and cross blocks read off a two-copy pattern with divisor N.
    let c = Coeffs::from(params);
    let nf = n as f64;
    let big = dense_to_matrix(&nplayer_generator_scaled(&[c, c], nf));
    let own = reduced_block(&big, 6, 0, 0);
    let cross = reduced_block(&big, 6, 0, 1);
    let g_mean = own.add(&cross.scale(nf - 1.0));
    let g_dev = own.sub(&cross);
    let f_mean = nplayer_forcing(&[c], &[xbar]);
    let mean =
        solve_bvp(&Bvp { g: &g_mean, forcing: f_mean, f0: vec![xbar, 0.0, 0.0], x_rows: vec![0], penalty }, grid, 1)?;
    let dev = solve_bvp(
        &Bvp { g: &g_dev, forcing: vec![0.0; 3], f0: vec![1.0, 0.0, 0.0], x_rows: vec![0], penalty },
        grid,
        1,
    )?;
    let players = setup
        .initial_positions
        .iter()
        .map(|xi| {
            let di = xi - xbar;
            let z: Vec<Vec<f64>> =
                mean.z.iter().zip(&dev.z).map(|(a, b)| a.iter().zip(b).map(|(u, v)| u + di * v).collect()).collect();
            extract_players(&z, std::slice::from_ref(params), nf).remove(0)
        })
        .collect::<Vec<_>>();
    let params_all = vec![*params; n];
    Ok(EquilibriumSolution {
        grid: *grid,
        penalty,
        costs: costs_for(&players, &params_all, penalty, grid),
        players,
        diagnostics: Diagnostics {
            ansatz_residual: Some(mean.residual.max(dev.residual)),
            boundary_condition: Some(mean.condition.max(dev.condition)),
            generator_det: None,
            picard: None,
        },
    })
}

/// 6×6 block coupling player `j`'s (F, B) into player `i`'s in a 2d-layout generator.
fn reduced_block(g: &Matrix, d: usize, i: usize, j: usize) -> Matrix {
    let mut out = Matrix::zeros(6, 6);
    for (ro, rb) in [(0usize, 0usize), (3, d)] {
        for (co, cb) in [(0usize, 0usize), (3, d)] {
            out.set_block(ro, co, &g.block(rb + 3 * i, cb + 3 * j, 3, 3));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Fixed-point solver.

/// Deterministic instance of the unified system for the fixed-point solver.
#[derive(Clone, Debug)]
pub struct PicardProblem {
    pub params: Vec<PlayerParams>,
    pub blocks: Vec<SystemBlocks>,
    pub initial: Vec<f64>,
    pub penalty: f64,
}

impl PicardProblem {
    /// Representative player of the mean-field game, started at 𝔼𝒳.
    pub fn mean_field(params: &PlayerParams, mean_x0: f64, penalty: f64) -> Result<Self, EquilibriumError> {
        Penalty::Finite(penalty).validate()?;
        Ok(Self {
            params: vec![*params],
            blocks: vec![assemble_mfg_blocks(params, mean_x0)?],
            initial: vec![mean_x0],
            penalty,
        })
    }

    pub fn nplayer(params: &[PlayerParams], setup: &MarketSetup) -> Result<Self, EquilibriumError> {
        Ok(Self {
            params: params.to_vec(),
            blocks: assemble_nplayer_blocks(params, setup)?,
            initial: setup.initial_positions.clone(),
            penalty: setup.penalty.weight(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Number of continuation levels p = 1/L, 2/L, …, 1 tried on stall.
    pub homotopy_levels: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500, damping: 0.5, homotopy_levels: 4 }
    }
}

const GL8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// φ(τ) = cosh(kτ) + (n/η) sinh(kτ)/k solves φ'' = k²φ with φ(0)=1, φ'(0)=n/η;
/// the Riccati slope is 𝒜 = 2η φ'(T−t)/φ(T−t).
#[derive(Clone, Copy, Debug)]
struct Weight {
    k: f64,
    c: f64,
}

impl Weight {
    fn new(p: &PlayerParams, penalty: f64) -> Self {
        Self { k: (p.lambda / p.eta).sqrt(), c: penalty / p.eta }
    }

    fn phi(&self, tau: f64) -> f64 {
        let a = self.k * tau;
        let sinhc = if a.abs() < 1e-8 { tau } else { a.sinh() / self.k };
        a.cosh() + self.c * sinhc
    }

    fn dphi(&self, tau: f64) -> f64 {
        let a = self.k * tau;
        self.k * a.sinh() + self.c * a.cosh()
    }
}

#[derive(Clone, Debug)]
struct QuadPoint {
    w: f64,
    start: usize,
    lag: Vec<f64>,
    phi: f64,
    dphi: f64,
}

impl QuadPoint {
    fn interp(&self, v: &[f64]) -> f64 {
        self.lag.iter().enumerate().map(|(j, l)| l * v[self.start + j]).sum()
    }
}

struct PlayerPlan {
    eta: f64,
    n_feedback: f64,
    blocks: SystemBlocks,
    x0: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    quad: Vec<Vec<QuadPoint>>,
    p_step: ExpStepper,
    s_step: ExpStepper,
}

fn lagrange_at(xs: &[f64], s: f64) -> Vec<f64> {
    (0..xs.len())
        .map(|j| xs.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, xi)| (s - xi) / (xs[j] - xi)).product())
        .collect()
}

fn build_plan(
    p: &PlayerParams,
    b: &SystemBlocks,
    x0: f64,
    penalty: f64,
    grid: &TimeGrid,
) -> Result<PlayerPlan, EquilibriumError> {
    let w = Weight::new(p, penalty);
    let horizon = grid.horizon();
    let h = grid.dt();
    let m = grid.steps();
    let nodes = grid.nodes();
    let phi: Vec<f64> = nodes.iter().map(|t| w.phi(horizon - t)).collect();
    let dphi: Vec<f64> = nodes.iter().map(|t| w.dphi(horizon - t)).collect();
    // Boundary layer of width η/n at the terminal node: geometric pieces.
    let layer = if penalty > 0.0 { p.eta / penalty } else { h };
    let levels = (((h / layer).log2().ceil() as i64) + 8).clamp(4, 60) as usize;
    let mut quad = Vec::with_capacity(m);
    for k in 0..m {
        let (start, np) = matops::stencil(k, m);
        let xs: Vec<f64> = (0..np).map(|j| (start as f64 + j as f64 - k as f64) * h).collect();
        let pieces: Vec<(f64, f64)> = if k + 1 == m {
            // local offsets from t_k, graded towards h (= the terminal time)
            let mut v = Vec::with_capacity(levels + 1);
            let mut edge = 0.0;
            for l in 0..levels {
                let next = h - h * 0.5f64.powi(l as i32 + 1);
                v.push((edge, next));
                edge = next;
            }
            v.push((edge, h));
            v
        } else {
            vec![(0.0, h)]
        };
        let mut pts = Vec::new();
        for (a, bb) in pieces {
            let (mid, half) = (0.5 * (a + bb), 0.5 * (bb - a));
            for (xg, wg) in GL8 {
                let s = mid + half * xg;
                let tau = horizon - (nodes[k] + s);
                pts.push(QuadPoint {
                    w: wg * half,
                    start,
                    lag: lagrange_at(&xs, s),
                    phi: w.phi(tau),
                    dphi: w.dphi(tau),
                });
            }
        }
        quad.push(pts);
    }
    let nn = b.num_players as f64;
    let c = 1.0 / (2.0 * nn * p.eta);
    // 𝒫' = (Aᵀ + Θ B̂⁽¹⁾ᵀ/(2Nη)) 𝒫 − Θ M/(2η)
    let gp = Matrix::from_rows(&[[b.a[0][0] + c * b.b_hat1[0], b.a[1][0] + c * b.b_hat1[1]], [b.a[0][1], b.a[1][1]]]);
    let gs = Matrix::from_rows(&[[-b.a[0][0], -b.a[0][1]], [-b.a[1][0], -b.a[1][1]]]);
    Ok(PlayerPlan {
        eta: p.eta,
        n_feedback: nn,
        blocks: b.clone(),
        x0,
        phi,
        dphi,
        quad,
        // stepped in reversed time
        p_step: ExpStepper::new(&gp.scale(-1.0), grid)?,
        s_step: ExpStepper::new(&gs, grid)?,
    })
}

struct MapOutput {
    x: Vec<Vec<f64>>,
    m: Vec<Vec<f64>>,
    s: Vec<Vec<Vec<f64>>>,
    pc: Vec<Vec<Vec<f64>>>,
    xi: Vec<Vec<f64>>,
}

/// One application of the continuation map at level p.
fn picard_map(plans: &[PlayerPlan], x: &[Vec<f64>], m: &[Vec<f64>], level: f64, grid: &TimeGrid) -> MapOutput {
    let nodes = grid.len();
    let np = plans.len();
    // Adjoint 𝒫 backward and resulting rates.
    let mut pc = Vec::with_capacity(np);
    let mut rates = Vec::with_capacity(np);
    for (i, plan) in plans.iter().enumerate() {
        let forcing: Vec<Vec<f64>> = m[i].iter().map(|v| vec![-level * v / (2.0 * plan.eta), 0.0]).collect();
        let rev: Vec<Vec<f64>> = forcing.iter().rev().map(|f| f.iter().map(|v| -v).collect()).collect();
        let mut path = plan.p_step.propagate(&[0.0, 0.0], &rev);
        path.reverse();
        let bh = plan.blocks.b_hat1;
        let xi: Vec<f64> = (0..nodes)
            .map(|k| (level * m[i][k] - (bh[0] * path[k][0] + bh[1] * path[k][1]) / plan.n_feedback) / (2.0 * plan.eta))
            .collect();
        pc.push(path);
        rates.push(xi);
    }
    let inv = 1.0 / np as f64;
    let chi: Vec<[f64; 3]> = (0..nodes)
        .map(|k| {
            let xi_bar = rates.iter().map(|r| r[k]).sum::<f64>() * inv;
            let x_bar = x.iter().map(|v| level * v[k]).sum::<f64>() * inv;
            [xi_bar, x_bar, xi_bar]
        })
        .collect();
    let mut out = MapOutput { x: Vec::new(), m: Vec::new(), s: Vec::new(), pc, xi: rates };
    for (i, plan) in plans.iter().enumerate() {
        let b = &plan.blocks;
        let forcing: Vec<Vec<f64>> = chi
            .iter()
            .map(|c| (0..2).map(|r| b.k[r][0] * c[0] + b.k[r][1] * c[1] + b.k[r][2] * c[2] + b.r0[r]).collect())
            .collect();
        let s = plan.s_step.propagate(&[0.0, 0.0], &forcing);
        let pci = &out.pc[i];
        let nn = plan.n_feedback;
        let hv: Vec<f64> = (0..nodes)
            .map(|k| {
                let fb = (b.b_hat2[0] * pci[k][0] + b.b_hat2[1] * pci[k][1]) / nn;
                fb + b.drift([s[k][0], s[k][1]], chi[k])[0]
            })
            .collect();
        let bv: Vec<f64> = (0..nodes).map(|k| (b.b_hat1[0] * pci[k][0] + b.b_hat1[1] * pci[k][1]) / nn).collect();
        // Γ = φ ℬ backward: Γ' = −(φ' b + φ h)
        let mm = nodes - 1;
        let mut gamma = vec![0.0; nodes];
        gamma[mm] = -s[mm][0];
        for k in (0..mm).rev() {
            let inc: f64 = plan.quad[k].iter().map(|q| q.w * (q.dphi * q.interp(&bv) + q.phi * q.interp(&hv))).sum();
            gamma[k] = gamma[k + 1] + inc;
        }
        // Ψ = X/φ forward: Ψ' = −(ℬ − b)/(2η φ)
        let mut psi = vec![0.0; nodes];
        psi[0] = plan.x0 / plan.phi[0];
        for k in 0..mm {
            let inc: f64 = plan.quad[k]
                .iter()
                .map(|q| q.w * (q.interp(&gamma) / q.phi - q.interp(&bv)) / (2.0 * plan.eta * q.phi))
                .sum();
            psi[k + 1] = psi[k] - inc;
        }
        let xn: Vec<f64> = (0..nodes).map(|k| plan.phi[k] * psi[k]).collect();
        let mn: Vec<f64> =
            (0..nodes).map(|k| 2.0 * plan.eta * plan.dphi[k] * psi[k] + gamma[k] / plan.phi[k]).collect();
        out.x.push(xn);
        out.m.push(mn);
        out.s.push(s);
    }
    out
}

fn sup_change(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

enum RunEnd {
    Converged(MapOutput),
    Stalled,
    Diverged,
}

fn run_level(
    plans: &[PlayerPlan],
    x: &mut Vec<Vec<f64>>,
    m: &mut Vec<Vec<f64>>,
    level: f64,
    opts: &PicardOptions,
    grid: &TimeGrid,
    history: &mut Vec<f64>,
    budget: usize,
) -> RunEnd {
    let start = history.len();
    for _ in 0..budget {
        let out = picard_map(plans, x, m, level, grid);
        let res = sup_change(&out.x, x).max(sup_change(&out.m, m));
        history.push(res);
        if !res.is_finite() || res > 1e12 {
            return RunEnd::Diverged;
        }
        if res < opts.tol {
            *x = out.x.clone();
            *m = out.m.clone();
            return RunEnd::Converged(out);
        }
        let d = opts.damping;
        for (xi, xn) in x.iter_mut().zip(&out.x) {
            for (a, b) in xi.iter_mut().zip(xn) {
                *a += d * (b - *a);
            }
        }
        for (mi, mn) in m.iter_mut().zip(&out.m) {
            for (a, b) in mi.iter_mut().zip(mn) {
                *a += d * (b - *a);
            }
        }
        let it = history.len() - start;
        if it > 40 {
            let old = history[history.len() - 41];
            if res > 1e3 * history[start].max(opts.tol) {
                return RunEnd::Diverged;
            }
            if res > 0.999 * old {
                return RunEnd::Stalled;
            }
        }
    }
    RunEnd::Stalled
}

/// Damped fixed-point iteration of the best-response map, with a
/// continuation in the coupling strength when the plain iteration fails.
pub fn solve_picard(
    problem: &PicardProblem,
    grid: &TimeGrid,
    opts: &PicardOptions,
) -> Result<EquilibriumSolution, EquilibriumError> {
    for p in &problem.params {
        p.validate()?;
    }
    if problem.params.len() != problem.blocks.len() || problem.params.len() != problem.initial.len() {
        return Err(ModelError::InvalidSetup("inconsistent problem dimensions".into()).into());
    }
    let plans: Vec<PlayerPlan> = problem
        .params
        .iter()
        .zip(&problem.blocks)
        .zip(&problem.initial)
        .map(|((p, b), x0)| build_plan(p, b, *x0, problem.penalty, grid))
        .collect::<Result<_, _>>()?;
    let horizon = grid.horizon();
    let init = |x0: f64, eta: f64| {
        let x: Vec<f64> = grid.nodes().iter().map(|t| x0 * (1.0 - t / horizon)).collect();
        let m = vec![2.0 * eta * x0 / horizon; grid.len()];
        (x, m)
    };
    let (mut x, mut m): (Vec<Vec<f64>>, Vec<Vec<f64>>) = plans.iter().map(|p| init(p.x0, p.eta)).unzip();
    let mut history = Vec::new();
    let mut homotopy = false;
    let first = run_level(&plans, &mut x, &mut m, 1.0, opts, grid, &mut history, opts.max_iter);
    let out = match first {
        RunEnd::Converged(out) => out,
        RunEnd::Stalled | RunEnd::Diverged => {
            homotopy = true;
            let levels = opts.homotopy_levels.max(1);
            let (x0, m0): (Vec<Vec<f64>>, Vec<Vec<f64>>) = plans.iter().map(|p| init(p.x0, p.eta)).unzip();
            x = x0;
            m = m0;
            let mut last = None;
            for l in 1..=levels {
                let level = l as f64 / levels as f64;
                match run_level(&plans, &mut x, &mut m, level, opts, grid, &mut history, opts.max_iter) {
                    RunEnd::Converged(out) => last = Some(out),
                    _ => {
                        last = None;
                        break;
                    }
                }
            }
            match last {
                Some(out) => out,
                None => {
                    return Err(EquilibriumError::Divergence {
                        iterations: history.len(),
                        last: *history.last().unwrap_or(&f64::NAN),
                        history,
                    })
                }
            }
        }
    };
    let players: Vec<PlayerPath> = (0..plans.len())
        .map(|i| {
            let y: Vec<f64> = out.s[i].iter().map(|v| v[0]).collect();
            PlayerPath {
                x: out.x[i].clone(),
                c: out.s[i].iter().map(|v| v[1]).collect(),
                xi: out.xi[i].clone(),
                p: out.m[i].iter().zip(&y).map(|(a, b)| a + b).collect(),
                q: out.pc[i].iter().map(|v| v[0]).collect(),
                r: out.pc[i].iter().map(|v| v[1]).collect(),
                y,
            }
        })
        .collect();
    let info = PicardInfo { iterations: history.len(), residual: *history.last().unwrap_or(&0.0), history, homotopy };
    Ok(EquilibriumSolution {
        grid: *grid,
        penalty: problem.penalty,
        costs: costs_for(&players, &problem.params, problem.penalty, grid),
        players,
        diagnostics: Diagnostics { picard: Some(info), ..Diagnostics::default() },
    })
}

// ---------------------------------------------------------------------------
// Penalisation sweep.

/// A game instance that can be re-solved at different penalty weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    /// Mean path of the mean-field game.
    MeanField {
        params: PlayerParams,
        mean_x0: f64,
    },
    Single {
        params: PlayerParams,
        x: f64,
    },
    Two {
        p1: PlayerParams,
        p2: PlayerParams,
        x1: f64,
        x2: f64,
    },
    NPlayer {
        params: Vec<PlayerParams>,
        initials: Vec<f64>,
    },
}

impl Instance {
    pub fn solve(&self, penalty: f64, grid: &TimeGrid) -> Result<EquilibriumSolution, EquilibriumError> {
        match self {
            Instance::MeanField { params, mean_x0 } => {
                let (mean, _) = solve_mfg_mean(params, *mean_x0, penalty, grid)?;
                let path = PlayerPath {
                    x: mean.mean_x(),
                    y: mean.f.iter().map(|v| v[1]).collect(),
                    c: mean.f.iter().map(|v| v[2]).collect(),
                    xi: mean.mean_rate(),
                    p: mean.b.iter().map(|v| v[0]).collect(),
                    q: mean.b.iter().map(|v| v[1]).collect(),
                    r: mean.b.iter().map(|v| v[2]).collect(),
                };
                Ok(EquilibriumSolution {
                    grid: *grid,
                    penalty,
                    costs: costs_for(std::slice::from_ref(&path), std::slice::from_ref(params), penalty, grid),
                    players: vec![path],
                    diagnostics: Diagnostics {
                        ansatz_residual: Some(mean.ansatz_residual),
                        boundary_condition: Some(mean.boundary_condition),
                        ..Diagnostics::default()
                    },
                })
            }
            Instance::Single { params, x } => solve_single_player(params, *x, penalty, grid),
            Instance::Two { p1, p2, x1, x2 } => solve_two_player(p1, p2, *x1, *x2, penalty, grid),
            Instance::NPlayer { params, initials } => {
                let setup = MarketSetup::new(grid.horizon(), Penalty::Finite(penalty), initials.clone());
                solve_nplayer(params, &setup, grid)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub penalty: f64,
    /// |X_T| per player.
    pub terminal: Vec<f64>,
    /// Sup-norm distance of positions to the previous penalty's solution.
    pub distance_to_previous: Option<f64>,
}

pub fn penalization_sweep(
    instance: &Instance,
    n_list: &[f64],
    grid: &TimeGrid,
) -> Result<Vec<SweepPoint>, EquilibriumError> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ModelError::InvalidSetup("penalty list must be strictly ascending".into()).into());
    }
    let mut out = Vec::with_capacity(n_list.len());
    let mut prev: Option<EquilibriumSolution> = None;
    for &n in n_list {
        let sol = instance.solve(n, grid)?;
        let terminal = sol.players.iter().map(|p| p.x.last().copied().unwrap_or(0.0).abs()).collect();
        let distance_to_previous = prev.as_ref().map(|p| p.sup_distance(&sol));
        out.push(SweepPoint { penalty: n, terminal, distance_to_previous });
        prev = Some(sol);
    }
    Ok(out)
}
