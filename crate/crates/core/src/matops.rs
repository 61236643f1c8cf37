//! Dense matrices, matrix exponentials and exponential integrals.
//!
//! Everything here is small and dense (at most a few hundred rows), so the
//! storage is a plain row-major `Vec<f64>` and the algorithms are textbook:
//! Padé scaling-and-squaring for `expm`, Van Loan block exponentials for the
//! integrals, LU with partial pivoting for linear solves.

use std::ops::{Index, IndexMut, Mul};

use thiserror::Error;

/// Condition-number threshold beyond which a linear system is reported singular.
pub const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite entry in input")]
    NonFinite,
    #[error("matrix is singular or near-singular (condition estimate {estimate:e})")]
    Singular { estimate: f64 },
    #[error("matrix exponential overflowed (scaled norm {norm:e})")]
    Overflow { norm: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MatError> {
        if data.len() != rows * cols {
            return Err(MatError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(MatError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows; panics on ragged input (test and literal use).
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].as_ref().len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.as_ref().len(), c, "ragged rows");
            data.extend_from_slice(row.as_ref());
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: f64, other: &Self) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let (n, m, p) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * p..(k + 1) * p];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Self { rows: n, cols: p, data: out }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows).map(|i| self.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        Self::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Self) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(r0 + i, c0 + j)] = b[(i, j)];
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

/// Uniform grid t_k = kT/M on [0, T].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, MatError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(MatError::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(MatError::InvalidGrid(format!("need at least 2 steps, got {steps}")));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes, M + 1.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Same horizon, twice the steps.
    pub fn refined(&self) -> Self {
        Self { horizon: self.horizon, steps: 2 * self.steps }
    }
}

// Padé coefficients and theta thresholds of Higham (2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] =
    [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0, 2162160.0, 110880.0, 3960.0, 90.0, 1.0];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] =
    [(3, 1.495585217958292e-2), (5, 2.539398330063230e-1), (7, 9.504178996162932e-1), (9, 2.097847961257068e0)];
const THETA13: f64 = 5.371920351148152;

fn check_square(g: &Matrix) -> Result<(), MatError> {
    if !g.is_square() {
        return Err(MatError::NotSquare { rows: g.rows(), cols: g.cols() });
    }
    if !g.is_finite() {
        return Err(MatError::NonFinite);
    }
    Ok(())
}

fn pade_low(a: &Matrix, b: &[f64]) -> (Matrix, Matrix) {
    let n = a.rows();
    let a2 = a * a;
    let mut powers = vec![Matrix::identity(n), a2.clone()];
    let m = b.len() - 1;
    while powers.len() <= m / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        if 2 * k + 1 <= m {
            u.axpy(b[2 * k + 1], p);
        }
        v.axpy(b[2 * k], p);
    }
    (a * &u, v)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let b = &PADE13;
    let n = a.rows();
    let id = Matrix::identity(n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let mut inner = a6.scale(b[13]);
    inner.axpy(b[11], &a4);
    inner.axpy(b[9], &a2);
    let mut u = &a6 * &inner;
    u.axpy(b[7], &a6);
    u.axpy(b[5], &a4);
    u.axpy(b[3], &a2);
    u.axpy(b[1], &id);
    let u = a * &u;
    let mut inner = a6.scale(b[12]);
    inner.axpy(b[10], &a4);
    inner.axpy(b[8], &a2);
    let mut v = &a6 * &inner;
    v.axpy(b[6], &a6);
    v.axpy(b[4], &a4);
    v.axpy(b[2], &a2);
    v.axpy(b[0], &id);
    (u, v)
}

/// e^{G tau} by Padé scaling and squaring.
pub fn expm(g: &Matrix, tau: f64) -> Result<Matrix, MatError> {
    check_square(g)?;
    if !tau.is_finite() {
        return Err(MatError::NonFinite);
    }
    let a = g.scale(tau);
    let norm = a.norm1();
    let n = a.rows();
    if norm == 0.0 {
        return Ok(Matrix::identity(n));
    }
    let mut squarings = 0u32;
    let (u, v) = if let Some(&(m, _)) = THETA.iter().find(|(_, th)| norm <= *th) {
        let coeffs: &[f64] = match m {
            3 => &PADE3,
            5 => &PADE5,
            7 => &PADE7,
            _ => &PADE9,
        };
        pade_low(&a, coeffs)
    } else {
        squarings = (norm / THETA13).log2().ceil().max(0.0) as u32;
        pade13(&a.scale(0.5f64.powi(squarings as i32)))
    };
    let p = v.add(&u);
    let q = v.sub(&u);
    let lu = Lu::new(&q).map_err(|_| MatError::Overflow { norm })?;
    let mut r = lu.solve_matrix(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !r.is_finite() {
        return Err(MatError::Overflow { norm });
    }
    Ok(r)
}

/// (e^{G tau}, ∫_0^tau e^{G s} ds) from one augmented exponential, so that
/// singular G needs no inverse.
pub fn expm_with_integral(g: &Matrix, tau: f64) -> Result<(Matrix, Matrix), MatError> {
    check_square(g)?;
    let n = g.rows();
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.set_block(0, 0, g);
    aug.set_block(0, n, &Matrix::identity(n));
    let big = expm(&aug, tau)?;
    Ok((big.block(0, 0, n, n), big.block(0, n, n, n)))
}

/// Coefficients (ascending powers of s) of the Lagrange basis polynomials on
/// the nodes `xs`.
pub(crate) fn lagrange_coeffs(xs: &[f64]) -> Vec<Vec<f64>> {
    let p = xs.len();
    (0..p)
        .map(|j| {
            let mut poly = vec![1.0];
            let mut denom = 1.0;
            for (i, &xi) in xs.iter().enumerate() {
                if i == j {
                    continue;
                }
                let mut next = vec![0.0; poly.len() + 1];
                for (d, c) in poly.iter().enumerate() {
                    next[d + 1] += c;
                    next[d] -= xi * c;
                }
                poly = next;
                denom *= xs[j] - xi;
            }
            poly.iter().map(|c| c / denom).collect()
        })
        .collect()
}

/// Stencil for interval k of an M-step grid: first node index and point count.
pub(crate) fn stencil(k: usize, steps: usize) -> (usize, usize) {
    let p = 4.min(steps + 1);
    let start = (k as isize - 1).clamp(0, (steps + 1 - p) as isize) as usize;
    (start, p)
}

/// Weights w_j with ∫_{t_k}^{t_{k+1}} f ≈ Σ w_j f(t_{start+j}), exact for cubics.
pub fn interval_weights(k: usize, steps: usize, h: f64) -> (usize, Vec<f64>) {
    let (start, p) = stencil(k, steps);
    let xs: Vec<f64> = (0..p).map(|j| (start as f64 + j as f64 - k as f64) * h).collect();
    let w = lagrange_coeffs(&xs)
        .iter()
        .map(|c| c.iter().enumerate().map(|(m, cm)| cm * h.powi(m as i32 + 1) / (m as f64 + 1.0)).sum())
        .collect();
    (start, w)
}

/// Cubic-exact composite quadrature of nodal values over the whole grid.
pub fn integrate(values: &[f64], grid: &TimeGrid) -> f64 {
    *cumulative_integral(values, grid).last().unwrap()
}

/// Running integral ∫_0^{t_k} f at every node, cubic-exact per interval.
pub fn cumulative_integral(values: &[f64], grid: &TimeGrid) -> Vec<f64> {
    assert_eq!(values.len(), grid.len(), "values must live on the grid nodes");
    let m = grid.steps();
    let h = grid.dt();
    let mut out = Vec::with_capacity(m + 1);
    out.push(0.0);
    let mut acc = 0.0;
    let mut cache: Vec<(isize, Vec<f64>)> = Vec::new();
    for k in 0..m {
        let (start, _) = stencil(k, m);
        let offset = start as isize - k as isize;
        if !cache.iter().any(|(o, _)| *o == offset) {
            cache.push((offset, interval_weights(k, m, h).1));
        }
        let w = &cache.iter().find(|(o, _)| *o == offset).unwrap().1;
        acc += w.iter().enumerate().map(|(j, wj)| wj * values[start + j]).sum::<f64>();
        out.push(acc);
    }
    out
}

/// Exact propagator over one grid step of z' = G z + f(t), with f replaced
/// by its cubic Lagrange interpolant through neighbouring nodes.
#[derive(Clone, Debug)]
pub struct ExpStepper {
    steps: usize,
    e: Matrix,
    j: Matrix,
    // (node offset relative to interval start, weight matrix per stencil node)
    patterns: Vec<(isize, Vec<Matrix>)>,
}

impl ExpStepper {
    pub fn new(g: &Matrix, grid: &TimeGrid) -> Result<Self, MatError> {
        check_square(g)?;
        let n = g.rows();
        let h = grid.dt();
        let m = grid.steps();
        let p = 4.min(m + 1);
        // Van Loan chain: block (0, i+1) of the exponential is ∫_0^h e^{G(h-s)} s^i/i! ds.
        let blocks = p + 1;
        let mut aug = Matrix::zeros(blocks * n, blocks * n);
        aug.set_block(0, 0, g);
        for b in 0..p {
            aug.set_block(b * n, (b + 1) * n, &Matrix::identity(n));
        }
        let big = expm(&aug, h)?;
        let e = big.block(0, 0, n, n);
        let moments: Vec<Matrix> = (0..p).map(|i| big.block(0, (i + 1) * n, n, n)).collect();
        let mut patterns: Vec<(isize, Vec<Matrix>)> = Vec::new();
        for k in 0..m {
            let (start, _) = stencil(k, m);
            let offset = start as isize - k as isize;
            if patterns.iter().any(|(o, _)| *o == offset) {
                continue;
            }
            let xs: Vec<f64> = (0..p).map(|j| (offset + j as isize) as f64 * h).collect();
            let ws = lagrange_coeffs(&xs)
                .iter()
                .map(|c| {
                    let mut w = Matrix::zeros(n, n);
                    let mut fact = 1.0;
                    for (i, ci) in c.iter().enumerate() {
                        if i > 0 {
                            fact *= i as f64;
                        }
                        w.axpy(ci * fact, &moments[i]);
                    }
                    w
                })
                .collect();
            patterns.push((offset, ws));
        }
        Ok(Self { steps: m, j: moments[0].clone(), e, patterns })
    }

    /// e^{G h}.
    pub fn transition(&self) -> &Matrix {
        &self.e
    }

    /// ∫_0^h e^{G s} ds.
    pub fn integral(&self) -> &Matrix {
        &self.j
    }

    /// Advances z_k to z_{k+1} with forcing sampled at the grid nodes.
    pub fn step(&self, k: usize, z: &[f64], forcing: &[Vec<f64>]) -> Vec<f64> {
        let mut out = self.e.mul_vec(z);
        let (start, _) = stencil(k, self.steps);
        let offset = start as isize - k as isize;
        let (_, ws) = self.patterns.iter().find(|(o, _)| *o == offset).expect("stencil pattern");
        for (j, w) in ws.iter().enumerate() {
            let f = &forcing[start + j];
            if f.iter().all(|x| *x == 0.0) {
                continue;
            }
            for (o, v) in out.iter_mut().zip(w.mul_vec(f)) {
                *o += v;
            }
        }
        out
    }

    /// Whole forward sweep from z_0.
    pub fn propagate(&self, z0: &[f64], forcing: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert_eq!(forcing.len(), self.steps + 1);
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(z0.to_vec());
        for k in 0..self.steps {
            let next = self.step(k, &out[k], forcing);
            out.push(next);
        }
        out
    }
}

/// Solves z' = G z + f(t) forward from z(0) = z0.
pub fn propagate_forward(
    g: &Matrix,
    z0: &[f64],
    forcing: &[Vec<f64>],
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>, MatError> {
    Ok(ExpStepper::new(g, grid)?.propagate(z0, forcing))
}

/// Solves z' = G z + f(t) backward from z(T) = zt.
pub fn propagate_backward(
    g: &Matrix,
    zt: &[f64],
    forcing: &[Vec<f64>],
    grid: &TimeGrid,
) -> Result<Vec<Vec<f64>>, MatError> {
    // In reversed time s = T - t: dz/ds = -G z - f(T - s).
    let reversed: Vec<Vec<f64>> = forcing.iter().rev().map(|f| f.iter().map(|x| -x).collect()).collect();
    let mut out = ExpStepper::new(&g.scale(-1.0), grid)?.propagate(zt, &reversed);
    out.reverse();
    Ok(out)
}

/// LU factorisation with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self, MatError> {
        check_square(a)?;
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let (p, pv) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv == 0.0 {
                return Err(MatError::Singular { estimate: f64::INFINITY });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let piv = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / piv;
                lu[(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        lu.data[i * n + j] -= l * lu.data[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm, sign })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.n, b.cols());
        for c in 0..b.cols() {
            let col: Vec<f64> = (0..b.rows()).map(|r| b[(r, c)]).collect();
            for (r, v) in self.solve(&col).into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn det(&self) -> f64 {
        (0..self.n).map(|i| self.lu[(i, i)]).product::<f64>() * self.sign
    }

    pub fn inverse(&self) -> Matrix {
        self.solve_matrix(&Matrix::identity(self.n))
    }
}

pub fn det(a: &Matrix) -> Result<f64, MatError> {
    match Lu::new(a) {
        Ok(lu) => Ok(lu.det()),
        Err(MatError::Singular { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// 1-norm condition number ‖A‖₁‖A⁻¹‖₁ (explicit inverse; sizes here are small).
pub fn condition_estimate(a: &Matrix) -> Result<f64, MatError> {
    let lu = Lu::new(a)?;
    Ok(a.norm1() * lu.inverse().norm1())
}

/// Solves A x = b, refusing systems whose condition estimate exceeds 1e12.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, MatError> {
    solve_linear_with_condition(a, b).map(|(x, _)| x)
}

/// As [`solve_linear`], also returning the condition estimate.
pub fn solve_linear_with_condition(a: &Matrix, b: &[f64]) -> Result<(Vec<f64>, f64), MatError> {
    check_square(a)?;
    if b.len() != a.rows() {
        return Err(MatError::DimensionMismatch { expected: a.rows(), got: b.len() });
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(MatError::NonFinite);
    }
    let lu = Lu::new(a)?;
    let cond = a.norm1() * lu.inverse().norm1();
    if !(cond <= SINGULAR_CONDITION) {
        return Err(MatError::Singular { estimate: cond });
    }
    let mut x = lu.solve(b);
    // one step of iterative refinement
    let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    for (xi, di) in x.iter_mut().zip(lu.solve(&r)) {
        *xi += di;
    }
    Ok((x, cond))
}

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
