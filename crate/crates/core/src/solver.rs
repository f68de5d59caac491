//! SCAD-penalized monotone-spline quantile regression for one equation.
//!
//! The objective is
//!
//! ```text
//! (1/LT) sum_l sum_t rho_{tau_l}(y_t - xi_t(tau_l)' gamma)
//!     + sum_k scad(|| b_H(.)' (gamma_k - gamma_0) ||_2)
//! ```
//!
//! over the I-spline cone (entries `2..H` of every row nonnegative).
//!
//! Outer loop: local linear approximation of SCAD, which turns the penalty
//! into a weighted group lasso. Inner loop: a primal log-barrier method. The
//! check loss is relaxed through its split-residual barrier (closed form per
//! residual), the cone through log barriers on the I-spline weights, and each
//! group norm through a second-order cone epigraph. Newton steps follow the
//! central path down to a duality-gap bound below the tolerance.
//!
//! The inner problem is solved in the coordinates
//! `(gamma_0, delta_1, ..., delta_N)` with `delta_k = gamma_k - gamma_0`,
//! where the design collapses to `(1, c_1, ..., c_N) (x) b_H(tau)` because the
//! barycentric weights sum to one. The data Hessian then accumulates one
//! `H x H` block per observation row instead of one rank-one term per
//! (row, level) pair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{GramMatrix, SplineBasis};
use crate::error::{Result, SqvarError};
use crate::panel::LaggedDesign;
use crate::simplex::CoordinateSystem;

/// Equally spaced levels `tau_l = l / (L + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    taus: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(SqvarError::InvalidArgument("quantile grid needs L >= 1".into()));
        }
        let taus = (1..=l).map(|k| k as f64 / (l + 1) as f64).collect();
        Ok(Self { taus })
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadPenalty {
    pub lambda: f64,
    pub a: f64,
}

impl ScadPenalty {
    pub fn new(lambda: f64) -> Result<Self> {
        Self::with_a(lambda, 3.7)
    }

    pub fn with_a(lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(SqvarError::InvalidArgument(format!("lambda = {lambda}")));
        }
        if !(a > 2.0 && a.is_finite()) {
            return Err(SqvarError::InvalidArgument(format!("SCAD a = {a} must exceed 2")));
        }
        Ok(Self { lambda, a })
    }

    /// `s_lambda(x)` for `x >= 0`.
    pub fn value(&self, x: f64) -> f64 {
        let (l, a) = (self.lambda, self.a);
        if x <= l {
            l * x
        } else if x <= a * l {
            -(x * x - 2.0 * a * l * x + l * l) / (2.0 * (a - 1.0))
        } else {
            (a + 1.0) * l * l / 2.0
        }
    }

    /// Right derivative `s_lambda'(x)`, the LLA weight.
    pub fn derivative(&self, x: f64) -> f64 {
        let (l, a) = (self.lambda, self.a);
        if x <= l {
            l
        } else if x <= a * l {
            (a * l - x) / (a - 1.0)
        } else {
            0.0
        }
    }
}

/// `rho_tau(u) = u (tau - 1{u <= 0})`.
#[inline]
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

pub fn scad(x: f64, pen: &ScadPenalty) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(SqvarError::InvalidArgument(format!(
            "SCAD argument must be nonnegative, got {x}"
        )));
    }
    Ok(pen.value(x))
}

/// Barycentric rows and responses for one equation.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationData {
    /// Row-major `rows x (N+1)`, `c0` first.
    coords: Vec<f64>,
    y: Vec<f64>,
    width: usize,
    out_of_bounds_rows: usize,
}

impl EquationData {
    pub fn new(coords: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if coords.len() != y.len() || y.is_empty() {
            return Err(SqvarError::Dimension(format!(
                "{} coordinate rows for {} responses",
                coords.len(),
                y.len()
            )));
        }
        let width = coords[0].len();
        if width == 0 || coords.iter().any(|r| r.len() != width) {
            return Err(SqvarError::Dimension("ragged coordinate rows".into()));
        }
        let out_of_bounds_rows = coords
            .iter()
            .filter(|r| r.iter().any(|c| *c < -1e-12))
            .count();
        Ok(Self {
            coords: coords.concat(),
            y,
            width,
            out_of_bounds_rows,
        })
    }

    /// Coordinates of every design row and the responses of equation `i`.
    pub fn from_design(design: &LaggedDesign, cs: &CoordinateSystem, i: usize) -> Result<Self> {
        if design.n_series() != cs.n_series() || design.lag_order() != cs.lag_order() {
            return Err(SqvarError::Dimension(
                "design and coordinate system disagree on n or p".into(),
            ));
        }
        if i >= design.n_series() {
            return Err(SqvarError::InvalidArgument(format!("equation {i} out of range")));
        }
        let rows = (0..design.n_rows())
            .map(|r| cs.barycentric(design.row(r)).map(|b| b.full()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, design.response_series(i))
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coords(&self, r: usize) -> &[f64] {
        &self.coords[r * self.width..(r + 1) * self.width]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn out_of_bounds_rows(&self) -> usize {
        self.out_of_bounds_rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Relative duality-gap tolerance of the inner solver; also the relative
    /// objective change that ends the LLA loop.
    pub tol: f64,
    /// Newton steps per LLA step.
    pub max_iter: usize,
    /// LLA iterations.
    pub max_outer: usize,
    /// Group norms below this are snapped to exactly zero.
    pub eps_zero: f64,
    /// During lambda selection, also fit the largest lambda from the
    /// collapsed model and let that fit compete on BIC.
    pub collapsed_candidate: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 5000,
            max_outer: 25,
            eps_zero: 1e-6,
            collapsed_candidate: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub inner_iterations: usize,
    pub outer_iterations: usize,
    /// Duality-gap bound of the last interior-point solve.
    pub gap_bound: f64,
    pub converged: bool,
    /// Design rows with a negative barycentric coordinate.
    pub boundary_warnings: usize,
    /// True objective after each accepted LLA step, starting at the warm start.
    pub objective_trace: Vec<f64>,
}

/// Spline coefficients of one equation: row 0 is `gamma_0`, rows `1..=N` the
/// lagged regressors in design order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqvarFit {
    pub gamma: Vec<Vec<f64>>,
    pub lambda_used: f64,
    pub equation_index: usize,
    pub objective_value: f64,
    pub diagnostics: FitDiagnostics,
}

impl SqvarFit {
    pub fn n_lagged(&self) -> usize {
        self.gamma.len() - 1
    }

    pub fn basis_size(&self) -> usize {
        self.gamma[0].len()
    }

    /// `gamma_k - gamma_0`.
    pub fn group_delta(&self, k: usize) -> Vec<f64> {
        self.gamma[k + 1]
            .iter()
            .zip(&self.gamma[0])
            .map(|(a, b)| a - b)
            .collect()
    }

    /// `Phi(tau)`: the SQVAR coefficient values at one level.
    pub fn phi_at(&self, b: &[f64]) -> Vec<f64> {
        self.gamma
            .iter()
            .map(|g| g.iter().zip(b).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Quantile `C' Phi(tau)` at coordinates `(c0, c_1..c_N)` and basis values `b`.
    pub fn quantile(&self, coords: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, g) in coords.iter().zip(&self.gamma) {
            if *c != 0.0 {
                acc += c * g.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        acc
    }

    /// Whether every row lies in the I-spline cone.
    pub fn in_cone(&self) -> bool {
        self.gamma.iter().all(|g| g.iter().skip(1).all(|v| *v >= 0.0))
    }
}

/// Basis values on the grid, row-major `L x H`.
fn basis_table(basis: &SplineBasis, grid: &QuantileGrid) -> Vec<f64> {
    let h = basis.size();
    let mut out = vec![0.0; grid.len() * h];
    for (l, tau) in grid.taus().iter().enumerate() {
        basis.eval_into(*tau, &mut out[l * h..(l + 1) * h]);
    }
    out
}

/// Average check loss `(1/LT) sum rho(y - xi' gamma)`.
pub fn mean_check_loss(
    gamma: &[Vec<f64>],
    data: &EquationData,
    basis: &SplineBasis,
    grid: &QuantileGrid,
) -> Result<f64> {
    check_shapes(gamma, data, basis)?;
    let h = basis.size();
    let table = basis_table(basis, grid);
    let mut total = 0.0;
    let mut m = vec![0.0; h];
    for r in 0..data.n_rows() {
        m.iter_mut().for_each(|v| *v = 0.0);
        for (c, g) in data.coords(r).iter().zip(gamma) {
            for (mv, gv) in m.iter_mut().zip(g) {
                *mv += c * gv;
            }
        }
        for (l, tau) in grid.taus().iter().enumerate() {
            let b = &table[l * h..(l + 1) * h];
            let pred: f64 = m.iter().zip(b).map(|(x, y)| x * y).sum();
            total += check_loss(data.y()[r] - pred, *tau);
        }
    }
    Ok(total / (grid.len() * data.n_rows()) as f64)
}

/// Group penalty `sum_k scad(||b_H' (gamma_k - gamma_0)||)`.
pub fn penalty(gamma: &[Vec<f64>], pen: &ScadPenalty, gram: &GramMatrix) -> f64 {
    let mut delta = vec![0.0; gamma[0].len()];
    gamma[1..]
        .iter()
        .map(|g| {
            for ((d, a), b) in delta.iter_mut().zip(g).zip(&gamma[0]) {
                *d = a - b;
            }
            pen.value(gram.quad_form(&delta).max(0.0).sqrt())
        })
        .sum()
}

/// The penalized objective at `gamma`.
pub fn objective(
    gamma: &[Vec<f64>],
    data: &EquationData,
    basis: &SplineBasis,
    grid: &QuantileGrid,
    pen: &ScadPenalty,
    gram: &GramMatrix,
) -> Result<f64> {
    Ok(mean_check_loss(gamma, data, basis, grid)? + penalty(gamma, pen, gram))
}

fn check_shapes(gamma: &[Vec<f64>], data: &EquationData, basis: &SplineBasis) -> Result<()> {
    if gamma.len() != data.width() {
        return Err(SqvarError::Dimension(format!(
            "{} coefficient rows for coordinate width {}",
            gamma.len(),
            data.width()
        )));
    }
    if gamma.iter().any(|g| g.len() != basis.size()) {
        return Err(SqvarError::Dimension(format!(
            "coefficient rows must have length H = {}",
            basis.size()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Inner machinery. Variables are x = (gamma_0, delta_1, ..., delta_N) with
// delta_k = gamma_k - gamma_0, followed by one epigraph variable t_k per
// penalized group.

/// `psi(r) = min_{u - v = r} tau u + (1 - tau) v - mu (ln u + ln v)`, the
/// log-barrier relaxation of the check loss, with its first two derivatives.
#[inline]
fn barrier_loss(r: f64, tau: f64, mu: f64) -> (f64, f64, f64) {
    let two_mu = 2.0 * mu;
    let s = r.hypot(two_mu);
    // s - r and s + r without cancellation
    let (s_minus, s_plus) = if r >= 0.0 {
        (two_mu * two_mu / (s + r), s + r)
    } else {
        (s - r, two_mu * two_mu / (s - r))
    };
    let u = 0.5 * s_plus + mu;
    let v = 0.5 * s_minus + mu;
    let value = tau * u + (1.0 - tau) * v - mu * (u.ln() + v.ln());
    let d1 = mu / v - (1.0 - tau);
    let d2 = mu * (s_minus / s) / (2.0 * v * v);
    (value, d1, d2)
}

/// `(psi', psi'')` of [`barrier_loss`] without the logarithms.
#[inline]
fn barrier_derivatives(r: f64, tau: f64, mu: f64) -> (f64, f64) {
    let two_mu = 2.0 * mu;
    let s = r.hypot(two_mu);
    let s_minus = if r >= 0.0 { two_mu * two_mu / (s + r) } else { s - r };
    let v = 0.5 * s_minus + mu;
    (mu / v - (1.0 - tau), mu * (s_minus / s) / (2.0 * v * v))
}

struct Workspace<'a> {
    data: &'a EquationData,
    taus: &'a [f64],
    // basis values on the grid, row-major L x H
    table: Vec<f64>,
    h: usize,
    k: usize,
    l: usize,
    gram: &'a GramMatrix,
    pred: Vec<f64>,
}

impl<'a> Workspace<'a> {
    fn new(
        data: &'a EquationData,
        basis: &SplineBasis,
        grid: &'a QuantileGrid,
        gram: &'a GramMatrix,
    ) -> Self {
        Self {
            data,
            taus: grid.taus(),
            table: basis_table(basis, grid),
            h: basis.size(),
            k: data.width(),
            l: grid.len(),
            gram,
            pred: vec![0.0; data.n_rows() * grid.len()],
        }
    }

    fn dim(&self) -> usize {
        self.k * self.h
    }

    fn rows(&self) -> usize {
        self.data.n_rows()
    }

    fn to_x(&self, gamma: &[Vec<f64>]) -> Vec<f64> {
        let (h, k) = (self.h, self.k);
        let mut x = vec![0.0; k * h];
        x[..h].copy_from_slice(&gamma[0]);
        for j in 1..k {
            for c in 0..h {
                x[j * h + c] = gamma[j][c] - gamma[0][c];
            }
        }
        x
    }

    fn to_gamma(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let (h, k) = (self.h, self.k);
        let g0: Vec<f64> = x[..h].to_vec();
        let mut gamma = vec![g0.clone()];
        for j in 1..k {
            let dj = &x[j * h..(j + 1) * h];
            if dj.iter().all(|v| *v == 0.0) {
                gamma.push(g0.clone());
            } else {
                gamma.push(g0.iter().zip(dj).map(|(a, b)| a + b).collect());
            }
        }
        gamma
    }

    /// Fill `self.pred` with `A x`, laid out `rows x L`.
    fn predict(&mut self, x: &[f64]) {
        let (h, k, l) = (self.h, self.k, self.l);
        let mut m = vec![0.0; h];
        for r in 0..self.rows() {
            let d = self.data.coords(r);
            m.copy_from_slice(&x[..h]);
            for j in 1..k {
                let c = d[j];
                if c != 0.0 {
                    for (mv, xv) in m.iter_mut().zip(&x[j * h..(j + 1) * h]) {
                        *mv += c * xv;
                    }
                }
            }
            for li in 0..l {
                let b = &self.table[li * h..(li + 1) * h];
                let mut acc = 0.0;
                for c in 0..h {
                    acc += m[c] * b[c];
                }
                self.pred[r * l + li] = acc;
            }
        }
    }

    fn group_norm(&self, x: &[f64], j: usize) -> f64 {
        let h = self.h;
        self.gram.quad_form(&x[j * h..(j + 1) * h]).max(0.0).sqrt()
    }

    fn true_objective(&mut self, x: &[f64], pen: &ScadPenalty) -> f64 {
        self.predict(x);
        let l = self.l;
        let y = self.data.y();
        let loss: f64 = self
            .pred
            .iter()
            .enumerate()
            .map(|(i, p)| check_loss(y[i / l] - p, self.taus[i % l]))
            .sum();
        let pen_total: f64 = (1..self.k).map(|j| pen.value(self.group_norm(x, j))).sum();
        loss / (self.rows() * l) as f64 + pen_total
    }
}

/// Log-barrier problem for one LLA step:
///
/// ```text
/// (1/M) sum psi_{M mu}(y - A x) + sum_k w_k t_k
///     - mu sum ln(cone entries) - mu sum_k ln(t_k^2 - delta_k' G delta_k)
/// ```
///
/// Every logarithmic barrier carries the same weight `mu`, which keeps the
/// scaled problem self-concordant so Newton steps stay long.
struct Barrier<'w, 'a> {
    ws: &'w mut Workspace<'a>,
    // groups (indices into 1..k) carrying a positive weight
    groups: Vec<usize>,
    weights: Vec<f64>,
    mu: f64,
}

impl Barrier<'_, '_> {
    fn n_vars(&self) -> usize {
        self.ws.dim() + self.groups.len()
    }

    fn n_cone(&self) -> usize {
        self.ws.k * (self.ws.h - 1)
    }

    // cone entry gamma_j[c] for c >= 1
    #[inline]
    fn cone_entry(&self, z: &[f64], j: usize, c: usize) -> f64 {
        if j == 0 {
            z[c]
        } else {
            z[c] + z[j * self.ws.h + c]
        }
    }

    fn soc_gap(&self, z: &[f64], g: usize) -> f64 {
        let t = z[self.ws.dim() + g];
        let n = self.ws.group_norm(z, self.groups[g]);
        t * t - n * n
    }

    fn feasible(&self, z: &[f64]) -> bool {
        for j in 0..self.ws.k {
            for c in 1..self.ws.h {
                if !(self.cone_entry(z, j, c) > 0.0) {
                    return false;
                }
            }
        }
        (0..self.groups.len()).all(|g| z[self.ws.dim() + g] > 0.0 && self.soc_gap(z, g) > 0.0)
    }

    /// Barrier objective, `None` outside the domain.
    fn value(&mut self, z: &[f64]) -> Option<f64> {
        if !self.feasible(z) {
            return None;
        }
        let dim = self.ws.dim();
        self.ws.predict(&z[..dim]);
        let l = self.ws.l;
        let y = self.ws.data.y();
        let m = self.ws.pred.len() as f64;
        let mu_res = m * self.mu;
        let mut loss = 0.0;
        for (i, p) in self.ws.pred.iter().enumerate() {
            loss += barrier_loss(y[i / l] - p, self.ws.taus[i % l], mu_res).0;
        }
        let mut f = loss / m;
        for j in 0..self.ws.k {
            for c in 1..self.ws.h {
                f -= self.mu * self.cone_entry(z, j, c).ln();
            }
        }
        for g in 0..self.groups.len() {
            f += self.weights[g] * z[dim + g] - self.mu * self.soc_gap(z, g).ln();
        }
        Some(f)
    }

    fn gradient_hessian(&mut self, z: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let (h, k, l) = (self.ws.h, self.ws.k, self.ws.l);
        let dim = self.ws.dim();
        let nv = self.n_vars();
        let m = (self.ws.rows() * l) as f64;
        let mu_res = m * self.mu;
        self.ws.predict(&z[..dim]);
        let y = self.ws.data.y();
        let mut grad = DVector::zeros(nv);
        let mut hess = DMatrix::zeros(nv, nv);

        // data term: rows t contribute (d_t d_t') (x) S_t and d_t (x) q_t
        let mut s = vec![0.0; h * h];
        let mut q = vec![0.0; h];
        for r in 0..self.ws.rows() {
            s.iter_mut().for_each(|v| *v = 0.0);
            q.iter_mut().for_each(|v| *v = 0.0);
            for li in 0..l {
                let i = r * l + li;
                let (d1, d2) = barrier_derivatives(y[r] - self.ws.pred[i], self.ws.taus[li], mu_res);
                let b = &self.ws.table[li * h..(li + 1) * h];
                for a in 0..h {
                    q[a] -= d1 * b[a];
                    let w = d2 * b[a];
                    for c in a..h {
                        s[a * h + c] += w * b[c];
                    }
                }
            }
            let d = self.ws.data.coords(r);
            // design column 0 is the intercept row of x: coefficient 1
            for j in 0..k {
                let dj = if j == 0 { 1.0 } else { d[j] };
                if dj == 0.0 {
                    continue;
                }
                for a in 0..h {
                    grad[j * h + a] += dj * q[a];
                }
                for j2 in j..k {
                    let dj2 = if j2 == 0 { 1.0 } else { d[j2] };
                    if dj2 == 0.0 {
                        continue;
                    }
                    let w = dj * dj2;
                    for a in 0..h {
                        for c in a..h {
                            let v = w * s[a * h + c];
                            hess[(j * h + a, j2 * h + c)] += v;
                            if j2 != j {
                                hess[(j * h + c, j2 * h + a)] += if a != c { v } else { 0.0 };
                            }
                        }
                    }
                }
            }
        }
        grad /= m;
        hess /= m;
        // complete the symmetric data block from its upper triangle
        for a in 0..dim {
            for b in 0..a {
                hess[(a, b)] = hess[(b, a)];
            }
        }

        // cone barrier
        for j in 0..k {
            for c in 1..h {
                let g = self.cone_entry(z, j, c);
                let gi = self.mu / g;
                let hi = self.mu / (g * g);
                let idx: &[usize] = if j == 0 { &[c][..] } else { &[c, j * h + c][..] };
                let idx = idx.to_vec();
                for &a in &idx {
                    grad[a] -= gi;
                    for &b in &idx {
                        hess[(a, b)] += hi;
                    }
                }
            }
        }

        // second-order cone barrier and linear epigraph cost
        let gram = self.ws.gram;
        for (g, &j) in self.groups.iter().enumerate() {
            let ti = dim + g;
            let t = z[ti];
            let delta = &z[j * h..(j + 1) * h];
            let gd: Vec<f64> = (0..h)
                .map(|a| (0..h).map(|c| gram.get(a, c) * delta[c]).sum())
                .collect();
            let gap = t * t - delta.iter().zip(&gd).map(|(a, b)| a * b).sum::<f64>();
            // gradient of -ln(gap): (-2t, 2 G delta) / gap
            grad[ti] += self.weights[g] - self.mu * 2.0 * t / gap;
            let mut dq = vec![0.0; h + 1];
            dq[0] = 2.0 * t;
            for a in 0..h {
                grad[j * h + a] += self.mu * 2.0 * gd[a] / gap;
                dq[a + 1] = -2.0 * gd[a];
            }
            // hessian: dq dq' / gap^2 - diag(2, -2G) / gap
            let pos = |a: usize| if a == 0 { ti } else { j * h + a - 1 };
            for a in 0..=h {
                for b in 0..=h {
                    let mut v = dq[a] * dq[b] / (gap * gap);
                    if a == 0 && b == 0 {
                        v -= 2.0 / gap;
                    } else if a > 0 && b > 0 {
                        v += 2.0 * gram.get(a - 1, b - 1) / gap;
                    }
                    hess[(pos(a), pos(b))] += self.mu * v;
                }
            }
        }
        (grad, hess)
    }
}

struct StageOutcome {
    newton_steps: usize,
    converged: bool,
    gap_bound: f64,
}

fn newton_direction(grad: &DVector<f64>, hess: DMatrix<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = hess.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&(-grad));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
        ridge = if ridge == 0.0 { 1e-14 * scale } else { ridge * 100.0 };
    }
    None
}

/// Barrier path following from a strictly feasible `z` down to a duality-gap
/// bound below `tol` relative to the objective.
fn interior_point(bar: &mut Barrier<'_, '_>, z: &mut [f64], opts: &SolverOptions) -> StageOutcome {
    let nu = (2 * bar.ws.pred.len() + bar.n_cone() + 2 * bar.groups.len()) as f64;
    let mut out = StageOutcome {
        newton_steps: 0,
        converged: false,
        gap_bound: f64::INFINITY,
    };
    let n = z.len();
    let mut trial = vec![0.0; n];
    loop {
        let mut centered = false;
        for _ in 0..60 {
            if out.newton_steps >= opts.max_iter {
                return out;
            }
            out.newton_steps += 1;
            let f0 = match bar.value(z) {
                Some(f) => f,
                None => return out,
            };
            let (grad, hess) = bar.gradient_hessian(z);
            let Some(d) = newton_direction(&grad, hess) else {
                return out;
            };
            let decrement = -grad.dot(&d);
            // approximate centering: scaled Newton decrement below 0.1
            if decrement <= 0.1 * bar.mu {
                centered = true;
                break;
            }
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                for i in 0..n {
                    trial[i] = z[i] + alpha * d[i];
                }
                if let Some(f) = bar.value(&trial) {
                    if f <= f0 - 0.25 * alpha * decrement {
                        z.copy_from_slice(&trial);
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                // numerically centered: no further decrease is representable
                centered = true;
                break;
            }
        }
        out.gap_bound = nu * bar.mu;
        log::trace!("barrier stage mu={:.3e} centered={centered} steps={}", bar.mu, out.newton_steps);
        let dim = bar.ws.dim();
        let scale = {
            let f = bar.ws.true_objective(&z[..dim], &ScadPenalty { lambda: 0.0, a: 3.7 });
            f.abs().max(1e-12)
        };
        if centered && out.gap_bound <= opts.tol * scale {
            out.converged = true;
            return out;
        }
        bar.mu *= if centered { 0.1 } else { 0.5 };
        if bar.mu < 1e-300 {
            return out;
        }
    }
}

/// Warm start: the marginal empirical quantile curve of `y` projected onto
/// the cone, every lagged row equal to it.
pub fn collapsed_start(data: &EquationData, basis: &SplineBasis, grid: &QuantileGrid) -> Vec<Vec<f64>> {
    let h = basis.size();
    let table = basis_table(basis, grid);
    let mut sorted = data.y().to_vec();
    sorted.sort_by(f64::total_cmp);
    let targets: Vec<f64> = grid
        .taus()
        .iter()
        .map(|t| crate::screen::empirical_quantile_sorted(&sorted, *t))
        .collect();
    // cone-constrained least squares by projected gradient
    let l = grid.len();
    let btb = DMatrix::from_fn(h, h, |a, b| {
        (0..l).map(|t| table[t * h + a] * table[t * h + b]).sum::<f64>()
    });
    let lmax = btb.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
    let step = 1.0 / lmax.max(1e-12);
    let mut g = vec![0.0; h];
    g[0] = targets[0];
    for _ in 0..5000 {
        let mut grad = vec![0.0; h];
        for t in 0..l {
            let b = &table[t * h..(t + 1) * h];
            let r: f64 = b.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>() - targets[t];
            for c in 0..h {
                grad[c] += r * b[c];
            }
        }
        let mut change = 0.0;
        for c in 0..h {
            let mut v = g[c] - step * grad[c];
            if c > 0 {
                v = v.max(0.0);
            }
            change += (v - g[c]).abs();
            g[c] = v;
        }
        if change < 1e-14 {
            break;
        }
    }
    vec![g; data.width()]
}

/// Minimize the penalized objective for one equation.
///
/// `warm` defaults to [`collapsed_start`]. The returned fit never has a
/// larger objective than the warm start.
pub fn fit_equation(
    data: &EquationData,
    basis: &SplineBasis,
    grid: &QuantileGrid,
    pen: &ScadPenalty,
    equation_index: usize,
    opts: &SolverOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<SqvarFit> {
    let gram = basis.gram();
    fit_equation_with_gram(data, basis, grid, pen, &gram, equation_index, opts, warm)
}

/// [`fit_equation`] with a precomputed Gram matrix.
#[allow(clippy::too_many_arguments)]
pub fn fit_equation_with_gram(
    data: &EquationData,
    basis: &SplineBasis,
    grid: &QuantileGrid,
    pen: &ScadPenalty,
    gram: &GramMatrix,
    equation_index: usize,
    opts: &SolverOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<SqvarFit> {
    let h = basis.size();
    let k = data.width();
    let init = match warm {
        Some(w) => {
            check_shapes(w, data, basis)?;
            w.to_vec()
        }
        None => collapsed_start(data, basis, grid),
    };
    if data.n_rows() < h * k {
        log::warn!(
            "equation {}: {} rows for {} spline coefficients",
            equation_index,
            data.n_rows(),
            h * k
        );
    }
    if data.out_of_bounds_rows() > 0 {
        log::warn!(
            "equation {}: {} design rows fall outside the bounds; monotonicity is not guaranteed there",
            equation_index,
            data.out_of_bounds_rows()
        );
    }

    let mut ws = Workspace::new(data, basis, grid, gram);
    let init_objective = objective(&init, data, basis, grid, pen, gram)?;
    let y_scale = {
        let y = data.y();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        (y.iter().map(|v| (v - mean).abs()).sum::<f64>() / y.len() as f64).max(1e-12)
    };
    let mut x = ws.to_x(&init);
    let mut best_obj = init_objective;
    let mut best_x = x.clone();
    let mut diag = FitDiagnostics {
        boundary_warnings: data.out_of_bounds_rows(),
        objective_trace: vec![best_obj],
        converged: true,
        ..Default::default()
    };

    let max_outer = if pen.lambda == 0.0 { 1 } else { opts.max_outer.max(1) };
    for outer in 0..max_outer {
        let mut groups = Vec::new();
        let mut weights = Vec::new();
        if pen.lambda > 0.0 {
            for j in 1..k {
                let w = pen.derivative(ws.group_norm(&x, j));
                if w > 0.0 {
                    groups.push(j);
                    weights.push(w);
                }
            }
        }
        // strictly feasible start: lift the slopes of gamma_0 so every
        // cone entry is positive, then open the epigraph variables
        let margin = 1e-3 * y_scale;
        for c in 1..h {
            let low = (0..k)
                .map(|j| if j == 0 { x[c] } else { x[c] + x[j * h + c] })
                .fold(f64::INFINITY, f64::min);
            if low < margin {
                x[c] += margin - low;
            }
        }
        let mut z = x.clone();
        for &j in &groups {
            z.push(ws.group_norm(&x, j) + y_scale);
        }
        let mut bar = Barrier {
            ws: &mut ws,
            groups,
            weights,
            mu: 0.1 * y_scale / (data.n_rows() * grid.len()) as f64,
        };
        let out = interior_point(&mut bar, &mut z, opts);
        diag.inner_iterations += out.newton_steps;
        diag.gap_bound = out.gap_bound;
        let dim = k * h;
        x.copy_from_slice(&z[..dim]);

        // snap negligible groups to exactly zero
        for j in 1..k {
            if ws.group_norm(&x, j) <= opts.eps_zero {
                x[j * h..(j + 1) * h].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        diag.outer_iterations = outer + 1;
        let obj = ws.true_objective(&x, pen);
        if obj > best_obj + 1e-10 {
            // the majorize-minimize step failed to descend; keep the best point
            x.clone_from(&best_x);
            break;
        }
        diag.converged &= out.converged;
        let improvement = best_obj - obj;
        best_obj = obj.min(best_obj);
        best_x.clone_from(&x);
        diag.objective_trace.push(obj);
        if improvement <= opts.tol * obj.abs().max(1e-12) {
            break;
        }
    }

    let mut gamma = ws.to_gamma(&best_x);
    // interior iterates can sit a rounding error outside the cone after the
    // snap; the cone is closed so clip
    for row in gamma.iter_mut() {
        for v in row.iter_mut().skip(1) {
            *v = v.max(0.0);
        }
    }
    let mut objective_value = objective(&gamma, data, basis, grid, pen, gram)?;
    if objective_value > init_objective && init.iter().all(|r| r.iter().skip(1).all(|v| *v >= 0.0)) {
        gamma = init;
        objective_value = init_objective;
    }
    Ok(SqvarFit {
        gamma,
        lambda_used: pen.lambda,
        equation_index,
        objective_value,
        diagnostics: diag,
    })
}
