//! Data generating processes: random-coefficient QVAR simulation, the two
//! simulation-study designs, the stationarity check and crossing counts.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SqvarError};
use crate::innovation::{norm_cdf, norm_inv, CopulaModel};
use crate::panel::{SeriesBounds, TimeSeriesPanel};
use crate::simplex::{CoordinateSystem, LagPair};

pub type CoefFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub const DEFAULT_BURN_IN: usize = 500;
const DIVERGENCE: f64 = 1e8;

/// QVAR coefficient functions. `theta[i][k]` is the coefficient of lagged
/// regressor `k` (design order) in equation `i`; `None` marks an inactive
/// regressor, which is identically zero.
#[derive(Clone)]
pub struct CoefficientFunctions {
    n: usize,
    p: usize,
    theta0: Vec<CoefFn>,
    theta: Vec<Vec<Option<CoefFn>>>,
}

impl std::fmt::Debug for CoefficientFunctions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientFunctions")
            .field("n", &self.n)
            .field("p", &self.p)
            .field("active", &self.active_mask())
            .finish()
    }
}

impl CoefficientFunctions {
    pub fn new(p: usize, theta0: Vec<CoefFn>, theta: Vec<Vec<Option<CoefFn>>>) -> Result<Self> {
        let n = theta0.len();
        if n == 0 || p == 0 {
            return Err(SqvarError::InvalidArgument("need at least one series and one lag".into()));
        }
        if theta.len() != n || theta.iter().any(|r| r.len() != n * p) {
            return Err(SqvarError::Dimension(format!(
                "coefficient table must be {n} x {}",
                n * p
            )));
        }
        Ok(Self { n, p, theta0, theta })
    }

    /// Intercept-only model.
    pub fn intercept_only(p: usize, theta0: Vec<CoefFn>) -> Result<Self> {
        let n = theta0.len();
        Self::new(p, theta0, vec![vec![None; n * p]; n])
    }

    pub fn n_series(&self) -> usize {
        self.n
    }

    pub fn lag_order(&self) -> usize {
        self.p
    }

    pub fn theta0(&self, i: usize, u: f64) -> f64 {
        (self.theta0[i])(u)
    }

    pub fn theta(&self, i: usize, k: usize, u: f64) -> f64 {
        self.theta[i][k].as_ref().map_or(0.0, |f| f(u))
    }

    pub fn active_mask(&self) -> Vec<Vec<bool>> {
        self.theta
            .iter()
            .map(|r| r.iter().map(Option::is_some).collect())
            .collect()
    }

    /// True active set of equation `i`.
    pub fn active_set(&self, i: usize) -> Vec<LagPair> {
        self.theta[i]
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_some())
            .map(|(k, _)| LagPair {
                series: k % self.n + 1,
                lag: k / self.n + 1,
            })
            .collect()
    }

    /// `y_t` from ranks `u` and lagged values stacked `(Y_{t-1}, ..., Y_{t-p})`.
    pub fn step(&self, lags: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let mut y = self.theta0(i, u[i]);
                for (k, x) in lags.iter().enumerate() {
                    if let Some(f) = &self.theta[i][k] {
                        y += f(u[i]) * x;
                    }
                }
                y
            })
            .collect()
    }

    /// `A_j(u)`: row `i` holds `theta^{(j)}_{i, .}(u_i)`.
    pub fn lag_matrix(&self, j: usize, u: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, l| self.theta(i, (j - 1) * n + l, u[i]))
    }

    /// Companion matrix of the stacked first-order form.
    pub fn companion(&self, u: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let np = n * self.p;
        let mut a = DMatrix::zeros(np, np);
        for i in 0..n {
            for k in 0..np {
                a[(i, k)] = self.theta(i, k, u[i]);
            }
        }
        for r in n..np {
            a[(r, r - n)] = 1.0;
        }
        a
    }
}

/// Shift the lag stack and put `y` in front.
fn push_lags(lags: &mut [f64], y: &[f64]) {
    let n = y.len();
    lags.copy_within(0..lags.len() - n, n);
    lags[..n].copy_from_slice(y);
}

/// Simulate `t` observations after `burn_in` discarded steps, starting from
/// every series at `theta_0(1/2)`.
pub fn simulate_qvar(
    coefs: &CoefficientFunctions,
    copula: &CopulaModel,
    t: usize,
    burn_in: usize,
    seed: u64,
) -> Result<TimeSeriesPanel> {
    let n = coefs.n_series();
    if copula.n != n {
        return Err(SqvarError::Dimension(format!(
            "copula of dimension {} for {n} series",
            copula.n
        )));
    }
    if t == 0 {
        return Err(SqvarError::InvalidArgument("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = (0..n).map(|i| coefs.theta0(i, 0.5)).collect();
    let mut lags: Vec<f64> = start.iter().cycle().take(n * coefs.lag_order()).copied().collect();
    let mut rows = Vec::with_capacity(t);
    for step in 0..burn_in + t {
        let u = copula.sample_ranks(&mut rng);
        let y = coefs.step(&lags, &u);
        if let Some(v) = y.iter().find(|v| !(v.abs() < DIVERGENCE)) {
            return Err(SqvarError::Diverged { step, value: *v });
        }
        push_lags(&mut lags, &y);
        if step >= burn_in {
            rows.push(y);
        }
    }
    TimeSeriesPanel::from_rows(rows, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub rho: f64,
    pub condition_met: bool,
    pub grid_size: usize,
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// `rho = sum_j sup_u ||A_j(u)||_2` over a uniform grid on [0, 1].
///
/// Row `i` of `A_j(u)` depends on `u_i` only, so the supremum is
/// `max_x sum_i max_{u_i} (a_i(u_i)' x)^2`. Small problems enumerate the
/// grid; larger ones alternate between the best rank per row and the top
/// singular vector from several starts.
pub fn check_stationarity(coefs: &CoefficientFunctions, grid_size: usize) -> Result<StationarityReport> {
    if grid_size < 11 {
        return Err(SqvarError::InvalidArgument(format!(
            "stationarity grid of {grid_size} points, need at least 11"
        )));
    }
    let n = coefs.n_series();
    let p = coefs.lag_order();
    let grid: Vec<f64> = (0..grid_size).map(|g| g as f64 / (grid_size - 1) as f64).collect();
    let mut rho = 0.0;
    for j in 1..=p {
        // rows[i][g] = row i of A_j at u_i = grid[g]
        let rows: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| {
                grid.iter()
                    .map(|u| (0..n).map(|l| coefs.theta(i, (j - 1) * n + l, *u)).collect())
                    .collect()
            })
            .collect();
        rho += sup_norm(&rows, grid_size);
    }
    Ok(StationarityReport {
        rho,
        condition_met: rho < 1.0 / p as f64,
        grid_size,
    })
}

fn assemble(rows: &[Vec<Vec<f64>>], pick: &[usize]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, l| rows[i][pick[i]][l])
}

fn sup_norm(rows: &[Vec<Vec<f64>>], g: usize) -> f64 {
    let n = rows.len();
    if (g as f64).powi(n as i32) <= 1e5 {
        let mut pick = vec![0usize; n];
        let mut best: f64 = 0.0;
        loop {
            best = best.max(spectral_norm(&assemble(rows, &pick)));
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                pick[i] += 1;
                if pick[i] < g {
                    break;
                }
                pick[i] = 0;
                i += 1;
            }
        }
    }
    let mut starts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    starts.push(vec![1.0 / (n as f64).sqrt(); n]);
    let mut best: f64 = 0.0;
    for x0 in starts {
        let mut x = x0;
        let mut last = -1.0;
        for _ in 0..100 {
            let pick: Vec<usize> = (0..n)
                .map(|i| {
                    (0..g)
                        .max_by(|&a, &b| {
                            let fa: f64 = rows[i][a].iter().zip(&x).map(|(r, v)| r * v).sum();
                            let fb: f64 = rows[i][b].iter().zip(&x).map(|(r, v)| r * v).sum();
                            fa.abs().total_cmp(&fb.abs())
                        })
                        .expect("nonempty grid")
                })
                .collect();
            let a = assemble(rows, &pick);
            let svd = a.svd(false, true);
            let (k, s) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, 0.0), |acc, (k, s)| if *s > acc.1 { (k, *s) } else { acc });
            best = best.max(s);
            if s <= last * (1.0 + 1e-12) {
                break;
            }
            last = s;
            let vt = svd.v_t.expect("requested");
            x = vt.row(k).iter().copied().collect();
        }
    }
    best
}

/// `||Gamma_{t,k}||_2` for `k = 0..=ranks.len()`, where `ranks[0]` is `U_t`,
/// `ranks[1]` is `U_{t-1}` and so on.
pub fn companion_product_norms(coefs: &CoefficientFunctions, ranks: &[Vec<f64>]) -> Vec<f64> {
    let np = coefs.n_series() * coefs.lag_order();
    let mut g = DMatrix::<f64>::identity(np, np);
    let mut out = Vec::with_capacity(ranks.len() + 1);
    out.push(1.0);
    for u in ranks {
        g *= coefs.companion(u);
        out.push(spectral_norm(&g));
    }
    out
}

/// Beta(2, 2) quantile: the root in [0, 1] of `3x^2 - 2x^3 = tau`.
pub fn beta22_quantile(tau: f64) -> f64 {
    0.5 + ((1.0 - 2.0 * tau).clamp(-1.0, 1.0).acos() / 3.0 - 2.0 * PI / 3.0).cos()
}

/// The first simulation design: trivariate QVAR(2), first lag active with
/// coefficients scaled by `1/b`, second lag inactive, Gaussian copula with
/// correlation 0.3.
pub fn study1_dgp(b: u32) -> Result<(CoefficientFunctions, CopulaModel)> {
    if !(1..=6).contains(&b) {
        return Err(SqvarError::InvalidArgument(format!("b must be in 1..=6, got {b}")));
    }
    let bf = b as f64;
    let theta0: CoefFn = Arc::new(|u| 1.0 + beta22_quantile(u));
    let first: [CoefFn; 3] = [
        Arc::new(move |u: f64| (0.1 * u + 0.2 * u.sqrt()) / bf),
        Arc::new(move |u: f64| (0.1 * u + 0.2 * beta22_quantile(u)) / bf),
        Arc::new(move |u: f64| (0.1 * u + 0.2 * u * u) / bf),
    ];
    let row: Vec<Option<CoefFn>> = first
        .iter()
        .cloned()
        .map(Some)
        .chain(std::iter::repeat_n(None, 3))
        .collect();
    let coefs = CoefficientFunctions::new(2, vec![theta0; 3], vec![row; 3])?;
    Ok((coefs, CopulaModel::new(0.3, 3)?))
}

/// SQVAR coefficient functions of the second design, `(phi_0, phi^{(1)}_{1..3})`.
pub fn study2_phi(u: f64) -> [f64; 4] {
    [
        0.2 * norm_inv(u.clamp(1e-12, 1.0 - 1e-12)),
        3.0 * u + 6.0 * u.sqrt(),
        3.0 * u + 6.0 * norm_cdf(2.0 * u - 1.0),
        3.0 * u + 6.0 * u * u,
    ]
}

/// Configuration of the second design's bound calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study2Dgp {
    pub kappa: f64,
    pub lag_order: usize,
    /// Cumulative bound movement (relative to the range) tolerated over the window.
    pub stable_tol: f64,
    pub stable_window: usize,
    pub max_steps: usize,
}

impl Default for Study2Dgp {
    fn default() -> Self {
        Self {
            kappa: 0.3,
            lag_order: 2,
            stable_tol: 1e-6,
            stable_window: 500,
            max_steps: 100_000,
        }
    }
}

/// A panel from the second design and the QVAR model it was drawn from.
#[derive(Debug, Clone)]
pub struct Study2Sample {
    pub panel: TimeSeriesPanel,
    pub coefs: CoefficientFunctions,
    /// Bounds at which the SQVAR functions were frozen.
    pub bounds: SeriesBounds,
    pub stabilization_steps: usize,
}

impl Study2Dgp {
    /// QVAR coefficients implied by the SQVAR functions at fixed bounds.
    pub fn qvar_coefficients(&self, bounds: &SeriesBounds) -> Result<CoefficientFunctions> {
        let n = 3;
        let p = self.lag_order;
        let cs = Arc::new(CoordinateSystem::new(bounds.clone(), p)?);
        let nn = (n * p) as f64;
        let mut theta_rows = Vec::with_capacity(n);
        let mut theta0 = Vec::with_capacity(n);
        for _ in 0..n {
            let mut row: Vec<Option<CoefFn>> = vec![None; n * p];
            for (l, slot) in row.iter_mut().enumerate().take(n) {
                let d = nn * cs.delta()[l];
                *slot = Some(Arc::new(move |u: f64| {
                    let phi = study2_phi(u);
                    (phi[l + 1] - phi[0]) / d
                }));
            }
            theta_rows.push(row);
            let c = cs.clone();
            theta0.push(Arc::new(move |u: f64| {
                let phi = study2_phi(u);
                phi[0]
                    - (0..3)
                        .map(|l| c.bounds().lb[l] * (phi[l + 1] - phi[0]) / (nn * c.delta()[l]))
                        .sum::<f64>()
            }) as CoefFn);
        }
        CoefficientFunctions::new(p, theta0, theta_rows)
    }

    /// Run the bound-calibration recursion until the running bounds settle,
    /// freeze them, then draw `t` observations from the frozen model.
    pub fn generate(&self, t: usize, seed: u64) -> Result<Study2Sample> {
        if t == 0 {
            return Err(SqvarError::InvalidArgument("sample size must be positive".into()));
        }
        let n = 3;
        let p = self.lag_order;
        let copula = CopulaModel::new(self.kappa, n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // p initial observations from the intercept function
        let mut lags = vec![0.0; n * p];
        for _ in 0..p {
            let u = copula.sample_ranks(&mut rng);
            let y: Vec<f64> = u.iter().map(|v| study2_phi(*v)[0]).collect();
            push_lags(&mut lags, &y);
        }
        let mut lb: Vec<f64> = (0..n).map(|i| (0..p).map(|j| lags[j * n + i]).fold(f64::INFINITY, f64::min)).collect();
        let mut ub: Vec<f64> = (0..n)
            .map(|i| (0..p).map(|j| lags[j * n + i]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut movement: std::collections::VecDeque<f64> = std::collections::VecDeque::new();
        let mut window_sum = 0.0;
        let mut steps = 0;
        loop {
            if steps >= self.max_steps {
                return Err(SqvarError::NotStabilized { steps });
            }
            let bounds = SeriesBounds::new(lb.clone(), ub.clone())?;
            let cs = CoordinateSystem::new(bounds, p)?;
            let u = copula.sample_ranks(&mut rng);
            let row = cs.barycentric_lags(&lags);
            let y: Vec<f64> = u
                .iter()
                .map(|v| {
                    let phi = study2_phi(*v);
                    // lag-2 coordinates load on phi_0, so they fold into c_0
                    let mut q = phi[0];
                    for l in 0..n {
                        q += row.c[l] * (phi[l + 1] - phi[0]);
                    }
                    q
                })
                .collect();
            push_lags(&mut lags, &y);
            let mut moved = 0.0;
            for i in 0..n {
                let range = ub[i] - lb[i];
                if y[i] < lb[i] {
                    moved += (lb[i] - y[i]) / range;
                    lb[i] = y[i];
                }
                if y[i] > ub[i] {
                    moved += (y[i] - ub[i]) / range;
                    ub[i] = y[i];
                }
            }
            steps += 1;
            movement.push_back(moved);
            window_sum += moved;
            if movement.len() > self.stable_window {
                window_sum -= movement.pop_front().expect("nonempty");
            }
            if movement.len() == self.stable_window && window_sum.max(0.0) < self.stable_tol {
                break;
            }
        }
        log::debug!("study-2 bounds settled after {steps} steps");
        let bounds = SeriesBounds::new(lb, ub)?;
        let coefs = self.qvar_coefficients(&bounds)?;
        let mut rows = Vec::with_capacity(t);
        for step in 0..t {
            let u = copula.sample_ranks(&mut rng);
            let y = coefs.step(&lags, &u);
            if let Some(v) = y.iter().find(|v| !(v.abs() < DIVERGENCE)) {
                return Err(SqvarError::Diverged { step, value: *v });
            }
            push_lags(&mut lags, &y);
            rows.push(y);
        }
        Ok(Study2Sample {
            panel: TimeSeriesPanel::from_rows(rows, None)?,
            coefs,
            bounds,
            stabilization_steps: steps,
        })
    }
}

/// Number of adjacent decreases in a curve evaluated on an increasing grid.
pub fn crossing_count(curve: &[f64]) -> usize {
    curve.windows(2).filter(|w| w[0] > w[1]).count()
}

/// The evaluation grid `k/100`, `k = 1..=99`.
pub fn crossing_grid() -> Vec<f64> {
    (1..100).map(|k| k as f64 / 100.0).collect()
}

/// Average crossing count over a set of curves (one per time point).
pub fn crossing_frequency<I>(curves: I) -> f64
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let (mut total, mut count) = (0usize, 0usize);
    for c in curves {
        total += crossing_count(c.as_ref());
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Beta, ContinuousCDF};

    #[test]
    fn beta_quantile_matches_statrs() {
        let beta = Beta::new(2.0, 2.0).unwrap();
        for k in 1..100 {
            let tau = k as f64 / 100.0;
            assert!((beta22_quantile(tau) - beta.inverse_cdf(tau)).abs() < 1e-9, "tau {tau}");
        }
        assert!(beta22_quantile(0.0).abs() < 1e-15);
        assert!((beta22_quantile(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn study1_first_lag_value() {
        let (c, cop) = study1_dgp(1).unwrap();
        assert!((c.theta(0, 0, 0.25) - 0.125).abs() < 1e-15);
        assert_eq!(cop.kappa, 0.3);
        for i in 0..3 {
            for k in 3..6 {
                assert_eq!(c.theta(i, k, 0.7), 0.0);
            }
        }
        assert!(study1_dgp(7).is_err());
    }

    #[test]
    fn companion_layout() {
        let (c, _) = study1_dgp(2).unwrap();
        let a = c.companion(&[0.5, 0.5, 0.5]);
        assert_eq!(a.nrows(), 6);
        assert_eq!(a[(3, 0)], 1.0);
        assert_eq!(a[(5, 2)], 1.0);
        assert_eq!(a[(3, 3)], 0.0);
        assert!((a[(0, 0)] - c.theta(0, 0, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn push_lags_shifts_blocks() {
        let mut lags = vec![1.0, 2.0, 3.0, 4.0];
        push_lags(&mut lags, &[9.0, 8.0]);
        assert_eq!(lags, vec![9.0, 8.0, 1.0, 2.0]);
    }

    #[test]
    fn crossing_detector() {
        assert_eq!(crossing_count(&[1.0, 2.0, 3.0]), 0);
        assert_eq!(crossing_count(&[1.0, 3.0, 2.0, 4.0]), 1);
        assert_eq!(crossing_count(&[1.0, 1.0]), 0);
        assert_eq!(crossing_frequency(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 0.5);
    }
}
