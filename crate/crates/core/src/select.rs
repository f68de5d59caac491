//! BIC selection of the penalty level and whole-system estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{GramMatrix, SplineBasis};
use crate::error::{Result, SqvarError};
use crate::model::SqvarModel;
use crate::panel::{build_lagged_design, compute_bounds, TimeSeriesPanel};
use crate::simplex::{CoordinateSystem, LagPair};
use crate::solver::{
    fit_equation_with_gram, mean_check_loss, EquationData, QuantileGrid, ScadPenalty, SolverOptions,
    SqvarFit,
};

/// Multipliers `c` of the default grid `c ln T / sqrt T`.
pub const DEFAULT_C_LAMBDA: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];

/// `ln(mean check loss) + s1 H ln T / (2T)` with `T` the number of rows
/// entering the loss. A perfect fit gives negative infinity.
pub fn bic(fit: &SqvarFit, data: &EquationData, basis: &SplineBasis, grid: &QuantileGrid, gram: &GramMatrix, eps_zero: f64) -> Result<f64> {
    let loss = mean_check_loss(&fit.gamma, data, basis, grid)?;
    let s1 = active_indices(fit, gram, eps_zero).len();
    Ok(bic_value(loss, s1, basis.size(), data.n_rows()))
}

/// The criterion from its ingredients.
pub fn bic_value(mean_loss: f64, s1: usize, h: usize, t: usize) -> f64 {
    if mean_loss <= 0.0 {
        log::warn!("zero average check loss; BIC is -inf");
        return f64::NEG_INFINITY;
    }
    let tf = t as f64;
    mean_loss.ln() + (s1 * h) as f64 * tf.ln() / (2.0 * tf)
}

/// `lambda_k = c_k ln T / sqrt T`.
pub fn default_lambda_grid(t: usize, c_values: &[f64]) -> Result<Vec<f64>> {
    if c_values.is_empty() {
        return Err(SqvarError::InvalidArgument("empty lambda grid".into()));
    }
    if t < 3 {
        return Err(SqvarError::InvalidArgument(format!("sample size {t} too small for the lambda grid")));
    }
    if c_values.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(SqvarError::InvalidArgument("lambda multipliers must be finite and nonnegative".into()));
    }
    let tf = t as f64;
    let mut grid: Vec<f64> = c_values.iter().map(|c| c * tf.ln() / tf.sqrt()).collect();
    grid.sort_by(f64::total_cmp);
    Ok(grid)
}

/// Lagged regressors (0-based design index) whose group norm exceeds `eps_zero`.
pub fn active_indices(fit: &SqvarFit, gram: &GramMatrix, eps_zero: f64) -> Vec<usize> {
    (0..fit.n_lagged())
        .filter(|&k| gram.quad_form(&fit.group_delta(k)).max(0.0).sqrt() > eps_zero)
        .collect()
}

/// Active `(series, lag)` pairs of a fit in a system of `n_series` series.
pub fn active_set(fit: &SqvarFit, gram: &GramMatrix, eps_zero: f64, n_series: usize) -> Vec<LagPair> {
    active_indices(fit, gram, eps_zero)
        .into_iter()
        .map(|k| LagPair {
            series: k % n_series + 1,
            lag: k / n_series + 1,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub lambda_grid: Vec<f64>,
    pub bic_values: Vec<f64>,
    pub converged: Vec<bool>,
    /// BIC of the fit at the largest `lambda` started from the collapsed model.
    pub collapsed_start_bic: Option<f64>,
    pub best_index: usize,
    /// The winner is the collapsed-start fit at the largest `lambda`.
    pub best_from_collapsed_start: bool,
    pub best_lambda: f64,
    pub best_fit: SqvarFit,
    pub active_set: Vec<LagPair>,
    pub s1_hat: usize,
}

/// Fit every `lambda` on the grid and keep the BIC minimizer.
///
/// The grid is walked in ascending order, each fit warm-started from the
/// previous one; the first fit starts from the unpenalized solution. With
/// `opts.collapsed_candidate` the largest `lambda` is also fitted from the
/// collapsed model and that fit competes on BIC too: from the unpenalized
/// start, noise groups can sit in the flat part of SCAD and never get
/// shrunk. Ties go to the larger `lambda`, then to the collapsed start. Fits
/// whose inner solver did not converge are skipped unless none converged.
#[allow(clippy::too_many_arguments)]
pub fn select_lambda(
    data: &EquationData,
    n_series: usize,
    basis: &SplineBasis,
    grid: &QuantileGrid,
    equation_index: usize,
    lambda_grid: &[f64],
    opts: &SolverOptions,
) -> Result<SelectionResult> {
    if lambda_grid.is_empty() {
        return Err(SqvarError::InvalidArgument("empty lambda grid".into()));
    }
    if lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(SqvarError::InvalidArgument("lambda values must be finite and nonnegative".into()));
    }
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(f64::total_cmp);
    let gram = basis.gram();

    let mut warm: Option<Vec<Vec<f64>>> = None;
    if lambdas[0] > 0.0 {
        let pilot = fit_equation_with_gram(
            data,
            basis,
            grid,
            &ScadPenalty::new(0.0)?,
            &gram,
            equation_index,
            opts,
            None,
        )?;
        warm = Some(pilot.gamma);
    }

    let mut fits = Vec::with_capacity(lambdas.len());
    let mut bics = Vec::with_capacity(lambdas.len());
    for &lam in &lambdas {
        let pen = ScadPenalty::new(lam)?;
        let fit = fit_equation_with_gram(data, basis, grid, &pen, &gram, equation_index, opts, warm.as_deref())?;
        if !fit.diagnostics.converged {
            log::warn!("equation {equation_index}: solver did not converge at lambda = {lam}");
        }
        bics.push(bic(&fit, data, basis, grid, &gram, opts.eps_zero)?);
        warm = Some(fit.gamma.clone());
        fits.push(fit);
    }
    let converged: Vec<bool> = fits.iter().map(|f| f.diagnostics.converged).collect();
    let any_converged = converged.iter().any(|c| *c);
    let mut best = None;
    for (k, b) in bics.iter().enumerate() {
        if any_converged && !converged[k] {
            continue;
        }
        match best {
            Some(j) if bics[j] < *b => {}
            _ => best = Some(k),
        }
    }
    let mut best_index = best.expect("nonempty grid");
    let mut best_fit = fits.swap_remove(best_index);
    let last = lambdas.len() - 1;
    let mut collapsed_start_bic = None;
    let mut best_from_collapsed_start = false;
    if opts.collapsed_candidate && lambdas[last] > 0.0 {
        let pen = ScadPenalty::new(lambdas[last])?;
        let fit = fit_equation_with_gram(data, basis, grid, &pen, &gram, equation_index, opts, None)?;
        let b = bic(&fit, data, basis, grid, &gram, opts.eps_zero)?;
        collapsed_start_bic = Some(b);
        let usable = fit.diagnostics.converged || !converged[best_index];
        if usable && b <= bics[best_index] {
            best_index = last;
            best_fit = fit;
            best_from_collapsed_start = true;
        }
    }
    let active = active_set(&best_fit, &gram, opts.eps_zero, n_series);
    Ok(SelectionResult {
        lambda_grid: lambdas.clone(),
        bic_values: bics,
        converged,
        collapsed_start_bic,
        best_index,
        best_from_collapsed_start,
        best_lambda: lambdas[best_index],
        s1_hat: active.len(),
        active_set: active,
        best_fit,
    })
}

/// Where the penalty levels come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSpec {
    /// Multipliers `c` of `c ln T / sqrt T`.
    Multipliers(Vec<f64>),
    /// Explicit penalty levels.
    Grid(Vec<f64>),
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Multipliers(DEFAULT_C_LAMBDA.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationConfig {
    pub lag_order: usize,
    /// Inner knots of the cubic I-spline basis (`H = inner_knots + 4`).
    pub inner_knots: usize,
    pub levels: usize,
    pub lambda: LambdaSpec,
    /// Widening of the empirical bounds, as a fraction of the range.
    pub bound_margin: f64,
    pub solver: SolverOptions,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            lag_order: 2,
            inner_knots: 1,
            levels: 30,
            lambda: LambdaSpec::default(),
            bound_margin: 0.0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFit {
    pub model: SqvarModel,
    pub selections: Vec<SelectionResult>,
}

/// Set up the coordinates, basis and per-equation data of a panel.
pub fn prepare(
    panel: &TimeSeriesPanel,
    cfg: &EstimationConfig,
) -> Result<(CoordinateSystem, SplineBasis, QuantileGrid, Vec<EquationData>)> {
    let bounds = compute_bounds(panel, cfg.bound_margin)?;
    let cs = CoordinateSystem::new(bounds, cfg.lag_order)?;
    let design = build_lagged_design(panel, cfg.lag_order)?;
    let basis = SplineBasis::cubic(cfg.inner_knots);
    let grid = QuantileGrid::new(cfg.levels)?;
    let data = (0..panel.n_series())
        .map(|i| EquationData::from_design(&design, &cs, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((cs, basis, grid, data))
}

/// Resolve the penalty grid for `t_eff` usable rows.
pub fn resolve_lambda_grid(spec: &LambdaSpec, t_eff: usize) -> Result<Vec<f64>> {
    match spec {
        LambdaSpec::Multipliers(c) => default_lambda_grid(t_eff, c),
        LambdaSpec::Grid(g) => {
            if g.is_empty() {
                return Err(SqvarError::InvalidArgument("empty lambda grid".into()));
            }
            Ok(g.clone())
        }
    }
}

/// Select and fit every equation (concurrently).
pub fn estimate_system(panel: &TimeSeriesPanel, cfg: &EstimationConfig) -> Result<SystemFit> {
    let (cs, basis, grid, data) = prepare(panel, cfg)?;
    let lambdas = resolve_lambda_grid(&cfg.lambda, data[0].n_rows())?;
    let n = panel.n_series();
    let selections = data
        .par_iter()
        .enumerate()
        .map(|(i, d)| select_lambda(d, n, &basis, &grid, i, &lambdas, &cfg.solver))
        .collect::<Result<Vec<_>>>()?;
    let fits = selections.iter().map(|s| s.best_fit.clone()).collect();
    Ok(SystemFit {
        model: SqvarModel::new(cs, basis, fits)?,
        selections,
    })
}

/// Estimate a single equation.
pub fn estimate_equation(panel: &TimeSeriesPanel, cfg: &EstimationConfig, i: usize) -> Result<(CoordinateSystem, SplineBasis, SelectionResult)> {
    if i >= panel.n_series() {
        return Err(SqvarError::InvalidArgument(format!("equation {i} out of range")));
    }
    let (cs, basis, grid, data) = prepare(panel, cfg)?;
    let lambdas = resolve_lambda_grid(&cfg.lambda, data[i].n_rows())?;
    let sel = select_lambda(&data[i], panel.n_series(), &basis, &grid, i, &lambdas, &cfg.solver)?;
    Ok((cs, basis, sel))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_worked_example() {
        let v = bic_value(0.5, 3, 5, 100);
        let expected = 0.5f64.ln() + 15.0 * 100f64.ln() / 200.0;
        assert!((v - expected).abs() < 1e-15);
        assert!((v - (-0.34776)).abs() < 1e-5);
    }

    #[test]
    fn bic_empty_set_is_log_loss() {
        assert_eq!(bic_value(0.3, 0, 5, 80), 0.3f64.ln());
        assert_eq!(bic_value(0.0, 2, 5, 80), f64::NEG_INFINITY);
    }

    #[test]
    fn bic_complexity_falls_with_t_and_rises_with_s1() {
        let a = bic_value(0.4, 2, 5, 200) - 0.4f64.ln();
        let b = bic_value(0.4, 2, 5, 400) - 0.4f64.ln();
        assert!(b < a);
        assert!(bic_value(0.4, 3, 5, 200) > bic_value(0.4, 2, 5, 200));
    }

    #[test]
    fn lambda_grid_values() {
        let g = default_lambda_grid(600, &[0.5]).unwrap();
        assert!((g[0] - 0.5 * 600f64.ln() / 600f64.sqrt()).abs() < 1e-15);
        assert!((g[0] - 0.13058).abs() < 1e-5);
        assert!(default_lambda_grid(600, &[]).is_err());
        let g = default_lambda_grid(600, &DEFAULT_C_LAMBDA).unwrap();
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
