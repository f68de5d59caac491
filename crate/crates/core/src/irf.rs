//! Generalized and scenario-based impulse responses by forward simulation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SqvarError};
use crate::innovation::{standard_normals, CopulaModel};
use crate::model::SqvarModel;

pub const DEFAULT_N_SIM: usize = 2000;

/// Lag stack `(Y_{t-1}, ..., Y_{t-p})` from `p` history rows in time order
/// (oldest first).
pub fn lag_stack(history: &[Vec<f64>], n: usize, p: usize) -> Result<Vec<f64>> {
    if history.len() != p {
        return Err(SqvarError::Dimension(format!(
            "history has {} rows, expected the lag order {p}",
            history.len()
        )));
    }
    if history.iter().any(|r| r.len() != n) {
        return Err(SqvarError::Dimension(format!("history rows must have {n} entries")));
    }
    Ok(history.iter().rev().flatten().copied().collect())
}

fn roll(lags: &mut [f64], y: &[f64]) {
    let n = y.len();
    lags.copy_within(0..lags.len() - n, n);
    lags[..n].copy_from_slice(y);
}

fn clamp_state(model: &SqvarModel, y: &mut [f64]) {
    let b = model.cs.bounds();
    for (i, v) in y.iter_mut().enumerate() {
        *v = v.clamp(b.lb[i], b.ub[i]);
    }
}

/// `y*_i = xi(u_i)' gamma_i` for every equation at lag stack `lags`.
pub fn forecast_one_step(model: &SqvarModel, lags: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let n = model.n_series();
    if lags.len() != model.cs.n_lagged() || u.len() != n {
        return Err(SqvarError::Dimension(format!(
            "state of length {} and {} ranks for a system with {} lagged regressors and {n} series",
            lags.len(),
            u.len(),
            model.cs.n_lagged()
        )));
    }
    let y: Vec<f64> = (0..n).map(|i| model.quantile(i, lags, u[i])).collect();
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(SqvarError::Numerical(format!("non-finite forecast {v}")));
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseSpec {
    /// Shocked series (0-based).
    pub shocked: usize,
    pub tau_star: f64,
    pub horizon: usize,
    pub n_sim: usize,
    pub seed: u64,
    /// Share random draws between the shocked and baseline branches.
    pub common_random_numbers: bool,
    /// Clamp simulated states to the bounds before they are fed back.
    pub clamp_to_bounds: bool,
}

impl ImpulseSpec {
    pub fn new(shocked: usize, tau_star: f64, horizon: usize) -> Self {
        Self {
            shocked,
            tau_star,
            horizon,
            n_sim: DEFAULT_N_SIM,
            seed: 0,
            common_random_numbers: true,
            clamp_to_bounds: false,
        }
    }
}

/// Responses indexed `[series][horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrfResult {
    pub irf: Vec<Vec<f64>>,
    pub mc_se: Vec<Vec<f64>>,
    pub shocked_mean: Vec<Vec<f64>>,
    pub baseline_mean: Vec<Vec<f64>>,
    /// Paths that left the bounds in either branch.
    pub out_of_bounds_paths: usize,
}

impl IrfResult {
    /// Long format: `series,horizon,value,mc_se` (series 1-based).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["series", "horizon", "value", "mc_se"])?;
        for (i, (row, se)) in self.irf.iter().zip(&self.mc_se).enumerate() {
            for (h, (v, s)) in row.iter().zip(se).enumerate() {
                w.write_record([(i + 1).to_string(), h.to_string(), v.to_string(), s.to_string()])?;
            }
        }
        w.flush().map_err(|e| SqvarError::Io {
            path: "<csv writer>".into(),
            source: e,
        })
    }
}

struct PathPair {
    shocked: Vec<f64>,
    baseline: Vec<f64>,
    out_of_bounds: bool,
}

fn outside(model: &SqvarModel, y: &[f64]) -> bool {
    let b = model.cs.bounds();
    y.iter().enumerate().any(|(i, v)| !b.contains(i, *v))
}

/// One simulated path, laid out `[h * n + i]`. `impact` supplies the
/// ranks at horizon 0 from a normal draw.
fn simulate_path(
    model: &SqvarModel,
    copula: &CopulaModel,
    start: &[f64],
    normals: &[Vec<f64>],
    impact: &dyn Fn(&[f64]) -> Vec<f64>,
    clamp: bool,
) -> Result<(Vec<f64>, bool)> {
    let n = model.n_series();
    let mut lags = start.to_vec();
    let mut out = Vec::with_capacity(normals.len() * n);
    let mut left = false;
    for (h, e) in normals.iter().enumerate() {
        let u = if h == 0 { impact(e) } else { copula.ranks_from_normals(e) };
        let mut y = forecast_one_step(model, &lags, &u)?;
        left |= outside(model, &y);
        out.extend_from_slice(&y);
        if clamp {
            clamp_state(model, &mut y);
        }
        roll(&mut lags, &y);
    }
    Ok((out, left))
}

/// Generalized impulse response of every series to pinning `U_j = tau*` at
/// impact, relative to the unconditional forecast.
pub fn generalized_irf(
    model: &SqvarModel,
    copula: &CopulaModel,
    spec: &ImpulseSpec,
    history: &[Vec<f64>],
) -> Result<IrfResult> {
    let n = model.n_series();
    let p = model.lag_order();
    if copula.n != n {
        return Err(SqvarError::Dimension(format!(
            "copula of dimension {} for {n} series",
            copula.n
        )));
    }
    if spec.n_sim < 2 {
        return Err(SqvarError::InvalidArgument("n_sim must be at least 2".into()));
    }
    if spec.shocked >= n {
        return Err(SqvarError::InvalidArgument(format!("shocked series {} out of range", spec.shocked)));
    }
    if !(spec.tau_star > 0.0 && spec.tau_star < 1.0) {
        return Err(SqvarError::TauOutOfRange(spec.tau_star));
    }
    let start = lag_stack(history, n, p)?;
    if history.iter().any(|row| outside(model, row)) {
        log::warn!("impulse history lies outside the estimation bounds");
    }
    let steps = spec.horizon + 1;
    let j = spec.shocked;

    let paths: Vec<PathPair> = (0..spec.n_sim)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(s as u64);
            let draws: Vec<Vec<f64>> = (0..steps).map(|_| standard_normals(n, &mut rng)).collect();
            let other: Vec<Vec<f64>> = if spec.common_random_numbers {
                draws.clone()
            } else {
                (0..steps).map(|_| standard_normals(n, &mut rng)).collect()
            };
            let shock = |e: &[f64]| copula.ranks_given_from_normals(j, spec.tau_star, e);
            let free = |e: &[f64]| copula.ranks_from_normals(e);
            let (shocked, a) = simulate_path(model, copula, &start, &draws, &shock, spec.clamp_to_bounds)?;
            let (baseline, b) = simulate_path(model, copula, &start, &other, &free, spec.clamp_to_bounds)?;
            Ok(PathPair {
                shocked,
                baseline,
                out_of_bounds: a || b,
            })
        })
        .collect::<Result<_>>()?;

    // sequential reduction keeps the result independent of scheduling
    let m = spec.n_sim as f64;
    let cells = steps * n;
    let mut sum_a = vec![0.0; cells];
    let mut sum_b = vec![0.0; cells];
    for path in &paths {
        for c in 0..cells {
            sum_a[c] += path.shocked[c];
            sum_b[c] += path.baseline[c];
        }
    }
    let mean_a: Vec<f64> = sum_a.iter().map(|v| v / m).collect();
    let mean_b: Vec<f64> = sum_b.iter().map(|v| v / m).collect();
    let mut var = vec![0.0; cells];
    for path in &paths {
        for c in 0..cells {
            if spec.common_random_numbers {
                let d = (path.shocked[c] - path.baseline[c]) - (mean_a[c] - mean_b[c]);
                var[c] += d * d;
            } else {
                let da = path.shocked[c] - mean_a[c];
                let db = path.baseline[c] - mean_b[c];
                var[c] += da * da + db * db;
            }
        }
    }
    let se: Vec<f64> = var.iter().map(|v| (v / (m - 1.0) / m).sqrt()).collect();
    let reshape = |v: &[f64]| -> Vec<Vec<f64>> {
        (0..n).map(|i| (0..steps).map(|h| v[h * n + i]).collect()).collect()
    };
    let diff: Vec<f64> = mean_a.iter().zip(&mean_b).map(|(a, b)| a - b).collect();
    let out_of_bounds_paths = paths.iter().filter(|p| p.out_of_bounds).count();
    if out_of_bounds_paths > 0 {
        log::info!("{out_of_bounds_paths} of {} simulated paths left the bounds", spec.n_sim);
    }
    Ok(IrfResult {
        irf: reshape(&diff),
        mc_se: reshape(&se),
        shocked_mean: reshape(&mean_a),
        baseline_mean: reshape(&mean_b),
        out_of_bounds_paths,
    })
}

/// A rank trajectory `tau_path[i][h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tau_path: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn new(tau_path: Vec<Vec<f64>>) -> Result<Self> {
        let len = tau_path.first().map_or(0, Vec::len);
        if len == 0 || tau_path.iter().any(|r| r.len() != len) {
            return Err(SqvarError::Dimension("scenario rows must be nonempty and of equal length".into()));
        }
        if let Some(v) = tau_path.iter().flatten().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(SqvarError::TauOutOfRange(*v));
        }
        Ok(Self { tau_path })
    }

    /// Every series at the same level over `horizon + 1` steps.
    pub fn constant(n: usize, horizon: usize, tau: f64) -> Result<Self> {
        Self::new(vec![vec![tau; horizon + 1]; n])
    }

    pub fn horizon(&self) -> usize {
        self.tau_path[0].len() - 1
    }

    /// Rank matrix CSV: one row per series, one column per horizon, no header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    cell.parse::<f64>().map_err(|_| SqvarError::BadCell {
                        row: r + 1,
                        col: c + 1,
                        cell: cell.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }
}

/// Deterministic forecast path under a rank scenario, `[series][horizon]`.
pub fn scenario_forecast(model: &SqvarModel, scenario: &Scenario, history: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = model.n_series();
    if scenario.tau_path.len() != n {
        return Err(SqvarError::Dimension(format!(
            "scenario has {} series, model has {n}",
            scenario.tau_path.len()
        )));
    }
    let mut lags = lag_stack(history, n, model.lag_order())?;
    let steps = scenario.horizon() + 1;
    let mut out = vec![Vec::with_capacity(steps); n];
    for h in 0..steps {
        let u: Vec<f64> = (0..n).map(|i| scenario.tau_path[i][h]).collect();
        let y = forecast_one_step(model, &lags, &u)?;
        for (row, v) in out.iter_mut().zip(&y) {
            row.push(*v);
        }
        roll(&mut lags, &y);
    }
    Ok(out)
}

/// `a - b` elementwise.
pub fn scenario_irf(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(SqvarError::Dimension("scenario paths differ in shape".into()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u - v).collect())
        .collect())
}

/// Long format `series,horizon,value` for a `[series][horizon]` matrix.
pub fn write_path_csv<W: std::io::Write>(writer: W, path: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series", "horizon", "value"])?;
    for (i, row) in path.iter().enumerate() {
        for (h, v) in row.iter().enumerate() {
            w.write_record([(i + 1).to_string(), h.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| SqvarError::Io {
        path: "<csv writer>".into(),
        source: e,
    })
}
