//! Monte-Carlo experiment harness: one record per replication, aggregated
//! into RMSE, crossing and selection-frequency tables.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::PointwiseQr;
use crate::basis::SplineBasis;
use crate::dgp::{self, CoefficientFunctions, Study2Dgp};
use crate::error::{Result, SqvarError};
use crate::model::qvar_coefficients_at;
use crate::panel::build_lagged_design;
use crate::select::{self, EstimationConfig};
use crate::simplex::LagPair;
use crate::solver::{EquationData, SqvarFit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    /// Linear-in-lags QVAR with monotone coefficient curves, scaled by `1/b`.
    Study1 { b: u32 },
    /// Data generated through SQVAR coefficient functions with calibrated bounds.
    Study2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub design: Design,
    pub t: usize,
    pub replications: usize,
    #[serde(default = "default_base_seed")]
    pub base_seed: u64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Equation whose coefficients and quantile curves are evaluated (0-based).
    #[serde(default)]
    pub equation: usize,
    /// Also fit the pointwise linear QR comparison estimator.
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

fn default_base_seed() -> u64 {
    1
}

fn default_burn_in() -> usize {
    dgp::DEFAULT_BURN_IN
}

impl ExperimentSpec {
    pub fn new(design: Design, t: usize, replications: usize) -> Self {
        Self {
            design,
            t,
            replications,
            base_seed: default_base_seed(),
            burn_in: default_burn_in(),
            equation: 0,
            baseline: false,
            estimation: EstimationConfig::default(),
        }
    }

    pub fn seed(&self, replication: usize) -> u64 {
        self.base_seed.wrapping_add(replication as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub design: Design,
    pub t: usize,
    pub replication: usize,
    pub seed: u64,
    /// Number of coefficient curves in each squared-error sum.
    pub n_coefficients: usize,
    pub taus: Vec<f64>,
    /// `sum_coef (theta_hat(tau) - theta(tau))^2` at each evaluation level.
    pub sqvar_sq_error: Vec<f64>,
    pub qr_sq_error: Option<Vec<f64>>,
    pub sqvar_crossing: f64,
    pub qr_crossing: Option<f64>,
    pub lambda: f64,
    pub active_set: Vec<LagPair>,
    pub true_active_set: Vec<LagPair>,
}

impl ReplicationRecord {
    /// `S1 ⊆ Ŝ1`.
    pub fn covers_truth(&self) -> bool {
        self.true_active_set.iter().all(|a| self.active_set.contains(a))
    }

    pub fn exact_recovery(&self) -> bool {
        let mut a = self.active_set.clone();
        let mut b = self.true_active_set.clone();
        a.sort();
        b.sort();
        a == b
    }
}

/// Squared coefficient error summed over the intercept and every lag
/// coefficient of `equation`, at each level in `taus`.
pub fn coefficient_sq_errors<F>(estimate: F, truth: &CoefficientFunctions, equation: usize, taus: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<(f64, Vec<f64>)>,
{
    let nl = truth.n_series() * truth.lag_order();
    taus.iter()
        .map(|&tau| {
            let (t0, th) = estimate(tau)?;
            if th.len() != nl {
                return Err(SqvarError::Dimension(format!(
                    "{} estimated lag coefficients, truth has {nl}",
                    th.len()
                )));
            }
            let mut s = (t0 - truth.theta0(equation, tau)).powi(2);
            for (k, v) in th.iter().enumerate() {
                s += (v - truth.theta(equation, k, tau)).powi(2);
            }
            Ok(s)
        })
        .collect()
}

/// Average crossing count of the fitted curves at each in-sample row.
pub fn sqvar_crossing(fit: &SqvarFit, basis: &SplineBasis, data: &EquationData, taus: &[f64]) -> Result<f64> {
    let table = taus.iter().map(|t| basis.eval(*t)).collect::<Result<Vec<_>>>()?;
    let curves = (0..data.n_rows()).map(|r| {
        let c = data.coords(r);
        table.iter().map(|b| fit.quantile(c, b)).collect::<Vec<f64>>()
    });
    Ok(dgp::crossing_frequency(curves))
}

fn simulate(spec: &ExperimentSpec, seed: u64) -> Result<(crate::panel::TimeSeriesPanel, CoefficientFunctions)> {
    match spec.design {
        Design::Study1 { b } => {
            let (coefs, copula) = dgp::study1_dgp(b)?;
            let panel = dgp::simulate_qvar(&coefs, &copula, spec.t, spec.burn_in, seed)?;
            Ok((panel, coefs))
        }
        Design::Study2 => {
            let s = Study2Dgp::default().generate(spec.t, seed)?;
            Ok((s.panel, s.coefs))
        }
    }
}

/// Simulate, estimate and score one replication.
pub fn run_replication(spec: &ExperimentSpec, replication: usize) -> Result<ReplicationRecord> {
    let seed = spec.seed(replication);
    let (panel, truth) = simulate(spec, seed)?;
    let eq = spec.equation;
    let cfg = &spec.estimation;
    let (cs, basis, grid, data) = select::prepare(&panel, cfg)?;
    let lambdas = select::resolve_lambda_grid(&cfg.lambda, data[eq].n_rows())?;
    let sel = select::select_lambda(&data[eq], panel.n_series(), &basis, &grid, eq, &lambdas, &cfg.solver)?;
    let taus = dgp::crossing_grid();
    let fit = &sel.best_fit;
    let sqvar_sq_error = coefficient_sq_errors(
        |tau| qvar_coefficients_at(fit, &cs, &basis.eval(tau)?),
        &truth,
        eq,
        &taus,
    )?;
    let sqvar_crossing = sqvar_crossing(fit, &basis, &data[eq], &taus)?;

    let (qr_sq_error, qr_crossing) = if spec.baseline {
        let design = build_lagged_design(&panel, cfg.lag_order)?;
        let qr = PointwiseQr::fit(&design, eq, &taus)?;
        let err = coefficient_sq_errors(
            |tau| {
                let l = taus.iter().position(|t| *t == tau).expect("grid level");
                Ok((qr.coefs[l][0], qr.coefs[l][1..].to_vec()))
            },
            &truth,
            eq,
            &taus,
        )?;
        let crossing = dgp::crossing_frequency((0..design.n_rows()).map(|r| qr.curve(design.row(r))));
        (Some(err), Some(crossing))
    } else {
        (None, None)
    };

    Ok(ReplicationRecord {
        design: spec.design,
        t: spec.t,
        replication,
        seed,
        n_coefficients: 1 + truth.n_series() * truth.lag_order(),
        taus,
        sqvar_sq_error,
        qr_sq_error,
        sqvar_crossing,
        qr_crossing,
        lambda: sel.best_lambda,
        active_set: sel.active_set,
        true_active_set: truth.active_set(eq),
    })
}

/// All replications of a spec, in replication order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ReplicationRecord>> {
    if spec.replications == 0 {
        return Err(SqvarError::InvalidArgument("at least one replication is required".into()));
    }
    (0..spec.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, r))
        .collect()
}

/// `RMSE(tau_k)` and `RMSE_all` for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSummary {
    pub taus: Vec<f64>,
    pub rmse: Vec<f64>,
    pub rmse_all: f64,
}

/// `RMSE(tau) = [sum_r e_r(tau) / (K R)]^{1/2}` and
/// `RMSE_all = [sum_k sum_r e_r(tau_k) / (K n_tau R)]^{1/2}`, with `e_r` the
/// per-replication squared errors summed over `K` coefficients.
pub fn rmse_summary(taus: &[f64], sq_errors: &[&[f64]], n_coefficients: usize) -> Result<RmseSummary> {
    if sq_errors.is_empty() || n_coefficients == 0 {
        return Err(SqvarError::InvalidArgument("no replications to summarize".into()));
    }
    if sq_errors.iter().any(|e| e.len() != taus.len()) {
        return Err(SqvarError::Dimension("squared-error rows differ from the level grid".into()));
    }
    let r = sq_errors.len() as f64;
    let k = n_coefficients as f64;
    let sums: Vec<f64> = (0..taus.len())
        .map(|l| sq_errors.iter().map(|e| e[l]).sum::<f64>())
        .collect();
    let rmse = sums.iter().map(|s| (s / (k * r)).sqrt()).collect();
    let rmse_all = (sums.iter().sum::<f64>() / (k * taus.len() as f64 * r)).sqrt();
    Ok(RmseSummary {
        taus: taus.to_vec(),
        rmse,
        rmse_all,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub replications: usize,
    pub covers_truth: f64,
    pub exact: f64,
    pub mean_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingSummary {
    pub mean: f64,
    pub max: f64,
}

/// Summaries of every replication sharing one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub t: usize,
    pub sqvar_rmse: RmseSummary,
    pub qr_rmse: Option<RmseSummary>,
    pub sqvar_crossing: CrossingSummary,
    pub qr_crossing: Option<CrossingSummary>,
    pub selection: SelectionSummary,
}

fn crossing_summary(v: &[f64]) -> CrossingSummary {
    CrossingSummary {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        max: v.iter().copied().fold(0.0, f64::max),
    }
}

/// Group records by sample size and summarize each group.
pub fn summarize(records: &[ReplicationRecord]) -> Result<Vec<ExperimentSummary>> {
    let mut groups: BTreeMap<usize, Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.t).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(t, recs)| {
            let taus = &recs[0].taus;
            let k = recs[0].n_coefficients;
            if recs.iter().any(|r| &r.taus != taus || r.n_coefficients != k) {
                return Err(SqvarError::Dimension(format!("records at T = {t} use different grids")));
            }
            let sq: Vec<&[f64]> = recs.iter().map(|r| &r.sqvar_sq_error[..]).collect();
            let sqvar_rmse = rmse_summary(taus, &sq, k)?;
            let qr_sq: Option<Vec<&[f64]>> = recs.iter().map(|r| r.qr_sq_error.as_deref()).collect();
            let qr_rmse = qr_sq.map(|q| rmse_summary(taus, &q, k)).transpose()?;
            let sc: Vec<f64> = recs.iter().map(|r| r.sqvar_crossing).collect();
            let qc: Option<Vec<f64>> = recs.iter().map(|r| r.qr_crossing).collect();
            let m = recs.len() as f64;
            Ok(ExperimentSummary {
                t,
                sqvar_rmse,
                qr_rmse,
                sqvar_crossing: crossing_summary(&sc),
                qr_crossing: qc.as_deref().map(crossing_summary),
                selection: SelectionSummary {
                    replications: recs.len(),
                    covers_truth: recs.iter().filter(|r| r.covers_truth()).count() as f64 / m,
                    exact: recs.iter().filter(|r| r.exact_recovery()).count() as f64 / m,
                    mean_size: recs.iter().map(|r| r.active_set.len() as f64).sum::<f64>() / m,
                },
            })
        })
        .collect()
}

fn flush<W: std::io::Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| SqvarError::Io {
        path: "<csv writer>".into(),
        source: e,
    })
}

/// Long table `t,estimator,tau,rmse`; the overall value has `tau = all`.
pub fn write_rmse_table<W: std::io::Write>(writer: W, summaries: &[ExperimentSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "estimator", "tau", "rmse"])?;
    for s in summaries {
        let rows = std::iter::once(("sqvar", &s.sqvar_rmse)).chain(s.qr_rmse.as_ref().map(|q| ("qr", q)));
        for (name, r) in rows {
            for (tau, v) in r.taus.iter().zip(&r.rmse) {
                w.write_record([s.t.to_string(), name.into(), tau.to_string(), v.to_string()])?;
            }
            w.write_record([s.t.to_string(), name.into(), "all".into(), r.rmse_all.to_string()])?;
        }
    }
    flush(w)
}

/// `t,estimator,mean_crossing,max_crossing`.
pub fn write_crossing_table<W: std::io::Write>(writer: W, summaries: &[ExperimentSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "estimator", "mean_crossing", "max_crossing"])?;
    for s in summaries {
        let rows = std::iter::once(("sqvar", &s.sqvar_crossing)).chain(s.qr_crossing.as_ref().map(|q| ("qr", q)));
        for (name, c) in rows {
            w.write_record([s.t.to_string(), name.into(), c.mean.to_string(), c.max.to_string()])?;
        }
    }
    flush(w)
}

/// `t,replications,covers_truth,exact,mean_size`.
pub fn write_selection_table<W: std::io::Write>(writer: W, summaries: &[ExperimentSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "replications", "covers_truth", "exact", "mean_size"])?;
    for s in summaries {
        let x = &s.selection;
        w.write_record([
            s.t.to_string(),
            x.replications.to_string(),
            x.covers_truth.to_string(),
            x.exact.to_string(),
            x.mean_size.to_string(),
        ])?;
    }
    flush(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_hand_computed() {
        let taus = [0.25, 0.75];
        let a = [7.0, 0.0];
        let b = [0.0, 14.0];
        let s = rmse_summary(&taus, &[&a, &b], 7).unwrap();
        assert!((s.rmse[0] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((s.rmse[1] - 1.0).abs() < 1e-15);
        assert!((s.rmse_all - 0.75f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn selection_flags() {
        let p = |s, l| LagPair { series: s, lag: l };
        let mut r = ReplicationRecord {
            design: Design::Study2,
            t: 10,
            replication: 0,
            seed: 0,
            n_coefficients: 1,
            taus: vec![0.5],
            sqvar_sq_error: vec![0.0],
            qr_sq_error: None,
            sqvar_crossing: 0.0,
            qr_crossing: None,
            lambda: 0.0,
            active_set: vec![p(2, 1), p(1, 1), p(3, 2)],
            true_active_set: vec![p(1, 1), p(2, 1)],
        };
        assert!(r.covers_truth() && !r.exact_recovery());
        r.active_set.pop();
        assert!(r.exact_recovery());
        r.active_set.pop();
        assert!(!r.covers_truth());
    }
}
