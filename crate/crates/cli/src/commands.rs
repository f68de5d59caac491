use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sqvar::dgp::{simulate_qvar, study1_dgp, Study2Dgp};
use sqvar::experiment::{
    run_experiment, sqvar_crossing, summarize, write_crossing_table, write_rmse_table, write_selection_table,
    ExperimentSpec, ReplicationRecord,
};
use sqvar::innovation::{fit_gaussian_copula, recover_ranks, CopulaModel};
use sqvar::irf::{generalized_irf, scenario_forecast, scenario_irf, write_path_csv, ImpulseSpec, Scenario};
use sqvar::model::SqvarModel;
use sqvar::panel::{build_lagged_design, load_csv, TimeSeriesPanel};
use sqvar::screen::{screen, ScreenConfig, Threshold};
use sqvar::select::{estimate_system, prepare};

use crate::config::{model_path, DgpKind, RunConfig};
use crate::error::{io_err, CliError, Result};

/// `out/` with `fits/`, `tables/` and `logs/`.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["fits", "tables", "logs"] {
            let d = root.join(sub);
            std::fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn fits(&self, name: &str) -> PathBuf {
        self.root.join("fits").join(name)
    }

    pub fn tables(&self, name: &str) -> PathBuf {
        self.root.join("tables").join(name)
    }
}

/// Create `path` and hand a buffered writer to `f`.
fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(sqvar::SqvarError::from)?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn load_model(fit: Option<&Path>) -> Result<SqvarModel> {
    let path = model_path(fit)?;
    Ok(SqvarModel::from_json(&read_text(&path)?)?)
}

fn load_panel(cfg: &RunConfig) -> Result<TimeSeriesPanel> {
    Ok(load_csv(cfg.data_path()?, cfg.has_header)?)
}

/// Last `p` observations, oldest first.
fn history(panel: &TimeSeriesPanel, p: usize) -> Result<Vec<Vec<f64>>> {
    let t = panel.n_obs();
    if t < p {
        return Err(CliError::Usage(format!("{t} observations cannot seed {p} lags")));
    }
    Ok((t - p..t).map(|s| panel.row(s).to_vec()).collect())
}

fn one_based(index: usize, n: usize, what: &str) -> Result<usize> {
    if index == 0 || index > n {
        return Err(CliError::Usage(format!("{what} {index} is outside 1..={n}")));
    }
    Ok(index - 1)
}

#[derive(Serialize)]
struct DgpInfo<'a> {
    dgp: DgpKind,
    t: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bounds: Option<&'a sqvar::panel::SeriesBounds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stabilization_steps: Option<usize>,
}

pub fn simulate(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let s = &cfg.simulate;
    let data = run.root.join("data.csv");
    match s.dgp {
        DgpKind::Study1 => {
            let (coefs, copula) = study1_dgp(s.b)?;
            let panel = simulate_qvar(&coefs, &copula, s.t, s.burn_in, cfg.seed)?;
            write_with(&data, |w| Ok(panel.write_csv(w)?))?;
            write_json(
                &run.fits("dgp.json"),
                &DgpInfo {
                    dgp: s.dgp,
                    t: s.t,
                    seed: cfg.seed,
                    bounds: None,
                    stabilization_steps: None,
                },
            )?;
        }
        DgpKind::Study2 => {
            let sample = Study2Dgp::default().generate(s.t, cfg.seed)?;
            info!("bounds settled after {} steps", sample.stabilization_steps);
            write_with(&data, |w| Ok(sample.panel.write_csv(w)?))?;
            write_json(
                &run.fits("dgp.json"),
                &DgpInfo {
                    dgp: s.dgp,
                    t: s.t,
                    seed: cfg.seed,
                    bounds: Some(&sample.bounds),
                    stabilization_steps: Some(sample.stabilization_steps),
                },
            )?;
        }
    }
    info!("wrote {} observations to {}", s.t, data.display());
    Ok(())
}

pub fn estimate(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let panel = load_panel(cfg)?;
    let est = &cfg.estimation;
    info!(
        "estimating {} equations, T = {}, p = {}, L = {}",
        panel.n_series(),
        panel.n_obs(),
        est.lag_order,
        est.levels
    );
    let system = estimate_system(&panel, est)?;
    let model = &system.model;
    std::fs::write(run.fits("model.json"), model.to_json()? + "\n").map_err(io_err(&run.fits("model.json")))?;

    let names = panel.series_names();
    for (i, sel) in system.selections.iter().enumerate() {
        write_json(&run.fits(&format!("selection_eq{}.json", i + 1)), sel)?;
        info!(
            "equation {}: lambda {:.4}, {} active groups",
            i + 1,
            sel.best_lambda,
            sel.s1_hat
        );
    }

    write_with(&run.tables("selection.csv"), |w| {
        let p = run.tables("selection.csv");
        writeln!(w, "equation,start,lambda,bic,converged,selected").map_err(io_err(&p))?;
        for (i, sel) in system.selections.iter().enumerate() {
            for (k, lam) in sel.lambda_grid.iter().enumerate() {
                let chosen = k == sel.best_index && !sel.best_from_collapsed_start;
                writeln!(w, "{},path,{lam},{},{},{chosen}", i + 1, sel.bic_values[k], sel.converged[k])
                    .map_err(io_err(&p))?;
            }
            if let Some(b) = sel.collapsed_start_bic {
                let lam = sel.lambda_grid[sel.lambda_grid.len() - 1];
                writeln!(w, "{},collapsed,{lam},{b},true,{}", i + 1, sel.best_from_collapsed_start)
                    .map_err(io_err(&p))?;
            }
        }
        Ok(())
    })?;

    write_with(&run.tables("active_set.csv"), |w| {
        let p = run.tables("active_set.csv");
        writeln!(w, "equation,series,lag").map_err(io_err(&p))?;
        for (i, sel) in system.selections.iter().enumerate() {
            for a in &sel.active_set {
                writeln!(w, "{},{},{}", i + 1, names[a.series - 1], a.lag).map_err(io_err(&p))?;
            }
        }
        Ok(())
    })?;

    let cs = &model.cs;
    let terms: Vec<String> = (0..cs.n_lagged())
        .map(|k| {
            let pair = cs.lag_pair(k);
            format!("{}_lag{}", names[pair.series - 1], pair.lag)
        })
        .collect();
    write_with(&run.tables("coefficients.csv"), |w| {
        let p = run.tables("coefficients.csv");
        writeln!(w, "equation,tau,term,value").map_err(io_err(&p))?;
        for i in 0..model.n_series() {
            for &tau in &cfg.eval_taus {
                let (t0, th) = model.qvar_coefficients(i, tau)?;
                writeln!(w, "{},{tau},intercept,{t0:e}", i + 1).map_err(io_err(&p))?;
                for (term, v) in terms.iter().zip(&th) {
                    writeln!(w, "{},{tau},{term},{v:e}", i + 1).map_err(io_err(&p))?;
                }
            }
        }
        Ok(())
    })?;

    // fitted curves at every design row, on the evaluation grid
    let (_, basis, _, data) = prepare(&panel, est)?;
    let mut crossing_rows = Vec::with_capacity(data.len());
    for (i, d) in data.iter().enumerate() {
        let freq = sqvar_crossing(&model.fits[i], &basis, d, &cfg.eval_taus)?;
        if freq > 0.0 {
            warn!("equation {}: crossing frequency {freq}", i + 1);
        }
        crossing_rows.push((d.n_rows(), d.out_of_bounds_rows(), freq));
    }
    write_with(&run.tables("crossing.csv"), |w| {
        let p = run.tables("crossing.csv");
        writeln!(w, "equation,rows,out_of_bounds_rows,crossing_frequency").map_err(io_err(&p))?;
        for (i, (rows, oob, freq)) in crossing_rows.iter().enumerate() {
            writeln!(w, "{},{rows},{oob},{freq}", i + 1).map_err(io_err(&p))?;
        }
        Ok(())
    })
}

pub fn irf(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let c = &cfg.irf;
    let model = load_model(c.fit.as_deref())?;
    let panel = load_panel(cfg)?;
    let n = model.n_series();
    if panel.n_series() != n {
        return Err(CliError::Usage(format!("data has {} series, model {n}", panel.n_series())));
    }
    let copula = match c.kappa {
        Some(k) => CopulaModel::new(k, n)?,
        None => {
            let design = build_lagged_design(&panel, model.lag_order())?;
            let ranks = recover_ranks(&model, &design)?;
            write_with(&run.tables("ranks.csv"), |w| Ok(ranks.write_csv(w)?))?;
            fit_gaussian_copula(&ranks)?
        }
    };
    info!("copula kappa {:.4}", copula.kappa);
    write_json(&run.fits("copula.json"), &copula)?;

    let spec = ImpulseSpec {
        shocked: one_based(c.shocked, n, "shocked series")?,
        tau_star: c.tau_star,
        horizon: c.horizon,
        n_sim: c.n_sim,
        seed: cfg.seed,
        common_random_numbers: c.common_random_numbers,
        clamp_to_bounds: c.clamp_to_bounds,
    };
    let result = generalized_irf(&model, &copula, &spec, &history(&panel, model.lag_order())?)?;
    if result.out_of_bounds_paths > 0 {
        warn!("{} of {} paths left the bounds", result.out_of_bounds_paths, c.n_sim);
    }
    write_with(&run.tables("irf.csv"), |w| Ok(result.write_csv(w)?))
}

pub fn scenario(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let c = &cfg.scenario;
    let model = load_model(c.fit.as_deref())?;
    let panel = load_panel(cfg)?;
    let path = c
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::Usage("a scenario file is required (--scenario)".into()))?;
    let shocked = Scenario::from_csv(&read_text(path)?)?;
    let base = match c.baseline.as_deref() {
        Some(b) => Scenario::from_csv(&read_text(b)?)?,
        None => Scenario::constant(model.n_series(), shocked.horizon(), 0.5)?,
    };
    let hist = history(&panel, model.lag_order())?;
    let a = scenario_forecast(&model, &shocked, &hist)?;
    let b = scenario_forecast(&model, &base, &hist)?;
    let diff = scenario_irf(&a, &b)?;
    write_with(&run.tables("scenario_path.csv"), |w| Ok(write_path_csv(w, &a)?))?;
    write_with(&run.tables("baseline_path.csv"), |w| Ok(write_path_csv(w, &b)?))?;
    write_with(&run.tables("scenario_irf.csv"), |w| Ok(write_path_csv(w, &diff)?))
}

pub fn screen_cmd(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let s = &cfg.screen;
    let panel = load_panel(cfg)?;
    let threshold = match (s.nu, s.top_k) {
        (Some(nu), None) => Threshold::Absolute(nu),
        (None, Some(k)) => Threshold::TopK(k),
        _ => return Err(CliError::Usage("give exactly one of --nu and --top-k".into())),
    };
    let sc = ScreenConfig::new(s.lag_order, s.taus.clone(), threshold)?;
    let i = one_based(s.equation, panel.n_series(), "equation")?;
    let result = screen(&panel, &sc, i)?;
    info!("kept {} of {} predictors", result.selected.len(), panel.n_series() * s.lag_order);
    write_json(&run.fits("screen.json"), &result.selected)?;
    write_with(&run.tables("screen.csv"), |w| Ok(result.write_csv(w)?))
}

/// A list of Monte-Carlo experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiments: Vec<ExperimentSpec>,
}

pub fn report(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    let r = &cfg.report;
    let records: Vec<ReplicationRecord> = match (&r.manifest, &r.records) {
        (Some(m), None) => {
            let text = read_text(m)?;
            let manifest: Manifest = if m.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| CliError::Config {
                    path: m.display().to_string(),
                    msg: e.to_string(),
                })?
            } else {
                toml::from_str(&text).map_err(|e| CliError::Config {
                    path: m.display().to_string(),
                    msg: e.to_string(),
                })?
            };
            let mut all = Vec::new();
            for spec in &manifest.experiments {
                info!("{:?}, T = {}, {} replications", spec.design, spec.t, spec.replications);
                all.extend(run_experiment(spec)?);
            }
            write_json(&run.fits("records.json"), &all)?;
            all
        }
        (None, Some(rec)) => serde_json::from_str(&read_text(rec)?).map_err(|e| CliError::Config {
            path: rec.display().to_string(),
            msg: e.to_string(),
        })?,
        _ => return Err(CliError::Usage("give exactly one of --manifest and --records".into())),
    };
    let summaries = summarize(&records)?;
    write_with(&run.tables("rmse.csv"), |w| Ok(write_rmse_table(w, &summaries)?))?;
    write_with(&run.tables("crossing.csv"), |w| Ok(write_crossing_table(w, &summaries)?))?;
    write_with(&run.tables("selection.csv"), |w| Ok(write_selection_table(w, &summaries)?))
}
