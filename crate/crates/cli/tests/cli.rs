use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sqvar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqvar"))
        .args(args)
        .output()
        .expect("spawn sqvar")
}

fn ok(args: &[&str]) {
    let out = sqvar(args);
    assert!(
        out.status.success(),
        "sqvar {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulate a small first-design panel into `dir/sim`.
fn simulated(dir: &Path, t: &str) -> PathBuf {
    let sim = dir.join("sim");
    ok(&["simulate", "--dgp", "study1", "--b", "1", "--t", t, "--seed", "7", "--out", s(&sim)]);
    sim.join("data.csv")
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["simulate", "--dgp", "study1", "--b", "1", "--T", "600", "--seed", "7", "--out", s(d)]);
    }
    let data = read(a.join("data.csv"));
    assert_eq!(data, read(b.join("data.csv")));
    assert_eq!(data.lines().count(), 601);
    assert!(a.join("config.json").exists());
    assert!(a.join("logs/run.log").exists());
    let cfg: serde_json::Value = serde_json::from_str(&read(a.join("config.json"))).unwrap();
    assert_eq!(cfg["simulate"]["t"], 600);
    assert_eq!(cfg["seed"], 7);
}

#[test]
fn zero_length_simulation_fails() {
    let dir = TempDir::new().unwrap();
    let out = sqvar(&["simulate", "--t", "0", "--out", s(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn second_design_settles_or_reports() {
    let dir = TempDir::new().unwrap();
    let out = sqvar(&["simulate", "--dgp", "study2", "--t", "200", "--seed", "3", "--out", s(dir.path())]);
    match out.status.code() {
        Some(0) => {
            assert_eq!(read(dir.path().join("data.csv")).lines().count(), 201);
            let info: serde_json::Value = serde_json::from_str(&read(dir.path().join("fits/dgp.json"))).unwrap();
            assert!(info["stabilization_steps"].as_u64().unwrap() > 0);
        }
        Some(1) => assert!(String::from_utf8_lossy(&out.stderr).contains("stabilize")),
        other => panic!("unexpected exit {other:?}"),
    }
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = sqvar(&["estimate", "--data", "/nonexistent/panel.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/panel.csv"));

    let out = sqvar(&["estimate", "--data", "/nonexistent/panel.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sqvar(&["estimate", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 5\n\n[simulate]\nt = 50\nburn_in = 20\n").unwrap();
    let a = dir.path().join("a");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    assert_eq!(read(a.join("data.csv")).lines().count(), 51);
    let b = dir.path().join("b");
    ok(&["simulate", "--config", s(&cfg), "--t", "80", "--out", s(&b)]);
    assert_eq!(read(b.join("data.csv")).lines().count(), 81);
    let resolved: serde_json::Value = serde_json::from_str(&read(b.join("config.json"))).unwrap();
    assert_eq!(resolved["simulate"]["t"], 80);
    assert_eq!(resolved["simulate"]["burn_in"], 20);
    assert_eq!(resolved["seed"], 5);

    std::fs::write(&cfg, "[simulate]\nt = \"many\"\n").unwrap();
    assert_eq!(sqvar(&["simulate", "--config", s(&cfg), "--out", s(&a)]).status.code(), Some(2));
}

#[test]
fn estimate_and_downstream_commands() {
    let dir = TempDir::new().unwrap();
    let data = simulated(dir.path(), "300");
    let before = read(&data);
    let fit = dir.path().join("fit");
    ok(&["estimate", "--data", s(&data), "--out", s(&fit), "--threads", "1"]);

    for f in ["config.json", "fits/model.json", "fits/selection_eq1.json", "fits/selection_eq3.json"] {
        assert!(fit.join(f).exists(), "{f}");
    }
    let coefs = read(fit.join("tables/coefficients.csv"));
    assert!(coefs.starts_with("equation,tau,term,value\n"));
    // 3 equations x 99 levels x (intercept + 6 lags)
    assert_eq!(coefs.lines().count(), 1 + 3 * 99 * 7);
    let crossing = read(fit.join("tables/crossing.csv"));
    for line in crossing.lines().skip(1) {
        assert!(line.ends_with(",0"), "{line}");
    }
    assert!(read(fit.join("tables/selection.csv")).lines().count() > 3);

    // same config, same bytes
    let again = dir.path().join("fit2");
    ok(&["estimate", "--data", s(&data), "--out", s(&again)]);
    for f in ["fits/model.json", "tables/coefficients.csv", "tables/selection.csv", "tables/crossing.csv"] {
        assert_eq!(read(fit.join(f)), read(again.join(f)), "{f}");
    }

    // impulse responses
    let irf = dir.path().join("irf");
    let irf_args = [
        "irf", "--fit", s(&fit), "--data", s(&data), "--shocked", "2", "--tau-star", "0.9", "--horizon", "5",
        "--n-sim", "200", "--seed", "3", "--out", s(&irf),
    ];
    ok(&irf_args);
    let table = read(irf.join("tables/irf.csv"));
    assert!(table.starts_with("series,horizon,value,mc_se\n"));
    assert_eq!(table.lines().count(), 1 + 3 * 6);
    assert!(irf.join("fits/copula.json").exists());
    let irf2 = dir.path().join("irf2");
    let mut args2 = irf_args;
    args2[args2.len() - 1] = s(&irf2);
    ok(&args2);
    assert_eq!(table, read(irf2.join("tables/irf.csv")));

    // identical scenario files give a zero response
    let sc = dir.path().join("scenario.csv");
    std::fs::write(&sc, "0.9,0.5,0.5\n0.5,0.5,0.5\n0.5,0.5,0.1\n").unwrap();
    let sc_copy = dir.path().join("scenario_copy.csv");
    std::fs::copy(&sc, &sc_copy).unwrap();
    let scen = dir.path().join("scen");
    ok(&[
        "scenario", "--fit", s(&fit.join("fits/model.json")), "--data", s(&data), "--scenario", s(&sc),
        "--baseline", s(&sc_copy), "--out", s(&scen),
    ]);
    let diff = read(scen.join("tables/scenario_irf.csv"));
    assert_eq!(diff.lines().count(), 1 + 3 * 3);
    for line in diff.lines().skip(1) {
        assert!(line.ends_with(",0"), "{line}");
    }

    // no command touches its input
    assert_eq!(before, read(&data));
}

#[test]
fn unpenalized_fit_keeps_every_group() {
    let dir = TempDir::new().unwrap();
    let data = simulated(dir.path(), "150");
    let fit = dir.path().join("fit");
    ok(&["estimate", "--data", s(&data), "--lambda", "0", "--levels", "10", "--out", s(&fit)]);
    let active = read(fit.join("tables/active_set.csv"));
    // every equation keeps all n p = 6 lagged groups
    assert_eq!(active.lines().count(), 1 + 3 * 6);
}

#[test]
fn screening_with_zero_threshold_keeps_everything() {
    let dir = TempDir::new().unwrap();
    let data = simulated(dir.path(), "200");
    let out = dir.path().join("screen");
    ok(&["screen", "--data", s(&data), "--equation", "1", "-p", "2", "--nu", "0", "--out", s(&out)]);
    let kept: Vec<serde_json::Value> = serde_json::from_str(&read(out.join("fits/screen.json"))).unwrap();
    assert_eq!(kept.len(), 6);
    let csv = read(out.join("tables/screen.csv"));
    assert_eq!(csv.lines().count(), 1 + 6 * 5);

    let none = sqvar(&["screen", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn report_over_toy_manifest() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("manifest.toml");
    std::fs::write(
        &manifest,
        "[[experiments]]\nt = 120\nreplications = 2\nburn_in = 50\nbaseline = true\n\n\
         [experiments.design]\nkind = \"study1\"\nb = 1\n\n\
         [experiments.estimation]\nlevels = 10\n",
    )
    .unwrap();
    let out = dir.path().join("report");
    ok(&["report", "--manifest", s(&manifest), "--out", s(&out)]);

    let rmse = read(out.join("tables/rmse.csv"));
    assert!(rmse.starts_with("t,estimator,tau,rmse\n"));
    assert_eq!(rmse.lines().count(), 1 + 2 * 100);
    let crossing = read(out.join("tables/crossing.csv"));
    assert_eq!(crossing.lines().count(), 3);
    let selection = read(out.join("tables/selection.csv"));
    assert!(selection.starts_with("t,replications,covers_truth,exact,mean_size\n"));
    assert!(selection.lines().nth(1).unwrap().starts_with("120,2,"));

    // summarizing the stored records reproduces the tables
    let again = dir.path().join("again");
    ok(&["report", "--records", s(&out.join("fits/records.json")), "--out", s(&again)]);
    for f in ["rmse.csv", "crossing.csv", "selection.csv"] {
        assert_eq!(read(out.join("tables").join(f)), read(again.join("tables").join(f)));
    }
}

/// Deterministic stand-in noise in (-1, 1).
fn noise(state: &mut u64) -> f64 {
    *state ^= *state << 13;
    *state ^= *state >> 7;
    *state ^= *state << 17;
    (*state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

/// Six series, six lags, 1500 observations: the shape of a daily
/// multi-market study after thinning.
#[test]
fn six_series_six_lags_pipeline() {
    let dir = TempDir::new().unwrap();
    let (n, t) = (6, 1500);
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for _ in 1..t + 100 {
        let prev = rows.last().unwrap().clone();
        let row = (0..n)
            .map(|i| 0.4 * prev[i] + 0.2 * prev[(i + 1) % n] + noise(&mut state))
            .collect();
        rows.push(row);
    }
    let mut text = String::from("a,b,c,d,e,f\n");
    for r in &rows[100..] {
        text += &r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
        text += "\n";
    }
    let data = dir.path().join("panel.csv");
    std::fs::write(&data, text).unwrap();

    let fit = dir.path().join("fit");
    ok(&["estimate", "--data", s(&data), "-p", "6", "--levels", "10", "--c-lambda", "1", "--out", s(&fit)]);
    let crossing = read(fit.join("tables/crossing.csv"));
    assert_eq!(crossing.lines().count(), 1 + n);
    for line in crossing.lines().skip(1) {
        assert!(line.ends_with(",0"), "{line}");
    }
    let irf = dir.path().join("irf");
    ok(&["irf", "--fit", s(&fit), "--data", s(&data), "--n-sim", "100", "--horizon", "4", "--out", s(&irf)]);
    assert_eq!(read(irf.join("tables/irf.csv")).lines().count(), 1 + n * 5);
}
