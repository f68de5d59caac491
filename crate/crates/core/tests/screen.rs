use minilp::{ComparisonOp, OptimizationDirection, Problem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sqvar::panel::TimeSeriesPanel;
use sqvar::screen::{
    empirical_quantile, marginal_qr, screen, screen_statistic, ScreenConfig, Threshold,
};
use sqvar::solver::check_loss;

/// Minimum of `sum rho_tau(y - b0 - b1 x)` by linear programming.
fn lp_loss(y: &[f64], x: &[f64], tau: f64) -> f64 {
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let b0 = lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY));
    let b1 = lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY));
    for (yt, xt) in y.iter().zip(x) {
        let up = lp.add_var(tau, (0.0, f64::INFINITY));
        let dn = lp.add_var(1.0 - tau, (0.0, f64::INFINITY));
        lp.add_constraint([(b0, 1.0), (b1, *xt), (up, 1.0), (dn, -1.0)], ComparisonOp::Eq, *yt);
    }
    lp.solve().unwrap().objective()
}

fn loss(y: &[f64], x: &[f64], b: (f64, f64), tau: f64) -> f64 {
    y.iter().zip(x).map(|(yt, xt)| check_loss(yt - b.0 - b.1 * xt, tau)).sum()
}

fn noise(t: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..t).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn empirical_quantile_examples() {
    let y = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(empirical_quantile(&y, 0.5).unwrap(), 2.0);
    assert_eq!(empirical_quantile(&y, 0.51).unwrap(), 3.0);
    assert_eq!(empirical_quantile(&y, 0.01).unwrap(), 1.0);
    assert_eq!(empirical_quantile(&y, 0.99).unwrap(), 4.0);
    assert!(empirical_quantile(&[], 0.5).is_err());
    assert!(empirical_quantile(&y, 0.0).is_err());
}

#[test]
fn marginal_qr_matches_lp_oracle() {
    let x = noise(200, 1);
    let e = noise(200, 2);
    let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| 1.0 + 0.7 * a + (1.0 + 0.3 * a.abs()) * b).collect();
    for tau in [0.1, 0.25, 0.5, 0.75, 0.9] {
        let fit = marginal_qr(&y, &x, tau).unwrap();
        let exact = lp_loss(&y, &x, tau);
        assert!(loss(&y, &x, fit, tau) - exact <= 1e-9 * (1.0 + exact), "tau {tau}");
    }
}

#[test]
fn exact_line_is_recovered() {
    let x: Vec<f64> = (0..30).map(|k| k as f64 * 0.1).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
    let (b0, b1) = marginal_qr(&y, &x, 0.5).unwrap();
    assert!((b0 - 2.0).abs() < 1e-10 && (b1 + 3.0).abs() < 1e-10);
    assert!(marginal_qr(&y, &[1.0; 30], 0.5).is_err());
    assert!(marginal_qr(&y[..2], &x[..2], 0.5).is_err());
}

#[test]
fn statistic_separates_signal_from_noise() {
    let t = 3000;
    let x = noise(t, 3);
    let e = noise(t, 4);
    let z = noise(t, 5);
    let y: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + b).collect();
    // signal: slope 1 on a unit-variance predictor
    let signal = screen_statistic(&y, &x, 0.5).unwrap();
    assert!((signal - 1.0).abs() < 0.15, "{signal}");
    let null = screen_statistic(&y, &z, 0.5).unwrap();
    assert!(null < 0.01, "{null}");
}

fn panel_with_one_driver(t: usize, seed: u64) -> TimeSeriesPanel {
    // y_t depends on x_{t-1}; w is unrelated
    let x = noise(t, seed);
    let w = noise(t, seed + 100);
    let e = noise(t, seed + 200);
    let mut y = vec![0.0; t];
    for s in 1..t {
        y[s] = 0.8 * x[s - 1] + 0.5 * e[s];
    }
    TimeSeriesPanel::from_series(vec![y, x, w]).unwrap()
}

#[test]
fn threshold_extremes() {
    let panel = panel_with_one_driver(400, 7);
    let all = screen(&panel, &ScreenConfig::with_default_grid(2, Threshold::Absolute(0.0)).unwrap(), 0).unwrap();
    assert_eq!(all.selected.len(), 6);
    assert_eq!(all.records.len(), 6 * 5);
    let none = screen(&panel, &ScreenConfig::with_default_grid(2, Threshold::Absolute(f64::INFINITY)).unwrap(), 0).unwrap();
    assert!(none.selected.is_empty());
    let top = screen(&panel, &ScreenConfig::with_default_grid(2, Threshold::TopK(1)).unwrap(), 0).unwrap();
    assert_eq!(top.selected, vec![sqvar::simplex::LagPair { series: 2, lag: 1 }]);
}

#[test]
fn selection_shrinks_as_threshold_grows() {
    let panel = panel_with_one_driver(400, 8);
    let mut last = usize::MAX;
    for nu in [0.0, 0.001, 0.01, 0.05, 0.2, 1.0] {
        let cfg = ScreenConfig::with_default_grid(2, Threshold::Absolute(nu)).unwrap();
        let s = screen(&panel, &cfg, 0).unwrap().selected.len();
        assert!(s <= last);
        last = s;
    }
}

#[test]
fn selection_grows_with_the_grid() {
    let panel = panel_with_one_driver(300, 9);
    let nu = Threshold::Absolute(0.005);
    let small = screen(&panel, &ScreenConfig::new(1, vec![0.5], nu).unwrap(), 0).unwrap();
    let large = screen(&panel, &ScreenConfig::new(1, vec![0.1, 0.5, 0.9], nu).unwrap(), 0).unwrap();
    assert!(small.selected.iter().all(|p| large.selected.contains(p)));
}

#[test]
fn config_validation() {
    assert!(ScreenConfig::new(0, vec![0.5], Threshold::TopK(1)).is_err());
    assert!(ScreenConfig::new(1, vec![], Threshold::TopK(1)).is_err());
    assert!(ScreenConfig::new(1, vec![0.5, 0.5], Threshold::TopK(1)).is_err());
    assert!(ScreenConfig::new(1, vec![1.0], Threshold::TopK(1)).is_err());
    assert!(ScreenConfig::new(1, vec![0.5], Threshold::Absolute(-1.0)).is_err());
}

#[test]
fn report_csv_has_one_row_per_record() {
    let panel = panel_with_one_driver(100, 10);
    let r = screen(&panel, &ScreenConfig::with_default_grid(1, Threshold::TopK(2)).unwrap(), 0).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("m_series,m_lag,tau,statistic,selected\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginal_qr_is_optimal(
        pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 5..25),
        tau in 0.05f64..0.95,
    ) {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let fit = marginal_qr(&y, &x, tau).unwrap();
        let exact = lp_loss(&y, &x, tau);
        prop_assert!(loss(&y, &x, fit, tau) - exact <= 1e-8 * (1.0 + exact));
    }
}
