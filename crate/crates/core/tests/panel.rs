use proptest::prelude::*;
use sqvar::panel::{build_lagged_design, compute_bounds, load_csv, parse_csv, SeriesBounds, TimeSeriesPanel};
use sqvar::SqvarError;

#[test]
fn load_csv_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    std::fs::write(&path, "a,b\n1,2\n3,4\n5,6\n").unwrap();
    let panel = load_csv(&path, true).unwrap();
    assert_eq!(panel.n_series(), 2);
    assert_eq!(panel.n_obs(), 3);
    assert_eq!(panel.series_names(), ["a", "b"]);
    assert_eq!(panel.series(1), vec![2.0, 4.0, 6.0]);
}

#[test]
fn missing_file_is_io_error() {
    let err = load_csv("/definitely/not/here.csv", false).unwrap_err();
    assert!(matches!(err, SqvarError::Io { .. }), "{err}");
}

#[test]
fn bad_cell_names_location() {
    let err = parse_csv("1,2\n3,abc\n", false).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("abc") && msg.contains('2'), "{msg}");
}

#[test]
fn empty_input_has_no_observations() {
    assert!(matches!(parse_csv("", false), Err(SqvarError::NoObservations)));
    assert!(matches!(parse_csv("x,y\n", true), Err(SqvarError::NoObservations)));
}

#[test]
fn margin_rule() {
    let panel = TimeSeriesPanel::from_series(vec![vec![0.0, 10.0]]).unwrap();
    let b = compute_bounds(&panel, 0.05).unwrap();
    assert!((b.lb[0] + 0.5).abs() < 1e-15 && (b.ub[0] - 10.5).abs() < 1e-15);
    let flat = TimeSeriesPanel::from_series(vec![vec![5.0; 3]]).unwrap();
    assert!(matches!(compute_bounds(&flat, 0.0), Err(SqvarError::DegenerateSeries { .. })));
}

#[test]
fn bounds_json_shape() {
    let b = SeriesBounds::new(vec![0.0, -1.0], vec![1.0, 2.0]).unwrap();
    let v: serde_json::Value = serde_json::to_value(&b).unwrap();
    assert_eq!(v["lb"][1], -1.0);
    assert_eq!(v["ub"][1], 2.0);
}

#[test]
fn csv_write_read_round_trip() {
    let panel = TimeSeriesPanel::from_series(vec![vec![0.1, 0.2, 0.3], vec![-1.5, 2.25, 1e-7]]).unwrap();
    let mut buf = Vec::new();
    panel.write_csv(&mut buf).unwrap();
    let back = parse_csv(std::str::from_utf8(&buf).unwrap(), true).unwrap();
    for i in 0..2 {
        assert_eq!(back.series(i), panel.series(i));
    }
}

fn panel_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1usize..4, 3usize..30).prop_flat_map(|(n, t)| {
        (
            proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, t), n),
            1usize..t,
        )
    })
}

proptest! {
    #[test]
    fn design_rows_are_shifted_observations((series, p) in panel_strategy()) {
        let panel = TimeSeriesPanel::from_series(series.clone()).unwrap();
        let d = build_lagged_design(&panel, p).unwrap();
        let n = series.len();
        let t = series[0].len();
        prop_assert_eq!(d.n_rows(), t - p);
        prop_assert_eq!(d.width(), n * p + 1);
        for r in 0..d.n_rows() {
            let row = d.row(r);
            prop_assert_eq!(row[0], 1.0);
            for j in 1..=p {
                for l in 0..n {
                    prop_assert_eq!(row[1 + (j - 1) * n + l].to_bits(), series[l][r + p - j].to_bits());
                }
            }
            for l in 0..n {
                prop_assert_eq!(d.response(r)[l].to_bits(), series[l][r + p].to_bits());
            }
        }
    }

    #[test]
    fn bounds_idempotent_and_enclosing((series, _p) in panel_strategy()) {
        prop_assume!(series.iter().all(|s| s.iter().any(|v| *v != s[0])));
        let panel = TimeSeriesPanel::from_series(series.clone()).unwrap();
        let b = compute_bounds(&panel, 0.0).unwrap();
        for (i, s) in series.iter().enumerate() {
            prop_assert!(s.iter().all(|v| b.contains(i, *v)));
        }
        let clipped: Vec<Vec<f64>> = series
            .iter()
            .enumerate()
            .map(|(i, s)| s.iter().map(|v| v.clamp(b.lb[i], b.ub[i])).collect())
            .collect();
        let b2 = compute_bounds(&TimeSeriesPanel::from_series(clipped).unwrap(), 0.0).unwrap();
        prop_assert_eq!(b, b2);
    }
}
