use proptest::prelude::*;
use sqvar::panel::SeriesBounds;
use sqvar::simplex::CoordinateSystem;

fn cs(lb: Vec<f64>, ub: Vec<f64>, p: usize) -> CoordinateSystem {
    CoordinateSystem::new(SeriesBounds::new(lb, ub).unwrap(), p).unwrap()
}

#[test]
fn two_series_forward_and_back() {
    let c = cs(vec![0.0, 0.0], vec![1.0, 1.0], 1);
    let (phi0, phi) = c.qvar_to_sqvar(1.0, &[0.5, 0.3]).unwrap();
    assert!((phi0 - 1.0).abs() < 1e-15);
    assert!((phi[0] - 2.0).abs() < 1e-15 && (phi[1] - 1.6).abs() < 1e-15);
    let (t0, t) = c.sqvar_to_qvar(phi0, &phi, &[true, true]).unwrap();
    assert!((t0 - 1.0).abs() < 1e-15);
    assert!((t[0] - 0.5).abs() < 1e-15 && (t[1] - 0.3).abs() < 1e-15);
}

#[test]
fn single_lag_shifted_bounds() {
    let c = cs(vec![-1.0], vec![1.0], 1);
    let (phi0, phi) = c.qvar_to_sqvar(0.0, &[1.0]).unwrap();
    assert_eq!((phi0, phi[0]), (-1.0, 1.0));
}

#[test]
fn upper_vertex_coordinate() {
    let c = cs(vec![0.0], vec![2.0], 1);
    let row = c.barycentric(&[1.0, 2.0]).unwrap();
    assert_eq!(row.c, vec![1.0]);
    assert_eq!(row.c0, 0.0);
}

#[test]
fn monotone_phi_gives_monotone_quantiles() {
    let c = cs(vec![0.0, -1.0], vec![2.0, 1.0], 2);
    let taus: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
    // nondecreasing phi curves, arbitrary levels
    let phi_at = |tau: f64| -> (f64, Vec<f64>) {
        let phi0 = tau.ln() - (1.0 - tau).ln();
        let phi = vec![3.0 * tau, 1.0 + tau * tau, 2.0 * tau.sqrt(), -4.0 + tau];
        (phi0, phi)
    };
    let w = [1.0, 0.3, 0.9, 1.7, -0.2];
    let row = c.barycentric(&w).unwrap();
    assert!(!row.out_of_bounds);
    let q: Vec<f64> = taus
        .iter()
        .map(|t| {
            let (p0, p) = phi_at(*t);
            row.c0 * p0 + row.c.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    assert!(q.windows(2).all(|w| w[1] >= w[0]));
}

fn system() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, usize)> {
    (1usize..4, 1usize..4).prop_flat_map(|(n, p)| {
        (
            proptest::collection::vec(-5.0f64..5.0, n),
            proptest::collection::vec(0.1f64..10.0, n),
            Just(p),
        )
    })
    .prop_map(|(lb, width, p)| {
        let ub = lb.iter().zip(&width).map(|(a, w)| a + w).collect();
        (lb, ub, p)
    })
}

proptest! {
    #[test]
    fn round_trip_is_identity(
        (lb, ub, p) in system(),
        seed in proptest::collection::vec(-2.0f64..2.0, 13),
    ) {
        let c = cs(lb, ub, p);
        let nl = c.n_lagged();
        let theta: Vec<f64> = (0..nl).map(|k| seed[k % 12]).collect();
        let theta0 = seed[12];
        let (phi0, phi) = c.qvar_to_sqvar(theta0, &theta).unwrap();
        let (t0, t) = c.sqvar_to_qvar(phi0, &phi, &vec![true; nl]).unwrap();
        prop_assert!((t0 - theta0).abs() <= 1e-12 * (1.0 + theta0.abs()) * 10.0);
        for (a, b) in t.iter().zip(&theta) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn quantile_values_agree(
        (lb, ub, p) in system(),
        coef in proptest::collection::vec(-2.0f64..2.0, 13),
        pos in proptest::collection::vec(0.0f64..1.0, 12),
    ) {
        let c = cs(lb.clone(), ub.clone(), p);
        let n = lb.len();
        let nl = c.n_lagged();
        let theta: Vec<f64> = (0..nl).map(|k| coef[k % 12]).collect();
        let (phi0, phi) = c.qvar_to_sqvar(coef[12], &theta).unwrap();
        let mut w = vec![1.0];
        for k in 0..nl {
            let l = k % n;
            w.push(lb[l] + pos[k % 12] * (ub[l] - lb[l]));
        }
        let direct = coef[12] + theta.iter().zip(&w[1..]).map(|(a, b)| a * b).sum::<f64>();
        let row = c.barycentric(&w).unwrap();
        let simplex = row.c0 * phi0 + row.c.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        prop_assert!((direct - simplex).abs() <= 1e-10 * (1.0 + direct.abs()));
        prop_assert!((row.c0 + row.c.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(row.c.iter().all(|v| *v >= 0.0));
        // the vertices reconstruct the design row
        let mut rebuilt = vec![0.0; nl + 1];
        for (k, ck) in std::iter::once(row.c0).chain(row.c.iter().copied()).enumerate() {
            for (r, v) in rebuilt.iter_mut().zip(c.vertex(k)) {
                *r += ck * v;
            }
        }
        for (a, b) in rebuilt.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }
}
