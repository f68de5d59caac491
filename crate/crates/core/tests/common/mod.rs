//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};

/// Exact minimizer of the unpenalized cone-constrained spline quantile loss
/// `(1/LT) sum_l sum_t rho_tau(y_t - sum_k c_tk b(tau_l)' gamma_k)` written as
/// a linear program with split residuals. Returns the objective and the
/// coefficient rows.
pub fn cone_qr_lp(
    coords: &[Vec<f64>],
    y: &[f64],
    table: &[Vec<f64>],
    taus: &[f64],
) -> (f64, Vec<Vec<f64>>) {
    let rows = coords.len();
    let width = coords[0].len();
    let h = table[0].len();
    let scale = 1.0 / (rows * taus.len()) as f64;
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let gamma: Vec<Vec<minilp::Variable>> = (0..width)
        .map(|_| {
            (0..h)
                .map(|c| {
                    if c == 0 {
                        lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY))
                    } else {
                        lp.add_var(0.0, (0.0, f64::INFINITY))
                    }
                })
                .collect()
        })
        .collect();
    for t in 0..rows {
        for (l, tau) in taus.iter().enumerate() {
            let up = lp.add_var(tau * scale, (0.0, f64::INFINITY));
            let down = lp.add_var((1.0 - tau) * scale, (0.0, f64::INFINITY));
            let mut expr = Vec::with_capacity(width * h + 2);
            for k in 0..width {
                for c in 0..h {
                    let coef = coords[t][k] * table[l][c];
                    if coef != 0.0 {
                        expr.push((gamma[k][c], coef));
                    }
                }
            }
            expr.push((up, 1.0));
            expr.push((down, -1.0));
            lp.add_constraint(&expr[..], ComparisonOp::Eq, y[t]);
        }
    }
    let sol = lp.solve().expect("oracle LP is feasible and bounded");
    let g = gamma
        .iter()
        .map(|row| row.iter().map(|v| sol[*v]).collect())
        .collect();
    (sol.objective(), g)
}

/// A system whose QVAR coefficients are affine in the level,
/// `theta(tau) = a + s tau`, on the degree-1 basis `b(tau) = (1, tau)`.
/// `theta0[i] = (a, s)`, `theta[i][k] = (a, s)` in design order.
pub fn linear_model(
    lb: Vec<f64>,
    ub: Vec<f64>,
    p: usize,
    theta0: &[(f64, f64)],
    theta: &[Vec<(f64, f64)>],
) -> sqvar::model::SqvarModel {
    use sqvar::basis::SplineBasis;
    use sqvar::panel::SeriesBounds;
    use sqvar::simplex::CoordinateSystem;
    use sqvar::solver::{FitDiagnostics, SqvarFit};

    let cs = CoordinateSystem::new(SeriesBounds::new(lb, ub).unwrap(), p).unwrap();
    let fits = theta0
        .iter()
        .zip(theta)
        .enumerate()
        .map(|(i, (t0, t))| {
            let at = |tau: f64| {
                let v: Vec<f64> = t.iter().map(|(a, s)| a + s * tau).collect();
                cs.qvar_to_sqvar(t0.0 + t0.1 * tau, &v).unwrap()
            };
            let (p0, p) = at(0.0);
            let (q0, q) = at(1.0);
            let mut gamma = vec![vec![p0, q0 - p0]];
            for (a, b) in p.iter().zip(&q) {
                // inactive regressors share the intercept row exactly
                if t[gamma.len() - 1] == (0.0, 0.0) {
                    gamma.push(gamma[0].clone());
                } else {
                    gamma.push(vec![*a, b - a]);
                }
            }
            SqvarFit {
                gamma,
                lambda_used: 0.0,
                equation_index: i,
                objective_value: 0.0,
                diagnostics: FitDiagnostics::default(),
            }
        })
        .collect();
    sqvar::model::SqvarModel::new(cs, SplineBasis::equally_spaced(1, 0), fits).unwrap()
}
