//! Standard pointwise linear quantile regression, one LP per quantile level.
//! Used as the comparison estimator in the simulation studies.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SqvarError};
use crate::panel::LaggedDesign;

/// Minimize `sum_t rho_tau(y_t - x_t' beta)` over unrestricted `beta`.
pub fn linear_qr(rows: &[&[f64]], y: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SqvarError::TauOutOfRange(tau));
    }
    if rows.len() != y.len() || rows.is_empty() {
        return Err(SqvarError::Dimension(format!("{} rows for {} responses", rows.len(), y.len())));
    }
    let width = rows[0].len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let beta: Vec<_> = (0..width)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let mut expr = Vec::with_capacity(width + 2);
    for (x, yt) in rows.iter().zip(y) {
        if x.len() != width {
            return Err(SqvarError::RaggedRow {
                row: 0,
                expected: width,
                found: x.len(),
            });
        }
        let up = lp.add_var(tau, (0.0, f64::INFINITY));
        let down = lp.add_var(1.0 - tau, (0.0, f64::INFINITY));
        expr.clear();
        expr.extend(beta.iter().zip(x.iter()).filter(|(_, c)| **c != 0.0).map(|(v, c)| (*v, *c)));
        expr.push((up, 1.0));
        expr.push((down, -1.0));
        lp.add_constraint(&expr[..], ComparisonOp::Eq, *yt);
    }
    let sol = lp
        .solve()
        .map_err(|e| SqvarError::Numerical(format!("quantile regression LP: {e}")))?;
    Ok(beta.iter().map(|v| sol[*v]).collect())
}

/// Pointwise QR coefficients of one equation on a grid of levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseQr {
    pub taus: Vec<f64>,
    /// `coefs[l] = (theta_0, theta_1, ..., theta_N)` at `taus[l]`.
    pub coefs: Vec<Vec<f64>>,
}

impl PointwiseQr {
    pub fn fit(design: &LaggedDesign, equation: usize, taus: &[f64]) -> Result<Self> {
        if equation >= design.n_series() {
            return Err(SqvarError::InvalidArgument(format!("equation {equation} out of range")));
        }
        let rows: Vec<&[f64]> = (0..design.n_rows()).map(|r| design.row(r)).collect();
        let y = design.response_series(equation);
        let coefs = taus
            .iter()
            .map(|&tau| linear_qr(&rows, &y, tau))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            taus: taus.to_vec(),
            coefs,
        })
    }

    /// Fitted quantile curve over the grid at design row `w = (1, lags)`.
    pub fn curve(&self, w: &[f64]) -> Vec<f64> {
        self.coefs
            .iter()
            .map(|c| c.iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_constant_model() {
        let y = [1.0, 5.0, 2.0, 9.0, 3.0];
        let ones = [1.0];
        let rows: Vec<&[f64]> = vec![&ones; 5];
        let b = linear_qr(&rows, &y, 0.5).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn exact_line_is_recovered() {
        let xs: Vec<[f64; 2]> = (0..20).map(|t| [1.0, t as f64]).collect();
        let rows: Vec<&[f64]> = xs.iter().map(|r| &r[..]).collect();
        let y: Vec<f64> = xs.iter().map(|r| 2.0 - 0.5 * r[1]).collect();
        let b = linear_qr(&rows, &y, 0.3).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-9 && (b[1] + 0.5).abs() < 1e-9);
    }
}
