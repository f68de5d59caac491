//! A fitted system: one [`SqvarFit`] per equation plus the coordinate system
//! and basis they were fitted in.

use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::error::{Result, SqvarError};
use crate::simplex::CoordinateSystem;
use crate::solver::SqvarFit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqvarModel {
    pub cs: CoordinateSystem,
    pub basis: SplineBasis,
    pub fits: Vec<SqvarFit>,
}

impl SqvarModel {
    pub fn new(cs: CoordinateSystem, basis: SplineBasis, fits: Vec<SqvarFit>) -> Result<Self> {
        if fits.len() != cs.n_series() {
            return Err(SqvarError::Dimension(format!(
                "{} fits for {} series",
                fits.len(),
                cs.n_series()
            )));
        }
        for f in &fits {
            if f.n_lagged() != cs.n_lagged() || f.basis_size() != basis.size() {
                return Err(SqvarError::Dimension(format!(
                    "fit for equation {} has shape {}x{}, expected {}x{}",
                    f.equation_index,
                    f.gamma.len(),
                    f.basis_size(),
                    cs.n_lagged() + 1,
                    basis.size()
                )));
            }
        }
        Ok(Self { cs, basis, fits })
    }

    pub fn n_series(&self) -> usize {
        self.cs.n_series()
    }

    pub fn lag_order(&self) -> usize {
        self.cs.lag_order()
    }

    /// Conditional quantile of equation `i` at level `tau` given lagged values
    /// `(Y_{t-1}, ..., Y_{t-p})` stacked in design order.
    pub fn quantile(&self, i: usize, lags: &[f64], tau: f64) -> f64 {
        let mut b = vec![0.0; self.basis.size()];
        self.basis.eval_into(tau, &mut b);
        let row = self.cs.barycentric_lags(lags);
        self.fits[i].quantile(&row.full(), &b)
    }

    /// QVAR coefficients `(theta_0(tau), theta(tau))` of equation `i`.
    /// Collapsed groups map to exact zeros.
    pub fn qvar_coefficients(&self, i: usize, tau: f64) -> Result<(f64, Vec<f64>)> {
        let b = self.basis.eval(tau)?;
        qvar_coefficients_at(&self.fits[i], &self.cs, &b)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: Self = serde_json::from_str(text)?;
        m.basis.rebuild();
        let SqvarModel { cs, basis, fits } = m;
        Self::new(cs, basis, fits)
    }
}

/// QVAR coefficients of one fit at basis values `b`.
pub fn qvar_coefficients_at(fit: &SqvarFit, cs: &CoordinateSystem, b: &[f64]) -> Result<(f64, Vec<f64>)> {
    let phi = fit.phi_at(b);
    let active: Vec<bool> = (0..fit.n_lagged())
        .map(|k| fit.gamma[k + 1] != fit.gamma[0])
        .collect();
    cs.sqvar_to_qvar(phi[0], &phi[1..], &active)
}
