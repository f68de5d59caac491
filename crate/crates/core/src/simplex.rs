//! Max-min barycentric coordinates and the exact QVAR <-> SQVAR coefficient map.
//!
//! The vertices are `v_0 = (1, lb, ..., lb)` and, for lagged regressor
//! `(l, j)`, the vertex `v_0` with its `(l, j)` entry raised by `N * Delta_l`.
//! Coordinates of a design row are then `c_{l,t-j} = (y_{l,t-j} - lb_l) / (N Delta_l)`
//! and `c_0 = 1 - sum c`. Both maps below act on values at a single quantile
//! level (or, by linearity, on spline coefficient vectors).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SqvarError};
use crate::panel::SeriesBounds;

/// A lagged regressor `(series l, lag j)`, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LagPair {
    pub series: usize,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSystem {
    bounds: SeriesBounds,
    n: usize,
    p: usize,
    delta: Vec<f64>,
}

/// Barycentric coordinates of one design row, lagged entries in design order.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricRow {
    pub c0: f64,
    pub c: Vec<f64>,
    /// Some lagged value lay outside its bounds, so a coordinate is negative.
    pub out_of_bounds: bool,
}

impl BarycentricRow {
    /// `(c0, c_1, ..., c_N)`.
    pub fn full(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.c.len() + 1);
        v.push(self.c0);
        v.extend_from_slice(&self.c);
        v
    }
}

impl CoordinateSystem {
    pub fn new(bounds: SeriesBounds, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(SqvarError::InvalidArgument("lag order must be positive".into()));
        }
        let n = bounds.len();
        let delta: Vec<f64> = (0..n).map(|i| bounds.range(i)).collect();
        if let Some(i) = delta.iter().position(|d| !(*d > 0.0)) {
            return Err(SqvarError::DegenerateSeries { series: i + 1 });
        }
        Ok(Self { bounds, n, p, delta })
    }

    pub fn bounds(&self) -> &SeriesBounds {
        &self.bounds
    }

    pub fn n_series(&self) -> usize {
        self.n
    }

    pub fn lag_order(&self) -> usize {
        self.p
    }

    /// `N = n p`.
    pub fn n_lagged(&self) -> usize {
        self.n * self.p
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Position of `(l, j)` among the lagged regressors (0-based).
    pub fn lag_index(&self, pair: LagPair) -> usize {
        (pair.lag - 1) * self.n + (pair.series - 1)
    }

    pub fn lag_pair(&self, k: usize) -> LagPair {
        LagPair {
            series: k % self.n + 1,
            lag: k / self.n + 1,
        }
    }

    /// Series index of lagged regressor `k`.
    #[inline]
    fn series_of(&self, k: usize) -> usize {
        k % self.n
    }

    /// Coordinates of a design row `(1, Y_{t-1}, ..., Y_{t-p})`.
    pub fn barycentric(&self, w: &[f64]) -> Result<BarycentricRow> {
        if w.len() != self.n_lagged() + 1 {
            return Err(SqvarError::Dimension(format!(
                "design row of width {}, expected {}",
                w.len(),
                self.n_lagged() + 1
            )));
        }
        Ok(self.barycentric_lags(&w[1..]))
    }

    /// Coordinates from the lagged values alone (no leading 1).
    pub fn barycentric_lags(&self, lags: &[f64]) -> BarycentricRow {
        debug_assert_eq!(lags.len(), self.n_lagged());
        let nn = self.n_lagged() as f64;
        let mut out_of_bounds = false;
        let c: Vec<f64> = lags
            .iter()
            .enumerate()
            .map(|(k, &y)| {
                let l = self.series_of(k);
                if !self.bounds.contains(l, y) {
                    out_of_bounds = true;
                }
                (y - self.bounds.lb[l]) / (nn * self.delta[l])
            })
            .collect();
        let c0 = 1.0 - c.iter().sum::<f64>();
        BarycentricRow {
            c0,
            c,
            out_of_bounds,
        }
    }

    /// Vertex `v_k` (k = 0 for the lower vertex, k >= 1 for lagged regressor k-1).
    pub fn vertex(&self, k: usize) -> Vec<f64> {
        let nn = self.n_lagged();
        let mut v = Vec::with_capacity(nn + 1);
        v.push(1.0);
        for m in 0..nn {
            v.push(self.bounds.lb[self.series_of(m)]);
        }
        if k > 0 {
            let l = self.series_of(k - 1);
            v[k] += nn as f64 * self.delta[l];
        }
        v
    }

    /// QVAR coefficients at one level to SQVAR coefficients.
    pub fn qvar_to_sqvar(&self, theta0: f64, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(theta.len())?;
        let phi0 = theta0
            + theta
                .iter()
                .enumerate()
                .map(|(k, t)| self.bounds.lb[self.series_of(k)] * t)
                .sum::<f64>();
        let nn = self.n_lagged() as f64;
        let phi = theta
            .iter()
            .enumerate()
            .map(|(k, t)| nn * self.delta[self.series_of(k)] * t + phi0)
            .collect();
        Ok((phi0, phi))
    }

    /// SQVAR coefficients back to QVAR coefficients. Inactive regressors get a
    /// zero coefficient regardless of their `phi` entry.
    pub fn sqvar_to_qvar(&self, phi0: f64, phi: &[f64], active: &[bool]) -> Result<(f64, Vec<f64>)> {
        self.check_len(phi.len())?;
        self.check_len(active.len())?;
        let nn = self.n_lagged() as f64;
        let theta: Vec<f64> = phi
            .iter()
            .zip(active)
            .enumerate()
            .map(|(k, (f, &on))| {
                if on {
                    (f - phi0) / (nn * self.delta[self.series_of(k)])
                } else {
                    0.0
                }
            })
            .collect();
        let theta0 = phi0
            - theta
                .iter()
                .enumerate()
                .map(|(k, t)| self.bounds.lb[self.series_of(k)] * t)
                .sum::<f64>();
        Ok((theta0, theta))
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_lagged() {
            return Err(SqvarError::Dimension(format!(
                "coefficient vector of length {len}, expected {}",
                self.n_lagged()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cs(lb: Vec<f64>, ub: Vec<f64>, p: usize) -> CoordinateSystem {
        CoordinateSystem::new(SeriesBounds::new(lb, ub).unwrap(), p).unwrap()
    }

    #[test]
    fn lower_vertex_case() {
        let c = cs(vec![0.0, -1.0], vec![1.0, 1.0], 2);
        let row = c.barycentric(&[1.0, 0.0, -1.0, 0.0, -1.0]).unwrap();
        assert_eq!(row.c0, 1.0);
        assert!(row.c.iter().all(|v| *v == 0.0));
        assert!(!row.out_of_bounds);
    }

    #[test]
    fn upper_value_single_lag() {
        let c = cs(vec![0.0], vec![2.0], 1);
        let row = c.barycentric(&[1.0, 2.0]).unwrap();
        assert_eq!(row.c, vec![1.0]);
        assert_eq!(row.c0, 0.0);
    }

    #[test]
    fn reconstructs_design_row() {
        let c = cs(vec![0.0, -2.0], vec![3.0, 1.0], 2);
        let w = [1.0, 1.5, 0.2, 2.9, -1.7];
        let row = c.barycentric(&w).unwrap();
        let full = row.full();
        assert!((full.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rebuilt = vec![0.0; w.len()];
        for (k, ck) in full.iter().enumerate() {
            for (r, v) in rebuilt.iter_mut().zip(c.vertex(k)) {
                *r += ck * v;
            }
        }
        for (a, b) in rebuilt.iter().zip(w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_bounds_is_flagged_not_rejected() {
        let c = cs(vec![0.0], vec![1.0], 1);
        let row = c.barycentric(&[1.0, -0.5]).unwrap();
        assert!(row.out_of_bounds);
        assert!(row.c[0] < 0.0);
    }

    #[test]
    fn zero_theta_gives_flat_phi() {
        let c = cs(vec![0.3, -1.0], vec![2.0, 4.0], 1);
        let (phi0, phi) = c.qvar_to_sqvar(1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(phi0, 1.0);
        assert_eq!(phi, vec![1.0, 1.0]);
    }

    #[test]
    fn forward_two_series() {
        let c = cs(vec![0.0, 0.0], vec![1.0, 1.0], 1);
        let (phi0, phi) = c.qvar_to_sqvar(1.0, &[0.5, 0.3]).unwrap();
        assert!((phi0 - 1.0).abs() < 1e-15);
        assert!((phi[0] - 2.0).abs() < 1e-15);
        assert!((phi[1] - 1.6).abs() < 1e-15);
        let (t0, t) = c.sqvar_to_qvar(phi0, &phi, &[true, true]).unwrap();
        assert!((t0 - 1.0).abs() < 1e-15);
        assert!((t[0] - 0.5).abs() < 1e-15 && (t[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn forward_shifted_bounds() {
        let c = cs(vec![-1.0], vec![1.0], 1);
        let (phi0, phi) = c.qvar_to_sqvar(0.0, &[1.0]).unwrap();
        assert_eq!(phi0, -1.0);
        assert_eq!(phi, vec![1.0]);
    }

    #[test]
    fn inactive_collapse() {
        let c = cs(vec![0.0, 1.0], vec![1.0, 2.0], 1);
        let (t0, t) = c.sqvar_to_qvar(0.7, &[0.7, 0.7], &[false, false]).unwrap();
        assert_eq!(t0, 0.7);
        assert_eq!(t, vec![0.0, 0.0]);
    }

    #[test]
    fn lag_indexing_is_block_ordered() {
        let c = cs(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0], 2);
        assert_eq!(c.lag_index(LagPair { series: 1, lag: 1 }), 0);
        assert_eq!(c.lag_index(LagPair { series: 3, lag: 1 }), 2);
        assert_eq!(c.lag_index(LagPair { series: 1, lag: 2 }), 3);
        for k in 0..6 {
            assert_eq!(c.lag_index(c.lag_pair(k)), k);
        }
    }
}
