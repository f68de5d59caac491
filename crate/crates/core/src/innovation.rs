//! Rank recovery, the equicorrelated Gaussian copula, and innovation moments.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::SplineBasis;
use crate::error::{Result, SqvarError};
use crate::model::{qvar_coefficients_at, SqvarModel};
use crate::panel::LaggedDesign;
use crate::solver::SqvarFit;

pub const RANK_FLOOR: f64 = 1e-4;
pub const RANK_CEIL: f64 = 1.0 - 1e-4;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Standard normal quantile.
pub fn norm_inv(u: f64) -> f64 {
    std_normal().inverse_cdf(u)
}

/// Standard normal distribution function.
pub fn norm_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

/// Result of inverting one fitted quantile curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankRecovery {
    pub u: f64,
    pub clamped: bool,
}

/// Solve `Q(u) = y` for `u`, where `Q(u) = coords' Phi(u)`.
pub fn recover_rank(fit: &SqvarFit, basis: &SplineBasis, coords: &[f64], y: f64) -> Result<RankRecovery> {
    let mut b = vec![0.0; basis.size()];
    let mut q = |u: f64| {
        basis.eval_into(u, &mut b);
        fit.quantile(coords, &b)
    };
    let (mut lo, mut hi) = (RANK_FLOOR, RANK_CEIL);
    let (q_lo, q_hi) = (q(lo), q(hi));
    let scale = q_hi - q_lo;
    if !(scale > 1e-14 * (q_lo.abs() + q_hi.abs()).max(1e-300)) {
        return Err(SqvarError::NonInvertible);
    }
    if y <= q_lo {
        return Ok(RankRecovery { u: lo, clamped: true });
    }
    if y >= q_hi {
        return Ok(RankRecovery { u: hi, clamped: true });
    }
    let tol = 1e-8 * scale;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let v = q(mid);
        if (v - y).abs() <= tol && hi - lo < 1e-6 {
            break;
        }
        if v < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 {
            mid = 0.5 * (lo + hi);
            break;
        }
    }
    Ok(RankRecovery { u: mid, clamped: false })
}

/// Recovered ranks, one row per series over the `T - p` design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMatrix {
    pub u_hat: Vec<Vec<f64>>,
    pub clamped: usize,
}

impl RankMatrix {
    pub fn new(u_hat: Vec<Vec<f64>>) -> Result<Self> {
        let t = u_hat.first().map_or(0, Vec::len);
        if u_hat.iter().any(|r| r.len() != t) {
            return Err(SqvarError::Dimension("rank rows of unequal length".into()));
        }
        if let Some(v) = u_hat.iter().flatten().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(SqvarError::TauOutOfRange(*v));
        }
        Ok(Self { u_hat, clamped: 0 })
    }

    pub fn n_series(&self) -> usize {
        self.u_hat.len()
    }

    pub fn n_obs(&self) -> usize {
        self.u_hat.first().map_or(0, Vec::len)
    }

    /// Long format: `series,t,u`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_long(writer, "u", &self.u_hat)
    }
}

fn write_long<W: std::io::Write>(writer: W, name: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series", "t", name])?;
    for (i, row) in rows.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            w.write_record([(i + 1).to_string(), (t + 1).to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| SqvarError::Io {
        path: "<csv writer>".into(),
        source: e,
    })
}

/// Ranks of every in-sample observation under the fitted model.
pub fn recover_ranks(model: &SqvarModel, design: &LaggedDesign) -> Result<RankMatrix> {
    let n = model.n_series();
    if design.n_series() != n || design.lag_order() != model.lag_order() {
        return Err(SqvarError::Dimension("design does not match the model".into()));
    }
    let rows: Vec<Vec<f64>> = (0..design.n_rows())
        .into_par_iter()
        .map(|r| model.cs.barycentric(design.row(r)).map(|c| c.full()))
        .collect::<Result<_>>()?;
    let mut u_hat = Vec::with_capacity(n);
    let mut clamped = 0;
    for i in 0..n {
        let rec: Vec<RankRecovery> = rows
            .par_iter()
            .enumerate()
            .map(|(r, c)| recover_rank(&model.fits[i], &model.basis, c, design.response(r)[i]))
            .collect::<Result<_>>()?;
        clamped += rec.iter().filter(|r| r.clamped).count();
        u_hat.push(rec.into_iter().map(|r| r.u).collect());
    }
    if clamped > 0 {
        log::info!("{clamped} ranks clamped to [{RANK_FLOOR}, {RANK_CEIL}]");
    }
    Ok(RankMatrix { u_hat, clamped })
}

/// Gaussian copula with equicorrelation matrix `(1 - kappa) I + kappa 11'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopulaModel {
    pub kappa: f64,
    pub n: usize,
    pub loglik: f64,
    /// The likelihood maximum sits on the edge of the search box.
    #[serde(default)]
    pub at_boundary: bool,
}

impl CopulaModel {
    pub fn new(kappa: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(SqvarError::InvalidArgument("copula dimension must be positive".into()));
        }
        let lower = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
        if !(kappa > lower && kappa < 1.0) {
            return Err(SqvarError::InvalidArgument(format!(
                "equicorrelation {kappa} outside ({lower}, 1) for dimension {n}"
            )));
        }
        Ok(Self {
            kappa,
            n,
            loglik: f64::NAN,
            at_boundary: false,
        })
    }

    pub fn independent(n: usize) -> Self {
        Self::new(0.0, n).expect("zero correlation is always valid")
    }

    /// Normal scores `Z ~ N(0, R)` via the symmetric square root of `R`.
    pub fn sample_scores<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let e = standard_normals(self.n, rng);
        self.scores_from_normals(&e)
    }

    /// `R^{1/2} e` for independent standard normals `e`.
    pub fn scores_from_normals(&self, e: &[f64]) -> Vec<f64> {
        equi_transform(self.kappa, e, 1.0)
    }

    /// Uniform ranks with this copula.
    pub fn sample_ranks<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_scores(rng).into_iter().map(norm_cdf).collect()
    }

    /// Ranks from independent standard normals `e` (length `n`).
    pub fn ranks_from_normals(&self, e: &[f64]) -> Vec<f64> {
        self.scores_from_normals(e).into_iter().map(norm_cdf).collect()
    }

    /// Ranks drawn conditionally on `U_j = u_j`; entry `j` of the result is `u_j`.
    pub fn sample_ranks_given<R: Rng + ?Sized>(&self, j: usize, u_j: f64, rng: &mut R) -> Vec<f64> {
        let e = standard_normals(self.n, rng);
        self.ranks_given_from_normals(j, u_j, &e)
    }

    /// Conditional ranks built from `e` (length `n`; entry `j` is ignored).
    pub fn ranks_given_from_normals(&self, j: usize, u_j: f64, e: &[f64]) -> Vec<f64> {
        let z_star = norm_inv(u_j);
        let k = self.kappa;
        let rest_e: Vec<f64> = e.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, v)| *v).collect();
        // The remaining scores are again equicorrelated: mean kappa z*,
        // covariance (1 - kappa) I + kappa (1 - kappa) 11'.
        let rest = if rest_e.is_empty() {
            Vec::new()
        } else {
            equi_transform(k / (1.0 + k), &rest_e, ((1.0 - k) * (1.0 + k)).sqrt())
        };
        let mut out = Vec::with_capacity(self.n);
        let mut it = rest.into_iter();
        for i in 0..self.n {
            if i == j {
                out.push(u_j);
            } else {
                out.push(norm_cdf(k * z_star + it.next().expect("n - 1 scores")));
            }
        }
        out
    }

    /// Log-likelihood of normal scores summarized by `sum ||z||^2`,
    /// `sum (1'z)^2` and the number of observations.
    fn loglik_from(&self, s: f64, q: f64, t: f64) -> f64 {
        equi_loglik(self.kappa, self.n as f64, s, q, t)
    }

    /// Log-likelihood of a rank matrix.
    pub fn loglik_of(&self, ranks: &RankMatrix) -> Result<f64> {
        if ranks.n_series() != self.n {
            return Err(SqvarError::Dimension("rank matrix dimension differs".into()));
        }
        let (s, q) = score_moments(ranks);
        Ok(self.loglik_from(s, q, ranks.n_obs() as f64))
    }
}

/// `n` independent standard normal draws.
pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn equi_transform(kappa: f64, e: &[f64], scale: f64) -> Vec<f64> {
    let n = e.len();
    let mean = e.iter().sum::<f64>() / n as f64;
    let a = (1.0 - kappa).sqrt();
    let b = (1.0 + (n as f64 - 1.0) * kappa).sqrt();
    e.iter().map(|v| scale * (a * v + (b - a) * mean)).collect()
}

fn equi_loglik(k: f64, n: f64, s: f64, q: f64, t: f64) -> f64 {
    let d = 1.0 + (n - 1.0) * k;
    let log_det = (n - 1.0) * (1.0 - k).ln() + d.ln();
    let quad = (s - k / d * q) / (1.0 - k);
    -0.5 * t * log_det - 0.5 * (quad - s)
}

fn score_moments(ranks: &RankMatrix) -> (f64, f64) {
    let (mut s, mut q) = (0.0, 0.0);
    for t in 0..ranks.n_obs() {
        let mut sum = 0.0;
        for row in &ranks.u_hat {
            let z = norm_inv(row[t]);
            s += z * z;
            sum += z;
        }
        q += sum * sum;
    }
    (s, q)
}

/// Maximum-likelihood equicorrelation by golden-section search over
/// `(-1/(n-1) + 1e-4, 1 - 1e-4)`.
pub fn fit_gaussian_copula(ranks: &RankMatrix) -> Result<CopulaModel> {
    let n = ranks.n_series();
    let t = ranks.n_obs();
    if n < 2 {
        return Err(SqvarError::InvalidArgument("copula needs at least two series".into()));
    }
    if t < 10 {
        return Err(SqvarError::InvalidArgument(format!("{t} rank vectors, need at least 10")));
    }
    for (i, row) in ranks.u_hat.iter().enumerate() {
        if row.iter().all(|v| *v == row[0]) {
            return Err(SqvarError::DegenerateSeries { series: i + 1 });
        }
    }
    let (s, q) = score_moments(ranks);
    let nf = n as f64;
    let tf = t as f64;
    let f = |k: f64| equi_loglik(k, nf, s, q, tf);
    let lo = -1.0 / (nf - 1.0) + 1e-4;
    let hi = 1.0 - 1e-4;

    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - ratio * (b - a);
    let mut x2 = a + ratio * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > 1e-10 {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - ratio * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + ratio * (b - a);
            f2 = f(x2);
        }
    }
    let mut best = (0.5 * (a + b), f(0.5 * (a + b)));
    for cand in [lo, hi, 0.0] {
        let v = f(cand);
        if v > best.1 {
            best = (cand, v);
        }
    }
    let width = hi - lo;
    let at_boundary = best.0 - lo < 1e-6 * width || hi - best.0 < 1e-6 * width;
    if at_boundary {
        log::warn!("copula likelihood maximized at the box edge (kappa = {})", best.0);
    }
    Ok(CopulaModel {
        kappa: best.0,
        n,
        loglik: best.1,
        at_boundary,
    })
}

/// Innovations `theta_0(U) - mu` and their covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnovationEstimates {
    pub eps_hat: Vec<Vec<f64>>,
    pub mu_hat: Vec<f64>,
    pub cov_hat: Vec<Vec<f64>>,
}

impl InnovationEstimates {
    /// Long format: `series,t,eps`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        write_long(writer, "eps", &self.eps_hat)
    }
}

/// Mean that is exact for constant input.
fn shifted_mean(x: &[f64]) -> f64 {
    let c = x[0];
    c + x.iter().map(|v| v - c).sum::<f64>() / x.len() as f64
}

pub fn innovation_covariance(model: &SqvarModel, ranks: &RankMatrix) -> Result<InnovationEstimates> {
    let n = model.n_series();
    if ranks.n_series() != n {
        return Err(SqvarError::Dimension(format!(
            "{} rank rows for {n} equations",
            ranks.n_series()
        )));
    }
    let t = ranks.n_obs();
    if t == 0 {
        return Err(SqvarError::NoObservations);
    }
    let h = model.basis.size();
    let mut theta0 = Vec::with_capacity(n);
    for i in 0..n {
        let mut b = vec![0.0; h];
        let row = ranks.u_hat[i]
            .iter()
            .map(|u| {
                model.basis.eval_into(*u, &mut b);
                qvar_coefficients_at(&model.fits[i], &model.cs, &b).map(|(t0, _)| t0)
            })
            .collect::<Result<Vec<f64>>>()?;
        theta0.push(row);
    }
    let mu_hat: Vec<f64> = theta0.iter().map(|r| shifted_mean(r)).collect();
    let eps_hat: Vec<Vec<f64>> = theta0
        .iter()
        .zip(&mu_hat)
        .map(|(r, m)| r.iter().map(|v| v - m).collect())
        .collect();
    let mut cov_hat = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a..n {
            let v = eps_hat[a].iter().zip(&eps_hat[b]).map(|(x, y)| x * y).sum::<f64>() / t as f64;
            cov_hat[a][b] = v;
            cov_hat[b][a] = v;
        }
    }
    Ok(InnovationEstimates {
        eps_hat,
        mu_hat,
        cov_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loglik_zero_at_independence() {
        assert!(equi_loglik(0.0, 3.0, 10.0, 4.0, 5.0).abs() < 1e-14);
    }

    #[test]
    fn loglik_matches_dense_density() {
        // direct evaluation of -1/2 ln det R - 1/2 z'(R^-1 - I) z for n = 3
        let k: f64 = 0.4;
        let z = [0.3, -1.2, 0.7];
        let r = nalgebra::Matrix3::from_fn(|a, b| if a == b { 1.0 } else { k });
        let ri = r.try_inverse().unwrap();
        let zv = nalgebra::Vector3::from_row_slice(&z);
        let dense = -0.5 * r.determinant().ln() - 0.5 * (zv.dot(&(ri * zv)) - zv.dot(&zv));
        let s: f64 = z.iter().map(|v| v * v).sum();
        let q: f64 = z.iter().sum::<f64>().powi(2);
        assert!((equi_loglik(k, 3.0, s, q, 1.0) - dense).abs() < 1e-12);
    }

    #[test]
    fn sampled_scores_have_target_correlation() {
        for kappa in [-0.3, 0.0, 0.6] {
            let c = CopulaModel::new(kappa, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let m = 40_000;
            let (mut s01, mut s00) = (0.0, 0.0);
            for _ in 0..m {
                let z = c.sample_scores(&mut rng);
                s01 += z[0] * z[1];
                s00 += z[0] * z[0];
            }
            assert!((s00 / m as f64 - 1.0).abs() < 0.03);
            assert!((s01 / m as f64 - kappa).abs() < 0.03, "kappa {kappa}");
        }
    }

    #[test]
    fn conditional_draw_moments() {
        let kappa = 0.5;
        let c = CopulaModel::new(kappa, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z_star = 1.0;
        let u = norm_cdf(z_star);
        let m = 40_000;
        let (mut mean, mut var, mut cross) = (0.0, 0.0, 0.0);
        for _ in 0..m {
            let r = c.sample_ranks_given(1, u, &mut rng);
            assert_eq!(r[1], u);
            let (a, b) = (norm_inv(r[0]), norm_inv(r[2]));
            mean += a;
            var += a * a;
            cross += a * b;
        }
        let mf = m as f64;
        mean /= mf;
        let var = var / mf - mean * mean;
        let cov = cross / mf - mean * mean;
        // Gaussian conditioning: mean kappa z*, variance 1 - kappa^2,
        // covariance kappa - kappa^2
        assert!((mean - kappa * z_star).abs() < 0.02);
        assert!((var - (1.0 - kappa * kappa)).abs() < 0.03);
        assert!((cov - (kappa - kappa * kappa)).abs() < 0.03);
    }

    #[test]
    fn rejects_non_psd_kappa() {
        assert!(CopulaModel::new(-0.5, 3).is_err());
        assert!(CopulaModel::new(1.0, 2).is_err());
        assert!(CopulaModel::new(-0.49, 3).is_ok());
    }

    #[test]
    fn shifted_mean_exact_for_constants() {
        let x = vec![0.1; 7];
        assert_eq!(shifted_mean(&x), 0.1);
    }
}
