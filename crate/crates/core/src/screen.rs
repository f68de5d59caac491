//! Quantile-adaptive marginal screening of lagged predictors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SqvarError};
use crate::panel::{build_lagged_design, TimeSeriesPanel};
use crate::simplex::LagPair;
use crate::solver::check_loss;

/// How the screening threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// Keep predictors whose statistic reaches `nu` at some grid level.
    Absolute(f64),
    /// Keep the `k` predictors with the largest max-over-grid statistic.
    TopK(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenConfig {
    pub p: usize,
    pub tau_grid: Vec<f64>,
    pub threshold: Threshold,
}

impl ScreenConfig {
    pub fn new(p: usize, tau_grid: Vec<f64>, threshold: Threshold) -> Result<Self> {
        if p == 0 {
            return Err(SqvarError::InvalidArgument("lag order must be positive".into()));
        }
        if tau_grid.is_empty() {
            return Err(SqvarError::InvalidArgument("empty screening grid".into()));
        }
        if let Some(t) = tau_grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(SqvarError::TauOutOfRange(*t));
        }
        if tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SqvarError::InvalidArgument(
                "screening grid must be strictly increasing".into(),
            ));
        }
        if let Threshold::Absolute(nu) = threshold {
            if nu.is_nan() || nu < 0.0 {
                return Err(SqvarError::InvalidArgument(format!("threshold {nu}")));
            }
        }
        Ok(Self { p, tau_grid, threshold })
    }

    pub fn with_default_grid(p: usize, threshold: Threshold) -> Result<Self> {
        Self::new(p, vec![0.1, 0.25, 0.5, 0.75, 0.9], threshold)
    }
}

/// One row of the screening report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRecord {
    pub m_series: usize,
    pub m_lag: usize,
    pub tau: f64,
    pub statistic: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub selected: Vec<LagPair>,
    pub records: Vec<ScreenRecord>,
}

impl ScreenResult {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| SqvarError::Io {
            path: "<screen report>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// `inf { y : F_hat(y) >= tau }` on already sorted data.
pub fn empirical_quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    let n = sorted.len();
    let k = ((tau * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(n) - 1]
}

pub fn empirical_quantile(y: &[f64], tau: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(SqvarError::NoObservations);
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SqvarError::TauOutOfRange(tau));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(empirical_quantile_sorted(&sorted, tau))
}

fn line_loss(y: &[f64], x: &[f64], b0: f64, b1: f64, tau: f64) -> f64 {
    y.iter()
        .zip(x)
        .map(|(yt, xt)| check_loss(yt - b0 - b1 * xt, tau))
        .sum()
}

// Best intercept for a fixed slope: the tau-quantile of the residuals.
fn profile(y: &[f64], x: &[f64], slope: f64, tau: f64, buf: &mut Vec<f64>) -> (f64, f64) {
    buf.clear();
    buf.extend(y.iter().zip(x).map(|(a, b)| a - slope * b));
    let n = buf.len();
    let k = ((tau * n as f64) - 1e-9).ceil().max(1.0) as usize - 1;
    let (_, b0, _) = buf.select_nth_unstable_by(k.min(n - 1), f64::total_cmp);
    let b0 = *b0;
    (b0, line_loss(y, x, b0, slope, tau))
}

// Exact best slope for lines through the anchor point (xa, ya): a weighted
// quantile of the pairwise slopes.
fn slope_through(y: &[f64], x: &[f64], xa: f64, ya: f64, tau: f64) -> Option<f64> {
    let mut pts: Vec<(f64, f64, f64)> = Vec::with_capacity(y.len());
    let mut start = 0.0;
    for (yt, xt) in y.iter().zip(x) {
        let d = xt - xa;
        if d == 0.0 {
            continue;
        }
        let r = (yt - ya) / d;
        let w = d.abs();
        // level of the check function in the slope variable
        let level = if d > 0.0 { tau } else { 1.0 - tau };
        start -= w * level;
        pts.push((r, w, level));
    }
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut slope = start;
    for (r, w, _) in &pts {
        slope += w;
        if slope >= 0.0 {
            return Some(*r);
        }
    }
    pts.last().map(|p| p.0)
}

/// Two-parameter quantile regression of `y` on `(1, x)`.
pub fn marginal_qr(y: &[f64], x: &[f64], tau: f64) -> Result<(f64, f64)> {
    if y.len() != x.len() {
        return Err(SqvarError::Dimension(format!(
            "{} responses and {} predictor values",
            y.len(),
            x.len()
        )));
    }
    if y.len() < 3 {
        return Err(SqvarError::InvalidArgument("need at least 3 observations".into()));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SqvarError::TauOutOfRange(tau));
    }
    let (xmin, xmax) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(xmax > xmin) {
        return Err(SqvarError::InvalidArgument("constant predictor".into()));
    }
    let mut buf = Vec::with_capacity(y.len());

    // the profile loss is convex in the slope: bracket, then golden section
    let (ymin, ymax) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let scale = ((ymax - ymin) / (xmax - xmin)).max(1e-12);
    let mut lo = -scale;
    let mut hi = scale;
    while profile(y, x, lo, tau, &mut buf).1 < profile(y, x, lo * 0.5, tau, &mut buf).1 && lo > -1e12 {
        lo *= 2.0;
    }
    while profile(y, x, hi, tau, &mut buf).1 < profile(y, x, hi * 0.5, tau, &mut buf).1 && hi < 1e12 {
        hi *= 2.0;
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = lo;
    let mut b = hi;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = profile(y, x, c, tau, &mut buf).1;
    let mut fd = profile(y, x, d, tau, &mut buf).1;
    for _ in 0..200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = profile(y, x, c, tau, &mut buf).1;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = profile(y, x, d, tau, &mut buf).1;
        }
        if b - a <= 1e-14 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    let s0 = 0.5 * (a + b);
    let (b0, f0) = profile(y, x, s0, tau, &mut buf);
    let mut best = (b0, s0, f0);

    // an optimal line interpolates two observations: snap to the exact vertex
    let mut anchor_b0 = b0;
    let mut anchor_s = s0;
    for _ in 0..20 {
        let anchor = y
            .iter()
            .zip(x)
            .map(|(yt, xt)| (yt - anchor_b0 - anchor_s * xt).abs())
            .enumerate()
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let Some(s) = slope_through(y, x, x[anchor], y[anchor], tau) else {
            break;
        };
        let (nb0, f) = profile(y, x, s, tau, &mut buf);
        if f < best.2 - 1e-15 * best.2.abs() {
            best = (nb0, s, f);
            anchor_b0 = nb0;
            anchor_s = s;
        } else {
            break;
        }
    }
    Ok((best.0, best.1))
}

/// `(1/T) sum_t (b0 + b1 x_t - Q_y(tau))^2`.
pub fn screen_statistic(y: &[f64], x: &[f64], tau: f64) -> Result<f64> {
    let (b0, b1) = marginal_qr(y, x, tau)?;
    let q = empirical_quantile(y, tau)?;
    Ok(x.iter().map(|xt| (b0 + b1 * xt - q).powi(2)).sum::<f64>() / x.len() as f64)
}

/// Screen the lagged predictors of target series `i` (0-based).
pub fn screen(panel: &TimeSeriesPanel, cfg: &ScreenConfig, i: usize) -> Result<ScreenResult> {
    let n = panel.n_series();
    if i >= n {
        return Err(SqvarError::InvalidArgument(format!("target series {i} out of range")));
    }
    if panel.n_obs() <= cfg.p + 10 {
        return Err(SqvarError::BadLagOrder {
            p: cfg.p,
            t: panel.n_obs(),
        });
    }
    let design = build_lagged_design(panel, cfg.p)?;
    let y = design.response_series(i);
    let n_lagged = design.n_lagged();
    let stats: Vec<Vec<f64>> = (0..n_lagged)
        .into_par_iter()
        .map(|k| {
            let x: Vec<f64> = (0..design.n_rows()).map(|r| design.row(r)[k + 1]).collect();
            cfg.tau_grid
                .iter()
                .map(|tau| {
                    screen_statistic(&y, &x, *tau).or_else(|e| match e {
                        // a constant lagged series carries no marginal signal
                        SqvarError::InvalidArgument(_) => Ok(0.0),
                        other => Err(other),
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let keep: Vec<bool> = match cfg.threshold {
        Threshold::Absolute(nu) => stats
            .iter()
            .map(|s| s.iter().any(|v| *v >= nu))
            .collect(),
        Threshold::TopK(k) => {
            let mut order: Vec<(usize, f64)> = stats
                .iter()
                .enumerate()
                .map(|(m, s)| (m, s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
                .collect();
            order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut keep = vec![false; n_lagged];
            for (m, _) in order.into_iter().take(k) {
                keep[m] = true;
            }
            keep
        }
    };

    let mut records = Vec::with_capacity(n_lagged * cfg.tau_grid.len());
    let mut selected = Vec::new();
    for (k, s) in stats.iter().enumerate() {
        let pair = LagPair {
            series: k % n + 1,
            lag: k / n + 1,
        };
        if keep[k] {
            selected.push(pair);
        }
        for (tau, v) in cfg.tau_grid.iter().zip(s) {
            records.push(ScreenRecord {
                m_series: pair.series,
                m_lag: pair.lag,
                tau: *tau,
                statistic: *v,
                selected: keep[k],
            });
        }
    }
    selected.sort();
    Ok(ScreenResult { selected, records })
}
