//! Bounded multivariate time-series panels and their lag expansion.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SqvarError};

/// An `n`-series panel observed over `T` equally spaced time points.
///
/// Stored time-major: `values[t * n + i]` is series `i` at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPanel {
    values: Vec<f64>,
    n: usize,
    t: usize,
    series_names: Vec<String>,
}

impl TimeSeriesPanel {
    /// Build a panel from time-major rows. Every row must have the same width
    /// and every entry must be finite.
    pub fn from_rows(rows: Vec<Vec<f64>>, series_names: Option<Vec<String>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(SqvarError::NoObservations);
        }
        let n = rows[0].len();
        if n == 0 {
            return Err(SqvarError::NoObservations);
        }
        let mut values = Vec::with_capacity(rows.len() * n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SqvarError::RaggedRow {
                    row: t + 1,
                    expected: n,
                    found: row.len(),
                });
            }
            for (i, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SqvarError::BadCell {
                        row: t + 1,
                        col: i + 1,
                        cell: v.to_string(),
                    });
                }
            }
            values.extend_from_slice(row);
        }
        let series_names = match series_names {
            Some(names) if names.len() == n => names,
            Some(names) => {
                return Err(SqvarError::Dimension(format!(
                    "{} series names for {} series",
                    names.len(),
                    n
                )))
            }
            None => (1..=n).map(|i| format!("y{i}")).collect(),
        };
        Ok(Self {
            values,
            n,
            t: rows.len(),
            series_names,
        })
    }

    /// Build a panel from one vector per series.
    pub fn from_series(series: Vec<Vec<f64>>) -> Result<Self> {
        if series.is_empty() || series[0].is_empty() {
            return Err(SqvarError::NoObservations);
        }
        let t = series[0].len();
        if let Some(bad) = series.iter().position(|s| s.len() != t) {
            return Err(SqvarError::Dimension(format!(
                "series {} has length {}, expected {}",
                bad + 1,
                series[bad].len(),
                t
            )));
        }
        let rows = (0..t)
            .map(|k| series.iter().map(|s| s[k]).collect())
            .collect();
        Self::from_rows(rows, None)
    }

    pub fn n_series(&self) -> usize {
        self.n
    }

    pub fn n_obs(&self) -> usize {
        self.t
    }

    pub fn series_names(&self) -> &[String] {
        &self.series_names
    }

    #[inline]
    pub fn value(&self, series: usize, time: usize) -> f64 {
        self.values[time * self.n + series]
    }

    /// Observation vector `Y_t`.
    pub fn row(&self, time: usize) -> &[f64] {
        &self.values[time * self.n..(time + 1) * self.n]
    }

    pub fn series(&self, i: usize) -> Vec<f64> {
        (0..self.t).map(|t| self.value(i, t)).collect()
    }

    /// Sub-panel covering times `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.t {
            return Err(SqvarError::InvalidArgument(format!(
                "window {start}..{end} outside 0..{}",
                self.t
            )));
        }
        Ok(Self {
            values: self.values[start * self.n..end * self.n].to_vec(),
            n: self.n,
            t: end - start,
            series_names: self.series_names.clone(),
        })
    }

    /// Write the panel as CSV with a header row of series names.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.series_names)?;
        for t in 0..self.t {
            w.write_record(self.row(t).iter().map(|v| format!("{v:.17e}")))?;
        }
        w.flush().map_err(|e| SqvarError::Io {
            path: "<csv>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Read a panel from a comma-separated file with series as columns and time
/// increasing down the rows.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<TimeSeriesPanel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SqvarError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_csv(&text, has_header)
}

/// Parse panel CSV text. Row numbers in errors are 1-based file lines.
pub fn parse_csv(text: &str, has_header: bool) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut names = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if idx == 0 && has_header {
            names = Some(record.iter().map(str::to_string).collect::<Vec<_>>());
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(SqvarError::RaggedRow {
                row: line,
                expected,
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (col, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(SqvarError::BadCell {
                        row: line,
                        col: col + 1,
                        cell: cell.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SqvarError::NoObservations);
    }
    TimeSeriesPanel::from_rows(rows, names)
}

/// Per-series bounds `lb_i <= y_it <= ub_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBounds {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl SeriesBounds {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>) -> Result<Self> {
        if lb.len() != ub.len() || lb.is_empty() {
            return Err(SqvarError::Dimension(format!(
                "bounds of lengths {} and {}",
                lb.len(),
                ub.len()
            )));
        }
        for (i, (l, u)) in lb.iter().zip(&ub).enumerate() {
            if !(l.is_finite() && u.is_finite() && u > l) {
                return Err(SqvarError::DegenerateSeries { series: i + 1 });
            }
        }
        Ok(Self { lb, ub })
    }

    pub fn len(&self) -> usize {
        self.lb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lb.is_empty()
    }

    /// `ub_i - lb_i`.
    pub fn range(&self, i: usize) -> f64 {
        self.ub[i] - self.lb[i]
    }

    pub fn contains(&self, i: usize, y: f64) -> bool {
        y >= self.lb[i] && y <= self.ub[i]
    }
}

/// Empirical bounds widened on each side by `margin` times the empirical range.
pub fn compute_bounds(panel: &TimeSeriesPanel, margin: f64) -> Result<SeriesBounds> {
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(SqvarError::InvalidArgument(format!(
            "margin must be a nonnegative finite number, got {margin}"
        )));
    }
    let n = panel.n_series();
    let mut lb = Vec::with_capacity(n);
    let mut ub = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = (0..panel.n_obs())
            .map(|t| panel.value(i, t))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            });
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(SqvarError::DegenerateSeries { series: i + 1 });
        }
        lb.push(lo - margin * range);
        ub.push(hi + margin * range);
    }
    SeriesBounds::new(lb, ub)
}

/// Rows `W_t = (1, Y_{t-1}', ..., Y_{t-p}')` for `t = p+1..T` and the
/// matching responses `Y_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDesign {
    rows: Vec<f64>,
    responses: Vec<f64>,
    n: usize,
    p: usize,
}

impl LaggedDesign {
    pub fn n_rows(&self) -> usize {
        self.responses.len() / self.n
    }

    /// Number of lagged regressors `N = n p`.
    pub fn n_lagged(&self) -> usize {
        self.n * self.p
    }

    pub fn width(&self) -> usize {
        self.n_lagged() + 1
    }

    pub fn lag_order(&self) -> usize {
        self.p
    }

    pub fn n_series(&self) -> usize {
        self.n
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.width();
        &self.rows[r * w..(r + 1) * w]
    }

    /// Response vector `Y_t` aligned with [`LaggedDesign::row`].
    pub fn response(&self, r: usize) -> &[f64] {
        &self.responses[r * self.n..(r + 1) * self.n]
    }

    /// Responses of one equation.
    pub fn response_series(&self, i: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.response(r)[i]).collect()
    }
}

/// Lag-expand a panel. Within each row the lag blocks run `j = 1..p` and the
/// series run `1..n` inside each block.
pub fn build_lagged_design(panel: &TimeSeriesPanel, p: usize) -> Result<LaggedDesign> {
    let t = panel.n_obs();
    if p == 0 || p >= t {
        return Err(SqvarError::BadLagOrder { p, t });
    }
    let n = panel.n_series();
    let width = n * p + 1;
    let n_rows = t - p;
    let mut rows = Vec::with_capacity(n_rows * width);
    let mut responses = Vec::with_capacity(n_rows * n);
    for time in p..t {
        rows.push(1.0);
        for j in 1..=p {
            rows.extend_from_slice(panel.row(time - j));
        }
        responses.extend_from_slice(panel.row(time));
    }
    Ok(LaggedDesign {
        rows,
        responses,
        n,
        p,
    })
}
