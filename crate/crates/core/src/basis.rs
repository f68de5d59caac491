//! Monotone I-spline basis on [0, 1] with a constant leading element.
//!
//! The I-splines are tail sums of the degree-`d` B-splines on a clamped knot
//! vector: `I_j(u) = sum_{i >= j} B_i(u)`. Each tail sum is nondecreasing,
//! starts at 0 and ends at 1, so any coefficient vector with entries
//! `2..H` nonnegative gives a nondecreasing curve.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SqvarError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    inner_knots: Vec<f64>,
    quadrature_order: usize,
    #[serde(skip)]
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Cubic basis with `n_inner` equally spaced inner knots (`H = n_inner + 4`).
    pub fn cubic(n_inner: usize) -> Self {
        Self::equally_spaced(3, n_inner)
    }

    pub fn equally_spaced(degree: usize, n_inner: usize) -> Self {
        let inner = (1..=n_inner)
            .map(|k| k as f64 / (n_inner + 1) as f64)
            .collect();
        Self::with_knots(degree, inner).expect("equally spaced knots are valid")
    }

    pub fn with_knots(degree: usize, inner_knots: Vec<f64>) -> Result<Self> {
        if inner_knots.iter().any(|k| !(*k > 0.0 && *k < 1.0))
            || inner_knots.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SqvarError::InvalidArgument(
                "inner knots must be strictly increasing inside (0, 1)".into(),
            ));
        }
        let mut basis = Self {
            degree,
            inner_knots,
            quadrature_order: 16,
            knots: Vec::new(),
        };
        basis.rebuild();
        Ok(basis)
    }

    /// Restore the derived knot vector after deserialization.
    pub fn rebuild(&mut self) {
        let d = self.degree;
        let mut knots = vec![0.0; d + 1];
        knots.extend_from_slice(&self.inner_knots);
        knots.extend(std::iter::repeat_n(1.0, d + 1));
        self.knots = knots;
    }

    /// Basis size `H`.
    pub fn size(&self) -> usize {
        self.inner_knots.len() + self.degree + 1
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn inner_knots(&self) -> &[f64] {
        &self.inner_knots
    }

    /// `b_H(tau)` for `tau` in the open unit interval.
    pub fn eval(&self, tau: f64) -> Result<Vec<f64>> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(SqvarError::TauOutOfRange(tau));
        }
        let mut out = vec![0.0; self.size()];
        self.eval_into(tau, &mut out);
        Ok(out)
    }

    /// Evaluate on the closed interval without range checks.
    pub fn eval_into(&self, u: f64, out: &mut [f64]) {
        let h = self.size();
        debug_assert_eq!(out.len(), h);
        let u = u.clamp(0.0, 1.0);
        let d = self.degree;
        let span = self.find_span(u);
        let local = self.bspline_values(span, u);
        // B-spline index of local[r] is span - d + r; accumulate tail sums.
        out.iter_mut().for_each(|v| *v = 0.0);
        let first = span - d;
        let mut tail = 0.0;
        for i in (0..h).rev() {
            if i >= first && i <= span {
                tail += local[i - first];
            }
            out[i] = tail;
        }
        // every local B-spline is in the tail: the partition of unity is exact
        for v in out.iter_mut().take(first + 1) {
            *v = 1.0;
        }
        for v in out.iter_mut().skip(1) {
            *v = v.clamp(0.0, 1.0);
        }
    }

    fn find_span(&self, u: f64) -> usize {
        let d = self.degree;
        let m = self.size();
        if u >= self.knots[m] {
            return m - 1;
        }
        let mut span = d;
        while span + 1 < m && self.knots[span + 1] <= u {
            span += 1;
        }
        span
    }

    // Nonzero B-spline values at `u` in knot span `span` (de Boor's recurrence).
    fn bspline_values(&self, span: usize, u: f64) -> Vec<f64> {
        let d = self.degree;
        let t = &self.knots;
        let mut n = vec![0.0; d + 1];
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        n[0] = 1.0;
        for j in 1..=d {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// Distinct knot intervals covering [0, 1].
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        let mut pts = vec![0.0];
        pts.extend_from_slice(&self.inner_knots);
        pts.push(1.0);
        pts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Gram matrix `int_0^1 b_H(u) b_H(u)' du` by Gauss-Legendre quadrature on
    /// each knot interval.
    pub fn gram(&self) -> GramMatrix {
        let h = self.size();
        let (nodes, weights) = gauss_legendre(self.quadrature_order);
        let mut g = vec![0.0; h * h];
        let mut b = vec![0.0; h];
        for (a, z) in self.intervals() {
            let half = 0.5 * (z - a);
            let mid = 0.5 * (z + a);
            for (x, w) in nodes.iter().zip(&weights) {
                self.eval_into(mid + half * x, &mut b);
                let wt = w * half;
                for r in 0..h {
                    for c in 0..h {
                        g[r * h + c] += wt * b[r] * b[c];
                    }
                }
            }
        }
        // exact symmetry
        for r in 0..h {
            for c in 0..r {
                let avg = 0.5 * (g[r * h + c] + g[c * h + r]);
                g[r * h + c] = avg;
                g[c * h + r] = avg;
            }
        }
        g[0] = 1.0;
        GramMatrix { h, values: g }
    }
}

/// `int_0^1 b_H b_H' du`, row-major `H x H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramMatrix {
    h: usize,
    values: Vec<f64>,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.h
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.h + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `delta' G delta`.
    pub fn quad_form(&self, delta: &[f64]) -> f64 {
        let h = self.h;
        let mut acc = 0.0;
        for r in 0..h {
            let row = &self.values[r * h..(r + 1) * h];
            let inner: f64 = row.iter().zip(delta).map(|(g, d)| g * d).sum();
            acc += delta[r] * inner;
        }
        acc
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.h, self.h, &self.values)
    }
}

/// L2 norm on [0, 1] of the curve `b_H(.)' delta`.
pub fn func_norm(gram: &GramMatrix, delta: &[f64]) -> Result<f64> {
    if delta.len() != gram.dim() {
        return Err(SqvarError::Dimension(format!(
            "coefficient vector of length {}, basis size {}",
            delta.len(),
            gram.dim()
        )));
    }
    Ok(gram.quad_form(delta).max(0.0).sqrt())
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
