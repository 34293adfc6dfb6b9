//! Natural cubic spline on a uniform grid.

use crate::error::{Error, Result};

/// Cubic interpolant through uniformly spaced samples with zero second
/// derivative at both ends.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x0: f64,
    h: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl CubicSpline {
    pub fn uniform(x0: f64, h: f64, values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n < 3 {
            return Err(Error::Format(format!("spline needs at least 3 points, got {n}")));
        }
        if !(h > 0.0) {
            return Err(Error::Format(format!("spline spacing must be positive, got {h}")));
        }
        // Thomas algorithm for M[i-1] + 4 M[i] + M[i+1] = 6 (y[i-1] - 2y[i] + y[i+1]) / h²
        let m = n - 2;
        let mut second = vec![0.0; n];
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        for i in 0..m {
            let rhs = 6.0 * (values[i] - 2.0 * values[i + 1] + values[i + 2]) / (h * h);
            let denom = 4.0 - if i > 0 { c[i - 1] } else { 0.0 };
            c[i] = 1.0 / denom;
            d[i] = (rhs - if i > 0 { d[i - 1] } else { 0.0 }) / denom;
        }
        for i in (0..m).rev() {
            let next = if i + 1 < m { second[i + 2] } else { 0.0 };
            second[i + 1] = d[i] - c[i] * next;
        }
        Ok(Self {
            x0,
            h,
            values,
            second,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value, first and second derivative at `x`. Points outside the grid are
    /// clamped to the nearest end interval.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let n = self.values.len();
        let u = (x - self.x0) / self.h;
        let i = (u.floor().max(0.0) as usize).min(n - 2);
        let h = self.h;
        let a = (self.x0 + (i + 1) as f64 * h - x) / h;
        let b = 1.0 - a;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        let value = a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let slope =
            (y1 - y0) / h + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let curvature = a * m0 + b * m1;
        (value, slope, curvature)
    }
}
