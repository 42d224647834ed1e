//! Huber M-estimation by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::distance::independent_columns;
use crate::stats;

pub const HUBER_K: f64 = 1.345;
const MAX_ITER: usize = 50;
/// MAD to normal-scale factor.
const MAD_SCALE: f64 = 0.6745;

#[derive(Debug, Clone, PartialEq)]
pub struct HuberFit {
    pub residuals: Vec<f64>,
    /// Intercept first, then the kept columns.
    pub coefficients: Vec<f64>,
    pub kept_columns: Vec<usize>,
    pub converged: bool,
}

/// Design with an intercept and the independent columns of `x`, reusable
/// across responses.
#[derive(Debug, Clone)]
pub struct Design {
    matrix: DMatrix<f64>,
    kept: Vec<usize>,
}

impl Design {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let kept = if n == 0 { Vec::new() } else { independent_columns(x) };
        let matrix = DMatrix::from_fn(n, kept.len() + 1, |i, j| if j == 0 { 1.0 } else { x[i][kept[j - 1]] });
        Self { matrix, kept }
    }

    fn weighted_fit(&self, y: &DVector<f64>, w: &[f64]) -> Option<DVector<f64>> {
        let p = self.matrix.ncols();
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwy = DVector::zeros(p);
        for i in 0..self.matrix.nrows() {
            let row = self.matrix.row(i);
            for a in 0..p {
                let wa = w[i] * row[a];
                xtwy[a] += wa * y[i];
                for b in 0..p {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        xtwx.clone().cholesky().map(|c| c.solve(&xtwy)).or_else(|| xtwx.lu().solve(&xtwy))
    }

    /// Huber regression of `y`; least squares if IRLS fails to converge.
    pub fn huber(&self, y: &[f64]) -> HuberFit {
        let n = y.len();
        let yv = DVector::from_column_slice(y);
        let spread = y.iter().fold(0.0f64, |a, v| a.max(v.abs())) + 1.0;
        let ols = self.weighted_fit(&yv, &vec![1.0; n]).unwrap_or_else(|| DVector::zeros(self.matrix.ncols()));
        let mut beta = ols.clone();
        let mut converged = false;
        for _ in 0..MAX_ITER {
            let r = &yv - &self.matrix * &beta;
            let abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
            let centre = stats::median(r.as_slice()).unwrap_or(0.0);
            let dev: Vec<f64> = r.iter().map(|v| (v - centre).abs()).collect();
            let scale = stats::median(&dev).unwrap_or(0.0) / MAD_SCALE;
            if scale <= 1e-12 * spread {
                converged = true;
                break;
            }
            let cut = HUBER_K * scale;
            let w: Vec<f64> = abs.iter().map(|&a| if a <= cut { 1.0 } else { cut / a }).collect();
            let Some(next) = self.weighted_fit(&yv, &w) else {
                break;
            };
            let step = (&next - &beta).amax();
            beta = next;
            if step <= 1e-10 * (1.0 + beta.amax()) {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!("Huber regression did not converge in {MAX_ITER} iterations; using least squares");
            beta = ols;
        }
        let residuals = (&yv - &self.matrix * &beta)
            .iter()
            .map(|&v| if v.abs() <= 1e-9 * spread { 0.0 } else { v })
            .collect();
        HuberFit {
            residuals,
            coefficients: beta.iter().copied().collect(),
            kept_columns: self.kept.clone(),
            converged,
        }
    }
}

/// Average ranks of Huber residuals of `y` on an intercept and `x`.
pub fn huber_residual_ranks(y: &[f64], x: &[Vec<f64>]) -> (Vec<f64>, bool) {
    let fit = Design::new(x).huber(y);
    (stats::average_ranks(&fit.residuals), fit.converged)
}
