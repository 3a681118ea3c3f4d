use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Least-squares fit summary. `r_squared` is `None` when the targets have zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Constant term first when the design includes an intercept column.
    pub coefficients: Vec<f64>,
    pub r_squared: Option<f64>,
    pub residual_sum: f64,
}

impl FitResult {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.coefficients.iter().zip(features).map(|(c, x)| c * x).sum()
    }
}

const RANK_TOL: f64 = 1e-10;

/// Ordinary least squares via Householder QR.
pub fn ols_fit(features: &Matrix, targets: &[f64]) -> Result<FitResult> {
    let (n, k) = (features.rows(), features.cols());
    if targets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} design rows but {} targets",
            targets.len()
        )));
    }
    if k == 0 || n < k {
        return Err(Error::InvalidConfig(format!(
            "least squares needs n_points >= k >= 1, got n={n} k={k}"
        )));
    }
    if features.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix".into()));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }

    // Column-major working copy; Householder vectors overwrite the lower part.
    let mut a: Vec<Vec<f64>> = (0..k).map(|j| features.column(j)).collect();
    let col_norms: Vec<f64> = a.iter().map(|c| super::matrix::norm(c)).collect();
    let mut qty = targets.to_vec();
    let mut diag = vec![0.0; k];

    for j in 0..k {
        let alpha = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha <= RANK_TOL * col_norms[j].max(f64::MIN_POSITIVE) {
            return Err(Error::RankDeficient { column: j });
        }
        let alpha = if a[j][j] > 0.0 { -alpha } else { alpha };
        // v = x - alpha e1, stored in place
        a[j][j] -= alpha;
        let vnorm2: f64 = a[j][j..].iter().map(|v| v * v).sum();
        diag[j] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let (head, tail) = a.split_at_mut(j + 1);
        let v = &head[j][j..];
        for col in tail.iter_mut() {
            let s: f64 = v.iter().zip(&col[j..]).map(|(x, y)| x * y).sum::<f64>() * 2.0 / vnorm2;
            for (c, vi) in col[j..].iter_mut().zip(v) {
                *c -= s * vi;
            }
        }
        let s: f64 = v.iter().zip(&qty[j..]).map(|(x, y)| x * y).sum::<f64>() * 2.0 / vnorm2;
        for (c, vi) in qty[j..].iter_mut().zip(v) {
            *c -= s * vi;
        }
    }

    // back substitution on R (diag holds R_jj, a[col][row] holds R_row,col above the diagonal)
    let mut coef = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = qty[i];
        for j in i + 1..k {
            s -= a[j][i] * coef[j];
        }
        coef[i] = s / diag[i];
    }
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("fitted coefficients".into()));
    }

    let mean = targets.iter().sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (i, &y) in targets.iter().enumerate() {
        let pred: f64 = features.row(i).iter().zip(&coef).map(|(x, c)| x * c).sum();
        ss_res += (y - pred) * (y - pred);
        ss_tot += (y - mean) * (y - mean);
    }
    let r_squared = if ss_tot > 0.0 {
        Some((1.0 - ss_res / ss_tot).clamp(0.0, 1.0))
    } else {
        None
    };
    Ok(FitResult {
        coefficients: coef,
        r_squared,
        residual_sum: ss_res,
    })
}

/// Design matrix with columns `[1, x, x², …, x^degree]`.
pub fn polynomial_design(xs: &[f64], degree: usize) -> Matrix {
    let cols = degree + 1;
    let mut data = Vec::with_capacity(xs.len() * cols);
    for &x in xs {
        let mut p = 1.0;
        for _ in 0..cols {
            data.push(p);
            p *= x;
        }
    }
    Matrix::from_vec(xs.len(), cols, data).expect("finite powers of finite inputs")
}

/// Fit `y = c0 + c1·x + … + c_degree·x^degree`.
pub fn poly_fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<FitResult> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("abscissae".into()));
    }
    ols_fit(&polynomial_design(xs, degree), ys)
}
