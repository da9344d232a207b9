//! Small dense symmetric linear algebra: empirical moments and
//! ridge-stabilized solves via an unpivoted Cholesky factorization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::{Error, Result};

/// Relative pivot threshold below which a factorization is declared singular.
const PIVOT_RTOL: f64 = 1e-12;

/// Relative tolerance for the symmetry check in [`ridge_solve_mat`].
const SYMMETRY_RTOL: f64 = 1e-8;

/// Empirical mean and covariance of the rows of `rows`, both with `1/n`
/// normalization (not `1/(n-1)`), matching the estimator definitions used by
/// the regression weights.
pub fn mean_and_cov(rows: &ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::SampleSize { need: 2, got: n });
    }
    let mean = rows.mean_axis(Axis(0)).expect("nonempty rows");
    let centered = rows - &mean;
    let mut cov = centered.t().dot(&centered) / n as f64;
    // The Gram product can be asymmetric by a few ulps; make it exact.
    for i in 0..cov.nrows() {
        for j in 0..i {
            let s = 0.5 * (cov[[i, j]] + cov[[j, i]]);
            cov[[i, j]] = s;
            cov[[j, i]] = s;
        }
    }
    Ok((mean, cov))
}

/// Ridge choice for [`ridge_solve_mat`] / [`ridge_solve_vec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RidgeSpec {
    /// Use exactly this nonnegative ridge.
    Exact(f64),
    /// Use the scale-aware default from [`auto_ridge`].
    Auto,
}

/// Scale-aware ridge default: `1e-8 * max(trace(a)/dim, 1)`.
///
/// The floor keeps the ridge effective when `a` is (numerically) the zero
/// matrix, where a purely trace-proportional value would vanish.
pub fn auto_ridge(a: &ArrayView2<f64>) -> f64 {
    let n = a.nrows().max(1);
    let trace: f64 = a.diag().sum();
    1e-8 * (trace / n as f64).max(1.0)
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Array2<f64>,
}

impl Cholesky {
    /// Factors `a` as `L L^T`. Returns `None` when a pivot falls below
    /// `PIVOT_RTOL` relative to the largest diagonal entry (numerically
    /// semidefinite or indefinite input).
    pub fn factor(a: &ArrayView2<f64>) -> Option<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return None;
        }
        let scale = a
            .diag()
            .iter()
            .fold(0.0_f64, |acc, &d| acc.max(d.abs()))
            .max(f64::MIN_POSITIVE);
        let threshold = scale * PIVOT_RTOL;
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > threshold) {
                return None;
            }
            let ljj = d.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Some(Self { factor: l })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Solves `A x = b` by forward/back substitution.
    pub fn solve_vec(&self, b: &ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let l = &self.factor;
        let mut y = b.to_owned();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[[i, k]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[[k, i]] * y[k];
            }
            y[i] = s / l[[i, i]];
        }
        y
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &ArrayView2<f64>) -> Array2<f64> {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "right-hand side row mismatch");
        let mut x = Array2::<f64>::zeros(b.raw_dim());
        for (j, col) in b.axis_iter(Axis(1)).enumerate() {
            let sol = self.solve_vec(&col);
            x.column_mut(j).assign(&sol);
        }
        x
    }

    /// Computes `L v` (used to color standard normals into a target
    /// covariance).
    pub fn lower_triangle_mul(&self, v: &Array1<f64>) -> Array1<f64> {
        let n = self.dim();
        assert_eq!(v.len(), n);
        let l = &self.factor;
        Array1::from_shape_fn(n, |i| (0..=i).map(|k| l[[i, k]] * v[k]).sum())
    }
}

fn checked_ridge(a: &ArrayView2<f64>, ridge: RidgeSpec) -> Result<f64> {
    let r = match ridge {
        RidgeSpec::Exact(r) => r,
        RidgeSpec::Auto => auto_ridge(a),
    };
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Parameter(format!("ridge must be nonnegative: {r}")));
    }
    Ok(r)
}

fn symmetrized(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "expected a nonempty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let max_abs = a.iter().fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let tol = SYMMETRY_RTOL * max_abs.max(1.0);
    let mut sym = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let (u, v) = (a[[i, j]], a[[j, i]]);
            if (u - v).abs() > tol {
                return Err(Error::Parameter(format!(
                    "matrix is not symmetric at ({i},{j}): {u} vs {v}"
                )));
            }
            let s = 0.5 * (u + v);
            sym[[i, j]] = s;
            sym[[j, i]] = s;
        }
    }
    Ok(sym)
}

fn factor_with_ridge(a: &ArrayView2<f64>, ridge: RidgeSpec) -> Result<(Cholesky, f64)> {
    let r = checked_ridge(a, ridge)?;
    let mut m = symmetrized(a)?;
    if r > 0.0 {
        for i in 0..m.nrows() {
            m[[i, i]] += r;
        }
    }
    match Cholesky::factor(&m.view()) {
        Some(chol) => Ok((chol, r)),
        None => Err(Error::Singular { ridge: r }),
    }
}

/// Solves `(A + ridge * I) X = B` for a symmetric positive semidefinite `A`
/// through a Cholesky factorization; no explicit inverse is formed.
pub fn ridge_solve_mat(
    a: &ArrayView2<f64>,
    b: &ArrayView2<f64>,
    ridge: RidgeSpec,
) -> Result<Array2<f64>> {
    let (chol, _) = factor_with_ridge(a, ridge)?;
    if b.nrows() != chol.dim() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, system has {}",
            b.nrows(),
            chol.dim()
        )));
    }
    Ok(chol.solve_mat(b))
}

/// Vector right-hand-side variant of [`ridge_solve_mat`].
pub fn ridge_solve_vec(
    a: &ArrayView2<f64>,
    b: &ArrayView1<f64>,
    ridge: RidgeSpec,
) -> Result<Array1<f64>> {
    let (chol, _) = factor_with_ridge(a, ridge)?;
    if b.len() != chol.dim() {
        return Err(Error::Dimension(format!(
            "right-hand side has length {}, system has {}",
            b.len(),
            chol.dim()
        )));
    }
    Ok(chol.solve_vec(b))
}
