//! Small dense Cholesky with pivot diagnostics.

use nalgebra::{DMatrix, DVector};

/// Relative pivot threshold below which a column counts as collinear with
/// the ones before it.
pub const PIVOT_TOL: f64 = 1e-10;

/// Lower Cholesky factor `L` with `A = L L'`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factor a symmetric matrix. On failure returns the index of the first
    /// pivot whose residual variance is below `PIVOT_TOL` times its diagonal.
    pub fn new(a: &DMatrix<f64>) -> Result<Self, usize> {
        let n = a.nrows();
        assert_eq!(n, a.ncols());
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > PIVOT_TOL * a[(j, j)].abs().max(f64::MIN_POSITIVE)) {
                return Err(j);
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Solve `L y = b`.
    pub fn forward(&self, b: &[f64]) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        y
    }

    /// Solve `L' x = y`.
    pub fn backward(&self, y: &[f64]) -> DVector<f64> {
        let n = self.dim();
        let mut x = DVector::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> DVector<f64> {
        let y = self.forward(b);
        self.backward(y.as_slice())
    }

    /// `ln |A|` restricted to the pivots in `range`, i.e. the log determinant
    /// of the corresponding Schur complement.
    pub fn log_det_range(&self, range: std::ops::Range<usize>) -> f64 {
        range.map(|i| 2.0 * self.l[(i, i)].ln()).sum()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det_range(0..self.dim())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut inv = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            inv.set_column(j, &self.solve(&e));
        }
        inv
    }
}
