//! Normal-equation machinery shared by the least-squares estimators.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A pivot is treated as zero when it falls below this fraction of the
/// corresponding diagonal entry of the Gram matrix.
const PIVOT_TOL: f64 = 1e-12;

/// Cholesky factor `G = L Lᵀ` of a symmetric positive-definite Gram matrix,
/// computed once and reused for every right-hand side.
#[derive(Debug, Clone)]
pub struct GramFactor {
    l: DMatrix<f64>,
}

impl GramFactor {
    /// Factor `gram`, reporting the first sender dimension whose pivot
    /// vanishes (that column is a combination of the earlier ones).
    pub fn new(gram: &DMatrix<f64>) -> Result<Self> {
        let n = gram.nrows();
        assert_eq!(n, gram.ncols(), "Gram matrix must be square");
        let mut l = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let diag = gram[(k, k)];
            let mut d = diag;
            for j in 0..k {
                d -= l[(k, j)] * l[(k, j)];
            }
            if !d.is_finite() || d <= PIVOT_TOL * diag.abs() {
                return Err(Error::SingularSystem {
                    dimension: k,
                    size: n,
                });
            }
            let lkk = d.sqrt();
            l[(k, k)] = lkk;
            for i in (k + 1)..n {
                let mut s = gram[(i, k)];
                for j in 0..k {
                    s -= l[(i, j)] * l[(k, j)];
                }
                l[(i, k)] = s / lkk;
            }
        }
        Ok(GramFactor { l })
    }

    /// Factor `gram + eps I` with `eps = 1e-10 * trace / n`.
    pub fn new_ridge(gram: &DMatrix<f64>) -> Result<Self> {
        let n = gram.nrows();
        let eps = 1e-10 * gram.trace() / n as f64;
        let eps = if eps > 0.0 { eps } else { 1e-10 };
        let mut g = gram.clone();
        for k in 0..n {
            g[(k, k)] += eps;
        }
        Self::new(&g)
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solve `G X = B` for every column of `B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        // Columns are independent right-hand sides sharing the factor.
        let l = &self.l;
        let n = self.dim();
        for mut col in x.column_iter_mut() {
            for i in 0..n {
                let mut s = col[i];
                for j in 0..i {
                    s -= l[(i, j)] * col[j];
                }
                col[i] = s / l[(i, i)];
            }
            for i in (0..n).rev() {
                let mut s = col[i];
                for j in (i + 1)..n {
                    s -= l[(j, i)] * col[j];
                }
                col[i] = s / l[(i, i)];
            }
        }
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }
}

/// Squared Frobenius residual `||V - A P||²` expanded through the normal
/// quantities: `||V||² - 2<P, AᵀV> + <P, (AᵀA) P>`.
pub(crate) fn residual_from_normal(
    v_sq: f64,
    cross: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let gp = gram * p;
    (v_sq - 2.0 * p.dot(cross) + p.dot(&gp)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = GramFactor::new(&a).unwrap();
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, -1.0]);
        let x = f.solve(&b);
        assert!((&a * &x - &b).amax() < 1e-12);
        assert!((&a * f.inverse() - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn reports_deficient_dimension() {
        // third column = first + second
        let a = DMatrix::from_row_slice(4, 3, &[1., 0., 1., 0., 1., 1., 1., 1., 2., 2., 0., 2.]);
        let g = a.tr_mul(&a);
        match GramFactor::new(&g) {
            Err(Error::SingularSystem { dimension, size }) => {
                assert_eq!(dimension, 2);
                assert_eq!(size, 3);
            }
            other => panic!("{other:?}"),
        }
        assert!(GramFactor::new_ridge(&g).is_ok());

        let zero_col = DMatrix::from_row_slice(2, 2, &[1., 0., 0., 0.]);
        assert!(matches!(
            GramFactor::new(&zero_col),
            Err(Error::SingularSystem { dimension: 1, .. })
        ));
    }
}
