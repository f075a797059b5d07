//! Dense LU with partial pivoting for the coarsest-level direct solve.
//!
//! Coarsest composite operators are at most on the order of a thousand rows
//! by construction, so a dense factorization is adequate; no sparse direct
//! solver is warranted.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Dense LU factors of a square matrix with a partial-pivot row permutation.
#[derive(Debug, Clone)]
pub struct LuFactorization {
    n: usize,
    /// packed L (unit lower, diagonal implicit) and U, row-major
    lu: Vec<f64>,
    /// perm[k] = original row index pivoted into position k
    perm: Vec<usize>,
}

impl LuFactorization {
    /// Factors a dense row-major square matrix.
    pub fn factor_dense(n: usize, a: &[f64]) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix storage must be n*n");
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-15;

        for k in 0..n {
            // partial pivot: largest magnitude in column k at or below the diagonal
            let mut piv = k;
            let mut best = lu[k * n + k].abs();
            for i in k + 1..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best <= tiny {
                return Err(Error::SingularPivot { row: perm[piv] });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let m = lu[i * n + k] / d;
                lu[i * n + k] = m;
                for j in k + 1..n {
                    lu[i * n + j] -= m * lu[k * n + j];
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    /// Factors a sparse matrix by densifying it first.
    pub fn factor_sparse(a: &SparseMatrix) -> Result<Self> {
        if a.n_rows() != a.n_cols() {
            return Err(Error::ShapeMismatch {
                op: "lu_factor",
                lhs_rows: a.n_rows(),
                lhs_cols: a.n_cols(),
                rhs_rows: a.n_rows(),
                rhs_cols: a.n_rows(),
            });
        }
        let n = a.n_rows();
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                dense[i * n + j] = v;
            }
        }
        Self::factor_dense(n, &dense)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Solves A x = b using the stored factors.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::LengthMismatch {
                op: "lu_solve",
                expected: self.n,
                found: b.len(),
            });
        }
        let n = self.n;
        // forward substitution on the permuted right-hand side
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc;
        }
        // back substitution
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[i * n + j] * x[j];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::SparseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve() {
        let f = LuFactorization::factor_sparse(&SparseMatrix::identity(2)).unwrap();
        assert_eq!(f.solve(&[4.0, 5.0]).unwrap(), vec![4.0, 5.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (1, 1, 4.0)]);
        let f = LuFactorization::factor_sparse(&a).unwrap();
        assert_eq!(f.solve(&[2.0, 4.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 12;
        // SPD: B Bᵀ + n I
        let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += b[i * n + k] * b[j * n + k];
                }
                a[i * n + j] = acc + if i == j { n as f64 } else { 0.0 };
            }
        }
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = LuFactorization::factor_dense(n, &a).unwrap();
        let x = f.solve(&rhs).unwrap();
        // residual check against the dense operator
        let mut rnorm = 0.0f64;
        let mut bnorm = 0.0f64;
        for i in 0..n {
            let ax: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
            rnorm += (ax - rhs[i]).powi(2);
            bnorm += rhs[i].powi(2);
        }
        assert!(rnorm.sqrt() / bnorm.sqrt() <= 1e-10);
    }

    #[test]
    fn recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 10;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = rng.gen_range(-1.0..1.0) + if i == j { 4.0 } else { 0.0 };
            }
        }
        let x_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i * n + j] * x_true[j]).sum())
            .collect();
        let f = LuFactorization::factor_dense(n, &a).unwrap();
        let x = f.solve(&b).unwrap();
        for i in 0..n {
            assert!((x[i] - x_true[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn singular_reports_pivot_row() {
        // row 2 duplicates row 1
        let a = vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.0, 3.0, 4.0, 0.0];
        match LuFactorization::factor_dense(3, &a) {
            Err(Error::SingularPivot { .. }) => {}
            other => panic!("expected singular pivot, got {other:?}"),
        }
    }
}
