//! Dense symmetric positive-definite solves.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky<T> {
    lower: Array2<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn factor(a: ArrayView2<'_, T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::numerical(format!("cholesky of non-square {}x{} matrix", n, a.ncols())));
        }
        let mut l = Array2::<T>::zeros((n, n));
        for j in 0..n {
            let mut diag = a[[j, j]];
            for k in 0..j {
                diag = diag - l[[j, k]] * l[[j, k]];
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(Error::numerical(format!(
                    "matrix is not positive definite (pivot {j} = {diag})"
                )));
            }
            let d = diag.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s = s - l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `A X = B` for every column of `B` at once.
    pub fn solve(&self, b: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let n = self.dim();
        if b.nrows() != n {
            return Err(Error::numerical(format!(
                "right-hand side has {} rows, system has {n}",
                b.nrows()
            )));
        }
        let l = &self.lower;
        let mut x = b.to_owned();
        // forward: L Z = B, row-wise so each step is a contiguous axpy
        for i in 0..n {
            for k in 0..i {
                let lik = l[[i, k]];
                if lik != T::zero() {
                    let (head, mut tail) = x.view_mut().split_at(ndarray::Axis(0), i);
                    tail.row_mut(0).scaled_add(-lik, &head.row(k));
                }
            }
            let inv = T::one() / l[[i, i]];
            x.row_mut(i).mapv_inplace(|v| v * inv);
        }
        // backward: L^T X = Z
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l[[k, i]];
                if lki != T::zero() {
                    let (mut head, tail) = x.view_mut().split_at(ndarray::Axis(0), i + 1);
                    head.row_mut(i).scaled_add(-lki, &tail.row(k - i - 1));
                }
            }
            let inv = T::one() / l[[i, i]];
            x.row_mut(i).mapv_inplace(|v| v * inv);
        }
        Ok(x)
    }
}
