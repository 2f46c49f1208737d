use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::Real;

/// Normal-equation terms `P^T P` and `P^T Y` of one training split, shared by
/// every penalty and every target column.
#[derive(Clone, Debug)]
pub struct RidgeSystem<T> {
    pub gram: Array2<T>,
    pub cross: Array2<T>,
}

impl<T: Real> RidgeSystem<T> {
    pub fn new(design: ArrayView2<'_, T>, targets: ArrayView2<'_, T>) -> Result<Self> {
        if design.nrows() != targets.nrows() {
            return Err(Error::data(format!(
                "design has {} rows, targets have {}",
                design.nrows(),
                targets.nrows()
            )));
        }
        Ok(Self {
            gram: design.t().dot(&design),
            cross: design.t().dot(&targets),
        })
    }

    pub fn factor(&self, lambda: f64) -> Result<Cholesky<T>> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::config(format!("ridge penalty must be >= 0, got {lambda}")));
        }
        let mut a = self.gram.clone();
        let l = T::lit(lambda);
        for i in 0..a.nrows() {
            a[[i, i]] = a[[i, i]] + l;
        }
        Cholesky::factor(a.view())
            .map_err(|e| Error::numerical(format!("ridge system at lambda = {lambda}: {e}")))
    }

    /// Coefficients `(P^T P + lambda I)^-1 P^T Y` for all target columns.
    pub fn solve(&self, lambda: f64) -> Result<Array2<T>> {
        self.factor(lambda)?.solve(self.cross.view())
    }
}

/// Closed-form ridge coefficients for a multi-target design.
pub fn ridge_fit<T: Real>(design: ArrayView2<'_, T>, targets: ArrayView2<'_, T>, lambda: f64) -> Result<Array2<T>> {
    RidgeSystem::new(design, targets)?.solve(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn exact_interpolation_without_penalty() {
        let b = ridge_fit(array![[1.0_f64], [2.0]].view(), array![[1.0], [2.0]].view(), 0.0).unwrap();
        assert!((b[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_penalty_shrinks_to_five_sixths() {
        let b = ridge_fit(array![[1.0_f64], [2.0]].view(), array![[1.0], [2.0]].view(), 1.0).unwrap();
        assert!((b[[0, 0]] - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn identity_design_returns_targets() {
        let y = array![[1.0_f64, -2.0], [0.5, 3.0], [4.0, 0.0]];
        let b = ridge_fit(Array2::eye(3).view(), y.view(), 0.0).unwrap();
        for (u, v) in b.iter().zip(y.iter()) {
            assert!((u - v).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_design_without_penalty_is_numerical_error() {
        let p = array![[1.0_f64, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let y = array![[1.0], [2.0], [3.0]];
        assert!(matches!(ridge_fit(p.view(), y.view(), 0.0), Err(Error::Numerical(_))));
        assert!(ridge_fit(p.view(), y.view(), 0.1).is_ok());
    }

    #[test]
    fn negative_penalty_rejected() {
        let p = array![[1.0_f64], [2.0]];
        assert!(matches!(ridge_fit(p.view(), p.view(), -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn f32_matches_f64() {
        let p = array![[1.0_f64, 0.3], [2.0, -1.0], [0.5, 0.7], [1.5, 2.0]];
        let y = array![[1.0], [0.0], [2.0], [-1.0]];
        let b64 = ridge_fit(p.view(), y.view(), 0.5).unwrap();
        let b32 = ridge_fit(p.mapv(|v| v as f32).view(), y.mapv(|v| v as f32).view(), 0.5).unwrap();
        for (a, b) in b64.iter().zip(b32.iter()) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
