use ndarray::{ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Sample correlation. `degenerate` is set (and `r` is 0) when either input
/// has zero variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pearson<T> {
    pub r: T,
    pub degenerate: bool,
}

pub fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<Pearson<T>> {
    if x.len() != y.len() {
        return Err(Error::data(format!("pearson inputs differ in length: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::data("pearson needs at least two observations"));
    }
    Ok(correlate(ArrayView1::from(x), ArrayView1::from(y)))
}

fn correlate<T: Real>(x: ArrayView1<'_, T>, y: ArrayView1<'_, T>) -> Pearson<T> {
    let n = T::from_usize_lossy(x.len());
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if !(sxx > T::zero()) || !(syy > T::zero()) {
        return Pearson {
            r: T::zero(),
            degenerate: true,
        };
    }
    let r = sxy / (sxx * syy).sqrt();
    Pearson {
        r: r.max(-T::one()).min(T::one()),
        degenerate: false,
    }
}

/// Column-wise correlation of two equally shaped matrices.
pub fn pearson_columns<T: Real>(pred: ArrayView2<'_, T>, actual: ArrayView2<'_, T>) -> Result<Vec<T>> {
    if pred.dim() != actual.dim() {
        return Err(Error::data(format!(
            "prediction shape {:?} differs from target shape {:?}",
            pred.dim(),
            actual.dim()
        )));
    }
    if pred.nrows() < 2 {
        return Err(Error::data("pearson needs at least two observations"));
    }
    // accumulate row by row so both operands are read contiguously
    let pred = pred.as_standard_layout();
    let actual = actual.as_standard_layout();
    let c = pred.ncols();
    if c == 0 {
        return Ok(Vec::new());
    }
    let n = T::from_usize_lossy(pred.nrows());
    let mp: Vec<T> = (pred.sum_axis(Axis(0)) / n).to_vec();
    let ma: Vec<T> = (actual.sum_axis(Axis(0)) / n).to_vec();
    let (mut sxy, mut sxx, mut syy) = (vec![T::zero(); c], vec![T::zero(); c], vec![T::zero(); c]);
    let p_all = pred.as_slice().expect("standard layout");
    let a_all = actual.as_slice().expect("standard layout");
    for (p_row, a_row) in p_all.chunks_exact(c).zip(a_all.chunks_exact(c)) {
        for j in 0..c {
            let a = p_row[j] - mp[j];
            let b = a_row[j] - ma[j];
            sxy[j] = sxy[j] + a * b;
            sxx[j] = sxx[j] + a * a;
            syy[j] = syy[j] + b * b;
        }
    }
    Ok((0..c)
        .map(|j| {
            if !(sxx[j] > T::zero()) || !(syy[j] > T::zero()) {
                T::zero()
            } else {
                (sxy[j] / (sxx[j] * syy[j]).sqrt()).max(-T::one()).min(T::one())
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_relations() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().r, 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap().r, -1.0);
    }

    #[test]
    fn hand_computed_example() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap().r;
        assert!((r - 0.8_f64).abs() < 1e-15);
    }

    #[test]
    fn degenerate_input_returns_zero() {
        let p = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.r, 0.0);
        assert!(p.degenerate);
    }

    #[test]
    fn length_mismatch_is_a_data_error() {
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0]), Err(Error::Data(_))));
        assert!(pearson::<f64>(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn columns_match_scalar_version() {
        let p = array![[1.0_f32, 0.0], [2.0, 1.0], [3.0, 0.5], [4.0, 2.0]];
        let a = array![[1.0_f32, 1.0], [3.0, 1.0], [2.0, 1.0], [4.0, 1.0]];
        let rs = pearson_columns(p.view(), a.view()).unwrap();
        assert!((rs[0] - 0.8).abs() < 1e-6);
        assert_eq!(rs[1], 0.0);
    }
}
