//! Layerwise feature matrices, sparse random projection and train-split
//! standardization.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, label_key};
use crate::scalar::Real;

/// Activations of one layer of one model, `[n_events, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    pub model_id: String,
    pub layer_id: String,
    pub data: Array2<T>,
    pub projected: bool,
    /// Projection seed, when `projected`.
    pub seed: Option<u64>,
}

impl<T: Real> FeatureMatrix<T> {
    pub fn new(model_id: impl Into<String>, layer_id: impl Into<String>, data: Array2<T>) -> Self {
        Self {
            model_id: model_id.into(),
            layer_id: layer_id.into(),
            data,
            projected: false,
            seed: None,
        }
    }

    pub fn n_events(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Key of the projection stream: `model_id/layer_id`.
    pub fn stream_label(&self) -> String {
        format!("{}/{}", self.model_id, self.layer_id)
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "features {}/{} contain a non-finite value at flat index {pos}",
                self.model_id, self.layer_id
            )));
        }
        Ok(())
    }
}

/// Smallest `p` with `p >= 4 ln(n) / (eps^2/2 - eps^3/3)`.
pub fn jl_dimension(n: usize, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if n < 2 {
        return Err(Error::config(format!("need at least 2 events for a JL bound, got {n}")));
    }
    let denom = epsilon * epsilon / 2.0 - epsilon.powi(3) / 3.0;
    let bound = 4.0 * (n as f64).ln() / denom;
    Ok(bound.ceil() as usize)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionPlan {
    pub epsilon: f64,
    pub target_dim: usize,
    pub source_dim: usize,
    pub seed: u64,
}

impl ProjectionPlan {
    /// Plan for `n_events` rows of dimension `source_dim`, with the target
    /// dimension taken from [`jl_dimension`].
    pub fn new(n_events: usize, source_dim: usize, epsilon: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            epsilon,
            target_dim: jl_dimension(n_events, epsilon)?,
            source_dim,
            seed,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.source_dim <= self.target_dim
    }

    /// Magnitude of the non-zero entries, `sqrt(sqrt(D) / p)`.
    pub fn entry_scale(&self) -> f64 {
        ((self.source_dim as f64).sqrt() / self.target_dim as f64).sqrt()
    }

    /// Probability that an entry is non-zero, `1 / sqrt(D)`.
    pub fn density(&self) -> f64 {
        1.0 / (self.source_dim as f64).sqrt()
    }

    /// Non-zero pattern of source row `d`: `(target column, is_positive)`.
    ///
    /// Row `d` is drawn from its own stream, so any subset of rows can be
    /// regenerated independently. Column gaps are geometric with success
    /// probability `1/sqrt(D)`, which gives i.i.d. Bernoulli occupancy.
    pub fn row_pattern(&self, stream_label: &str, d: usize) -> Vec<(u32, bool)> {
        let mut rng = keyed_rng(self.seed, label_key(stream_label), d as u64);
        let q = self.density();
        let log_miss = (1.0 - q).ln();
        let mut out = Vec::new();
        let mut col = 0usize;
        loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            let gap = if q >= 1.0 { 0.0 } else { (u.ln() / log_miss).floor() };
            if !gap.is_finite() || col as f64 + gap >= self.target_dim as f64 {
                break;
            }
            col += gap as usize;
            out.push((col as u32, rng.random::<bool>()));
            col += 1;
            if col >= self.target_dim {
                break;
            }
        }
        out
    }

    /// Materialized projection matrix `[D, p]`. Only for tests and small `D`.
    pub fn dense_matrix<T: Real>(&self, stream_label: &str) -> Array2<T> {
        let s = T::lit(self.entry_scale());
        let mut r = Array2::zeros((self.source_dim, self.target_dim));
        for d in 0..self.source_dim {
            for (c, pos) in self.row_pattern(stream_label, d) {
                r[[d, c as usize]] = if pos { s } else { -s };
            }
        }
        r
    }
}

/// Projects `features` to `plan.target_dim` columns with a sparse random
/// matrix, or returns them unchanged when `D <= p`.
pub fn sparse_projection<T: Real>(features: &FeatureMatrix<T>, plan: &ProjectionPlan) -> Result<FeatureMatrix<T>> {
    if features.dim() != plan.source_dim {
        return Err(Error::config(format!(
            "projection plan expects D = {}, features {}/{} have D = {}",
            plan.source_dim,
            features.model_id,
            features.layer_id,
            features.dim()
        )));
    }
    features.check_finite()?;
    if plan.is_identity() {
        return Ok(features.clone());
    }
    let label = features.stream_label();
    let pattern: Vec<Vec<(u32, bool)>> = (0..plan.source_dim)
        .into_par_iter()
        .map(|d| plan.row_pattern(&label, d))
        .collect();
    let scale = T::lit(plan.entry_scale());
    let mut out = Array2::<T>::zeros((features.n_events(), plan.target_dim));
    // each output row accumulates over d in a fixed order
    Zip::from(out.rows_mut())
        .and(features.data.rows())
        .par_for_each(|mut dst, src| {
            for (d, &f) in src.iter().enumerate() {
                if f == T::zero() {
                    continue;
                }
                for &(c, pos) in &pattern[d] {
                    let c = c as usize;
                    dst[c] = if pos { dst[c] + f } else { dst[c] - f };
                }
            }
            dst.mapv_inplace(|v| v * scale);
        });
    Ok(FeatureMatrix {
        model_id: features.model_id.clone(),
        layer_id: features.layer_id.clone(),
        data: out,
        projected: true,
        seed: Some(plan.seed),
    })
}

/// Column means and population standard deviations of a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Array1<T>,
    /// Strictly positive; zero-variance columns are stored as 1.
    pub std: Array1<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(train: ArrayView2<'_, T>) -> Result<Self> {
        let n = train.nrows();
        if n < 2 {
            return Err(Error::data(format!("standardizer needs at least 2 training rows, got {n}")));
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        let mean = train.sum_axis(Axis(0)) * inv_n;
        let mut var = Array1::<T>::zeros(train.ncols());
        for row in train.rows() {
            Zip::from(&mut var).and(&row).and(&mean).for_each(|v, &x, &m| {
                let d = x - m;
                *v = *v + d * d;
            });
        }
        let std = var.mapv(|v| {
            let s = (v * inv_n).sqrt();
            if s > T::zero() && s.is_finite() {
                s
            } else {
                T::one()
            }
        });
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = data.to_owned();
        for mut row in out.rows_mut() {
            Zip::from(&mut row)
                .and(&self.mean)
                .and(&self.std)
                .for_each(|x, &m, &s| *x = (*x - m) / s);
        }
        out
    }
}

pub fn fit_standardizer<T: Real>(train: ArrayView2<'_, T>) -> Result<Standardizer<T>> {
    Standardizer::fit(train)
}

pub fn apply_standardizer<T: Real>(standardizer: &Standardizer<T>, data: ArrayView2<'_, T>) -> Array2<T> {
    standardizer.apply(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn jl_dimension_examples() {
        assert_eq!(jl_dimension(1000, 0.1).unwrap(), 5921);
        assert_eq!(jl_dimension(100, 0.5).unwrap(), 222);
        assert_eq!(jl_dimension(2, 0.5).unwrap(), 34);
    }

    #[test]
    fn jl_dimension_rejects_bad_epsilon() {
        for eps in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(jl_dimension(100, eps), Err(Error::Config(_))));
        }
    }

    #[test]
    fn entry_probabilities_normalize() {
        for d in [4usize, 100, 10_000] {
            let q = 1.0 / (d as f64).sqrt();
            let total = q / 2.0 + (1.0 - q) + q / 2.0;
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_when_dimension_is_small() {
        let f = FeatureMatrix::new("m", "l", array![[1.0_f64, 2.0], [3.0, 4.0]]);
        let plan = ProjectionPlan::new(2, 2, 0.5, 9).unwrap();
        assert!(plan.is_identity());
        let p = sparse_projection(&f, &plan).unwrap();
        assert_eq!(p, f);
    }

    #[test]
    fn projection_rejects_non_finite_and_wrong_dimension() {
        let f = FeatureMatrix::new("m", "l", array![[1.0_f64, f64::NAN]]);
        let plan = ProjectionPlan::new(10, 2, 0.5, 1).unwrap();
        assert!(matches!(sparse_projection(&f, &plan), Err(Error::Data(_))));
        let plan = ProjectionPlan::new(10, 3, 0.5, 1).unwrap();
        assert!(matches!(sparse_projection(&f, &plan), Err(Error::Config(_))));
    }

    fn small_plan(source_dim: usize, target_dim: usize, seed: u64) -> ProjectionPlan {
        ProjectionPlan {
            epsilon: 0.5,
            target_dim,
            source_dim,
            seed,
        }
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = keyed_rng(seed, 0, 0);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn projection_equals_dense_product() {
        let plan = small_plan(400, 30, 5);
        let f = FeatureMatrix::new("m", "l", gaussian(7, 400, 1));
        let p = sparse_projection(&f, &plan).unwrap();
        let r = plan.dense_matrix::<f64>("m/l");
        let dense = f.data.dot(&r);
        for (a, b) in p.data.iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(p.projected);
        assert_eq!(p.seed, Some(5));
    }

    #[test]
    fn projection_matrix_is_reproducible_and_keyed() {
        let plan = small_plan(900, 50, 11);
        let a = plan.dense_matrix::<f64>("m/l1");
        assert_eq!(a, plan.dense_matrix::<f64>("m/l1"));
        assert_ne!(a, plan.dense_matrix::<f64>("m/l2"));
        assert_ne!(a, small_plan(900, 50, 12).dense_matrix::<f64>("m/l1"));
    }

    #[test]
    fn projection_entry_frequencies() {
        // D = 2500: non-zero w.p. 1/50, each sign w.p. 1/100
        let plan = small_plan(2500, 400, 3);
        let r = plan.dense_matrix::<f64>("freq");
        let total = r.len() as f64;
        let pos = r.iter().filter(|&&v| v > 0.0).count() as f64 / total;
        let neg = r.iter().filter(|&&v| v < 0.0).count() as f64 / total;
        assert!((pos - 0.01).abs() < 0.0006, "positive fraction {pos}");
        assert!((neg - 0.01).abs() < 0.0006, "negative fraction {neg}");
        let s = plan.entry_scale();
        assert!(r.iter().all(|&v| v == 0.0 || (v.abs() - s).abs() < 1e-15));
    }

    #[test]
    fn projection_is_linear() {
        let plan = small_plan(500, 40, 21);
        let f1 = gaussian(6, 500, 2);
        let f2 = gaussian(6, 500, 3);
        let (a, b) = (1.75, -0.5);
        let proj = |m: Array2<f64>| sparse_projection(&FeatureMatrix::new("m", "l", m), &plan).unwrap().data;
        let lhs = proj(&f1 * a + &f2 * b);
        let rhs = proj(f1) * a + proj(f2) * b;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn standardize_example_column() {
        let s = Standardizer::fit(array![[1.0_f64], [2.0], [3.0]].view()).unwrap();
        let out = s.apply(array![[1.0], [2.0], [3.0]].view());
        let expected = [-1.224744871391589, 0.0, 1.224744871391589];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let train = array![[5.0_f64, 1.0], [5.0, 2.0], [5.0, 4.0]];
        let s = Standardizer::fit(train.view()).unwrap();
        assert_eq!(s.std[0], 1.0);
        assert!(s.apply(train.view()).column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardized_training_columns_have_zero_mean_unit_std() {
        let train = gaussian(50, 6, 8) * 3.0 + 2.0;
        let s = Standardizer::fit(train.view()).unwrap();
        let z = s.apply(train.view());
        for col in z.columns() {
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-10);
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn standardizer_needs_two_rows() {
        assert!(Standardizer::fit(array![[1.0_f64, 2.0]].view()).is_err());
    }

    #[test]
    fn standardizer_in_f32() {
        let s = Standardizer::fit(array![[1.0_f32], [2.0], [3.0]].view()).unwrap();
        let out = s.apply(array![[3.0_f32]].view());
        assert!((out[[0, 0]] - 1.224_745).abs() < 1e-5);
    }
}
