use std::collections::BTreeMap;

use ndarray::{s, Array2, Array3, ArrayView1, ArrayView2, Axis, CowArray, Ix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{FoldPlan, Split};
use super::pearson::pearson_columns;
use super::ridge::RidgeSystem;
use crate::error::{Error, Result};
use crate::event_model::ResponseTensor;
use crate::feature_store::{FeatureMatrix, Standardizer};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeConfig {
    pub lambdas: Vec<f64>,
}

impl Default for RidgeConfig {
    /// One penalty per decade from 1e-1 to 1e6.
    fn default() -> Self {
        Self::log_grid(1e-1, 1e6, 8).expect("default grid is valid")
    }
}

impl RidgeConfig {
    pub fn log_grid(min: f64, max: f64, points: usize) -> Result<Self> {
        if !(min > 0.0) || !(max >= min) || points == 0 || !max.is_finite() {
            return Err(Error::config(format!(
                "invalid lambda grid: min {min}, max {max}, {points} points"
            )));
        }
        let lambdas = if points == 1 {
            vec![min]
        } else {
            let (lo, hi) = (min.log10(), max.log10());
            (0..points)
                .map(|i| {
                    let e = lo + (hi - lo) * i as f64 / (points - 1) as f64;
                    // snap exact decades so 10^k prints as 10^k
                    if (e - e.round()).abs() < 1e-12 {
                        10f64.powi(e.round() as i32)
                    } else {
                        10f64.powf(e)
                    }
                })
                .collect()
        };
        Ok(Self { lambdas })
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() {
            return Err(Error::config("lambda grid is empty"));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(Error::config(format!("lambda grid values must be > 0, got {l}")));
        }
        Ok(())
    }
}

/// All layers of one model, each `[n_events, D]`.
#[derive(Clone, Debug)]
pub struct ModelFeatures<T> {
    pub model_id: String,
    pub layers: Vec<FeatureMatrix<T>>,
}

/// Fold-averaged scores of one layer at the penalty chosen per electrode.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerScores<T> {
    pub layer_id: String,
    /// Chosen penalty per electrode.
    pub lambda: Vec<f64>,
    /// `[split, electrode, bin]`
    pub scores: Array3<T>,
}

impl<T: Real> LayerScores<T> {
    /// Validation score averaged over bins.
    pub fn mean_validation(&self, electrode: usize) -> T {
        self.scores
            .slice(s![Split::Validation.index(), electrode, ..])
            .mean()
            .unwrap_or_else(T::zero)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelScores<T> {
    pub model_id: String,
    pub layers: Vec<LayerScores<T>>,
    /// Best layer per electrode by time-averaged validation score.
    pub chosen_layer: Vec<usize>,
}

impl<T: Real> ModelScores<T> {
    /// Score curve over bins of the chosen layer.
    pub fn curve(&self, electrode: usize, split: Split) -> ArrayView1<'_, T> {
        self.layers[self.chosen_layer[electrode]]
            .scores
            .slice(s![split.index(), electrode, ..])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor<T> {
    pub n_electrodes: usize,
    pub n_bins: usize,
    pub lambdas: Vec<f64>,
    pub models: Vec<ModelScores<T>>,
}

/// Penalty and layer choices of a finished run, reused by the bootstrap.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub model_id: String,
    pub chosen_layer: Vec<usize>,
    /// Penalty of the chosen layer, per electrode.
    pub lambda: Vec<f64>,
}

impl<T: Real> ScoreTensor<T> {
    pub fn model(&self, model_id: &str) -> Option<&ModelScores<T>> {
        self.models.iter().find(|m| m.model_id == model_id)
    }

    pub fn selections(&self) -> Vec<Selection> {
        self.models
            .iter()
            .map(|m| Selection {
                model_id: m.model_id.clone(),
                chosen_layer: m.chosen_layer.clone(),
                lambda: m
                    .chosen_layer
                    .iter()
                    .enumerate()
                    .map(|(e, &l)| m.layers[l].lambda[e])
                    .collect(),
            })
            .collect()
    }
}

/// Target columns sharing one penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaGroup {
    pub lambda: f64,
    pub columns: Vec<usize>,
}

/// Cross-validated Pearson scores of one design against target columns.
///
/// Per fold the design is standardized with training statistics, the normal
/// equations are formed once, and each group is solved at its penalty.
/// Returns, per group, the fold-averaged scores `[split, group column]`.
pub fn score_fold_split<T: Real>(
    design: ArrayView2<'_, T>,
    targets: ArrayView2<'_, T>,
    folds: &FoldPlan,
    groups: &[LambdaGroup],
) -> Result<Vec<Array2<T>>> {
    if design.nrows() != folds.n_events || targets.nrows() != folds.n_events {
        return Err(Error::data(format!(
            "fold plan covers {} events, design has {} rows and targets {}",
            folds.n_events,
            design.nrows(),
            targets.nrows()
        )));
    }
    let mut union: Vec<usize> = groups.iter().flat_map(|g| g.columns.iter().copied()).collect();
    union.sort_unstable();
    union.dedup();
    let local: BTreeMap<usize, usize> = union.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let group_cols: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.columns.iter().map(|c| local[c]).collect())
        .collect();
    let identity = union.len() == targets.ncols() && union.iter().enumerate().all(|(i, &c)| i == c);
    let y: CowArray<'_, T, Ix2> = if identity {
        targets.into()
    } else {
        targets.select(Axis(1), &union).into()
    };

    let weight = T::one() / T::from_usize_lossy(folds.k());
    let mut out: Vec<Array2<T>> = groups.iter().map(|g| Array2::zeros((3, g.columns.len()))).collect();
    for (f, fold) in folds.folds.iter().enumerate() {
        let rows: Vec<Vec<usize>> = Split::ALL.iter().map(|&s| fold.indices(s)).collect();
        let x_train = design.select(Axis(0), &rows[0]);
        let standardizer = Standardizer::fit(x_train.view())?;
        let z: Vec<Array2<T>> = rows
            .iter()
            .map(|r| standardizer.apply(design.select(Axis(0), r).view()))
            .collect();
        let ys: Vec<Array2<T>> = rows.iter().map(|r| y.select(Axis(0), r)).collect();
        let system = RidgeSystem::new(z[0].view(), ys[0].view())?;
        for (g, group) in groups.iter().enumerate() {
            let cols = &group_cols[g];
            let chol = system
                .factor(group.lambda)
                .map_err(|e| Error::numerical(format!("fold {f}, lambda {}: {e}", group.lambda)))?;
            let whole = cols.len() == y.ncols() && cols.iter().enumerate().all(|(i, &c)| i == c);
            let beta = if whole {
                chol.solve(system.cross.view())?
            } else {
                chol.solve(system.cross.select(Axis(1), cols).view())?
            };
            for split in Split::ALL {
                let pred = z[split.index()].dot(&beta);
                if pred.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numerical(format!(
                        "non-finite predictions at lambda {}, fold {f}",
                        group.lambda
                    )));
                }
                let r = if whole {
                    pearson_columns(pred.view(), ys[split.index()].view())?
                } else {
                    let actual = ys[split.index()].select(Axis(1), cols);
                    pearson_columns(pred.view(), actual.view())?
                };
                let mut row = out[g].row_mut(split.index());
                for (dst, v) in row.iter_mut().zip(r) {
                    *dst = *dst + v * weight;
                }
            }
        }
    }
    Ok(out)
}

fn check_shapes<T: Real>(features: &[ModelFeatures<T>], n_events: usize, folds: &FoldPlan) -> Result<()> {
    if folds.n_events != n_events {
        return Err(Error::data(format!(
            "fold plan covers {} events, responses have {n_events}",
            folds.n_events
        )));
    }
    for m in features {
        if m.layers.is_empty() {
            return Err(Error::data(format!("model {} has no layers", m.model_id)));
        }
        for l in &m.layers {
            if l.n_events() != n_events {
                return Err(Error::data(format!(
                    "features {}/{} have {} events, responses have {n_events}",
                    m.model_id,
                    l.layer_id,
                    l.n_events()
                )));
            }
        }
    }
    Ok(())
}

fn first_argmax<T: Real>(values: impl IntoIterator<Item = T>) -> usize {
    let mut best = 0;
    let mut best_v = T::neg_infinity();
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn layer_grid<T: Real>(
    layer: &FeatureMatrix<T>,
    targets: ArrayView2<'_, T>,
    folds: &FoldPlan,
    config: &RidgeConfig,
    n_electrodes: usize,
    n_bins: usize,
) -> Result<LayerScores<T>> {
    let all: Vec<usize> = (0..targets.ncols()).collect();
    let groups: Vec<LambdaGroup> = config
        .lambdas
        .iter()
        .map(|&lambda| LambdaGroup {
            lambda,
            columns: all.clone(),
        })
        .collect();
    let grid = score_fold_split(layer.data.view(), targets, folds, &groups)
        .map_err(|e| annotate(e, &layer.model_id, &layer.layer_id))?;

    let mut lambda = Vec::with_capacity(n_electrodes);
    let mut scores = Array3::zeros((3, n_electrodes, n_bins));
    for e in 0..n_electrodes {
        let cols = e * n_bins..(e + 1) * n_bins;
        let best = first_argmax(grid.iter().map(|g| {
            g.slice(s![Split::Validation.index(), cols.clone()])
                .mean()
                .unwrap_or_else(T::zero)
        }));
        lambda.push(config.lambdas[best]);
        scores
            .slice_mut(s![.., e, ..])
            .assign(&grid[best].slice(s![.., cols]));
    }
    Ok(LayerScores {
        layer_id: layer.layer_id.clone(),
        lambda,
        scores,
    })
}

fn annotate(err: Error, model: &str, layer: &str) -> Error {
    match err {
        Error::Numerical(msg) => Error::numerical(format!("{model}/{layer}: {msg}")),
        other => other,
    }
}

/// Grid-searched k-fold ridge for every (model, layer) against every
/// electrode × bin target.
///
/// The penalty is chosen per (model, layer, electrode) by the bin-averaged
/// validation score and the layer per (model, electrode) by the same
/// criterion; the lowest index wins ties. Test targets never enter either
/// choice.
pub fn run_regression<T: Real>(
    features: &[ModelFeatures<T>],
    responses: &ResponseTensor<T>,
    folds: &FoldPlan,
    config: &RidgeConfig,
) -> Result<ScoreTensor<T>> {
    config.validate()?;
    check_shapes(features, responses.n_events(), folds)?;
    let (n_electrodes, n_bins) = (responses.n_electrodes(), responses.n_bins());
    let targets = responses.targets();

    let units: Vec<(usize, usize)> = features
        .iter()
        .enumerate()
        .flat_map(|(m, mf)| (0..mf.layers.len()).map(move |l| (m, l)))
        .collect();
    let layer_scores: Vec<LayerScores<T>> = units
        .par_iter()
        .map(|&(m, l)| layer_grid(&features[m].layers[l], targets.view(), folds, config, n_electrodes, n_bins))
        .collect::<Result<_>>()?;

    let mut it = layer_scores.into_iter();
    let models = features
        .iter()
        .map(|mf| {
            let layers: Vec<LayerScores<T>> = it.by_ref().take(mf.layers.len()).collect();
            let chosen_layer = (0..n_electrodes)
                .map(|e| first_argmax(layers.iter().map(|l| l.mean_validation(e))))
                .collect();
            ModelScores {
                model_id: mf.model_id.clone(),
                layers,
                chosen_layer,
            }
        })
        .collect();
    Ok(ScoreTensor {
        n_electrodes,
        n_bins,
        lambdas: config.lambdas.clone(),
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{make_folds, pearson, ridge_fit};
    use crate::event_model::ElectrodeMeta;
    use crate::rng::keyed_rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = keyed_rng(seed, 1, 0);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    fn electrodes(n: usize) -> Vec<ElectrodeMeta> {
        (0..n as u32)
            .map(|i| ElectrodeMeta {
                electrode_id: i,
                subject_id: 1,
                region_label: "fusiform".into(),
                coordinates: None,
            })
            .collect()
    }

    /// `[n_electrodes, n_events, n_bins]` from per-electrode signals and bin gains
    fn responses(signals: &[Array2<f64>], n_bins: usize) -> ResponseTensor<f64> {
        let n = signals[0].nrows();
        let values = Array3::from_shape_fn((signals.len(), n, n_bins), |(e, i, b)| {
            signals[e][[i, b.min(signals[e].ncols() - 1)]]
        });
        ResponseTensor::new(electrodes(signals.len()), values, (0..n_bins).map(|b| b as f64).collect()).unwrap()
    }

    #[test]
    fn default_grid_has_one_point_per_decade() {
        let g = RidgeConfig::default();
        assert_eq!(g.lambdas, vec![0.1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6]);
        assert!(RidgeConfig { lambdas: vec![0.0] }.validate().is_err());
    }

    #[test]
    fn noiseless_linear_target_is_recovered() {
        let n = 200;
        let x = gaussian(n, 6, 1);
        let w = gaussian(6, 1, 2);
        let y = x.dot(&w);
        let other = gaussian(n, 6, 3);
        let features = vec![ModelFeatures {
            model_id: "m".into(),
            layers: vec![FeatureMatrix::new("m", "noise", other), FeatureMatrix::new("m", "true", x)],
        }];
        let resp = responses(&[y], 3);
        let folds = make_folds(n, 5).unwrap();
        let scores = run_regression(&features, &resp, &folds, &RidgeConfig::default()).unwrap();
        let m = &scores.models[0];
        assert_eq!(m.chosen_layer, vec![1]);
        assert!(m.curve(0, Split::Test).iter().all(|&r| r >= 0.999));
    }

    #[test]
    fn single_layer_single_lambda_matches_direct_composition() {
        let n = 100;
        let x = gaussian(n, 4, 5);
        let y = x.dot(&gaussian(4, 2, 6)) + gaussian(n, 2, 7);
        let resp = responses(&[y.clone()], 2);
        let folds = make_folds(n, 5).unwrap();
        let features = vec![ModelFeatures {
            model_id: "m".into(),
            layers: vec![FeatureMatrix::new("m", "l", x.clone())],
        }];
        let lambda = 10.0;
        let scores = run_regression(&features, &resp, &folds, &RidgeConfig { lambdas: vec![lambda] }).unwrap();

        let mut expected = Array2::<f64>::zeros((3, 2));
        for fold in &folds.folds {
            let tr = fold.indices(Split::Train);
            let st = Standardizer::fit(x.select(Axis(0), &tr).view()).unwrap();
            let beta = ridge_fit(
                st.apply(x.select(Axis(0), &tr).view()).view(),
                y.select(Axis(0), &tr).view(),
                lambda,
            )
            .unwrap();
            for split in Split::ALL {
                let rows = fold.indices(split);
                let pred = st.apply(x.select(Axis(0), &rows).view()).dot(&beta);
                let actual = y.select(Axis(0), &rows);
                for b in 0..2 {
                    let r = pearson(&pred.column(b).to_vec(), &actual.column(b).to_vec()).unwrap().r;
                    expected[[split.index(), b]] += r / 5.0;
                }
            }
        }
        let got = &scores.models[0].layers[0].scores;
        for split in Split::ALL {
            for b in 0..2 {
                assert!((got[[split.index(), 0, b]] - expected[[split.index(), b]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn white_noise_scores_center_on_zero() {
        let n = 300;
        let resp = responses(&[gaussian(n, 10, 11), gaussian(n, 10, 12)], 10);
        let features = vec![ModelFeatures {
            model_id: "m".into(),
            layers: vec![FeatureMatrix::new("m", "l", gaussian(n, 5, 13))],
        }];
        let folds = make_folds(n, 5).unwrap();
        let scores = run_regression(&features, &resp, &folds, &RidgeConfig::default()).unwrap();
        let test = scores.models[0].layers[0].scores.slice(s![Split::Test.index(), .., ..]).to_owned();
        let mean = test.mean().unwrap();
        let bound = 2.0 / ((n / 10 * 5) as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} bound {bound}");
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        let n = 120;
        let resp = responses(&[gaussian(n, 4, 21)], 4);
        let features = vec![ModelFeatures {
            model_id: "m".into(),
            layers: vec![FeatureMatrix::new("m", "l", gaussian(n, 3, 22))],
        }];
        let scores = run_regression(&features, &resp, &make_folds(n, 5).unwrap(), &RidgeConfig::default()).unwrap();
        assert!(scores.models[0].layers[0].scores.iter().all(|r| (-1.0..=1.0).contains(r)));
    }

    #[test]
    fn mismatched_event_counts_are_rejected() {
        let resp = responses(&[gaussian(100, 2, 1)], 2);
        let features = vec![ModelFeatures {
            model_id: "m".into(),
            layers: vec![FeatureMatrix::new("m", "l", gaussian(90, 3, 2))],
        }];
        let err = run_regression(&features, &resp, &make_folds(100, 5).unwrap(), &RidgeConfig::default());
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn regression_runs_in_f32() {
        let n = 100;
        let x = gaussian(n, 3, 31);
        let y = x.dot(&gaussian(3, 1, 32));
        let resp32 = ResponseTensor::new(
            electrodes(1),
            Array3::from_shape_fn((1, n, 2), |(_, i, _)| y[[i, 0]] as f32),
            vec![0.0, 1.0],
        )
        .unwrap();
        let features = vec![ModelFeatures {
            model_id: "m".into(),
            layers: vec![FeatureMatrix::new("m", "l", x.mapv(|v| v as f32))],
        }];
        let scores = run_regression(&features, &resp32, &make_folds(n, 5).unwrap(), &RidgeConfig::default()).unwrap();
        assert!(scores.models[0].curve(0, Split::Test).iter().all(|&r| r > 0.999));
    }
}
