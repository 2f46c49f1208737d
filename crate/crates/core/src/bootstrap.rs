//! Bootstrap over event structures: confidence intervals on encoding scores
//! and the validation-based survivor filter.

use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::encoder::{score_fold_split, FoldPlan, LambdaGroup, ModelFeatures, Selection, Split};
use crate::error::{Error, Result};
use crate::event_model::ResponseTensor;
use crate::rng::{keyed_rng, label_key};
use crate::scalar::Real;

const RESAMPLE_STREAM: &str = "event-resample";

/// `B` rows of event indices drawn with replacement, shared by every model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResampleSet {
    pub n_events: usize,
    pub seed: u64,
    pub sorted: bool,
    /// `[B, n_events]`
    pub rows: Array2<u32>,
}

impl ResampleSet {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn row(&self, r: usize) -> Vec<usize> {
        self.rows.row(r).iter().map(|&i| i as usize).collect()
    }

    /// SHA-256 over the little-endian index matrix.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.rows.nrows() as u64).to_le_bytes());
        h.update((self.rows.ncols() as u64).to_le_bytes());
        for v in self.rows.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Draws `b` rows of `n_events` indices uniformly with replacement. Row `r`
/// comes from its own stream keyed by `(seed, r)`; when `sort` is set each row
/// is ordered by onset (ties by index) to keep movie order.
pub fn make_resamples(n_events: usize, b: usize, seed: u64, onsets: &[f64], sort: bool) -> Result<ResampleSet> {
    if n_events < 2 {
        return Err(Error::config(format!("need at least 2 events to resample, got {n_events}")));
    }
    if onsets.len() != n_events {
        return Err(Error::data(format!("{} onsets for {n_events} events", onsets.len())));
    }
    if n_events > u32::MAX as usize {
        return Err(Error::data("too many events for a resample index"));
    }
    let key = label_key(RESAMPLE_STREAM);
    let rows: Vec<Vec<u32>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = keyed_rng(seed, key, r as u64);
            let mut row: Vec<u32> = (0..n_events).map(|_| rng.random_range(0..n_events as u32)).collect();
            if sort {
                row.sort_by(|&a, &c| {
                    onsets[a as usize]
                        .total_cmp(&onsets[c as usize])
                        .then(a.cmp(&c))
                });
            }
            row
        })
        .collect();
    let flat: Vec<u32> = rows.into_iter().flatten().collect();
    Ok(ResampleSet {
        n_events,
        seed,
        sorted: sort,
        rows: Array2::from_shape_vec((b, n_events), flat).expect("resample shape"),
    })
}

/// Per (model, split, electrode, bin) bootstrap summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapCI {
    pub models: Vec<String>,
    pub n_electrodes: usize,
    pub n_bins: usize,
    /// `[model, split, electrode, bin]`
    pub mean: Array4<f64>,
    pub lower: Array4<f64>,
    pub upper: Array4<f64>,
    /// Resamples that entered each model's intervals.
    pub used_resamples: Vec<usize>,
    pub resample_digest: String,
}

impl BootstrapCI {
    pub fn model_index(&self, model_id: &str) -> Option<usize> {
        self.models.iter().position(|m| m == model_id)
    }
}

/// 1-based rank `ceil(q * b)` for `q` given in permille.
fn nearest_rank(permille: usize, b: usize) -> usize {
    ((permille * b).div_ceil(1000)).max(1)
}

/// Mean and nearest-rank 2.5th / 97.5th percentiles. Sorts `values` in place.
pub fn percentile_interval(values: &mut [f64]) -> (f64, f64, f64) {
    let b = values.len();
    if b == 0 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    values.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / b as f64;
    let lower = values[nearest_rank(25, b) - 1];
    let upper = values[nearest_rank(975, b) - 1];
    (mean, lower, upper)
}

#[derive(Clone, Debug)]
pub struct BootstrapOutcome {
    pub ci: BootstrapCI,
    /// `(model, resample, message)` for resamples whose regression failed.
    pub failures: Vec<(String, usize, String)>,
}

fn lambda_groups(selection: &Selection, layer: usize, n_bins: usize) -> Vec<LambdaGroup> {
    let mut groups: Vec<LambdaGroup> = Vec::new();
    for (e, (&l, &lambda)) in selection.chosen_layer.iter().zip(&selection.lambda).enumerate() {
        if l != layer {
            continue;
        }
        let cols = e * n_bins..(e + 1) * n_bins;
        match groups.iter_mut().find(|g| g.lambda.to_bits() == lambda.to_bits()) {
            Some(g) => g.columns.extend(cols),
            None => groups.push(LambdaGroup {
                lambda,
                columns: cols.collect(),
            }),
        }
    }
    groups
}

/// Scores of one model on one resample, `[split, target]`.
fn resample_scores<T: Real>(
    model: &ModelFeatures<T>,
    selection: &Selection,
    targets: &Array2<T>,
    rows: &[usize],
    folds: &FoldPlan,
    n_bins: usize,
) -> Result<Array2<f64>> {
    let y = targets.select(Axis(0), rows);
    let mut out = Array2::from_elem((3, targets.ncols()), f64::NAN);
    let mut layers: Vec<usize> = selection.chosen_layer.clone();
    layers.sort_unstable();
    layers.dedup();
    for layer in layers {
        let groups = lambda_groups(selection, layer, n_bins);
        let x = model.layers[layer].data.select(Axis(0), rows);
        let scores = score_fold_split(x.view(), y.view(), folds, &groups)?;
        for (g, sc) in groups.iter().zip(scores) {
            for (j, &c) in g.columns.iter().enumerate() {
                for split in Split::ALL {
                    out[[split.index(), c]] = sc[[split.index(), j]].to_f64_lossy();
                }
            }
        }
    }
    Ok(out)
}

/// Re-runs every model's fold regressions on each resample, reusing the
/// penalty and layer chosen by the primary run, and summarizes the score
/// distribution per (model, split, electrode, bin).
///
/// Failed resamples are logged and excluded; more than 1% failures for a
/// model aborts.
pub fn bootstrap_scores<T: Real>(
    features: &[ModelFeatures<T>],
    responses: &ResponseTensor<T>,
    folds: &FoldPlan,
    selections: &[Selection],
    resamples: &ResampleSet,
) -> Result<BootstrapOutcome> {
    if resamples.n_events != responses.n_events() || folds.n_events != responses.n_events() {
        return Err(Error::data(format!(
            "resamples cover {} events, folds {}, responses {}",
            resamples.n_events,
            folds.n_events,
            responses.n_events()
        )));
    }
    if resamples.is_empty() {
        return Err(Error::config("bootstrap needs at least one resample"));
    }
    let (n_electrodes, n_bins) = (responses.n_electrodes(), responses.n_bins());
    let targets = responses.targets();
    let b = resamples.len();
    let n_models = features.len();

    let mut mean = Array4::from_elem((n_models, 3, n_electrodes, n_bins), f64::NAN);
    let mut lower = mean.clone();
    let mut upper = mean.clone();
    let mut used_resamples = Vec::with_capacity(n_models);
    let mut failures = Vec::new();

    for (m, model) in features.iter().enumerate() {
        let selection = selections
            .iter()
            .find(|s| s.model_id == model.model_id)
            .ok_or_else(|| Error::data(format!("no layer/lambda selection for model {}", model.model_id)))?;
        if selection.chosen_layer.len() != n_electrodes || selection.chosen_layer.iter().any(|&l| l >= model.layers.len()) {
            return Err(Error::data(format!("selection for {} does not match the data", model.model_id)));
        }
        let per_resample: Vec<Result<Array2<f64>>> = (0..b)
            .into_par_iter()
            .map(|r| resample_scores(model, selection, &targets, &resamples.row(r), folds, n_bins))
            .collect();

        let mut ok: Vec<Array2<f64>> = Vec::with_capacity(b);
        let mut model_failures = Vec::new();
        for (r, res) in per_resample.into_iter().enumerate() {
            match res {
                Ok(scores) => ok.push(scores),
                Err(Error::Numerical(msg)) => {
                    log::warn!("resample {r} failed for model {}: {msg}", model.model_id);
                    model_failures.push((model.model_id.clone(), r, msg));
                }
                Err(other) => return Err(other),
            }
        }
        if model_failures.len() * 100 > b {
            let shown: Vec<String> = model_failures
                .iter()
                .take(5)
                .map(|(_, r, msg)| format!("resample {r}: {msg}"))
                .collect();
            return Err(Error::numerical(format!(
                "{} of {b} resamples failed for model {} (limit 1%): {}",
                model_failures.len(),
                model.model_id,
                shown.join("; ")
            )));
        }
        failures.extend(model_failures);

        let mut buf = vec![0.0; ok.len()];
        for split in 0..3 {
            for e in 0..n_electrodes {
                for bin in 0..n_bins {
                    let col = e * n_bins + bin;
                    for (dst, scores) in buf.iter_mut().zip(&ok) {
                        *dst = scores[[split, col]];
                    }
                    let (mu, lo, hi) = percentile_interval(&mut buf);
                    mean[[m, split, e, bin]] = mu;
                    lower[[m, split, e, bin]] = lo;
                    upper[[m, split, e, bin]] = hi;
                }
            }
        }
        used_resamples.push(ok.len());
    }

    Ok(BootstrapOutcome {
        ci: BootstrapCI {
            models: features.iter().map(|f| f.model_id.clone()).collect(),
            n_electrodes,
            n_bins,
            mean,
            lower,
            upper,
            used_resamples,
            resample_digest: resamples.digest(),
        },
        failures,
    })
}

/// Bins whose validation lower bound is strictly above zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivorMask {
    pub models: Vec<String>,
    /// `[model, electrode, bin]`
    pub mask: Array3<bool>,
    /// `[model, electrode]`
    pub counts: Array2<usize>,
}

impl SurvivorMask {
    pub fn survives(&self, model: usize, electrode: usize, bin: usize) -> bool {
        self.mask[[model, electrode, bin]]
    }

    /// A model with no surviving bin is dropped from the electrode.
    pub fn is_dropped(&self, model: usize, electrode: usize) -> bool {
        self.counts[[model, electrode]] == 0
    }

    pub fn bins(&self, model: usize, electrode: usize) -> Vec<usize> {
        self.mask
            .slice(s![model, electrode, ..])
            .iter()
            .enumerate()
            .filter_map(|(b, &keep)| keep.then_some(b))
            .collect()
    }
}

pub fn survivor_mask(ci: &BootstrapCI) -> SurvivorMask {
    let val = ci.lower.index_axis(Axis(1), Split::Validation.index());
    let mask = val.mapv(|lo| lo > 0.0);
    let counts = mask.map_axis(Axis(2), |bins| bins.iter().filter(|&&b| b).count());
    SurvivorMask {
        models: ci.models.clone(),
        mask,
        counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn resample_rows_are_in_range_and_sorted() {
        let onsets: Vec<f64> = (0..50).map(|i| i as f64 * 10.0).collect();
        let set = make_resamples(50, 20, 3, &onsets, true).unwrap();
        assert_eq!(set.rows.dim(), (20, 50));
        for row in set.rows.rows() {
            assert!(row.iter().all(|&i| (i as usize) < 50));
            assert!(row.windows(2).into_iter().all(|w| onsets[w[0] as usize] <= onsets[w[1] as usize]));
        }
    }

    #[test]
    fn sorting_follows_onsets_not_indices() {
        // onsets deliberately not monotone in index
        let onsets = [5.0, 1.0, 3.0, 2.0, 4.0];
        let set = make_resamples(5, 10, 1, &onsets, true).unwrap();
        for row in set.rows.rows() {
            assert!(row.windows(2).into_iter().all(|w| onsets[w[0] as usize] <= onsets[w[1] as usize]));
        }
    }

    #[test]
    fn unsorted_toggle_keeps_draw_order() {
        let onsets: Vec<f64> = (0..200).map(f64::from).collect();
        let set = make_resamples(200, 5, 9, &onsets, false).unwrap();
        let any_descent = set
            .rows
            .rows()
            .into_iter()
            .any(|r| r.windows(2).into_iter().any(|w| w[1] < w[0]));
        assert!(any_descent);
        let sorted = make_resamples(200, 5, 9, &onsets, true).unwrap();
        for (a, b) in set.rows.rows().into_iter().zip(sorted.rows.rows()) {
            let mut a = a.to_vec();
            a.sort_unstable();
            assert_eq!(a, b.to_vec());
        }
    }

    #[test]
    fn distinct_fraction_approaches_one_minus_inverse_e() {
        let n = 2000;
        let onsets: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let set = make_resamples(n, 50, 17, &onsets, true).unwrap();
        let mut total = 0.0;
        for row in set.rows.rows() {
            let mut v = row.to_vec();
            v.dedup();
            total += v.len() as f64 / n as f64;
        }
        let frac = total / 50.0;
        assert!((frac - (1.0 - (-1.0f64).exp())).abs() < 0.02, "distinct fraction {frac}");
    }

    #[test]
    fn resamples_are_deterministic_and_seeded() {
        let onsets: Vec<f64> = (0..30).map(f64::from).collect();
        let a = make_resamples(30, 8, 42, &onsets, true).unwrap();
        assert_eq!(a.digest(), make_resamples(30, 8, 42, &onsets, true).unwrap().digest());
        assert_ne!(a.digest(), make_resamples(30, 8, 43, &onsets, true).unwrap().digest());
        assert!(make_resamples(1, 8, 42, &[0.0], true).is_err());
    }

    #[test]
    fn constant_scores_give_degenerate_interval() {
        let mut v = vec![0.5; 1000];
        assert_eq!(percentile_interval(&mut v), (0.5, 0.5, 0.5));
    }

    #[test]
    fn nearest_rank_order_statistics() {
        let mut v: Vec<f64> = (1..=1000).rev().map(|i| i as f64 / 1000.0).collect();
        let (mean, lo, hi) = percentile_interval(&mut v);
        assert_eq!(lo, 0.025);
        assert_eq!(hi, 0.975);
        assert!((mean - 0.5005).abs() < 1e-12);
        let mut w: Vec<f64> = (1..=200).map(f64::from).collect();
        let (_, lo, hi) = percentile_interval(&mut w);
        assert_eq!((lo, hi), (5.0, 195.0));
    }

    fn ci_with_lower(lower_val: &[f64]) -> BootstrapCI {
        let nb = lower_val.len();
        let mut lower = Array4::zeros((1, 3, 1, nb));
        for (b, &v) in lower_val.iter().enumerate() {
            lower[[0, Split::Validation.index(), 0, b]] = v;
        }
        BootstrapCI {
            models: vec!["m".into()],
            n_electrodes: 1,
            n_bins: nb,
            mean: Array4::zeros((1, 3, 1, nb)),
            upper: Array4::ones((1, 3, 1, nb)),
            lower,
            used_resamples: vec![1],
            resample_digest: String::new(),
        }
    }

    #[test]
    fn zero_lower_bound_is_filtered() {
        let mask = survivor_mask(&ci_with_lower(&[0.0, 0.1, -0.2]));
        assert_eq!(mask.bins(0, 0), vec![1]);
        assert_eq!(mask.counts[[0, 0]], 1);
    }

    #[test]
    fn all_positive_bins_survive() {
        let mask = survivor_mask(&ci_with_lower(&[0.1, 0.2, 0.3, 0.01]));
        assert_eq!(mask.counts[[0, 0]], 4);
        assert!(!mask.is_dropped(0, 0));
        assert!(survivor_mask(&ci_with_lower(&[-0.1, 0.0])).is_dropped(0, 0));
    }
}
