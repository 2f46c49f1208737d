//! Per-electrode model comparison: survivor-based ranking, default winners,
//! the time-bin bootstrap between the top two models and Benjamini-Hochberg
//! adjustment across electrodes.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapCI, SurvivorMask};
use crate::encoder::{ScoreTensor, Split};
use crate::error::{Error, Result};
use crate::rng::{keyed_rng, label_key};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModalityClass {
    /// Multimodal through contrastive training; loses the label when randomly initialized.
    MultimodalTrained,
    /// Multimodal by architecture (cross-attention), trained or not.
    MultimodalArchitectural,
    UnimodalLanguage,
    UnimodalVision,
    /// Concatenated or linearly projected unimodal features.
    LinearIntegration,
}

impl ModalityClass {
    /// Integrates vision and language non-linearly.
    pub fn is_integrating(self) -> bool {
        matches!(self, ModalityClass::MultimodalTrained | ModalityClass::MultimodalArchitectural)
    }

    /// Counts as multimodal for the weak and strict tests.
    pub fn is_multimodal(self) -> bool {
        self.is_integrating() || self == ModalityClass::LinearIntegration
    }

    pub fn is_unimodal(self) -> bool {
        matches!(self, ModalityClass::UnimodalLanguage | ModalityClass::UnimodalVision)
    }
}

impl fmt::Display for ModalityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for ModalityClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "MultimodalTrained" => ModalityClass::MultimodalTrained,
            "MultimodalArchitectural" => ModalityClass::MultimodalArchitectural,
            "UnimodalLanguage" => ModalityClass::UnimodalLanguage,
            "UnimodalVision" => ModalityClass::UnimodalVision,
            "LinearIntegration" => ModalityClass::LinearIntegration,
            other => return Err(Error::data(format!("unknown modality class `{other}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub modality_class: ModalityClass,
    pub trained: bool,
}

impl ModelSpec {
    pub fn new(model_id: impl Into<String>, modality_class: ModalityClass, trained: bool) -> Self {
        Self {
            model_id: model_id.into(),
            modality_class,
            trained,
        }
    }

    /// A randomly initialized contrastive model must arrive relabelled as unimodal.
    pub fn validate(&self) -> Result<()> {
        if !self.trained && self.modality_class == ModalityClass::MultimodalTrained {
            return Err(Error::data(format!(
                "model {} is randomly initialized but labelled MultimodalTrained; \
                 contrastively multimodal models lose that label without training",
                self.model_id
            )));
        }
        Ok(())
    }
}

pub fn find_spec<'a>(specs: &'a [ModelSpec], model_id: &str) -> Result<&'a ModelSpec> {
    specs
        .iter()
        .find(|s| s.model_id == model_id)
        .ok_or_else(|| Error::config(format!("no model spec for `{model_id}`")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    DefaultWinner,
    BootstrapWin,
    NoDecision,
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for VerdictKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "DefaultWinner" => Ok(VerdictKind::DefaultWinner),
            "BootstrapWin" => Ok(VerdictKind::BootstrapWin),
            "NoDecision" => Ok(VerdictKind::NoDecision),
            other => Err(Error::data(format!("unknown verdict kind `{other}`"))),
        }
    }
}

/// Outcome of one battery on one electrode.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonVerdict {
    /// Position of the electrode in the response tensor.
    pub electrode: usize,
    pub electrode_id: u32,
    /// Default winner or top-ranked model, if any model survived.
    pub leader: Option<String>,
    pub runner_up: Option<String>,
    /// Mean test-score difference (leader minus runner-up) over shared bins.
    pub mean_diff: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_adj: Option<f64>,
    pub kind: VerdictKind,
}

impl ComparisonVerdict {
    /// The declared winner: default winners and significant bootstrap wins.
    pub fn winner(&self) -> Option<&str> {
        match self.kind {
            VerdictKind::NoDecision => None,
            _ => self.leader.as_deref(),
        }
    }
}

/// A set of competing models. In a contrast battery the runner-up is the best
/// model from the side opposite the leader rather than simply the second best.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Battery {
    pub name: String,
    pub members: Vec<String>,
    pub candidates: Option<BTreeSet<String>>,
}

impl Battery {
    pub fn open(name: impl Into<String>, members: Vec<String>) -> Self {
        Self {
            name: name.into(),
            members,
            candidates: None,
        }
    }

    pub fn contrast(name: impl Into<String>, candidates: Vec<String>, opponents: Vec<String>) -> Self {
        let cand: BTreeSet<String> = candidates.iter().cloned().collect();
        let mut members = candidates;
        members.extend(opponents);
        Self {
            name: name.into(),
            members,
            candidates: Some(cand),
        }
    }

    fn is_candidate(&self, model_id: &str) -> bool {
        self.candidates.as_ref().is_some_and(|c| c.contains(model_id))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub alpha: f64,
    pub min_bins: usize,
    pub timebin_resamples: usize,
    pub seed: u64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            min_bins: 10,
            timebin_resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankedModel {
    /// Index into the bootstrap's model list.
    pub model: usize,
    pub mean_validation: f64,
}

/// Models with at least one surviving bin, by mean bootstrapped validation
/// score over their surviving bins (descending, ties by model id).
pub fn rank_models(ci: &BootstrapCI, mask: &SurvivorMask, electrode: usize, members: &[usize]) -> Vec<RankedModel> {
    let val = Split::Validation.index();
    let mut ranked: Vec<RankedModel> = members
        .iter()
        .filter(|&&m| !mask.is_dropped(m, electrode))
        .map(|&m| {
            let bins = mask.bins(m, electrode);
            let sum: f64 = bins.iter().map(|&b| ci.mean[[m, val, electrode, b]]).sum();
            RankedModel {
                model: m,
                mean_validation: sum / bins.len() as f64,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.mean_validation
            .total_cmp(&a.mean_validation)
            .then_with(|| ci.models[a.model].cmp(&ci.models[b.model]))
    });
    ranked
}

/// The unique member with at least `min_bins` surviving bins, if exactly one exists.
pub fn default_winner(mask: &SurvivorMask, electrode: usize, members: &[usize], min_bins: usize) -> Option<usize> {
    let mut eligible = members.iter().filter(|&&m| mask.counts[[m, electrode]] >= min_bins);
    match (eligible.next(), eligible.next()) {
        (Some(&m), None) => Some(m),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimebinTest {
    /// Observed mean difference (top minus second) over the shared bins.
    pub mean_diff: f64,
    /// One-sided `(1 + #{diff <= 0}) / (B + 1)`.
    pub p_value: f64,
}

/// Second-order bootstrap over time bins. Resamples `shared_bins` with
/// replacement `resamples` times and counts resamples where the top model's
/// mean score does not exceed the second's. Returns `None` when fewer than
/// `min_bins` bins are shared.
pub fn timebin_bootstrap<R: Rng + ?Sized>(
    top: ArrayView1<'_, f64>,
    second: ArrayView1<'_, f64>,
    shared_bins: &[usize],
    resamples: usize,
    min_bins: usize,
    rng: &mut R,
) -> Option<TimebinTest> {
    let k = shared_bins.len();
    if k < min_bins.max(1) {
        return None;
    }
    let diffs: Vec<f64> = shared_bins.iter().map(|&b| top[b] - second[b]).collect();
    let mean_diff = diffs.iter().sum::<f64>() / k as f64;
    let mut non_positive = 0usize;
    for _ in 0..resamples {
        let mut sum = 0.0;
        for _ in 0..k {
            sum += diffs[rng.random_range(0..k)];
        }
        if sum / k as f64 <= 0.0 {
            non_positive += 1;
        }
    }
    Some(TimebinTest {
        mean_diff,
        p_value: (1 + non_positive) as f64 / (resamples + 1) as f64,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdrResult {
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// Benjamini-Hochberg step-up at level `alpha`, with adjusted p-values from
/// the running minimum of `m p_(i) / i` taken from the largest p downwards.
pub fn fdr_adjust(p_values: &[f64], alpha: f64) -> Result<FdrResult> {
    if let Some(p) = p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::data(format!("p-value {p} outside [0, 1]")));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));

    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let i = order[rank];
        let candidate = (p_values[i] * m as f64 / (rank + 1) as f64).min(1.0);
        running = running.min(candidate);
        adjusted[i] = running;
    }

    let cutoff = (0..m)
        .rev()
        .find(|&rank| p_values[order[rank]] <= (rank + 1) as f64 * alpha / m as f64);
    let mut rejected = vec![false; m];
    if let Some(k) = cutoff {
        for &i in &order[..=k] {
            rejected[i] = true;
        }
    }
    Ok(FdrResult { adjusted, rejected })
}

/// Test-split score curves of each model's chosen layer, `[model, electrode, bin]`,
/// in the order of `models`.
pub fn test_curves<T: Real>(scores: &ScoreTensor<T>, models: &[String]) -> Result<Array3<f64>> {
    let mut out = Array3::zeros((models.len(), scores.n_electrodes, scores.n_bins));
    for (m, id) in models.iter().enumerate() {
        let ms = scores
            .model(id)
            .ok_or_else(|| Error::data(format!("no regression scores for model `{id}`")))?;
        for e in 0..scores.n_electrodes {
            for (b, v) in ms.curve(e, Split::Test).iter().enumerate() {
                out[[m, e, b]] = v.to_f64_lossy();
            }
        }
    }
    Ok(out)
}

fn member_indices(battery: &Battery, ci: &BootstrapCI) -> Result<Vec<usize>> {
    battery
        .members
        .iter()
        .map(|id| {
            ci.model_index(id)
                .ok_or_else(|| Error::config(format!("battery `{}` names unknown model `{id}`", battery.name)))
        })
        .collect()
}

/// Verdict for one electrode before multiple-comparison adjustment.
pub fn compare_electrode(
    electrode: usize,
    electrode_id: u32,
    battery: &Battery,
    ci: &BootstrapCI,
    mask: &SurvivorMask,
    test_scores: &Array3<f64>,
    config: &ComparisonConfig,
) -> Result<ComparisonVerdict> {
    let members = member_indices(battery, ci)?;
    let name = |m: usize| ci.models[m].clone();
    let mut verdict = ComparisonVerdict {
        electrode,
        electrode_id,
        leader: None,
        runner_up: None,
        mean_diff: None,
        p_raw: None,
        p_adj: None,
        kind: VerdictKind::NoDecision,
    };

    if let Some(m) = default_winner(mask, electrode, &members, config.min_bins) {
        verdict.leader = Some(name(m));
        verdict.kind = VerdictKind::DefaultWinner;
        return Ok(verdict);
    }
    let ranked = rank_models(ci, mask, electrode, &members);
    let Some(top) = ranked.first().map(|r| r.model) else {
        return Ok(verdict);
    };
    verdict.leader = Some(name(top));

    let runner = match &battery.candidates {
        None => ranked.get(1).map(|r| r.model),
        Some(_) => {
            let top_side = battery.is_candidate(&ci.models[top]);
            ranked
                .iter()
                .map(|r| r.model)
                .find(|&m| battery.is_candidate(&ci.models[m]) != top_side)
        }
    };
    let Some(runner) = runner else {
        // contrast battery with only one side left standing
        if battery.candidates.is_some() && mask.counts[[top, electrode]] >= config.min_bins {
            verdict.kind = VerdictKind::DefaultWinner;
        }
        return Ok(verdict);
    };
    verdict.runner_up = Some(name(runner));

    let shared: Vec<usize> = (0..ci.n_bins)
        .filter(|&b| mask.survives(top, electrode, b) && mask.survives(runner, electrode, b))
        .collect();
    let mut rng = keyed_rng(config.seed, label_key(&battery.name), electrode as u64);
    let test = timebin_bootstrap(
        test_scores.slice(ndarray::s![top, electrode, ..]),
        test_scores.slice(ndarray::s![runner, electrode, ..]),
        &shared,
        config.timebin_resamples,
        config.min_bins,
        &mut rng,
    );
    if let Some(t) = test {
        verdict.mean_diff = Some(t.mean_diff);
        verdict.p_raw = Some(t.p_value);
    }
    Ok(verdict)
}

/// Adjusts the raw p-values of a verdict family and declares bootstrap wins
/// where the adjusted p-value is below `alpha`.
pub fn apply_fdr(verdicts: &mut [ComparisonVerdict], alpha: f64) -> Result<()> {
    let tested: Vec<usize> = (0..verdicts.len()).filter(|&i| verdicts[i].p_raw.is_some()).collect();
    let raw: Vec<f64> = tested.iter().map(|&i| verdicts[i].p_raw.unwrap_or(1.0)).collect();
    let fdr = fdr_adjust(&raw, alpha)?;
    for (&i, adj) in tested.iter().zip(fdr.adjusted) {
        let v = &mut verdicts[i];
        v.p_adj = Some(adj);
        v.kind = if adj < alpha {
            VerdictKind::BootstrapWin
        } else {
            VerdictKind::NoDecision
        };
    }
    Ok(())
}

/// Runs a battery on every electrode and applies FDR across the electrodes
/// that reached the bootstrap test.
pub fn compare_battery(
    battery: &Battery,
    ci: &BootstrapCI,
    mask: &SurvivorMask,
    test_scores: &Array3<f64>,
    electrode_ids: &[u32],
    config: &ComparisonConfig,
) -> Result<Vec<ComparisonVerdict>> {
    if electrode_ids.len() != ci.n_electrodes {
        return Err(Error::data(format!(
            "{} electrode ids for {} electrodes",
            electrode_ids.len(),
            ci.n_electrodes
        )));
    }
    let mut verdicts: Vec<ComparisonVerdict> = (0..ci.n_electrodes)
        .into_par_iter()
        .map(|e| compare_electrode(e, electrode_ids[e], battery, ci, mask, test_scores, config))
        .collect::<Result<_>>()?;
    apply_fdr(&mut verdicts, config.alpha)?;
    Ok(verdicts)
}
