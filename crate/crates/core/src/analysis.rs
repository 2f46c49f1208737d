//! In-memory orchestration of one full analysis: projection, regression,
//! event bootstrap, survivor filter, model comparisons and the
//! multimodality tests. The file-based stages call into these functions.

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_scores, make_resamples, survivor_mask, BootstrapCI, SurvivorMask};
use crate::comparison::{compare_battery, test_curves, Battery, ComparisonConfig, ComparisonVerdict, ModelSpec};
use crate::encoder::{make_folds, run_regression, FoldPlan, ModelFeatures, RidgeConfig, ScoreTensor};
use crate::error::{Error, Result};
use crate::event_model::{Alignment, ResponseTensor};
use crate::feature_store::{sparse_projection, ProjectionPlan};
use crate::multimodality::{
    nonlinear_battery, run_tests, slip_battery, trained_vs_random_battery, weak_battery, AlignmentVerdicts,
    SlipPair, TestInputs, TestOutcome,
};
use crate::rng::label_key;
use crate::scalar::Real;
use crate::synth::{oracle_recovery_report, RecoveryReport, SynthDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub ridge: RidgeConfig,
    pub k_folds: usize,
    /// Event-bootstrap resamples `B`.
    pub resamples: usize,
    /// Keep resampled events in onset order.
    pub sort_resamples: bool,
    pub comparison: ComparisonConfig,
    pub slip_pair: Option<SlipPair>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            ridge: RidgeConfig::default(),
            k_folds: 5,
            resamples: 1000,
            sort_resamples: true,
            comparison: ComparisonConfig::default(),
            slip_pair: None,
        }
    }
}

impl AnalysisConfig {
    /// Seed of the event resamples for one alignment; the two alignments get
    /// independent resample streams.
    pub fn resample_seed(&self, alignment: Alignment) -> u64 {
        self.comparison.seed ^ label_key(alignment.short_name())
    }
}

/// Projects every layer whose dimension exceeds the JL target.
pub fn project_features<T: Real>(
    features: &[ModelFeatures<T>],
    epsilon: f64,
    seed: u64,
) -> Result<Vec<ModelFeatures<T>>> {
    features
        .iter()
        .map(|mf| {
            let layers = mf
                .layers
                .iter()
                .map(|fm| {
                    let plan = ProjectionPlan::new(fm.n_events(), fm.dim(), epsilon, seed)?;
                    sparse_projection(fm, &plan)
                })
                .collect::<Result<_>>()?;
            Ok(ModelFeatures {
                model_id: mf.model_id.clone(),
                layers,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BatteryKind {
    Weak,
    Slip,
    Nonlinear,
    TrainedVsRandom,
}

impl BatteryKind {
    pub const ALL: [BatteryKind; 4] = [
        BatteryKind::Weak,
        BatteryKind::Slip,
        BatteryKind::Nonlinear,
        BatteryKind::TrainedVsRandom,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            BatteryKind::Weak => "weak",
            BatteryKind::Slip => "slip",
            BatteryKind::Nonlinear => "nonlinear",
            BatteryKind::TrainedVsRandom => "trained_vs_random",
        }
    }
}

/// The batteries applicable to a model set. Optional batteries are skipped
/// with a log message when their ingredients are missing.
pub fn batteries(specs: &[ModelSpec], slip: Option<&SlipPair>, alignment: Alignment) -> Result<Vec<(BatteryKind, Battery)>> {
    for s in specs {
        s.validate()?;
    }
    let mut out = vec![(BatteryKind::Weak, weak_battery(specs, alignment)?)];
    match slip {
        Some(pair) => out.push((BatteryKind::Slip, slip_battery(Some(pair), specs, alignment)?)),
        None => log::info!("no SLIP pair configured; skipping the SLIP tests"),
    }
    match nonlinear_battery(specs, alignment) {
        Ok(b) => out.push((BatteryKind::Nonlinear, b)),
        Err(e) => log::warn!("skipping the non-linear integration test: {e}"),
    }
    if let Some(b) = trained_vs_random_battery(specs, alignment) {
        out.push((BatteryKind::TrainedVsRandom, b));
    }
    Ok(out)
}

/// Verdicts of every battery on one alignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatteryVerdicts {
    pub batteries: Vec<(BatteryKind, Vec<ComparisonVerdict>)>,
}

impl BatteryVerdicts {
    pub fn get(&self, kind: BatteryKind) -> Option<&Vec<ComparisonVerdict>> {
        self.batteries.iter().find(|(k, _)| *k == kind).map(|(_, v)| v)
    }

    pub fn for_tests(&self) -> Result<AlignmentVerdicts> {
        Ok(AlignmentVerdicts {
            weak: self
                .get(BatteryKind::Weak)
                .cloned()
                .ok_or_else(|| Error::data("weak-test verdicts missing"))?,
            slip: self.get(BatteryKind::Slip).cloned(),
            nonlinear: self.get(BatteryKind::Nonlinear).cloned(),
        })
    }
}

pub fn regress<T: Real>(
    features: &[ModelFeatures<T>],
    responses: &ResponseTensor<T>,
    config: &AnalysisConfig,
) -> Result<(FoldPlan, ScoreTensor<T>)> {
    let folds = make_folds(responses.n_events(), config.k_folds)?;
    let scores = run_regression(features, responses, &folds, &config.ridge)?;
    Ok((folds, scores))
}

pub fn bootstrap<T: Real>(
    features: &[ModelFeatures<T>],
    responses: &ResponseTensor<T>,
    onsets: &[f64],
    folds: &FoldPlan,
    scores: &ScoreTensor<T>,
    alignment: Alignment,
    config: &AnalysisConfig,
) -> Result<BootstrapCI> {
    let resamples = make_resamples(
        responses.n_events(),
        config.resamples,
        config.resample_seed(alignment),
        onsets,
        config.sort_resamples,
    )?;
    let outcome = bootstrap_scores(features, responses, folds, &scores.selections(), &resamples)?;
    for (model, r, msg) in &outcome.failures {
        log::warn!("{alignment}: resample {r} of {model} failed: {msg}");
    }
    Ok(outcome.ci)
}

pub fn compare<T: Real>(
    specs: &[ModelSpec],
    ci: &BootstrapCI,
    scores: &ScoreTensor<T>,
    electrode_ids: &[u32],
    alignment: Alignment,
    config: &AnalysisConfig,
) -> Result<(SurvivorMask, BatteryVerdicts)> {
    let mask = survivor_mask(ci);
    let curves = test_curves(scores, &ci.models)?;
    let mut out = BatteryVerdicts::default();
    for (kind, battery) in batteries(specs, config.slip_pair.as_ref(), alignment)? {
        let v = compare_battery(&battery, ci, &mask, &curves, electrode_ids, &config.comparison)?;
        out.batteries.push((kind, v));
    }
    Ok((mask, out))
}

/// Everything computed for one alignment.
#[derive(Clone, Debug)]
pub struct AlignmentAnalysis<T> {
    pub alignment: Alignment,
    pub folds: FoldPlan,
    pub scores: ScoreTensor<T>,
    pub ci: BootstrapCI,
    pub mask: SurvivorMask,
    pub verdicts: BatteryVerdicts,
}

pub fn analyze_alignment<T: Real>(
    alignment: Alignment,
    features: &[ModelFeatures<T>],
    responses: &ResponseTensor<T>,
    onsets: &[f64],
    specs: &[ModelSpec],
    config: &AnalysisConfig,
) -> Result<AlignmentAnalysis<T>> {
    let (folds, scores) = regress(features, responses, config)?;
    let ci = bootstrap(features, responses, onsets, &folds, &scores, alignment, config)?;
    let ids: Vec<u32> = responses.electrodes.iter().map(|e| e.electrode_id).collect();
    let (mask, verdicts) = compare(specs, &ci, &scores, &ids, alignment, config)?;
    Ok(AlignmentAnalysis {
        alignment,
        folds,
        scores,
        ci,
        mask,
        verdicts,
    })
}

/// Runs the multimodality tests on a language- and a vision-aligned result.
pub fn multimodality_outcomes(
    language: &BatteryVerdicts,
    vision: &BatteryVerdicts,
    specs: &[ModelSpec],
    config: &AnalysisConfig,
) -> Result<Vec<TestOutcome>> {
    let (l, v) = (language.for_tests()?, vision.for_tests()?);
    run_tests(&TestInputs {
        specs,
        slip_pair: config.slip_pair.as_ref(),
        alpha: config.comparison.alpha,
        language: &l,
        vision: &v,
    })
}

pub struct SynthRun {
    pub alignments: Vec<AlignmentAnalysis<f64>>,
    pub outcomes: Vec<TestOutcome>,
    pub recovery: RecoveryReport,
}

/// Full analysis of a synthetic dataset, scored against its ground truth.
pub fn analyze_synth(data: &SynthDataset, config: &AnalysisConfig) -> Result<SynthRun> {
    let alignments = data
        .alignments
        .iter()
        .map(|a| {
            let onsets: Vec<f64> = a.events.iter().map(|e| e.onset_ms).collect();
            analyze_alignment(a.alignment, &a.features, &a.responses, &onsets, &data.specs, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let find = |al: Alignment| {
        alignments
            .iter()
            .find(|a| a.alignment == al)
            .ok_or_else(|| Error::data(format!("synthetic data lacks the {al} alignment")))
    };
    let outcomes = multimodality_outcomes(
        &find(Alignment::LanguageAligned)?.verdicts,
        &find(Alignment::VisionAligned)?.verdicts,
        &data.specs,
        config,
    )?;
    let recovery = oracle_recovery_report(&outcomes, &data.truth)?;
    Ok(SynthRun {
        alignments,
        outcomes,
        recovery,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::VerdictKind;
    use crate::synth::{generate, ClassCounts, PlantedClass, SynthConfig};

    fn quick() -> AnalysisConfig {
        AnalysisConfig {
            resamples: 40,
            comparison: ComparisonConfig {
                timebin_resamples: 200,
                min_bins: 3,
                seed: 5,
                ..ComparisonConfig::default()
            },
            slip_pair: None,
            ..AnalysisConfig::default()
        }
    }

    #[test]
    fn small_synthetic_run_recovers_planted_classes() {
        let data = generate(&SynthConfig {
            n_events: 200,
            electrodes: ClassCounts::uniform(1),
            n_bins: 5,
            seed: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let config = AnalysisConfig {
            slip_pair: Some(data.slip_pair.clone()),
            ..quick()
        };
        let run = analyze_synth(&data, &config).unwrap();
        assert_eq!(run.alignments.len(), 2);
        let nl_electrode = data
            .truth
            .electrodes
            .iter()
            .position(|e| e.class == PlantedClass::MultimodalNonlinear)
            .unwrap();
        let weak = run.alignments[0].verdicts.get(BatteryKind::Weak).unwrap();
        assert_eq!(weak[nl_electrode].winner(), Some(crate::synth::MODEL_MULTI));
        assert_eq!(weak[nl_electrode].kind, VerdictKind::DefaultWinner);
        assert_eq!(run.recovery.strict_sensitivity, 1.0);
        assert_eq!(run.recovery.nonlinear_false_positive_rate, 0.0);
    }

    #[test]
    fn projection_leaves_small_layers_alone() {
        let data = generate(&SynthConfig {
            n_events: 100,
            electrodes: ClassCounts::uniform(1),
            n_bins: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let f = &data.alignments[0].features;
        let p = project_features(f, 0.1, 1).unwrap();
        assert_eq!(p[0].layers[0].data, f[0].layers[0].data);
        let wide = ModelFeatures {
            model_id: "wide".into(),
            layers: vec![crate::feature_store::FeatureMatrix::new(
                "wide",
                "l0",
                ndarray::Array2::from_shape_fn((100, 2000), |(i, j)| ((i * 31 + j * 7) % 13) as f64),
            )],
        };
        let p = project_features(&[wide], 0.5, 1).unwrap();
        assert_eq!(p[0].layers[0].dim(), crate::feature_store::jl_dimension(100, 0.5).unwrap());
        assert!(p[0].layers[0].projected);
    }

    #[test]
    fn batteries_follow_model_set() {
        let specs = crate::synth::synth_specs();
        let kinds: Vec<BatteryKind> = batteries(&specs, None, Alignment::LanguageAligned)
            .unwrap()
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        assert_eq!(kinds, vec![BatteryKind::Weak, BatteryKind::Nonlinear]);
    }
}
