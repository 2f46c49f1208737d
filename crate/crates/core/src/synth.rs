//! Synthetic datasets with planted electrode classes and known ground truth,
//! and the report that scores pipeline outcomes against that truth.
//!
//! Five feature "models" are generated per alignment: a language source `L`,
//! a vision source `V`, a multimodal source `M` whose columns are products of
//! random projections of `L` and `V` (not linearly realizable from either),
//! the concatenation `[L; V]`, and a rank-reduced linear map of the
//! concatenation. Electrode weights are shared between the two alignments, so
//! a planted class holds in both.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::atlas::DKT_REGIONS;
use crate::comparison::{ModalityClass, ModelSpec};
use crate::encoder::ModelFeatures;
use crate::error::{Error, Result};
use crate::event_model::{Alignment, ElectrodeMeta, EventStructure, ResponseTensor};
use crate::feature_store::FeatureMatrix;
use crate::multimodality::{SlipPair, TestId, TestOutcome};
use crate::rng::{keyed_rng, label_key};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PlantedClass {
    MultimodalLinear,
    MultimodalNonlinear,
    UnimodalLanguage,
    UnimodalVision,
    Noise,
}

impl PlantedClass {
    pub const ALL: [PlantedClass; 5] = [
        PlantedClass::MultimodalLinear,
        PlantedClass::MultimodalNonlinear,
        PlantedClass::UnimodalLanguage,
        PlantedClass::UnimodalVision,
        PlantedClass::Noise,
    ];

    /// The synthetic source whose features generate this class's responses.
    pub fn source(self) -> Option<&'static str> {
        match self {
            PlantedClass::MultimodalLinear => Some(MODEL_CONCAT),
            PlantedClass::MultimodalNonlinear => Some(MODEL_MULTI),
            PlantedClass::UnimodalLanguage => Some(MODEL_LANG),
            PlantedClass::UnimodalVision => Some(MODEL_VISION),
            PlantedClass::Noise => None,
        }
    }
}

impl fmt::Display for PlantedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for PlantedClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlantedClass::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| Error::data(format!("unknown planted class `{s}`")))
    }
}

pub const MODEL_LANG: &str = "synth-lang";
pub const MODEL_VISION: &str = "synth-vision";
pub const MODEL_MULTI: &str = "synth-multi";
pub const MODEL_CONCAT: &str = "synth-concat";
pub const MODEL_MULTILIN: &str = "synth-multilin";

/// Electrodes generated per planted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassCounts {
    pub multimodal_linear: usize,
    pub multimodal_nonlinear: usize,
    pub unimodal_language: usize,
    pub unimodal_vision: usize,
    pub noise: usize,
}

impl ClassCounts {
    pub fn uniform(n: usize) -> Self {
        Self {
            multimodal_linear: n,
            multimodal_nonlinear: n,
            unimodal_language: n,
            unimodal_vision: n,
            noise: n,
        }
    }

    pub fn get(&self, class: PlantedClass) -> usize {
        match class {
            PlantedClass::MultimodalLinear => self.multimodal_linear,
            PlantedClass::MultimodalNonlinear => self.multimodal_nonlinear,
            PlantedClass::UnimodalLanguage => self.unimodal_language,
            PlantedClass::UnimodalVision => self.unimodal_vision,
            PlantedClass::Noise => self.noise,
        }
    }

    pub fn total(&self) -> usize {
        PlantedClass::ALL.iter().map(|&c| self.get(c)).sum()
    }
}

impl Default for ClassCounts {
    fn default() -> Self {
        Self::uniform(10)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_events: usize,
    pub electrodes: ClassCounts,
    pub language_dim: usize,
    pub vision_dim: usize,
    /// Number of product columns in the multimodal source.
    pub multimodal_dim: usize,
    /// Output width of the linear map applied to the concatenation.
    pub multilin_dim: usize,
    pub n_bins: usize,
    /// Noise standard deviation relative to a unit-variance signal.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_events: 1000,
            electrodes: ClassCounts::default(),
            language_dim: 16,
            vision_dim: 16,
            multimodal_dim: 16,
            multilin_dim: 24,
            n_bins: 20,
            // SNR 10
            noise_sigma: 0.1f64.sqrt(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if self.n_events < 2 || self.n_bins == 0 {
            return Err(Error::config("synthetic data needs at least 2 events and 1 bin"));
        }
        if [self.language_dim, self.vision_dim, self.multimodal_dim, self.multilin_dim].contains(&0) {
            return Err(Error::config("synthetic feature dimensions must be positive"));
        }
        Ok(())
    }
}

/// Truth for one electrode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedElectrode {
    pub electrode_id: u32,
    pub class: PlantedClass,
    /// Generating source model, `None` for noise.
    pub source: Option<String>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub electrodes: Vec<PlantedElectrode>,
}

impl GroundTruth {
    pub fn class_of(&self, electrode_id: u32) -> Option<PlantedClass> {
        self.electrodes
            .iter()
            .find(|e| e.electrode_id == electrode_id)
            .map(|e| e.class)
    }
}

#[derive(Clone, Debug)]
pub struct SynthAlignment {
    pub alignment: Alignment,
    pub events: Vec<EventStructure>,
    pub features: Vec<ModelFeatures<f64>>,
    pub responses: ResponseTensor<f64>,
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub specs: Vec<ModelSpec>,
    pub slip_pair: SlipPair,
    pub electrodes: Vec<ElectrodeMeta>,
    pub alignments: Vec<SynthAlignment>,
    pub truth: GroundTruth,
}

pub fn synth_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(MODEL_LANG, ModalityClass::UnimodalLanguage, true),
        ModelSpec::new(MODEL_VISION, ModalityClass::UnimodalVision, true),
        ModelSpec::new(MODEL_MULTI, ModalityClass::MultimodalTrained, true),
        ModelSpec::new(MODEL_CONCAT, ModalityClass::LinearIntegration, true),
        ModelSpec::new(MODEL_MULTILIN, ModalityClass::LinearIntegration, true),
    ]
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn unit_rows(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut m = gaussian(rows, cols, rng);
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    m
}

/// Smooth bump over bins, peaking mid-window.
pub fn bin_gain(bin: usize, n_bins: usize) -> f64 {
    let center = (n_bins as f64 - 1.0) / 2.0;
    let width = (n_bins as f64 / 4.0).max(1.0);
    0.4 + 0.6 * (-((bin as f64 - center) / width).powi(2)).exp()
}

fn standardized(mut s: Array1<f64>) -> Array1<f64> {
    let n = s.len() as f64;
    let mean = s.sum() / n;
    s -= mean;
    let sd = (s.dot(&s) / n).sqrt();
    if sd > 0.0 {
        s /= sd;
    }
    s
}

/// Model-level randomness shared across alignments.
struct Generators {
    lang_proj: Array2<f64>,
    vision_proj: Array2<f64>,
    multilin: Array2<f64>,
}

fn planted(config: &SynthConfig) -> Vec<(PlantedClass, Array1<f64>)> {
    let mut out = Vec::new();
    let mut rng = keyed_rng(config.seed, label_key("synth/weights"), 0);
    for class in PlantedClass::ALL {
        let dim = match class {
            PlantedClass::MultimodalLinear => config.language_dim + config.vision_dim,
            PlantedClass::MultimodalNonlinear => config.multimodal_dim,
            PlantedClass::UnimodalLanguage => config.language_dim,
            PlantedClass::UnimodalVision => config.vision_dim,
            PlantedClass::Noise => 0,
        };
        for _ in 0..config.electrodes.get(class) {
            let w = Array1::from_shape_simple_fn(dim, || rng.sample(StandardNormal));
            out.push((class, w));
        }
    }
    out
}

fn alignment_data(
    config: &SynthConfig,
    alignment: Alignment,
    stream: u64,
    gens: &Generators,
    planted: &[(PlantedClass, Array1<f64>)],
    electrodes: &[ElectrodeMeta],
) -> Result<SynthAlignment> {
    let n = config.n_events;
    let key = |what: &str| label_key(&format!("synth/{}/{what}", alignment.short_name()));
    let mut rng = keyed_rng(config.seed, key("sources"), stream);
    let lang = gaussian(n, config.language_dim, &mut rng);
    let vision = gaussian(n, config.vision_dim, &mut rng);
    let multi = lang.dot(&gens.lang_proj.t()) * vision.dot(&gens.vision_proj.t());
    let concat = concatenate(Axis(1), &[lang.view(), vision.view()]).expect("equal row counts");
    let multilin = concat.dot(&gens.multilin);

    let mut layer_rng = keyed_rng(config.seed, key("layers"), stream);
    let sources = [
        (MODEL_LANG, &lang),
        (MODEL_VISION, &vision),
        (MODEL_MULTI, &multi),
        (MODEL_CONCAT, &concat),
        (MODEL_MULTILIN, &multilin),
    ];
    let features = sources
        .iter()
        .map(|(id, src)| {
            let noisy = *src + &gaussian(n, src.ncols(), &mut layer_rng);
            ModelFeatures {
                model_id: id.to_string(),
                layers: vec![
                    FeatureMatrix::new(*id, "l0", (*src).clone()),
                    FeatureMatrix::new(*id, "l1", noisy),
                ],
            }
        })
        .collect();

    let mut noise_rng = keyed_rng(config.seed, key("noise"), stream);
    let b = config.n_bins;
    let mut values = Array3::<f64>::zeros((planted.len(), n, b));
    for (e, (class, w)) in planted.iter().enumerate() {
        let signal = match class {
            PlantedClass::MultimodalLinear => Some(standardized(concat.dot(w))),
            PlantedClass::MultimodalNonlinear => Some(standardized(multi.dot(w))),
            PlantedClass::UnimodalLanguage => Some(standardized(lang.dot(w))),
            PlantedClass::UnimodalVision => Some(standardized(vision.dot(w))),
            PlantedClass::Noise => None,
        };
        for i in 0..n {
            for bin in 0..b {
                let eta: f64 = noise_rng.sample(StandardNormal);
                let s = signal.as_ref().map_or(0.0, |s| bin_gain(bin, b) * s[i]);
                values[[e, i, bin]] = s + config.noise_sigma * eta;
            }
        }
    }
    let bin_centers = (0..b).map(|k| -2000.0 + (k as f64 + 0.5) * 4000.0 / b as f64).collect();
    let responses = ResponseTensor::new(electrodes.to_vec(), values, bin_centers)?;

    let mut onset_rng = keyed_rng(config.seed, key("onsets"), stream);
    let mut t = 2000.0;
    let events = (0..n)
        .map(|i| {
            t += 250.0 + (onset_rng.random::<f64>() * 1000.0).round();
            EventStructure {
                event_id: i as u64,
                onset_ms: t,
                text: format!("synthetic text {i}"),
                image_ref: format!("frame_{i:06}.png"),
                alignment,
            }
        })
        .collect();
    Ok(SynthAlignment {
        alignment,
        events,
        features,
        responses,
    })
}

/// Generates both alignments of a synthetic dataset. Identical configs give
/// bit-identical datasets.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let mut rng = keyed_rng(config.seed, label_key("synth/models"), 0);
    let gens = Generators {
        lang_proj: unit_rows(config.multimodal_dim, config.language_dim, &mut rng),
        vision_proj: unit_rows(config.multimodal_dim, config.vision_dim, &mut rng),
        multilin: gaussian(config.language_dim + config.vision_dim, config.multilin_dim, &mut rng)
            / ((config.language_dim + config.vision_dim) as f64).sqrt(),
    };
    let planted = planted(config);
    let electrodes: Vec<ElectrodeMeta> = (0..planted.len())
        .map(|e| ElectrodeMeta {
            electrode_id: e as u32 + 1,
            subject_id: e as u32 / 10 + 1,
            region_label: DKT_REGIONS[e % DKT_REGIONS.len()].to_string(),
            coordinates: None,
        })
        .collect();
    let alignments = Alignment::ALL
        .iter()
        .enumerate()
        .map(|(k, &a)| alignment_data(config, a, k as u64, &gens, &planted, &electrodes))
        .collect::<Result<Vec<_>>>()?;
    let truth = GroundTruth {
        electrodes: planted
            .iter()
            .zip(&electrodes)
            .map(|((class, w), meta)| PlantedElectrode {
                electrode_id: meta.electrode_id,
                class: *class,
                source: class.source().map(String::from),
                weights: w.to_vec(),
            })
            .collect(),
    };
    Ok(SynthDataset {
        specs: synth_specs(),
        slip_pair: SlipPair {
            multimodal: MODEL_MULTI.into(),
            unimodal: MODEL_VISION.into(),
        },
        electrodes,
        alignments,
        truth,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCount {
    pub passed: usize,
    pub total: usize,
}

impl PassCount {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.passed as f64 / self.total as f64
        }
    }
}

/// Planted class vs. test outcome, with the headline recovery rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub confusion: BTreeMap<PlantedClass, BTreeMap<TestId, PassCount>>,
    /// Multimodal-nonlinear electrodes passing the Strict test.
    pub strict_sensitivity: f64,
    /// Multimodal-nonlinear electrodes passing Strict and NonlinearIntegration.
    pub nonlinear_sensitivity: f64,
    /// Non-multimodal electrodes (noise, unimodal) passing the Weak test.
    pub weak_false_positive_rate: f64,
    /// Electrodes of every other class passing NonlinearIntegration.
    pub nonlinear_false_positive_rate: f64,
    /// Multimodal-linear electrodes passing Strict but not NonlinearIntegration.
    pub linear_strict_only_rate: f64,
}

pub fn oracle_recovery_report(outcomes: &[TestOutcome], truth: &GroundTruth) -> Result<RecoveryReport> {
    let mut confusion: BTreeMap<PlantedClass, BTreeMap<TestId, PassCount>> = BTreeMap::new();
    let mut by_electrode: BTreeMap<u32, BTreeMap<TestId, bool>> = BTreeMap::new();
    for o in outcomes {
        let class = truth
            .class_of(o.electrode_id)
            .ok_or_else(|| Error::data(format!("electrode {} has no planted class", o.electrode_id)))?;
        let c = confusion.entry(class).or_default().entry(o.test).or_default();
        c.total += 1;
        c.passed += usize::from(o.pass);
        by_electrode.entry(o.electrode_id).or_default().insert(o.test, o.pass);
    }
    let rate = |pred: &dyn Fn(PlantedClass) -> bool, pass: &dyn Fn(&BTreeMap<TestId, bool>) -> bool| {
        let mut c = PassCount::default();
        for e in &truth.electrodes {
            if pred(e.class) {
                c.total += 1;
                let tests = by_electrode.get(&e.electrode_id);
                c.passed += usize::from(tests.is_some_and(pass));
            }
        }
        c.rate()
    };
    let passes = |t: TestId| move |m: &BTreeMap<TestId, bool>| m.get(&t).copied().unwrap_or(false);
    let strict = passes(TestId::Strict);
    let nl = passes(TestId::NonlinearIntegration);
    Ok(RecoveryReport {
        confusion,
        strict_sensitivity: rate(&|c| c == PlantedClass::MultimodalNonlinear, &strict),
        nonlinear_sensitivity: rate(&|c| c == PlantedClass::MultimodalNonlinear, &|m| strict(m) && nl(m)),
        weak_false_positive_rate: rate(
            &|c| matches!(c, PlantedClass::Noise | PlantedClass::UnimodalLanguage | PlantedClass::UnimodalVision),
            &passes(TestId::Weak),
        ),
        nonlinear_false_positive_rate: rate(&|c| c != PlantedClass::MultimodalNonlinear, &nl),
        linear_strict_only_rate: rate(&|c| c == PlantedClass::MultimodalLinear, &|m| strict(m) && !nl(m)),
    })
}
