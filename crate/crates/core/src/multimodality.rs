//! The five multimodality tests over comparison verdicts from both dataset
//! alignments, and their aggregation into atlas regions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::atlas::RegionAtlas;
use crate::comparison::{apply_fdr, find_spec, Battery, ComparisonVerdict, ModalityClass, ModelSpec};
use crate::error::{Error, Result};
use crate::event_model::{Alignment, ElectrodeMeta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TestId {
    Weak,
    WeakSlip,
    Strict,
    StrictSlip,
    NonlinearIntegration,
}

impl TestId {
    pub const ALL: [TestId; 5] = [
        TestId::Weak,
        TestId::WeakSlip,
        TestId::Strict,
        TestId::StrictSlip,
        TestId::NonlinearIntegration,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TestId::Weak => "Weak test of multimodality",
            TestId::WeakSlip => "Weak SLIP test",
            TestId::Strict => "Strict test of multimodality",
            TestId::StrictSlip => "Strict SLIP test",
            TestId::NonlinearIntegration => "Non-linear integration test",
        }
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for TestId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestId::ALL
            .into_iter()
            .find(|t| t.to_string() == s)
            .ok_or_else(|| Error::data(format!("unknown test `{s}`")))
    }
}

/// Architecture- and data-controlled (multimodal, unimodal) model pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlipPair {
    pub multimodal: String,
    pub unimodal: String,
}

fn ids_where(specs: &[ModelSpec], pred: impl Fn(&ModelSpec) -> bool) -> Vec<String> {
    specs.iter().filter(|s| pred(s)).map(|s| s.model_id.clone()).collect()
}

/// Multimodal and linear-integration models against unimodal ones.
pub fn weak_battery(specs: &[ModelSpec], alignment: Alignment) -> Result<Battery> {
    let cand = ids_where(specs, |s| s.modality_class.is_multimodal());
    let opp = ids_where(specs, |s| s.modality_class.is_unimodal());
    if cand.is_empty() || opp.is_empty() {
        return Err(Error::config("the weak test needs both multimodal and unimodal models"));
    }
    Ok(Battery::contrast(format!("weak/{}", alignment.short_name()), cand, opp))
}

pub fn slip_battery(pair: Option<&SlipPair>, specs: &[ModelSpec], alignment: Alignment) -> Result<Battery> {
    let pair = pair.ok_or_else(|| Error::config("no SLIP contrast pair configured"))?;
    find_spec(specs, &pair.multimodal)?;
    find_spec(specs, &pair.unimodal)?;
    Ok(Battery::contrast(
        format!("slip/{}", alignment.short_name()),
        vec![pair.multimodal.clone()],
        vec![pair.unimodal.clone()],
    ))
}

/// Non-linearly integrating models against the linear-integration baselines.
pub fn nonlinear_battery(specs: &[ModelSpec], alignment: Alignment) -> Result<Battery> {
    let cand = ids_where(specs, |s| s.modality_class.is_integrating());
    let opp = ids_where(specs, |s| s.modality_class == ModalityClass::LinearIntegration);
    if opp.is_empty() {
        return Err(Error::config("the non-linear integration test needs LinearIntegration models"));
    }
    if cand.is_empty() {
        return Err(Error::config("the non-linear integration test needs integrating multimodal models"));
    }
    Ok(Battery::contrast(format!("nonlinear/{}", alignment.short_name()), cand, opp))
}

/// Trained models against randomly initialized ones, when both are present.
pub fn trained_vs_random_battery(specs: &[ModelSpec], alignment: Alignment) -> Option<Battery> {
    let trained = ids_where(specs, |s| s.trained);
    let random = ids_where(specs, |s| !s.trained);
    (!trained.is_empty() && !random.is_empty())
        .then(|| Battery::contrast(format!("trained_vs_random/{}", alignment.short_name()), trained, random))
}

/// Weak test on one alignment: the declared winner is multimodal or linearly integrated.
pub fn weak_test(verdict: &ComparisonVerdict, specs: &[ModelSpec]) -> Result<bool> {
    match verdict.winner() {
        Some(id) => Ok(find_spec(specs, id)?.modality_class.is_multimodal()),
        None => Ok(false),
    }
}

/// SLIP test on one alignment: the multimodal member is the declared winner.
pub fn slip_test(verdict: &ComparisonVerdict, pair: &SlipPair) -> bool {
    verdict.winner() == Some(pair.multimodal.as_str())
}

pub fn strict_test(language: bool, vision: bool) -> bool {
    language && vision
}

fn integrating_winner(verdict: &ComparisonVerdict, specs: &[ModelSpec]) -> Result<bool> {
    match verdict.winner() {
        Some(id) => Ok(find_spec(specs, id)?.modality_class.is_integrating()),
        None => Ok(false),
    }
}

/// Non-linear integration test on the Strict passers only. The FDR family is
/// restricted to the tested electrodes, per alignment. Returns `None` for
/// electrodes that were not evaluated.
pub fn nonlinear_integration_test(
    strict_pass: &[bool],
    language: &[ComparisonVerdict],
    vision: &[ComparisonVerdict],
    specs: &[ModelSpec],
    alpha: f64,
) -> Result<Vec<Option<(bool, bool)>>> {
    if !specs.iter().any(|s| s.modality_class == ModalityClass::LinearIntegration) {
        return Err(Error::config("the non-linear integration test needs LinearIntegration models"));
    }
    let mut per_alignment = Vec::new();
    for verdicts in [language, vision] {
        if verdicts.len() != strict_pass.len() {
            return Err(Error::data("non-linear verdicts do not cover every electrode"));
        }
        let mut family: Vec<ComparisonVerdict> = verdicts
            .iter()
            .zip(strict_pass)
            .filter(|(_, &s)| s)
            .map(|(v, _)| v.clone())
            .collect();
        apply_fdr(&mut family, alpha)?;
        per_alignment.push(family);
    }
    let mut out = vec![None; strict_pass.len()];
    let tested: Vec<usize> = (0..strict_pass.len()).filter(|&i| strict_pass[i]).collect();
    for (k, &e) in tested.iter().enumerate() {
        out[e] = Some((
            integrating_winner(&per_alignment[0][k], specs)?,
            integrating_winner(&per_alignment[1][k], specs)?,
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestOutcome {
    pub electrode: usize,
    pub electrode_id: u32,
    pub test: TestId,
    /// `None` where the test was not evaluated on that alignment.
    pub language: Option<bool>,
    pub vision: Option<bool>,
    pub pass: bool,
}

/// Verdict tables of one alignment, one per battery, indexed by electrode.
#[derive(Clone, Debug, Default)]
pub struct AlignmentVerdicts {
    pub weak: Vec<ComparisonVerdict>,
    pub slip: Option<Vec<ComparisonVerdict>>,
    pub nonlinear: Option<Vec<ComparisonVerdict>>,
}

pub struct TestInputs<'a> {
    pub specs: &'a [ModelSpec],
    pub slip_pair: Option<&'a SlipPair>,
    pub alpha: f64,
    pub language: &'a AlignmentVerdicts,
    pub vision: &'a AlignmentVerdicts,
}

/// Evaluates every test on every electrode. Tests whose batteries are absent
/// (no SLIP pair, no linear baselines) are skipped.
pub fn run_tests(inputs: &TestInputs<'_>) -> Result<Vec<TestOutcome>> {
    let n = inputs.language.weak.len();
    if inputs.vision.weak.len() != n {
        return Err(Error::data("alignments cover different electrode sets"));
    }
    let mut out = Vec::new();
    let mut strict = vec![false; n];
    for e in 0..n {
        let (lv, vv) = (&inputs.language.weak[e], &inputs.vision.weak[e]);
        let electrode_id = lv.electrode_id;
        let l = weak_test(lv, inputs.specs)?;
        let v = weak_test(vv, inputs.specs)?;
        strict[e] = strict_test(l, v);
        let outcome = |test, pass| TestOutcome {
            electrode: e,
            electrode_id,
            test,
            language: Some(l),
            vision: Some(v),
            pass,
        };
        out.push(outcome(TestId::Weak, l || v));
        out.push(outcome(TestId::Strict, strict[e]));
    }
    if let (Some(pair), Some(ls), Some(vs)) = (inputs.slip_pair, &inputs.language.slip, &inputs.vision.slip) {
        for e in 0..n {
            let (l, v) = (slip_test(&ls[e], pair), slip_test(&vs[e], pair));
            for (test, pass) in [(TestId::WeakSlip, l || v), (TestId::StrictSlip, l && v)] {
                out.push(TestOutcome {
                    electrode: e,
                    electrode_id: ls[e].electrode_id,
                    test,
                    language: Some(l),
                    vision: Some(v),
                    pass,
                });
            }
        }
    }
    if let (Some(ln), Some(vn)) = (&inputs.language.nonlinear, &inputs.vision.nonlinear) {
        let res = nonlinear_integration_test(&strict, ln, vn, inputs.specs, inputs.alpha)?;
        for (e, r) in res.into_iter().enumerate() {
            out.push(TestOutcome {
                electrode: e,
                electrode_id: ln[e].electrode_id,
                test: TestId::NonlinearIntegration,
                language: r.map(|x| x.0),
                vision: r.map(|x| x.1),
                pass: r.is_some_and(|(l, v)| l && v),
            });
        }
    }
    out.sort_by_key(|o| (o.electrode, o.test));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionTestCount {
    pub test: TestId,
    pub language: usize,
    pub vision: usize,
    pub combined: usize,
    /// At least one electrode in the region passes on both alignments.
    pub both_alignments: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionSummary {
    pub region: String,
    pub n_electrodes: usize,
    pub tests: Vec<RegionTestCount>,
}

impl RegionSummary {
    pub fn percent(&self, count: usize) -> f64 {
        100.0 * count as f64 / self.n_electrodes as f64
    }
}

/// Per-region pass counts. `electrodes` is indexed like the outcomes'
/// `electrode` field.
pub fn aggregate_regions(
    outcomes: &[TestOutcome],
    electrodes: &[ElectrodeMeta],
    atlas: &RegionAtlas,
) -> Result<Vec<RegionSummary>> {
    let unknown: Vec<String> = electrodes
        .iter()
        .filter(|e| !atlas.contains(&e.region_label))
        .map(|e| format!("{} ({})", e.electrode_id, e.region_label))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::data(format!("unknown region labels on electrodes: {}", unknown.join(", "))));
    }
    let tests: Vec<TestId> = {
        let mut t: Vec<TestId> = outcomes.iter().map(|o| o.test).collect();
        t.sort();
        t.dedup();
        t
    };
    let mut regions: BTreeMap<&str, RegionSummary> = BTreeMap::new();
    for el in electrodes {
        regions
            .entry(el.region_label.as_str())
            .or_insert_with(|| RegionSummary {
                region: el.region_label.clone(),
                n_electrodes: 0,
                tests: tests
                    .iter()
                    .map(|&test| RegionTestCount {
                        test,
                        language: 0,
                        vision: 0,
                        combined: 0,
                        both_alignments: false,
                    })
                    .collect(),
            })
            .n_electrodes += 1;
    }
    for o in outcomes {
        let el = electrodes
            .get(o.electrode)
            .ok_or_else(|| Error::data(format!("outcome for unknown electrode index {}", o.electrode)))?;
        let summary = regions.get_mut(el.region_label.as_str()).expect("region registered");
        let count = summary
            .tests
            .iter_mut()
            .find(|c| c.test == o.test)
            .expect("test registered");
        let (l, v) = (o.language == Some(true), o.vision == Some(true));
        count.language += usize::from(l);
        count.vision += usize::from(v);
        count.combined += usize::from(o.pass);
        count.both_alignments |= l && v;
    }
    Ok(regions.into_values().collect())
}

/// Plain-text pass counts per test, one line per test.
pub fn summary_table(outcomes: &[TestOutcome], n_electrodes: usize) -> String {
    let mut s = format!(
        "{:<32} {:>10} {:>10} {:>10} {:>8}\n",
        "test", "language", "vision", "passing", "of"
    );
    for test in TestId::ALL {
        let rows: Vec<&TestOutcome> = outcomes.iter().filter(|o| o.test == test).collect();
        if rows.is_empty() {
            s.push_str(&format!("{:<32} {:>10} {:>10} {:>10} {:>8}\n", test.label(), "-", "-", "-", n_electrodes));
            continue;
        }
        let l = rows.iter().filter(|o| o.language == Some(true)).count();
        let v = rows.iter().filter(|o| o.vision == Some(true)).count();
        let p = rows.iter().filter(|o| o.pass).count();
        s.push_str(&format!("{:<32} {:>10} {:>10} {:>10} {:>8}\n", test.label(), l, v, p, n_electrodes));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comparison::VerdictKind;

    fn specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec::new("combo", ModalityClass::MultimodalTrained, true),
            ModelSpec::new("xattn", ModalityClass::MultimodalArchitectural, true),
            ModelSpec::new("lang", ModalityClass::UnimodalLanguage, true),
            ModelSpec::new("simclr", ModalityClass::UnimodalVision, true),
            ModelSpec::new("concat", ModalityClass::LinearIntegration, true),
            ModelSpec::new("multilin", ModalityClass::LinearIntegration, true),
        ]
    }

    fn verdict(e: usize, leader: Option<&str>, kind: VerdictKind, p: Option<f64>) -> ComparisonVerdict {
        ComparisonVerdict {
            electrode: e,
            electrode_id: e as u32 + 100,
            leader: leader.map(String::from),
            runner_up: None,
            mean_diff: None,
            p_raw: p,
            p_adj: p,
            kind,
        }
    }

    #[test]
    fn weak_test_rules() {
        let s = specs();
        assert!(weak_test(&verdict(0, Some("combo"), VerdictKind::BootstrapWin, Some(0.01)), &s).unwrap());
        assert!(weak_test(&verdict(0, Some("concat"), VerdictKind::DefaultWinner, None), &s).unwrap());
        assert!(!weak_test(&verdict(0, Some("simclr"), VerdictKind::BootstrapWin, Some(0.01)), &s).unwrap());
        assert!(!weak_test(&verdict(0, Some("combo"), VerdictKind::NoDecision, Some(0.3)), &s).unwrap());
    }

    #[test]
    fn strict_requires_both_alignments() {
        assert!(!strict_test(true, false));
        assert!(strict_test(true, true));
    }

    #[test]
    fn slip_rules() {
        let pair = SlipPair {
            multimodal: "combo".into(),
            unimodal: "simclr".into(),
        };
        assert!(slip_test(&verdict(0, Some("combo"), VerdictKind::BootstrapWin, Some(0.001)), &pair));
        assert!(!slip_test(&verdict(0, Some("combo"), VerdictKind::NoDecision, Some(1.0)), &pair));
        assert!(slip_battery(None, &specs(), Alignment::LanguageAligned).is_err());
    }

    #[test]
    fn nonlinear_needs_linear_models() {
        let s: Vec<ModelSpec> = specs()
            .into_iter()
            .filter(|m| m.modality_class != ModalityClass::LinearIntegration)
            .collect();
        assert!(nonlinear_battery(&s, Alignment::VisionAligned).is_err());
        assert!(nonlinear_integration_test(&[true], &[], &[], &s, 0.05).is_err());
    }

    fn inputs_fixture() -> (AlignmentVerdicts, AlignmentVerdicts) {
        // e0: integrating winner everywhere; e1: linear winner everywhere;
        // e2: multimodal in language only; e3: unimodal
        let weak = |vision: bool| {
            vec![
                verdict(0, Some("xattn"), VerdictKind::DefaultWinner, None),
                verdict(1, Some("concat"), VerdictKind::BootstrapWin, Some(0.001)),
                if vision {
                    verdict(2, Some("lang"), VerdictKind::BootstrapWin, Some(0.001))
                } else {
                    verdict(2, Some("combo"), VerdictKind::BootstrapWin, Some(0.001))
                },
                verdict(3, Some("simclr"), VerdictKind::DefaultWinner, None),
            ]
        };
        let nonlinear = vec![
            verdict(0, Some("xattn"), VerdictKind::DefaultWinner, None),
            verdict(1, Some("concat"), VerdictKind::BootstrapWin, Some(0.001)),
            verdict(2, Some("combo"), VerdictKind::BootstrapWin, Some(0.001)),
            verdict(3, None, VerdictKind::NoDecision, None),
        ];
        let slip = vec![
            verdict(0, Some("combo"), VerdictKind::BootstrapWin, Some(0.001)),
            verdict(1, Some("simclr"), VerdictKind::BootstrapWin, Some(0.001)),
            verdict(2, Some("combo"), VerdictKind::BootstrapWin, Some(0.001)),
            verdict(3, None, VerdictKind::NoDecision, None),
        ];
        let l = AlignmentVerdicts {
            weak: weak(false),
            slip: Some(slip.clone()),
            nonlinear: Some(nonlinear.clone()),
        };
        let v = AlignmentVerdicts {
            weak: weak(true),
            slip: Some(slip),
            nonlinear: Some(nonlinear),
        };
        (l, v)
    }

    fn passes(outcomes: &[TestOutcome], test: TestId) -> Vec<usize> {
        outcomes.iter().filter(|o| o.test == test && o.pass).map(|o| o.electrode).collect()
    }

    #[test]
    fn full_battery_and_monotone_strictness() {
        let (l, v) = inputs_fixture();
        let s = specs();
        let pair = SlipPair {
            multimodal: "combo".into(),
            unimodal: "simclr".into(),
        };
        let out = run_tests(&TestInputs {
            specs: &s,
            slip_pair: Some(&pair),
            alpha: 0.05,
            language: &l,
            vision: &v,
        })
        .unwrap();
        assert_eq!(passes(&out, TestId::Weak), vec![0, 1, 2]);
        assert_eq!(passes(&out, TestId::Strict), vec![0, 1]);
        assert_eq!(passes(&out, TestId::NonlinearIntegration), vec![0]);
        assert_eq!(passes(&out, TestId::WeakSlip), vec![0, 2]);
        assert_eq!(passes(&out, TestId::StrictSlip), vec![0, 2]);
        // e2 is not a strict passer, so it is not evaluated for test 5
        let nl2 = out
            .iter()
            .find(|o| o.electrode == 2 && o.test == TestId::NonlinearIntegration)
            .unwrap();
        assert_eq!(nl2.language, None);
        for e in passes(&out, TestId::Strict) {
            assert!(passes(&out, TestId::Weak).contains(&e));
        }
        for e in passes(&out, TestId::NonlinearIntegration) {
            assert!(passes(&out, TestId::Strict).contains(&e));
        }
    }

    #[test]
    fn outcomes_ignore_model_names() {
        let (l, v) = inputs_fixture();
        let s = specs();
        let base = run_tests(&TestInputs {
            specs: &s,
            slip_pair: None,
            alpha: 0.05,
            language: &l,
            vision: &v,
        })
        .unwrap();
        let rename = |id: &str| format!("model-{}", id.len() * 7 + id.as_bytes()[0] as usize);
        let relabel = |av: &AlignmentVerdicts| {
            let f = |vs: &Vec<ComparisonVerdict>| {
                vs.iter()
                    .map(|x| ComparisonVerdict {
                        leader: x.leader.as_deref().map(rename),
                        ..x.clone()
                    })
                    .collect::<Vec<_>>()
            };
            AlignmentVerdicts {
                weak: f(&av.weak),
                slip: None,
                nonlinear: av.nonlinear.as_ref().map(f),
            }
        };
        let s2: Vec<ModelSpec> = s
            .iter()
            .map(|m| ModelSpec::new(rename(&m.model_id), m.modality_class, m.trained))
            .collect();
        let (l2, v2) = (relabel(&l), relabel(&v));
        let renamed = run_tests(&TestInputs {
            specs: &s2,
            slip_pair: None,
            alpha: 0.05,
            language: &l2,
            vision: &v2,
        })
        .unwrap();
        assert_eq!(base, renamed);
    }

    fn meta(id: u32, region: &str) -> ElectrodeMeta {
        ElectrodeMeta {
            electrode_id: id,
            subject_id: 1,
            region_label: region.into(),
            coordinates: None,
        }
    }

    fn outcome(e: usize, test: TestId, l: bool, v: bool, pass: bool) -> TestOutcome {
        TestOutcome {
            electrode: e,
            electrode_id: e as u32,
            test,
            language: Some(l),
            vision: Some(v),
            pass,
        }
    }

    #[test]
    fn region_percentages_and_flags() {
        let electrodes = vec![meta(0, "fusiform"), meta(1, "fusiform"), meta(2, "fusiform"), meta(3, "insula")];
        let outcomes = vec![
            outcome(0, TestId::Weak, true, true, true),
            outcome(1, TestId::Weak, false, false, false),
            outcome(2, TestId::Weak, false, false, false),
            outcome(3, TestId::Weak, false, false, false),
        ];
        let regions = aggregate_regions(&outcomes, &electrodes, &RegionAtlas::default()).unwrap();
        assert_eq!(regions.len(), 2);
        let fus = &regions[0];
        assert_eq!(fus.region, "fusiform");
        assert!((fus.percent(fus.tests[0].combined) - 33.333333).abs() < 1e-4);
        assert!(fus.tests[0].both_alignments);
        let ins = &regions[1];
        assert_eq!(ins.tests[0].combined, 0);
        assert_eq!(ins.percent(0), 0.0);
        assert!(!ins.tests[0].both_alignments);
        let total: usize = regions.iter().map(|r| r.tests[0].combined).sum();
        assert_eq!(total, outcomes.iter().filter(|o| o.pass).count());
    }

    #[test]
    fn unknown_region_is_data_error() {
        let err = aggregate_regions(&[], &[meta(9, "atlantis")], &RegionAtlas::default()).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("9 (atlantis)")));
    }

    #[test]
    fn summary_table_counts() {
        let outcomes = vec![
            outcome(0, TestId::Weak, true, false, true),
            outcome(1, TestId::Weak, true, true, true),
        ];
        let t = summary_table(&outcomes, 2);
        assert!(t.contains("Weak test of multimodality"));
        let line = t.lines().find(|l| l.starts_with("Weak test")).unwrap();
        let cols: Vec<&str> = line.split_whitespace().rev().take(4).collect();
        assert_eq!(cols, vec!["2", "2", "1", "2"]);
    }
}
