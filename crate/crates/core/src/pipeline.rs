//! File-based stage chain. Each stage reads its predecessors' artifacts from
//! the output directory and writes its own, so expensive stages can be resumed
//! and inputs can come from other tools.
//!
//! ```text
//! <out>/ingest/{models.json, electrodes.csv, <alignment>/{events.csv, responses.nrsp, manifest.json, features/}}
//! <out>/regress/<alignment>.nscr, <alignment>_scores.csv
//! <out>/bootstrap/<alignment>.nbci, <alignment>_ci.csv, <alignment>_survivors.csv
//! <out>/compare/<alignment>_<battery>.csv
//! <out>/tests/outcomes.csv
//! <out>/report/{report.txt, regions.csv, run_manifest.json, recovery.json}
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, BatteryKind, BatteryVerdicts};
use crate::atlas::RegionAtlas;
use crate::comparison::ModelSpec;
use crate::config::RunConfig;
use crate::encoder::{FoldPlan, ModelFeatures};
use crate::error::{Error, Result};
use crate::event_model::{validate_dataset, Alignment, ElectrodeMeta, EventStructure, ResponseTensor};
use crate::io::{self, tables, FeatureManifest, ManifestEntry};
use crate::multimodality::{aggregate_regions, summary_table, TestId, TestOutcome};
use crate::selfcheck::{run_selfcheck, CheckResult};
use crate::synth::{generate, oracle_recovery_report};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Regress,
    Bootstrap,
    Compare,
    Tests,
    Report,
    Synth,
    Selfcheck,
}

impl Stage {
    /// The analysis chain, in order.
    pub const CHAIN: [Stage; 6] = [
        Stage::Ingest,
        Stage::Regress,
        Stage::Bootstrap,
        Stage::Compare,
        Stage::Tests,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Regress => "regress",
            Stage::Bootstrap => "bootstrap",
            Stage::Compare => "compare",
            Stage::Tests => "tests",
            Stage::Report => "report",
            Stage::Synth => "synth",
            Stage::Selfcheck => "selfcheck",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Stage::Ingest,
            Stage::Regress,
            Stage::Bootstrap,
            Stage::Compare,
            Stage::Tests,
            Stage::Report,
            Stage::Synth,
            Stage::Selfcheck,
        ]
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| Error::config(format!("unknown stage `{s}`")))
    }
}

/// What the ingest stage recorded about the run's inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub config_hash: String,
    pub alignments: Vec<Alignment>,
    pub models: Vec<ModelSpec>,
    pub n_events: Vec<usize>,
    pub rejected_or_dropped: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub engine_version: String,
    pub config: RunConfig,
    pub artifacts: Vec<ArtifactDigest>,
}

/// Outcome of executing a stage; `selfcheck` reports individual checks.
#[derive(Clone, Debug, PartialEq)]
pub enum StageReport {
    Done(Vec<PathBuf>),
    Checks(Vec<CheckResult>),
}

pub struct Pipeline {
    config: RunConfig,
    hash: String,
    out: PathBuf,
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        mkdir(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Self {
        let hash = config.config_hash();
        let out = config.output_dir.clone();
        Self { config, hash, out }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    /// Runs one stage inside a pool of `threads` workers.
    pub fn execute(&self, stage: Stage) -> Result<StageReport> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if self.config.threads > 0 {
            builder = builder.num_threads(self.config.threads);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::config(format!("cannot start {} worker threads: {e}", self.config.threads)))?;
        log::info!("stage {stage} (config {})", &self.hash[..12]);
        pool.install(|| match stage {
            Stage::Ingest => self.ingest().map(StageReport::Done),
            Stage::Regress => self.regress().map(StageReport::Done),
            Stage::Bootstrap => self.bootstrap().map(StageReport::Done),
            Stage::Compare => self.compare().map(StageReport::Done),
            Stage::Tests => self.tests().map(StageReport::Done),
            Stage::Report => self.report().map(StageReport::Done),
            Stage::Synth => self.synth().map(StageReport::Done),
            Stage::Selfcheck => Ok(StageReport::Checks(run_selfcheck())),
        })
    }

    /// Ingest through report.
    pub fn run_chain(&self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for stage in Stage::CHAIN {
            if let StageReport::Done(paths) = self.execute(stage)? {
                written.extend(paths);
            }
        }
        Ok(written)
    }

    fn dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.name())
    }

    fn require(&self, stage: Stage, producer: Stage, path: PathBuf) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::StageOrder {
                stage: stage.name().into(),
                producer: producer.name().into(),
                missing: path,
            })
        }
    }

    fn check_provenance(&self, path: &Path, found: &str) {
        if found != self.hash {
            log::warn!(
                "{} was produced under config {}, current config is {}",
                path.display(),
                found.get(..12).unwrap_or(found),
                &self.hash[..12]
            );
        }
    }

    fn ingest_summary(&self, stage: Stage) -> Result<IngestSummary> {
        let path = self.require(stage, Stage::Ingest, self.dir(Stage::Ingest).join("models.json"))?;
        let summary: IngestSummary = read_json(&path)?;
        self.check_provenance(&path, &summary.config_hash);
        Ok(summary)
    }

    fn alignment_dir(&self, a: Alignment) -> PathBuf {
        self.dir(Stage::Ingest).join(a.short_name())
    }

    // ---- ingest ----

    fn load_responses(&self, path: &Path, events: &[EventStructure]) -> Result<ResponseTensor<f64>> {
        let overrides = match &self.config.inputs.electrodes {
            Some(p) => Some(tables::read_electrodes(p)?),
            None => None,
        };
        if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
            let electrodes = overrides.ok_or_else(|| {
                Error::config("CSV responses need `inputs.electrodes` for electrode metadata")
            })?;
            let ids: Vec<u64> = events.iter().map(|e| e.event_id).collect();
            return tables::read_responses_csv(path, &electrodes, &ids);
        }
        let (mut tensor, _) = io::read_responses(path)?;
        if let Some(meta) = overrides {
            for e in tensor.electrodes.iter_mut() {
                let m = meta.iter().find(|m| m.electrode_id == e.electrode_id).ok_or_else(|| {
                    Error::data(format!(
                        "electrode {} of {} is missing from the electrode table",
                        e.electrode_id,
                        path.display()
                    ))
                })?;
                *e = m.clone();
            }
        }
        Ok(tensor)
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let dir = self.dir(Stage::Ingest);
        let mut written = Vec::new();
        let mut summary = IngestSummary {
            config_hash: self.hash.clone(),
            alignments: Vec::new(),
            models: Vec::new(),
            n_events: Vec::new(),
            rejected_or_dropped: Vec::new(),
        };
        let mut electrodes: Option<Vec<ElectrodeMeta>> = None;
        for a in Alignment::ALL {
            let Some(inputs) = self.config.inputs.alignment(a) else {
                log::warn!("no {a} inputs configured");
                continue;
            };
            let events = tables::read_events(&inputs.events)?;
            if let Some(e) = events.iter().find(|e| e.alignment != a) {
                return Err(Error::data(format!(
                    "{}: event {} is {}, expected {a}",
                    inputs.events.display(),
                    e.event_id,
                    e.alignment
                )));
            }
            let responses = self.load_responses(&inputs.responses, &events)?;
            let report = validate_dataset(&events, &responses, self.config.window.as_ref());
            if !report.passed {
                let msgs: Vec<String> = report.violations.iter().map(|v| v.message.clone()).collect();
                return Err(Error::data(format!("{a} inputs failed validation: {}", msgs.join("; "))));
            }
            let manifest = FeatureManifest::load(&inputs.manifest)?;
            let base = inputs.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
            let features = manifest.load_features(&base)?;
            for f in features.iter().flat_map(|m| &m.layers) {
                if f.n_events() != events.len() {
                    return Err(Error::data(format!(
                        "{a}: features {} have {} rows for {} events",
                        f.stream_label(),
                        f.n_events(),
                        events.len()
                    )));
                }
            }
            let specs = manifest.specs();
            if summary.alignments.is_empty() {
                summary.models = specs;
            } else if summary.models != specs {
                return Err(Error::data(format!("{a} manifest lists a different model set")));
            }
            match &electrodes {
                None => electrodes = Some(responses.electrodes.clone()),
                Some(prev) if *prev != responses.electrodes => {
                    return Err(Error::data(format!("{a} responses cover a different electrode set")))
                }
                Some(_) => {}
            }
            let features = if self.config.projection.enabled {
                analysis::project_features(&features, self.config.projection.epsilon, self.config.seed)?
            } else {
                features
            };

            let adir = self.alignment_dir(a);
            let p = adir.join("events.csv");
            tables::write_events(&p, &events, Some(&self.hash))?;
            written.push(p);
            let p = adir.join("responses.nrsp");
            io::write_responses(&p, &responses, &self.hash)?;
            written.push(p);
            let mut entries = Vec::new();
            for (mf, original) in features.iter().zip(manifest.specs()) {
                for layer in &mf.layers {
                    let rel = PathBuf::from("features").join(io::feature_file_name(&mf.model_id, &layer.layer_id));
                    let p = adir.join(&rel);
                    io::write_features(&p, layer, &self.hash)?;
                    written.push(p);
                    entries.push(ManifestEntry {
                        model_id: mf.model_id.clone(),
                        layer_id: layer.layer_id.clone(),
                        path: rel,
                        modality_class: original.modality_class,
                        trained: original.trained,
                    });
                }
            }
            let p = adir.join("manifest.json");
            FeatureManifest { entries }.save(&p)?;
            written.push(p);
            summary.alignments.push(a);
            summary.n_events.push(events.len());
        }
        let electrodes = electrodes.ok_or_else(|| Error::config("no alignment inputs configured"))?;
        let p = dir.join("electrodes.csv");
        tables::write_electrodes(&p, &electrodes, Some(&self.hash))?;
        written.push(p);
        let p = dir.join("models.json");
        write_json(&p, &summary)?;
        written.push(p);
        Ok(written)
    }

    // ---- shared loaders ----

    fn load_ingested(
        &self,
        stage: Stage,
        a: Alignment,
    ) -> Result<(Vec<EventStructure>, ResponseTensor<f64>, Vec<ModelFeatures<f64>>)> {
        let adir = self.alignment_dir(a);
        let events = tables::read_events(&self.require(stage, Stage::Ingest, adir.join("events.csv"))?)?;
        let rp = self.require(stage, Stage::Ingest, adir.join("responses.nrsp"))?;
        let (responses, prov) = io::read_responses(&rp)?;
        self.check_provenance(&rp, &prov);
        let manifest = FeatureManifest::load(&self.require(stage, Stage::Ingest, adir.join("manifest.json"))?)?;
        let features = manifest.load_features(&adir)?;
        Ok((events, responses, features))
    }

    fn electrodes(&self, stage: Stage) -> Result<Vec<ElectrodeMeta>> {
        tables::read_electrodes(&self.require(stage, Stage::Ingest, self.dir(Stage::Ingest).join("electrodes.csv"))?)
    }

    fn scores_path(&self, a: Alignment) -> PathBuf {
        self.dir(Stage::Regress).join(format!("{}.nscr", a.short_name()))
    }

    fn intervals_path(&self, a: Alignment) -> PathBuf {
        self.dir(Stage::Bootstrap).join(format!("{}.nbci", a.short_name()))
    }

    fn verdicts_path(&self, a: Alignment, kind: BatteryKind) -> PathBuf {
        self.dir(Stage::Compare)
            .join(format!("{}_{}.csv", a.short_name(), kind.file_stem()))
    }

    fn fold_plan(&self, n: usize) -> Result<FoldPlan> {
        crate::encoder::make_folds(n, self.config.ridge.k_folds)
    }

    // ---- regress ----

    fn regress(&self) -> Result<Vec<PathBuf>> {
        let summary = self.ingest_summary(Stage::Regress)?;
        let analysis = self.config.analysis();
        let mut written = Vec::new();
        for &a in &summary.alignments {
            let (_, responses, features) = self.load_ingested(Stage::Regress, a)?;
            let (_, scores) = analysis::regress(&features, &responses, &analysis)?;
            let ids: Vec<u32> = responses.electrodes.iter().map(|e| e.electrode_id).collect();
            let p = self.scores_path(a);
            io::write_scores(&p, &scores, &self.hash)?;
            written.push(p);
            let p = self.dir(Stage::Regress).join(format!("{}_scores.csv", a.short_name()));
            tables::write_scores_csv(&p, &scores, &ids, &self.hash)?;
            written.push(p);
        }
        Ok(written)
    }

    // ---- bootstrap ----

    fn bootstrap(&self) -> Result<Vec<PathBuf>> {
        let summary = self.ingest_summary(Stage::Bootstrap)?;
        let analysis = self.config.analysis();
        let mut written = Vec::new();
        for &a in &summary.alignments {
            let sp = self.require(Stage::Bootstrap, Stage::Regress, self.scores_path(a))?;
            let (events, responses, features) = self.load_ingested(Stage::Bootstrap, a)?;
            let (scores, prov) = io::read_scores(&sp)?;
            self.check_provenance(&sp, &prov);
            let folds = self.fold_plan(responses.n_events())?;
            let onsets: Vec<f64> = events.iter().map(|e| e.onset_ms).collect();
            let ci = analysis::bootstrap(&features, &responses, &onsets, &folds, &scores, a, &analysis)?;
            let mask = crate::bootstrap::survivor_mask(&ci);
            let ids: Vec<u32> = responses.electrodes.iter().map(|e| e.electrode_id).collect();
            let p = self.intervals_path(a);
            io::write_intervals(&p, &ci, &self.hash)?;
            written.push(p);
            let d = self.dir(Stage::Bootstrap);
            let p = d.join(format!("{}_ci.csv", a.short_name()));
            tables::write_intervals_csv(&p, &ci, &ids, &self.hash)?;
            written.push(p);
            let p = d.join(format!("{}_survivors.csv", a.short_name()));
            tables::write_survivors_csv(&p, &mask, &ids, &self.hash)?;
            written.push(p);
        }
        Ok(written)
    }

    // ---- compare ----

    fn compare(&self) -> Result<Vec<PathBuf>> {
        let summary = self.ingest_summary(Stage::Compare)?;
        let electrodes = self.electrodes(Stage::Compare)?;
        let ids: Vec<u32> = electrodes.iter().map(|e| e.electrode_id).collect();
        let analysis = self.config.analysis();
        let mut written = Vec::new();
        for &a in &summary.alignments {
            let cp = self.require(Stage::Compare, Stage::Bootstrap, self.intervals_path(a))?;
            let sp = self.require(Stage::Compare, Stage::Regress, self.scores_path(a))?;
            let (ci, prov) = io::read_intervals(&cp)?;
            self.check_provenance(&cp, &prov);
            let (scores, _) = io::read_scores(&sp)?;
            let (_, verdicts) = analysis::compare(&summary.models, &ci, &scores, &ids, a, &analysis)?;
            for (kind, v) in &verdicts.batteries {
                let p = self.verdicts_path(a, *kind);
                tables::write_verdicts(&p, v, &electrodes, &self.hash)?;
                written.push(p);
            }
        }
        Ok(written)
    }

    // ---- tests ----

    fn load_verdicts(&self, a: Alignment) -> Result<BatteryVerdicts> {
        let mut out = BatteryVerdicts::default();
        for kind in BatteryKind::ALL {
            let p = self.verdicts_path(a, kind);
            if kind == BatteryKind::Weak {
                self.require(Stage::Tests, Stage::Compare, p.clone())?;
            }
            if p.exists() {
                if let Some(h) = tables::read_config_hash(&p)? {
                    self.check_provenance(&p, &h);
                }
                out.batteries.push((kind, tables::read_verdicts(&p)?));
            }
        }
        Ok(out)
    }

    fn tests(&self) -> Result<Vec<PathBuf>> {
        let summary = self.ingest_summary(Stage::Tests)?;
        for a in Alignment::ALL {
            if !summary.alignments.contains(&a) {
                return Err(Error::config(format!(
                    "the multimodality tests need both alignments; {a} was not ingested"
                )));
            }
        }
        let electrodes = self.electrodes(Stage::Tests)?;
        let language = self.load_verdicts(Alignment::LanguageAligned)?;
        let vision = self.load_verdicts(Alignment::VisionAligned)?;
        let outcomes =
            analysis::multimodality_outcomes(&language, &vision, &summary.models, &self.config.analysis())?;
        let p = self.dir(Stage::Tests).join("outcomes.csv");
        tables::write_outcomes(&p, &outcomes, &electrodes, &self.hash)?;
        Ok(vec![p])
    }

    // ---- report ----

    fn report_text(&self, outcomes: &[TestOutcome], electrodes: &[ElectrodeMeta]) -> String {
        let mut s = String::new();
        s.push_str(&format!("config hash: {}\nseed: {}\nelectrodes: {}\n\n", self.hash, self.config.seed, electrodes.len()));
        s.push_str(&summary_table(outcomes, electrodes.len()));
        for test in TestId::ALL {
            let passing: Vec<String> = outcomes
                .iter()
                .filter(|o| o.test == test && o.pass)
                .map(|o| {
                    let e = &electrodes[o.electrode];
                    format!("{} (subject {}, {})", e.electrode_id, e.subject_id, e.region_label)
                })
                .collect();
            if outcomes.iter().any(|o| o.test == test) {
                s.push_str(&format!("\n{}: {} passing\n", test.label(), passing.len()));
                for p in passing {
                    s.push_str(&format!("  {p}\n"));
                }
            }
        }
        s
    }

    fn report(&self) -> Result<Vec<PathBuf>> {
        let _ = self.ingest_summary(Stage::Report)?;
        let electrodes = self.electrodes(Stage::Report)?;
        let op = self.require(Stage::Report, Stage::Tests, self.dir(Stage::Tests).join("outcomes.csv"))?;
        let outcomes = tables::read_outcomes(&op, &electrodes)?;
        let atlas = match &self.config.inputs.atlas {
            Some(p) => RegionAtlas::load(p)?,
            None => RegionAtlas::default(),
        };
        let dir = self.dir(Stage::Report);
        let mut written = Vec::new();

        let regions = aggregate_regions(&outcomes, &electrodes, &atlas)?;
        let p = dir.join("regions.csv");
        tables::write_regions(&p, &regions, &self.hash)?;
        written.push(p);

        let mut text = self.report_text(&outcomes, &electrodes);
        if let Some(gt) = &self.config.inputs.ground_truth {
            let truth = tables::read_ground_truth(gt)?;
            let recovery = oracle_recovery_report(&outcomes, &truth)?;
            text.push_str(&format!(
                "\nplanted-signal recovery\n  strict sensitivity (multimodal-nonlinear): {:.3}\n  non-linear sensitivity: {:.3}\n  weak false-positive rate (noise + unimodal): {:.3}\n  non-linear false-positive rate: {:.3}\n  multimodal-linear strict-only rate: {:.3}\n",
                recovery.strict_sensitivity,
                recovery.nonlinear_sensitivity,
                recovery.weak_false_positive_rate,
                recovery.nonlinear_false_positive_rate,
                recovery.linear_strict_only_rate
            ));
            let p = dir.join("recovery.json");
            write_json(&p, &recovery)?;
            written.push(p);
        }
        let p = dir.join("report.txt");
        write_text(&p, &text)?;
        written.push(p);

        let mut artifacts = Vec::new();
        for stage in [Stage::Ingest, Stage::Regress, Stage::Bootstrap, Stage::Compare, Stage::Tests] {
            let mut files: Vec<PathBuf> = walk(&self.dir(stage))?;
            files.sort();
            for f in files {
                let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
                artifacts.push(ArtifactDigest {
                    path: relative_to(&f, &self.out).to_string_lossy().replace('\\', "/"),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                });
            }
        }
        let manifest = RunManifest {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            artifacts,
        };
        let p = dir.join("run_manifest.json");
        write_json(&p, &manifest)?;
        written.push(p);
        Ok(written)
    }

    // ---- synth ----

    /// Writes a synthetic dataset under `<out>/synth` together with
    /// `run.toml`, a config that runs the analysis chain on it.
    fn synth(&self) -> Result<Vec<PathBuf>> {
        let data = generate(&self.config.synth)?;
        let dir = self.dir(Stage::Synth);
        let mut written = Vec::new();
        let p = dir.join("electrodes.csv");
        tables::write_electrodes(&p, &data.electrodes, None)?;
        written.push(p);
        let p = dir.join("ground_truth.csv");
        tables::write_ground_truth(&p, &data.truth, Some(&self.hash))?;
        written.push(p);
        let mut run = self.config.clone();
        for a in &data.alignments {
            let adir = dir.join(a.alignment.short_name());
            let p = adir.join("events.csv");
            tables::write_events(&p, &a.events, None)?;
            written.push(p);
            let p = adir.join("responses.nrsp");
            io::write_responses(&p, &a.responses, &self.hash)?;
            written.push(p);
            let mut entries = Vec::new();
            for (mf, spec) in a.features.iter().zip(&data.specs) {
                for layer in &mf.layers {
                    let rel = PathBuf::from("features").join(io::feature_file_name(&mf.model_id, &layer.layer_id));
                    let p = adir.join(&rel);
                    io::write_features(&p, layer, &self.hash)?;
                    written.push(p);
                    entries.push(ManifestEntry {
                        model_id: mf.model_id.clone(),
                        layer_id: layer.layer_id.clone(),
                        path: rel,
                        modality_class: spec.modality_class,
                        trained: spec.trained,
                    });
                }
            }
            let p = adir.join("manifest.json");
            FeatureManifest { entries }.save(&p)?;
            written.push(p);
            let inputs = crate::config::AlignmentInputs {
                events: PathBuf::from(a.alignment.short_name()).join("events.csv"),
                responses: PathBuf::from(a.alignment.short_name()).join("responses.nrsp"),
                manifest: PathBuf::from(a.alignment.short_name()).join("manifest.json"),
            };
            match a.alignment {
                Alignment::LanguageAligned => run.inputs.language = Some(inputs),
                Alignment::VisionAligned => run.inputs.vision = Some(inputs),
            }
        }
        run.inputs.electrodes = None;
        run.inputs.ground_truth = Some(PathBuf::from("ground_truth.csv"));
        run.window = None;
        if run.slip.is_none() {
            run.slip = Some(data.slip_pair.clone());
        }
        run.output_dir = PathBuf::from("..");
        let p = dir.join("run.toml");
        write_text(
            &p,
            &format!(
                "# Analysis of the synthetic dataset in this directory; paths are relative to this file.\n{}",
                run.to_toml()
            ),
        )?;
        written.push(p);
        Ok(written)
    }
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            out.extend(walk(&path)?);
        } else {
            out.push(path);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_overrides, RunConfig};

    fn config(out: &Path, extra: &[&str]) -> RunConfig {
        let mut args: Vec<String> = [
            "--seed", "3", "--n_events", "150", "--synth.n_bins", "4", "--resamples", "20", "--timebin_resamples", "50",
            "--min_bins", "2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        args.extend(extra.iter().map(|s| s.to_string()));
        args.push("--output_dir".into());
        args.push(out.to_string_lossy().into_owned());
        for class in ["multimodal_linear", "multimodal_nonlinear", "unimodal_language", "unimodal_vision", "noise"] {
            args.push(format!("--{class}"));
            args.push("1".into());
        }
        RunConfig::load(None, &parse_overrides(&args).unwrap()).unwrap()
    }

    #[test]
    fn stage_order_errors_name_the_producer() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(config(dir.path(), &[]));
        let err = p.execute(Stage::Bootstrap).unwrap_err();
        match err {
            Error::StageOrder { stage, producer, missing } => {
                assert_eq!(stage, "bootstrap");
                assert_eq!(producer, "ingest");
                assert!(missing.ends_with("models.json"));
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(Stage::from_str("tests").unwrap(), Stage::Tests);
    }

    #[test]
    fn synth_then_full_chain() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(config(dir.path(), &[]));
        p.execute(Stage::Synth).unwrap();
        let run_toml = dir.path().join("synth/run.toml");
        let cfg = RunConfig::load(Some(&run_toml), &[]).unwrap();
        assert_eq!(cfg.output_dir, dir.path().join("synth/.."));
        let chain = Pipeline::new(cfg);
        // regress before ingest is a stage-order error
        assert!(matches!(chain.execute(Stage::Regress), Err(Error::StageOrder { .. })));
        chain.run_chain().unwrap();
        let report = fs::read_to_string(dir.path().join("report/report.txt")).unwrap();
        assert!(report.contains("Strict test of multimodality"));
        assert!(report.contains("planted-signal recovery"));
        assert!(dir.path().join("report/recovery.json").exists());
        let manifest: RunManifest = read_json(&dir.path().join("report/run_manifest.json")).unwrap();
        assert_eq!(manifest.config_hash, chain.config_hash());
        assert!(manifest.artifacts.iter().any(|a| a.path == "regress/language.nscr"));
        let verdicts = dir.path().join("compare/vision_weak.csv");
        assert_eq!(
            tables::read_config_hash(&verdicts).unwrap().as_deref(),
            Some(chain.config_hash())
        );

        // idempotence: rerunning a stage rewrites identical bytes
        let before = fs::read(dir.path().join("regress/language.nscr")).unwrap();
        chain.execute(Stage::Regress).unwrap();
        assert_eq!(before, fs::read(dir.path().join("regress/language.nscr")).unwrap());
    }
}
