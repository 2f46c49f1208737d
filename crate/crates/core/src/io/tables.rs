//! CSV tables: inputs (events, electrodes, responses, features) and every
//! per-stage output. Output tables start with a `# config_hash: ...` comment
//! line followed by a header row.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{BootstrapCI, SurvivorMask};
use crate::comparison::{ComparisonVerdict, VerdictKind};
use crate::encoder::{ScoreTensor, Split};
use crate::error::{Error, Result};
use crate::event_model::{Alignment, ElectrodeMeta, EventStructure, ResponseTensor};
use crate::feature_store::FeatureMatrix;
use crate::multimodality::{RegionSummary, TestId, TestOutcome};
use crate::scalar::Real;
use crate::synth::{GroundTruth, PlantedClass, PlantedElectrode};

const HASH_PREFIX: &str = "# config_hash: ";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::data(format!("{}: {e}", path.display())),
    }
}

/// Writes `rows` under a config-hash comment line.
pub fn write_rows<R: Serialize>(path: &Path, config_hash: Option<&str>, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut out = create(path)?;
    if let Some(h) = config_hash {
        writeln!(out, "{HASH_PREFIX}{h}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// The hash recorded on the first line of an output table, if any.
pub fn read_config_hash(path: &Path) -> Result<Option<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(HASH_PREFIX))
        .map(|h| h.trim().to_string()))
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    event_id: u64,
    onset_ms: f64,
    text: String,
    image_ref: String,
    alignment: String,
}

pub fn write_events(path: &Path, events: &[EventStructure], config_hash: Option<&str>) -> Result<()> {
    write_rows(
        path,
        config_hash,
        events.iter().map(|e| EventRow {
            event_id: e.event_id,
            onset_ms: e.onset_ms,
            text: e.text.clone(),
            image_ref: e.image_ref.clone(),
            alignment: e.alignment.short_name().to_string(),
        }),
    )
}

pub fn read_events(path: &Path) -> Result<Vec<EventStructure>> {
    read_rows::<EventRow>(path)?
        .into_iter()
        .map(|r| {
            Ok(EventStructure {
                event_id: r.event_id,
                onset_ms: r.onset_ms,
                text: r.text,
                image_ref: r.image_ref,
                alignment: r
                    .alignment
                    .parse::<Alignment>()
                    .map_err(|e| Error::data(format!("{}: {e}", path.display())))?,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ElectrodeRow {
    electrode_id: u32,
    subject_id: u32,
    region_label: String,
    x: Option<f64>,
    y: Option<f64>,
    z: Option<f64>,
}

pub fn write_electrodes(path: &Path, electrodes: &[ElectrodeMeta], config_hash: Option<&str>) -> Result<()> {
    write_rows(
        path,
        config_hash,
        electrodes.iter().map(|e| ElectrodeRow {
            electrode_id: e.electrode_id,
            subject_id: e.subject_id,
            region_label: e.region_label.clone(),
            x: e.coordinates.map(|c| c[0]),
            y: e.coordinates.map(|c| c[1]),
            z: e.coordinates.map(|c| c[2]),
        }),
    )
}

pub fn read_electrodes(path: &Path) -> Result<Vec<ElectrodeMeta>> {
    read_rows::<ElectrodeRow>(path)?
        .into_iter()
        .map(|r| {
            let coordinates = match (r.x, r.y, r.z) {
                (Some(x), Some(y), Some(z)) => Some([x, y, z]),
                (None, None, None) => None,
                _ => {
                    return Err(Error::data(format!(
                        "{}: electrode {} has partial coordinates",
                        path.display(),
                        r.electrode_id
                    )))
                }
            };
            Ok(ElectrodeMeta {
                electrode_id: r.electrode_id,
                subject_id: r.subject_id,
                region_label: r.region_label,
                coordinates,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ResponseRow {
    electrode_id: u32,
    event_id: u64,
    bin_center_ms: f64,
    value: f64,
}

/// Long-format responses, one row per electrode × event × bin.
pub fn write_responses_csv<T: Real>(path: &Path, responses: &ResponseTensor<T>, event_ids: &[u64]) -> Result<()> {
    if event_ids.len() != responses.n_events() {
        return Err(Error::data("event ids do not match the response tensor"));
    }
    let rows = responses.electrodes.iter().enumerate().flat_map(|(e, meta)| {
        event_ids.iter().enumerate().flat_map(move |(i, &id)| {
            responses.bin_centers_ms.iter().enumerate().map(move |(b, &c)| ResponseRow {
                electrode_id: meta.electrode_id,
                event_id: id,
                bin_center_ms: c,
                value: responses.values[[e, i, b]].to_f64_lossy(),
            })
        })
    });
    write_rows(path, None, rows)
}

/// Reads long-format responses; electrodes follow `electrodes`, events follow
/// `event_ids`, and bins are ordered by center. Every cell must be present once.
pub fn read_responses_csv(path: &Path, electrodes: &[ElectrodeMeta], event_ids: &[u64]) -> Result<ResponseTensor<f64>> {
    let rows: Vec<ResponseRow> = read_rows(path)?;
    let e_index: BTreeMap<u32, usize> = electrodes.iter().enumerate().map(|(i, e)| (e.electrode_id, i)).collect();
    let i_index: BTreeMap<u64, usize> = event_ids.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    let mut centers: Vec<f64> = rows.iter().map(|r| r.bin_center_ms).collect();
    centers.sort_by(f64::total_cmp);
    centers.dedup();
    let shape = (electrodes.len(), event_ids.len(), centers.len());
    let mut values = Array3::from_elem(shape, f64::NAN);
    let mut seen = Array3::from_elem(shape, false);
    for r in &rows {
        let e = *e_index
            .get(&r.electrode_id)
            .ok_or_else(|| Error::data(format!("{}: unknown electrode {}", path.display(), r.electrode_id)))?;
        let i = *i_index
            .get(&r.event_id)
            .ok_or_else(|| Error::data(format!("{}: unknown event {}", path.display(), r.event_id)))?;
        let b = centers
            .binary_search_by(|c| c.total_cmp(&r.bin_center_ms))
            .expect("center collected");
        if std::mem::replace(&mut seen[[e, i, b]], true) {
            return Err(Error::data(format!(
                "{}: duplicate cell electrode {} event {} bin {}",
                path.display(),
                r.electrode_id,
                r.event_id,
                r.bin_center_ms
            )));
        }
        values[[e, i, b]] = r.value;
    }
    if let Some(((e, i, b), _)) = seen.indexed_iter().find(|(_, &s)| !s) {
        return Err(Error::data(format!(
            "{}: missing cell electrode {} event {} bin {}",
            path.display(),
            electrodes[e].electrode_id,
            event_ids[i],
            centers[b]
        )));
    }
    ResponseTensor::new(electrodes.to_vec(), values, centers)
}

/// Dense feature CSV: a header row of column names, one row per event.
pub fn read_features_csv(path: &Path, model_id: &str, layer_id: &str) -> Result<FeatureMatrix<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut flat = Vec::new();
    let mut rows = 0;
    let width = r.headers().map_err(|e| csv_err(path, e))?.len();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        for field in rec.iter() {
            flat.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::data(format!("{}: bad number `{field}` in row {rows}", path.display())))?,
            );
        }
        rows += 1;
    }
    let data = Array2::from_shape_vec((rows, width), flat)
        .map_err(|_| Error::data(format!("{}: ragged feature rows", path.display())))?;
    let fm = FeatureMatrix::new(model_id, layer_id, data);
    fm.check_finite()?;
    Ok(fm)
}

pub fn write_features_csv<T: Real>(path: &Path, features: &FeatureMatrix<T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(create(path)?);
    let header: Vec<String> = (0..features.dim()).map(|j| format!("f{j}")).collect();
    out.write_record(&header).map_err(|e| csv_err(path, e))?;
    for row in features.data.rows() {
        out.write_record(row.iter().map(|v| v.to_f64_lossy().to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    model: &'a str,
    layer: &'a str,
    electrode: u32,
    bin: usize,
    split: &'static str,
    r: f64,
    lambda: f64,
    chosen: bool,
}

pub fn write_scores_csv<T: Real>(path: &Path, scores: &ScoreTensor<T>, electrode_ids: &[u32], config_hash: &str) -> Result<()> {
    let mut rows = Vec::new();
    for m in &scores.models {
        for (l, layer) in m.layers.iter().enumerate() {
            for (e, &id) in electrode_ids.iter().enumerate() {
                for bin in 0..scores.n_bins {
                    for split in Split::ALL {
                        rows.push(ScoreRow {
                            model: &m.model_id,
                            layer: &layer.layer_id,
                            electrode: id,
                            bin,
                            split: split.name(),
                            r: layer.scores[[split.index(), e, bin]].to_f64_lossy(),
                            lambda: layer.lambda[e],
                            chosen: m.chosen_layer[e] == l,
                        });
                    }
                }
            }
        }
    }
    write_rows(path, Some(config_hash), rows)
}

#[derive(Serialize)]
struct IntervalRow<'a> {
    model: &'a str,
    electrode: u32,
    bin: usize,
    split: &'static str,
    mean: f64,
    lower95: f64,
    upper95: f64,
}

pub fn write_intervals_csv(path: &Path, ci: &BootstrapCI, electrode_ids: &[u32], config_hash: &str) -> Result<()> {
    let mut rows = Vec::new();
    for (m, model) in ci.models.iter().enumerate() {
        for (e, &id) in electrode_ids.iter().enumerate() {
            for bin in 0..ci.n_bins {
                for split in Split::ALL {
                    let at = [m, split.index(), e, bin];
                    rows.push(IntervalRow {
                        model,
                        electrode: id,
                        bin,
                        split: split.name(),
                        mean: ci.mean[at],
                        lower95: ci.lower[at],
                        upper95: ci.upper[at],
                    });
                }
            }
        }
    }
    write_rows(path, Some(config_hash), rows)
}

#[derive(Serialize)]
struct SurvivorRow<'a> {
    model: &'a str,
    electrode: u32,
    bin: usize,
    survives: bool,
}

pub fn write_survivors_csv(path: &Path, mask: &SurvivorMask, electrode_ids: &[u32], config_hash: &str) -> Result<()> {
    let mut rows = Vec::new();
    for (m, model) in mask.models.iter().enumerate() {
        for (e, &id) in electrode_ids.iter().enumerate() {
            for bin in 0..mask.mask.dim().2 {
                rows.push(SurvivorRow {
                    model,
                    electrode: id,
                    bin,
                    survives: mask.survives(m, e, bin),
                });
            }
        }
    }
    write_rows(path, Some(config_hash), rows)
}

#[derive(Serialize, Deserialize)]
struct VerdictRow {
    electrode: u32,
    subject: u32,
    region: String,
    winner: Option<String>,
    runner_up: Option<String>,
    diff: Option<f64>,
    p_raw: Option<f64>,
    p_adj: Option<f64>,
    kind: String,
    leader: Option<String>,
}

/// Verdicts in electrode order; `electrodes` supplies subject and region.
pub fn write_verdicts(
    path: &Path,
    verdicts: &[ComparisonVerdict],
    electrodes: &[ElectrodeMeta],
    config_hash: &str,
) -> Result<()> {
    let rows = verdicts
        .iter()
        .map(|v| {
            let meta = electrodes
                .get(v.electrode)
                .ok_or_else(|| Error::data(format!("verdict for unknown electrode index {}", v.electrode)))?;
            Ok(VerdictRow {
                electrode: v.electrode_id,
                subject: meta.subject_id,
                region: meta.region_label.clone(),
                winner: v.winner().map(String::from),
                runner_up: v.runner_up.clone(),
                diff: v.mean_diff,
                p_raw: v.p_raw,
                p_adj: v.p_adj,
                kind: v.kind.to_string(),
                leader: v.leader.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows(path, Some(config_hash), rows)
}

pub fn read_verdicts(path: &Path) -> Result<Vec<ComparisonVerdict>> {
    read_rows::<VerdictRow>(path)?
        .into_iter()
        .enumerate()
        .map(|(e, r)| {
            Ok(ComparisonVerdict {
                electrode: e,
                electrode_id: r.electrode,
                leader: r.leader,
                runner_up: r.runner_up,
                mean_diff: r.diff,
                p_raw: r.p_raw,
                p_adj: r.p_adj,
                kind: r.kind.parse::<VerdictKind>()?,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct OutcomeRow {
    electrode: u32,
    subject: u32,
    region: String,
    test: String,
    language: Option<bool>,
    vision: Option<bool>,
    pass: bool,
}

pub fn write_outcomes(path: &Path, outcomes: &[TestOutcome], electrodes: &[ElectrodeMeta], config_hash: &str) -> Result<()> {
    let rows = outcomes
        .iter()
        .map(|o| {
            let meta = electrodes
                .get(o.electrode)
                .ok_or_else(|| Error::data(format!("outcome for unknown electrode index {}", o.electrode)))?;
            Ok(OutcomeRow {
                electrode: o.electrode_id,
                subject: meta.subject_id,
                region: meta.region_label.clone(),
                test: o.test.to_string(),
                language: o.language,
                vision: o.vision,
                pass: o.pass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows(path, Some(config_hash), rows)
}

/// Reads outcomes back, resolving electrode indices through `electrodes`.
pub fn read_outcomes(path: &Path, electrodes: &[ElectrodeMeta]) -> Result<Vec<TestOutcome>> {
    let index: BTreeMap<u32, usize> = electrodes.iter().enumerate().map(|(i, e)| (e.electrode_id, i)).collect();
    read_rows::<OutcomeRow>(path)?
        .into_iter()
        .map(|r| {
            Ok(TestOutcome {
                electrode: *index
                    .get(&r.electrode)
                    .ok_or_else(|| Error::data(format!("{}: unknown electrode {}", path.display(), r.electrode)))?,
                electrode_id: r.electrode,
                test: r.test.parse::<TestId>()?,
                language: r.language,
                vision: r.vision,
                pass: r.pass,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct RegionRow<'a> {
    region: &'a str,
    n_electrodes: usize,
    test: String,
    language: usize,
    vision: usize,
    passing: usize,
    pct_language: f64,
    pct_vision: f64,
    pct_passing: f64,
    both_alignments: bool,
}

pub fn write_regions(path: &Path, regions: &[RegionSummary], config_hash: &str) -> Result<()> {
    let rows = regions.iter().flat_map(|r| {
        r.tests.iter().map(move |t| RegionRow {
            region: &r.region,
            n_electrodes: r.n_electrodes,
            test: t.test.to_string(),
            language: t.language,
            vision: t.vision,
            passing: t.combined,
            pct_language: r.percent(t.language),
            pct_vision: r.percent(t.vision),
            pct_passing: r.percent(t.combined),
            both_alignments: t.both_alignments,
        })
    });
    write_rows(path, Some(config_hash), rows)
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    electrode_id: u32,
    class: String,
    source: Option<String>,
    weights: String,
}

pub fn write_ground_truth(path: &Path, truth: &GroundTruth, config_hash: Option<&str>) -> Result<()> {
    write_rows(
        path,
        config_hash,
        truth.electrodes.iter().map(|e| TruthRow {
            electrode_id: e.electrode_id,
            class: e.class.to_string(),
            source: e.source.clone(),
            weights: e.weights.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(" "),
        }),
    )
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let electrodes = read_rows::<TruthRow>(path)?
        .into_iter()
        .map(|r| {
            let weights = r
                .weights
                .split_whitespace()
                .map(|w| w.parse::<f64>().map_err(|_| Error::data(format!("{}: bad weight `{w}`", path.display()))))
                .collect::<Result<_>>()?;
            Ok(PlantedElectrode {
                electrode_id: r.electrode_id,
                class: r.class.parse::<PlantedClass>()?,
                source: r.source,
                weights,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GroundTruth { electrodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn electrodes() -> Vec<ElectrodeMeta> {
        vec![
            ElectrodeMeta {
                electrode_id: 4,
                subject_id: 1,
                region_label: "insula".into(),
                coordinates: Some([1.0, 2.0, 3.0]),
            },
            ElectrodeMeta {
                electrode_id: 8,
                subject_id: 2,
                region_label: "superiortemporal".into(),
                coordinates: None,
            },
        ]
    }

    #[test]
    fn events_and_electrodes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let events = vec![
            EventStructure {
                event_id: 1,
                onset_ms: 1500.5,
                text: "a line, with a comma".into(),
                image_ref: "f1.png".into(),
                alignment: Alignment::LanguageAligned,
            },
            EventStructure {
                event_id: 2,
                onset_ms: 2500.0,
                text: "\"quoted\"".into(),
                image_ref: "f2.png".into(),
                alignment: Alignment::LanguageAligned,
            },
        ];
        let p = dir.path().join("events.csv");
        write_events(&p, &events, Some("h1")).unwrap();
        assert_eq!(read_events(&p).unwrap(), events);
        assert_eq!(read_config_hash(&p).unwrap().as_deref(), Some("h1"));
        let p = dir.path().join("electrodes.csv");
        write_electrodes(&p, &electrodes(), None).unwrap();
        assert_eq!(read_electrodes(&p).unwrap(), electrodes());
        assert_eq!(read_config_hash(&p).unwrap(), None);
    }

    #[test]
    fn long_format_responses_round_trip_and_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let values = Array::from_shape_fn((2, 3, 2), |(e, i, b)| (e * 10 + i) as f64 + b as f64 * 0.25);
        let t = ResponseTensor::new(electrodes(), values, vec![-50.0, 50.0]).unwrap();
        let p = dir.path().join("resp.csv");
        write_responses_csv(&p, &t, &[10, 11, 12]).unwrap();
        let back = read_responses_csv(&p, &electrodes(), &[10, 11, 12]).unwrap();
        assert_eq!(back.values, t.values);
        let err = read_responses_csv(&p, &electrodes(), &[10, 11, 12, 13]).unwrap_err();
        assert!(matches!(err, Error::Data(m) if m.contains("missing cell")));
    }

    #[test]
    fn feature_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let fm = FeatureMatrix::new("m", "l", Array::from_shape_fn((4, 3), |(i, j)| i as f64 - j as f64 * 0.125));
        let p = dir.path().join("f.csv");
        write_features_csv(&p, &fm).unwrap();
        assert_eq!(read_features_csv(&p, "m", "l").unwrap().data, fm.data);
    }

    #[test]
    fn verdicts_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let verdicts = vec![
            ComparisonVerdict {
                electrode: 0,
                electrode_id: 4,
                leader: Some("a".into()),
                runner_up: Some("b".into()),
                mean_diff: Some(0.125),
                p_raw: Some(0.001),
                p_adj: Some(0.002),
                kind: VerdictKind::BootstrapWin,
            },
            ComparisonVerdict {
                electrode: 1,
                electrode_id: 8,
                leader: Some("a".into()),
                runner_up: None,
                mean_diff: None,
                p_raw: None,
                p_adj: None,
                kind: VerdictKind::NoDecision,
            },
        ];
        let p = dir.path().join("v.csv");
        write_verdicts(&p, &verdicts, &electrodes(), "h").unwrap();
        assert_eq!(read_verdicts(&p).unwrap(), verdicts);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("electrode,subject,region,winner,runner_up,diff,p_raw,p_adj,kind"));
    }

    #[test]
    fn outcomes_and_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let outcomes = vec![TestOutcome {
            electrode: 1,
            electrode_id: 8,
            test: TestId::NonlinearIntegration,
            language: None,
            vision: None,
            pass: false,
        }];
        let p = dir.path().join("o.csv");
        write_outcomes(&p, &outcomes, &electrodes(), "h").unwrap();
        assert_eq!(read_outcomes(&p, &electrodes()).unwrap(), outcomes);

        let truth = GroundTruth {
            electrodes: vec![PlantedElectrode {
                electrode_id: 3,
                class: PlantedClass::UnimodalVision,
                source: Some("v".into()),
                weights: vec![0.1, -2.5e-7],
            }],
        };
        let p = dir.path().join("t.csv");
        write_ground_truth(&p, &truth, None).unwrap();
        assert_eq!(read_ground_truth(&p).unwrap(), truth);
    }
}
