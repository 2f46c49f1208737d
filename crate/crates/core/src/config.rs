//! Run configuration: a TOML file whose every key can be overridden by a
//! command-line flag of the same name.
//!
//! Flags name keys either by their dotted path (`--bootstrap.resamples 200`)
//! or by their leaf name when it is unique (`--resamples 200`). Relative paths
//! in the file resolve against the file's directory; relative paths given as
//! flags resolve against the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Value;

use crate::analysis::AnalysisConfig;
use crate::comparison::ComparisonConfig;
use crate::encoder::RidgeConfig;
use crate::error::{Error, Result};
use crate::event_model::{Alignment, WindowSpec};
use crate::multimodality::SlipPair;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeSection {
    pub lambdas: Vec<f64>,
    pub k_folds: usize,
}

impl Default for RidgeSection {
    fn default() -> Self {
        Self {
            lambdas: RidgeConfig::default().lambdas,
            k_folds: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    /// Event resamples `B`.
    pub resamples: usize,
    /// Time-bin resamples of the model comparison.
    pub timebin_resamples: usize,
    /// Keep resampled events in onset order.
    pub sort: bool,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            resamples: 1000,
            timebin_resamples: 1000,
            sort: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    pub enabled: bool,
    pub epsilon: f64,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentInputs {
    pub events: PathBuf,
    /// NRSP file or long-format CSV.
    pub responses: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Electrode metadata CSV; required when responses are CSV.
    pub electrodes: Option<PathBuf>,
    /// Region label list, one per line; the built-in DKT list when absent.
    pub atlas: Option<PathBuf>,
    /// Planted-class CSV from `synth`, enabling the recovery report.
    pub ground_truth: Option<PathBuf>,
    pub language: Option<AlignmentInputs>,
    pub vision: Option<AlignmentInputs>,
}

impl Inputs {
    pub fn alignment(&self, a: Alignment) -> Option<&AlignmentInputs> {
        match a {
            Alignment::LanguageAligned => self.language.as_ref(),
            Alignment::VisionAligned => self.vision.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; there is no default.
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_min_bins")]
    pub min_bins: usize,
    /// When set, response bin counts are checked against it.
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub ridge: RidgeSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub projection: ProjectionSection,
    #[serde(default)]
    pub slip: Option<SlipPair>,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub synth: SynthConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("neurocmp-out")
}

fn default_alpha() -> f64 {
    0.05
}

fn default_min_bins() -> usize {
    10
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Str,
    Path,
    FloatList,
}

/// Every settable key with its type.
const KEYS: &[(&str, Kind)] = &[
    ("seed", Kind::Int),
    ("output_dir", Kind::Path),
    ("threads", Kind::Int),
    ("alpha", Kind::Float),
    ("min_bins", Kind::Int),
    ("window.window_ms", Kind::Float),
    ("window.sub_window_ms", Kind::Float),
    ("window.stride_ms", Kind::Float),
    ("ridge.lambdas", Kind::FloatList),
    ("ridge.k_folds", Kind::Int),
    ("bootstrap.resamples", Kind::Int),
    ("bootstrap.timebin_resamples", Kind::Int),
    ("bootstrap.sort", Kind::Bool),
    ("projection.enabled", Kind::Bool),
    ("projection.epsilon", Kind::Float),
    ("slip.multimodal", Kind::Str),
    ("slip.unimodal", Kind::Str),
    ("inputs.electrodes", Kind::Path),
    ("inputs.atlas", Kind::Path),
    ("inputs.ground_truth", Kind::Path),
    ("inputs.language.events", Kind::Path),
    ("inputs.language.responses", Kind::Path),
    ("inputs.language.manifest", Kind::Path),
    ("inputs.vision.events", Kind::Path),
    ("inputs.vision.responses", Kind::Path),
    ("inputs.vision.manifest", Kind::Path),
    ("synth.n_events", Kind::Int),
    ("synth.language_dim", Kind::Int),
    ("synth.vision_dim", Kind::Int),
    ("synth.multimodal_dim", Kind::Int),
    ("synth.multilin_dim", Kind::Int),
    ("synth.n_bins", Kind::Int),
    ("synth.noise_sigma", Kind::Float),
    ("synth.seed", Kind::Int),
    ("synth.electrodes.multimodal_linear", Kind::Int),
    ("synth.electrodes.multimodal_nonlinear", Kind::Int),
    ("synth.electrodes.unimodal_language", Kind::Int),
    ("synth.electrodes.unimodal_vision", Kind::Int),
    ("synth.electrodes.noise", Kind::Int),
];

/// Resolves a flag name to its dotted key.
fn resolve_key(flag: &str) -> Result<(&'static str, Kind)> {
    let name = flag.replace('-', "_");
    if let Some(&(k, kind)) = KEYS.iter().find(|(k, _)| *k == name) {
        return Ok((k, kind));
    }
    let matches: Vec<&(&str, Kind)> = KEYS
        .iter()
        .filter(|(k, _)| k.rsplit('.').next() == Some(name.as_str()))
        .collect();
    match matches.as_slice() {
        [(k, kind)] => Ok((k, *kind)),
        [] => Err(Error::config(format!("unknown option --{flag}"))),
        many => Err(Error::config(format!(
            "option --{flag} is ambiguous; use one of {}",
            many.iter().map(|(k, _)| format!("--{k}")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn parse_value(kind: Kind, raw: &str) -> Option<Value> {
    match kind {
        Kind::Int => raw.parse::<i64>().ok().map(Value::Integer),
        Kind::Float => raw.parse::<f64>().ok().map(Value::Float),
        Kind::Bool => raw.parse::<bool>().ok().map(Value::Boolean),
        Kind::Str | Kind::Path => Some(Value::String(raw.to_string())),
        Kind::FloatList => raw
            .split(',')
            .map(|s| s.trim().parse::<f64>().ok().map(Value::Float))
            .collect::<Option<Vec<_>>>()
            .map(Value::Array),
    }
}

fn get<'a>(root: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(root, |v, part| v.get(part))
}

fn set(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("cannot set {key}: a parent is not a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Default::default()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::config(format!("cannot set {key}: a parent is not a table")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// One `--key value` flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Override {
    pub flag: String,
    pub value: String,
}

/// Splits `--key value` / `--key=value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<Override>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let flag = a
            .strip_prefix("--")
            .ok_or_else(|| Error::config(format!("expected an option, found `{a}`")))?;
        let (flag, value) = match flag.split_once('=') {
            Some((f, v)) => (f.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::config(format!("option --{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        out.push(Override { flag, value });
    }
    Ok(out)
}

fn absolutize(value: &mut Value, base: &Path) {
    if let Value::String(s) = value {
        let p = Path::new(s.as_str());
        if p.is_relative() {
            *s = base.join(p).to_string_lossy().into_owned();
        }
    }
}

impl RunConfig {
    /// Loads an optional config file and applies flag overrides on top.
    pub fn load(file: Option<&Path>, overrides: &[Override]) -> Result<Self> {
        let (mut root, file_label) = match file {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut v: Value = toml::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                for (key, kind) in KEYS {
                    if *kind == Kind::Path {
                        if let Some(slot) = key
                            .split('.')
                            .try_fold(&mut v, |cur, part| cur.get_mut(part))
                        {
                            absolutize(slot, &base);
                        }
                    }
                }
                (v, format!("config file {}", path.display()))
            }
            None => (Value::Table(Default::default()), "no config file".to_string()),
        };
        let mut applied: Vec<(&str, &Override)> = Vec::new();
        for o in overrides {
            let (key, kind) = resolve_key(&o.flag)?;
            if let Some((_, prev)) = applied.iter().find(|(k, _)| *k == key) {
                if prev.value != o.value {
                    return Err(Error::config(format!(
                        "flag --{} {} conflicts with flag --{} {} (both set {key})",
                        prev.flag, prev.value, o.flag, o.value
                    )));
                }
            }
            let value = parse_value(kind, &o.value).ok_or_else(|| {
                let file_side = match get(&root, key) {
                    Some(v) => format!("; {file_label} sets {key} = {v}"),
                    None => String::new(),
                };
                Error::config(format!(
                    "flag --{} has invalid value `{}` for {key} ({kind:?} expected){file_side}",
                    o.flag, o.value
                ))
            })?;
            if let Some(prev) = get(&root, key) {
                if *prev != value {
                    log::info!("flag --{} overrides {key} = {prev} from {file_label}", o.flag);
                }
            }
            set(&mut root, key, value)?;
            applied.push((key, o));
        }
        if get(&root, "seed").is_none() {
            return Err(Error::config("a seed is required (set `seed` in the config file or pass --seed)"));
        }
        let explicit_synth_seed = get(&root, "synth.seed").is_some();
        let mut config: RunConfig = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("{file_label}: {e}")))?;
        if !explicit_synth_seed {
            config.synth.seed = config.seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.min_bins == 0 {
            return Err(Error::config("min_bins must be at least 1"));
        }
        RidgeConfig {
            lambdas: self.ridge.lambdas.clone(),
        }
        .validate()?;
        if self.bootstrap.resamples == 0 || self.bootstrap.timebin_resamples == 0 {
            return Err(Error::config("bootstrap resample counts must be positive"));
        }
        if !(self.projection.epsilon > 0.0 && self.projection.epsilon < 1.0) {
            return Err(Error::config(format!(
                "projection epsilon must lie in (0, 1), got {}",
                self.projection.epsilon
            )));
        }
        if let Some(w) = &self.window {
            w.validate()?;
        }
        self.synth.validate()
    }

    /// SHA-256 (hex) of the canonical JSON form, ignoring `threads` and
    /// `output_dir`, which do not affect results.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            ridge: RidgeConfig {
                lambdas: self.ridge.lambdas.clone(),
            },
            k_folds: self.ridge.k_folds,
            resamples: self.bootstrap.resamples,
            sort_resamples: self.bootstrap.sort,
            comparison: ComparisonConfig {
                alpha: self.alpha,
                min_bins: self.min_bins,
                timebin_resamples: self.bootstrap.timebin_resamples,
                seed: self.seed,
            },
            slip_pair: self.slip.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(args: &[&str]) -> Vec<Override> {
        parse_overrides(&args.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.toml");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::load(None, &[]).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("seed")));
        let c = RunConfig::load(None, &ov(&["--seed", "4"])).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.synth.seed, 4);
        assert_eq!(c.bootstrap, BootstrapSection::default());
    }

    #[test]
    fn file_values_flags_and_leaf_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "seed = 3\nalpha = 0.01\n[bootstrap]\nresamples = 50\n[inputs.language]\nevents = \"ev.csv\"\nresponses = \"r.nrsp\"\nmanifest = \"m.json\"\n",
        );
        let c = RunConfig::load(Some(&p), &ov(&["--resamples", "75", "--ridge.lambdas=1,10", "--sort", "false"])).unwrap();
        assert_eq!(c.alpha, 0.01);
        assert_eq!(c.bootstrap.resamples, 75);
        assert!(!c.bootstrap.sort);
        assert_eq!(c.ridge.lambdas, vec![1.0, 10.0]);
        let lang = c.inputs.language.unwrap();
        assert_eq!(lang.events, dir.path().join("ev.csv"));
    }

    #[test]
    fn errors_name_both_sources() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "seed = 3\n[bootstrap]\nresamples = 50\n");
        let err = RunConfig::load(Some(&p), &ov(&["--resamples", "many"])).unwrap_err();
        let Error::Config(msg) = err else { panic!() };
        assert!(msg.contains("--resamples") && msg.contains("run.toml") && msg.contains("= 50"), "{msg}");
        let err = RunConfig::load(Some(&p), &ov(&["--resamples", "5", "--bootstrap.resamples", "6"])).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("--resamples 5") && m.contains("--bootstrap.resamples 6")));
        assert!(RunConfig::load(Some(&p), &ov(&["--events", "x"])).is_err());
        assert!(RunConfig::load(Some(&p), &ov(&["--bogus", "1"])).is_err());
        let bad = write(dir.path(), "seed = 1\nunknown_key = 2\n");
        assert!(matches!(RunConfig::load(Some(&bad), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_threads_and_output_dir() {
        let a = RunConfig::load(None, &ov(&["--seed", "1"])).unwrap();
        let b = RunConfig::load(None, &ov(&["--seed", "1", "--threads", "4", "--output-dir", "elsewhere"])).unwrap();
        let c = RunConfig::load(None, &ov(&["--seed", "2"])).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn toml_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = RunConfig::load(None, &ov(&["--seed", "9", "--slip.multimodal", "m", "--unimodal", "u"])).unwrap();
        a.output_dir = dir.path().join("out");
        let p = write(dir.path(), &a.to_toml());
        let b = RunConfig::load(Some(&p), &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::load(None, &ov(&["--seed", "1", "--alpha", "1.5"])).is_err());
        assert!(RunConfig::load(None, &ov(&["--seed", "1", "--epsilon", "0"])).is_err());
        assert!(RunConfig::load(None, &ov(&["--seed", "1", "--lambdas", "0,1"])).is_err());
        assert!(parse_overrides(&["--seed".to_string()]).is_err());
        assert!(parse_overrides(&["seed".to_string()]).is_err());
    }
}
