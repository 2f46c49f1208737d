//! Feature manifests: the JSON index of per-layer feature files.
//!
//! ```json
//! {"entries": [{"model_id": "clip", "layer_id": "visual.0", "path": "clip/visual.0.nfea",
//!               "modality_class": "MultimodalTrained", "trained": true}]}
//! ```
//!
//! Paths are relative to the manifest's directory. Files ending in `.csv` are
//! read as dense feature tables, everything else as NFEA.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comparison::{ModalityClass, ModelSpec};
use crate::encoder::ModelFeatures;
use crate::error::{Error, Result};
use crate::feature_store::FeatureMatrix;
use crate::io::binary::read_features;
use crate::io::tables::read_features_csv;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub model_id: String,
    pub layer_id: String,
    pub path: PathBuf,
    pub modality_class: ModalityClass,
    pub trained: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub entries: Vec<ManifestEntry>,
}

impl FeatureManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: FeatureManifest =
            serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        m.validate()
            .map_err(|e| Error::data(format!("{}: {}", path.display(), e)))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Each (model, layer) appears once and a model's class is consistent.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        let mut classes: BTreeMap<&str, (ModalityClass, bool)> = BTreeMap::new();
        for e in &self.entries {
            if seen.insert((e.model_id.as_str(), e.layer_id.as_str()), ()).is_some() {
                return Err(Error::data(format!("duplicate manifest entry {}/{}", e.model_id, e.layer_id)));
            }
            let class = (e.modality_class, e.trained);
            if *classes.entry(&e.model_id).or_insert(class) != class {
                return Err(Error::data(format!("model {} has inconsistent modality class", e.model_id)));
            }
        }
        for spec in self.specs() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Model specifications in first-appearance order.
    pub fn specs(&self) -> Vec<ModelSpec> {
        let mut out: Vec<ModelSpec> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|s| s.model_id == e.model_id) {
                out.push(ModelSpec::new(e.model_id.clone(), e.modality_class, e.trained));
            }
        }
        out
    }

    /// Loads every feature file, grouped by model in first-appearance order
    /// with layers in manifest order.
    pub fn load_features(&self, base: &Path) -> Result<Vec<ModelFeatures<f64>>> {
        let mut out: Vec<ModelFeatures<f64>> = Vec::new();
        for e in &self.entries {
            let path = base.join(&e.path);
            let fm = if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
                read_features_csv(&path, &e.model_id, &e.layer_id)?
            } else {
                read_features(&path)?
            };
            if fm.model_id != e.model_id || fm.layer_id != e.layer_id {
                return Err(Error::data(format!(
                    "{} holds {}, manifest says {}/{}",
                    path.display(),
                    fm.stream_label(),
                    e.model_id,
                    e.layer_id
                )));
            }
            push_layer(&mut out, fm);
        }
        Ok(out)
    }
}

fn push_layer(out: &mut Vec<ModelFeatures<f64>>, fm: FeatureMatrix<f64>) {
    match out.iter_mut().find(|m| m.model_id == fm.model_id) {
        Some(m) => m.layers.push(fm),
        None => out.push(ModelFeatures {
            model_id: fm.model_id.clone(),
            layers: vec![fm],
        }),
    }
}

/// File name used for a layer's feature file: path separators and other
/// unsafe characters are replaced.
pub fn feature_file_name(model_id: &str, layer_id: &str) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect::<String>()
    };
    format!("{}__{}.nfea", clean(model_id), clean(layer_id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::binary::write_features;
    use ndarray::Array2;

    fn entry(model: &str, layer: &str, class: ModalityClass, trained: bool) -> ManifestEntry {
        ManifestEntry {
            model_id: model.into(),
            layer_id: layer.into(),
            path: feature_file_name(model, layer).into(),
            modality_class: class,
            trained,
        }
    }

    #[test]
    fn manifest_round_trip_and_loading() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureManifest {
            entries: vec![
                entry("a", "l0", ModalityClass::UnimodalVision, true),
                entry("b", "x/y", ModalityClass::MultimodalTrained, true),
                entry("a", "l1", ModalityClass::UnimodalVision, true),
            ],
        };
        for e in &m.entries {
            let fm = FeatureMatrix::new(e.model_id.clone(), e.layer_id.clone(), Array2::<f64>::ones((5, 2)));
            write_features(&dir.path().join(&e.path), &fm, "").unwrap();
        }
        let p = dir.path().join("manifest.json");
        m.save(&p).unwrap();
        let back = FeatureManifest::load(&p).unwrap();
        assert_eq!(back, m);
        let f = back.load_features(dir.path()).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].layers.len(), 2);
        assert_eq!(f[1].layers[0].layer_id, "x/y");
        assert_eq!(back.specs()[1].modality_class, ModalityClass::MultimodalTrained);
    }

    #[test]
    fn invalid_manifests() {
        let dup = FeatureManifest {
            entries: vec![
                entry("a", "l0", ModalityClass::UnimodalVision, true),
                entry("a", "l0", ModalityClass::UnimodalVision, true),
            ],
        };
        assert!(dup.validate().is_err());
        let inconsistent = FeatureManifest {
            entries: vec![
                entry("a", "l0", ModalityClass::UnimodalVision, true),
                entry("a", "l1", ModalityClass::UnimodalLanguage, true),
            ],
        };
        assert!(inconsistent.validate().is_err());
        let random_multimodal = FeatureManifest {
            entries: vec![entry("a", "l0", ModalityClass::MultimodalTrained, false)],
        };
        assert!(random_multimodal.validate().is_err());
    }

    #[test]
    fn file_names_are_sanitized() {
        assert_eq!(feature_file_name("clip/vit", "blocks.0 q"), "clip_vit__blocks.0_q.nfea");
    }
}
