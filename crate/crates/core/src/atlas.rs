//! Desikan-Killiany-Tourville cortical labels.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};

/// The 31 DKT cortical regions per hemisphere.
pub const DKT_REGIONS: [&str; 31] = [
    "caudalanteriorcingulate",
    "caudalmiddlefrontal",
    "cuneus",
    "entorhinal",
    "fusiform",
    "inferiorparietal",
    "inferiortemporal",
    "isthmuscingulate",
    "lateraloccipital",
    "lateralorbitofrontal",
    "lingual",
    "medialorbitofrontal",
    "middletemporal",
    "parahippocampal",
    "paracentral",
    "parsopercularis",
    "parsorbitalis",
    "parstriangularis",
    "pericalcarine",
    "postcentral",
    "posteriorcingulate",
    "precentral",
    "precuneus",
    "rostralanteriorcingulate",
    "rostralmiddlefrontal",
    "superiorfrontal",
    "superiorparietal",
    "superiortemporal",
    "supramarginal",
    "transversetemporal",
    "insula",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionAtlas {
    labels: BTreeSet<String>,
}

impl Default for RegionAtlas {
    fn default() -> Self {
        Self {
            labels: DKT_REGIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RegionAtlas {
    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            labels: labels
                .into_iter()
                .map(|s| s.as_ref().trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// One label per line; blank lines and `#` comments ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let atlas = Self::from_labels(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.starts_with('#')),
        );
        if atlas.labels.is_empty() {
            return Err(Error::data(format!("{} lists no region labels", path.display())));
        }
        Ok(atlas)
    }

    /// Accepts a bare label or one carrying a hemisphere prefix (`lh-`, `ctx-rh-`, ...).
    pub fn contains(&self, label: &str) -> bool {
        let base = ["ctx-lh-", "ctx-rh-", "lh-", "rh-", "lh.", "rh."]
            .iter()
            .find_map(|p| label.strip_prefix(p))
            .unwrap_or(label);
        self.labels.contains(base)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_atlas_labels() {
        let atlas = RegionAtlas::default();
        assert_eq!(atlas.len(), 31);
        assert!(atlas.contains("superiortemporal"));
        assert!(atlas.contains("ctx-lh-fusiform"));
        assert!(!atlas.contains("bankssts"));
    }

    #[test]
    fn load_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.txt");
        std::fs::write(&path, "# custom\nregionA\n\nregionB\n").unwrap();
        let atlas = RegionAtlas::load(&path).unwrap();
        assert_eq!(atlas.len(), 2);
        assert!(atlas.contains("regionB"));
    }
}
