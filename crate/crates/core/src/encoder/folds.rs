use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::data(format!("unknown split `{other}`"))),
        }
    }
}

/// One fold: contiguous chunks of the (circular) event order. A chunk that
/// wraps past the last event is stored as two ranges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<Range<usize>>,
    pub validation: Vec<Range<usize>>,
    pub test: Vec<Range<usize>>,
}

impl Fold {
    pub fn ranges(&self, split: Split) -> &[Range<usize>] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.ranges(split).iter().flat_map(|r| r.clone()).collect()
    }

    pub fn len(&self, split: Split) -> usize {
        self.ranges(split).iter().map(|r| r.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub n_events: usize,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Builds a plan from explicit folds, checking that each fold partitions
    /// `0..n_events` into three non-empty splits (train needs two events).
    pub fn from_folds(n_events: usize, folds: Vec<Fold>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::config("fold plan has no folds"));
        }
        for (f, fold) in folds.iter().enumerate() {
            let mut seen = vec![false; n_events];
            for split in Split::ALL {
                if fold.len(split) == 0 || (split == Split::Train && fold.len(split) < 2) {
                    return Err(Error::config(format!("fold {f} has too few {split} events")));
                }
                for i in fold.indices(split) {
                    if i >= n_events || seen[i] {
                        return Err(Error::config(format!(
                            "fold {f}: event {i} is out of range or assigned twice"
                        )));
                    }
                    seen[i] = true;
                }
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(Error::config(format!("fold {f}: event {i} is not assigned to any split")));
            }
        }
        Ok(Self { n_events, folds })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

fn circular(start: usize, len: usize, n: usize) -> Vec<Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let start = start % n;
    let end = start + len;
    if end <= n {
        vec![start..end]
    } else {
        vec![start..n, 0..end - n]
    }
}

/// Contiguous 80/10/10 folds. Fold 0 is train `[0, 0.8n)`, validation
/// `[0.8n, 0.9n)`, test `[0.9n, n)`; fold `f` rotates every boundary by
/// `f * n / k` around the circle.
pub fn make_folds(n_events: usize, k: usize) -> Result<FoldPlan> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if n_events < 10 * k {
        return Err(Error::config(format!(
            "{n_events} events are too few for {k} folds (need at least {})",
            10 * k
        )));
    }
    let n = n_events;
    let train_end = 8 * n / 10;
    let val_end = 9 * n / 10;
    let folds = (0..k)
        .map(|f| {
            let shift = f * n / k;
            Fold {
                train: circular(shift, train_end, n),
                validation: circular(shift + train_end, val_end - train_end, n),
                test: circular(shift + val_end, n - val_end, n),
            }
        })
        .collect();
    FoldPlan::from_folds(n, folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_zero_layout() {
        let plan = make_folds(100, 5).unwrap();
        let f0 = &plan.folds[0];
        assert_eq!(f0.train, vec![0..80]);
        assert_eq!(f0.validation, vec![80..90]);
        assert_eq!(f0.test, vec![90..100]);
    }

    #[test]
    fn fold_one_wraps_around() {
        let plan = make_folds(100, 5).unwrap();
        let f1 = &plan.folds[1];
        assert_eq!(f1.train, vec![20..100]);
        assert_eq!(f1.validation, vec![0..10]);
        assert_eq!(f1.test, vec![10..20]);
    }

    #[test]
    fn every_fold_partitions_events() {
        for n in [50usize, 51, 99, 1003] {
            let plan = make_folds(n, 5).unwrap();
            for fold in &plan.folds {
                let mut all: Vec<usize> = Split::ALL.iter().flat_map(|&s| fold.indices(s)).collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
                let target = [0.8, 0.1, 0.1];
                for (s, t) in Split::ALL.iter().zip(target) {
                    assert!((fold.len(*s) as f64 - t * n as f64).abs() <= 1.0);
                }
            }
        }
    }

    #[test]
    fn test_chunks_tile_the_movie() {
        // with k = 5 the five test chunks cover half of the events exactly once
        // when n is a multiple of 10k, and never overlap
        let plan = make_folds(200, 5).unwrap();
        let mut hits = vec![0; 200];
        for fold in &plan.folds {
            for i in fold.indices(Split::Test) {
                hits[i] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h <= 1));
    }

    #[test]
    fn too_few_events() {
        assert!(matches!(make_folds(49, 5), Err(Error::Config(_))));
        assert!(make_folds(50, 5).is_ok());
    }

    #[test]
    fn from_folds_rejects_overlap() {
        let fold = Fold {
            train: vec![0..8],
            validation: vec![7..9],
            test: vec![9..10],
        };
        assert!(FoldPlan::from_folds(10, vec![fold]).is_err());
    }
}
