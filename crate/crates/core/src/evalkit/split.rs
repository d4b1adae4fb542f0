use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::SegmentPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitKind {
    /// Segment-level shuffle, 80% train.
    #[default]
    Pooled,
    /// Leave two subjects out per fold.
    Ltso,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pooled => "pooled",
            Self::Ltso => "ltso",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" | "pool" => Ok(Self::Pooled),
            "ltso" => Ok(Self::Ltso),
            _ => Err(Error::invalid(format!("unknown split {s:?} (expected pooled or ltso)"))),
        }
    }
}

/// Indices into the pair list for one train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    /// Held-out subjects; empty for a pooled split.
    pub test_subjects: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    pub fn select(&self, pairs: &[SegmentPair]) -> (Vec<SegmentPair>, Vec<SegmentPair>) {
        let pick = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect();
        (pick(&self.train), pick(&self.test))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub kind: SplitKind,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

const TRAIN_FRACTION: f64 = 0.8;

/// Maps each augmented pair to the index of its original.
fn originals(pairs: &[SegmentPair]) -> Result<Vec<Option<usize>>> {
    let mut by_key: HashMap<(&str, usize), usize> = HashMap::new();
    for (i, p) in pairs.iter().enumerate().filter(|(_, p)| !p.augmented) {
        if by_key.insert((p.subject_id.as_str(), p.segment_index), i).is_some() {
            return Err(Error::Split(format!(
                "segment {} of subject {:?} appears twice",
                p.segment_index, p.subject_id
            )));
        }
    }
    pairs
        .iter()
        .map(|p| {
            if !p.augmented {
                return Ok(None);
            }
            by_key
                .get(&(p.subject_id.as_str(), p.segment_index))
                .copied()
                .map(Some)
                .ok_or_else(|| {
                    Error::Split(format!(
                        "augmented segment {} of subject {:?} has no original",
                        p.segment_index, p.subject_id
                    ))
                })
        })
        .collect()
}

/// Subject ids in order of first appearance.
pub fn subject_ids(pairs: &[SegmentPair]) -> Vec<String> {
    let mut seen = Vec::<String>::new();
    for p in pairs {
        if !seen.contains(&p.subject_id) {
            seen.push(p.subject_id.clone());
        }
    }
    seen
}

/// Partitions `pairs` for evaluation. Augmented copies land on the same
/// side as the segment they were derived from.
pub fn make_split(pairs: &[SegmentPair], kind: SplitKind, seed: u64) -> Result<SplitPlan> {
    if pairs.is_empty() {
        return Err(Error::Split("no segments to split".into()));
    }
    let origin = originals(pairs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = match kind {
        SplitKind::Pooled => {
            let mut base: Vec<usize> = (0..pairs.len()).filter(|&i| origin[i].is_none()).collect();
            base.shuffle(&mut rng);
            let n_train = (base.len() as f64 * TRAIN_FRACTION).round() as usize;
            let mut is_train = vec![false; pairs.len()];
            for &i in &base[..n_train] {
                is_train[i] = true;
            }
            for (i, o) in origin.iter().enumerate() {
                if let Some(o) = o {
                    is_train[i] = is_train[*o];
                }
            }
            let mut train: Vec<usize> = base[..n_train].to_vec();
            let mut test: Vec<usize> = base[n_train..].to_vec();
            for i in (0..pairs.len()).filter(|&i| origin[i].is_some()) {
                if is_train[i] {
                    train.push(i);
                } else {
                    test.push(i);
                }
            }
            vec![Fold {
                test_subjects: Vec::new(),
                train,
                test,
            }]
        }
        SplitKind::Ltso => {
            let mut subjects = subject_ids(pairs);
            if subjects.len() < 4 {
                return Err(Error::Split(format!(
                    "leave-two-subjects-out needs at least 4 subjects, found {}",
                    subjects.len()
                )));
            }
            if subjects.len() % 2 != 0 {
                return Err(Error::Pairing(format!(
                    "leave-two-subjects-out needs an even subject count, found {}",
                    subjects.len()
                )));
            }
            subjects.shuffle(&mut rng);
            subjects
                .chunks(2)
                .map(|held| {
                    let (test, train): (Vec<usize>, Vec<usize>) =
                        (0..pairs.len()).partition(|&i| held.contains(&pairs[i].subject_id));
                    Fold {
                        test_subjects: held.to_vec(),
                        train,
                        test,
                    }
                })
                .collect()
        }
    };
    Ok(SplitPlan { kind, seed, folds })
}
