use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::metrics::{csv_err, finish, mean_std, waveform_mrae, RelativeSummary, VitalsRow};
use super::split::{make_split, Fold, SplitKind};
use crate::dataset::SubjectRecording;
use crate::error::{Error, Result};
use crate::models::{predict, train, Model, ModelKind, ModelOptions, TrainConfig, TrainOutcome, VitalsSource};
use crate::ofdm::OfdmConfig;
use crate::preprocess::{augment, build_subject_pairs, PreprocessConfig, SegmentPair};

/// Pairs for every subject at the channel count in `cfg`, optionally
/// followed by one noisy copy of each.
pub fn cohort_pairs(subjects: &[SubjectRecording], cfg: &PreprocessConfig, augment_noise: Option<f64>, seed: u64) -> Result<Vec<SegmentPair>> {
    let mut pairs = Vec::new();
    for s in subjects {
        pairs.extend(build_subject_pairs(s, cfg)?.pairs);
    }
    match augment_noise {
        Some(var) => augment(&pairs, var, seed),
        None => Ok(pairs),
    }
}

/// A trained synthesis model and its twin PPG for the held-out originals.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub model: Model,
    pub log: TrainOutcome,
    /// Test segments that are not augmented copies.
    pub test: Vec<SegmentPair>,
    pub twins: Vec<Vec<f64>>,
}

impl FoldOutcome {
    pub fn targets(&self) -> Vec<Vec<f64>> {
        self.test.iter().map(|p| p.ppg.clone()).collect()
    }
}

/// Trains `kind` on the fold's training side and synthesizes its test side.
pub fn run_fold(
    pairs: &[SegmentPair],
    fold: &Fold,
    kind: ModelKind,
    opts: &ModelOptions,
    cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    let (train_set, test_set) = fold.select(pairs);
    let test: Vec<SegmentPair> = test_set.into_iter().filter(|p| !p.augmented).collect();
    if test.is_empty() {
        return Err(Error::Split("test side has no original segments".into()));
    }
    let n_ch = train_set.first().map_or(0, SegmentPair::n_channels);
    let mut model = Model::build(kind, n_ch, opts, cfg.seed)?;
    let log = train(&mut model, &train_set, &[], cfg)?;
    let twins = predict(&model, &test, cfg.batch_size)?;
    Ok(FoldOutcome { model, log, test, twins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub channels: Vec<usize>,
    pub seeds: Vec<u64>,
    pub split: SplitKind,
    pub preprocess: PreprocessConfig,
    pub models: ModelOptions,
    pub unet_train: TrainConfig,
    pub mlp_train: TrainConfig,
    /// Noise variance of the augmented copies, if any.
    pub augment_noise: Option<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            channels: (1..=8).map(|i| 2 * i).collect(),
            seeds: vec![0, 1, 2],
            split: SplitKind::Pooled,
            preprocess: PreprocessConfig::default(),
            models: ModelOptions::default(),
            unet_train: TrainConfig::default(),
            mlp_train: TrainConfig::default(),
            augment_noise: None,
        }
    }
}

/// Test MRAE of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub n_ch: usize,
    pub seed: u64,
    pub model: String,
    pub fold: usize,
    pub mrae: f64,
    pub train_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub n_ch: usize,
    /// Fraction of the subcarriers used for sensing.
    pub overhead: f64,
    pub unet_mrae_mean: f64,
    pub unet_mrae_std: f64,
    pub mlp_mrae_mean: f64,
    pub mlp_mrae_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<AblationRun>,
}

impl AblationTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        if self.rows.is_empty() {
            w.write_record(["n_ch", "overhead", "unet_mrae_mean", "unet_mrae_std", "mlp_mrae_mean", "mlp_mrae_std"])
                .map_err(csv_err)?;
        }
        finish(w)
    }

    /// Channel counts where the U-NET mean is below the MLP mean.
    pub fn unet_wins(&self) -> usize {
        self.rows.iter().filter(|r| r.unet_mrae_mean < r.mlp_mrae_mean).count()
    }
}

pub fn sensing_overhead(n_ch: usize) -> f64 {
    n_ch as f64 / OfdmConfig::default().n_subcarriers as f64
}

/// Trains both synthesis models for every channel count and seed and
/// reports twin-PPG MRAE on the test side. Under a subject-wise split a
/// seed's score is the mean over its folds.
pub fn ablate_channels(
    subjects: &[SubjectRecording],
    cfg: &AblationConfig,
    mut progress: impl FnMut(&AblationRun),
) -> Result<AblationTable> {
    if subjects.len() < 4 {
        return Err(Error::Split(format!("ablation needs at least 4 subjects, found {}", subjects.len())));
    }
    if cfg.channels.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::invalid("ablation needs at least one channel count and one seed"));
    }
    let mut rows = Vec::with_capacity(cfg.channels.len());
    let mut runs = Vec::new();
    for &n_ch in &cfg.channels {
        let pre = PreprocessConfig {
            n_ch,
            channels: None,
            ..cfg.preprocess.clone()
        };
        let base = cohort_pairs(subjects, &pre, None, 0)?;
        let mut scores = [Vec::new(), Vec::new()];
        for &seed in &cfg.seeds {
            let pairs = match cfg.augment_noise {
                Some(var) => augment(&base, var, seed)?,
                None => base.clone(),
            };
            let plan = make_split(&pairs, cfg.split, seed)?;
            for (slot, (kind, base)) in [(ModelKind::UnetCascade, &cfg.unet_train), (ModelKind::DctMlp, &cfg.mlp_train)]
                .into_iter()
                .enumerate()
            {
                let tc = TrainConfig { seed, ..base.clone() };
                let mut per_fold = Vec::with_capacity(plan.folds.len());
                for (fi, fold) in plan.folds.iter().enumerate() {
                    let out = run_fold(&pairs, fold, kind, &cfg.models, &tc)?;
                    let mrae = waveform_mrae(&out.twins, &out.targets())?;
                    let run = AblationRun {
                        n_ch,
                        seed,
                        model: kind.name().to_string(),
                        fold: fi,
                        mrae,
                        train_mae: out.log.last("train").map_or(f64::NAN, |r| r.mae),
                    };
                    progress(&run);
                    runs.push(run);
                    per_fold.push(mrae);
                }
                scores[slot].push(per_fold.iter().sum::<f64>() / per_fold.len() as f64);
            }
        }
        let (um, us) = mean_std(&scores[0]);
        let (mm, ms) = mean_std(&scores[1]);
        rows.push(AblationRow {
            n_ch,
            overhead: sensing_overhead(n_ch),
            unet_mrae_mean: um,
            unet_mrae_std: us,
            mlp_mrae_mean: mm,
            mlp_mrae_std: ms,
        });
    }
    Ok(AblationTable { rows, runs })
}

/// Signal fed to the vitals regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VitalsInput {
    TwinUnet,
    TwinMlp,
    RawPpg,
    RawRadio,
}

impl VitalsInput {
    pub const ALL: [Self; 4] = [Self::TwinUnet, Self::TwinMlp, Self::RawPpg, Self::RawRadio];

    pub fn name(self) -> &'static str {
        match self {
            Self::TwinUnet => "twin_unet",
            Self::TwinMlp => "twin_dct_mlp",
            Self::RawPpg => "raw_ppg",
            Self::RawRadio => "raw_radio",
        }
    }

    fn synthesis(self) -> Option<ModelKind> {
        match self {
            Self::TwinUnet => Some(ModelKind::UnetCascade),
            Self::TwinMlp => Some(ModelKind::DctMlp),
            _ => None,
        }
    }
}

impl fmt::Display for VitalsInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VitalsInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown vitals input {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitalsConfig {
    pub inputs: Vec<VitalsInput>,
    pub schemes: Vec<SplitKind>,
    pub seed: u64,
    pub models: ModelOptions,
    pub unet_train: TrainConfig,
    pub mlp_train: TrainConfig,
    pub vitals_train: TrainConfig,
}

impl Default for VitalsConfig {
    fn default() -> Self {
        Self {
            inputs: VitalsInput::ALL.to_vec(),
            schemes: vec![SplitKind::Ltso, SplitKind::Pooled],
            seed: 0,
            models: ModelOptions::default(),
            unet_train: TrainConfig::default(),
            mlp_train: TrainConfig::default(),
            vitals_train: TrainConfig::default(),
        }
    }
}

/// Replaces each pair's PPG with a synthesized one.
fn with_ppg(pairs: &[SegmentPair], ppg: Vec<Vec<f64>>) -> Vec<SegmentPair> {
    pairs
        .iter()
        .zip(ppg)
        .map(|(p, y)| SegmentPair { ppg: y, ..p.clone() })
        .collect()
}

fn labels(pairs: &[SegmentPair]) -> Result<Vec<[f64; 3]>> {
    pairs
        .iter()
        .map(|p| {
            p.vitals.ok_or_else(|| {
                Error::invalid(format!("segment {} of {:?} has no vitals labels", p.segment_index, p.subject_id))
            })
        })
        .collect()
}

#[derive(Default)]
struct Collected {
    truth: Vec<[f64; 3]>,
    pred: Vec<[f64; 3]>,
}

impl Collected {
    fn push(&mut self, truth: Vec<[f64; 3]>, pred: Vec<Vec<f64>>) {
        self.truth.extend(truth);
        self.pred.extend(pred.into_iter().map(|r| [r[0], r[1], r[2]]));
    }

    fn summaries(&self) -> Result<[RelativeSummary; 3]> {
        let col = |v: &[[f64; 3]], j: usize| v.iter().map(|r| r[j]).collect::<Vec<_>>();
        Ok([
            RelativeSummary::from_predictions(&col(&self.truth, 0), &col(&self.pred, 0))?,
            RelativeSummary::from_predictions(&col(&self.truth, 1), &col(&self.pred, 1))?,
            RelativeSummary::from_predictions(&col(&self.truth, 2), &col(&self.pred, 2))?,
        ])
    }
}

/// Vitals MRAE per input signal and split scheme. Twin inputs train the
/// synthesis model on the fold's training side first, then the regressor
/// on twin PPG of that same side. Train and test predictions are pooled
/// over folds.
pub fn vitals_assessment(pairs: &[SegmentPair], cfg: &VitalsConfig, mut progress: impl FnMut(&str)) -> Result<Vec<VitalsRow>> {
    labels(pairs)?;
    let n_ch = pairs.first().map_or(0, SegmentPair::n_channels);
    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        let plan = make_split(pairs, scheme, cfg.seed)?;
        for &input in &cfg.inputs {
            let (mut train_c, mut valid_c) = (Collected::default(), Collected::default());
            for (fi, fold) in plan.folds.iter().enumerate() {
                let (tr, te) = fold.select(pairs);
                let te: Vec<SegmentPair> = te.into_iter().filter(|p| !p.augmented).collect();
                let (tr, te) = match input.synthesis() {
                    Some(kind) => {
                        let base = if kind == ModelKind::UnetCascade { &cfg.unet_train } else { &cfg.mlp_train };
                        let mut synth = Model::build(kind, n_ch, &cfg.models, base.seed)?;
                        train(&mut synth, &tr, &[], base)?;
                        let tr_twin = predict(&synth, &tr, base.batch_size)?;
                        let te_twin = predict(&synth, &te, base.batch_size)?;
                        (with_ppg(&tr, tr_twin), with_ppg(&te, te_twin))
                    }
                    None => (tr, te),
                };
                let source = match input {
                    VitalsInput::RawRadio => VitalsSource::RadioMagnitude { n_ch },
                    _ => VitalsSource::Ppg,
                };
                let opts = ModelOptions {
                    vitals_source: source,
                    ..cfg.models
                };
                let mut reg = Model::build(ModelKind::VitalsCnn, n_ch, &opts, cfg.vitals_train.seed)?;
                train(&mut reg, &tr, &[], &cfg.vitals_train)?;
                let bs = cfg.vitals_train.batch_size;
                train_c.push(labels(&tr)?, predict(&reg, &tr, bs)?);
                valid_c.push(labels(&te)?, predict(&reg, &te, bs)?);
                progress(&format!("{scheme} fold {fi} {input} done"));
            }
            rows.push(VitalsRow {
                input: input.name().to_string(),
                scheme: scheme.name().to_string(),
                train: train_c.summaries()?,
                valid: valid_c.summaries()?,
            });
        }
    }
    Ok(rows)
}
