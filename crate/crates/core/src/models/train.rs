use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::unet::CascadeMode;
use super::{Batch, Model};
use crate::autodiff::{Adam, Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::preprocess::SegmentPair;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub cascade: CascadeMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 1e-6,
            lambda1: 1.0,
            lambda2: 1.0,
            seed: 0,
            cascade: CascadeMode::Joint,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn last(&self, split: &str) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Joint,
    ApproxOnly,
    RefineOnly,
}

fn phase_for(cfg: &TrainConfig, epoch: usize) -> Phase {
    match cfg.cascade {
        CascadeMode::Joint => Phase::Joint,
        CascadeMode::Sequential if epoch < cfg.epochs.div_ceil(2) => Phase::ApproxOnly,
        CascadeMode::Sequential => Phase::RefineOnly,
    }
}

/// Builds the loss for one batch. Returns the loss, the prediction whose
/// MAE is reported, and that prediction's reference.
fn batch_loss(
    model: &Model,
    tape: &mut Tape<'_>,
    batch: &Batch,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<(Var, Var, Tensor)> {
    match model {
        Model::DctMlp(m) => {
            let pred = m.synthesize(tape, batch)?;
            let target = tape.input(batch.target.clone());
            Ok((tape.mae(pred, target)?, pred, batch.target.clone()))
        }
        Model::UnetCascade(m) => {
            let frozen_prefix = match phase {
                Phase::Joint => None,
                Phase::ApproxOnly => Some("refine."),
                Phase::RefineOnly => Some("approx."),
            };
            if let Some(prefix) = frozen_prefix {
                for id in m.params.ids() {
                    if m.params.name(id).starts_with(prefix) {
                        tape.freeze(id);
                    }
                }
            }
            let out = m.forward(tape, batch)?;
            let b = batch.len();
            let l = batch.target.shape()[1];
            let t3 = tape.input(batch.target.clone().reshaped(&[b, 1, l])?);
            let mut targets = Vec::with_capacity(out.levels.len());
            for k in 0..out.levels.len() {
                let pooled = if k == 0 { t3 } else { tape.avgpool(t3, 1 << k)? };
                let len = tape.shape(pooled)[2];
                targets.push(tape.reshape(pooled, &[b, len])?);
            }
            let deep = tape.deep_l1(&out.levels, &targets, cfg.lambda1, cfg.lambda2)?;
            let refine = tape.refine_l2(out.refined, targets[0], cfg.lambda1, cfg.lambda2)?;
            let loss = match phase {
                Phase::Joint => tape.sum(&[deep, refine])?,
                Phase::ApproxOnly => deep,
                Phase::RefineOnly => refine,
            };
            Ok((loss, out.refined, batch.target.clone()))
        }
        Model::VitalsCnn(m) => {
            let labels = batch
                .vitals
                .as_ref()
                .ok_or_else(|| Error::invalid("vitals training needs labelled segments"))?;
            let (mean, std) = m.label_scale();
            let z: Vec<f64> = labels
                .data()
                .chunks_exact(3)
                .flat_map(|r| (0..3).map(move |j| (r[j] - mean[j]) / std[j]))
                .collect();
            let x = m.input(tape, batch);
            let pz = m.forward_standardized(tape, x)?;
            let tz = tape.input(Tensor::new(labels.shape(), z)?);
            let loss = tape.mae(pz, tz)?;
            let pred = tape.affine_const(pz, &std, &mean)?;
            Ok((loss, pred, labels.clone()))
        }
    }
}

fn mae_of(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64
}

fn batches<'a>(pairs: &'a [SegmentPair], order: &[usize], size: usize) -> impl Iterator<Item = Vec<&'a SegmentPair>> + 'a {
    let groups: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    groups.into_iter().map(move |g| g.into_iter().map(|i| &pairs[i]).collect())
}

/// Trains `model` in place with Adam and returns the per-epoch log: one
/// `train` record (running average over the epoch's batches) and, when
/// `valid` is non-empty, one `valid` record in evaluation mode.
pub fn train(model: &mut Model, train: &[SegmentPair], valid: &[SegmentPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Split("training split is empty".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || cfg.weight_decay < 0.0 {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    if let Model::VitalsCnn(m) = model {
        let labels: Vec<[f64; 3]> = train.iter().filter_map(|p| p.vitals).collect();
        if labels.len() != train.len() {
            return Err(Error::invalid("vitals training needs labelled segments"));
        }
        m.fit_label_scale(&labels)?;
    }
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut spare = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let phase = phase_for(cfg, epoch);
        let (mut loss_sum, mut mae_sum, mut seen) = (0.0, 0.0, 0usize);
        for (bi, group) in batches(train, &order, cfg.batch_size).enumerate() {
            let batch = Batch::from_pairs(&group)?;
            let dropout_seed = cfg.seed ^ ((epoch as u64) << 32 | bi as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let grads = {
                let mut tape = Tape::new(model.params(), Mode::Train, dropout_seed);
                if let Some(g) = spare.take() {
                    tape.recycle(g);
                }
                let (loss, pred, reference) = batch_loss(model, &mut tape, &batch, cfg, phase)?;
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("loss became {lv} at batch {bi}"),
                    });
                }
                loss_sum += lv * group.len() as f64;
                mae_sum += mae_of(tape.value(pred).data(), reference.data()) * group.len() as f64;
                seen += group.len();
                tape.backward(loss)?
            };
            if !grads.max_abs().is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("non-finite gradient at batch {bi}"),
                });
            }
            opt.step(model.params_mut(), &grads);
            spare = Some(grads.into_param_grads());
        }
        records.push(EpochRecord {
            epoch,
            split: "train".into(),
            loss: loss_sum / seen as f64,
            mae: mae_sum / seen as f64,
        });
        if !valid.is_empty() {
            let (loss, mae) = evaluate_phase(model, valid, cfg, phase)?;
            records.push(EpochRecord {
                epoch,
                split: "valid".into(),
                loss,
                mae,
            });
        }
    }
    Ok(TrainOutcome {
        records,
        steps: opt.steps(),
    })
}

fn evaluate_phase(model: &Model, pairs: &[SegmentPair], cfg: &TrainConfig, phase: Phase) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    let order: Vec<usize> = (0..pairs.len()).collect();
    let (mut loss_sum, mut mae_sum) = (0.0, 0.0);
    for group in batches(pairs, &order, cfg.batch_size.max(1)) {
        let batch = Batch::from_pairs(&group)?;
        let mut tape = Tape::new(model.params(), Mode::Eval, 0);
        let (loss, pred, reference) = batch_loss(model, &mut tape, &batch, cfg, phase)?;
        loss_sum += tape.value(loss).item() * group.len() as f64;
        mae_sum += mae_of(tape.value(pred).data(), reference.data()) * group.len() as f64;
    }
    let n = pairs.len() as f64;
    Ok((loss_sum / n, mae_sum / n))
}

/// Evaluation-mode loss and MAE over `pairs`.
pub fn evaluate(model: &Model, pairs: &[SegmentPair], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let phase = match cfg.cascade {
        CascadeMode::Joint => Phase::Joint,
        CascadeMode::Sequential => Phase::RefineOnly,
    };
    evaluate_phase(model, pairs, cfg, phase)
}

/// Evaluation-mode outputs, one row per pair: the twin PPG for the
/// synthesis models, `[hr, spo2, rr]` for the vitals model (computed from
/// the signal its source selects).
pub fn predict(model: &Model, pairs: &[SegmentPair], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(pairs.len());
    let refs: Vec<&SegmentPair> = pairs.iter().collect();
    for group in refs.chunks(batch_size.max(1)) {
        let batch = Batch::from_pairs(group)?;
        let mut tape = Tape::new(model.params(), Mode::Eval, 0);
        let pred = match model {
            Model::DctMlp(m) => m.synthesize(&mut tape, &batch)?,
            Model::UnetCascade(m) => m.forward(&mut tape, &batch)?.refined,
            Model::VitalsCnn(m) => {
                let x = m.input(&mut tape, &batch);
                m.forward(&mut tape, x)?
            }
        };
        let t = tape.value(pred);
        let width = t.shape()[1];
        out.extend(t.data().chunks_exact(width).map(<[f64]>::to_vec));
    }
    Ok(out)
}
