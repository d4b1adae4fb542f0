use std::path::{Path, PathBuf};

use radio_twin::autodiff::{load_checkpoint, restore_into, save_checkpoint};
use radio_twin::dataset::{load_dataset, write_atomic, write_dataset, Dataset};
use radio_twin::evalkit::{
    ablate_channels, cohort_pairs, export_embeddings as write_embeddings, feature_agreement, make_split,
    metrics_table_csv, read_embeddings, reconstruction_metrics, run_fold, vitals_assessment, vitals_table_csv,
    AblationConfig, MetricsReport, SplitKind, VitalsConfig, VitalsInput, VitalsRow, FEATURE_NAMES,
};
use radio_twin::models::{predict, train as fit, Model, ModelKind};
use radio_twin::physio::{simulate_subject, CohortConfig};
use radio_twin::preprocess::SegmentPair;
use radio_twin::Error;

use crate::config::ExperimentConfig;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, bytes.as_ref())?;
    Ok(path)
}

fn ndjson<T: serde::Serialize>(records: &[T]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).map_err(Error::from)?);
        s.push('\n');
    }
    Ok(s)
}

fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
    Ok(load_dataset(&cfg.dataset)?)
}

fn pairs(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<SegmentPair>> {
    Ok(cohort_pairs(&ds.subjects, &cfg.preprocess(), cfg.augment(), cfg.seed)?)
}

fn synthesis_kind(cfg: &ExperimentConfig) -> Result<ModelKind> {
    match cfg.model {
        ModelKind::VitalsCnn => Err(CliError::Usage(
            "this command synthesizes PPG; use --model unet_cascade or dct_mlp".into(),
        )),
        k => Ok(k),
    }
}

fn restore(cfg: &ExperimentConfig, kind: ModelKind, n_ch: usize, path: &Path) -> Result<Model> {
    let mut model = Model::build(kind, n_ch, &cfg.model_options(), cfg.seed)?;
    restore_into(model.params_mut(), &load_checkpoint(path)?)?;
    Ok(model)
}

/// Held-out originals of the first fold and their twin PPG, from the
/// checkpoint when one is given and from a fresh training run otherwise.
fn twins(cfg: &ExperimentConfig, pairs: &[SegmentPair]) -> Result<(Vec<SegmentPair>, Vec<Vec<f64>>)> {
    let kind = synthesis_kind(cfg)?;
    let plan = make_split(pairs, cfg.split, cfg.seed)?;
    let fold = &plan.folds[0];
    match &cfg.checkpoint {
        Some(path) => {
            let (_, test) = fold.select(pairs);
            let test: Vec<SegmentPair> = test.into_iter().filter(|p| !p.augmented).collect();
            let n_ch = test.first().map_or(0, SegmentPair::n_channels);
            let model = restore(cfg, kind, n_ch, path)?;
            let twins = predict(&model, &test, cfg.batch_size)?;
            Ok((test, twins))
        }
        None => {
            let out = run_fold(pairs, fold, kind, &cfg.model_options(), &cfg.train_config_for(kind))?;
            Ok((out.test, out.twins))
        }
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<()> {
    let cohort = CohortConfig::default();
    let subjects = (0..cfg.subjects)
        .map(|i| simulate_subject(i, cfg.duration, cfg.seed, &cohort))
        .collect::<radio_twin::Result<Vec<_>>>()?;
    let manifest = write_dataset(&cfg.output, &subjects)?;
    println!(
        "wrote {} subjects ({} s each) to {}",
        manifest.subjects.len(),
        cfg.duration,
        cfg.output.display()
    );
    Ok(())
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let ds = load(cfg)?;
    let pairs = pairs(cfg, &ds)?;
    let plan = make_split(&pairs, cfg.split, cfg.seed)?;
    let fold = &plan.folds[0];
    let (train_set, test_set) = fold.select(&pairs);
    let valid: Vec<SegmentPair> = test_set.into_iter().filter(|p| !p.augmented).collect();
    let mut model = Model::build(cfg.model, cfg.n_ch, &cfg.model_options(), cfg.seed)?;

    let mut info = format!("model = {}\nn_ch = {}\nparameters = {}\n", cfg.model, cfg.n_ch, model.params().numel());
    if let Model::UnetCascade(m) = &model {
        info.push_str(&format!(
            "approx_parameters = {}\nrefine_parameters = {}\n",
            m.approx_param_count(),
            m.refine_param_count()
        ));
    }
    info.push_str(&format!(
        "train_segments = {}\nvalid_segments = {}\ntest_subjects = {}\n",
        train_set.len(),
        valid.len(),
        fold.test_subjects.join(",")
    ));

    let out = &cfg.output;
    write(out, "config.txt", cfg.to_text())?;
    write(out, "model.txt", &info)?;
    let log = fit(&mut model, &train_set, &valid, &cfg.train_config())?;
    write(out, "train_log.ndjson", ndjson(&log.records)?)?;
    save_checkpoint(&out.join("checkpoint.bin"), model.params())?;
    print!("{info}");
    for split in ["train", "valid"] {
        if let Some(r) = log.last(split) {
            println!("{split}: epoch {} loss {:.6} mae {:.6}", r.epoch, r.loss, r.mae);
        }
    }
    Ok(())
}

fn scale_vitals(rows: &mut [VitalsRow], factor: f64) {
    for r in rows {
        for s in r.train.iter_mut().chain(r.valid.iter_mut()) {
            s.mrae *= factor;
            s.std *= factor;
        }
    }
}

fn write_reports(out: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    write(out, "metrics.csv", metrics_table_csv(rows)?)?;
    for (label, r) in rows {
        write(out, &format!("histogram_{label}.csv"), r.histogram.to_csv()?)?;
        write(out, &format!("pointwise_histogram_{label}.csv"), r.pointwise_histogram.to_csv()?)?;
        println!(
            "{label}: rmse {:.6} mae {:.6} ± {:.6} (median {:.6}) over {} segments",
            r.rmse,
            r.mae_mean,
            r.mae_std,
            r.mae_median,
            r.per_segment.len()
        );
    }
    Ok(())
}

/// Scores an embedding CSV: the reference rows against the twin rows in
/// file order.
fn eval_predictions(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let rows = read_embeddings(file)?;
    let (reference, twin): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.label == "reference");
    if let Some(bad) = twin.iter().find(|r| r.label != "twin") {
        return Err(Error::InvalidInput(format!("unknown embedding label {:?}", bad.label)).into());
    }
    if reference.len() != twin.len() || reference.iter().zip(&twin).any(|(a, b)| a.subject_id != b.subject_id) {
        return Err(Error::InvalidInput(format!(
            "{} reference rows do not pair with {} twin rows",
            reference.len(),
            twin.len()
        ))
        .into());
    }
    let target: Vec<Vec<f64>> = reference.into_iter().map(|r| r.values).collect();
    let pred: Vec<Vec<f64>> = twin.into_iter().map(|r| r.values).collect();
    let report = reconstruction_metrics(&pred, &target)?;
    write(&cfg.output, "config.txt", cfg.to_text())?;
    write_reports(&cfg.output, &[("predictions".to_string(), report)])
}

pub fn eval(cfg: &ExperimentConfig, percent: bool) -> Result<()> {
    if let Some(path) = &cfg.predictions {
        return eval_predictions(cfg, path);
    }
    let kind = synthesis_kind(cfg)?;
    let ds = load(cfg)?;
    let pairs = pairs(cfg, &ds)?;
    let out = &cfg.output;
    write(out, "config.txt", cfg.to_text())?;

    let mut reports = Vec::new();
    let mut log = Vec::new();
    if cfg.checkpoint.is_some() {
        let (test, twins) = twins(cfg, &pairs)?;
        let targets: Vec<Vec<f64>> = test.iter().map(|p| p.ppg.clone()).collect();
        reports.push((cfg.split.name().to_string(), reconstruction_metrics(&twins, &targets)?));
    } else {
        let tc = cfg.train_config_for(kind);
        for scheme in [SplitKind::Pooled, SplitKind::Ltso] {
            let plan = make_split(&pairs, scheme, cfg.seed)?;
            let (mut twins, mut targets) = (Vec::new(), Vec::new());
            for (i, fold) in plan.folds.iter().enumerate() {
                let o = run_fold(&pairs, fold, kind, &cfg.model_options(), &tc)?;
                let fold_report = reconstruction_metrics(&o.twins, &o.targets())?;
                let rec = serde_json::json!({
                    "scheme": scheme.name(),
                    "fold": i,
                    "test_subjects": fold.test_subjects,
                    "segments": o.test.len(),
                    "train_mae": o.log.last("train").map(|r| r.mae),
                    "test_mae": fold_report.mae_mean,
                    "test_rmse": fold_report.rmse,
                });
                eprintln!("{rec}");
                log.push(rec);
                targets.extend(o.targets());
                twins.extend(o.twins);
            }
            reports.push((scheme.name().to_string(), reconstruction_metrics(&twins, &targets)?));
        }
        write(out, "eval_log.ndjson", ndjson(&log)?)?;
    }
    write_reports(out, &reports)?;

    if cfg.vitals && cfg.checkpoint.is_none() {
        let vcfg = VitalsConfig {
            inputs: VitalsInput::ALL.to_vec(),
            schemes: vec![SplitKind::Ltso, SplitKind::Pooled],
            seed: cfg.seed,
            models: cfg.model_options(),
            unet_train: cfg.train_config_for(ModelKind::UnetCascade),
            mlp_train: cfg.train_config_for(ModelKind::DctMlp),
            vitals_train: cfg.train_config_for(ModelKind::VitalsCnn),
        };
        let mut rows = vitals_assessment(&pairs, &vcfg, |msg| eprintln!("{msg}"))?;
        if percent {
            scale_vitals(&mut rows, 100.0);
        }
        write(out, "vitals.csv", vitals_table_csv(&rows)?)?;
        let unit = if percent { "%" } else { "" };
        for r in &rows {
            println!(
                "vitals {} {}: hr {:.4}{unit} spo2 {:.4}{unit} rr {:.4}{unit}",
                r.input, r.scheme, r.valid[0].mrae, r.valid[1].mrae, r.valid[2].mrae
            );
        }
    }
    Ok(())
}

pub fn ablate(cfg: &ExperimentConfig, percent: bool) -> Result<()> {
    let ds = load(cfg)?;
    let acfg = AblationConfig {
        channels: cfg.channels.clone(),
        seeds: cfg.seeds.clone(),
        split: cfg.split,
        preprocess: cfg.preprocess(),
        models: cfg.model_options(),
        unet_train: cfg.train_config_for(ModelKind::UnetCascade),
        mlp_train: cfg.train_config_for(ModelKind::DctMlp),
        augment_noise: cfg.augment(),
    };
    let out = &cfg.output;
    write(out, "config.txt", cfg.to_text())?;
    let mut table = ablate_channels(&ds.subjects, &acfg, |run| {
        eprintln!("n_ch {} seed {} {} fold {}: mrae {:.4}", run.n_ch, run.seed, run.model, run.fold, run.mrae);
    })?;
    write(out, "ablation_runs.ndjson", ndjson(&table.runs)?)?;
    if percent {
        for r in &mut table.rows {
            for v in [&mut r.unet_mrae_mean, &mut r.unet_mrae_std, &mut r.mlp_mrae_mean, &mut r.mlp_mrae_std] {
                *v *= 100.0;
            }
        }
    }
    write(out, "ablation.csv", table.to_csv()?)?;
    for r in &table.rows {
        println!(
            "n_ch {:>2} overhead {:.5}: unet {:.4} ± {:.4}  dct_mlp {:.4} ± {:.4}",
            r.n_ch, r.overhead, r.unet_mrae_mean, r.unet_mrae_std, r.mlp_mrae_mean, r.mlp_mrae_std
        );
    }
    println!("unet below dct_mlp for {} of {} channel counts", table.unet_wins(), table.rows.len());
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn features(cfg: &ExperimentConfig) -> Result<()> {
    let ds = load(cfg)?;
    let pairs = pairs(cfg, &ds)?;
    let (test, twins) = twins(cfg, &pairs)?;
    let rate = cfg.preprocess().seg_len as f64 / cfg.win_s;
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));

    let mut beats = csv::Writer::from_writer(Vec::new());
    beats
        .write_record(["subject_id", "segment_index", "beat", "feature", "reference", "twin", "abs_diff", "rel_diff"])
        .map_err(csv_err)?;
    let mut per_feature: [Vec<f64>; 5] = Default::default();
    let (mut compared, mut skipped) = (0usize, 0usize);
    for (p, twin) in test.iter().zip(&twins) {
        let agreement = match feature_agreement(&p.ppg, twin, rate) {
            Ok(a) => a,
            Err(Error::Pairing(msg)) => {
                eprintln!("{} segment {}: skipped ({msg})", p.subject_id, p.segment_index);
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        compared += 1;
        for (b, m) in agreement.matched.iter().enumerate() {
            for (k, name) in FEATURE_NAMES.iter().enumerate() {
                per_feature[k].push(m.abs_diff[k]);
                beats
                    .write_record([
                        p.subject_id.clone(),
                        p.segment_index.to_string(),
                        b.to_string(),
                        name.to_string(),
                        m.reference[k].to_string(),
                        m.twin[k].to_string(),
                        m.abs_diff[k].to_string(),
                        m.rel_diff[k].to_string(),
                    ])
                    .map_err(csv_err)?;
            }
        }
    }
    let beats = beats.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;

    let mut summary = csv::Writer::from_writer(Vec::new());
    summary
        .write_record(["feature", "beats", "median_abs_diff", "mean_abs_diff"])
        .map_err(csv_err)?;
    for (name, v) in FEATURE_NAMES.iter().zip(&per_feature) {
        let mean = if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
        summary
            .write_record([name.to_string(), v.len().to_string(), median(v.clone()).to_string(), mean.to_string()])
            .map_err(csv_err)?;
        println!("{name}: median |diff| {:.6} over {} beats", median(v.clone()), v.len());
    }
    let summary = summary.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;

    let out = &cfg.output;
    write(out, "config.txt", cfg.to_text())?;
    write(out, "features.csv", beats)?;
    write(out, "features_summary.csv", summary)?;
    println!("{compared} segments compared, {skipped} skipped");
    Ok(())
}

pub fn export_embeddings(cfg: &ExperimentConfig) -> Result<()> {
    let ds = load(cfg)?;
    let pairs = pairs(cfg, &ds)?;
    let (test, twins) = twins(cfg, &pairs)?;
    let mut buf = Vec::new();
    write_embeddings(&mut buf, &test, &twins)?;
    write(&cfg.output, "config.txt", cfg.to_text())?;
    let path = write(&cfg.output, "embeddings.csv", buf)?;
    println!("{} reference and {} twin rows written to {}", test.len(), twins.len(), path.display());
    Ok(())
}
