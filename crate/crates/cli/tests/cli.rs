use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radio_twin::autodiff::encode_checkpoint;
use radio_twin::models::{Model, ModelKind, ModelOptions};
use sha2::{Digest, Sha256};

fn radio_twin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radio-twin"))
        .args(args)
        .env_remove("RADIO_TWIN_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = radio_twin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    radio_twin(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path → SHA-256 of every file below `root`.
fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                out.insert(rel, digest.iter().map(|b| format!("{b:02x}")).collect());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn simulate(dir: &Path, subjects: usize, duration: f64, seed: u64) -> PathBuf {
    let data = dir.join(format!("data_{subjects}_{seed}"));
    ok(&[
        "simulate",
        "--subjects",
        &subjects.to_string(),
        "--duration",
        &duration.to_string(),
        "--seed",
        &seed.to_string(),
        "--output",
        s(&data),
    ]);
    data
}

fn small_train(data: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "train",
        "--dataset",
        s(data),
        "--output",
        s(out),
        "--unet-width",
        "4",
        "--n-ch",
        "4",
        "--batch-size",
        "8",
        "--augment-noise",
        "0",
    ]
    .iter()
    .map(|a| a.to_string())
    .collect();
    args.extend(extra.iter().map(|a| a.to_string()));
    args
}

#[test]
fn simulate_writes_manifest_and_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&["simulate", "--subjects", "6", "--duration", "20", "--seed", "7", "--output", s(out)]);
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let subjects = manifest["subjects"].as_array().unwrap();
    assert_eq!(subjects.len(), 6);
    assert_eq!(subjects[0]["radio"]["frames"], 5000);
    assert_eq!(subjects[0]["ppg"]["samples"], 4000);
    assert_eq!(subjects[0]["vitals"]["records"], 20);
    let (ha, hb) = (tree_hashes(&a), tree_hashes(&b));
    assert_eq!(ha.len(), 1 + 6 * 3);
    assert_eq!(ha, hb);
}

#[test]
fn single_subject_fails_at_the_split_not_at_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 1, 30.0, 3);
    let out = dir.path().join("out");
    let args = small_train(&data, &out, &["--split", "ltso", "--epochs", "0"]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let res = radio_twin(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("split error"));
}

#[test]
fn zero_epochs_leave_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 30.0, 1);
    let out = dir.path().join("out");
    let args = small_train(&data, &out, &["--epochs", "0", "--model", "unet_cascade", "--seed", "5"]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let opts = ModelOptions {
        unet_width: 4,
        ..ModelOptions::default()
    };
    let init = Model::build(ModelKind::UnetCascade, 4, &opts, 5).unwrap();
    assert_eq!(std::fs::read(out.join("checkpoint.bin")).unwrap(), encode_checkpoint(init.params()));
    assert_eq!(std::fs::read_to_string(out.join("train_log.ndjson")).unwrap(), "");
    let info = std::fs::read_to_string(out.join("model.txt")).unwrap();
    assert!(info.contains("approx_parameters = "), "{info}");
}

#[test]
fn training_twice_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 30.0, 2);
    let runs: Vec<PathBuf> = ["r1", "r2"].iter().map(|r| dir.path().join(r)).collect();
    for out in &runs {
        let args = small_train(&data, out, &["--epochs", "2", "--model", "unet_cascade", "--lr", "1e-3"]);
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&args);
    }
    let (a, b) = (tree_hashes(&runs[0]), tree_hashes(&runs[1]));
    let names: Vec<&str> = a.keys().map(String::as_str).collect();
    assert_eq!(names, ["checkpoint.bin", "config.txt", "model.txt", "train_log.ndjson"]);
    // config.txt names the output directory, which differs by construction.
    for name in ["checkpoint.bin", "model.txt", "train_log.ndjson"] {
        assert_eq!(a[name], b[name], "{name}");
    }
    let log = std::fs::read_to_string(runs[0].join("train_log.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["epoch", "split", "loss", "mae"] {
        assert!(first.get(key).is_some(), "{key}");
    }
}

#[test]
fn config_file_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 30.0, 4);
    let first = dir.path().join("first");
    let args = small_train(&data, &first, &["--epochs", "1", "--model", "dct_mlp", "--seed", "9"]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let cfg = first.join("config.txt");
    let text = std::fs::read_to_string(&cfg).unwrap();
    assert!(text.contains("seed = 9\n") && text.contains("model = dct_mlp\n"), "{text}");

    let second = dir.path().join("second");
    ok(&["train", "--config", s(&cfg), "--output", s(&second)]);
    assert_eq!(
        std::fs::read(first.join("checkpoint.bin")).unwrap(),
        std::fs::read(second.join("checkpoint.bin")).unwrap()
    );
}

#[test]
fn seed_variable_overrides_the_file_but_not_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.cfg");
    std::fs::write(&cfg, "subjects = 2\nduration = 8\nseed = 1\n").unwrap();
    let run = |env: Option<&str>, extra: &[&str], out: &Path| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_radio-twin"));
        c.args(["simulate", "--config", s(&cfg), "--output", s(out)]).args(extra);
        match env {
            Some(v) => c.env("RADIO_TWIN_SEED", v),
            None => c.env_remove("RADIO_TWIN_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        std::fs::read(out.join("S01/ppg.bin")).unwrap()
    };
    let file_seed = run(None, &[], &dir.path().join("a"));
    let env_seed = run(Some("2"), &[], &dir.path().join("b"));
    let flag_seed = run(Some("2"), &["--seed", "1"], &dir.path().join("c"));
    assert_ne!(file_seed, env_seed);
    assert_eq!(file_seed, flag_seed);
}

#[test]
fn identical_predictions_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("emb.csv");
    let mut text = String::from("label,subject_id");
    for i in 0..450 {
        text.push_str(&format!(",v{i}"));
    }
    text.push('\n');
    let row = |label: &str, subject: &str, k: usize| {
        let vals: Vec<String> = (0..450).map(|i| format!("{}", ((i * k) as f32 * 0.01).sin())).collect();
        format!("{label},{subject},{}\n", vals.join(","))
    };
    for label in ["reference", "twin"] {
        for (k, subject) in ["S01", "S01", "S02"].iter().enumerate() {
            text.push_str(&row(label, subject, k + 1));
        }
    }
    std::fs::write(&csv, text).unwrap();
    let out = dir.path().join("eval");
    ok(&["eval", "--predictions", s(&csv), "--output", s(&out)]);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert!(lines.next().unwrap().starts_with("scheme,rmse,"));
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(fields[0], "predictions");
    let (values, count) = fields[1..].split_at(fields.len() - 2);
    assert!(values.iter().all(|v| v.parse::<f64>().unwrap() == 0.0), "{metrics}");
    assert_eq!(count, ["3"]);
    let hist = std::fs::read_to_string(out.join("histogram_predictions.csv")).unwrap();
    let total: u64 = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 3);
}

#[test]
fn damaged_datasets_exit_with_integrity_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 10.0, 5);
    let out = dir.path().join("out");
    let args = small_train(&data, &out, &["--epochs", "0"]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();

    let blob = data.join("S02/radio.bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    let res = radio_twin(&args);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("radio.bin") && err.contains("integrity"), "{err}");
    std::fs::write(&blob, &bytes).unwrap();

    let manifest = data.join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 99")).unwrap();
    let res = radio_twin(&args);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("unsupported format version 99"));

    assert_eq!(code(&["train", "--dataset", s(&dir.path().join("missing")), "--output", s(&out)]), 1);
}

#[test]
fn divergence_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 30.0, 6);
    let out = dir.path().join("out");
    let args = small_train(&data, &out, &["--epochs", "3", "--model", "dct_mlp", "--lr", "1e300"]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let res = radio_twin(&args);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("diverged"));
}

#[test]
fn usage_errors_exit_with_code_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["teleport"]), 1);
    assert_eq!(code(&["train", "--epochs", "many"]), 1);
    assert_eq!(code(&["train", "--lr", "0"]), 1);
    assert_eq!(code(&["ablate", "--channels", ""]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn checkpoint_drives_embeddings_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 30.0, 8);
    let trained = dir.path().join("trained");
    let args = small_train(&data, &trained, &["--epochs", "1", "--model", "unet_cascade", "--seed", "3"]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&args);
    let ck = trained.join("checkpoint.bin");
    let common = |cmd: &'static str, out: &Path| {
        vec![
            cmd.to_string(),
            "--dataset".into(),
            s(&data).into(),
            "--output".into(),
            s(out).into(),
            "--checkpoint".into(),
            s(&ck).into(),
            "--unet-width".into(),
            "4".into(),
            "--n-ch".into(),
            "4".into(),
            "--seed".into(),
            "3".into(),
            "--augment-noise".into(),
            "0".into(),
        ]
    };

    let emb = dir.path().join("emb");
    let args = common("export-embeddings", &emb);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let text = std::fs::read_to_string(emb.join("embeddings.csv")).unwrap();
    let info = std::fs::read_to_string(trained.join("model.txt")).unwrap();
    let valid: usize = info
        .lines()
        .find_map(|l| l.strip_prefix("valid_segments = "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * valid);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 452);

    // Scoring the exported file reproduces metrics of the same model.
    let scored = dir.path().join("scored");
    ok(&["eval", "--predictions", s(&emb.join("embeddings.csv")), "--output", s(&scored)]);
    let direct = dir.path().join("direct");
    let mut args = common("eval", &direct);
    args.extend(["--vitals".to_string(), "false".to_string()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let field = |dir: &Path, k: usize| -> f64 {
        let m = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        m.lines().nth(1).unwrap().split(',').nth(k).unwrap().parse().unwrap()
    };
    for k in 1..=6 {
        let (a, b) = (field(&scored, k), field(&direct, k));
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "column {k}: {a} vs {b}");
    }

    let feats = dir.path().join("feats");
    let args = common("features", &feats);
    let stdout = ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(stdout.contains("segments compared"), "{stdout}");
    let summary = std::fs::read_to_string(feats.join("features_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 6);
    assert!(summary.starts_with("feature,beats,median_abs_diff,mean_abs_diff"));
}

#[test]
fn ablate_writes_one_row_per_default_channel_count() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 20.0, 9);
    let out = dir.path().join("ablate");
    ok(&[
        "ablate",
        "--dataset",
        s(&data),
        "--output",
        s(&out),
        "--epochs",
        "0",
        "--seeds",
        "0",
        "--unet-width",
        "2",
        "--augment-noise",
        "0",
    ]);
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n_ch,overhead,unet_mrae_mean,unet_mrae_std,mlp_mrae_mean,mlp_mrae_std"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows[4].starts_with("10,0.15625,"), "{}", rows[4]);
    let runs = std::fs::read_to_string(out.join("ablation_runs.ndjson")).unwrap();
    assert_eq!(runs.lines().count(), 16);
}

#[test]
fn eval_reports_both_schemes_and_vitals() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), 4, 30.0, 10);
    let out = dir.path().join("eval");
    ok(&[
        "eval",
        "--dataset",
        s(&data),
        "--output",
        s(&out),
        "--n-ch",
        "4",
        "--unet-width",
        "2",
        "--epochs",
        "1",
        "--vitals-epochs",
        "1",
        "--batch-size",
        "16",
        "--augment-noise",
        "0",
        "--percent",
    ]);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let schemes: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(schemes, ["pooled", "ltso"]);
    for line in metrics.lines().skip(1) {
        let f: Vec<f64> = line.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        // rmse, mae_mean, mae_std, mae_median, mse_mean, mse_std, segments
        assert!((f[0] * f[0] - f[4]).abs() <= 1e-9 * f[4].max(1.0), "{line}");
    }
    for name in ["histogram_pooled.csv", "pointwise_histogram_ltso.csv", "eval_log.ndjson", "config.txt"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let log = std::fs::read_to_string(out.join("eval_log.ndjson")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);

    let vitals = std::fs::read_to_string(out.join("vitals.csv")).unwrap();
    let mut lines = vitals.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 14);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().any(|r| r.starts_with("raw_radio,ltso,")));
    assert!(rows.iter().any(|r| r.starts_with("twin_unet,pooled,")));
}
