//! `radio-twin` command line: dataset simulation, training, evaluation,
//! the channel-count ablation, SDPPG feature comparison and embedding
//! export.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] radio_twin::Error),
}

impl CliError {
    /// 0 is success; 1 usage and other failures, 2 dataset integrity,
    /// 3 numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                radio_twin::Error::Integrity { .. } | radio_twin::Error::UnsupportedVersion { .. } => 2,
                radio_twin::Error::Diverged { .. } => 3,
                _ => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "radio-twin", version, about = "Radio-to-PPG digital twin experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a cohort and write it as a dataset directory (to --output).
    Simulate(Flags),
    /// Train one model on the first fold of the split.
    Train(Flags),
    /// Reconstruction metrics under pooled and LTSO splits, plus vitals.
    Eval(Flags),
    /// Channel-count ablation for both synthesis models.
    Ablate(Flags),
    /// Beat-matched SDPPG feature comparison of twin and reference PPG.
    Features(Flags),
    /// Reference and twin test segments as CSV rows.
    ExportEmbeddings(Flags),
}

/// Every flag overrides the configuration key of the same name.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// `key = value` file applied before the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub output: Option<String>,
    /// dct_mlp, unet_cascade or vitals_cnn.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub n_ch: Option<String>,
    /// pooled or ltso.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub weight_decay: Option<String>,
    #[arg(long)]
    pub lambda1: Option<String>,
    #[arg(long)]
    pub lambda2: Option<String>,
    /// exact or tanh.
    #[arg(long)]
    pub gelu: Option<String>,
    /// auto, magnitude or complex.
    #[arg(long)]
    pub input: Option<String>,
    /// joint or sequential.
    #[arg(long)]
    pub cascade: Option<String>,
    #[arg(long)]
    pub unet_width: Option<String>,
    #[arg(long)]
    pub win_s: Option<String>,
    #[arg(long)]
    pub lowpass_cutoff: Option<String>,
    #[arg(long)]
    pub lowpass_order: Option<String>,
    #[arg(long)]
    pub augment_noise: Option<String>,
    #[arg(long)]
    pub subjects: Option<String>,
    #[arg(long)]
    pub duration: Option<String>,
    /// Comma-separated channel counts for `ablate`.
    #[arg(long)]
    pub channels: Option<String>,
    /// Comma-separated seeds for `ablate`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub mlp_lr: Option<String>,
    #[arg(long)]
    pub vitals: Option<String>,
    #[arg(long)]
    pub vitals_epochs: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Embedding CSV to score instead of training (`eval`).
    #[arg(long)]
    pub predictions: Option<String>,
    /// Print relative errors as percentages.
    #[arg(long)]
    pub percent: bool,
}

impl Flags {
    fn overrides(&self) -> [(&'static str, Option<&String>); 29] {
        [
            ("dataset", self.dataset.as_ref()),
            ("output", self.output.as_ref()),
            ("model", self.model.as_ref()),
            ("n_ch", self.n_ch.as_ref()),
            ("split", self.split.as_ref()),
            ("seed", self.seed.as_ref()),
            ("epochs", self.epochs.as_ref()),
            ("batch_size", self.batch_size.as_ref()),
            ("lr", self.lr.as_ref()),
            ("weight_decay", self.weight_decay.as_ref()),
            ("lambda1", self.lambda1.as_ref()),
            ("lambda2", self.lambda2.as_ref()),
            ("gelu", self.gelu.as_ref()),
            ("input", self.input.as_ref()),
            ("cascade", self.cascade.as_ref()),
            ("unet_width", self.unet_width.as_ref()),
            ("win_s", self.win_s.as_ref()),
            ("lowpass_cutoff", self.lowpass_cutoff.as_ref()),
            ("lowpass_order", self.lowpass_order.as_ref()),
            ("augment_noise", self.augment_noise.as_ref()),
            ("subjects", self.subjects.as_ref()),
            ("duration", self.duration.as_ref()),
            ("channels", self.channels.as_ref()),
            ("seeds", self.seeds.as_ref()),
            ("mlp_lr", self.mlp_lr.as_ref()),
            ("vitals", self.vitals.as_ref()),
            ("vitals_epochs", self.vitals_epochs.as_ref()),
            ("checkpoint", self.checkpoint.as_ref()),
            ("predictions", self.predictions.as_ref()),
        ]
    }

    /// Defaults, then the config file, then the seed variable, then flags.
    pub fn resolve(&self, env_seed: Option<&str>) -> Result<ExperimentConfig, CliError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text, path)?;
        }
        if let Some(seed) = env_seed {
            cfg.set("seed", seed)
                .map_err(|e| CliError::Usage(format!("{}: {e}", config::SEED_ENV)))?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let env_seed = std::env::var(config::SEED_ENV).ok();
    match execute(&cli.command, env_seed.as_deref()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("radio-twin: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, env_seed: Option<&str>) -> Result<(), CliError> {
    let flags = match command {
        Command::Simulate(f)
        | Command::Train(f)
        | Command::Eval(f)
        | Command::Ablate(f)
        | Command::Features(f)
        | Command::ExportEmbeddings(f) => f,
    };
    let cfg = flags.resolve(env_seed)?;
    let percent = flags.percent;
    match command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Eval(_) => commands::eval(&cfg, percent),
        Command::Ablate(_) => commands::ablate(&cfg, percent),
        Command::Features(_) => commands::features(&cfg),
        Command::ExportEmbeddings(_) => commands::export_embeddings(&cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(args: &[&str]) -> Flags {
        let mut v = vec!["radio-twin", "train"];
        v.extend_from_slice(args);
        match Cli::try_parse_from(v).unwrap().command {
            Command::Train(f) => f,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_beat_env_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "seed = 3\nepochs = 9\nlr = 0.01\n").unwrap();
        let p = path.to_str().unwrap();
        let cfg = flags(&["--config", p]).resolve(None).unwrap();
        assert_eq!((cfg.seed, cfg.epochs, cfg.lr), (3, 9, 0.01));
        let cfg = flags(&["--config", p]).resolve(Some("11")).unwrap();
        assert_eq!(cfg.seed, 11);
        let cfg = flags(&["--config", p, "--seed", "5", "--epochs", "2"]).resolve(Some("11")).unwrap();
        assert_eq!((cfg.seed, cfg.epochs, cfg.lr), (5, 2, 0.01));
    }

    #[test]
    fn every_override_is_a_known_key() {
        for (key, _) in Flags::default().overrides() {
            assert!(ExperimentConfig::KEYS.contains(&key), "{key}");
            assert!(ExperimentConfig::default().to_text().contains(&format!("{key} = ")), "{key}");
        }
    }

    #[test]
    fn exit_codes() {
        use radio_twin::Error;
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        let integrity = Error::Integrity { path: "m".into(), detail: "d".into() };
        assert_eq!(CliError::from(integrity).exit_code(), 2);
        assert_eq!(CliError::from(Error::UnsupportedVersion { found: 9, supported: 1 }).exit_code(), 2);
        assert_eq!(CliError::from(Error::Diverged { epoch: 1, detail: "nan".into() }).exit_code(), 3);
        assert_eq!(CliError::from(Error::Split("odd".into())).exit_code(), 1);
    }

    #[test]
    fn bad_usage_exits_one() {
        assert_eq!(run(["radio-twin"]), 1);
        assert_eq!(run(["radio-twin", "fly"]), 1);
        assert_eq!(run(["radio-twin", "train", "--bogus", "1"]), 1);
        assert_eq!(run(["radio-twin", "train", "--lr", "abc"]), 1);
    }
}
