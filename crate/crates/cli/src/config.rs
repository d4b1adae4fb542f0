//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use radio_twin::autodiff::GeluMode;
use radio_twin::evalkit::SplitKind;
use radio_twin::models::{CascadeMode, InputMode, ModelKind, ModelOptions, TrainConfig};
use radio_twin::preprocess::PreprocessConfig;

use crate::CliError;

pub const SEED_ENV: &str = "RADIO_TWIN_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    pub model: ModelKind,
    pub n_ch: usize,
    pub split: SplitKind,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub gelu: GeluMode,
    /// `None` picks each model's own representation.
    pub input: Option<InputMode>,
    pub cascade: CascadeMode,
    pub unet_width: usize,
    pub win_s: f64,
    pub lowpass_cutoff: f64,
    pub lowpass_order: usize,
    /// Variance of the noisy copies; zero disables augmentation.
    pub augment_noise: f64,
    pub subjects: usize,
    pub duration: f64,
    pub channels: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Learning rate used for the DCT+MLP in commands that train both models.
    pub mlp_lr: f64,
    pub vitals: bool,
    pub vitals_epochs: usize,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let pre = PreprocessConfig::default();
        let train = TrainConfig::default();
        Self {
            dataset: PathBuf::from("data"),
            output: PathBuf::from("out"),
            model: ModelKind::UnetCascade,
            n_ch: 10,
            split: SplitKind::Pooled,
            seed: 0,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            weight_decay: train.weight_decay,
            lambda1: train.lambda1,
            lambda2: train.lambda2,
            gelu: GeluMode::Exact,
            input: None,
            cascade: CascadeMode::Joint,
            unet_width: ModelOptions::default().unet_width,
            win_s: pre.win_s,
            lowpass_cutoff: pre.lowpass_cutoff,
            lowpass_order: pre.lowpass_order,
            augment_noise: 0.01,
            subjects: 6,
            duration: 120.0,
            channels: (1..=8).map(|i| 2 * i).collect(),
            seeds: vec![0, 1, 2],
            mlp_lr: train.lr,
            vitals: true,
            vitals_epochs: train.epochs,
            checkpoint: None,
            predictions: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse {value:?}: {e}")))
}

fn positive<T: PartialOrd + Default + std::fmt::Display>(key: &str, v: T) -> Result<T, CliError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{key} must be positive, got {v}")))
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 29] = [
        "dataset",
        "output",
        "model",
        "n_ch",
        "split",
        "seed",
        "epochs",
        "batch_size",
        "lr",
        "weight_decay",
        "lambda1",
        "lambda2",
        "gelu",
        "input",
        "cascade",
        "unet_width",
        "win_s",
        "lowpass_cutoff",
        "lowpass_order",
        "augment_noise",
        "subjects",
        "duration",
        "channels",
        "seeds",
        "mlp_lr",
        "vitals",
        "vitals_epochs",
        "checkpoint",
        "predictions",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = PathBuf::from(v),
            "output" => self.output = PathBuf::from(v),
            "model" => self.model = parse(key, v)?,
            "n_ch" => self.n_ch = positive(key, parse(key, v)?)?,
            "split" => self.split = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = positive(key, parse(key, v)?)?,
            "lr" => self.lr = positive(key, parse(key, v)?)?,
            "weight_decay" => {
                let wd: f64 = parse(key, v)?;
                if !(wd >= 0.0) {
                    return Err(CliError::Usage(format!("weight_decay must be >= 0, got {wd}")));
                }
                self.weight_decay = wd;
            }
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "gelu" => self.gelu = parse(key, v)?,
            "input" => self.input = if v == "auto" { None } else { Some(parse(key, v)?) },
            "cascade" => self.cascade = parse(key, v)?,
            "unet_width" => self.unet_width = positive(key, parse(key, v)?)?,
            "win_s" => self.win_s = positive(key, parse(key, v)?)?,
            "lowpass_cutoff" => self.lowpass_cutoff = positive(key, parse(key, v)?)?,
            "lowpass_order" => self.lowpass_order = positive(key, parse(key, v)?)?,
            "augment_noise" => {
                let a: f64 = parse(key, v)?;
                if !(a >= 0.0) {
                    return Err(CliError::Usage(format!("augment_noise must be >= 0, got {a}")));
                }
                self.augment_noise = a;
            }
            "subjects" => self.subjects = positive(key, parse(key, v)?)?,
            "duration" => self.duration = positive(key, parse(key, v)?)?,
            "channels" => {
                let c: Vec<usize> = list(key, v)?;
                if c.is_empty() || c.contains(&0) {
                    return Err(CliError::Usage("channels must list positive counts".into()));
                }
                self.channels = c;
            }
            "seeds" => {
                let s: Vec<u64> = list(key, v)?;
                if s.is_empty() {
                    return Err(CliError::Usage("seeds must not be empty".into()));
                }
                self.seeds = s;
            }
            "mlp_lr" => self.mlp_lr = positive(key, parse(key, v)?)?,
            "vitals" => self.vitals = parse(key, v)?,
            "vitals_epochs" => self.vitals_epochs = parse(key, v)?,
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "predictions" => self.predictions = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Err(CliError::Usage(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are
    /// skipped; dashes in keys are accepted as underscores.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected key = value, got {raw:?}", origin.display(), no + 1))
            })?;
            let key = k.trim().replace('-', "_");
            if key == "config" {
                return Err(CliError::Usage(format!("{}:{}: config files cannot include others", origin.display(), no + 1)));
            }
            self.set(&key, v)
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", origin.display(), no + 1)))?;
        }
        Ok(())
    }

    /// Resolved configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let input = self.input.map_or("auto", |m| match m {
            InputMode::Magnitude => "magnitude",
            InputMode::Complex => "complex",
        });
        let gelu = match self.gelu {
            GeluMode::Exact => "exact",
            GeluMode::TanhApprox => "tanh",
        };
        let cascade = match self.cascade {
            CascadeMode::Joint => "joint",
            CascadeMode::Sequential => "sequential",
        };
        let pairs: [(&str, String); 29] = [
            ("dataset", self.dataset.display().to_string()),
            ("output", self.output.display().to_string()),
            ("model", self.model.to_string()),
            ("n_ch", self.n_ch.to_string()),
            ("split", self.split.to_string()),
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("gelu", gelu.into()),
            ("input", input.into()),
            ("cascade", cascade.into()),
            ("unet_width", self.unet_width.to_string()),
            ("win_s", self.win_s.to_string()),
            ("lowpass_cutoff", self.lowpass_cutoff.to_string()),
            ("lowpass_order", self.lowpass_order.to_string()),
            ("augment_noise", self.augment_noise.to_string()),
            ("subjects", self.subjects.to_string()),
            ("duration", self.duration.to_string()),
            ("channels", join(&self.channels)),
            ("seeds", join(&self.seeds)),
            ("mlp_lr", self.mlp_lr.to_string()),
            ("vitals", self.vitals.to_string()),
            ("vitals_epochs", self.vitals_epochs.to_string()),
            ("checkpoint", opt(&self.checkpoint)),
            ("predictions", opt(&self.predictions)),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            seed: self.seed,
            cascade: self.cascade,
        }
    }

    /// Training settings for `kind` when a command trains several models.
    pub fn train_config_for(&self, kind: ModelKind) -> TrainConfig {
        let mut tc = self.train_config();
        match kind {
            ModelKind::DctMlp => tc.lr = self.mlp_lr,
            ModelKind::VitalsCnn => tc.epochs = self.vitals_epochs,
            ModelKind::UnetCascade => {}
        }
        tc
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            input: self.input,
            gelu: self.gelu,
            unet_width: self.unet_width,
            ..ModelOptions::default()
        }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            n_ch: self.n_ch,
            win_s: self.win_s,
            lowpass_cutoff: self.lowpass_cutoff,
            lowpass_order: self.lowpass_order,
            ..PreprocessConfig::default()
        }
    }

    pub fn augment(&self) -> Option<f64> {
        (self.augment_noise > 0.0).then_some(self.augment_noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_published_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.weight_decay, 1e-6);
        assert_eq!((c.lambda1, c.lambda2), (1.0, 1.0));
        assert_eq!(c.win_s, 2.5);
        assert_eq!((c.lowpass_cutoff, c.lowpass_order), (4.0, 12));
        assert_eq!(c.augment_noise, 0.01);
        assert_eq!(c.n_ch, 10);
        assert_eq!(c.channels, vec![2, 4, 6, 8, 10, 12, 14, 16]);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("model", "dct_mlp").unwrap();
        c.set("channels", "2, 4,8").unwrap();
        c.set("input", "complex").unwrap();
        c.set("checkpoint", "ck.bin").unwrap();
        c.set("gelu", "tanh").unwrap();
        let mut d = ExperimentConfig::default();
        d.apply_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn file_syntax() {
        let mut c = ExperimentConfig::default();
        c.apply_text("# comment\n\nepochs = 3\nbatch-size=8 # trailing\n", Path::new("f")).unwrap();
        assert_eq!((c.epochs, c.batch_size), (3, 8));
        assert!(c.apply_text("epochs 3\n", Path::new("f")).is_err());
        assert!(c.apply_text("nonsense = 1\n", Path::new("f")).is_err());
        assert!(c.apply_text("config = other\n", Path::new("f")).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = ExperimentConfig::default();
        assert!(c.set("lr", "0").is_err());
        assert!(c.set("lr", "-1").is_err());
        assert!(c.set("batch_size", "0").is_err());
        assert!(c.set("model", "cnn").is_err());
        assert!(c.set("split", "kfold").is_err());
        assert!(c.set("channels", "2,0").is_err());
        assert!(c.set("weight_decay", "-1e-3").is_err());
    }
}
