//! Synthesis models and the vitals estimator, with their training loop.

mod layers;
mod mlp;
mod train;
mod unet;
mod vitals;

pub use layers::{Conv, DoubleConv, Linear, MultiResBlock, ResPath};
pub use mlp::{DctMlp, MlpSpec};
pub use train::{evaluate, predict, train, EpochRecord, TrainConfig, TrainOutcome};
pub use unet::{CascadeMode, CascadeOutput, MultiResRefine, MultiResSpec, UnetApprox, UnetCascade, UnetSpec};
pub use vitals::{VitalsCnn, VitalsCnnSpec, VitalsSource, VITAL_NAMES};

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{GeluMode, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::preprocess::SegmentPair;

/// Radio representation fed to a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// Per-channel magnitude, `K = 1`.
    #[default]
    Magnitude,
    /// Real and imaginary rows, `K = 2`.
    Complex,
}

impl InputMode {
    pub fn k(self) -> usize {
        match self {
            Self::Magnitude => 1,
            Self::Complex => 2,
        }
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" | "1" => Ok(Self::Magnitude),
            "complex" | "2" => Ok(Self::Complex),
            _ => Err(Error::invalid(format!("unknown input mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    DctMlp,
    UnetCascade,
    VitalsCnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::DctMlp => "dct_mlp",
            Self::UnetCascade => "unet_cascade",
            Self::VitalsCnn => "vitals_cnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dct_mlp" => Ok(Self::DctMlp),
            "unet_cascade" => Ok(Self::UnetCascade),
            "vitals_cnn" => Ok(Self::VitalsCnn),
            _ => Err(Error::invalid(format!(
                "unknown model {s:?} (expected dct_mlp, unet_cascade or vitals_cnn)"
            ))),
        }
    }
}

/// Stacked tensors for a group of segment pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[b, 2 n_ch, L]`.
    pub radio: Tensor,
    /// `[b, n_ch, L]`.
    pub magnitude: Tensor,
    /// `[b, L]`.
    pub target: Tensor,
    /// `[b, 3]` when every pair carries vitals labels.
    pub vitals: Option<Tensor>,
}

impl Batch {
    pub fn from_pairs(pairs: &[&SegmentPair]) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let (l, rows, ch) = (first.len(), first.n_rows, first.n_channels());
        let b = pairs.len();
        let mut radio = Vec::with_capacity(b * rows * l);
        let mut magnitude = Vec::with_capacity(b * ch * l);
        let mut target = Vec::with_capacity(b * l);
        let mut vitals = Vec::with_capacity(b * 3);
        let mut all_vitals = true;
        for p in pairs {
            if p.len() != l || p.n_rows != rows || p.magnitude.len() != ch * l || p.radio.len() != rows * l {
                return Err(Error::shape("batch", format!("pair {} differs in shape from the first", p.segment_index)));
            }
            radio.extend_from_slice(&p.radio);
            magnitude.extend_from_slice(&p.magnitude);
            target.extend_from_slice(&p.ppg);
            match p.vitals {
                Some(v) => vitals.extend_from_slice(&v),
                None => all_vitals = false,
            }
        }
        Ok(Self {
            radio: Tensor::new(&[b, rows, l], radio)?,
            magnitude: Tensor::new(&[b, ch, l], magnitude)?,
            target: Tensor::new(&[b, l], target)?,
            vitals: if all_vitals { Some(Tensor::new(&[b, 3], vitals)?) } else { None },
        })
    }

    pub fn len(&self) -> usize {
        self.target.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_rows(&self, mode: InputMode) -> Result<Tensor> {
        Ok(match mode {
            InputMode::Magnitude => self.magnitude.clone(),
            InputMode::Complex => self.radio.clone(),
        })
    }
}

/// Any of the three trainable models.
#[derive(Debug, Clone)]
pub enum Model {
    DctMlp(DctMlp),
    UnetCascade(UnetCascade),
    VitalsCnn(VitalsCnn),
}

/// Architecture knobs shared by [`Model::build`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    /// Radio representation; each model has its own default.
    pub input: Option<InputMode>,
    pub gelu: GeluMode,
    /// Base width of both U-NETs.
    pub unet_width: usize,
    pub vitals_source: VitalsSource,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            input: None,
            gelu: GeluMode::Exact,
            unet_width: 16,
            vitals_source: VitalsSource::Ppg,
        }
    }
}

impl Model {
    pub fn build(kind: ModelKind, n_ch: usize, opts: &ModelOptions, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::DctMlp => {
                let mut spec = MlpSpec::new(n_ch, opts.input.unwrap_or_default());
                spec.gelu = opts.gelu;
                Self::DctMlp(DctMlp::new(spec, seed)?)
            }
            ModelKind::UnetCascade => {
                let mut spec = UnetSpec::new(n_ch);
                if let Some(mode) = opts.input {
                    spec.input = mode;
                    spec.in_channels = n_ch * mode.k();
                }
                spec.base_width = opts.unet_width;
                spec.gelu = opts.gelu;
                let refine = MultiResSpec {
                    base_width: opts.unet_width,
                    gelu: opts.gelu,
                    ..MultiResSpec::default()
                };
                Self::UnetCascade(UnetCascade::new(spec, refine, seed)?)
            }
            ModelKind::VitalsCnn => Self::VitalsCnn(VitalsCnn::new(
                VitalsCnnSpec {
                    source: opts.vitals_source,
                    gelu: opts.gelu,
                    ..VitalsCnnSpec::default()
                },
                seed,
            )?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::DctMlp(_) => ModelKind::DctMlp,
            Self::UnetCascade(_) => ModelKind::UnetCascade,
            Self::VitalsCnn(_) => ModelKind::VitalsCnn,
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Self::DctMlp(m) => &m.params,
            Self::UnetCascade(m) => &m.params,
            Self::VitalsCnn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Self::DctMlp(m) => &mut m.params,
            Self::UnetCascade(m) => &mut m.params,
            Self::VitalsCnn(m) => &mut m.params,
        }
    }
}
