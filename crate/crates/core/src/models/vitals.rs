use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, Linear};
use super::Batch;
use crate::autodiff::{GeluMode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Signal the vitals regressor reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VitalsSource {
    /// One PPG row (reference or twin).
    #[default]
    Ppg,
    /// Per-channel radio magnitude rows.
    RadioMagnitude { n_ch: usize },
}

impl VitalsSource {
    pub fn channels(self) -> usize {
        match self {
            Self::Ppg => 1,
            Self::RadioMagnitude { n_ch } => n_ch,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitalsCnnSpec {
    pub source: VitalsSource,
    pub seg_len: usize,
    pub stages: usize,
    pub base_width: usize,
    pub kernel: usize,
    pub gelu: GeluMode,
}

impl Default for VitalsCnnSpec {
    fn default() -> Self {
        Self {
            source: VitalsSource::Ppg,
            seg_len: 450,
            stages: 4,
            base_width: 16,
            kernel: 3,
            gelu: GeluMode::Exact,
        }
    }
}

#[derive(Debug, Clone)]
struct ResStage {
    c1: Conv,
    c2: Conv,
    shortcut: Option<Conv>,
}

/// Residual 1D CNN regressing heart rate, SpO2 and breathing rate from a
/// PPG segment.
///
/// The head predicts standardized values that are mapped back to natural
/// units with per-label mean and spread stored alongside the weights.
#[derive(Debug, Clone)]
pub struct VitalsCnn {
    pub spec: VitalsCnnSpec,
    pub params: ParamStore,
    stem: Conv,
    stages: Vec<ResStage>,
    pub head: Linear,
    pub label_mean: ParamId,
    pub label_std: ParamId,
}

pub const VITAL_NAMES: [&str; 3] = ["hr", "spo2", "rr"];

impl VitalsCnn {
    pub fn new(spec: VitalsCnnSpec, seed: u64) -> Result<Self> {
        if spec.stages == 0 || spec.base_width == 0 || spec.seg_len >> (spec.stages - 1) == 0 || spec.source.channels() == 0 {
            return Err(Error::invalid("vitals CNN needs at least one stage and a positive width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let k = spec.kernel;
        let stem = Conv::new(&mut params, "vitals.stem", spec.source.channels(), spec.base_width, k, &mut rng);
        let mut prev = spec.base_width;
        let mut stages = Vec::new();
        for i in 0..spec.stages {
            let w = spec.base_width << i;
            stages.push(ResStage {
                c1: Conv::new(&mut params, &format!("vitals.s{i}.c1"), prev, w, k, &mut rng),
                c2: Conv::new(&mut params, &format!("vitals.s{i}.c2"), w, w, k, &mut rng),
                shortcut: (prev != w).then(|| Conv::new(&mut params, &format!("vitals.s{i}.sc"), prev, w, 1, &mut rng)),
            });
            prev = w;
        }
        let head = Linear::new(&mut params, "vitals.head", prev, 3, &mut rng);
        let label_mean = params.add("vitals.label_mean", Tensor::zeros(&[3]));
        let label_std = params.add("vitals.label_std", Tensor::filled(&[3], 1.0));
        Ok(Self {
            spec,
            params,
            stem,
            stages,
            head,
            label_mean,
            label_std,
        })
    }

    /// Sets the label standardization from training labels.
    pub fn fit_label_scale(&mut self, labels: &[[f64; 3]]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::invalid("no labels to standardize"));
        }
        let n = labels.len() as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for j in 0..3 {
            mean[j] = labels.iter().map(|l| l[j]).sum::<f64>() / n;
            let var = labels.iter().map(|l| (l[j] - mean[j]).powi(2)).sum::<f64>() / n;
            std[j] = if var.sqrt() > 1e-9 { var.sqrt() } else { 1.0 };
        }
        self.params.get_mut(self.label_mean).data_mut().copy_from_slice(&mean);
        self.params.get_mut(self.label_std).data_mut().copy_from_slice(&std);
        Ok(())
    }

    pub fn label_scale(&self) -> ([f64; 3], [f64; 3]) {
        let m = self.params.get(self.label_mean).data();
        let s = self.params.get(self.label_std).data();
        ([m[0], m[1], m[2]], [s[0], s[1], s[2]])
    }

    /// Standardized predictions `[batch, 3]` from `[batch, C, L]` input, or
    /// `[batch, L]` when the source has one channel.
    pub fn forward_standardized(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var> {
        let shape = tape.shape(input).to_vec();
        let c = self.spec.source.channels();
        let l = self.spec.seg_len;
        let x = match shape.as_slice() {
            [b, len] if c == 1 && *len == l => tape.reshape(input, &[*b, 1, l])?,
            [_, ch, len] if *ch == c && *len == l => input,
            _ => {
                return Err(Error::shape(
                    "vitals_forward",
                    format!("expected [batch, {c}, {l}], got {shape:?}"),
                ))
            }
        };
        let g = self.spec.gelu;
        let mut h = self.stem.forward_gelu(tape, x, g)?;
        for (i, st) in self.stages.iter().enumerate() {
            let y = st.c1.forward_gelu(tape, h, g)?;
            let y = st.c2.forward(tape, y)?;
            let s = match &st.shortcut {
                Some(c) => c.forward(tape, h)?,
                None => h,
            };
            let sum = tape.add(y, s)?;
            h = tape.gelu(sum, g);
            if i + 1 < self.stages.len() {
                h = tape.avgpool(h, 2)?;
            }
        }
        let pooled = tape.mean_last(h)?;
        self.head.forward(tape, pooled)
    }

    /// Predictions in natural units.
    pub fn forward(&self, tape: &mut Tape<'_>, input: Var) -> Result<Var> {
        let z = self.forward_standardized(tape, input)?;
        let (mean, std) = self.label_scale();
        tape.affine_const(z, &std, &mean)
    }

    /// The batch tensor this model's source selects.
    pub fn input(&self, tape: &mut Tape<'_>, batch: &Batch) -> Var {
        match self.spec.source {
            VitalsSource::Ppg => tape.input(batch.target.clone()),
            VitalsSource::RadioMagnitude { .. } => tape.input(batch.magnitude.clone()),
        }
    }
}
