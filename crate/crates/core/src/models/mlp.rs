use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Linear;
use super::{Batch, InputMode};
use crate::autodiff::{GeluMode, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::spectral::{idct2_matrix, DctPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub n_ch: usize,
    pub seg_len: usize,
    pub input: InputMode,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// One rate per hidden layer.
    pub dropouts: Vec<f64>,
    pub gelu: GeluMode,
}

impl MlpSpec {
    pub fn new(n_ch: usize, input: InputMode) -> Self {
        Self {
            n_ch,
            seg_len: 450,
            input,
            hidden: vec![2048, 1024, 512, 512, 450],
            output_dim: 450,
            dropouts: vec![0.05, 0.05, 0.1, 0.1, 0.15],
            gelu: GeluMode::Exact,
        }
    }

    /// `N_ch * N * K`.
    pub fn input_dim(&self) -> usize {
        self.n_ch * self.seg_len * self.input.k()
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.len() != self.dropouts.len() {
            return Err(Error::invalid(format!(
                "{} hidden layers but {} dropout rates",
                self.hidden.len(),
                self.dropouts.len()
            )));
        }
        if self.output_dim != self.seg_len {
            return Err(Error::invalid(format!(
                "output dimension {} must equal the segment length {}",
                self.output_dim, self.seg_len
            )));
        }
        if self.n_ch == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("MLP dimensions must be positive"));
        }
        Ok(())
    }
}

/// Frequency-domain baseline: per-channel DCT, an MLP predicting the DCT of
/// the PPG, and an inverse DCT.
#[derive(Debug, Clone)]
pub struct DctMlp {
    pub spec: MlpSpec,
    pub params: ParamStore,
    layers: Vec<Linear>,
    /// Inverse DCT as `[coeffs, time]`, including the coefficient scale.
    synth: Tensor,
    coeff_scale: f64,
}

impl DctMlp {
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut dims = vec![spec.input_dim()];
        dims.extend(&spec.hidden);
        dims.push(spec.output_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::new(&mut params, &format!("mlp.{i}"), d[0], d[1], &mut rng))
            .collect();
        let n = spec.seg_len;
        // Unnormalized DCT coefficients grow like sqrt(n); features and
        // outputs are kept at unit scale.
        let coeff_scale = (n as f64).sqrt();
        let m = idct2_matrix(n);
        let mut synth = vec![0.0; n * n];
        for t in 0..n {
            for k in 0..n {
                synth[k * n + t] = m[t * n + k] * coeff_scale;
            }
        }
        Ok(Self {
            spec,
            params,
            layers,
            synth: Tensor::new(&[n, n], synth)?,
            coeff_scale,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Flattened, scaled per-channel DCT features `[batch, input_dim]`.
    pub fn features(&self, batch: &Batch) -> Result<Tensor> {
        let rows = batch.input_rows(self.spec.input)?;
        let (b, r, l) = (rows.shape()[0], rows.shape()[1], rows.shape()[2]);
        if l != self.spec.seg_len || r * l != self.spec.input_dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!("batch rows {r} x {l} do not match input dimension {}", self.spec.input_dim()),
            ));
        }
        let plan = DctPlan::new(l)?;
        let mut out = Vec::with_capacity(b * r * l);
        for row in rows.data().chunks_exact(l) {
            out.extend(plan.forward(row)?.0.iter().map(|c| c / self.coeff_scale));
        }
        Tensor::new(&[b, r * l], out)
    }

    /// Predicted (scaled) DCT coefficients.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last {
                h = tape.gelu(h, self.spec.gelu);
                h = tape.dropout(h, self.spec.dropouts[i])?;
            }
        }
        Ok(h)
    }

    /// Time-domain twin PPG `[batch, seg_len]`.
    pub fn synthesize(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<Var> {
        let x = tape.input(self.features(batch)?);
        let coeffs = self.forward(tape, x)?;
        let m = tape.input(self.synth.clone());
        tape.matmul(coeffs, m)
    }
}
