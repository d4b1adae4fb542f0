use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, DoubleConv, MultiResBlock, ResPath};
use super::{Batch, InputMode};
use crate::autodiff::{GeluMode, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UnetSpec {
    pub in_channels: usize,
    pub input: InputMode,
    pub seg_len: usize,
    pub depth: usize,
    pub base_width: usize,
    pub kernel: usize,
    pub pool: usize,
    pub pad_to: usize,
    pub gelu: GeluMode,
}

impl UnetSpec {
    /// Real/imaginary input rows for `n_ch` subcarriers.
    pub fn new(n_ch: usize) -> Self {
        Self {
            in_channels: 2 * n_ch,
            input: InputMode::Complex,
            seg_len: 450,
            depth: 4,
            base_width: 16,
            kernel: 3,
            pool: 2,
            pad_to: 480,
            gelu: GeluMode::Exact,
        }
    }

    fn unit(&self) -> usize {
        self.pool.pow(self.depth as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.pool < 2 || self.base_width == 0 || self.kernel == 0 || self.in_channels == 0 {
            return Err(Error::invalid("U-NET dimensions must be positive, pool >= 2"));
        }
        if self.pad_to % self.unit() != 0 || self.pad_to < self.seg_len {
            return Err(Error::invalid(format!(
                "pad_to {} must be a multiple of {} and at least {}",
                self.pad_to,
                self.unit(),
                self.seg_len
            )));
        }
        let (left, right) = self.padding();
        if left >= self.seg_len || right >= self.seg_len || left > self.pad_to - self.seg_len {
            return Err(Error::invalid(format!("padding ({left}, {right}) too large for reflection")));
        }
        for k in 0..self.depth {
            let step = self.pool.pow(k as u32);
            if left / step + self.seg_len / step > self.pad_to / step {
                return Err(Error::invalid(format!("level {k} crop exceeds its resolution")));
            }
        }
        Ok(())
    }

    /// Left padding is rounded up to a multiple of `pool^depth` so each
    /// level's crop starts on a whole sample.
    pub fn padding(&self) -> (usize, usize) {
        let total = self.pad_to - self.seg_len;
        let unit = self.unit();
        let left = (total / 2).div_ceil(unit) * unit;
        let left = left.min(total);
        (left, total - left)
    }

    /// Output length per deep-supervision level, finest first.
    pub fn level_lengths(&self) -> Vec<usize> {
        (0..self.depth).map(|k| self.seg_len / self.pool.pow(k as u32)).collect()
    }

    fn widths(&self) -> Vec<usize> {
        (0..self.depth).map(|k| self.base_width << k).collect()
    }
}

/// Encoder-decoder with skip concatenation and one linear 1x1 head per
/// decoder resolution.
#[derive(Debug, Clone)]
pub struct UnetApprox {
    pub spec: UnetSpec,
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    dec: Vec<DoubleConv>,
    heads: Vec<Conv>,
}

impl UnetApprox {
    pub fn new(spec: UnetSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let w = spec.widths();
        let k = spec.kernel;
        let mut enc = Vec::with_capacity(spec.depth);
        let mut prev = spec.in_channels;
        for (i, wi) in w.iter().enumerate() {
            enc.push(DoubleConv::new(store, &format!("approx.enc{i}"), prev, *wi, k, rng));
            prev = *wi;
        }
        let bottleneck = DoubleConv::new(store, "approx.mid", prev, prev, k, rng);
        let mut dec = Vec::with_capacity(spec.depth);
        let mut heads = Vec::with_capacity(spec.depth);
        for i in (0..spec.depth).rev() {
            dec.push(DoubleConv::new(store, &format!("approx.dec{i}"), prev + w[i], w[i], k, rng));
            heads.push(Conv::new(store, &format!("approx.head{i}"), w[i], 1, 1, rng));
            prev = w[i];
        }
        dec.reverse();
        heads.reverse();
        Ok(Self {
            spec,
            enc,
            bottleneck,
            dec,
            heads,
        })
    }

    /// `x` is `[batch, in_channels, seg_len]`; returns one `[batch, len_k]`
    /// output per level, finest first.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Vec<Var>> {
        let s = &self.spec;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != s.in_channels || shape[2] != s.seg_len {
            return Err(Error::shape(
                "unet_approx_forward",
                format!("expected [batch, {}, {}], got {shape:?}", s.in_channels, s.seg_len),
            ));
        }
        let b = shape[0];
        let (left, right) = s.padding();
        let mut h = tape.reflect_pad(x, left, right)?;
        let mut skips = Vec::with_capacity(s.depth);
        for block in &self.enc {
            let e = block.forward(tape, h, s.gelu)?;
            skips.push(e);
            h = tape.maxpool(e, s.pool)?;
        }
        h = self.bottleneck.forward(tape, h, s.gelu)?;
        let lengths = s.level_lengths();
        let mut outputs = vec![h; s.depth];
        for k in (0..s.depth).rev() {
            let up = tape.upsample_nearest(h, s.pool)?;
            let cat = tape.concat(&[up, skips[k]])?;
            h = self.dec[k].forward(tape, cat, s.gelu)?;
            let head = self.heads[k].forward(tape, h)?;
            let step = s.pool.pow(k as u32);
            let cropped = tape.crop(head, left / step, lengths[k])?;
            outputs[k] = tape.reshape(cropped, &[b, lengths[k]])?;
        }
        Ok(outputs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiResSpec {
    pub seg_len: usize,
    pub depth: usize,
    pub base_width: usize,
    pub kernel: usize,
    pub pool: usize,
    pub pad_to: usize,
    pub gelu: GeluMode,
}

impl Default for MultiResSpec {
    fn default() -> Self {
        Self {
            seg_len: 450,
            depth: 4,
            base_width: 16,
            kernel: 3,
            pool: 2,
            pad_to: 480,
            gelu: GeluMode::Exact,
        }
    }
}

impl MultiResSpec {
    fn as_unet(&self) -> UnetSpec {
        UnetSpec {
            in_channels: 1,
            input: InputMode::Complex,
            seg_len: self.seg_len,
            depth: self.depth,
            base_width: self.base_width,
            kernel: self.kernel,
            pool: self.pool,
            pad_to: self.pad_to,
            gelu: self.gelu,
        }
    }

    /// Res path length per encoder level: `depth - level`.
    pub fn respath_lengths(&self) -> Vec<usize> {
        (0..self.depth).map(|k| self.depth - k).collect()
    }
}

/// MultiRes U-NET mapping the approximation to a refined waveform. The head
/// starts at zero so an untrained refinement passes its input through.
#[derive(Debug, Clone)]
pub struct MultiResRefine {
    pub spec: MultiResSpec,
    enc: Vec<MultiResBlock>,
    paths: Vec<ResPath>,
    bottleneck: MultiResBlock,
    dec: Vec<MultiResBlock>,
    pub head: Conv,
}

impl MultiResRefine {
    pub fn new(spec: MultiResSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.as_unet().validate()?;
        let k = spec.kernel;
        let w: Vec<usize> = (0..spec.depth).map(|i| spec.base_width << i).collect();
        let mut enc = Vec::new();
        let mut paths = Vec::new();
        let mut prev = 1;
        for (i, (wi, len)) in w.iter().zip(spec.respath_lengths()).enumerate() {
            enc.push(MultiResBlock::new(store, &format!("refine.enc{i}"), prev, *wi, k, rng));
            paths.push(ResPath::new(store, &format!("refine.path{i}"), *wi, len, k, rng));
            prev = *wi;
        }
        let mid = 2 * prev;
        let bottleneck = MultiResBlock::new(store, "refine.mid", prev, mid, k, rng);
        prev = mid;
        let mut dec = Vec::new();
        for i in (0..spec.depth).rev() {
            dec.push(MultiResBlock::new(store, &format!("refine.dec{i}"), prev + w[i], w[i], k, rng));
            prev = w[i];
        }
        dec.reverse();
        let head = Conv::zeros(store, "refine.head", w[0], 1, 1);
        Ok(Self {
            spec,
            enc,
            paths,
            bottleneck,
            dec,
            head,
        })
    }

    /// `x` is `[batch, seg_len]`.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let s = &self.spec;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != s.seg_len {
            return Err(Error::shape(
                "unet_refine_forward",
                format!("expected [batch, {}], got {shape:?}", s.seg_len),
            ));
        }
        let b = shape[0];
        let (left, right) = s.as_unet().padding();
        let x3 = tape.reshape(x, &[b, 1, s.seg_len])?;
        let mut h = tape.reflect_pad(x3, left, right)?;
        let mut skips = Vec::with_capacity(s.depth);
        for (block, path) in self.enc.iter().zip(&self.paths) {
            let e = block.forward(tape, h, s.gelu)?;
            skips.push(path.forward(tape, e, s.gelu)?);
            h = tape.maxpool(e, s.pool)?;
        }
        h = self.bottleneck.forward(tape, h, s.gelu)?;
        for k in (0..s.depth).rev() {
            let up = tape.upsample_nearest(h, s.pool)?;
            let cat = tape.concat(&[up, skips[k]])?;
            h = self.dec[k].forward(tape, cat, s.gelu)?;
        }
        let out = self.head.forward(tape, h)?;
        let out = tape.crop(out, left, s.seg_len)?;
        let out = tape.reshape(out, &[b, s.seg_len])?;
        tape.add(out, x)
    }
}

/// How the two networks of the cascade share training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CascadeMode {
    /// One optimizer over both networks and the summed loss.
    #[default]
    Joint,
    /// Approximation alone for the first half of the epochs, then the
    /// refinement with the approximation frozen.
    Sequential,
}

impl std::str::FromStr for CascadeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Self::Joint),
            "sequential" => Ok(Self::Sequential),
            _ => Err(Error::invalid(format!("unknown cascade mode {s:?} (expected joint or sequential)"))),
        }
    }
}

/// Approximation network followed by the refinement network.
#[derive(Debug, Clone)]
pub struct UnetCascade {
    pub params: ParamStore,
    pub approx: UnetApprox,
    pub refine: MultiResRefine,
}

/// Forward results of the cascade.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    /// Approximation outputs, finest level first.
    pub levels: Vec<Var>,
    pub refined: Var,
}

impl UnetCascade {
    pub fn new(approx: UnetSpec, refine: MultiResSpec, seed: u64) -> Result<Self> {
        if approx.seg_len != refine.seg_len {
            return Err(Error::invalid("approximation and refinement lengths differ"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let approx = UnetApprox::new(approx, &mut params, &mut rng)?;
        let refine = MultiResRefine::new(refine, &mut params, &mut rng)?;
        Ok(Self {
            params,
            approx,
            refine,
        })
    }

    pub fn approx_param_count(&self) -> usize {
        self.params.numel_with_prefix("approx.")
    }

    pub fn refine_param_count(&self) -> usize {
        self.params.numel_with_prefix("refine.")
    }

    pub fn forward(&self, tape: &mut Tape<'_>, batch: &Batch) -> Result<CascadeOutput> {
        let x = tape.input(batch.input_rows(self.approx.spec.input)?);
        let levels = self.approx.forward(tape, x)?;
        let refined = self.refine.forward(tape, levels[0])?;
        Ok(CascadeOutput { levels, refined })
    }
}
