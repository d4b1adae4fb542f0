use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{GeluMode, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// Fully connected layer, weights `[out, in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// Uniform init in `+-1/sqrt(fan_in)`.
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Self {
            w: store.add(format!("{name}.w"), uniform(rng, &[out, inp], bound)),
            b: store.add(format!("{name}.b"), uniform(rng, &[out], bound)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.linear(x, w, Some(b))
    }
}

/// Stride-1 "same" convolution, weights `[out, in, k]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((inp * k) as f64).sqrt();
        Self {
            w: store.add(format!("{name}.w"), uniform(rng, &[out, inp, k], bound)),
            b: store.add(format!("{name}.b"), uniform(rng, &[out], bound)),
        }
    }

    pub fn zeros(store: &mut ParamStore, name: &str, inp: usize, out: usize, k: usize) -> Self {
        Self {
            w: store.add(format!("{name}.w"), Tensor::zeros(&[out, inp, k])),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[out])),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.conv1d(x, w, Some(b))
    }

    pub fn forward_gelu(&self, tape: &mut Tape<'_>, x: Var, gelu: GeluMode) -> Result<Var> {
        let y = self.forward(tape, x)?;
        Ok(tape.gelu(y, gelu))
    }
}

/// Two convolutions, each followed by GELU.
#[derive(Debug, Clone, Copy)]
pub struct DoubleConv {
    c1: Conv,
    c2: Conv,
}

impl DoubleConv {
    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            c1: Conv::new(store, &format!("{name}.c1"), inp, out, k, rng),
            c2: Conv::new(store, &format!("{name}.c2"), out, out, k, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, gelu: GeluMode) -> Result<Var> {
        let y = self.c1.forward_gelu(tape, x, gelu)?;
        self.c2.forward_gelu(tape, y, gelu)
    }
}

/// Multi-scale block: a chain of three convolutions whose outputs are
/// concatenated, plus a 1x1 shortcut.
#[derive(Debug, Clone)]
pub struct MultiResBlock {
    chain: [Conv; 3],
    shortcut: Conv,
    pub widths: [usize; 3],
}

impl MultiResBlock {
    /// Branch widths roughly W/6, W/3 and the remainder, summing to `out`.
    pub fn branch_widths(out: usize) -> [usize; 3] {
        let a = (out / 6).max(1);
        let b = (out / 3).max(1);
        [a, b, out - a - b]
    }

    pub fn new(store: &mut ParamStore, name: &str, inp: usize, out: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let widths = Self::branch_widths(out);
        let c0 = Conv::new(store, &format!("{name}.b0"), inp, widths[0], k, rng);
        let c1 = Conv::new(store, &format!("{name}.b1"), widths[0], widths[1], k, rng);
        let c2 = Conv::new(store, &format!("{name}.b2"), widths[1], widths[2], k, rng);
        Self {
            chain: [c0, c1, c2],
            shortcut: Conv::new(store, &format!("{name}.sc"), inp, out, 1, rng),
            widths,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, gelu: GeluMode) -> Result<Var> {
        let a = self.chain[0].forward_gelu(tape, x, gelu)?;
        let b = self.chain[1].forward_gelu(tape, a, gelu)?;
        let c = self.chain[2].forward_gelu(tape, b, gelu)?;
        let cat = tape.concat(&[a, b, c])?;
        let s = self.shortcut.forward(tape, x)?;
        let sum = tape.add(cat, s)?;
        Ok(tape.gelu(sum, gelu))
    }
}

/// Skip connection made of `len` residual convolution units.
#[derive(Debug, Clone)]
pub struct ResPath {
    units: Vec<(Conv, Conv)>,
}

impl ResPath {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, len: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let units = (0..len)
            .map(|i| {
                (
                    Conv::new(store, &format!("{name}.{i}.conv"), width, width, k, rng),
                    Conv::new(store, &format!("{name}.{i}.sc"), width, width, 1, rng),
                )
            })
            .collect();
        Self { units }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: Var, gelu: GeluMode) -> Result<Var> {
        for (conv, sc) in &self.units {
            let y = conv.forward_gelu(tape, x, gelu)?;
            let s = sc.forward(tape, x)?;
            let sum = tape.add(y, s)?;
            x = tape.gelu(sum, gelu);
        }
        Ok(x)
    }
}
