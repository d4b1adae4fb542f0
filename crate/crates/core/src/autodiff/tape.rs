use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gemm::{gemm, Mat};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeluMode {
    #[default]
    Exact,
    TanhApprox,
}

impl std::str::FromStr for GeluMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "erf" => Ok(Self::Exact),
            "tanh" => Ok(Self::TanhApprox),
            _ => Err(Error::invalid(format!("unknown GELU mode {s:?} (expected exact or tanh)"))),
        }
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044715;

pub fn gelu_scalar(x: f64, mode: GeluMode) -> f64 {
    match mode {
        GeluMode::Exact => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
        GeluMode::TanhApprox => {
            0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh())
        }
    }
}

/// Value and derivative together, sharing the transcendental calls.
fn gelu_with_grad(x: f64, mode: GeluMode) -> (f64, f64) {
    match mode {
        GeluMode::Exact => {
            let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
            let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            (x * cdf, cdf + x * pdf)
        }
        GeluMode::TanhApprox => {
            let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
            let t = u.tanh();
            let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
            (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var },
    Conv1d { x: Var, w: Var, b: Option<Var>, pad_left: usize },
    Upsample { x: Var, factor: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    AvgPool { x: Var, width: usize },
    Add { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Affine { x: Var, scale: Vec<f64>, shift_len: usize },
    Concat { parts: Vec<Var> },
    Dropout { x: Var, mask: Vec<f64> },
    ReflectPad { x: Var, left: usize, right: usize },
    Crop { x: Var, start: usize },
    Gelu { x: Var, deriv: Vec<f64> },
    Relu { x: Var },
    Reshape { x: Var },
    MeanLast { x: Var },
    Mae { pred: Var, target: Var },
    DerivL1 { pred: Var, target: Var, l1: f64, l2: f64 },
    Sum { parts: Vec<Var> },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Parameter values are read from the borrowed [`ParamStore`]; they are never
/// copied onto the tape.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    frozen: Vec<bool>,
    mode: Mode,
    rng: ChaCha8Rng,
    /// Parameter-gradient buffers from an earlier pass, reused by `backward`.
    pool: RefCell<Vec<Option<Vec<f64>>>>,
}

/// Split of a rank-3 tensor `[batch, channels, length]`.
fn bcl(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [b, c, l] => Ok((*b, *c, *l)),
        s => Err(Error::shape(op, format!("expected [batch, channels, length], got {s:?}"))),
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore, mode: Mode, seed: u64) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            frozen: vec![false; params.len()],
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pool: RefCell::new(Vec::new()),
        }
    }

    /// Hands the parameter-gradient buffers of a finished pass back for
    /// reuse, which saves re-faulting large allocations on every step.
    pub fn recycle(&mut self, buffers: Vec<Option<Vec<f64>>>) {
        *self.pool.get_mut() = buffers;
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Excludes a parameter from differentiation.
    pub fn freeze(&mut self, id: ParamId) {
        self.frozen[id.0] = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An input whose gradient is wanted.
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: !self.frozen[id.0],
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("every non-parameter node stores its value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// `x [B, I] * w[O, I]^T + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xt, wt) = (self.value(x), self.value(w));
        let (bs, i) = match xt.shape() {
            [bs, i] => (*bs, *i),
            s => return Err(Error::shape("linear", format!("input must be [batch, features], got {s:?}"))),
        };
        let o = match wt.shape() {
            [o, wi] if *wi == i => *o,
            s => return Err(Error::shape("linear", format!("weight {s:?} does not accept {i} features"))),
        };
        let mut out = vec![0.0; bs * o];
        gemm(1.0, Mat::row_major(xt.data(), bs, i), Mat::row_major(wt.data(), o, i).t(), 0.0, &mut out);
        if let Some(b) = b {
            let bt = self.value(b);
            if bt.shape() != [o] {
                return Err(Error::shape("linear", format!("bias {:?} must be [{o}]", bt.shape())));
            }
            for row in out.chunks_exact_mut(o) {
                row.iter_mut().zip(bt.data()).for_each(|(v, bb)| *v += bb);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new(&[bs, o], out)?, Op::Linear { x, w, b }, ng))
    }

    /// `a [M, K] * b [K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (m, k, n) = match (at.shape(), bt.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            (sa, sb) => return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}"))),
        };
        let mut out = vec![0.0; m * n];
        gemm(1.0, Mat::row_major(at.data(), m, k), Mat::row_major(bt.data(), k, n), 0.0, &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b }, ng))
    }

    /// Stride-1 convolution with zero "same" padding; `w` is `[O, C, K]` with
    /// odd or even `K` (even kernels pad one more on the right).
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (bs, c, l) = bcl(self.value(x), "conv1d")?;
        let (o, k) = match self.value(w).shape() {
            [o, wc, k] if *wc == c && *k > 0 => (*o, *k),
            s => return Err(Error::shape("conv1d", format!("weight {s:?} does not accept {c} channels"))),
        };
        if let Some(b) = b {
            if self.value(b).shape() != [o] {
                return Err(Error::shape("conv1d", format!("bias {:?} must be [{o}]", self.value(b).shape())));
            }
        }
        let pad_left = (k - 1) / 2;
        let xt = self.value(x);
        let wt = self.value(w);
        let ck = c * k;
        let bl = bs * l;
        // One product for the whole batch: [O, CK] x [CK, B*L].
        let mut col = vec![0.0; ck * bl];
        for bi in 0..bs {
            im2col(&xt.data()[bi * c * l..(bi + 1) * c * l], c, l, k, pad_left, &mut col, bl, bi * l);
        }
        let mut flat = vec![0.0; o * bl];
        gemm(1.0, Mat::row_major(wt.data(), o, ck), Mat::row_major(&col, ck, bl), 0.0, &mut flat);
        let mut out = vec![0.0; bs * o * l];
        for oi in 0..o {
            let bias = b.map_or(0.0, |b| self.value(b).data()[oi]);
            for bi in 0..bs {
                let src = &flat[oi * bl + bi * l..oi * bl + (bi + 1) * l];
                let dst = &mut out[(bi * o + oi) * l..(bi * o + oi + 1) * l];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + bias);
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Tensor::new(&[bs, o, l], out)?, Op::Conv1d { x, w, b, pad_left }, ng))
    }

    /// Nearest-neighbour upsampling along the last axis.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let (bs, c, l) = bcl(self.value(x), "upsample_nearest")?;
        if factor == 0 {
            return Err(Error::shape("upsample_nearest", "factor must be positive"));
        }
        let xd = self.value(x).data();
        let out: Vec<f64> = xd
            .chunks_exact(l)
            .flat_map(|row| row.iter().flat_map(|v| std::iter::repeat_n(*v, factor)))
            .collect();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[bs, c, l * factor], out)?, Op::Upsample { x, factor }, ng))
    }

    /// Non-overlapping max pooling; a trailing remainder is dropped.
    pub fn maxpool(&mut self, x: Var, width: usize) -> Result<Var> {
        let (bs, c, l) = bcl(self.value(x), "maxpool1d")?;
        if width == 0 || width > l {
            return Err(Error::shape("maxpool1d", format!("width {width} for length {l}")));
        }
        let lo = l / width;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bs * c * lo);
        let mut argmax = Vec::with_capacity(bs * c * lo);
        for (r, row) in xd.chunks_exact(l).enumerate() {
            for j in 0..lo {
                let mut best = j * width;
                for i in j * width + 1..(j + 1) * width {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * l + best);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[bs, c, lo], out)?, Op::MaxPool { x, argmax }, ng))
    }

    /// Non-overlapping mean pooling along the last axis of any rank >= 1
    /// tensor; a trailing remainder is dropped.
    pub fn avgpool(&mut self, x: Var, width: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let l = *shape.last().ok_or_else(|| Error::shape("avgpool1d", "scalar input"))?;
        if width == 0 || width > l {
            return Err(Error::shape("avgpool1d", format!("width {width} for length {l}")));
        }
        let lo = l / width;
        let inv = 1.0 / width as f64;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(l)
            .flat_map(|row| (0..lo).map(move |j| row[j * width..(j + 1) * width].iter().sum::<f64>() * inv))
            .collect();
        let mut s = shape;
        *s.last_mut().expect("rank >= 1") = lo;
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&s, out)?, Op::AvgPool { x, width }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        if at.shape() != bt.shape() {
            return Err(Error::shape("add", format!("{:?} + {:?}", at.shape(), bt.shape())));
        }
        let out: Vec<f64> = at.data().iter().zip(bt.data()).map(|(p, q)| p + q).collect();
        let shape = at.shape().to_vec();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add { a, b }, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v * c).collect()).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::Scale { x, c }, ng)
    }

    /// `x * scale + shift` broadcast along the last axis, with constant
    /// `scale` and `shift`.
    pub fn affine_const(&mut self, x: Var, scale: &[f64], shift: &[f64]) -> Result<Var> {
        let t = self.value(x);
        let f = *t.shape().last().unwrap_or(&0);
        if scale.len() != f || shift.len() != f {
            return Err(Error::shape("affine_const", format!("last axis {f}, scale {}, shift {}", scale.len(), shift.len())));
        }
        let out: Vec<f64> = t
            .data()
            .chunks_exact(f)
            .flat_map(|row| row.iter().zip(scale).zip(shift).map(|((v, s), m)| v * s + m))
            .collect();
        let shape = t.shape().to_vec();
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Affine { x, scale: scale.to_vec(), shift_len: f }, ng))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?).shape().to_vec();
        if first.len() < 2 {
            return Err(Error::shape("concat", "inputs need rank >= 2"));
        }
        let outer = first[0];
        let inner: usize = first[2..].iter().product();
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != first.len() || s[0] != outer || s[2..] != first[2..] {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {first:?}")));
            }
            total += s[1];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let span = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[o * span..(o + 1) * span]);
            }
        }
        let mut shape = first;
        shape[1] = total;
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec() }, ng))
    }

    /// Inverted dropout; the identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout rate {p} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().zip(&mask).map(|(v, m)| v * m).collect())?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Dropout { x, mask }, ng))
    }

    /// Mirror padding of the last axis without repeating the edge sample.
    pub fn reflect_pad(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let (bs, c, l) = bcl(self.value(x), "reflect_pad1d")?;
        if left >= l || right >= l {
            return Err(Error::shape("reflect_pad1d", format!("padding ({left}, {right}) needs length > both, got {l}")));
        }
        let lo = l + left + right;
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(bs * c * lo);
        for row in xd.chunks_exact(l) {
            for j in 0..lo {
                out.push(row[reflect_index(j as isize - left as isize, l)]);
            }
        }
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&[bs, c, lo], out)?, Op::ReflectPad { x, left, right }, ng))
    }

    /// Keeps `len` samples of the last axis starting at `start`.
    pub fn crop(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let l = *shape.last().ok_or_else(|| Error::shape("crop1d", "scalar input"))?;
        if start + len > l {
            return Err(Error::shape("crop1d", format!("window {start}..{} exceeds length {l}", start + len)));
        }
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(l)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut s = shape;
        *s.last_mut().expect("rank >= 1") = len;
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(&s, out)?, Op::Crop { x, start }, ng))
    }

    pub fn gelu(&mut self, x: Var, mode: GeluMode) -> Var {
        let ng = self.ng(x);
        let t = self.value(x);
        let (out, deriv) = if ng {
            t.data().iter().map(|v| gelu_with_grad(*v, mode)).unzip()
        } else {
            (t.data().iter().map(|v| gelu_scalar(*v, mode)).collect(), Vec::new())
        };
        let out = Tensor::new(t.shape(), out).expect("same shape");
        self.push(out, Op::Gelu { x, deriv }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|v| v.max(0.0)).collect()).expect("same shape");
        let ng = self.ng(x);
        self.push(out, Op::Relu { x }, ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshaped(shape)?;
        let ng = self.ng(x);
        Ok(self.push(t, Op::Reshape { x }, ng))
    }

    /// Mean over the last axis: `[B, C, L] -> [B, C]`.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let l = *shape.last().ok_or_else(|| Error::shape("mean_last", "scalar input"))?;
        if l == 0 {
            return Err(Error::shape("mean_last", "empty axis"));
        }
        let out: Vec<f64> = self.value(x).data().chunks_exact(l).map(|r| r.iter().sum::<f64>() / l as f64).collect();
        let s = &shape[..shape.len() - 1];
        let ng = self.ng(x);
        Ok(self.push(Tensor::new(s, out)?, Op::MeanLast { x }, ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || sa.is_empty() {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Mean absolute error over all elements.
    pub fn mae(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("loss_mae", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let v = p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(Tensor::scalar(v), Op::Mae { pred, target }, ng))
    }

    /// Batch mean of `mean|e| + l1 * sum|e'| + l2 * sum|e''|` with forward
    /// differences along each row; axis 0 is the batch.
    pub fn derivative_l1(&mut self, pred: Var, target: Var, l1: f64, l2: f64) -> Result<Var> {
        self.same_shape("derivative_l1", pred, target)?;
        let shape = self.shape(pred);
        let bs = shape[0];
        let n = shape[1..].iter().product::<usize>();
        if bs == 0 || n == 0 {
            return Err(Error::shape("derivative_l1", "empty batch or row"));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let mut total = 0.0;
        for b in 0..bs {
            let e: Vec<f64> = (0..n).map(|i| p[b * n + i] - t[b * n + i]).collect();
            total += row_deriv_l1(&e, l1, l2);
        }
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(Tensor::scalar(total / bs as f64), Op::DerivL1 { pred, target, l1, l2 }, ng))
    }

    /// Deep-supervision loss: the derivative-regularized L1 summed over
    /// levels, each level using its own length.
    pub fn deep_l1(&mut self, preds: &[Var], targets: &[Var], l1: f64, l2: f64) -> Result<Var> {
        if preds.len() != targets.len() || preds.is_empty() {
            return Err(Error::shape(
                "loss_deep_l1",
                format!("{} predictions for {} targets", preds.len(), targets.len()),
            ));
        }
        let terms = preds
            .iter()
            .zip(targets)
            .map(|(p, t)| self.derivative_l1(*p, *t, l1, l2))
            .collect::<Result<Vec<_>>>()?;
        self.sum(&terms)
    }

    /// Single-level refinement loss.
    pub fn refine_l2(&mut self, pred: Var, target: Var, l1: f64, l2: f64) -> Result<Var> {
        self.derivative_l1(pred, target, l1, l2)
    }

    /// Sum of scalar losses.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let mut v = 0.0;
        for p in parts {
            let t = self.value(*p);
            if t.numel() != 1 {
                return Err(Error::shape("sum", format!("expected scalars, got {:?}", t.shape())));
            }
            v += t.item();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        Ok(self.push(Tensor::scalar(v), Op::Sum { parts: parts.to_vec() }, ng))
    }

    /// Reverse pass from a scalar.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params = vec![None; self.params.len()];
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                if self.nodes[v.0].needs_grad {
                    params[pid] = grads[v.0].take();
                }
            }
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| self.zeroed(v, n)))
    }

    fn zeroed(&self, v: Var, n: usize) -> Vec<f64> {
        if let Op::Param(id) = self.nodes[v.0].op {
            if let Some(mut buf) = self.pool.borrow_mut().get_mut(id.0).and_then(Option::take) {
                if buf.len() == n {
                    buf.fill(0.0);
                    return buf;
                }
            }
        }
        vec![0.0; n]
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (bs, inp) = (xt.shape()[0], xt.shape()[1]);
                let o = wt.shape()[0];
                if let Some(dx) = self.acc(grads, *x) {
                    gemm(1.0, Mat::row_major(g, bs, o), Mat::row_major(wt.data(), o, inp), 1.0, dx);
                }
                if let Some(dw) = self.acc(grads, *w) {
                    gemm(1.0, Mat::row_major(g, bs, o).t(), Mat::row_major(xt.data(), bs, inp), 1.0, dw);
                }
                if let Some(b) = b {
                    if let Some(db) = self.acc(grads, *b) {
                        for row in g.chunks_exact(o) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
                if let Some(da) = self.acc(grads, *a) {
                    gemm(1.0, Mat::row_major(g, m, n), Mat::row_major(bt.data(), k, n).t(), 1.0, da);
                }
                if let Some(db) = self.acc(grads, *b) {
                    gemm(1.0, Mat::row_major(at.data(), m, k).t(), Mat::row_major(g, m, n), 1.0, db);
                }
            }
            Op::Conv1d { x, w, b, pad_left } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let (bs, c, l) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
                let (o, k) = (wt.shape()[0], wt.shape()[2]);
                let (ck, bl) = (c * k, bs * l);
                let mut gflat = vec![0.0; o * bl];
                for oi in 0..o {
                    for bi in 0..bs {
                        gflat[oi * bl + bi * l..oi * bl + (bi + 1) * l]
                            .copy_from_slice(&g[(bi * o + oi) * l..(bi * o + oi + 1) * l]);
                    }
                }
                if self.nodes[w.0].needs_grad {
                    let mut col = vec![0.0; ck * bl];
                    for bi in 0..bs {
                        im2col(&xt.data()[bi * c * l..(bi + 1) * c * l], c, l, k, *pad_left, &mut col, bl, bi * l);
                    }
                    let dw = self.acc(grads, *w).expect("needs grad");
                    gemm(1.0, Mat::row_major(&gflat, o, bl), Mat::row_major(&col, ck, bl).t(), 1.0, dw);
                }
                if self.nodes[x.0].needs_grad {
                    let mut dcol = vec![0.0; ck * bl];
                    gemm(1.0, Mat::row_major(wt.data(), o, ck).t(), Mat::row_major(&gflat, o, bl), 0.0, &mut dcol);
                    let dx = self.acc(grads, *x).expect("needs grad");
                    for bi in 0..bs {
                        col2im(&dcol, c, l, k, *pad_left, &mut dx[bi * c * l..(bi + 1) * c * l], bl, bi * l);
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = self.acc(grads, *b) {
                        for (oi, d) in db.iter_mut().enumerate() {
                            *d += gflat[oi * bl..(oi + 1) * bl].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::Upsample { x, factor } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (d, chunk) in dx.iter_mut().zip(g.chunks_exact(*factor)) {
                        *d += chunk.iter().sum::<f64>();
                    }
                }
            }
            Op::MaxPool { x, argmax, .. } => {
                if let Some(dx) = self.acc(grads, *x) {
                    for (gi, &src) in g.iter().zip(argmax) {
                        dx[src] += gi;
                    }
                }
            }
            Op::AvgPool { x, width } => {
                let l = *self.value(*x).shape().last().expect("rank >= 1");
                let lo = l / width;
                let inv = 1.0 / *width as f64;
                if let Some(dx) = self.acc(grads, *x) {
                    for (row, grow) in dx.chunks_exact_mut(l).zip(g.chunks_exact(lo)) {
                        for (j, gv) in grow.iter().enumerate() {
                            row[j * width..(j + 1) * width].iter_mut().for_each(|d| *d += gv * inv);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(grads, v) {
                        d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                    }
                }
            }
            Op::Scale { x, c } => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv);
                }
            }
            Op::Affine { x, scale, shift_len } => {
                if let Some(d) = self.acc(grads, *x) {
                    for (drow, grow) in d.chunks_exact_mut(*shift_len).zip(g.chunks_exact(*shift_len)) {
                        for ((dv, gv), s) in drow.iter_mut().zip(grow).zip(scale) {
                            *dv += gv * s;
                        }
                    }
                }
            }
            Op::Concat { parts } => {
                let outer = self.value(parts[0]).shape()[0];
                let inner: usize = self.value(parts[0]).shape()[2..].iter().product();
                let total: usize = parts.iter().map(|p| self.value(*p).shape()[1]).sum();
                let mut offset = 0;
                for p in parts {
                    let span = self.value(*p).shape()[1] * inner;
                    if let Some(d) = self.acc(grads, *p) {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset..o * total * inner + offset + span];
                            d[o * span..(o + 1) * span].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += span;
                }
            }
            Op::Dropout { x, mask } => {
                if let Some(d) = self.acc(grads, *x) {
                    for ((dv, gv), m) in d.iter_mut().zip(g).zip(mask) {
                        *dv += gv * m;
                    }
                }
            }
            Op::ReflectPad { x, left, right } => {
                let l = self.value(*x).shape()[2];
                let lo = l + left + right;
                if let Some(d) = self.acc(grads, *x) {
                    for (drow, grow) in d.chunks_exact_mut(l).zip(g.chunks_exact(lo)) {
                        for (j, gv) in grow.iter().enumerate() {
                            drow[reflect_index(j as isize - *left as isize, l)] += gv;
                        }
                    }
                }
            }
            Op::Crop { x, start } => {
                let l = *self.value(*x).shape().last().expect("rank >= 1");
                let len = *self.value(Var(i)).shape().last().expect("rank >= 1");
                if let Some(d) = self.acc(grads, *x) {
                    for (drow, grow) in d.chunks_exact_mut(l).zip(g.chunks_exact(len)) {
                        drow[*start..start + len].iter_mut().zip(grow).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Gelu { x, deriv } => {
                if let Some(d) = self.acc(grads, *x) {
                    for ((dv, gv), dg) in d.iter_mut().zip(g).zip(deriv) {
                        *dv += gv * dg;
                    }
                }
            }
            Op::Relu { x } => {
                let xd = self.value(*x).data();
                if let Some(d) = self.acc(grads, *x) {
                    for ((dv, gv), xv) in d.iter_mut().zip(g).zip(xd) {
                        if *xv > 0.0 {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(d) = self.acc(grads, *x) {
                    d.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
            }
            Op::MeanLast { x } => {
                let l = *self.value(*x).shape().last().expect("rank >= 1");
                let inv = 1.0 / l as f64;
                if let Some(d) = self.acc(grads, *x) {
                    for (row, gv) in d.chunks_exact_mut(l).zip(g) {
                        row.iter_mut().for_each(|v| *v += gv * inv);
                    }
                }
            }
            Op::Mae { pred, target } => {
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let scale = g[0] / p.len() as f64;
                let local: Vec<f64> = p.iter().zip(t).map(|(a, b)| scale * sign(a - b)).collect();
                self.scatter_pair(grads, *pred, *target, &local);
            }
            Op::DerivL1 { pred, target, l1, l2 } => {
                let shape = self.shape(*pred);
                let bs = shape[0];
                let n = shape[1..].iter().product::<usize>();
                let (p, t) = (self.value(*pred).data(), self.value(*target).data());
                let mut local = vec![0.0; bs * n];
                let scale = g[0] / bs as f64;
                for b in 0..bs {
                    let e: Vec<f64> = (0..n).map(|i| p[b * n + i] - t[b * n + i]).collect();
                    row_deriv_l1_grad(&e, *l1, *l2, scale, &mut local[b * n..(b + 1) * n]);
                }
                self.scatter_pair(grads, *pred, *target, &local);
            }
            Op::Sum { parts } => {
                for p in parts {
                    if let Some(d) = self.acc(grads, *p) {
                        d[0] += g[0];
                    }
                }
            }
        }
    }

    /// Adds `local` to the prediction gradient and its negation to the
    /// target gradient.
    fn scatter_pair(&self, grads: &mut [Option<Vec<f64>>], pred: Var, target: Var, local: &[f64]) {
        if let Some(d) = self.acc(grads, pred) {
            d.iter_mut().zip(local).for_each(|(d, v)| *d += v);
        }
        if let Some(d) = self.acc(grads, target) {
            d.iter_mut().zip(local).for_each(|(d, v)| *d -= v);
        }
    }
}

fn row_deriv_l1(e: &[f64], l1: f64, l2: f64) -> f64 {
    let n = e.len();
    let mae = e.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let d1: f64 = e.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let d2: f64 = e.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).sum();
    mae + l1 * d1 + l2 * d2
}

fn row_deriv_l1_grad(e: &[f64], l1: f64, l2: f64, scale: f64, out: &mut [f64]) {
    let n = e.len();
    for (o, v) in out.iter_mut().zip(e) {
        *o += scale * sign(*v) / n as f64;
    }
    for i in 0..n.saturating_sub(1) {
        let s = scale * l1 * sign(e[i + 1] - e[i]);
        out[i + 1] += s;
        out[i] -= s;
    }
    for i in 0..n.saturating_sub(2) {
        let s = scale * l2 * sign(e[i + 2] - 2.0 * e[i + 1] + e[i]);
        out[i + 2] += s;
        out[i + 1] -= 2.0 * s;
        out[i] += s;
    }
}

/// Direct evaluation of the derivative-regularized L1 for one row pair.
pub fn derivative_l1_row(pred: &[f64], target: &[f64], l1: f64, l2: f64) -> f64 {
    let e: Vec<f64> = pred.iter().zip(target).map(|(a, b)| a - b).collect();
    row_deriv_l1(&e, l1, l2)
}

fn reflect_index(i: isize, l: usize) -> usize {
    let l = l as isize;
    if l == 1 {
        return 0;
    }
    let period = 2 * (l - 1);
    let mut m = i.rem_euclid(period);
    if m >= l {
        m = period - m;
    }
    m as usize
}

/// Writes the `C*K` shifted copies of `x` (`[C, L]`) into rows of `col`,
/// each row `stride` long, starting at column `offset`.
#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, l: usize, k: usize, pad_left: usize, col: &mut [f64], stride: usize, offset: usize) {
    for ci in 0..c {
        let row = &x[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let start = (ci * k + kk) * stride + offset;
            let dst = &mut col[start..start + l];
            let shift = kk as isize - pad_left as isize;
            let lo = (-shift).clamp(0, l as isize) as usize;
            let hi = (l as isize - shift).clamp(0, l as isize) as usize;
            dst[..lo].fill(0.0);
            dst[hi.max(lo)..].fill(0.0);
            if lo < hi {
                let s0 = (lo as isize + shift) as usize;
                dst[lo..hi].copy_from_slice(&row[s0..s0 + (hi - lo)]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], c: usize, l: usize, k: usize, pad_left: usize, dx: &mut [f64], stride: usize, offset: usize) {
    for ci in 0..c {
        let row = &mut dx[ci * l..(ci + 1) * l];
        for kk in 0..k {
            let start = (ci * k + kk) * stride + offset;
            let src = &col[start..start + l];
            let shift = kk as isize - pad_left as isize;
            let lo = (-shift).clamp(0, l as isize) as usize;
            let hi = (l as isize - shift).clamp(0, l as isize) as usize;
            if lo < hi {
                let s0 = (lo as isize + shift) as usize;
                row[s0..s0 + (hi - lo)].iter_mut().zip(&src[lo..hi]).for_each(|(d, v)| *d += v);
            }
        }
    }
}

/// Result of a reverse pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    params: Vec<Option<Vec<f64>>>,
    nodes: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a parameter, `None` when it did not influence the loss or
    /// was frozen.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient of an intermediate or input value.
    pub fn var(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> &[Option<Vec<f64>>] {
        &self.params
    }

    /// Parameter gradients only, indexed by [`ParamId`].
    pub fn into_param_grads(self) -> Vec<Option<Vec<f64>>> {
        self.params
    }

    pub fn max_abs(&self) -> f64 {
        self.params
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
