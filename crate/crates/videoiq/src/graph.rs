//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! A [`Graph`] records one forward pass; [`Graph::backward`] replays it in
//! reverse and accumulates gradients into every trainable leaf. Graphs are
//! cheap, built per step and dropped afterwards. A graph is single-threaded;
//! independent graphs can live on different threads.
//!
//! Quantization surrogates ([`Graph::round_grid_ste`], [`Graph::pact`]) are
//! distinct op kinds so gradient checks can detect and exclude them: their
//! backward rules are straight-through conventions, not true derivatives.

use crate::error::{Error, Result};
use crate::kernels::{self, Conv2dGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
pub enum BnMode {
    /// Normalize with batch statistics (saved on the node for backward).
    Train,
    /// Normalize with the provided running statistics.
    Eval { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, f64),
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, geom: Conv2dGeom },
    AddRowVec(Var, Var),
    MulRowVec(Var, Var),
    AddChanBias(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    ClampMin(Var, f64),
    Clip { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    LogSoftmax(Var),
    RoundGridSte { x: Var },
    TruncGridSte { x: Var },
    Pact { x: Var, alpha: Var },
    AddBy { x: Var, s: Var },
    BatchNorm { x: Var, gamma: Var, beta: Var, eps: f64, train: bool },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SliceRows { x: Var, start: usize, end: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Var, Var),
    GatherRowCols { x: Var, cols: Vec<usize> },
    Abs(Var),
    AbsMax(Var),
    GlobalAvgPool(Var),
    Reshape(Var),
    ScaleBy { x: Var, s: Var },
    DivBy { x: Var, s: Var },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
    /// Batch statistics saved by a training-mode batch norm.
    bn_saved: Option<(Vec<f64>, Vec<f64>)>,
}

/// Dynamic computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// Row/column view of a 1-D or 2-D tensor: 1-D counts as a single row.
fn rows_cols(shape: &[usize], op: &'static str) -> Result<(usize, usize)> {
    match shape {
        [c] => Ok((1, *c)),
        [r, c] => Ok((*r, *c)),
        other => Err(Error::shape(op, format!("expected 1-D or 2-D, got {:?}", other))),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad, bn_saved: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf: receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { trainable: true }, value, true)
    }

    /// Non-trainable leaf (input data, frozen targets, noise).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf { trainable: false }, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last `backward` call. Trainable
    /// leaves that did not participate report a zero tensor.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Batch statistics (mean, var) saved by a training-mode batch norm node.
    pub fn bn_batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        self.nodes[v.0].bn_saved.as_ref().map(|(m, s)| (m.as_slice(), s.as_slice()))
    }

    /// True if any recorded op uses a straight-through surrogate gradient.
    pub fn has_surrogate_ops(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.op, Op::RoundGridSte { .. } | Op::TruncGridSte { .. } | Op::Pact { .. }))
    }

    // ── elementwise binary ──────────────────────────────────────────

    fn binary_same_shape(&mut self, op_name: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op_name, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, data)?, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), Tensor::new(shape, data)?, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, data)?, ng))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("div", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x / y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Div(a, b), Tensor::new(shape, data)?, ng))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let ng = self.needs(a);
        self.push(Op::AddScalar(a), value, ng)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let ng = self.needs(a);
        self.push(Op::MulScalar(a, c), value, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.mul_scalar(a, -1.0)
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let (m, k) = match sa[..] {
            [m, k] => (m, k),
            _ => return Err(Error::shape("matmul", format!("lhs {:?} not 2-D", sa))),
        };
        let (k2, n) = match sb[..] {
            [k2, n] => (k2, n),
            _ => return Err(Error::shape("matmul", format!("rhs {:?} not 2-D", sb))),
        };
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner dims {} vs {}", k, k2)));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, ng))
    }

    /// (N,C) + (C) broadcast over rows.
    pub fn add_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a).shape(), "add_row_vec")?;
        if self.value(v).shape() != [cols] {
            return Err(Error::shape(
                "add_row_vec",
                format!("{:?} + {:?}", self.value(a).shape(), self.value(v).shape()),
            ));
        }
        let vd = self.value(v).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += vd[c];
            }
        }
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a) || self.needs(v);
        Ok(self.push(Op::AddRowVec(a, v), Tensor::new(shape, data)?, ng))
    }

    /// (N,C) * (C) broadcast over rows.
    pub fn mul_row_vec(&mut self, a: Var, v: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a).shape(), "mul_row_vec")?;
        if self.value(v).shape() != [cols] {
            return Err(Error::shape(
                "mul_row_vec",
                format!("{:?} * {:?}", self.value(a).shape(), self.value(v).shape()),
            ));
        }
        let vd = self.value(v).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] *= vd[c];
            }
        }
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a) || self.needs(v);
        Ok(self.push(Op::MulRowVec(a, v), Tensor::new(shape, data)?, ng))
    }

    /// (N,C,H,W) + per-channel bias (C).
    pub fn add_chan_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        let [n, c, h, w] = match s[..] {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::shape("add_chan_bias", format!("input {:?} not 4-D", s))),
        };
        if self.value(bias).shape() != [c] {
            return Err(Error::shape(
                "add_chan_bias",
                format!("bias {:?} vs {} channels", self.value(bias).shape(), c),
            ));
        }
        let bd = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        let plane = h * w;
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * plane;
                for j in 0..plane {
                    data[base + j] += bd[ch];
                }
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(Op::AddChanBias(a, bias), Tensor::new(s, data)?, ng))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        let [n, ci, h, wd] = match sx[..] {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::shape("conv2d", format!("input {:?} not 4-D", sx))),
        };
        let [co, ci2, kh, kw] = match sw[..] {
            [co, ci, kh, kw] => [co, ci, kh, kw],
            _ => return Err(Error::shape("conv2d", format!("kernel {:?} not 4-D", sw))),
        };
        if ci != ci2 {
            return Err(Error::shape("conv2d", format!("in channels {} vs kernel {}", ci, ci2)));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * pad, wd + 2 * pad),
            ));
        }
        let geom = Conv2dGeom {
            batch: n,
            in_ch: ci,
            in_h: h,
            in_w: wd,
            out_ch: co,
            k_h: kh,
            k_w: kw,
            stride,
            pad,
        };
        let out = kernels::conv2d(self.value(x).data(), self.value(w).data(), &geom);
        let shape = vec![n, co, geom.out_h(), geom.out_w()];
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(Op::Conv2d { x, w, geom }, Tensor::new(shape, out)?, ng))
    }

    // ── activations and pointwise maps ──────────────────────────────

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(Op::Relu(a), value, ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.needs(a);
        self.push(Op::Tanh(a), value, ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), value, ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let ng = self.needs(a);
        self.push(Op::Log(a), value, ng)
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| x.max(floor));
        let ng = self.needs(a);
        self.push(Op::ClampMin(a, floor), value, ng)
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.needs(a);
        self.push(Op::Clip { x: a, lo, hi }, value, ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        let ng = self.needs(a);
        self.push(Op::Abs(a), value, ng)
    }

    // ── softmax family ──────────────────────────────────────────────

    /// Row-wise softmax over the last axis (1-D input = one row).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a).shape(), "softmax")?;
        let out = kernels::softmax_rows(self.value(a).data(), rows, cols);
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a);
        Ok(self.push(Op::Softmax(a), Tensor::new(shape, out)?, ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a).shape(), "log_softmax")?;
        let out = kernels::log_softmax_rows(self.value(a).data(), rows, cols);
        let shape = self.value(a).shape().to_vec();
        let ng = self.needs(a);
        Ok(self.push(Op::LogSoftmax(a), Tensor::new(shape, out)?, ng))
    }

    // ── quantization surrogates ─────────────────────────────────────

    /// Snap to the uniform grid `{k/levels}` with round-half-away-from-zero;
    /// backward treats the rounding as identity (straight-through).
    pub fn round_grid_ste(&mut self, a: Var, levels: u32) -> Var {
        let l = levels as f64;
        let value = self.value(a).map(|x| (x * l).round() / l);
        let ng = self.needs(a);
        self.push(Op::RoundGridSte { x: a }, value, ng)
    }

    /// Quantize `x` in [0,1] to the `from_bits` code grid, truncate the least
    /// significant `from_bits - to_bits` bits, and return the value on the
    /// `to_bits` grid. Backward is straight-through identity.
    pub fn trunc_grid_ste(&mut self, a: Var, from_bits: u32, to_bits: u32) -> Result<Var> {
        if to_bits > from_bits || to_bits == 0 {
            return Err(Error::InvalidArgument {
                op: "trunc_grid_ste",
                detail: format!("cannot truncate {from_bits}-bit codes to {to_bits} bits"),
            });
        }
        let from_levels = ((1u64 << from_bits) - 1) as f64;
        let to_levels = ((1u64 << to_bits) - 1) as f64;
        let shift = from_bits - to_bits;
        let value = self.value(a).map(|x| {
            let code = (x * from_levels).round() as u64;
            ((code >> shift) as f64) / to_levels
        });
        let ng = self.needs(a);
        Ok(self.push(Op::TruncGridSte { x: a }, value, ng))
    }

    /// Add a scalar variable to every element of a tensor.
    pub fn add_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape("add_by", format!("addend {:?} not scalar", self.value(s).shape())));
        }
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v + sv);
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(Op::AddBy { x, s }, value, ng))
    }

    /// Clipped activation `alpha * grid(clip(x,0,alpha)/alpha)`; `bits: None`
    /// clips without rounding (the full-precision path). Surrogate gradients:
    /// identity to `x` on (0, alpha), indicator `x >= alpha` to `alpha`.
    pub fn pact(&mut self, x: Var, alpha: Var, bits: Option<u32>) -> Result<Var> {
        if !self.value(alpha).is_scalar() {
            return Err(Error::shape(
                "pact",
                format!("alpha must be scalar, got {:?}", self.value(alpha).shape()),
            ));
        }
        let a = self.value(alpha).item();
        let levels = bits.map(|b| ((1u64 << b) - 1) as f64);
        let value = self.value(x).map(|v| {
            let c = v.clamp(0.0, a);
            match levels {
                Some(l) => a * ((c / a * l).round() / l),
                None => c,
            }
        });
        let ng = self.needs(x) || self.needs(alpha);
        Ok(self.push(Op::Pact { x, alpha }, value, ng))
    }

    // ── batch norm ──────────────────────────────────────────────────

    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: BnMode,
    ) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        let [n, c, h, w] = match s[..] {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::shape("batch_norm", format!("input {:?} not 4-D", s))),
        };
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "gamma {:?} / beta {:?} vs {} channels",
                    self.value(gamma).shape(),
                    self.value(beta).shape(),
                    c
                ),
            ));
        }
        let plane = h * w;
        let (mean, var, train) = match mode {
            BnMode::Train => {
                let (m, v) = kernels::batch_stats(self.value(x).data(), n, c, plane);
                (m, v, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("running stats len {} vs {} channels", mean.len(), c),
                    ));
                }
                (mean, var, false)
            }
        };
        let gd = self.value(gamma).data().to_vec();
        let bd = self.value(beta).data().to_vec();
        let out = kernels::batchnorm_inference(
            self.value(x).data(),
            n,
            c,
            plane,
            &mean,
            &var,
            &gd,
            &bd,
            eps,
        );
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(Op::BatchNorm { x, gamma, beta, eps, train }, Tensor::new(s, out)?, ng);
        self.nodes[v.0].bn_saved = Some((mean, var));
        Ok(v)
    }

    // ── reductions and reshapes ─────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(Op::Sum(a), value, ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let ng = self.needs(a);
        self.push(Op::Mean(a), value, ng)
    }

    /// (N,C) -> (1,C) column means.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a).shape(), "mean_rows")?;
        let d = self.value(a).data();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c] += d[r * cols + c];
            }
        }
        for o in out.iter_mut() {
            *o /= rows as f64;
        }
        let ng = self.needs(a);
        Ok(self.push(Op::MeanRows(a), Tensor::new(vec![1, cols], out)?, ng))
    }

    /// Scalar max |x|; backward routes to the first attaining element.
    pub fn abs_max(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).abs_max());
        let ng = self.needs(a);
        self.push(Op::AbsMax(a), value, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = rows_cols(self.value(a).shape(), "slice_rows")?;
        if start >= end || end > rows {
            return Err(Error::shape(
                "slice_rows",
                format!("range {}..{} of {} rows", start, end, rows),
            ));
        }
        let data = self.value(a).data()[start * cols..end * cols].to_vec();
        let ng = self.needs(a);
        Ok(self.push(
            Op::SliceRows { x: a, start, end },
            Tensor::new(vec![end - start, cols], data)?,
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs".to_string()));
        }
        let (_, cols) = rows_cols(self.value(parts[0]).shape(), "concat_rows")?;
        let mut data = Vec::new();
        let mut rows = 0;
        let mut ng = false;
        for &p in parts {
            let (r, c) = rows_cols(self.value(p).shape(), "concat_rows")?;
            if c != cols {
                return Err(Error::shape("concat_rows", format!("cols {} vs {}", c, cols)));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
            ng |= self.needs(p);
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), Tensor::new(vec![rows, cols], data)?, ng))
    }

    /// (N,A) ++ (N,B) -> (N,A+B).
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = rows_cols(self.value(a).shape(), "concat_cols")?;
        let (rb, cb) = rows_cols(self.value(b).shape(), "concat_cols")?;
        if ra != rb {
            return Err(Error::shape("concat_cols", format!("rows {} vs {}", ra, rb)));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::ConcatCols(a, b), Tensor::new(vec![ra, ca + cb], data)?, ng))
    }

    /// Pick one column per row: (N,C) with cols (len N) -> (N,).
    pub fn gather_row_cols(&mut self, a: Var, cols: Vec<usize>) -> Result<Var> {
        let (rows, c) = rows_cols(self.value(a).shape(), "gather_row_cols")?;
        if cols.len() != rows {
            return Err(Error::shape(
                "gather_row_cols",
                format!("{} indices for {} rows", cols.len(), rows),
            ));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::shape("gather_row_cols", format!("column {} of {}", bad, c)));
        }
        let d = self.value(a).data();
        let data: Vec<f64> = cols.iter().enumerate().map(|(r, &j)| d[r * c + j]).collect();
        let ng = self.needs(a);
        Ok(self.push(Op::GatherRowCols { x: a, cols }, Tensor::from_vec(data), ng))
    }

    /// (N,C,H,W) -> (N,C) spatial means.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape().to_vec();
        let [n, c, h, w] = match s[..] {
            [n, c, h, w] => [n, c, h, w],
            _ => return Err(Error::shape("global_avg_pool", format!("input {:?} not 4-D", s))),
        };
        let out = kernels::global_avg_pool(self.value(a).data(), n, c, h * w);
        let ng = self.needs(a);
        Ok(self.push(Op::GlobalAvgPool(a), Tensor::new(vec![n, c], out)?, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let ng = self.needs(a);
        Ok(self.push(Op::Reshape(a), value, ng))
    }

    /// Multiply a tensor by a scalar variable.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape("scale_by", format!("scale {:?} not scalar", self.value(s).shape())));
        }
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v * sv);
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(Op::ScaleBy { x, s }, value, ng))
    }

    /// Divide a tensor by a scalar variable.
    pub fn div_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if !self.value(s).is_scalar() {
            return Err(Error::shape("div_by", format!("divisor {:?} not scalar", self.value(s).shape())));
        }
        let sv = self.value(s).item();
        let value = self.value(x).map(|v| v / sv);
        let ng = self.needs(x) || self.needs(s);
        Ok(self.push(Op::DivBy { x, s }, value, ng))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Populates gradients of every trainable leaf with d(loss)/d(leaf).
    /// Trainable leaves the loss does not depend on get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad && !matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue;
            }
            self.backprop_node(id, &dy, &mut grads);
            // Leaf gradients stay in place for readout.
            if matches!(self.nodes[id].op, Op::Leaf { trainable: true }) {
                grads[id] = Some(dy);
            }
        }

        // Non-participating trainable leaves get explicit zeros.
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { trainable: true }) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].needs_grad && !matches!(self.nodes[v.0].op, Op::Leaf { trainable: true }) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                debug_assert_eq!(g.shape(), delta.shape());
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, id: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                self.accum(grads, a, dy.clone());
                self.accum(grads, b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, a, dy.clone());
                self.accum(grads, b, dy.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let da = self.ew2(dy, self.value(b), |g, y| g * y);
                let db = self.ew2(dy, self.value(a), |g, x| g * x);
                self.accum(grads, a, da);
                self.accum(grads, b, db);
            }
            Op::Div(a, b) => {
                let bv = self.value(b);
                let da = self.ew2(dy, bv, |g, y| g / y);
                let av = self.value(a);
                let mut db = dy.clone();
                for ((g, &x), &y) in db.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                    *g = -*g * x / (y * y);
                }
                self.accum(grads, a, da);
                self.accum(grads, b, db);
            }
            Op::AddScalar(a) => self.accum(grads, a, dy.clone()),
            Op::MulScalar(a, c) => self.accum(grads, a, dy.map(|x| x * c)),
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.value(a).shape();
                    (s[0], s[1])
                };
                let n = self.value(b).shape()[1];
                let mut da = vec![0.0; m * k];
                kernels::matmul_a_bt_acc(dy.data(), self.value(b).data(), m, n, k, &mut da);
                let mut db = vec![0.0; k * n];
                kernels::matmul_at_b_acc(self.value(a).data(), dy.data(), m, k, n, &mut db);
                self.accum(grads, a, Tensor::new(vec![m, k], da).unwrap());
                self.accum(grads, b, Tensor::new(vec![k, n], db).unwrap());
            }
            Op::Conv2d { x, w, geom } => {
                let mut dx = vec![0.0; self.value(x).len()];
                let mut dw = vec![0.0; self.value(w).len()];
                kernels::conv2d_backward(
                    self.value(x).data(),
                    self.value(w).data(),
                    dy.data(),
                    &geom,
                    &mut dx,
                    &mut dw,
                );
                self.accum(grads, x, Tensor::new(self.value(x).shape().to_vec(), dx).unwrap());
                self.accum(grads, w, Tensor::new(self.value(w).shape().to_vec(), dw).unwrap());
            }
            Op::AddRowVec(a, v) => {
                let (rows, cols) = rows_cols(self.value(a).shape(), "add_row_vec").unwrap();
                self.accum(grads, a, dy.clone());
                let mut dv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dv[c] += dy.data()[r * cols + c];
                    }
                }
                self.accum(grads, v, Tensor::from_vec(dv));
            }
            Op::MulRowVec(a, v) => {
                let (rows, cols) = rows_cols(self.value(a).shape(), "mul_row_vec").unwrap();
                let vd = self.value(v).data();
                let ad = self.value(a).data();
                let mut da = dy.clone();
                let mut dv = vec![0.0; cols];
                for r in 0..rows {
                    for c in 0..cols {
                        let g = dy.data()[r * cols + c];
                        da.data_mut()[r * cols + c] = g * vd[c];
                        dv[c] += g * ad[r * cols + c];
                    }
                }
                self.accum(grads, a, da);
                self.accum(grads, v, Tensor::from_vec(dv));
            }
            Op::AddChanBias(a, bias) => {
                let s = self.value(a).shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                self.accum(grads, a, dy.clone());
                let mut db = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * plane;
                        for j in 0..plane {
                            db[ch] += dy.data()[base + j];
                        }
                    }
                }
                self.accum(grads, bias, Tensor::from_vec(db));
            }
            Op::Relu(a) => {
                let d = self.ew2(dy, self.value(a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.accum(grads, a, d);
            }
            Op::Tanh(a) => {
                let d = self.ew2(dy, &self.nodes[id].value, |g, y| g * (1.0 - y * y));
                self.accum(grads, a, d);
            }
            Op::Sigmoid(a) => {
                let d = self.ew2(dy, &self.nodes[id].value, |g, y| g * y * (1.0 - y));
                self.accum(grads, a, d);
            }
            Op::Log(a) => {
                let d = self.ew2(dy, self.value(a), |g, x| g / x);
                self.accum(grads, a, d);
            }
            Op::ClampMin(a, floor) => {
                let d = self.ew2(dy, self.value(a), |g, x| if x > floor { g } else { 0.0 });
                self.accum(grads, a, d);
            }
            Op::Clip { x, lo, hi } => {
                let d = self.ew2(dy, self.value(x), |g, v| if v > lo && v < hi { g } else { 0.0 });
                self.accum(grads, x, d);
            }
            Op::Abs(a) => {
                let d = self.ew2(dy, self.value(a), |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                });
                self.accum(grads, a, d);
            }
            Op::Softmax(a) => {
                let y = &self.nodes[id].value;
                let (rows, cols) = rows_cols(y.shape(), "softmax").unwrap();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &dy.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).fold(0.0, |acc, (&yv, &gv)| acc + yv * gv);
                    for c in 0..cols {
                        dx[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                self.accum(grads, a, Tensor::new(y.shape().to_vec(), dx).unwrap());
            }
            Op::LogSoftmax(a) => {
                let y = &self.nodes[id].value;
                let (rows, cols) = rows_cols(y.shape(), "log_softmax").unwrap();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &dy.data()[r * cols..(r + 1) * cols];
                    let gsum: f64 = gr.iter().fold(0.0, |acc, &g| acc + g);
                    for c in 0..cols {
                        dx[r * cols + c] = gr[c] - yr[c].exp() * gsum;
                    }
                }
                self.accum(grads, a, Tensor::new(y.shape().to_vec(), dx).unwrap());
            }
            Op::RoundGridSte { x, .. } | Op::TruncGridSte { x, .. } => {
                // Straight-through: rounding/truncation treated as identity.
                self.accum(grads, x, dy.clone());
            }
            Op::AddBy { x, s } => {
                self.accum(grads, x, dy.clone());
                self.accum(grads, s, Tensor::scalar(dy.sum()));
            }
            Op::Pact { x, alpha } => {
                let av = self.value(alpha).item();
                let xv = self.value(x);
                let dx = self.ew2(dy, xv, |g, v| if v > 0.0 && v < av { g } else { 0.0 });
                let mut dalpha = 0.0;
                for (&g, &v) in dy.data().iter().zip(xv.data()) {
                    if v >= av {
                        dalpha += g;
                    }
                }
                self.accum(grads, x, dx);
                self.accum(grads, alpha, Tensor::scalar(dalpha));
            }
            Op::BatchNorm { x, gamma, beta, eps, train } => {
                let s = self.value(x).shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let (mean, var) = self.nodes[id].bn_saved.as_ref().unwrap();
                let gd = self.value(gamma).data();
                let xd = self.value(x).data();
                let m = (n * plane) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; xd.len()];
                for ch in 0..c {
                    let inv_std = 1.0 / (var[ch] + eps).sqrt();
                    let mut sum_dy = 0.0;
                    let mut sum_dy_xhat = 0.0;
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for j in 0..plane {
                            let g = dy.data()[base + j];
                            let xhat = (xd[base + j] - mean[ch]) * inv_std;
                            sum_dy += g;
                            sum_dy_xhat += g * xhat;
                        }
                    }
                    dgamma[ch] = sum_dy_xhat;
                    dbeta[ch] = sum_dy;
                    let k = gd[ch] * inv_std;
                    for i in 0..n {
                        let base = (i * c + ch) * plane;
                        for j in 0..plane {
                            let g = dy.data()[base + j];
                            if train {
                                let xhat = (xd[base + j] - mean[ch]) * inv_std;
                                dx[base + j] =
                                    k * (g - sum_dy / m - xhat * sum_dy_xhat / m);
                            } else {
                                dx[base + j] = k * g;
                            }
                        }
                    }
                }
                self.accum(grads, x, Tensor::new(s.to_vec(), dx).unwrap());
                self.accum(grads, gamma, Tensor::from_vec(dgamma));
                self.accum(grads, beta, Tensor::from_vec(dbeta));
            }
            Op::Sum(a) => {
                let g = dy.item();
                self.accum(grads, a, Tensor::full(self.value(a).shape(), g));
            }
            Op::Mean(a) => {
                let g = dy.item() / self.value(a).len() as f64;
                self.accum(grads, a, Tensor::full(self.value(a).shape(), g));
            }
            Op::MeanRows(a) => {
                let (rows, cols) = rows_cols(self.value(a).shape(), "mean_rows").unwrap();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        dx[r * cols + c] = dy.data()[c] / rows as f64;
                    }
                }
                self.accum(grads, a, Tensor::new(self.value(a).shape().to_vec(), dx).unwrap());
            }
            Op::AbsMax(a) => {
                let xd = self.value(a).data();
                let mut best = 0usize;
                let mut bv = -1.0;
                for (i, &x) in xd.iter().enumerate() {
                    if x.abs() > bv {
                        bv = x.abs();
                        best = i;
                    }
                }
                let mut dx = vec![0.0; xd.len()];
                dx[best] = dy.item() * xd[best].signum();
                self.accum(grads, a, Tensor::new(self.value(a).shape().to_vec(), dx).unwrap());
            }
            Op::SliceRows { x, start, end } => {
                let (rows, cols) = rows_cols(self.value(x).shape(), "slice_rows").unwrap();
                let mut dx = vec![0.0; rows * cols];
                dx[start * cols..end * cols].copy_from_slice(dy.data());
                self.accum(grads, x, Tensor::new(self.value(x).shape().to_vec(), dx).unwrap());
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in &parts {
                    let len = self.value(p).len();
                    let d = dy.data()[offset..offset + len].to_vec();
                    offset += len;
                    self.accum(grads, p, Tensor::new(self.value(p).shape().to_vec(), d).unwrap());
                }
            }
            Op::ConcatCols(a, b) => {
                let (ra, ca) = rows_cols(self.value(a).shape(), "concat_cols").unwrap();
                let cb = rows_cols(self.value(b).shape(), "concat_cols").unwrap().1;
                let mut da = vec![0.0; ra * ca];
                let mut db = vec![0.0; ra * cb];
                for r in 0..ra {
                    let row = &dy.data()[r * (ca + cb)..(r + 1) * (ca + cb)];
                    da[r * ca..(r + 1) * ca].copy_from_slice(&row[..ca]);
                    db[r * cb..(r + 1) * cb].copy_from_slice(&row[ca..]);
                }
                self.accum(grads, a, Tensor::new(self.value(a).shape().to_vec(), da).unwrap());
                self.accum(grads, b, Tensor::new(self.value(b).shape().to_vec(), db).unwrap());
            }
            Op::GatherRowCols { x, cols } => {
                let (rows, c) = rows_cols(self.value(x).shape(), "gather_row_cols").unwrap();
                let mut dx = vec![0.0; rows * c];
                for (r, &j) in cols.iter().enumerate() {
                    dx[r * c + j] = dy.data()[r];
                }
                self.accum(grads, x, Tensor::new(self.value(x).shape().to_vec(), dx).unwrap());
            }
            Op::GlobalAvgPool(a) => {
                let s = self.value(a).shape();
                let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                let mut dx = vec![0.0; n * c * plane];
                for i in 0..n {
                    for ch in 0..c {
                        let g = dy.data()[i * c + ch] / plane as f64;
                        let base = (i * c + ch) * plane;
                        for j in 0..plane {
                            dx[base + j] = g;
                        }
                    }
                }
                self.accum(grads, a, Tensor::new(s.to_vec(), dx).unwrap());
            }
            Op::Reshape(a) => {
                let d = Tensor::new(self.value(a).shape().to_vec(), dy.data().to_vec()).unwrap();
                self.accum(grads, a, d);
            }
            Op::ScaleBy { x, s } => {
                let sv = self.value(s).item();
                let dx = dy.map(|g| g * sv);
                let mut ds = 0.0;
                for (&g, &xv) in dy.data().iter().zip(self.value(x).data()) {
                    ds += g * xv;
                }
                self.accum(grads, x, dx);
                self.accum(grads, s, Tensor::scalar(ds));
            }
            Op::DivBy { x, s } => {
                let sv = self.value(s).item();
                let dx = dy.map(|g| g / sv);
                let mut ds = 0.0;
                for (&g, &xv) in dy.data().iter().zip(self.value(x).data()) {
                    ds += g * xv;
                }
                self.accum(grads, x, dx);
                self.accum(grads, s, Tensor::scalar(-ds / (sv * sv)));
            }
        }
    }

    /// dy combined elementwise with a same-shape reference tensor.
    fn ew2(&self, dy: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = dy.data().iter().zip(other.data()).map(|(&g, &o)| f(g, o)).collect();
        Tensor::new(dy.shape().to_vec(), data).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x^2), x=[1,2,3] -> grad [2,4,6]
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_of_mean() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, -1.0, 2.5, 0.0]));
        let loss = g.mean(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        let unused = g.param(Tensor::from_vec(vec![5.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(unused).unwrap().data(), &[0.0]);
    }

    #[test]
    fn softmax_cross_entropy_grad_is_probs_minus_onehot() {
        // logits [1,0], label 0: grad = softmax - onehot.
        let mut g = Graph::new();
        let logits = g.param(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let p = g.softmax(logits).unwrap();
        let picked = g.gather_row_cols(p, vec![0]).unwrap();
        let lp = g.log(picked);
        let m = g.mean(lp);
        let loss = g.neg(m);
        g.backward(loss).unwrap();
        let gd = g.grad(logits).unwrap().data().to_vec();
        let p0 = 1.0f64.exp() / (1.0f64.exp() + 1.0);
        assert!((gd[0] - (p0 - 1.0)).abs() < 1e-12);
        assert!((gd[1] - (1.0 - p0)).abs() < 1e-12);
        assert!((gd[0] + 0.268941421).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_names_op_and_dims() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let b = g.constant(Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn batchnorm_with_identity_stats_is_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2, 2, 2], (0..8).map(|i| i as f64 - 3.0).collect()).unwrap());
        let gamma = g.constant(Tensor::from_vec(vec![1.0, 1.0]));
        let beta = g.constant(Tensor::from_vec(vec![0.0, 0.0]));
        let y = g
            .batch_norm(x, gamma, beta, 0.0, BnMode::Eval { mean: vec![0.0, 0.0], var: vec![1.0, 1.0] })
            .unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn surrogate_ops_are_detectable() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![0.3]));
        assert!(!g.has_surrogate_ops());
        let _ = g.round_grid_ste(x, 3);
        assert!(g.has_surrogate_ops());
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            let mut g = Graph::new();
            let x = g.param(Tensor::from_vec(vec![0.5, -1.25, 2.0, 0.125]));
            let t = g.tanh(x);
            let s = g.sigmoid(t);
            let m = g.mul(s, t).unwrap();
            let loss = g.sum(m);
            g.backward(loss).unwrap();
            (g.value(loss).item(), g.grad(x).unwrap().data().to_vec())
        };
        assert_eq!(run(), run());
    }
}
