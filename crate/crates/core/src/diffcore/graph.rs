//! Tape of primitive tensor ops with reverse-mode adjoints.

use super::conv::{self, ConvGeom};
use super::scalar::gemm_rm;
use super::{ParamStore, Real, Tensor};
use crate::error::{dim_err, Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddChannelBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    LogSumExp(Var),
    LogSumExpRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    Conv2d(Var, Var, ConvGeom),
    ConvTranspose2d(Var, Var, ConvGeom),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Constant | Op::Param(_) => Vec::new(),
            &Op::MatMul { a, b, .. } => vec![a, b],
            &Op::Add(a, b)
            | &Op::Sub(a, b)
            | &Op::Mul(a, b)
            | &Op::AddRow(a, b)
            | &Op::AddChannelBias(a, b)
            | &Op::Conv2d(a, b, _)
            | &Op::ConvTranspose2d(a, b, _) => vec![a, b],
            &Op::Scale(a, _)
            | &Op::AddScalar(a)
            | &Op::Tanh(a)
            | &Op::Elu(a)
            | &Op::Exp(a)
            | &Op::Log(a)
            | &Op::Square(a)
            | &Op::Clamp(a, ..)
            | &Op::SumAll(a)
            | &Op::MeanAll(a)
            | &Op::SumCols(a)
            | &Op::LogSumExp(a)
            | &Op::LogSumExpRows(a)
            | &Op::SliceCols(a, _)
            | &Op::SliceRows(a, _)
            | &Op::Reshape(a) => vec![a],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::AddChannelBias(..) => "add_channel_bias",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(_) => "tanh",
            Op::Elu(_) => "elu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Clamp(..) => "clamp",
            Op::SumAll(_) => "sum",
            Op::MeanAll(_) => "mean",
            Op::SumCols(_) => "sum_cols",
            Op::LogSumExp(_) => "logsumexp",
            Op::LogSumExpRows(_) => "logsumexp_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::SliceRows(..) => "slice_rows",
            Op::Reshape(_) => "reshape",
            Op::Conv2d(..) => "conv2d",
            Op::ConvTranspose2d(..) => "conv_transpose2d",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    /// Some parameter lies upstream, so `backward` must reach this node.
    needs_grad: bool,
    /// Forward intermediates reused by the adjoint (im2col columns of a conv).
    saved: Vec<T>,
}

/// Records a computation so that [`Graph::backward`] can replay its adjoints.
///
/// Nodes are appended in evaluation order, which is already a topological order.
/// A graph that is never differentiated is simply dropped, so the same type serves
/// plain forward evaluation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node, widened to f64.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item().as_f64()
    }

    fn push(&mut self, value: Tensor<T>, op: Op) -> Result<Var> {
        self.push_saved(value, op, Vec::new())
    }

    fn push_saved(&mut self, value: Tensor<T>, op: Op, saved: Vec<T>) -> Result<Var> {
        let value = value.check_finite(op.name())?;
        let needs_grad = match op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            saved,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Constant)
    }

    /// Binds a parameter of `store`; its gradient is accumulated there by `backward`.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let idx = store.index_of(name)?;
        let value = store.by_index(idx).1.value.clone();
        self.push(value, Op::Param(idx))
    }

    // --- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let (ar, ac) = self.value(a).dims2()?;
        let (br, bc) = self.value(b).dims2()?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(dim_err!(
                "matmul inner extents differ: {:?}{} x {:?}{}",
                self.shape(a),
                if ta { "ᵀ" } else { "" },
                self.shape(b),
                if tb { "ᵀ" } else { "" }
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_rm(
            m,
            k,
            n,
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            &mut out,
            false,
        );
        self.push(Tensor::new(&[m, n], out)?, Op::MatMul { a, b, ta, tb })
    }

    // --- elementwise ----------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds vector `b` (length = last extent of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(b) != [n] {
            return Err(dim_err!(
                "add_row: bias {:?} does not match rows of {:?}",
                self.shape(b),
                self.shape(x)
            ));
        }
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(n) {
            for (r, &bb) in row.iter_mut().zip(&bias) {
                *r += bb;
            }
        }
        self.push(v, Op::AddRow(x, b))
    }

    /// Adds `b[c]` to every element of channel `c` of an `N×C×H×W` tensor.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [_, c, h, w] = *self.shape(x) else {
            return Err(dim_err!("add_channel_bias expects N×C×H×W, got {:?}", self.shape(x)));
        };
        if self.shape(b) != [c] {
            return Err(dim_err!("add_channel_bias: bias {:?} vs {c} channels", self.shape(b)));
        }
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, plane) in v.data_mut().chunks_mut(h * w).enumerate() {
            let bb = bias[i % c];
            plane.iter_mut().for_each(|p| *p += bb);
        }
        self.push(v, Op::AddChannelBias(x, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let st = T::from_f64(s);
        let v = self.value(a).map(|x| x * st);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let st = T::from_f64(s);
        let v = self.value(a).map(|x| x + st);
        self.push(v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh(a))
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let v = self
            .value(a)
            .map(T::elu);
        self.push(v, Op::Elu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        let v = self.value(a).map(|x| x.max(l).min(h));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    // --- reductions -----------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(dim_err!("mean of an empty tensor"));
        }
        let v = Tensor::scalar(self.value(a).sum() / T::from_f64(n as f64));
        self.push(v, Op::MeanAll(a))
    }

    /// Row sums of an `m×n` matrix, giving a length-`m` vector.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        let data = self.value(a).data();
        let v: Vec<T> = (0..m).map(|i| data[i * n..(i + 1) * n].iter().copied().sum()).collect();
        self.push(Tensor::vector(v), Op::SumCols(a))
    }

    /// Shift-stable log-sum-exp of a vector.
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(dim_err!("logsumexp expects a vector, got {:?}", self.shape(a)));
        }
        let v = super::tensor::logsumexp(self.value(a).data())?;
        self.push(Tensor::scalar(v), Op::LogSumExp(a))
    }

    /// Log-sum-exp of each row of a matrix.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if n == 0 {
            return Err(dim_err!("logsumexp_rows over zero columns"));
        }
        let data = self.value(a).data();
        let v = (0..m)
            .map(|i| super::tensor::logsumexp(&data[i * n..(i + 1) * n]))
            .collect::<Result<Vec<_>>>()?;
        self.push(Tensor::vector(v), Op::LogSumExpRows(a))
    }

    // --- structural -----------------------------------------------------

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(dim_err!("concat_cols of nothing"));
        }
        let rows = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(dim_err!(
                    "concat_cols: {:?} has {r} rows, expected {rows}",
                    self.shape(p)
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        self.push(Tensor::new(&[rows, total], out)?, Op::ConcatCols(parts.to_vec()))
    }

    /// Leading-axis concatenation of tensors whose trailing extents agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(dim_err!("concat_rows of nothing"));
        }
        let first = self.shape(parts[0]).to_vec();
        if first.is_empty() {
            return Err(dim_err!("concat_rows of scalars"));
        }
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[1..] != first[1..] {
                return Err(dim_err!("concat_rows: {:?} does not stack with {:?}", s, first));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = first;
        shape[0] = rows;
        self.push(Tensor::new(&shape, out)?, Op::ConcatRows(parts.to_vec()))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2()?;
        if start > end || end > n {
            return Err(dim_err!("slice_cols {start}..{end} out of range for {:?}", self.shape(a)));
        }
        let data = self.value(a).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&data[i * n + start..i * n + end]);
        }
        self.push(Tensor::new(&[m, end - start], out)?, Op::SliceCols(a, start))
    }

    /// Leading-axis slice `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some(&rows) = shape.first() else {
            return Err(dim_err!("slice_rows of a scalar"));
        };
        if start > end || end > rows {
            return Err(dim_err!("slice_rows {start}..{end} out of range for {shape:?}"));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(a).data()[start * inner..end * inner].to_vec();
        let mut s = shape;
        s[0] = end - start;
        self.push(Tensor::new(&s, data)?, Op::SliceRows(a, start))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push(v, Op::Reshape(a))
    }

    // --- convolution ----------------------------------------------------

    /// Valid cross-correlation of `N×C×H×W` input with `Co×C×k×k` kernels.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        if self.shape(x).len() != 4 {
            return Err(dim_err!("graph conv2d expects N×C×H×W, got {:?}", self.shape(x)));
        }
        let g = ConvGeom::new(self.shape(x), self.shape(k), stride)?;
        let cols = conv::im2col(&g, self.value(x).data());
        let out = conv::conv_forward_cols(&g, &cols, self.value(k).data());
        let keep = if self.needs(k) { cols } else { Vec::new() };
        self.push_saved(Tensor::new(&[g.n, g.c_out, g.ho, g.wo], out)?, Op::Conv2d(x, k, g), keep)
    }

    /// Transposed convolution: the adjoint of a valid `conv2d` whose input is
    /// `N×Co×out_h×out_w`. `x` is `N×Ci×H×W`, `k` is `Ci×Co×k×k`, and `out_h`
    /// must satisfy `(out_h - k) / stride + 1 == H` (likewise for widths).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        let [n, ci, h, w] = *self.shape(x) else {
            return Err(dim_err!("conv_transpose2d expects N×C×H×W, got {:?}", self.shape(x)));
        };
        let [kci, co, kh, kw] = *self.shape(k) else {
            return Err(dim_err!("conv_transpose2d kernel must be 4-D"));
        };
        if kci != ci {
            return Err(dim_err!(
                "conv_transpose2d kernel {:?} vs input {:?}",
                self.shape(k),
                self.shape(x)
            ));
        }
        // geometry of the forward conv this op is the adjoint of
        let g = ConvGeom::new(&[n, co, out_h, out_w], &[ci, co, kh, kw], stride)?;
        if g.ho != h || g.wo != w {
            return Err(dim_err!(
                "conv_transpose2d: output {out_h}×{out_w} with k={kh}, stride={stride} maps back to {}×{}, not {h}×{w}",
                g.ho,
                g.wo
            ));
        }
        let x_cm = conv::batch_to_channel_major(self.value(x).data(), n, ci, h * w);
        let mut cols = vec![T::zero(); g.patch_len() * g.out_pixels()];
        gemm_rm(
            g.patch_len(),
            ci,
            g.out_pixels(),
            self.value(k).data(),
            true,
            &x_cm,
            false,
            &mut cols,
            false,
        );
        let mut out = vec![T::zero(); g.input_len()];
        conv::col2im(&g, &cols, &mut out);
        self.push(Tensor::new(&[n, co, out_h, out_w], out)?, Op::ConvTranspose2d(x, k, g))
    }

    // --- composites -----------------------------------------------------

    /// `x · w + b` for a batch of row vectors.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    // --- reverse pass ---------------------------------------------------

    /// Accumulates `∂loss/∂param` into `store` for every parameter bound to this graph.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.all_finite() {
                return Err(Error::NonFinite {
                    op: format!("backward of {}", node.op.name()),
                });
            }
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut send = |v: Var, t: Tensor<T>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(idx) => store.grad_by_index_mut(*idx).add_assign(&g),
                &Op::MatMul { a, b, ta, tb } => {
                    let av = self.value(a);
                    let bv = self.value(b);
                    let (m, n) = g.dims2()?;
                    let k = if ta { av.shape()[0] } else { av.shape()[1] };
                    // C = op(A) op(B); dop(A) = G op(B)ᵀ, dop(B) = op(A)ᵀ G
                    if self.needs(a) {
                        let mut ga = vec![T::zero(); av.len()];
                        if ta {
                            // dA = op(B) Gᵀ, shape k×m
                            gemm_rm(k, n, m, bv.data(), tb, g.data(), true, &mut ga, false);
                        } else {
                            gemm_rm(m, n, k, g.data(), false, bv.data(), !tb, &mut ga, false);
                        }
                        send(a, Tensor::new(av.shape(), ga)?);
                    }
                    if self.needs(b) {
                        let mut gb = vec![T::zero(); bv.len()];
                        if tb {
                            // dB = Gᵀ op(A), shape n×k
                            gemm_rm(n, m, k, g.data(), true, av.data(), ta, &mut gb, false);
                        } else {
                            gemm_rm(k, m, n, av.data(), !ta, g.data(), false, &mut gb, false);
                        }
                        send(b, Tensor::new(bv.shape(), gb)?);
                    }
                }
                &Op::Add(a, b) => {
                    send(b, g.clone());
                    send(a, g);
                }
                &Op::Sub(a, b) => {
                    send(b, g.map(|x| -x));
                    send(a, g);
                }
                &Op::Mul(a, b) => {
                    send(a, g.zip_map(self.value(b), |x, y| x * y));
                    send(b, g.zip_map(self.value(a), |x, y| x * y));
                }
                &Op::AddRow(x, b) => {
                    let n = self.shape(b)[0];
                    let mut gb = vec![T::zero(); n];
                    for row in g.data().chunks(n) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(b, Tensor::vector(gb));
                    send(x, g);
                }
                &Op::AddChannelBias(x, b) => {
                    let s = self.shape(x);
                    let (c, hw) = (s[1], s[2] * s[3]);
                    let mut gb = vec![T::zero(); c];
                    for (i, plane) in g.data().chunks(hw).enumerate() {
                        gb[i % c] += plane.iter().copied().sum::<T>();
                    }
                    send(b, Tensor::vector(gb));
                    send(x, g);
                }
                &Op::Scale(a, s) => {
                    let st = T::from_f64(s);
                    send(a, g.map(|x| x * st));
                }
                &Op::AddScalar(a) => send(a, g),
                &Op::Tanh(a) => {
                    send(a, g.zip_map(&node.value, |gi, y| gi * (T::one() - y * y)));
                }
                &Op::Elu(a) => {
                    let d = self
                        .value(a)
                        .zip_map(&node.value, |x, y| if x > T::zero() { T::one() } else { y + T::one() });
                    send(a, d.zip_map(&g, |di, gi| gi * di));
                }
                &Op::Exp(a) => send(a, g.zip_map(&node.value, |gi, y| gi * y)),
                &Op::Log(a) => send(a, g.zip_map(self.value(a), |gi, x| gi / x)),
                &Op::Square(a) => {
                    let two = T::from_f64(2.0);
                    send(a, g.zip_map(self.value(a), |gi, x| two * gi * x));
                }
                &Op::Clamp(a, lo, hi) => {
                    let (l, h) = (T::from_f64(lo), T::from_f64(hi));
                    send(
                        a,
                        g.zip_map(self.value(a), |gi, x| if x > l && x < h { gi } else { T::zero() }),
                    );
                }
                &Op::SumAll(a) => send(a, Tensor::filled(self.shape(a), g.item())),
                &Op::MeanAll(a) => {
                    let n = T::from_f64(self.value(a).len() as f64);
                    send(a, Tensor::filled(self.shape(a), g.item() / n));
                }
                &Op::SumCols(a) => {
                    let (m, n) = self.value(a).dims2()?;
                    let mut out = Vec::with_capacity(m * n);
                    for &gi in g.data() {
                        out.extend(std::iter::repeat_n(gi, n));
                    }
                    send(a, Tensor::new(&[m, n], out)?);
                }
                &Op::LogSumExp(a) => {
                    let y = node.value.item();
                    let gi = g.item();
                    send(a, self.value(a).map(|x| gi * (x - y).exp()));
                }
                &Op::LogSumExpRows(a) => {
                    let (m, n) = self.value(a).dims2()?;
                    let x = self.value(a).data();
                    let mut out = Vec::with_capacity(m * n);
                    for i in 0..m {
                        let (y, gi) = (node.value.data()[i], g.data()[i]);
                        out.extend(x[i * n..(i + 1) * n].iter().map(|&v| gi * (v - y).exp()));
                    }
                    send(a, Tensor::new(&[m, n], out)?);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = g.dims2()?;
                    let mut off = 0;
                    for &p in parts {
                        let w = self.shape(p)[1];
                        let mut out = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            out.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                        }
                        off += w;
                        send(p, Tensor::new(&[rows, w], out)?);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        let t = Tensor::new(self.shape(p), g.data()[off..off + n].to_vec())?;
                        off += n;
                        send(p, t);
                    }
                }
                &Op::SliceCols(a, start) => {
                    let (m, n) = self.value(a).dims2()?;
                    let w = g.shape()[1];
                    let mut out = Tensor::zeros(&[m, n]);
                    for r in 0..m {
                        out.data_mut()[r * n + start..r * n + start + w]
                            .copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                    }
                    send(a, out);
                }
                &Op::SliceRows(a, start) => {
                    let shape = self.shape(a);
                    let inner: usize = shape[1..].iter().product();
                    let mut out = Tensor::zeros(shape);
                    out.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                    send(a, out);
                }
                &Op::Reshape(a) => {
                    let s = self.shape(a).to_vec();
                    send(a, g.reshape(&s)?);
                }
                &Op::Conv2d(x, k, geom) => {
                    let (gx, gk) = conv::conv_backward_cols(
                        &geom,
                        self.needs(k).then_some(node.saved.as_slice()),
                        self.value(k).data(),
                        g.data(),
                        self.needs(x),
                    );
                    if let Some(gx) = gx {
                        send(x, Tensor::new(self.shape(x), gx)?);
                    }
                    if let Some(gk) = gk {
                        send(k, Tensor::new(self.shape(k), gk)?);
                    }
                }
                &Op::ConvTranspose2d(x, k, geom) => {
                    // forward: out = col2im(Kᵀ x); adjoint: cols = im2col(g)
                    let cols = conv::im2col(&geom, g.data());
                    let ci = geom.c_out;
                    let hw = geom.ho * geom.wo;
                    let x_cm = conv::batch_to_channel_major(self.value(x).data(), geom.n, ci, hw);
                    let mut gx_cm = vec![T::zero(); ci * geom.out_pixels()];
                    gemm_rm(
                        ci,
                        geom.patch_len(),
                        geom.out_pixels(),
                        self.value(k).data(),
                        false,
                        &cols,
                        false,
                        &mut gx_cm,
                        false,
                    );
                    let gx = conv::channel_major_to_batch(&gx_cm, geom.n, ci, hw);
                    let mut gk = vec![T::zero(); ci * geom.patch_len()];
                    gemm_rm(
                        ci,
                        geom.out_pixels(),
                        geom.patch_len(),
                        &x_cm,
                        false,
                        &cols,
                        true,
                        &mut gk,
                        false,
                    );
                    send(x, Tensor::new(self.shape(x), gx)?);
                    send(k, Tensor::new(self.shape(k), gk)?);
                }
            }
        }
        Ok(())
    }
}
