use std::rc::Rc;

use crate::error::{shape_err, AutodiffError, Result};
use crate::kernels;
use crate::tensor::Tensor;
use crate::BCE_CLAMP;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// User-supplied backward rule for [`Graph::custom`].
///
/// Receives the input values, the output value and the output gradient, and
/// returns one gradient buffer per input.
pub type CustomBackward = Rc<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Transpose(Var),
    Conv1d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    AdaptiveMeanPool { x: Var, out_len: usize },
    Upsample { x: Var, factor: usize },
    Gru { inputs: [Var; 6], cache: kernels::GruCache },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    ReduceMean(Var),
    Sum(Var),
    Mse(Var, Var),
    GaussianKl(Var, Var),
    Bce { p: Var, target: Vec<f64> },
    Custom { inputs: Vec<Var>, backward: CustomBackward },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Tape of operations. Nodes are appended in evaluation order, which is
/// already a topological order; `backward` visits them once, in reverse.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Splits a broadcasting pair: `b` must match the trailing dimensions of `a`
/// (or be a single element). Returns the repeat period of `b`.
fn broadcast_period(op: &'static str, a: &Tensor, b: &Tensor) -> Result<usize> {
    if a.shape() == b.shape() {
        return Ok(b.numel());
    }
    if b.numel() == 1 {
        return Ok(1);
    }
    let (sa, sb) = (a.shape(), b.shape());
    if sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb {
        return Ok(b.numel());
    }
    shape_err(op, format!("cannot broadcast {sb:?} onto {sa:?}"))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if let Some(index) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: name, index });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable leaf (a parameter or an input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Constant leaf; gradients are not tracked.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient accumulated by the last [`backward`](Self::backward) call.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    /// `(m,k)·(k,n) -> (m,n)` or `(m,k)·(k) -> (m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || !(sb.len() == 1 || sb.len() == 2) || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let out = kernels::matmul(ta.data(), tb.data(), m, k, n);
        let shape: Vec<usize> = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), rg, "matmul")
    }

    /// Elementwise sum; `b` broadcasts over the leading dimensions of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let period = broadcast_period("add", ta, tb)?;
        let bd = tb.data();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % period])
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&shape, out)?, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err("sub", format!("{:?} - {:?}", ta.shape(), tb.shape()));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&shape, out)?, Op::Sub(a, b), rg, "sub")
    }

    /// Elementwise product; `b` broadcasts like in [`add`](Self::add).
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let period = broadcast_period("mul", ta, tb)?;
        let bd = tb.data();
        let out = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bd[i % period])
            .collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a, b]);
        self.push(Tensor::new(&shape, out)?, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ta = self.value(a);
        let out = ta.data().iter().map(|x| x * factor).collect();
        let shape = ta.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&shape, out)?, Op::Scale(a, factor), rg, "scale")
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return shape_err("concat", "no inputs");
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return shape_err("concat", format!("axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(d, &n)| d != axis && n != first[d])
            {
                return shape_err("concat", format!("{first:?} vs {s:?}"));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(input);
        let s = t.shape().to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return shape_err("slice", format!("[{start}..{}] on axis {axis} of {s:?}", start + len));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            out.extend_from_slice(&t.data()[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[input]);
        self.push(
            Tensor::new(&shape, out)?,
            Op::Slice { input, axis, start },
            rg,
            "slice",
        )
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(input).clone().reshaped(shape)?;
        let rg = self.rg(&[input]);
        self.push(t, Op::Reshape(input), rg, "reshape")
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let s = t.shape();
        if s.len() != 2 {
            return shape_err("transpose", format!("expected 2-D, got {s:?}"));
        }
        let (r, c) = (s[0], s[1]);
        let out = kernels::transpose(t.data(), r, c);
        let rg = self.rg(&[input]);
        self.push(Tensor::new(&[c, r], out)?, Op::Transpose(input), rg, "transpose")
    }

    /// 1-D convolution (cross-correlation) of `x: (C_in, L)` with
    /// `w: (C_out, C_in, K)` and optional bias `b: (C_out)`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] || stride == 0 {
            return shape_err("conv1d", format!("x {sx:?}, w {sw:?}, stride {stride}"));
        }
        let geom = kernels::ConvGeom {
            c_in: sx[0],
            len: sx[1],
            c_out: sw[0],
            k: sw[2],
            stride,
            pad,
        };
        if geom.len + 2 * pad < geom.k {
            return shape_err("conv1d", format!("input length {} too short for kernel {}", geom.len, geom.k));
        }
        if let Some(b) = b {
            if self.shape(b) != [geom.c_out] {
                return shape_err("conv1d", format!("bias {:?} for {} channels", self.shape(b), geom.c_out));
            }
        }
        let bias = b.map(|b| self.value(b).data());
        let out = kernels::conv1d_forward(tx.data(), tw.data(), bias, &geom);
        let shape = [geom.c_out, geom.out_len()];
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        self.push(
            Tensor::new(&shape, out)?,
            Op::Conv1d { x, w, b, stride, pad },
            rg,
            "conv1d",
        )
    }

    /// Averages `(C, L)` over `out_len` adaptive time bins: bin `i` covers
    /// `[floor(i·L/out), ceil((i+1)·L/out))`.
    pub fn adaptive_mean_pool_time(&mut self, x: Var, out_len: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 2 || out_len == 0 || out_len > s[1] {
            return shape_err("adaptive_mean_pool_time", format!("{s:?} -> {out_len}"));
        }
        let (c, l) = (s[0], s[1]);
        let mut out = vec![0.0; c * out_len];
        for ch in 0..c {
            let row = &t.data()[ch * l..(ch + 1) * l];
            for i in 0..out_len {
                let (lo, hi) = kernels::pool_bin(i, l, out_len);
                out[ch * out_len + i] = row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            }
        }
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(&[c, out_len], out)?,
            Op::AdaptiveMeanPool { x, out_len },
            rg,
            "adaptive_mean_pool_time",
        )
    }

    /// Nearest-neighbour upsampling of `(C, L)` to `(C, L·factor)`.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let t = self.value(x);
        let s = t.shape();
        if s.len() != 2 || factor == 0 {
            return shape_err("upsample", format!("{s:?} x{factor}"));
        }
        let (c, l) = (s[0], s[1]);
        let out: Vec<f64> = t
            .data()
            .chunks(l)
            .flat_map(|row| row.iter().flat_map(move |&v| std::iter::repeat_n(v, factor)))
            .collect();
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(&[c, l * factor], out)?,
            Op::Upsample { x, factor },
            rg,
            "upsample",
        )
    }

    /// One GRU step with gate order (reset, update, candidate):
    ///
    /// ```text
    /// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
    /// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
    /// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
    /// h' = (1 − z) ⊙ n + z ⊙ h
    /// ```
    ///
    /// Shapes: `x (I)`, `h (H)`, `w_ih (3H, I)`, `w_hh (3H, H)`,
    /// `b_ih (3H)`, `b_hh (3H)`.
    pub fn gru_cell_step(
        &mut self,
        x: Var,
        h: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
    ) -> Result<Var> {
        let (i_dim, h_dim) = (self.value(x).numel(), self.value(h).numel());
        let ok = self.shape(w_ih) == [3 * h_dim, i_dim]
            && self.shape(w_hh) == [3 * h_dim, h_dim]
            && self.shape(b_ih) == [3 * h_dim]
            && self.shape(b_hh) == [3 * h_dim];
        if !ok {
            return shape_err(
                "gru_cell_step",
                format!(
                    "x {:?}, h {:?}, w_ih {:?}, w_hh {:?}, b_ih {:?}, b_hh {:?}",
                    self.shape(x),
                    self.shape(h),
                    self.shape(w_ih),
                    self.shape(w_hh),
                    self.shape(b_ih),
                    self.shape(b_hh)
                ),
            );
        }
        let (h_new, cache) = kernels::gru_forward(
            self.value(x).data(),
            self.value(h).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(b_ih).data(),
            self.value(b_hh).data(),
        );
        let inputs = [x, h, w_ih, w_hh, b_ih, b_hh];
        let rg = self.rg(&inputs);
        self.push(
            Tensor::from_vec(h_new),
            Op::Gru { inputs, cache },
            rg,
            "gru_cell_step",
        )
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(&shape, out)?, op, rg, name)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", kernels::sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "log", f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    /// Mean over all elements, returned as shape `[1]`.
    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::ReduceMean(a), rg, "reduce_mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg, "sum")
    }

    /// Mean squared error between same-shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return shape_err("mse", format!("{:?} vs {:?}", tp.shape(), tt.shape()));
        }
        let n = tp.numel() as f64;
        let v = tp
            .data()
            .iter()
            .zip(tt.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[pred, target]);
        self.push(Tensor::scalar(v), Op::Mse(pred, target), rg, "mse")
    }

    /// Mean over elements of `μ² + σ² − log σ² − 1` with `σ² = exp(log_var)`.
    pub fn gaussian_kl(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        let (tm, tl) = (self.value(mu), self.value(log_var));
        if tm.shape() != tl.shape() {
            return shape_err("gaussian_kl", format!("{:?} vs {:?}", tm.shape(), tl.shape()));
        }
        let n = tm.numel() as f64;
        let v = tm
            .data()
            .iter()
            .zip(tl.data())
            .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
            .sum::<f64>()
            / n;
        let rg = self.rg(&[mu, log_var]);
        self.push(Tensor::scalar(v), Op::GaussianKl(mu, log_var), rg, "gaussian_kl")
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed labels.
    /// Probabilities are clamped to `[1e-7, 1 − 1e-7]`; clamped entries pass
    /// no gradient.
    pub fn bce(&mut self, p: Var, target: &[f64]) -> Result<Var> {
        let tp = self.value(p);
        if tp.numel() != target.len() {
            return shape_err("bce", format!("{} predictions, {} labels", tp.numel(), target.len()));
        }
        let n = target.len() as f64;
        let v = tp
            .data()
            .iter()
            .zip(target)
            .map(|(&p, &y)| kernels::bce_term(p, y))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[p]);
        self.push(
            Tensor::scalar(v),
            Op::Bce {
                p,
                target: target.to_vec(),
            },
            rg,
            "bce",
        )
    }

    /// Node with a caller-provided value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Result<Var> {
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            rg,
            "custom",
        )
    }

    /// Reverse pass from a single-element `loss`. Clears gradients from any
    /// previous pass first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[idx].grad.take() else {
                continue;
            };
            let contributions = self.node_backward(idx, &g);
            self.nodes[idx].grad = Some(g);
            for (var, delta) in contributions {
                let node = &mut self.nodes[var.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(delta),
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = if tb.ndim() == 2 { tb.shape()[1] } else { 1 };
                if self.needs(*a) {
                    // dA = G · Bᵀ
                    let bt = kernels::transpose(tb.data(), k, n);
                    res.push((*a, kernels::matmul(g, &bt, m, n, k)));
                }
                if self.needs(*b) {
                    // dB = Aᵀ · G
                    let at = kernels::transpose(ta.data(), m, k);
                    res.push((*b, kernels::matmul(&at, g, k, m, n)));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    let period = val(*b).numel();
                    let mut gb = vec![0.0; period];
                    g.iter().enumerate().for_each(|(i, v)| gb[i % period] += v);
                    res.push((*b, gb));
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    res.push((*a, g.to_vec()));
                }
                if self.needs(*b) {
                    res.push((*b, g.iter().map(|v| -v).collect()));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let period = tb.numel();
                if self.needs(*a) {
                    let bd = tb.data();
                    res.push((*a, g.iter().enumerate().map(|(i, v)| v * bd[i % period]).collect()));
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; period];
                    g.iter()
                        .zip(ta.data())
                        .enumerate()
                        .for_each(|(i, (v, x))| gb[i % period] += v * x);
                    res.push((*b, gb));
                }
            }
            Op::Scale(a, f) => res.push((*a, g.iter().map(|v| v * f).collect())),
            Op::Concat { inputs, axis } => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut offset = 0;
                for &v in inputs {
                    let len = val(v).shape()[*axis] * inner;
                    if self.needs(v) {
                        let mut gv = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let base = o * s[*axis] * inner + offset;
                            gv.extend_from_slice(&g[base..base + len]);
                        }
                        res.push((v, gv));
                    }
                    offset += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let s = val(*input).shape();
                let len = out.shape()[*axis];
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut gi = vec![0.0; val(*input).numel()];
                for o in 0..outer {
                    let base = o * s[*axis] * inner + start * inner;
                    gi[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                res.push((*input, gi));
            }
            Op::Reshape(a) => res.push((*a, g.to_vec())),
            Op::Transpose(a) => {
                let s = out.shape();
                res.push((*a, kernels::transpose(g, s[0], s[1])));
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (tx, tw) = (val(*x), val(*w));
                let geom = kernels::ConvGeom {
                    c_in: tx.shape()[0],
                    len: tx.shape()[1],
                    c_out: tw.shape()[0],
                    k: tw.shape()[2],
                    stride: *stride,
                    pad: *pad,
                };
                let (gx, gw, gb) = kernels::conv1d_backward(
                    tx.data(),
                    tw.data(),
                    g,
                    &geom,
                    self.needs(*x),
                    self.needs(*w),
                );
                if let Some(gx) = gx {
                    res.push((*x, gx));
                }
                if let Some(gw) = gw {
                    res.push((*w, gw));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        res.push((*b, gb));
                    }
                }
            }
            Op::AdaptiveMeanPool { x, out_len } => {
                let s = val(*x).shape();
                let (c, l) = (s[0], s[1]);
                let mut gx = vec![0.0; c * l];
                for ch in 0..c {
                    for i in 0..*out_len {
                        let (lo, hi) = kernels::pool_bin(i, l, *out_len);
                        let share = g[ch * out_len + i] / (hi - lo) as f64;
                        gx[ch * l + lo..ch * l + hi].iter_mut().for_each(|v| *v += share);
                    }
                }
                res.push((*x, gx));
            }
            Op::Upsample { x, factor } => {
                let gx = g.chunks(*factor).map(|c| c.iter().sum()).collect();
                res.push((*x, gx));
            }
            Op::Gru { inputs, cache } => {
                let [x, h, w_ih, w_hh, _, _] = *inputs;
                let grads = kernels::gru_backward(
                    val(x).data(),
                    val(h).data(),
                    val(w_ih).data(),
                    val(w_hh).data(),
                    cache,
                    g,
                );
                for (v, gv) in inputs.iter().zip(grads) {
                    if self.needs(*v) {
                        res.push((*v, gv));
                    }
                }
            }
            Op::Sigmoid(a) => res.push((
                *a,
                g.iter().zip(out.data()).map(|(v, s)| v * s * (1.0 - s)).collect(),
            )),
            Op::Tanh(a) => res.push((
                *a,
                g.iter().zip(out.data()).map(|(v, t)| v * (1.0 - t * t)).collect(),
            )),
            Op::Exp(a) => res.push((*a, g.iter().zip(out.data()).map(|(v, e)| v * e).collect())),
            Op::Log(a) => res.push((
                *a,
                g.iter().zip(val(*a).data()).map(|(v, x)| v / x).collect(),
            )),
            Op::Square(a) => res.push((
                *a,
                g.iter().zip(val(*a).data()).map(|(v, x)| 2.0 * v * x).collect(),
            )),
            Op::ReduceMean(a) => {
                let n = val(*a).numel();
                res.push((*a, vec![g[0] / n as f64; n]));
            }
            Op::Sum(a) => res.push((*a, vec![g[0]; val(*a).numel()])),
            Op::Mse(p, t) => {
                let (tp, tt) = (val(*p), val(*t));
                let c = 2.0 * g[0] / tp.numel() as f64;
                let d: Vec<f64> = tp.data().iter().zip(tt.data()).map(|(a, b)| c * (a - b)).collect();
                if self.needs(*t) {
                    res.push((*t, d.iter().map(|v| -v).collect()));
                }
                if self.needs(*p) {
                    res.push((*p, d));
                }
            }
            Op::GaussianKl(mu, lv) => {
                let c = g[0] / val(*mu).numel() as f64;
                if self.needs(*mu) {
                    res.push((*mu, val(*mu).data().iter().map(|m| 2.0 * c * m).collect()));
                }
                if self.needs(*lv) {
                    res.push((*lv, val(*lv).data().iter().map(|l| c * (l.exp() - 1.0)).collect()));
                }
            }
            Op::Bce { p, target } => {
                let c = g[0] / target.len() as f64;
                let gp = val(*p)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &y)| {
                        if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                            0.0
                        } else {
                            c * (-y / p + (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                res.push((*p, gp));
            }
            Op::Custom { inputs, backward } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| val(v)).collect();
                for (v, gv) in inputs.iter().zip(backward(&ins, out, g)) {
                    if self.needs(*v) {
                        res.push((*v, gv));
                    }
                }
            }
        }
        res
    }
}
