use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::{self, AttnGeom, ConvGeom};
use crate::tensor::Array;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right-hand operand of a binary op is broadcast against the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    /// Equal shapes.
    Same,
    /// `[1, cols]` repeated over rows (per-channel vector).
    Row,
    /// `[rows, 1]` repeated over columns (per-position scalar).
    Col,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var),
    Mul(Var, Var, Broadcast),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    MaxCols(Var, Vec<usize>),
    MeanCols(Var),
    DwConv(Var, Var, ConvGeom),
    Conv2d(Var, Var, ConvGeom),
    Reshape(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Nll(Var, Vec<usize>),
    SumAll(Var),
    TokenEmbed(Var, Var, Var),
    Attention(Var, Var, Var, AttnGeom, Vec<T>),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::ConcatCols(..) => "concat_cols",
            Op::MeanRows(..) => "mean_rows",
            Op::MaxCols(..) => "max_cols",
            Op::MeanCols(..) => "mean_cols",
            Op::DwConv(..) => "dwconv",
            Op::Conv2d(..) => "conv2d",
            Op::Reshape(..) => "reshape",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::Nll(..) => "nll",
            Op::SumAll(..) => "sum_all",
            Op::TokenEmbed(..) => "token_embed",
            Op::Attention(..) => "attention",
        }
    }
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
}

/// Record of forward operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Tape::backward`] simply walks it in reverse.
/// Every forward op rejects non-finite results with an error naming the op.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_str(a: &[usize]) -> String {
    format!("{a:?}")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn leaf(&mut self, value: Array<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Array<T>, op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let a = self.value(v);
        match a.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(op, format!("expected rank-2 operand, got {}", shape_str(s)))),
        }
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dimensions disagree: [{m}, {k}] · [{k2}, {n}]"),
            ));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Array::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    fn broadcast_kind(&self, a: Var, b: Var, op: &'static str) -> Result<Broadcast> {
        let (m, n) = self.dims(a, op)?;
        let (bm, bn) = self.dims(b, op)?;
        match (bm, bn) {
            _ if (bm, bn) == (m, n) => Ok(Broadcast::Same),
            (1, c) if c == n => Ok(Broadcast::Row),
            (r, 1) if r == m => Ok(Broadcast::Col),
            _ => Err(Error::shape(
                op,
                format!("cannot broadcast [{bm}, {bn}] against [{m}, {n}]"),
            )),
        }
    }

    fn binary(&self, a: Var, b: Var, bc: Broadcast, f: impl Fn(T, T) -> T) -> Array<T> {
        let av = self.value(a);
        let bv = self.value(b).data();
        let n = av.cols();
        let mut out = av.clone();
        for (idx, o) in out.data_mut().iter_mut().enumerate() {
            let rhs = match bc {
                Broadcast::Same => bv[idx],
                Broadcast::Row => bv[idx % n],
                Broadcast::Col => bv[idx / n],
            };
            *o = f(*o, rhs);
        }
        out
    }

    /// `a + b` with `b` equal-shaped, a row vector, or a column vector.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_kind(a, b, "add")?;
        let out = self.binary(a, b, bc, |x, y| x + y);
        self.push(out, Op::Add(a, b, bc))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "sub",
                format!(
                    "{} vs {}",
                    shape_str(self.value(a).shape()),
                    shape_str(self.value(b).shape())
                ),
            ));
        }
        let out = self.binary(a, b, Broadcast::Same, |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    /// `a ⊙ b` with the same broadcasting rules as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_kind(a, b, "mul")?;
        let out = self.binary(a, b, bc, |x, y| x * y);
        self.push(out, Op::Mul(a, b, bc))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    /// Concatenate rank-2 arrays with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let (m, _) = self.dims(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != m {
                return Err(Error::shape("concat_cols", format!("row counts {m} and {r} differ")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..m {
                out[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        self.push(Array::new(vec![m, total], out)?, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean over rows: `[m,n] -> [1,n]` (global average pool over positions).
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "mean_rows")?;
        let mut out = vec![T::zero(); n];
        for r in 0..m {
            for (o, &v) in out.iter_mut().zip(self.value(a).row(r)) {
                *o += v;
            }
        }
        let inv = T::one() / T::of(m as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(Array::new(vec![1, n], out)?, Op::MeanRows(a))
    }

    /// Max over columns per row: `[m,n] -> [m,1]`. Ties resolve to the lowest column.
    pub fn max_cols(&mut self, a: Var) -> Result<Var> {
        let (m, _) = self.dims(a, "max_cols")?;
        let av = self.value(a);
        let mut arg = Vec::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        for r in 0..m {
            let row = av.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            arg.push(best);
            out.push(row[best]);
        }
        self.push(Array::new(vec![m, 1], out)?, Op::MaxCols(a, arg))
    }

    /// Mean over columns per row: `[m,n] -> [m,1]`.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "mean_cols")?;
        let av = self.value(a);
        let inv = T::one() / T::of(n as f64);
        let out = (0..m).map(|r| av.row(r).iter().copied().sum::<T>() * inv).collect();
        self.push(Array::new(vec![m, 1], out)?, Op::MeanCols(a))
    }

    fn check_geom(&self, x: Var, g: ConvGeom, op: &'static str) -> Result<(usize, usize)> {
        if g.kernel % 2 == 0 {
            return Err(Error::shape(op, format!("kernel size {} is even", g.kernel)));
        }
        let (p, c) = self.dims(x, op)?;
        if p != g.positions() {
            return Err(Error::shape(
                op,
                format!("{p} positions do not match {}x{} map", g.height, g.width),
            ));
        }
        Ok((p, c))
    }

    /// Depthwise convolution with zero same-padding.
    ///
    /// `x` is `[height*width, channels]`, `kernel` is `[channels, k*k]`.
    pub fn dwconv(&mut self, x: Var, kernel: Var, g: ConvGeom) -> Result<Var> {
        let (p, c) = self.check_geom(x, g, "dwconv")?;
        let (kc, taps) = self.dims(kernel, "dwconv")?;
        if kc != c || taps != g.taps() {
            return Err(Error::shape(
                "dwconv",
                format!("kernel [{kc}, {taps}] does not fit {c} channels, size {}", g.kernel),
            ));
        }
        let out = kernels::dwconv_forward(self.value(x).data(), self.value(kernel).data(), c, g);
        self.push(Array::new(vec![p, c], out)?, Op::DwConv(x, kernel, g))
    }

    /// Dense convolution with zero same-padding.
    ///
    /// `x` is `[height*width, c_in]`, `kernel` is `[c_out, c_in*k*k]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, g: ConvGeom) -> Result<Var> {
        let (p, c_in) = self.check_geom(x, g, "conv2d")?;
        let (c_out, w) = self.dims(kernel, "conv2d")?;
        if w != c_in * g.taps() {
            return Err(Error::shape(
                "conv2d",
                format!("kernel width {w} != {c_in} channels x {} taps", g.taps()),
            ));
        }
        let out =
            kernels::conv2d_forward(self.value(x).data(), self.value(kernel).data(), c_in, c_out, g);
        self.push(Array::new(vec![p, c_out], out)?, Op::Conv2d(x, kernel, g))
    }

    /// Pointwise (1x1) convolution: per-position linear map `x·w + b`.
    pub fn pwconv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (_, c_in) = self.dims(x, "pwconv")?;
        let (w_in, _) = self.dims(w, "pwconv")?;
        if c_in != w_in {
            return Err(Error::shape(
                "pwconv",
                format!("input has {c_in} channels, weights expect {w_in}"),
            ));
        }
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        self.push(out, Op::Reshape(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "softmax_rows")?;
        let mut out = self.value(a).clone();
        for r in 0..m {
            kernels::softmax_in_place(&mut out.data_mut()[r * n..(r + 1) * n]);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a, "log_softmax_rows")?;
        let mut out = self.value(a).clone();
        for r in 0..m {
            let row = &mut out.data_mut()[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(out, Op::LogSoftmaxRows(a))
    }

    /// Mean negative log-likelihood of `targets[i]` under row `i` of the
    /// log-probabilities: `-(1/m) Σ logp[i, targets[i]]`.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(logp, "nll")?;
        if targets.len() != m || targets.iter().any(|&t| t >= n) {
            return Err(Error::shape(
                "nll",
                format!("{} targets for [{m}, {n}] log-probabilities", targets.len()),
            ));
        }
        let lp = self.value(logp);
        let total: T = targets.iter().enumerate().map(|(i, &t)| lp.at(i, t)).sum();
        let out = Array::scalar(-total / T::of(m as f64));
        self.push(out, Op::Nll(logp, targets.to_vec()))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let out = Array::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    /// Lift scalar tokens into vectors: `x[G,S]`, `w[1,D]`, `pos[S,D]` give
    /// `[G*S, D]` with row `g*S+s` equal to `x[g,s]·w + pos[s]`.
    pub fn token_embed(&mut self, x: Var, w: Var, pos: Var) -> Result<Var> {
        let (g, s) = self.dims(x, "token_embed")?;
        let (one, d) = self.dims(w, "token_embed")?;
        let (ps, pd) = self.dims(pos, "token_embed")?;
        if one != 1 || ps != s || pd != d {
            return Err(Error::shape(
                "token_embed",
                format!("x [{g}, {s}], w [{one}, {d}], pos [{ps}, {pd}]"),
            ));
        }
        let (xv, wv, pv) = (self.value(x).data(), self.value(w).data(), self.value(pos).data());
        let mut out = vec![T::zero(); g * s * d];
        for gi in 0..g {
            for si in 0..s {
                let xs = xv[gi * s + si];
                let row = &mut out[(gi * s + si) * d..(gi * s + si + 1) * d];
                row.copy_from_slice(&pv[si * d..(si + 1) * d]);
                kernels::axpy(xs, wv, row);
            }
        }
        self.push(Array::new(vec![g * s, d], out)?, Op::TokenEmbed(x, w, pos))
    }

    /// Multi-head scaled dot-product attention over `groups` independent
    /// sequences of length `seq`. `q`, `k`, `v` are `[groups*seq, width]`
    /// with heads laid out as contiguous column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq: usize, heads: usize) -> Result<Var> {
        let (rows, width) = self.dims(q, "attention")?;
        for other in [k, v] {
            if self.dims(other, "attention")? != (rows, width) {
                return Err(Error::shape("attention", "q, k and v shapes differ"));
            }
        }
        if heads == 0 || width % heads != 0 {
            return Err(Error::shape(
                "attention",
                format!("width {width} is not divisible by {heads} heads"),
            ));
        }
        if seq == 0 || rows % seq != 0 {
            return Err(Error::shape("attention", format!("{rows} rows are not whole sequences of {seq}")));
        }
        let geom = AttnGeom { groups: rows / seq, seq, heads, head_dim: width / heads };
        let (out, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            geom,
        );
        self.push(Array::new(vec![rows, width], out)?, Op::Attention(q, k, v, geom, probs))
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got {}", shape_str(self.value(loss).shape())),
            ));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &Array<T>, grads: &mut [Option<Array<T>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        let mut acc = |v: Var, data: Vec<T>| {
            let shape = self.value(v).shape();
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.data_mut().iter_mut().zip(data) {
                        *e += d;
                    }
                }
                slot @ None => {
                    *slot = Some(Array::new(shape.to_vec(), data).expect("adjoint shape"));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let mut da = vec![T::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        da[i * k + p] = kernels::dot(&gd[i * n..(i + 1) * n], &bv[p * n..(p + 1) * n]);
                    }
                }
                let mut db = vec![T::zero(); k * n];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        kernels::axpy(av[i * k + p], grow, &mut db[p * n..(p + 1) * n]);
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Add(a, b, bc) => {
                acc(*a, gd.to_vec());
                acc(*b, reduce_broadcast(gd, out.cols(), *bc, self.value(*b).len()));
            }
            Op::Sub(a, b) => {
                acc(*a, gd.to_vec());
                acc(*b, gd.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b, bc) => {
                let n = out.cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let rhs = |i: usize| match bc {
                    Broadcast::Same => bv[i],
                    Broadcast::Row => bv[i % n],
                    Broadcast::Col => bv[i / n],
                };
                let da = gd.iter().enumerate().map(|(i, &x)| x * rhs(i)).collect();
                let prod: Vec<T> = gd.iter().zip(av).map(|(&x, &y)| x * y).collect();
                acc(*a, da);
                acc(*b, reduce_broadcast(&prod, n, *bc, bv.len()));
            }
            Op::Scale(a, c) => acc(*a, gd.iter().map(|&x| x * *c).collect()),
            Op::Relu(a) => {
                let av = self.value(*a).data();
                acc(*a, gd.iter().zip(av).map(|(&x, &y)| if y > T::zero() { x } else { T::zero() }).collect());
            }
            Op::Sigmoid(a) => {
                acc(*a, gd.iter().zip(out.data()).map(|(&x, &s)| x * s * (T::one() - s)).collect());
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut d = vec![T::zero(); m * w];
                    for r in 0..m {
                        d[r * w..(r + 1) * w].copy_from_slice(&gd[r * total + off..r * total + off + w]);
                    }
                    acc(p, d);
                    off += w;
                }
            }
            Op::MeanRows(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let inv = T::one() / T::of(m as f64);
                acc(*a, (0..m * n).map(|i| gd[i % n] * inv).collect());
            }
            Op::MaxCols(a, arg) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut d = vec![T::zero(); m * n];
                for (r, &j) in arg.iter().enumerate() {
                    d[r * n + j] = gd[r];
                }
                acc(*a, d);
            }
            Op::MeanCols(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let inv = T::one() / T::of(n as f64);
                acc(*a, (0..m * n).map(|i| gd[i / n] * inv).collect());
            }
            Op::DwConv(x, k, geom) => {
                let c = self.value(*x).cols();
                let (dx, dk) = kernels::dwconv_backward(
                    self.value(*x).data(),
                    self.value(*k).data(),
                    gd,
                    c,
                    *geom,
                );
                acc(*x, dx);
                acc(*k, dk);
            }
            Op::Conv2d(x, k, geom) => {
                let c_in = self.value(*x).cols();
                let c_out = self.value(*k).rows();
                let (dx, dk) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*k).data(),
                    gd,
                    c_in,
                    c_out,
                    *geom,
                );
                acc(*x, dx);
                acc(*k, dk);
            }
            Op::Reshape(a) => acc(*a, gd.to_vec()),
            Op::SoftmaxRows(a) => {
                let (m, n) = out.dims2()?;
                let y = out.data();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let (yr, gr) = (&y[r * n..(r + 1) * n], &gd[r * n..(r + 1) * n]);
                    let inner = kernels::dot(yr, gr);
                    for j in 0..n {
                        d[r * n + j] = yr[j] * (gr[j] - inner);
                    }
                }
                acc(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = out.dims2()?;
                let y = out.data();
                let mut d = vec![T::zero(); m * n];
                for r in 0..m {
                    let gr = &gd[r * n..(r + 1) * n];
                    let gsum: T = gr.iter().copied().sum();
                    for j in 0..n {
                        d[r * n + j] = gr[j] - y[r * n + j].exp() * gsum;
                    }
                }
                acc(*a, d);
            }
            Op::Nll(logp, targets) => {
                let (m, n) = self.value(*logp).dims2()?;
                let mut d = vec![T::zero(); m * n];
                let w = -gd[0] / T::of(m as f64);
                for (i, &t) in targets.iter().enumerate() {
                    d[i * n + t] = w;
                }
                acc(*logp, d);
            }
            Op::SumAll(a) => acc(*a, vec![gd[0]; self.value(*a).len()]),
            Op::TokenEmbed(x, w, pos) => {
                let (g, s) = self.value(*x).dims2()?;
                let d = self.value(*w).cols();
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![T::zero(); g * s];
                let mut dw = vec![T::zero(); d];
                let mut dpos = vec![T::zero(); s * d];
                for gi in 0..g {
                    for si in 0..s {
                        let row = &gd[(gi * s + si) * d..(gi * s + si + 1) * d];
                        dx[gi * s + si] = kernels::dot(row, wv);
                        kernels::axpy(xv[gi * s + si], row, &mut dw);
                        kernels::axpy(T::one(), row, &mut dpos[si * d..(si + 1) * d]);
                    }
                }
                acc(*x, dx);
                acc(*w, dw);
                acc(*pos, dpos);
            }
            Op::Attention(q, k, v, geom, probs) => {
                let (dq, dk, dv) = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    gd,
                    *geom,
                );
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
        }
        Ok(())
    }
}

/// Sum an output-shaped adjoint down to the shape of a broadcast operand.
fn reduce_broadcast<T: Scalar>(g: &[T], cols: usize, bc: Broadcast, len: usize) -> Vec<T> {
    match bc {
        Broadcast::Same => g.to_vec(),
        Broadcast::Row => {
            let mut d = vec![T::zero(); len];
            for (i, &x) in g.iter().enumerate() {
                d[i % cols] += x;
            }
            d
        }
        Broadcast::Col => {
            let mut d = vec![T::zero(); len];
            for (i, &x) in g.iter().enumerate() {
                d[i / cols] += x;
            }
            d
        }
    }
}
