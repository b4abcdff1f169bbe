use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    Mul,
    Scale,
    SwapAxes,
    Reshape,
    ConcatRows,
    SliceRows,
    Gelu,
    Softmax,
    LayerNorm,
    Mean,
    Sum,
    CrossEntropy,
}

impl OpKind {
    pub const ALL: [OpKind; 15] = [
        OpKind::Matmul,
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::SwapAxes,
        OpKind::Reshape,
        OpKind::ConcatRows,
        OpKind::SliceRows,
        OpKind::Gelu,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Mean,
        OpKind::Sum,
        OpKind::CrossEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::SwapAxes => "swap_axes",
            OpKind::Reshape => "reshape",
            OpKind::ConcatRows => "concat_rows",
            OpKind::SliceRows => "slice_rows",
            OpKind::Gelu => "gelu",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown op `{s}`")))
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    SwapAxes(Var, usize, usize),
    Reshape(Var),
    ConcatRows(Var, Var),
    SliceRows { x: Var, start: usize },
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, eps: f64 },
    Mean(Var),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Vec<usize> },
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Matmul(..) => OpKind::Matmul,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::SwapAxes(..) => OpKind::SwapAxes,
            Op::Reshape(..) => OpKind::Reshape,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Mean(..) => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
        })
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Arena of recorded values in execution order.
///
/// Every op stores its output; the backward rule is kept only when some
/// input requires gradients, otherwise the output is recorded as a
/// constant. Node inputs always precede the node itself.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

/// How `a` and `b` line up for an elementwise op: the shorter shape must be
/// a trailing suffix of the longer one.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    (long[long.len() - short.len()..] == *short).then(|| long.to_vec())
}

fn leading(shape: &[usize]) -> &[usize] {
    &shape[..shape.len() - 2]
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test fixture: doubles the gradient every `kind` node sends back,
    /// so gradient checks have a known-bad backward rule to catch.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient, if any backward pass has reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            Error::shape(format!(
                "{name}: cannot broadcast {:?} with {:?}",
                ta.shape(),
                tb.shape()
            ))
        })?;
        let numel: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let (la, lb) = (da.len(), db.len());
        let data = (0..numel).map(|i| f(da[i % la], db[i % lb])).collect();
        Tensor::new(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.elementwise(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * factor).collect())?;
        Ok(self.push(out, Op::Scale(a, factor), &[a]))
    }

    /// `a[..., m, k] x b[..., k, n]`. `b` is either two-dimensional (shared
    /// across all leading axes of `a`) or has the same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let mismatch = || Error::shape(format!("matmul: {sa:?} x {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 || (sb.len() != 2 && leading(sa) != leading(sb)) {
            return Err(mismatch());
        }
        let mut shape = leading(sa).to_vec();
        shape.extend([m, n]);
        let batches: usize = leading(sa).iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; batches * m * n];
        if sb.len() == 2 {
            kernels::gemm_nn(da, db, &mut out, batches * m, k, n);
        } else {
            for t in 0..batches {
                kernels::gemm_nn(
                    &da[t * m * k..(t + 1) * m * k],
                    &db[t * k * n..(t + 1) * k * n],
                    &mut out[t * m * n..(t + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(out, Op::Matmul(a, b), &[a, b]))
    }

    pub fn swap_axes(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if i >= shape.len() || j >= shape.len() {
            return Err(Error::shape(format!("swap_axes({i}, {j}) on {shape:?}")));
        }
        let (i, j) = (i.min(j), i.max(j));
        let mut out_shape = shape.clone();
        out_shape.swap(i, j);
        let data = if i == j {
            self.value(a).data().to_vec()
        } else {
            kernels::swap_axes(self.value(a).data(), &shape, i, j)
        };
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push(out, Op::SwapAxes(a, i, j), &[a]))
    }

    pub fn transpose_last_two(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(Error::shape(format!("transpose of {:?}", self.shape(a))));
        }
        self.swap_axes(a, nd - 2, nd - 1)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Stacks `b`'s rows under `a`'s along the second-to-last axis.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || leading(sa) != leading(sb) || sa.last() != sb.last() {
            return Err(Error::shape(format!("concat_rows: {sa:?} with {sb:?}")));
        }
        let nd = sa.len();
        let (ra, rb, width) = (sa[nd - 2], sb[nd - 2], sa[nd - 1]);
        let mut shape = sa.to_vec();
        shape[nd - 2] = ra + rb;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(da.len() + db.len());
        for (ca, cb) in da.chunks(ra * width).zip(db.chunks(rb * width)) {
            data.extend_from_slice(ca);
            data.extend_from_slice(cb);
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::ConcatRows(a, b), &[a, b]))
    }

    /// Rows `start..end` along the second-to-last axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let sa = self.shape(a);
        let nd = sa.len();
        if nd < 2 || start >= end || end > sa[nd - 2] {
            return Err(Error::shape(format!("slice_rows({start}..{end}) of {sa:?}")));
        }
        let (rows, width) = (sa[nd - 2], sa[nd - 1]);
        let mut shape = sa.to_vec();
        shape[nd - 2] = end - start;
        let data = self
            .value(a)
            .data()
            .chunks(rows * width)
            .flat_map(|block| &block[start * width..end * width])
            .copied()
            .collect();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::SliceRows { x: a, start }, &[a]))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| kernels::gelu(x)).collect())?;
        Ok(self.push(out, Op::Gelu(a), &[a]))
    }

    pub fn softmax_last_axis(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let width = *t.shape().last().ok_or_else(|| Error::shape("softmax of a scalar"))?;
        let mut data = vec![0.0; t.numel()];
        for (row, out) in t.data().chunks(width).zip(data.chunks_mut(width)) {
            kernels::softmax_row(row, out);
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Softmax(a), &[a]))
    }

    /// Zero-mean, unit-variance normalization of each trailing row, without
    /// affine parameters.
    pub fn layer_norm_last_axis(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let width = *t.shape().last().ok_or_else(|| Error::shape("layer_norm of a scalar"))?;
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks(width) {
            let (mean, inv_std) = kernels::row_moments(row, eps);
            data.extend(row.iter().map(|x| (x - mean) * inv_std));
        }
        let out = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::LayerNorm { x: a, eps }, &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64);
        Ok(self.push(out, Op::Mean(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        Ok(self.push(out, Op::Sum(a), &[a]))
    }

    /// Mean softmax cross-entropy of `logits[B, C]` against integer labels.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let &[batch, classes] = t.shape() else {
            return Err(Error::shape(format!(
                "cross_entropy expects [B, C] logits, got {:?}",
                t.shape()
            )));
        };
        if labels.len() != batch {
            return Err(Error::shape(format!("{} labels for a batch of {batch}", labels.len())));
        }
        let mut total = 0.0;
        for (row, &label) in t.data().chunks(classes).zip(labels) {
            if label >= classes {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let out = Tensor::scalar(total / batch as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
        };
        Ok(self.push(out, op, &[logits]))
    }

    /// Accumulates `d loss / d v` into the gradient of every node that
    /// requires it. Gradients add up across repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        if !self.requires_grad(loss) {
            return Ok(());
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adjoints[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut contributions = self.backward_rule(idx, &g);
            if self.fault.is_some() && node.op.kind() == self.fault {
                for (_, c) in &mut contributions {
                    c.iter_mut().for_each(|x| *x *= 2.0);
                }
            }
            for (input, c) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adjoints[input.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(c),
                }
            }
            let node = &mut self.nodes[idx];
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `idx` to each of its inputs, given
    /// the node's own adjoint `g`.
    fn backward_rule(&self, idx: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |v: Var| self.nodes[v.0].value.data();
        let shape = |v: Var| self.nodes[v.0].value.shape();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                let mut ga = vec![0.0; val(*a).len()];
                let mut gb = vec![0.0; val(*b).len()];
                let (la, lb) = (ga.len(), gb.len());
                for (i, &gi) in g.iter().enumerate() {
                    ga[i % la] += gi;
                    gb[i % lb] += sign * gi;
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let (da, db) = (val(*a), val(*b));
                let (la, lb) = (da.len(), db.len());
                let mut ga = vec![0.0; la];
                let mut gb = vec![0.0; lb];
                for (i, &gi) in g.iter().enumerate() {
                    ga[i % la] += gi * db[i % lb];
                    gb[i % lb] += gi * da[i % la];
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, factor) => vec![(*a, g.iter().map(|x| x * factor).collect())],
            Op::Matmul(a, b) => {
                let (sa, sb) = (shape(*a), shape(*b));
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let n = sb[sb.len() - 1];
                let batches: usize = leading(sa).iter().product();
                let (da, db) = (val(*a), val(*b));
                let mut ga = vec![0.0; da.len()];
                let mut gb = vec![0.0; db.len()];
                if sb.len() == 2 {
                    kernels::gemm_nt(g, db, &mut ga, batches * m, n, k);
                    kernels::gemm_tn(da, g, &mut gb, k, batches * m, n);
                } else {
                    for t in 0..batches {
                        let (ra, rb, rg) = (
                            t * m * k..(t + 1) * m * k,
                            t * k * n..(t + 1) * k * n,
                            t * m * n..(t + 1) * m * n,
                        );
                        kernels::gemm_nt(&g[rg.clone()], &db[rb.clone()], &mut ga[ra.clone()], m, n, k);
                        kernels::gemm_tn(&da[ra], &g[rg], &mut gb[rb], k, m, n);
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::SwapAxes(a, i, j) => {
                if i == j {
                    vec![(*a, g.to_vec())]
                } else {
                    vec![(*a, kernels::swap_axes(g, node.value.shape(), *i, *j))]
                }
            }
            Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::ConcatRows(a, b) => {
                let (sa, sb) = (shape(*a), shape(*b));
                let nd = sa.len();
                let width = sa[nd - 1];
                let (ca, cb) = (sa[nd - 2] * width, sb[nd - 2] * width);
                let mut ga = Vec::with_capacity(val(*a).len());
                let mut gb = Vec::with_capacity(val(*b).len());
                for block in g.chunks(ca + cb) {
                    ga.extend_from_slice(&block[..ca]);
                    gb.extend_from_slice(&block[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::SliceRows { x, start } => {
                let sx = shape(*x);
                let nd = sx.len();
                let (rows, width) = (sx[nd - 2], sx[nd - 1]);
                let taken = node.value.shape()[nd - 2];
                let mut gx = vec![0.0; val(*x).len()];
                for (dst, src) in gx.chunks_mut(rows * width).zip(g.chunks(taken * width)) {
                    dst[start * width..(start + taken) * width].copy_from_slice(src);
                }
                vec![(*x, gx)]
            }
            Op::Gelu(a) => {
                let gx = val(*a)
                    .iter()
                    .zip(g)
                    .map(|(&x, gi)| gi * kernels::gelu_grad(x))
                    .collect();
                vec![(*a, gx)]
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(width).zip(g.chunks(width)).zip(gx.chunks_mut(width)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yi), &gi) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - dot);
                    }
                }
                vec![(*a, gx)]
            }
            Op::LayerNorm { x, eps } => {
                let y = node.value.data();
                let width = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; y.len()];
                let rows = val(*x).chunks(width).zip(y.chunks(width)).zip(g.chunks(width));
                for (((xr, yr), gr), out) in rows.zip(gx.chunks_mut(width)) {
                    let (_, inv_std) = kernels::row_moments(xr, *eps);
                    let w = width as f64;
                    let g_mean = gr.iter().sum::<f64>() / w;
                    let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / w;
                    for ((o, &gi), &yi) in out.iter_mut().zip(gr).zip(yr) {
                        *o = inv_std * (gi - g_mean - yi * gy_mean);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Mean(a) => {
                let len = val(*a).len();
                vec![(*a, vec![g[0] / len as f64; len])]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
            Op::CrossEntropy { logits, labels } => {
                let z = val(*logits);
                let classes = shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                let mut gz = vec![0.0; z.len()];
                for ((row, out), &label) in z.chunks(classes).zip(gz.chunks_mut(classes)).zip(labels) {
                    kernels::softmax_row(row, out);
                    out[label] -= 1.0;
                    out.iter_mut().for_each(|v| *v *= scale);
                }
                vec![(*logits, gz)]
            }
        }
    }
}
