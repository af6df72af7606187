use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::param::{GradAccum, ParamId, ParamStore};
use crate::numerics::tensor::{matmul, Tensor};

/// Additive logit penalty for masked attention positions. Large enough that
/// the exponential underflows to exactly 0.0 after max subtraction, so masked
/// positions contribute nothing, bit for bit.
pub const MASK_PENALTY: f64 = -1.0e9;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Boolean attention-permission matrix used by masked softmax, `true` means
/// the (row, col) logit survives.
pub type AttnMask = Arc<MaskBits>;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskBits {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<bool>,
}

impl MaskBits {
    pub fn allowed(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }
}

enum Src {
    Owned(Tensor),
    Param(ParamId),
}

enum Op {
    /// Constant input; gradients stop here.
    Leaf,
    /// Leaf bound to a store parameter; backward adds into the accumulator.
    Param(ParamId),
    /// Selected rows of an embedding-table parameter.
    GatherRows { param: ParamId, rows: Vec<usize> },
    Add(NodeId, NodeId),
    /// `[n, d] + [1, d]`, bias broadcast over rows.
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Gelu(NodeId),
    /// Row-wise softmax; masked logits get [`MASK_PENALTY`] added first.
    /// Backward needs only the output, so the mask is not retained.
    RowSoftmax { x: NodeId },
    /// Row-wise layer normalization with per-row (mean, inv_std) cached.
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        stats: Vec<(f64, f64)>,
    },
    ConcatRows(Vec<NodeId>),
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    SumAll(NodeId),
}

struct Node {
    src: Src,
    op: Op,
}

/// Dynamically recorded computation graph with reverse-mode gradients.
///
/// A tape borrows the parameter store immutably for its whole life; parameter
/// leaves read values straight from the store, so recording a forward pass
/// does not copy weights. Tensors on the tape are immutable once produced.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.044715;

fn gelu_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (s * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let s = (2.0 / std::f64::consts::PI).sqrt();
    let u = s * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_C * x * x)
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        match &self.nodes[id.0].src {
            Src::Owned(t) => t,
            Src::Param(p) => self.store.value(*p),
        }
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node {
            src: Src::Owned(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf; gradients accumulate to the store slot on backward.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        self.nodes.push(Node {
            src: Src::Param(id),
            op: Op::Param(id),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Rows of a `[vocab, d]` table parameter, gathered into `[rows.len(), d]`.
    pub fn param_rows(&mut self, id: ParamId, rows: &[usize]) -> Result<NodeId> {
        let table = self.store.value(id);
        let d = table.cols();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= table.rows() {
                return Err(Error::dim("param_rows", format!("row {r} out of {}", table.rows())));
            }
            data.extend_from_slice(table.row_slice(r));
        }
        let value = Tensor::new(vec![rows.len(), d], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                param: id,
                rows: rows.to_vec(),
            },
        ))
    }

    fn binary_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, d) = (self.value(a).rows(), self.value(a).cols());
        if self.value(bias).numel() != d {
            return Err(Error::dim(
                "add_bias",
                format!("{:?} + {:?}", self.value(a).shape(), self.value(bias).shape()),
            ));
        }
        let mut out = self.value(a).clone();
        for r in 0..n {
            for c in 0..d {
                let v = out.at(r, c) + self.value(bias).data()[c];
                out.set(r, c, v);
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(t, Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let t = matmul(self.value(a), self.value(b))?;
        Ok(self.push(t, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let (n, d) = (x.rows(), x.cols());
        let mut out = Tensor::zeros(vec![d, n]);
        for r in 0..n {
            for c in 0..d {
                out.set(c, r, x.at(r, c));
            }
        }
        self.push(out, Op::Transpose(a))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| gelu_scalar(x)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).unwrap();
        self.push(t, Op::Gelu(a))
    }

    /// Softmax along each row, with optional attention mask. Errors when a
    /// row has no permitted column (the softmax would be undefined).
    pub fn row_softmax(&mut self, x: NodeId, mask: Option<AttnMask>) -> Result<NodeId> {
        let v = self.value(x);
        let (n, d) = (v.rows(), v.cols());
        if d == 0 {
            return Err(Error::dim("row_softmax", "empty rows".to_string()));
        }
        if let Some(m) = &mask {
            if m.rows != n || m.cols != d {
                return Err(Error::dim(
                    "row_softmax",
                    format!("mask {}x{} vs logits {n}x{d}", m.rows, m.cols),
                ));
            }
            for r in 0..n {
                if !(0..d).any(|c| m.allowed(r, c)) {
                    return Err(Error::Config(format!(
                        "attention mask row {r} permits no columns"
                    )));
                }
            }
        }
        let mut out = Tensor::zeros(vec![n, d]);
        for r in 0..n {
            let mut logits: Vec<f64> = v.row_slice(r).to_vec();
            if let Some(m) = &mask {
                for (c, l) in logits.iter_mut().enumerate() {
                    if !m.allowed(r, c) {
                        *l += MASK_PENALTY;
                    }
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for l in &mut logits {
                *l = (*l - max).exp();
                sum += *l;
            }
            for (c, l) in logits.iter().enumerate() {
                out.set(r, c, l / sum);
            }
        }
        Ok(self.push(out, Op::RowSoftmax { x }))
    }

    /// Row-wise layer normalization followed by elementwise affine gain/bias.
    pub fn layernorm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.value(x);
        let (n, d) = (v.rows(), v.cols());
        if d == 0 {
            return Err(Error::dim("layernorm", "zero-width input".to_string()));
        }
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(Error::dim(
                "layernorm",
                format!(
                    "gain {:?} / bias {:?} vs width {d}",
                    self.value(gain).shape(),
                    self.value(bias).shape()
                ),
            ));
        }
        if eps <= 0.0 {
            return Err(Error::Config("layernorm eps must be positive".to_string()));
        }
        let mut out = Tensor::zeros(vec![n, d]);
        let mut stats = Vec::with_capacity(n);
        for r in 0..n {
            let row = v.row_slice(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            stats.push((mean, inv));
            for c in 0..d {
                let xhat = (row[c] - mean) * inv;
                out.set(r, c, self.value(gain).data()[c] * xhat + self.value(bias).data()[c]);
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, stats }))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::dim("concat_rows", "no inputs".to_string()));
        }
        let d = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != d {
                return Err(Error::dim(
                    "concat_rows",
                    format!("width {} vs {}", v.cols(), d),
                ));
            }
            n += v.rows();
            data.extend_from_slice(v.data());
        }
        let t = Tensor::new(vec![n, d], data)?;
        Ok(self.push(t, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (n, d) = (v.rows(), v.cols());
        if start + len > n {
            return Err(Error::dim(
                "slice_rows",
                format!("rows {start}..{} out of {n}", start + len),
            ));
        }
        let data = v.data()[start * d..(start + len) * d].to_vec();
        let t = Tensor::new(vec![len, d], data)?;
        Ok(self.push(t, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        let (n, d) = (v.rows(), v.cols());
        if start + len > d {
            return Err(Error::dim(
                "slice_cols",
                format!("cols {start}..{} out of {d}", start + len),
            ));
        }
        let mut out = Tensor::zeros(vec![n, len]);
        for r in 0..n {
            for c in 0..len {
                out.set(r, c, v.at(r, start + c));
            }
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::dim("concat_cols", "no inputs".to_string()));
        }
        let n = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(vec![n, total]);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != n {
                return Err(Error::dim(
                    "concat_cols",
                    format!("rows {} vs {}", v.rows(), n),
                ));
            }
            for r in 0..n {
                for c in 0..v.cols() {
                    out.set(r, offset + c, v.at(r, c));
                }
            }
            offset += v.cols();
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Sum of every entry, as a `[1]` scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x))
    }

    /// `x @ w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    /// Σ(aᵢ−bᵢ)² as a scalar node.
    pub fn squared_l2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.sum_all(sq))
    }

    /// Reverse-mode sweep from a scalar loss node. Parameter gradients are
    /// scaled by `scale` and added into `accum`; nothing else is mutated.
    pub fn backward(&self, loss: NodeId, accum: &mut GradAccum, scale: f64) -> Result<()> {
        let loss_val = self.value(loss);
        if loss_val.numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", loss_val.shape()),
            ));
        }
        if !loss_val.data()[0].is_finite() {
            return Err(Error::Numeric {
                step: 0,
                detail: format!("non-finite loss {}", loss_val.data()[0]),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..self.nodes.len()).rev() {
            let grad = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Param(p) => accum.add(*p, &grad, scale),
                Op::GatherRows { param, rows } => accum.add_rows(*param, rows, &grad, scale),
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, grad.clone());
                    add_into(&mut grads, *b, grad);
                }
                Op::AddBias(a, b) => {
                    let d = grad.cols();
                    let mut db = Tensor::zeros(self.value(*b).shape().to_vec());
                    for r in 0..grad.rows() {
                        for c in 0..d {
                            db.data_mut()[c] += grad.at(r, c);
                        }
                    }
                    add_into(&mut grads, *a, grad);
                    add_into(&mut grads, *b, db);
                }
                Op::Sub(a, b) => {
                    let neg = scale_tensor(&grad, -1.0);
                    add_into(&mut grads, *a, grad);
                    add_into(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let da = elementwise_mul(&grad, self.value(*b));
                    let db = elementwise_mul(&grad, self.value(*a));
                    add_into(&mut grads, *a, da);
                    add_into(&mut grads, *b, db);
                }
                Op::Scale(a, c) => {
                    add_into(&mut grads, *a, scale_tensor(&grad, *c));
                }
                Op::MatMul(a, b) => {
                    // dA = dC @ B^T, dB = A^T @ dC
                    let bt = transpose_tensor(self.value(*b));
                    let at = transpose_tensor(self.value(*a));
                    let da = matmul(&grad, &bt).expect("backward shape");
                    let db = matmul(&at, &grad).expect("backward shape");
                    add_into(&mut grads, *a, da);
                    add_into(&mut grads, *b, db);
                }
                Op::Transpose(a) => {
                    add_into(&mut grads, *a, transpose_tensor(&grad));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let data = grad
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(g, &xv)| g * gelu_grad_scalar(xv))
                        .collect();
                    add_into(&mut grads, *a, Tensor::new(x.shape().to_vec(), data).unwrap());
                }
                Op::RowSoftmax { x } => {
                    // dx_j = y_j * (dy_j - Σ_k y_k dy_k); masked entries have y = 0.
                    let y = self.value(NodeId(i));
                    let (n, d) = (y.rows(), y.cols());
                    let mut dx = Tensor::zeros(vec![n, d]);
                    for r in 0..n {
                        let dot: f64 = (0..d).map(|c| y.at(r, c) * grad.at(r, c)).sum();
                        for c in 0..d {
                            dx.set(r, c, y.at(r, c) * (grad.at(r, c) - dot));
                        }
                    }
                    add_into(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gain, bias, stats } => {
                    let xv = self.value(*x);
                    let gv = self.value(*gain);
                    let (n, d) = (xv.rows(), xv.cols());
                    let mut dx = Tensor::zeros(vec![n, d]);
                    let mut dgain = Tensor::zeros(self.value(*gain).shape().to_vec());
                    let mut dbias = Tensor::zeros(self.value(*bias).shape().to_vec());
                    for r in 0..n {
                        let (mean, inv) = stats[r];
                        // dxhat = gain ⊙ dy; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat ⊙ xhat))
                        let mut sum_dxhat = 0.0;
                        let mut sum_dxhat_xhat = 0.0;
                        let mut dxhat = vec![0.0; d];
                        let mut xhat = vec![0.0; d];
                        for c in 0..d {
                            xhat[c] = (xv.at(r, c) - mean) * inv;
                            dxhat[c] = gv.data()[c] * grad.at(r, c);
                            sum_dxhat += dxhat[c];
                            sum_dxhat_xhat += dxhat[c] * xhat[c];
                            dgain.data_mut()[c] += grad.at(r, c) * xhat[c];
                            dbias.data_mut()[c] += grad.at(r, c);
                        }
                        let inv_d = 1.0 / d as f64;
                        for c in 0..d {
                            dx.set(
                                r,
                                c,
                                inv * (dxhat[c] - sum_dxhat * inv_d - xhat[c] * sum_dxhat_xhat * inv_d),
                            );
                        }
                    }
                    add_into(&mut grads, *x, dx);
                    add_into(&mut grads, *gain, dgain);
                    add_into(&mut grads, *bias, dbias);
                }
                Op::ConcatRows(parts) => {
                    let d = grad.cols();
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let slice = grad.data()[start * d..(start + rows) * d].to_vec();
                        add_into(&mut grads, p, Tensor::new(vec![rows, d], slice).unwrap());
                        start += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let xv = self.value(*x);
                    let (n, d) = (xv.rows(), xv.cols());
                    let mut dx = Tensor::zeros(vec![n, d]);
                    let len = grad.rows();
                    dx.data_mut()[start * d..(start + len) * d].copy_from_slice(grad.data());
                    add_into(&mut grads, *x, dx);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let (n, d) = (xv.rows(), xv.cols());
                    let mut dx = Tensor::zeros(vec![n, d]);
                    for r in 0..grad.rows() {
                        for c in 0..grad.cols() {
                            dx.set(r, start + c, grad.at(r, c));
                        }
                    }
                    add_into(&mut grads, *x, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let v = self.value(p);
                        let (n, w) = (v.rows(), v.cols());
                        let mut dp = Tensor::zeros(vec![n, w]);
                        for r in 0..n {
                            for c in 0..w {
                                dp.set(r, c, grad.at(r, offset + c));
                            }
                        }
                        add_into(&mut grads, p, dp);
                        offset += w;
                    }
                }
                Op::SumAll(x) => {
                    let g = grad.data()[0];
                    let xv = self.value(*x);
                    add_into(
                        &mut grads,
                        *x,
                        Tensor::new(xv.shape().to_vec(), vec![g; xv.numel()]).unwrap(),
                    );
                }
            }
        }
        Ok(())
    }
}

fn add_into(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn scale_tensor(t: &Tensor, c: f64) -> Tensor {
    let data = t.data().iter().map(|v| v * c).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn elementwise_mul(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

fn transpose_tensor(t: &Tensor) -> Tensor {
    let (n, d) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(vec![d, n]);
    for r in 0..n {
        for c in 0..d {
            out.set(c, r, t.at(r, c));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    fn store_with(values: &[(&str, Tensor)]) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, t) in values {
            s.add(name, t.clone(), true).unwrap();
        }
        s
    }

    #[test]
    fn quadratic_gradient() {
        // f(x) = sum(x*x), df/dx = 2x
        let store = store_with(&[("x", Tensor::row(&[3.0, -2.0]))]);
        let mut tape = Tape::new(&store);
        let x = tape.param(ParamId(0));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq);
        let mut accum = GradAccum::new(&store);
        tape.backward(loss, &mut accum, 1.0).unwrap();
        assert_eq!(accum.get(ParamId(0)).unwrap().data(), &[6.0, -4.0]);
    }

    #[test]
    fn matmul_chain_gradient() {
        let store = store_with(&[
            ("a", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()),
            ("b", Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap()),
        ]);
        let mut tape = Tape::new(&store);
        let a = tape.param(ParamId(0));
        let b = tape.param(ParamId(1));
        let c = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(c);
        let mut accum = GradAccum::new(&store);
        tape.backward(loss, &mut accum, 1.0).unwrap();
        // dL/dA = 1 @ b^T per row, dL/dB = a^T @ 1
        assert_eq!(accum.get(ParamId(0)).unwrap().data(), &[5.0, 6.0, 5.0, 6.0]);
        assert_eq!(accum.get(ParamId(1)).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn masked_softmax_exact_zeros() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::new(vec![1, 3], vec![5.0, 1.0, -2.0]).unwrap());
        let mask = Arc::new(MaskBits {
            rows: 1,
            cols: 3,
            bits: vec![true, false, true],
        });
        let y = tape.row_softmax(x, Some(mask)).unwrap();
        let v = tape.value(y);
        assert_eq!(v.at(0, 1), 0.0);
        let total: f64 = v.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_all_masked_row_errors() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
        let mask = Arc::new(MaskBits {
            rows: 1,
            cols: 2,
            bits: vec![false, false],
        });
        assert!(matches!(
            tape.row_softmax(x, Some(mask)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn determinism_two_passes_bit_identical() {
        let mut rng = RngStream::new(99);
        let mut store = ParamStore::new();
        store
            .add("w", Tensor::randn(vec![4, 4], 0.5, &mut rng), true)
            .unwrap();
        store
            .add("x", Tensor::randn(vec![2, 4], 1.0, &mut rng), true)
            .unwrap();
        let run = |store: &ParamStore| -> (f64, Tensor) {
            let mut tape = Tape::new(store);
            let w = tape.param(ParamId(0));
            let x = tape.param(ParamId(1));
            let y = tape.matmul(x, w).unwrap();
            let s = tape.row_softmax(y, None).unwrap();
            let g = tape.gelu(s);
            let loss = tape.sum_all(g);
            let mut accum = GradAccum::new(store);
            tape.backward(loss, &mut accum, 1.0).unwrap();
            (tape.scalar_value(loss), accum.get(ParamId(0)).unwrap().clone())
        };
        let (l1, g1) = run(&store);
        let (l2, g2) = run(&store);
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
