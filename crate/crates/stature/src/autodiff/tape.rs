//! Reverse-mode differentiation on an operation tape.
//!
//! Values are computed eagerly as operations are recorded; the tape order is
//! a topological order of the computation graph by construction, and the
//! backward pass walks it in reverse exactly once. Any non-finite value in a
//! forward result or a gradient raises a `DivergenceFault` instead of
//! propagating silently.

use crate::error::{Error, Result};

use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Dense { x: usize, w: usize, b: usize },
    Relu { x: usize },
    Concat { a: usize, b: usize, axis: usize },
    Conv2d { x: usize, kernels: usize, stride: usize },
    AvgPool { x: usize, k: usize },
    Flatten { x: usize },
    Mse { pred: usize, target: usize },
    Bce { logit: usize, label: usize },
    WeightedSum { x: usize, coeffs: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Dense { .. } => "dense",
            Op::Relu { .. } => "relu",
            Op::Concat { .. } => "concat",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool { .. } => "avgpool",
            Op::Flatten { .. } => "flatten",
            Op::Mse { .. } => "mse_loss",
            Op::Bce { .. } => "bce_loss",
            Op::WeightedSum { .. } => "weighted_sum",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Eager operation tape; one per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::DivergenceFault {
                step: self.nodes.len(),
                context: format!("forward {}", op.name()),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input node; gradients flow into it but no further.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// y = x W + b with x `[n, in]`, W `[in, out]`, b `[out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) =
            (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || ws[1] != bs[0] {
            return Err(Error::ShapeError(format!(
                "dense: x {xs:?}, W {ws:?}, b {bs:?}"
            )));
        }
        let (n, d_in, d_out) = (xs[0], xs[1], ws[1]);
        let mut y = matmul(self.value(x), self.value(w), n, d_in, d_out);
        let bias = self.value(b).data().to_vec();
        for row in 0..n {
            let slot = &mut y.data_mut()[row * d_out..(row + 1) * d_out];
            for (s, bv) in slot.iter_mut().zip(&bias) {
                *s += bv;
            }
        }
        self.push(y, Op::Dense { x: x.0, w: w.0, b: b.0 })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x);
        let data = value.data().iter().map(|v| v.max(0.0)).collect();
        let y = Tensor::new(value.shape().to_vec(), data)?;
        self.push(y, Op::Relu { x: x.0 })
    }

    /// Concatenates two tensors of equal rank along `axis`; all other
    /// dimensions must agree.
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != sb.len() || axis >= sa.len() {
            return Err(Error::ShapeError(format!("concat axis {axis}: {sa:?} vs {sb:?}")));
        }
        for (d, (x, y)) in sa.iter().zip(&sb).enumerate() {
            if d != axis && x != y {
                return Err(Error::ShapeError(format!("concat axis {axis}: {sa:?} vs {sb:?}")));
            }
        }
        let outer: usize = sa[..axis].iter().product();
        let inner: usize = sa[axis + 1..].iter().product();
        let block_a = sa[axis] * inner;
        let block_b = sb[axis] * inner;
        let mut out_shape = sa.clone();
        out_shape[axis] += sb[axis];
        let mut data = Vec::with_capacity(outer * (block_a + block_b));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for o in 0..outer {
            data.extend_from_slice(&da[o * block_a..(o + 1) * block_a]);
            data.extend_from_slice(&db[o * block_b..(o + 1) * block_b]);
        }
        let y = Tensor::new(out_shape, data)?;
        self.push(y, Op::Concat { a: a.0, b: b.0, axis })
    }

    /// Valid-padding 2D convolution: x [n, c_in, h, w], kernels
    /// [c_out, c_in, kh, kw], stride 1 or 2.
    pub fn conv2d(&mut self, x: Var, kernels: Var, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(kernels).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::ShapeError(format!("conv2d: x {xs:?}, kernels {ks:?}")));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::ShapeError(format!("conv2d: stride {stride} not in {{1, 2}}")));
        }
        let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        if kh > h || kw > w {
            return Err(Error::ShapeError(format!(
                "conv2d: kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        let oh = (h - kh) / stride + 1;
        let ow = (w - kw) / stride + 1;
        let xd = self.value(x).data();
        let kd = self.value(kernels).data();
        let mut out = vec![0.0; n * c_out * oh * ow];
        for img in 0..n {
            for co in 0..c_out {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c_in {
                            let xbase = ((img * c_in + ci) * h + oy * stride) * w + ox * stride;
                            let kbase = ((co * c_in + ci) * kh) * kw;
                            for p in 0..kh {
                                let xrow = xbase + p * w;
                                let krow = kbase + p * kw;
                                for q in 0..kw {
                                    acc += xd[xrow + q] * kd[krow + q];
                                }
                            }
                        }
                        out[((img * c_out + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        let y = Tensor::new(vec![n, c_out, oh, ow], out)?;
        self.push(y, Op::Conv2d { x: x.0, kernels: kernels.0, stride })
    }

    /// Non-overlapping k x k average pooling on x [n, c, h, w]; trailing
    /// rows/columns that do not fill a window are dropped.
    pub fn avgpool(&mut self, x: Var, k: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 4 || k == 0 {
            return Err(Error::ShapeError(format!("avgpool: x {xs:?}, k {k}")));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / k, w / k);
        if oh == 0 || ow == 0 {
            return Err(Error::ShapeError(format!("avgpool: window {k} exceeds {h}x{w}")));
        }
        let xd = self.value(x).data();
        let inv = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; n * c * oh * ow];
        for img in 0..n {
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for p in 0..k {
                            let base = ((img * c + ch) * h + oy * k + p) * w + ox * k;
                            for q in 0..k {
                                acc += xd[base + q];
                            }
                        }
                        out[((img * c + ch) * oh + oy) * ow + ox] = acc * inv;
                    }
                }
            }
        }
        let y = Tensor::new(vec![n, c, oh, ow], out)?;
        self.push(y, Op::AvgPool { x: x.0, k })
    }

    /// Collapses all but the leading dimension: [n, ...] -> [n, rest].
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.is_empty() {
            return Err(Error::ShapeError("flatten of rank-0 tensor".into()));
        }
        let rest: usize = xs[1..].iter().product();
        let y = self.value(x).reshaped(vec![xs[0], rest])?;
        self.push(y, Op::Flatten { x: x.0 })
    }

    /// Mean squared error over [n, 1] predictions and targets.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (ps, ts) = (self.value(pred).shape(), self.value(target).shape());
        if ps != ts || ps.len() != 2 || ps[1] != 1 {
            return Err(Error::ShapeError(format!("mse_loss: pred {ps:?}, target {ts:?}")));
        }
        if ps[0] == 0 {
            return Err(Error::EmptyBatch);
        }
        let n = ps[0] as f64;
        let loss = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::Mse { pred: pred.0, target: target.0 })
    }

    /// Numerically stable sigmoid cross-entropy over [n, 1] logits and
    /// binary labels.
    pub fn bce_loss(&mut self, logit: Var, label: Var) -> Result<Var> {
        let (zs, ys) = (self.value(logit).shape(), self.value(label).shape());
        if zs != ys || zs.len() != 2 || zs[1] != 1 {
            return Err(Error::ShapeError(format!("bce_loss: logit {zs:?}, label {ys:?}")));
        }
        if zs[0] == 0 {
            return Err(Error::EmptyBatch);
        }
        for &y in self.value(label).data() {
            if y != 0.0 && y != 1.0 {
                return Err(Error::LabelError(y));
            }
        }
        let n = zs[0] as f64;
        let loss = self
            .value(logit)
            .data()
            .iter()
            .zip(self.value(label).data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(Tensor::scalar(loss), Op::Bce { logit: logit.0, label: label.0 })
    }

    /// Scalar dot product sum(x * coeffs); used to reduce arbitrary tensors
    /// to a differentiable scalar.
    pub fn weighted_sum(&mut self, x: Var, coeffs: Var) -> Result<Var> {
        if self.value(x).shape() != self.value(coeffs).shape() {
            return Err(Error::ShapeError(format!(
                "weighted_sum: {:?} vs {:?}",
                self.value(x).shape(),
                self.value(coeffs).shape()
            )));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(self.value(coeffs).data())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        self.push(Tensor::scalar(s), Op::WeightedSum { x: x.0, coeffs: coeffs.0 })
    }

    /// Gradients of a scalar loss with respect to every tape node, by one
    /// reverse sweep.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::ShapeError(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                    continue;
                }
                Op::Dense { x, w, b } => {
                    let xs = self.nodes[*x].value.shape();
                    let ws = self.nodes[*w].value.shape();
                    let (n, d_in, d_out) = (xs[0], xs[1], ws[1]);
                    let dx = matmul_a_bt(&dy, &self.nodes[*w].value, n, d_out, d_in);
                    let dw = matmul_at_b(&self.nodes[*x].value, &dy, n, d_in, d_out);
                    let mut db = vec![0.0; d_out];
                    for row in 0..n {
                        for (slot, v) in
                            db.iter_mut().zip(&dy.data()[row * d_out..(row + 1) * d_out])
                        {
                            *slot += v;
                        }
                    }
                    accumulate(&mut grads, *x, dx)?;
                    accumulate(&mut grads, *w, dw)?;
                    accumulate(&mut grads, *b, Tensor::new(vec![d_out], db)?)?;
                }
                Op::Relu { x } => {
                    let xv = self.nodes[*x].value.data();
                    let data =
                        dy.data().iter().zip(xv).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 });
                    let dx = Tensor::new(self.nodes[*x].value.shape().to_vec(), data.collect())?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Concat { a, b, axis } => {
                    let sa = self.nodes[*a].value.shape().to_vec();
                    let sb = self.nodes[*b].value.shape().to_vec();
                    let outer: usize = sa[..*axis].iter().product();
                    let inner: usize = sa[*axis + 1..].iter().product();
                    let block_a = sa[*axis] * inner;
                    let block_b = sb[*axis] * inner;
                    let mut da = Vec::with_capacity(outer * block_a);
                    let mut db = Vec::with_capacity(outer * block_b);
                    let gd = dy.data();
                    for o in 0..outer {
                        let start = o * (block_a + block_b);
                        da.extend_from_slice(&gd[start..start + block_a]);
                        db.extend_from_slice(&gd[start + block_a..start + block_a + block_b]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(sa, da)?)?;
                    accumulate(&mut grads, *b, Tensor::new(sb, db)?)?;
                }
                Op::Conv2d { x, kernels, stride } => {
                    let xs = self.nodes[*x].value.shape().to_vec();
                    let ks = self.nodes[*kernels].value.shape().to_vec();
                    let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
                    let oh = (h - kh) / stride + 1;
                    let ow = (w - kw) / stride + 1;
                    let xd = self.nodes[*x].value.data();
                    let kd = self.nodes[*kernels].value.data();
                    let gd = dy.data();
                    let mut dx = vec![0.0; xd.len()];
                    let mut dk = vec![0.0; kd.len()];
                    for img in 0..n {
                        for co in 0..c_out {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let g = gd[((img * c_out + co) * oh + oy) * ow + ox];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    for ci in 0..c_in {
                                        let xbase = ((img * c_in + ci) * h + oy * stride) * w
                                            + ox * stride;
                                        let kbase = ((co * c_in + ci) * kh) * kw;
                                        for p in 0..kh {
                                            let xrow = xbase + p * w;
                                            let krow = kbase + p * kw;
                                            for q in 0..kw {
                                                dx[xrow + q] += g * kd[krow + q];
                                                dk[krow + q] += g * xd[xrow + q];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?)?;
                    accumulate(&mut grads, *kernels, Tensor::new(ks, dk)?)?;
                }
                Op::AvgPool { x, k } => {
                    let xs = self.nodes[*x].value.shape().to_vec();
                    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
                    let (oh, ow) = (h / k, w / k);
                    let inv = 1.0 / (k * k) as f64;
                    let gd = dy.data();
                    let mut dx = vec![0.0; n * c * h * w];
                    for img in 0..n {
                        for ch in 0..c {
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let g = gd[((img * c + ch) * oh + oy) * ow + ox] * inv;
                                    for p in 0..*k {
                                        let base =
                                            ((img * c + ch) * h + oy * k + p) * w + ox * k;
                                        for q in 0..*k {
                                            dx[base + q] += g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xs, dx)?)?;
                }
                Op::Flatten { x } => {
                    let dx = dy.reshaped(self.nodes[*x].value.shape().to_vec())?;
                    accumulate(&mut grads, *x, dx)?;
                }
                Op::Mse { pred, target } => {
                    let g = dy.item();
                    let n = self.nodes[*pred].value.shape()[0] as f64;
                    let pd = self.nodes[*pred].value.data();
                    let td = self.nodes[*target].value.data();
                    let dpred: Vec<f64> =
                        pd.iter().zip(td).map(|(p, t)| g * 2.0 * (p - t) / n).collect();
                    let dtarget: Vec<f64> = dpred.iter().map(|v| -v).collect();
                    let shape = self.nodes[*pred].value.shape().to_vec();
                    accumulate(&mut grads, *pred, Tensor::new(shape.clone(), dpred)?)?;
                    accumulate(&mut grads, *target, Tensor::new(shape, dtarget)?)?;
                }
                Op::Bce { logit, label } => {
                    let g = dy.item();
                    let n = self.nodes[*logit].value.shape()[0] as f64;
                    let zd = self.nodes[*logit].value.data();
                    let yd = self.nodes[*label].value.data();
                    let dz: Vec<f64> =
                        zd.iter().zip(yd).map(|(&z, &y)| g * (sigmoid(z) - y) / n).collect();
                    let shape = self.nodes[*logit].value.shape().to_vec();
                    accumulate(&mut grads, *logit, Tensor::new(shape, dz)?)?;
                }
                Op::WeightedSum { x, coeffs } => {
                    let g = dy.item();
                    let dx: Vec<f64> =
                        self.nodes[*coeffs].value.data().iter().map(|c| g * c).collect();
                    let dc: Vec<f64> =
                        self.nodes[*x].value.data().iter().map(|v| g * v).collect();
                    let xshape = self.nodes[*x].value.shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(xshape.clone(), dx)?)?;
                    accumulate(&mut grads, *coeffs, Tensor::new(xshape, dc)?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, add: Tensor) -> Result<()> {
    if !add.all_finite() {
        return Err(Error::DivergenceFault { step: idx, context: "backward gradient".into() });
    }
    match &mut grads[idx] {
        Some(existing) => {
            for (e, a) in existing.data_mut().iter_mut().zip(add.data()) {
                *e += a;
            }
        }
        slot @ None => *slot = Some(add),
    }
    Ok(())
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn leaf(tape: &mut Tape, shape: &[usize], data: Vec<f64>) -> Var {
        tape.leaf(Tensor::new(shape.to_vec(), data).unwrap()).unwrap()
    }

    #[test]
    fn dense_identity_passthrough() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let w = leaf(&mut tape, &[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let b = leaf(&mut tape, &[2], vec![0.0, 0.0]);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dense_small_case() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2], vec![1.0, 2.0]);
        let w = leaf(&mut tape, &[2, 1], vec![1.0, 1.0]);
        let b = leaf(&mut tape, &[1], vec![0.5]);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5]);
    }

    #[test]
    fn dense_shape_mismatch() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 3], vec![0.0; 3]);
        let w = leaf(&mut tape, &[2, 1], vec![0.0; 2]);
        let b = leaf(&mut tape, &[1], vec![0.0]);
        assert!(matches!(tape.dense(x, w, b), Err(Error::ShapeError(_))));
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 3], vec![-1.0, 0.0, 2.0]);
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn concat_axis1() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut tape, &[2, 1], vec![9.0, 8.0]);
        let y = tape.concat(a, b, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 3]);
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 8.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect());
        let k = leaf(&mut tape, &[1, 1, 1, 1], vec![1.0]);
        let y = tape.conv2d(x, k, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv2d_known_values() {
        // 3x3 input, 2x2 averaging kernel, stride 1.
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect());
        let k = leaf(&mut tape, &[1, 1, 2, 2], vec![0.25; 4]);
        let y = tape.conv2d(x, k, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[3.0, 4.0, 6.0, 7.0]);
    }

    #[test]
    fn conv2d_stride_two() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 4, 4], (0..16).map(|v| v as f64).collect());
        let k = leaf(&mut tape, &[1, 1, 2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let y = tape.conv2d(x, k, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
        assert_eq!(tape.value(y).data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn avgpool_values() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 1, 2, 4], vec![1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]);
        let y = tape.avgpool(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 2]);
        assert_eq!(tape.value(y).data(), &[2.5, 6.5]);
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, &[2, 1], vec![1.0, 2.0]);
        let t = leaf(&mut tape, &[2, 1], vec![1.0, 2.0]);
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let p = leaf(&mut tape, &[1, 1], vec![3.0]);
        let t = leaf(&mut tape, &[1, 1], vec![1.0]);
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 4.0);
    }

    #[test]
    fn mse_empty_batch() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, &[0, 1], vec![]);
        let t = leaf(&mut tape, &[0, 1], vec![]);
        assert!(matches!(tape.mse_loss(p, t), Err(Error::EmptyBatch)));
    }

    #[test]
    fn mse_gradient_closed_form() {
        let mut tape = Tape::new();
        let p = leaf(&mut tape, &[2, 1], vec![3.0, 0.0]);
        let t = leaf(&mut tape, &[2, 1], vec![1.0, 1.0]);
        let l = tape.mse_loss(p, t).unwrap();
        let grads = tape.backward(l).unwrap();
        // d/dp mean((p - t)^2) = 2 (p - t) / n
        assert_eq!(grads.get(p).unwrap().data(), &[2.0, -1.0]);
    }

    #[test]
    fn bce_symmetry_and_saturation() {
        let mut tape = Tape::new();
        let z = leaf(&mut tape, &[1, 1], vec![0.0]);
        let y = leaf(&mut tape, &[1, 1], vec![1.0]);
        let l = tape.bce_loss(z, y).unwrap();
        assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

        let z = leaf(&mut tape, &[1, 1], vec![20.0]);
        let y = leaf(&mut tape, &[1, 1], vec![1.0]);
        let l = tape.bce_loss(z, y).unwrap();
        assert!(tape.value(l).item() < 1e-8);
        assert!(tape.value(l).item() >= 0.0);

        // Extreme logits must not overflow.
        let z = leaf(&mut tape, &[1, 1], vec![-500.0]);
        let y = leaf(&mut tape, &[1, 1], vec![0.0]);
        let l = tape.bce_loss(z, y).unwrap();
        assert!(tape.value(l).item().is_finite());
    }

    #[test]
    fn bce_rejects_non_binary_label() {
        let mut tape = Tape::new();
        let z = leaf(&mut tape, &[1, 1], vec![0.0]);
        let y = leaf(&mut tape, &[1, 1], vec![0.5]);
        assert!(matches!(tape.bce_loss(z, y), Err(Error::LabelError(_))));
    }

    #[test]
    fn forward_nan_trips_fault() {
        let mut tape = Tape::new();
        let bad = tape.leaf(Tensor::new(vec![1, 1], vec![f64::NAN]).unwrap());
        assert!(matches!(bad, Err(Error::DivergenceFault { .. })));
    }

    /// Central finite differences of a scalar-valued closure over flat
    /// input buffers.
    fn finite_diff(
        f: &dyn Fn(&[Vec<f64>]) -> f64,
        inputs: &[Vec<f64>],
        which: usize,
        h: f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; inputs[which].len()];
        let mut work: Vec<Vec<f64>> = inputs.to_vec();
        for i in 0..grad.len() {
            let orig = work[which][i];
            work[which][i] = orig + h;
            let hi = f(&work);
            work[which][i] = orig - h;
            let lo = f(&work);
            work[which][i] = orig;
            grad[i] = (hi - lo) / (2.0 * h);
        }
        grad
    }

    fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
        for (a, n) in analytic.iter().zip(numeric) {
            let denom = a.abs().max(n.abs()).max(1e-3);
            assert!(
                (a - n).abs() / denom < 1e-4,
                "{what}: analytic {a} vs numeric {n}"
            );
        }
    }

    /// FD check harness: builds the graph from raw buffers, reduces the
    /// output with fixed random coefficients and compares every input
    /// gradient against central differences.
    fn check_op(
        rng: &mut Rng,
        shapes: &[Vec<usize>],
        build: &dyn Fn(&mut Tape, &[Var]) -> Var,
        what: &str,
    ) {
        let inputs: Vec<Vec<f64>> = shapes
            .iter()
            .map(|s| {
                (0..s.iter().product::<usize>()).map(|_| rng.range(-2.0, 2.0)).collect()
            })
            .collect();
        // Probe the output size once to draw the reduction coefficients.
        let out_len = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .zip(shapes)
                .map(|(d, s)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap()).unwrap())
                .collect();
            let out = build(&mut tape, &vars);
            tape.value(out).len()
        };
        let coeffs: Vec<f64> = (0..out_len).map(|_| rng.range(-1.0, 1.0)).collect();

        let eval = |raw: &[Vec<f64>]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = raw
                .iter()
                .zip(shapes)
                .map(|(d, s)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap()).unwrap())
                .collect();
            let out = build(&mut tape, &vars);
            let shape = tape.value(out).shape().to_vec();
            let c = tape.leaf(Tensor::new(shape, coeffs.clone()).unwrap()).unwrap();
            let s = tape.weighted_sum(out, c).unwrap();
            tape.value(s).item()
        };

        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(shapes)
            .map(|(d, s)| tape.leaf(Tensor::new(s.clone(), d.clone()).unwrap()).unwrap())
            .collect();
        let out = build(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let c = tape.leaf(Tensor::new(shape, coeffs.clone()).unwrap()).unwrap();
        let s = tape.weighted_sum(out, c).unwrap();
        let grads = tape.backward(s).unwrap();

        for (i, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var).map(|t| t.data().to_vec()).unwrap_or_default();
            let numeric = finite_diff(&eval, &inputs, i, 1e-4);
            assert_close(&analytic, &numeric, what);
        }
    }

    #[test]
    fn fd_dense() {
        let mut rng = Rng::new(101);
        for _ in 0..20 {
            let n = 1 + rng.below(3);
            let d_in = 1 + rng.below(4);
            let d_out = 1 + rng.below(4);
            check_op(
                &mut rng,
                &[vec![n, d_in], vec![d_in, d_out], vec![d_out]],
                &|tape, v| tape.dense(v[0], v[1], v[2]).unwrap(),
                "dense",
            );
        }
    }

    #[test]
    fn fd_conv2d_and_avgpool() {
        let mut rng = Rng::new(102);
        for stride in [1usize, 2] {
            for _ in 0..5 {
                let c_in = 1 + rng.below(2);
                let c_out = 1 + rng.below(2);
                let h = 4 + rng.below(3);
                let w = 4 + rng.below(3);
                check_op(
                    &mut rng,
                    &[vec![1, c_in, h, w], vec![c_out, c_in, 2, 2]],
                    &|tape, v| tape.conv2d(v[0], v[1], stride).unwrap(),
                    "conv2d",
                );
            }
        }
        for _ in 0..5 {
            let h = 4 + rng.below(3);
            check_op(
                &mut rng,
                &[vec![1, 2, h, h]],
                &|tape, v| tape.avgpool(v[0], 2).unwrap(),
                "avgpool",
            );
        }
    }

    #[test]
    fn backward_linearity() {
        // grad of (a f + b g) equals a grad f + b grad g, with f and g the
        // mse and weighted-sum heads over shared inputs.
        let mut rng = Rng::new(103);
        for _ in 0..20 {
            let n = 2 + rng.below(3);
            let x: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.range(-1.0, 1.0)).collect();
            let (a, b) = (rng.range(-2.0, 2.0), rng.range(-2.0, 2.0));

            let grad_of = |wa: f64, wb: f64| -> Vec<f64> {
                let mut tape = Tape::new();
                let xv = tape.leaf(Tensor::column(&x)).unwrap();
                let tv = tape.leaf(Tensor::column(&t)).unwrap();
                let cv = tape.leaf(Tensor::column(&c)).unwrap();
                let f = tape.mse_loss(xv, tv).unwrap();
                let g = tape.weighted_sum(xv, cv).unwrap();
                // wa * f + wb * g via weighted sum over the concat of the two
                // scalars.
                let fg = tape.concat(f, g, 0).unwrap();
                let w = tape.leaf(Tensor::new(vec![2], vec![wa, wb]).unwrap()).unwrap();
                let total = tape.weighted_sum(fg, w).unwrap();
                let grads = tape.backward(total).unwrap();
                grads.get(xv).unwrap().data().to_vec()
            };

            let gf = grad_of(1.0, 0.0);
            let gg = grad_of(0.0, 1.0);
            let combined = grad_of(a, b);
            for i in 0..n {
                let expected = a * gf[i] + b * gg[i];
                assert!((combined[i] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn backward_determinism() {
        let run = || {
            let mut tape = Tape::new();
            let x = leaf(&mut tape, &[2, 3], vec![0.1, -0.4, 0.7, 0.3, 0.2, -0.9]);
            let w = leaf(&mut tape, &[3, 1], vec![0.5, -0.25, 0.125]);
            let b = leaf(&mut tape, &[1], vec![0.01]);
            let h = tape.dense(x, w, b).unwrap();
            let r = tape.relu(h).unwrap();
            let t = leaf(&mut tape, &[2, 1], vec![1.0, 0.0]);
            let l = tape.mse_loss(r, t).unwrap();
            let grads = tape.backward(l).unwrap();
            (
                tape.value(l).item().to_bits(),
                grads.get(w).unwrap().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
