use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::kernels::{self, Conv1dDims, Conv2dDims};
use super::norm::{self, BatchNormState, NormMode};
use super::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` before taking logs.
pub const P_CLAMP: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Which confidence-map axis a per-position vector indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapAxis {
    /// `out[.., s, e] = v[.., s]`
    Start,
    /// `out[.., s, e] = v[.., e]`
    End,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dims: Conv1dDims,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        dims: Conv2dDims,
    },
    Relu(Var),
    Sigmoid(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    RepeatToMap {
        x: Var,
        axis: MapAxis,
    },
    ConcatChannels(Vec<Var>),
    SelectChannel {
        x: Var,
        index: usize,
        channels: usize,
    },
    BandAssemble {
        starts: Vec<Var>,
        ends: Vec<Var>,
        cell_band: Arc<Vec<Option<usize>>>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Vec<f64>,
        inv_std: Vec<f64>,
        mode: NormMode,
    },
    Sum(Var),
    Mean(Var),
    WeightedLog {
        p: Var,
        pos: Vec<f64>,
        neg: Vec<f64>,
    },
    WeightedSq {
        p: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of a forward computation. Node ids are assigned in creation order, so
/// every input precedes its consumer.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"))
    }

    pub fn data(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

/// Shorter operand must be a trailing suffix of the longer one (leading 1s ignored).
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    fn strip(s: &[usize]) -> &[usize] {
        let first = s.iter().position(|&d| d != 1).unwrap_or(s.len());
        &s[first..]
    }
    if a == b {
        return Some(a.to_vec());
    }
    let (sa, sb) = (strip(a), strip(b));
    if sa.ends_with(sb) {
        Some(a.to_vec())
    } else if sb.ends_with(sa) {
        Some(b.to_vec())
    } else {
        None
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
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

    /// Fingerprint of which piece of every piecewise-smooth operation the recorded values fall
    /// in: the sign of each ReLU input and whether each log-loss probability is clamped.
    /// Two evaluations with equal fingerprints lie on the same smooth piece.
    pub fn kink_pattern(&self) -> u64 {
        fn pack(h: &mut DefaultHasher, bits: impl Iterator<Item = bool>) {
            let mut word = 0u64;
            let mut n = 0;
            for b in bits {
                word = (word << 1) | u64::from(b);
                n += 1;
                if n == 64 {
                    word.hash(h);
                    word = 0;
                    n = 0;
                }
            }
            (word, n).hash(h);
        }
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => pack(&mut h, self.value(*x).data().iter().map(|&a| a > 0.0)),
                Op::WeightedLog { p, .. } => pack(
                    &mut h,
                    self.value(*p)
                        .data()
                        .iter()
                        .flat_map(|&a| [a < P_CLAMP, a > 1.0 - P_CLAMP]),
                ),
                _ => {}
            }
        }
        h.finish()
    }

    /// Same-length 1D convolution with zero padding `(k - 1) / 2` on each side.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return Err(Error::shape(format!(
                "conv1d expects input [B,Cin,T], weight [Cout,Cin,k], bias [Cout]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        if ws[1] != xs[1] || bs[0] != ws[0] {
            return Err(Error::shape(format!(
                "conv1d channel mismatch: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        if ws[2] % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv1d kernel size must be odd, got {}",
                ws[2]
            )));
        }
        let dims = Conv1dDims {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            len: xs[2],
            kernel: ws[2],
        };
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        let value = Tensor::new(vec![dims.batch, dims.cout, dims.len], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, dims }, &[x, w, b]))
    }

    /// 2D cross-correlation with odd kernel, dilation `d` and zero padding `d·(k-1)/2`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        if dilation < 1 {
            return Err(Error::invalid("dilation rate must be at least 1"));
        }
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 4 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(format!(
                "conv2d expects input [B,C,H,W], weight [Cout,C,kh,kw], bias [Cout]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        if ws[1] != xs[1] || bs[0] != ws[0] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv2d kernel must be odd, got {}x{}",
                ws[2], ws[3]
            )));
        }
        let dims = Conv2dDims {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            height: xs[2],
            width: xs[3],
            kh: ws[2],
            kw: ws[3],
            dilation,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
        );
        let value = Tensor::new(vec![dims.batch, dims.cout, dims.height, dims.width], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, dims }, &[x, w, b]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |a| a * k, Op::Scale(x, k))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| {
            Error::shape(format!(
                "incompatible operand shapes {:?} and {:?}",
                va.shape(),
                vb.shape()
            ))
        })?;
        let n: usize = shape.iter().product();
        let (da, db) = (va.data(), vb.data());
        let (na, nb) = (da.len(), db.len());
        let data = (0..n).map(|i| f(da[i % na], db[i % nb])).collect();
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// `[B,C,T] → [B,C,T,T]`, broadcasting along the axis the vector does not index.
    pub fn repeat_to_map(&mut self, x: Var, axis: MapAxis) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 3 {
            return Err(Error::shape(format!("repeat_to_map expects [B,C,T], got {xs:?}")));
        }
        let (bc, t) = (xs[0] * xs[1], xs[2]);
        let shape = vec![xs[0], xs[1], t, t];
        let src = self.value(x).data();
        let mut out = vec![0.0; bc * t * t];
        for r in 0..bc {
            let v = &src[r * t..(r + 1) * t];
            let m = &mut out[r * t * t..(r + 1) * t * t];
            for s in 0..t {
                let row = &mut m[s * t..(s + 1) * t];
                match axis {
                    MapAxis::Start => row.fill(v[s]),
                    MapAxis::End => row.copy_from_slice(v),
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::RepeatToMap { x, axis }, &[x]))
    }

    /// Concatenates `[B, C_i, ...]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .shape(
                *parts
                    .first()
                    .ok_or_else(|| Error::invalid("nothing to concatenate"))?,
            )
            .to_vec();
        if first.len() < 2 {
            return Err(Error::shape("concat needs at least [B, C]"));
        }
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::shape(format!("concat shape mismatch: {first:?} vs {s:?}")));
            }
            channels += s[1];
        }
        let inner: usize = first[2..].iter().product();
        let batch = first[0];
        let mut out = Vec::with_capacity(batch * channels * inner);
        for b in 0..batch {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                out.extend_from_slice(&v.data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = first.clone();
        shape[1] = channels;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::ConcatChannels(parts.to_vec()), parts))
    }

    /// `[B, C, rest..] → [B, rest..]` taking channel `index`.
    pub fn select_channel(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || index >= xs[1] {
            return Err(Error::shape(format!("cannot select channel {index} of {xs:?}")));
        }
        let inner: usize = xs[2..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(xs[0] * inner);
        for b in 0..xs[0] {
            out.extend_from_slice(&src[(b * xs[1] + index) * inner..][..inner]);
        }
        let mut shape = vec![xs[0]];
        shape.extend_from_slice(&xs[2..]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::SelectChannel {
                x,
                index,
                channels: xs[1],
            },
            &[x],
        ))
    }

    /// Masked assembly of per-band boundary features into a proposal map.
    ///
    /// For a cell `(s, e)` assigned to band `i`, channels `0..N` take `starts[i][.., s]` and
    /// channels `N..2N` take `ends[i][.., e]`; unassigned cells are zero. `cell_band` is
    /// row-major over `(s, e)`.
    pub fn band_assemble(
        &mut self,
        starts: &[Var],
        ends: &[Var],
        cell_band: Arc<Vec<Option<usize>>>,
    ) -> Result<Var> {
        if starts.is_empty() || starts.len() != ends.len() {
            return Err(Error::invalid("band_assemble needs matching start/end lists"));
        }
        let s0 = self.shape(starts[0]).to_vec();
        if s0.len() != 3 {
            return Err(Error::shape(format!("band features must be [B,N,T], got {s0:?}")));
        }
        for &v in starts.iter().chain(ends) {
            if self.shape(v) != s0.as_slice() {
                return Err(Error::shape(format!(
                    "band feature shape {:?} differs from {s0:?}",
                    self.shape(v)
                )));
            }
        }
        let (batch, n, t) = (s0[0], s0[1], s0[2]);
        if cell_band.len() != t * t {
            return Err(Error::shape(format!(
                "band assignment covers {} cells, map has {}",
                cell_band.len(),
                t * t
            )));
        }
        if cell_band.iter().flatten().any(|&i| i >= starts.len()) {
            return Err(Error::invalid("band index out of range"));
        }
        let tt = t * t;
        let mut out = vec![0.0; batch * 2 * n * tt];
        for b in 0..batch {
            for c in 0..n {
                let dst_s = (b * 2 * n + c) * tt;
                let dst_e = (b * 2 * n + n + c) * tt;
                for s in 0..t {
                    for e in 0..t {
                        if let Some(i) = cell_band[s * t + e] {
                            let sv = self.value(starts[i]).data();
                            let ev = self.value(ends[i]).data();
                            out[dst_s + s * t + e] = sv[(b * n + c) * t + s];
                            out[dst_e + s * t + e] = ev[(b * n + c) * t + e];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![batch, 2 * n, t, t], out)?;
        let inputs: Vec<Var> = starts.iter().chain(ends).copied().collect();
        Ok(self.push(
            value,
            Op::BandAssemble {
                starts: starts.to_vec(),
                ends: ends.to_vec(),
                cell_band,
            },
            &inputs,
        ))
    }

    /// Per-channel normalization over `[B, C, ...]` with learnable scale and shift.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState,
        mode: NormMode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return Err(Error::shape(format!("batch_norm expects [B,C,...], got {xs:?}")));
        }
        let c = xs[1];
        if state.channels() != c || self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(format!(
                "batch_norm channel mismatch: input {xs:?}, state {}, gamma {:?}, beta {:?}",
                state.channels(),
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let inner: usize = xs[2..].iter().product();
        let f = norm::forward(
            self.value(x).data(),
            (xs[0], c, inner),
            self.value(gamma).data(),
            self.value(beta).data(),
            state,
            mode,
        );
        let value = Tensor::new(xs, f.out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat: f.x_hat,
                inv_std: f.inv_std,
                mode,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / v.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// `-Σ_i (pos_i · ln p_i + neg_i · ln(1 - p_i))` with `p` clamped away from 0 and 1.
    pub fn weighted_log_loss(&mut self, p: Var, pos: Vec<f64>, neg: Vec<f64>) -> Result<Var> {
        let n = self.value(p).numel();
        if pos.len() != n || neg.len() != n {
            return Err(Error::shape(format!(
                "loss weights of length {}/{} for {n} predictions",
                pos.len(),
                neg.len()
            )));
        }
        let mut acc = 0.0;
        for (i, &pv) in self.value(p).data().iter().enumerate() {
            if pos[i] == 0.0 && neg[i] == 0.0 {
                continue;
            }
            let q = pv.clamp(P_CLAMP, 1.0 - P_CLAMP);
            acc += pos[i] * q.ln() + neg[i] * (1.0 - q).ln();
        }
        Ok(self.push(Tensor::scalar(-acc), Op::WeightedLog { p, pos, neg }, &[p]))
    }

    /// `Σ_i w_i (p_i - target_i)²`.
    pub fn weighted_sq_error(&mut self, p: Var, target: Vec<f64>, weight: Vec<f64>) -> Result<Var> {
        let n = self.value(p).numel();
        if target.len() != n || weight.len() != n {
            return Err(Error::shape(format!(
                "regression target/weight length {}/{} for {n} predictions",
                target.len(),
                weight.len()
            )));
        }
        let mut acc = 0.0;
        for (i, &pv) in self.value(p).data().iter().enumerate() {
            if weight[i] != 0.0 {
                let d = pv - target[i];
                acc += weight[i] * d * d;
            }
        }
        Ok(self.push(Tensor::scalar(acc), Op::WeightedSq { p, target, weight }, &[p]))
    }

    /// Reverse traversal from a scalar `loss`, accumulating adjoints into every node that
    /// requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Sums `g` (of the broadcast output) down to the shape of operand `v`.
    fn reduce_to(&self, v: Var, g: Vec<f64>) -> Vec<f64> {
        let n = self.value(v).numel();
        if n == g.len() {
            return g;
        }
        let mut out = vec![0.0; n];
        for (i, gv) in g.iter().enumerate() {
            out[i % n] += gv;
        }
        out
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, dims } => {
                let (gx, gw, gb) =
                    kernels::conv1d_backward(self.value(*x).data(), self.value(*w).data(), g, dims, rg(*x));
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::Conv2d { x, w, b, dims } => {
                let (gx, gw, gb) =
                    kernels::conv2d_backward(self.value(*x).data(), self.value(*w).data(), g, dims, rg(*x));
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *b, gb);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &a)| if a > 0.0 { gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .iter()
                    .zip(value.data())
                    .map(|(&gv, &s)| gv * s * (1.0 - s))
                    .collect();
                self.accumulate(grads, *x, d);
            }
            Op::Square(x) => {
                let xv = self.value(*x).data();
                let d = g.iter().zip(xv).map(|(&gv, &a)| 2.0 * a * gv).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Scale(x, k) => {
                let d = g.iter().map(|&gv| gv * k).collect();
                self.accumulate(grads, *x, d);
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    let d = self.reduce_to(*a, g.to_vec());
                    self.accumulate(grads, *a, d);
                }
                if rg(*b) {
                    let d = self.reduce_to(*b, g.to_vec());
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    let d = self.reduce_to(*a, g.to_vec());
                    self.accumulate(grads, *a, d);
                }
                if rg(*b) {
                    let d = self.reduce_to(*b, g.iter().map(|v| -v).collect());
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (da.len(), db.len());
                if rg(*a) {
                    let full = g.iter().enumerate().map(|(i, gv)| gv * db[i % nb]).collect();
                    let d = self.reduce_to(*a, full);
                    self.accumulate(grads, *a, d);
                }
                if rg(*b) {
                    let full = g.iter().enumerate().map(|(i, gv)| gv * da[i % na]).collect();
                    let d = self.reduce_to(*b, full);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::RepeatToMap { x, axis } => {
                let xs = self.shape(*x);
                let (bc, t) = (xs[0] * xs[1], xs[2]);
                let mut d = vec![0.0; bc * t];
                for r in 0..bc {
                    let m = &g[r * t * t..(r + 1) * t * t];
                    let out = &mut d[r * t..(r + 1) * t];
                    for s in 0..t {
                        let row = &m[s * t..(s + 1) * t];
                        match axis {
                            MapAxis::Start => out[s] += row.iter().sum::<f64>(),
                            MapAxis::End => {
                                for (o, v) in out.iter_mut().zip(row) {
                                    *o += v;
                                }
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::ConcatChannels(parts) => {
                let s = value.shape();
                let (batch, total) = (s[0], s[1]);
                let inner: usize = s[2..].iter().product();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if rg(p) {
                        let mut d = Vec::with_capacity(batch * c * inner);
                        for b in 0..batch {
                            let start = (b * total + offset) * inner;
                            d.extend_from_slice(&g[start..start + c * inner]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    offset += c;
                }
            }
            Op::SelectChannel { x, index, channels } => {
                let s = self.shape(*x);
                let inner: usize = s[2..].iter().product();
                let mut d = vec![0.0; self.value(*x).numel()];
                for b in 0..s[0] {
                    d[(b * channels + index) * inner..][..inner]
                        .copy_from_slice(&g[b * inner..(b + 1) * inner]);
                }
                self.accumulate(grads, *x, d);
            }
            Op::BandAssemble {
                starts,
                ends,
                cell_band,
            } => {
                let s0 = self.shape(starts[0]);
                let (batch, n, t) = (s0[0], s0[1], s0[2]);
                let tt = t * t;
                let mut gs = vec![vec![0.0; batch * n * t]; starts.len()];
                let mut ge = vec![vec![0.0; batch * n * t]; ends.len()];
                for b in 0..batch {
                    for c in 0..n {
                        let src_s = (b * 2 * n + c) * tt;
                        let src_e = (b * 2 * n + n + c) * tt;
                        for s in 0..t {
                            for e in 0..t {
                                if let Some(i) = cell_band[s * t + e] {
                                    gs[i][(b * n + c) * t + s] += g[src_s + s * t + e];
                                    ge[i][(b * n + c) * t + e] += g[src_e + s * t + e];
                                }
                            }
                        }
                    }
                }
                for (v, d) in starts.iter().zip(gs).chain(ends.iter().zip(ge)) {
                    self.accumulate(grads, *v, d);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
                mode,
            } => {
                let s = self.shape(*x);
                let inner: usize = s[2..].iter().product();
                let (gx, gg, gb) = norm::backward(
                    g,
                    x_hat,
                    inv_std,
                    self.value(*gamma).data(),
                    (s[0], s[1], inner),
                    *mode,
                );
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::WeightedLog { p, pos, neg } => {
                let pv = self.value(*p).data();
                let d = pv
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| {
                        if q <= P_CLAMP || q >= 1.0 - P_CLAMP {
                            0.0
                        } else {
                            g[0] * (-pos[i] / q + neg[i] / (1.0 - q))
                        }
                    })
                    .collect();
                self.accumulate(grads, *p, d);
            }
            Op::WeightedSq { p, target, weight } => {
                let pv = self.value(*p).data();
                let d = pv
                    .iter()
                    .enumerate()
                    .map(|(i, &q)| g[0] * 2.0 * weight[i] * (q - target[i]))
                    .collect();
                self.accumulate(grads, *p, d);
            }
        }
    }
}
