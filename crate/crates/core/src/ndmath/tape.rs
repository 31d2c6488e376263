//! Taped execution of tensor primitives with reverse-mode differentiation.
#![allow(clippy::needless_range_loop)] // backward rules index several buffers in parallel
//!
//! Every primitive records a node on the tape; `backward` replays the tape
//! in reverse execution order exactly once and accumulates gradients into a
//! [`ParameterStore`]. Tensors are immutable
//! once created.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ndmath::store::ParameterStore;
use crate::ndmath::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How one operand of a binary elementwise op maps onto the output index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    /// Same shape as the output.
    Full,
    /// One-element operand broadcast everywhere.
    Scalar,
    /// Vector `[c]` broadcast across the rows of an `[r, c]` output.
    Row,
}

impl Broadcast {
    fn src_index(self, out_index: usize, cols: usize) -> usize {
        match self {
            Broadcast::Full => out_index,
            Broadcast::Scalar => 0,
            Broadcast::Row => out_index % cols,
        }
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize, ba: Broadcast, bb: Broadcast },
    Mul { a: usize, b: usize, ba: Broadcast, bb: Broadcast },
    Scale { a: usize, factor: S },
    Concat { axis: usize, parts: Vec<usize>, offsets: Vec<usize> },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Exp { a: usize },
    Softplus { a: usize },
    MaskedSoftmax { a: usize, mask: Option<Vec<bool>> },
    MaskedNormalize { a: usize, mask: Option<Vec<bool>> },
    Sum { a: usize },
    GatherRows { a: usize, rows: Vec<usize> },
    RepeatRows { a: usize },
    Reshape { a: usize },
    CrossEntropy { probs: usize, gold: usize },
}

struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    param: Option<String>,
}

/// Ordered record of executed primitives.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    param_cache: HashMap<String, usize>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), param_cache: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> Var {
        self.nodes.push(Node { op, value, param: None });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.push(Op::Leaf, t)
    }

    pub fn scalar(&mut self, v: S) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// A leaf tied to a named parameter of `store`. Repeated calls with the
    /// same name return the same node, so gradient contributions from every
    /// use site accumulate into one slot.
    pub fn param(&mut self, store: &ParameterStore<S>, name: &str) -> Result<Var> {
        if let Some(&idx) = self.param_cache.get(name) {
            return Ok(Var(idx));
        }
        let value = store.value(name)?.clone();
        self.nodes.push(Node { op: Op::Leaf, value, param: Some(name.to_string()) });
        let idx = self.nodes.len() - 1;
        self.param_cache.insert(name.to_string(), idx);
        Ok(Var(idx))
    }

    // ---- shape helpers -------------------------------------------------

    fn mismatch(op: &'static str, shapes: &[&[usize]], detail: impl Into<String>) -> Error {
        Error::ShapeMismatch {
            op,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            detail: detail.into(),
        }
    }

    /// Broadcast plan for a binary elementwise op. Returns the output shape
    /// and the index mapping of each operand.
    fn broadcast_plan(
        op: &'static str,
        sa: &[usize],
        sb: &[usize],
        na: usize,
        nb: usize,
    ) -> Result<(Vec<usize>, Broadcast, Broadcast)> {
        if sa == sb {
            return Ok((sa.to_vec(), Broadcast::Full, Broadcast::Full));
        }
        if na == 1 {
            return Ok((sb.to_vec(), Broadcast::Scalar, Broadcast::Full));
        }
        if nb == 1 {
            return Ok((sa.to_vec(), Broadcast::Full, Broadcast::Scalar));
        }
        if sa.len() == 1 && sb.len() == 2 && sa[0] == sb[1] {
            return Ok((sb.to_vec(), Broadcast::Row, Broadcast::Full));
        }
        if sb.len() == 1 && sa.len() == 2 && sb[0] == sa[1] {
            return Ok((sa.to_vec(), Broadcast::Full, Broadcast::Row));
        }
        Err(Self::mismatch(op, &[sa, sb], "shapes neither equal nor broadcastable"))
    }

    fn elementwise(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        make: impl FnOnce(usize, usize, Broadcast, Broadcast) -> Op<S>,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, ba, bb) =
            Self::broadcast_plan(op_name, ta.shape(), tb.shape(), ta.numel(), tb.numel())?;
        let numel: usize = shape.iter().product();
        let cols = if shape.len() == 2 { shape[1] } else { numel };
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let x = ta.data()[ba.src_index(i, cols)];
            let y = tb.data()[bb.src_index(i, cols)];
            data.push(f(x, y));
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(make(a.0, b.0, ba, bb), value))
    }

    // ---- primitives ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, |a, b, ba, bb| Op::Add { a, b, ba, bb })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, |a, b, ba, bb| Op::Mul { a, b, ba, bb })
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<S> = ta.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Scale { a: a.0, factor }, value))
    }

    /// Matrix product. Accepts `[m,k]x[k,n] -> [m,n]`, a 1-d left operand as
    /// a row vector, and a 1-d right operand as a column vector.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.is_empty() || sb.is_empty() || sa.len() > 2 || sb.len() > 2 {
            return Err(Self::mismatch("matmul", &[sa, sb], "operands must be 1-d or 2-d"));
        }
        let (m, k) = if sa.len() == 2 { (sa[0], sa[1]) } else { (1, sa[0]) };
        let (k2, n) = if sb.len() == 2 { (sb[0], sb[1]) } else { (sb[0], 1) };
        if k != k2 {
            return Err(Self::mismatch("matmul", &[sa, sb], "inner extents differ"));
        }
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for l in 0..k {
                let x = ta.data()[i * k + l];
                let row = &tb.data()[l * n..(l + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    dst[j] = dst[j] + x * row[j];
                }
            }
        }
        let shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (1, 2) => vec![n],
            (2, 1) => vec![m],
            _ => vec![],
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::MatMul { a: a.0, b: b.0 }, value))
    }

    /// Concatenate along `axis` (0 or 1). 1-d and scalar inputs concatenate
    /// along axis 0 into a vector.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Self::mismatch("concat", &[], "no inputs"));
        }
        let shapes: Vec<&[usize]> = parts.iter().map(|v| self.nodes[v.0].value.shape()).collect();
        let all_vec = shapes.iter().all(|s| s.len() <= 1);
        let value = if all_vec && axis == 0 {
            let mut data = Vec::new();
            for v in parts {
                data.extend_from_slice(self.nodes[v.0].value.data());
            }
            Tensor::vector(data)
        } else if shapes.iter().all(|s| s.len() == 2) && axis == 0 {
            let c = shapes[0][1];
            if shapes.iter().any(|s| s[1] != c) {
                return Err(Self::mismatch("concat", &shapes, "column counts differ"));
            }
            let r: usize = shapes.iter().map(|s| s[0]).sum();
            let mut data = Vec::with_capacity(r * c);
            for v in parts {
                data.extend_from_slice(self.nodes[v.0].value.data());
            }
            Tensor::new(vec![r, c], data)?
        } else if shapes.iter().all(|s| s.len() == 2) && axis == 1 {
            let r = shapes[0][0];
            if shapes.iter().any(|s| s[0] != r) {
                return Err(Self::mismatch("concat", &shapes, "row counts differ"));
            }
            let c: usize = shapes.iter().map(|s| s[1]).sum();
            let mut data = Vec::with_capacity(r * c);
            for row in 0..r {
                for v in parts {
                    data.extend_from_slice(self.nodes[v.0].value.row(row));
                }
            }
            Tensor::new(vec![r, c], data)?
        } else {
            return Err(Self::mismatch("concat", &shapes, format!("unsupported axis {axis}")));
        };
        let offsets = parts.iter().map(|v| self.nodes[v.0].value.numel()).collect();
        let idxs = parts.iter().map(|v| v.0).collect();
        Ok(self.push(Op::Concat { axis, parts: idxs, offsets }, value))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(S) -> S,
        make: impl FnOnce(usize) -> Op<S>,
    ) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<S> = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(make(a.0), value))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.tanh(), |a| Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.sigmoid(), |a| Op::Sigmoid { a })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.exp(), |a| Op::Exp { a })
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.softplus(), |a| Op::Softplus { a })
    }

    fn check_mask(
        op: &'static str,
        numel: usize,
        shape: &[usize],
        mask: Option<&[bool]>,
    ) -> Result<()> {
        if let Some(m) = mask {
            if m.len() != numel {
                return Err(Self::mismatch(op, &[shape], "mask length differs from logits"));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::AllMasked { op });
            }
        }
        Ok(())
    }

    /// Softmax over the whole tensor as one normalization group. Masked
    /// positions contribute nothing pre-normalization (additive -inf
    /// semantics) and are exactly zero post-normalization.
    pub fn masked_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        Self::check_mask("masked_softmax", ta.numel(), ta.shape(), mask)?;
        let live = |i: usize| mask.is_none_or(|m| m[i]);
        let mut max = S::neg_infinity();
        for (i, &x) in ta.data().iter().enumerate() {
            if live(i) && x > max {
                max = x;
            }
        }
        let mut data = vec![S::zero(); ta.numel()];
        let mut total = S::zero();
        for (i, &x) in ta.data().iter().enumerate() {
            if live(i) {
                let e = (x - max).exp();
                data[i] = e;
                total = total + e;
            }
        }
        for (i, v) in data.iter_mut().enumerate() {
            if live(i) {
                *v = *v / total;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::MaskedSoftmax { a: a.0, mask: mask.map(|m| m.to_vec()) }, value))
    }

    /// Normalize nonnegative weights to sum to one over the unmasked
    /// positions; masked positions are exactly zero.
    pub fn masked_normalize(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        Self::check_mask("masked_normalize", ta.numel(), ta.shape(), mask)?;
        let live = |i: usize| mask.is_none_or(|m| m[i]);
        let mut total = S::zero();
        for (i, &x) in ta.data().iter().enumerate() {
            if live(i) {
                total = total + x;
            }
        }
        if total == S::zero() {
            return Err(Error::AllMasked { op: "masked_normalize" });
        }
        let mut data = vec![S::zero(); ta.numel()];
        for (i, &x) in ta.data().iter().enumerate() {
            if live(i) {
                data[i] = x / total;
            }
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::MaskedNormalize { a: a.0, mask: mask.map(|m| m.to_vec()) }, value))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        let mut total = S::zero();
        for &x in ta.data() {
            total = total + x;
        }
        Ok(self.push(Op::Sum { a: a.0 }, Tensor::scalar(total)))
    }

    /// Select rows of a matrix by index, producing `[rows.len(), cols]`.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 2 {
            return Err(Self::mismatch("gather_rows", &[ta.shape()], "source must be a matrix"));
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Self::mismatch(
                "gather_rows",
                &[ta.shape()],
                format!("row index {bad} out of range {r}"),
            ));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(ta.row(i));
        }
        let value = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(Op::GatherRows { a: a.0, rows: rows.to_vec() }, value))
    }

    /// Tile a vector `[c]` into `count` identical rows `[count, c]`.
    pub fn repeat_rows(&mut self, a: Var, count: usize) -> Result<Var> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 1 {
            return Err(Self::mismatch("repeat_rows", &[ta.shape()], "input must be a vector"));
        }
        if count == 0 {
            return Err(Self::mismatch("repeat_rows", &[ta.shape()], "count must be positive"));
        }
        let c = ta.numel();
        let mut data = Vec::with_capacity(count * c);
        for _ in 0..count {
            data.extend_from_slice(ta.data());
        }
        let value = Tensor::new(vec![count, c], data)?;
        Ok(self.push(Op::RepeatRows { a: a.0 }, value))
    }

    /// Reinterpret the data under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[a.0].value.reshaped(shape)?;
        Ok(self.push(Op::Reshape { a: a.0 }, value))
    }

    /// Cross-entropy from probabilities: `-ln p[gold]`.
    pub fn cross_entropy(&mut self, probs: Var, gold: usize) -> Result<Var> {
        let tp = &self.nodes[probs.0].value;
        if gold >= tp.numel() {
            return Err(Error::GoldOutOfRange { gold, len: tp.numel() });
        }
        let loss = -(tp.data()[gold].ln());
        Ok(self.push(Op::CrossEntropy { probs: probs.0, gold }, Tensor::scalar(loss)))
    }

    // ---- backward ------------------------------------------------------

    /// Accumulate `d loss / d p` into the gradient slot of every parameter
    /// leaf reachable from `loss`. The tape is replayed once, in reverse
    /// execution order. Parameters not reachable from `loss` are untouched
    /// (their slots stay at whatever the store holds, zero after
    /// `zero_grads`).
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<S>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::LossNotScalar { shape: loss_value.shape().to_vec() });
        }

        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(S::one()));

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    if let Some(name) = &node.param {
                        store.add_to_grad(name, &g)?;
                    }
                }
                Op::MatMul { a, b } => {
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let (m, k) = if ta.shape().len() == 2 {
                        (ta.shape()[0], ta.shape()[1])
                    } else {
                        (1, ta.shape()[0])
                    };
                    let n = if tb.shape().len() == 2 { tb.shape()[1] } else { 1 };
                    {
                        let ga = slot(&mut grads, &self.nodes, *a);
                        // dA = dC . B^T
                        for i in 0..m {
                            for l in 0..k {
                                let mut acc = S::zero();
                                for j in 0..n {
                                    acc = acc + g.data()[i * n + j] * tb.data()[l * n + j];
                                }
                                let d = &mut ga.data_mut()[i * k + l];
                                *d = *d + acc;
                            }
                        }
                    }
                    {
                        let gb = slot(&mut grads, &self.nodes, *b);
                        // dB = A^T . dC
                        for l in 0..k {
                            for j in 0..n {
                                let mut acc = S::zero();
                                for i in 0..m {
                                    acc = acc + ta.data()[i * k + l] * g.data()[i * n + j];
                                }
                                let d = &mut gb.data_mut()[l * n + j];
                                *d = *d + acc;
                            }
                        }
                    }
                }
                Op::Add { a, b, ba, bb } => {
                    let cols = cols_of(node.value.shape());
                    for (src, bc) in [(*a, *ba), (*b, *bb)] {
                        let gs = slot(&mut grads, &self.nodes, src);
                        for i in 0..g.numel() {
                            let d = &mut gs.data_mut()[bc.src_index(i, cols)];
                            *d = *d + g.data()[i];
                        }
                    }
                }
                Op::Mul { a, b, ba, bb } => {
                    let cols = cols_of(node.value.shape());
                    let (ta, tb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    {
                        let ga = slot(&mut grads, &self.nodes, *a);
                        for i in 0..g.numel() {
                            let y = tb.data()[bb.src_index(i, cols)];
                            let d = &mut ga.data_mut()[ba.src_index(i, cols)];
                            *d = *d + g.data()[i] * y;
                        }
                    }
                    {
                        let gb = slot(&mut grads, &self.nodes, *b);
                        for i in 0..g.numel() {
                            let x = ta.data()[ba.src_index(i, cols)];
                            let d = &mut gb.data_mut()[bb.src_index(i, cols)];
                            *d = *d + g.data()[i] * x;
                        }
                    }
                }
                Op::Scale { a, factor } => {
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        let d = &mut ga.data_mut()[i];
                        *d = *d + g.data()[i] * *factor;
                    }
                }
                Op::Concat { axis, parts, offsets } => {
                    if *axis == 1 {
                        let rows = node.value.shape()[0];
                        let total_c = node.value.shape()[1];
                        let mut col0 = 0usize;
                        for (pi, &src) in parts.iter().enumerate() {
                            let c = offsets[pi] / rows;
                            let gs = slot(&mut grads, &self.nodes, src);
                            for r in 0..rows {
                                for j in 0..c {
                                    let d = &mut gs.data_mut()[r * c + j];
                                    *d = *d + g.data()[r * total_c + col0 + j];
                                }
                            }
                            col0 += c;
                        }
                    } else {
                        let mut at = 0usize;
                        for (pi, &src) in parts.iter().enumerate() {
                            let len = offsets[pi];
                            let gs = slot(&mut grads, &self.nodes, src);
                            for i in 0..len {
                                let d = &mut gs.data_mut()[i];
                                *d = *d + g.data()[at + i];
                            }
                            at += len;
                        }
                    }
                }
                Op::Tanh { a } => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        let d = &mut ga.data_mut()[i];
                        *d = *d + g.data()[i] * (S::one() - y[i] * y[i]);
                    }
                }
                Op::Sigmoid { a } => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        let d = &mut ga.data_mut()[i];
                        *d = *d + g.data()[i] * y[i] * (S::one() - y[i]);
                    }
                }
                Op::Exp { a } => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        let d = &mut ga.data_mut()[i];
                        *d = *d + g.data()[i] * y[i];
                    }
                }
                Op::Softplus { a } => {
                    let x = self.nodes[*a].value.data().to_vec();
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        let d = &mut ga.data_mut()[i];
                        *d = *d + g.data()[i] * x[i].sigmoid();
                    }
                }
                Op::MaskedSoftmax { a, mask } => {
                    let y = node.value.data();
                    let live = |i: usize| mask.as_ref().is_none_or(|m| m[i]);
                    let mut dot = S::zero();
                    for i in 0..g.numel() {
                        dot = dot + g.data()[i] * y[i];
                    }
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        if live(i) {
                            let d = &mut ga.data_mut()[i];
                            *d = *d + y[i] * (g.data()[i] - dot);
                        }
                    }
                }
                Op::MaskedNormalize { a, mask } => {
                    let y = node.value.data();
                    let live = |i: usize| mask.as_ref().is_none_or(|m| m[i]);
                    let mut total = S::zero();
                    for (i, &x) in self.nodes[*a].value.data().iter().enumerate() {
                        if live(i) {
                            total = total + x;
                        }
                    }
                    let mut dot = S::zero();
                    for i in 0..g.numel() {
                        dot = dot + g.data()[i] * y[i];
                    }
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        if live(i) {
                            let d = &mut ga.data_mut()[i];
                            *d = *d + (g.data()[i] - dot) / total;
                        }
                    }
                }
                Op::Sum { a } => {
                    let gv = g.data()[0];
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for d in ga.data_mut() {
                        *d = *d + gv;
                    }
                }
                Op::GatherRows { a, rows } => {
                    let c = node.value.shape()[1];
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for (r, &src_row) in rows.iter().enumerate() {
                        for j in 0..c {
                            let d = &mut ga.data_mut()[src_row * c + j];
                            *d = *d + g.data()[r * c + j];
                        }
                    }
                }
                Op::RepeatRows { a } => {
                    let (rows, c) = (node.value.shape()[0], node.value.shape()[1]);
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for r in 0..rows {
                        for j in 0..c {
                            let d = &mut ga.data_mut()[j];
                            *d = *d + g.data()[r * c + j];
                        }
                    }
                }
                Op::Reshape { a } => {
                    let ga = slot(&mut grads, &self.nodes, *a);
                    for i in 0..g.numel() {
                        let d = &mut ga.data_mut()[i];
                        *d = *d + g.data()[i];
                    }
                }
                Op::CrossEntropy { probs, gold } => {
                    let p = self.nodes[*probs].value.data()[*gold];
                    let gp = slot(&mut grads, &self.nodes, *probs);
                    let d = &mut gp.data_mut()[*gold];
                    *d = *d - g.data()[0] / p;
                }
            }
        }
        Ok(())
    }
}

fn cols_of(shape: &[usize]) -> usize {
    if shape.len() == 2 {
        shape[1]
    } else {
        shape.iter().product::<usize>().max(1)
    }
}

fn slot<'a, S: Scalar>(
    grads: &'a mut [Option<Tensor<S>>],
    nodes: &[Node<S>],
    idx: usize,
) -> &'a mut Tensor<S> {
    if grads[idx].is_none() {
        grads[idx] = Some(Tensor::zeros(nodes[idx].value.shape().to_vec()));
    }
    grads[idx].as_mut().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::store::ParameterStore;

    fn t(v: Vec<f64>) -> Tensor<f64> {
        Tensor::vector(v)
    }

    #[test]
    fn masked_softmax_symmetric_logits() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(vec![0.0, 0.0, 0.0]));
        let y = tape.masked_softmax(x, None).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_softmax_ln2_logit() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(vec![2.0f64.ln(), 0.0]));
        let y = tape.masked_softmax(x, None).unwrap();
        let p = tape.value(y).data();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_masked_positions_exactly_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(vec![5.0, 1.0, -2.0, 3.0]));
        let y = tape.masked_softmax(x, Some(&[true, false, true, false])).unwrap();
        let p = tape.value(y).data();
        assert_eq!(p[1], 0.0);
        assert_eq!(p[3], 0.0);
        assert!((p[0] + p[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_all_masked_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(vec![1.0, 2.0]));
        let err = tape.masked_softmax(x, Some(&[false, false])).unwrap_err();
        assert!(matches!(err, Error::AllMasked { .. }));
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::<f64>::new();
        let perfect = tape.constant(t(vec![1.0, 0.0]));
        let l = tape.cross_entropy(perfect, 0).unwrap();
        assert_eq!(tape.value(l).scalar_value().unwrap(), 0.0);

        let half = tape.constant(t(vec![0.5, 0.5]));
        let l = tape.cross_entropy(half, 1).unwrap();
        assert!((tape.value(l).scalar_value().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_gold_out_of_range() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(vec![0.5, 0.5]));
        assert!(matches!(
            tape.cross_entropy(p, 2).unwrap_err(),
            Error::GoldOutOfRange { gold: 2, len: 2 }
        ));
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut store = ParameterStore::<f64>::new(0);
        store.define("w", t(vec![1.0, -2.0, 0.5])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let loss = tape.sum(w).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_tanh_at_zero_is_ones() {
        let mut store = ParameterStore::<f64>::new(0);
        store.define("w", t(vec![0.0, 0.0, 0.0])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let y = tape.tanh(w).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut store = ParameterStore::<f64>::new(0);
        store.define("w", t(vec![1.0, 2.0])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let y = tape.tanh(w).unwrap();
        assert!(matches!(
            tape.backward(y, &mut store).unwrap_err(),
            Error::LossNotScalar { .. }
        ));
    }

    #[test]
    fn backward_on_empty_tape_errors() {
        let mut store = ParameterStore::<f64>::new(0);
        let tape = Tape::<f64>::new();
        assert!(matches!(tape.backward(Var(0), &mut store).unwrap_err(), Error::EmptyTape));
    }

    #[test]
    fn unreachable_parameter_keeps_zero_gradient() {
        let mut store = ParameterStore::<f64>::new(0);
        store.define("used", t(vec![2.0])).unwrap();
        store.define("unused", t(vec![3.0])).unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, "used").unwrap();
        let _also_unused = tape.param(&store, "unused").unwrap();
        let loss = tape.sum(w).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("unused").unwrap().data(), &[0.0]);
    }

    #[test]
    fn shared_parameter_use_sites_accumulate() {
        // loss = w*w written through two uses of the same leaf.
        let mut store = ParameterStore::<f64>::new(0);
        store.define("w", t(vec![3.0])).unwrap();
        let mut tape = Tape::new();
        let w1 = tape.param(&store, "w").unwrap();
        let w2 = tape.param(&store, "w").unwrap();
        assert_eq!(w1, w2);
        let sq = tape.mul(w1, w2).unwrap();
        let loss = tape.sum(sq).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.constant(Tensor::new(vec![3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2]);
        assert_eq!(tape.value(c).data(), &[4.0, 5.0, 10.0, 11.0]);

        let v = tape.constant(t(vec![1.0, 1.0, 1.0]));
        let vc = tape.matmul(v, b).unwrap();
        assert_eq!(tape.value(vc).shape(), &[2]);

        let u = tape.constant(t(vec![1.0, 2.0]));
        let dot = tape.matmul(u, u).unwrap();
        assert!(tape.value(dot).is_scalar());
        assert_eq!(tape.value(dot).scalar_value().unwrap(), 5.0);
        let col = tape.constant(t(vec![1.0, 0.0, 1.0]));
        let cu = tape.matmul(a, col).unwrap();
        assert_eq!(tape.value(cu).shape(), &[2]);
        assert_eq!(tape.value(cu).data(), &[4.0, 10.0]);
    }

    #[test]
    fn matmul_inner_mismatch_errors() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap());
        let err = tape.matmul(a, b).unwrap_err();
        match err {
            Error::ShapeMismatch { op, shapes, .. } => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 2]]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn add_row_broadcast() {
        let mut tape = Tape::<f64>::new();
        let m = tape.constant(Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.constant(t(vec![10.0, 20.0, 30.0]));
        let y = tape.add(m, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11., 22., 33., 14., 25., 36.]);
    }

    #[test]
    fn determinism_same_inputs_bitwise_identical() {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(t(vec![0.3, -1.7, 2.9]));
            let y = tape.tanh(x).unwrap();
            let z = tape.masked_softmax(y, None).unwrap();
            let s = tape.exp(z).unwrap();
            tape.value(s).data().to_vec()
        };
        let a: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = run().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn finite_outputs_on_finite_inputs() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(vec![700.0, -700.0, 0.0]));
        let y = tape.masked_softmax(x, None).unwrap();
        assert!(!tape.value(y).has_non_finite());
        let z = tape.softplus(x).unwrap();
        assert!(!tape.value(z).has_non_finite());
    }
}
