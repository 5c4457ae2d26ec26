use std::collections::HashMap;
use std::sync::Arc;

use super::{axis_split, gemm_into, Grads, MatView, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Index value that makes [`Tape::gather`] emit a zero (used for padding).
pub const PAD_INDEX: usize = usize::MAX;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        x: Var,
        index: Arc<Vec<usize>>,
    },
    Reshape(Var),
    Transpose(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    RowNorms(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive operations in execution order; nodes only ever refer to
/// earlier nodes, so the node list is already topologically sorted.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Dimension {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops all recorded nodes and gradients.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.params.clear();
        self.grads.clear();
        self.consumed = false;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Registers a stored parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push_shared(Arc::clone(&p.value), Op::Leaf, p.trainable);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a)·op(b)` where `op` optionally transposes a stored matrix.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.rank() != 2 || bv.rank() != 2 {
            return Err(dim_err("matmul", av.shape(), bv.shape()));
        }
        let (ar, ac) = (av.shape()[0], av.shape()[1]);
        let (br, bc) = (bv.shape()[0], bv.shape()[1]);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(dim_err("matmul", av.shape(), bv.shape()));
        }
        let va = view(av.data(), ac, ta);
        let vb = view(bv.data(), bc, tb);
        let mut out = vec![T::zero(); m * n];
        gemm_into(m, k, n, va, vb, &mut out, n as isize, 1, false);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul { a, b, ta, tb }, rg))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Vec<T>> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.shape() != bv.shape() {
            return Err(dim_err(name, av.shape(), bv.shape()));
        }
        Ok(av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    /// Adds `bias` (extent = last axis of `x`) to every leading-batch slice.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let last = *xv.shape().last().expect("rank >= 1");
        if bv.numel() != last {
            return Err(dim_err("add_row", xv.shape(), bv.shape()));
        }
        let data: Vec<T> = xv
            .data()
            .chunks(last)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(&a, &b)| a + b))
            .collect();
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow { x, bias }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let s = T::of(factor);
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis)?;
        let src = xv.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * len + i) * inner + r;
                let mut max = T::neg_infinity();
                for i in 0..len {
                    max = max.max(src[at(i)]);
                }
                let mut total = T::zero();
                for i in 0..len {
                    let e = (src[at(i)] - max).exp();
                    out[at(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    out[at(i)] = out[at(i)] / total;
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x, axis }, rg))
    }

    /// Normalises along `axis`, then applies the affine `gamma`/`beta`
    /// (each with one entry per position along `axis`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let xv = self.value(x);
        let (outer, len, inner) = axis_split(xv.shape(), axis)?;
        let gv = self.value(gamma);
        let bv = self.value(beta);
        if gv.numel() != len || bv.numel() != len {
            return Err(dim_err("layer_norm", xv.shape(), gv.shape()));
        }
        let src = xv.data();
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        let mut rstd = Vec::with_capacity(outer * inner);
        let n = T::of(len as f64);
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * len + i) * inner + r;
                let mean = (0..len).map(|i| src[at(i)]).sum::<T>() / n;
                let var = (0..len).map(|i| (src[at(i)] - mean).powi(2)).sum::<T>() / n;
                let rs = T::one() / (var + T::of(EPS)).sqrt();
                rstd.push(rs);
                for i in 0..len {
                    let h = (src[at(i)] - mean) * rs;
                    xhat[at(i)] = h;
                    out[at(i)] = h * gv.data()[i] + bv.data()[i];
                }
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = axis_split(&base, axis)?;
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(dim_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (outer, full, inner) = axis_split(xv.shape(), axis)?;
        if len == 0 || start + len > full {
            return Err(Error::Range {
                what: "slice end",
                index: start + len,
                limit: full,
            });
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&xv.data()[from..from + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    /// `out[i] = x.flat[index[i]]`, or zero where `index[i] == PAD_INDEX`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.numel();
        let src = xv.data();
        let mut out = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i == PAD_INDEX {
                out.push(T::zero());
            } else if i < n {
                out.push(src[i]);
            } else {
                return Err(Error::Range {
                    what: "gather index",
                    index: i,
                    limit: n,
                });
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Gather { x, index }, rg))
    }

    /// Rows of `table` selected by `indices`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(dim_err("embedding_lookup", tv.shape(), &[indices.len()]));
        }
        let (rows, width) = (tv.shape()[0], tv.shape()[1]);
        if indices.is_empty() {
            return Err(Error::Contract("embedding_lookup needs at least one index".into()));
        }
        let mut index = Vec::with_capacity(indices.len() * width);
        for &r in indices {
            if r >= rows {
                return Err(Error::Range {
                    what: "embedding index",
                    index: r,
                    limit: rows,
                });
            }
            index.extend(r * width..(r + 1) * width);
        }
        self.gather(table, Arc::new(index), &[indices.len(), width])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(dim_err("transpose", xv.shape(), &[]));
        }
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let src = xv.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = lv.dims2()?;
        if targets.len() != rows {
            return Err(dim_err("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let mut probs = vec![T::zero(); rows * classes];
        let mut total = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::Range {
                    what: "target index",
                    index: t,
                    limit: classes,
                });
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + z.ln();
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - lse).exp();
            }
            total += lse - row[t];
        }
        let value = total / T::of(rows as f64);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Euclidean norm of each row of a matrix, shape `[rows]`.
    pub fn row_norms(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, _) = xv.dims2()?;
        let norms: Vec<T> = (0..rows)
            .map(|r| xv.row(r).iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        if let Some(r) = norms.iter().position(|n| *n == T::zero()) {
            return Err(Error::Numeric(format!("row {r} has zero norm")));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![rows], norms)?, Op::RowNorms(x), rg))
    }

    /// Scales every row of a matrix to unit norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2()?;
        let mut norms = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = xv.row(r);
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if n == T::zero() || !n.is_finite() {
                return Err(Error::Numeric(format!(
                    "row {r} has degenerate norm; cosine is undefined"
                )));
            }
            norms.push(n);
            out.extend(row.iter().map(|&v| v / n));
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::NormalizeRows { x, norms }, rg))
    }

    /// Reverse pass from a scalar `loss`. A tape supports one backward pass
    /// until [`Tape::reset`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward already ran on this tape; reset it first".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradients of every registered trainable parameter to `grads`.
    pub fn accumulate_param_grads(&self, grads: &mut Grads<T>) {
        let mut entries: Vec<_> = self.params.iter().collect();
        entries.sort();
        for (&id, &v) in entries {
            if let Some(g) = self.grad(v) {
                grads.add(id, g);
            }
        }
    }

    fn acc(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // The op is temporarily moved out so that input gradients can be
        // borrowed mutably while reading cached forward state.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let out = Arc::clone(&self.nodes[i].value);
        match &op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let av = Arc::clone(&self.nodes[a.0].value);
                let bv = Arc::clone(&self.nodes[b.0].value);
                let ac = av.shape()[1];
                let bc = bv.shape()[1];
                let (m, k) = if *ta { (ac, av.shape()[0]) } else { (av.shape()[0], ac) };
                let n = out.shape()[1];
                let dc = MatView::row_major(g, n);
                let opb = view(bv.data(), bc, *tb);
                let opa = view(av.data(), ac, *ta);
                if let Some(da) = self.acc(*a) {
                    // d op(A) = dC · op(B)ᵀ, written through op(A)'s layout.
                    let (rs, cs) = if *ta { (1, ac as isize) } else { (ac as isize, 1) };
                    gemm_into(m, n, k, dc, opb.t(), da, rs, cs, true);
                }
                if let Some(db) = self.acc(*b) {
                    let (rs, cs) = if *tb { (1, bc as isize) } else { (bc as isize, 1) };
                    gemm_into(k, m, n, opa.t(), dc, db, rs, cs, true);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(v) {
                        add_into(d, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(d) = self.acc(*a) {
                    add_into(d, g);
                }
                if let Some(d) = self.acc(*b) {
                    for (x, &y) in d.iter_mut().zip(g) {
                        *x -= y;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = Arc::clone(&self.nodes[a.0].value);
                let bv = Arc::clone(&self.nodes[b.0].value);
                if let Some(d) = self.acc(*a) {
                    for ((x, &gi), &bi) in d.iter_mut().zip(g).zip(bv.data()) {
                        *x += gi * bi;
                    }
                }
                if let Some(d) = self.acc(*b) {
                    for ((x, &gi), &ai) in d.iter_mut().zip(g).zip(av.data()) {
                        *x += gi * ai;
                    }
                }
            }
            Op::AddRow { x, bias } => {
                if let Some(d) = self.acc(*x) {
                    add_into(d, g);
                }
                if let Some(d) = self.acc(*bias) {
                    let w = d.len();
                    for row in g.chunks(w) {
                        add_into(d, row);
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                if let Some(d) = self.acc(*a) {
                    for (x, &gi) in d.iter_mut().zip(g) {
                        *x += gi * s;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(d) = self.acc(*a) {
                    add_into(d, g);
                }
            }
            Op::Relu(a) => {
                let av = Arc::clone(&self.nodes[a.0].value);
                if let Some(d) = self.acc(*a) {
                    for ((x, &gi), &ai) in d.iter_mut().zip(g).zip(av.data()) {
                        if ai > T::zero() {
                            *x += gi;
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis).expect("valid axis");
                let y = out.data();
                if let Some(d) = self.acc(*x) {
                    for o in 0..outer {
                        for r in 0..inner {
                            let at = |i: usize| (o * len + i) * inner + r;
                            let dot: T = (0..len).map(|i| g[at(i)] * y[at(i)]).sum();
                            for i in 0..len {
                                d[at(i)] += y[at(i)] * (g[at(i)] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                rstd,
            } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis).expect("valid axis");
                let gv = Arc::clone(&self.nodes[gamma.0].value);
                let n = T::of(len as f64);
                if let Some(d) = self.acc(*x) {
                    for o in 0..outer {
                        for r in 0..inner {
                            let at = |i: usize| (o * len + i) * inner + r;
                            let rs = rstd[o * inner + r];
                            let mut m1 = T::zero();
                            let mut m2 = T::zero();
                            for i in 0..len {
                                let dh = g[at(i)] * gv.data()[i];
                                m1 += dh;
                                m2 += dh * xhat[at(i)];
                            }
                            m1 = m1 / n;
                            m2 = m2 / n;
                            for i in 0..len {
                                let dh = g[at(i)] * gv.data()[i];
                                d[at(i)] += rs * (dh - m1 - xhat[at(i)] * m2);
                            }
                        }
                    }
                }
                if let Some(d) = self.acc(*gamma) {
                    for o in 0..outer {
                        for i in 0..len {
                            for r in 0..inner {
                                let at = (o * len + i) * inner + r;
                                d[i] += g[at] * xhat[at];
                            }
                        }
                    }
                }
                if let Some(d) = self.acc(*beta) {
                    for o in 0..outer {
                        for i in 0..len {
                            for r in 0..inner {
                                d[i] += g[(o * len + i) * inner + r];
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis).expect("valid axis");
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.shape()[*axis];
                    if let Some(d) = self.acc(*p) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            add_into(
                                &mut d[o * len * inner..(o + 1) * len * inner],
                                &g[src..src + len * inner],
                            );
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let full = self.nodes[x.0].value.shape()[*axis];
                let (outer, len, inner) = axis_split(out.shape(), *axis).expect("valid axis");
                let start = *start;
                if let Some(d) = self.acc(*x) {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        add_into(
                            &mut d[dst..dst + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
            }
            Op::Gather { x, index } => {
                if let Some(d) = self.acc(*x) {
                    for (&i, &gi) in index.iter().zip(g) {
                        if i != PAD_INDEX {
                            d[i] += gi;
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(d) = self.acc(*x) {
                    add_into(d, g);
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[1], out.shape()[0]);
                if let Some(d) = self.acc(*x) {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(d) = self.acc(*x) {
                    for v in d.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if let Some(d) = self.acc(*x) {
                    let s = g[0] / T::of(d.len() as f64);
                    for v in d.iter_mut() {
                        *v += s;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let rows = targets.len();
                let classes = probs.len() / rows;
                let s = g[0] / T::of(rows as f64);
                if let Some(d) = self.acc(*logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == t { T::one() } else { T::zero() };
                            d[r * classes + c] += s * (probs[r * classes + c] - onehot);
                        }
                    }
                }
            }
            Op::RowNorms(x) => {
                let xv = Arc::clone(&self.nodes[x.0].value);
                let cols = xv.shape()[1];
                let norms = out.data();
                if let Some(d) = self.acc(*x) {
                    for (r, (&gr, &nr)) in g.iter().zip(norms).enumerate() {
                        for c in 0..cols {
                            d[r * cols + c] += gr * xv.data()[r * cols + c] / nr;
                        }
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                let cols = out.shape()[1];
                let y = out.data();
                if let Some(d) = self.acc(*x) {
                    for (r, &nr) in norms.iter().enumerate() {
                        let row = r * cols..(r + 1) * cols;
                        let dot: T = g[row.clone()].iter().zip(&y[row.clone()]).map(|(&a, &b)| a * b).sum();
                        for c in row {
                            d[c] += (g[c] - y[c] * dot) / nr;
                        }
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn view<T>(data: &[T], stored_cols: usize, transposed: bool) -> MatView<'_, T> {
    if transposed {
        MatView::transposed(data, stored_cols)
    } else {
        MatView::row_major(data, stored_cols)
    }
}

impl<T> MatView<'_, T> {
    fn t(self) -> Self {
        MatView {
            data: self.data,
            rs: self.cs,
            cs: self.rs,
        }
    }
}
