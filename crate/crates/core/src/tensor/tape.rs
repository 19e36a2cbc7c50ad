use super::{ParamId, ParamSet, Tensor, EPS_NORM};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    RowGather(Var, Vec<usize>),
    RowScatterAdd(Var, Vec<usize>),
    Relu(Var),
    MeanRows(Var),
    SumRows(Var),
    L2NormRows(Var),
    DotRows(Var, Var),
    CosineRows {
        a: Var,
        b: Var,
        na: Vec<f64>,
        nb: Vec<f64>,
    },
    Softmax(Var),
    Log(Var),
    Exp(Var),
    ConcatRows(Var, Var),
    ScaleRows(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        mask: Vec<bool>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Linear record of executed operations. Values live on the tape; gradients
/// flow back into a [`ParamSet`] on [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    strict: bool,
    degenerate_norms: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// In strict mode any non-finite value entering or produced on the tape is an error.
    pub fn with_strict(strict: bool) -> Self {
        Self {
            strict,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of cosine evaluations that hit the norm floor so far.
    pub fn degenerate_norms(&self) -> usize {
        self.degenerate_norms
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, needs_grad: bool) -> Result<Var> {
        if self.strict && !value.is_finite() {
            return Err(Error::NonFinite { op, context: None });
        }
        self.nodes.push(Node {
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let t = Tensor::raw(t.shape, t.data);
        self.push("constant", t, Op::Constant, false)
    }

    /// Records a copy of parameter `id`; gradients reaching it are added to its grad buffer.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Result<Var> {
        let p = params.get(id);
        let t = Tensor::raw(p.shape.clone(), p.data.clone());
        let needs = p.requires_grad();
        self.push("param", t, Op::Param(id), needs)
            .map_err(|e| match e {
                Error::NonFinite { op, .. } => Error::NonFinite {
                    op,
                    context: Some(format!("parameter '{}'", params.name(id))),
                },
                e => e,
            })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        kind: Op,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.val(a), self.val(b));
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::raw(ta.shape.clone(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(op, out, kind, ng)
    }

    fn map(&mut self, op: &'static str, a: Var, f: impl Fn(f64) -> f64, kind: Op) -> Result<Var> {
        let ta = self.val(a);
        let out = Tensor::raw(ta.shape.clone(), ta.data.iter().map(|&x| f(x)).collect());
        let ng = self.ng(a);
        self.push(op, out, kind, ng)
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map("scale", a, |x| x * k, Op::Scale(a, k))
    }

    /// `m` is `[r, c]`, `row` has `c` elements; adds `row` to every row of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.val(m).dims2();
        if self.val(row).numel() != c || self.shape(m).len() != 2 {
            return Err(Error::Shape {
                op: "add_row",
                lhs: self.shape(m).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let (tm, tr) = (self.val(m), self.val(row));
        let mut data = tm.data.clone();
        for i in 0..r {
            for (d, &b) in data[i * c..(i + 1) * c].iter_mut().zip(&tr.data) {
                *d += b;
            }
        }
        let out = Tensor::raw(vec![r, c], data);
        let ng = self.ng(m) || self.ng(row);
        self.push("add_row", out, Op::AddRow(m, row), ng)
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![0.0; m * n];
        matmul_into(&self.val(a).data, &self.val(b).data, &mut data, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        self.push(
            "matmul",
            Tensor::raw(vec![m, n], data),
            Op::MatMul(a, b),
            ng,
        )
    }

    /// Selects rows of `x` (`[r, c]`) by index; output is `[idx.len(), c]`.
    pub fn row_gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.val(x).dims2();
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::Shape {
                op: "row_gather",
                lhs: self.shape(x).to_vec(),
                rhs: vec![bad],
            });
        }
        if idx.is_empty() {
            return Err(Error::invalid("row_gather: empty index list"));
        }
        let src = &self.val(x).data;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(x);
        self.push(
            "row_gather",
            Tensor::raw(vec![idx.len(), c], data),
            Op::RowGather(x, idx.to_vec()),
            ng,
        )
    }

    /// Row `i` of `x` is added into output row `idx[i]`; output is `[out_rows, c]`.
    pub fn row_scatter_add(&mut self, x: Var, idx: &[usize], out_rows: usize) -> Result<Var> {
        let (r, c) = self.val(x).dims2();
        if idx.len() != r || idx.iter().any(|&i| i >= out_rows) || out_rows == 0 {
            return Err(Error::Shape {
                op: "row_scatter_add",
                lhs: self.shape(x).to_vec(),
                rhs: vec![idx.len(), out_rows],
            });
        }
        let src = &self.val(x).data;
        let mut data = vec![0.0; out_rows * c];
        for (i, &o) in idx.iter().enumerate() {
            for (d, &s) in data[o * c..(o + 1) * c]
                .iter_mut()
                .zip(&src[i * c..(i + 1) * c])
            {
                *d += s;
            }
        }
        let ng = self.ng(x);
        self.push(
            "row_scatter_add",
            Tensor::raw(vec![out_rows, c], data),
            Op::RowScatterAdd(x, idx.to_vec()),
            ng,
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map("log", x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map("exp", x, f64::exp, Op::Exp(x))
    }

    /// Column-wise mean over rows: `[r, c] -> [c]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.val(x).dims2();
        let mut data = column_sums(&self.val(x).data, r, c);
        data.iter_mut().for_each(|v| *v /= r as f64);
        let ng = self.ng(x);
        self.push("mean_rows", Tensor::raw(vec![c], data), Op::MeanRows(x), ng)
    }

    /// Column-wise sum over rows: `[r, c] -> [c]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.val(x).dims2();
        let data = column_sums(&self.val(x).data, r, c);
        let ng = self.ng(x);
        self.push("sum_rows", Tensor::raw(vec![c], data), Op::SumRows(x), ng)
    }

    /// Euclidean norm of each row: `[r, c] -> [r]`.
    pub fn l2_norm_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let (r, _) = t.dims2();
        let data = (0..r).map(|i| norm(t.row(i))).collect();
        let ng = self.ng(x);
        self.push(
            "l2_norm_rows",
            Tensor::raw(vec![r], data),
            Op::L2NormRows(x),
            ng,
        )
    }

    /// Row-wise inner products: `[r, c] x [r, c] -> [r]`.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot_rows", a, b)?;
        let (ta, tb) = (self.val(a), self.val(b));
        let (r, _) = ta.dims2();
        let data = (0..r).map(|i| dot(ta.row(i), tb.row(i))).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(
            "dot_rows",
            Tensor::raw(vec![r], data),
            Op::DotRows(a, b),
            ng,
        )
    }

    /// Row-wise cosine similarity `[r, c] x [r, c] -> [r]`. Norms below
    /// [`EPS_NORM`] are clamped and counted in [`Tape::degenerate_norms`].
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_rows", a, b)?;
        let (r, _) = self.val(a).dims2();
        self.cosine_impl(a, b, vec![r])
    }

    /// Cosine similarity of two equal-length vectors, as a scalar.
    pub fn cosine_similarity(&mut self, x: Var, y: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", x, y)?;
        if self.shape(x).len() != 1 {
            return Err(Error::Shape {
                op: "cosine_similarity",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(y).to_vec(),
            });
        }
        self.cosine_impl(x, y, Vec::new())
    }

    fn cosine_impl(&mut self, a: Var, b: Var, out_shape: Vec<usize>) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (r, _) = ta.dims2();
        let mut na = Vec::with_capacity(r);
        let mut nb = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r);
        let mut clamped = 0;
        for i in 0..r {
            let (x, y) = (ta.row(i), tb.row(i));
            let (nx, ny) = (norm(x), norm(y));
            clamped += usize::from(nx < EPS_NORM) + usize::from(ny < EPS_NORM);
            data.push(cosine_from_parts(dot(x, y), dot(x, x), dot(y, y)));
            let (nx, ny) = (nx.max(EPS_NORM), ny.max(EPS_NORM));
            na.push(nx);
            nb.push(ny);
        }
        self.degenerate_norms += clamped;
        let ng = self.ng(a) || self.ng(b);
        self.push(
            "cosine",
            Tensor::raw(out_shape, data),
            Op::CosineRows { a, b, na, nb },
            ng,
        )
    }

    /// Row-wise softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let (r, _) = t.dims2();
        let mut data = Vec::with_capacity(t.numel());
        for i in 0..r {
            data.extend(softmax(t.row(i)));
        }
        let out = Tensor::raw(t.shape.clone(), data);
        let ng = self.ng(x);
        self.push("softmax", out, Op::Softmax(x), ng)
    }

    /// Stacks `[r1, c]` on top of `[r2, c]`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::Shape {
                op: "concat_rows",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let shape = vec![sa[0] + sb[0], sa[1]];
        let mut data = self.val(a).data.clone();
        data.extend_from_slice(&self.val(b).data);
        let ng = self.ng(a) || self.ng(b);
        self.push(
            "concat_rows",
            Tensor::raw(shape, data),
            Op::ConcatRows(a, b),
            ng,
        )
    }

    /// Multiplies row `i` of `x` by the constant `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let t = self.val(x);
        let (r, c) = t.dims2();
        if w.len() != r {
            return Err(Error::Shape {
                op: "scale_rows",
                lhs: t.shape.clone(),
                rhs: vec![w.len()],
            });
        }
        let mut data = t.data.clone();
        for (i, &k) in w.iter().enumerate() {
            data[i * c..(i + 1) * c].iter_mut().for_each(|v| *v *= k);
        }
        let out = Tensor::raw(t.shape.clone(), data);
        let ng = self.ng(x);
        self.push("scale_rows", out, Op::ScaleRows(x, w.to_vec()), ng)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.val(x).data.iter().sum();
        let ng = self.ng(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.val(x);
        let s = t.data.iter().sum::<f64>() / t.numel() as f64;
        let ng = self.ng(x);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// Masked mean binary cross-entropy on logits. `targets` and `mask` are
    /// flattened like `logits`; entries with `mask == false` are ignored.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], mask: &[bool]) -> Result<Var> {
        let t = self.val(logits);
        if targets.len() != t.numel() || mask.len() != t.numel() {
            return Err(Error::Shape {
                op: "bce_with_logits",
                lhs: t.shape.clone(),
                rhs: vec![targets.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        let mut total = 0.0;
        for ((&z, &y), &m) in t.data.iter().zip(targets).zip(mask) {
            if m {
                total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            }
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let ng = self.ng(logits);
        self.push(
            "bce_with_logits",
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            ng,
        )
    }

    /// Accumulates d(loss)/d(param) into every reachable parameter's grad
    /// buffer and clears the tape.
    pub fn backward(&mut self, loss: Var, params: &mut ParamSet) -> Result<()> {
        self.backward_retain(loss, params)?;
        self.nodes.clear();
        Ok(())
    }

    /// Like [`Tape::backward`] but keeps the tape, so further losses recorded
    /// on it can be differentiated afterwards.
    pub fn backward_retain(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::invalid("backward: loss is not on this tape"));
        }
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape.clone()));
        }
        let mut adj: Vec<Option<Vec<f64>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut adj, params);
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &[f64],
        adj: &mut [Option<Vec<f64>>],
        params: &mut ParamSet,
    ) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        // Adds a gradient contribution into the adjoint slot of `v`.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => {
                if let Some(buf) = params.get_mut(*id).grad_mut() {
                    buf.iter_mut().zip(g).for_each(|(b, &x)| *b += x);
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(d, &x)| *d -= x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                acc(*a, &mut |s| {
                    for ((d, &x), &y) in s.iter_mut().zip(g).zip(vb) {
                        *d += x * y;
                    }
                });
                acc(*b, &mut |s| {
                    for ((d, &x), &y) in s.iter_mut().zip(g).zip(va) {
                        *d += x * y;
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |s| {
                s.iter_mut().zip(g).for_each(|(d, &x)| *d += k * x)
            }),
            Op::AddRow(m, row) => {
                let c = val(*row).numel();
                acc(*m, &mut |s| add_into(s, g));
                acc(*row, &mut |s| {
                    for chunk in g.chunks_exact(c) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape[0], ta.shape[1]);
                let n = tb.shape[1];
                // dA = G B^T, dB = A^T G
                acc(*a, &mut |s| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            s[i * k + p] += dot(gi, &tb.data[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..m {
                        let gi = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = ta.data[i * k + p];
                            if x != 0.0 {
                                axpy(x, gi, &mut s[p * n..(p + 1) * n]);
                            }
                        }
                    }
                });
            }
            Op::RowGather(x, idx) => {
                let c = val(*x).cols();
                acc(*x, &mut |s| {
                    for (j, &i) in idx.iter().enumerate() {
                        add_into(&mut s[i * c..(i + 1) * c], &g[j * c..(j + 1) * c]);
                    }
                });
            }
            Op::RowScatterAdd(x, idx) => {
                let c = val(*x).cols();
                acc(*x, &mut |s| {
                    for (i, &o) in idx.iter().enumerate() {
                        add_into(&mut s[i * c..(i + 1) * c], &g[o * c..(o + 1) * c]);
                    }
                });
            }
            Op::Relu(x) => {
                let vx = &val(*x).data;
                acc(*x, &mut |s| {
                    for ((d, &gg), &v) in s.iter_mut().zip(g).zip(vx) {
                        if v > 0.0 {
                            *d += gg;
                        }
                    }
                });
            }
            Op::Log(x) => {
                let vx = &val(*x).data;
                acc(*x, &mut |s| {
                    for ((d, &gg), &v) in s.iter_mut().zip(g).zip(vx) {
                        *d += gg / v;
                    }
                });
            }
            Op::Exp(x) => {
                let y = &node.value.data;
                acc(*x, &mut |s| {
                    for ((d, &gg), &v) in s.iter_mut().zip(g).zip(y) {
                        *d += gg * v;
                    }
                });
            }
            Op::MeanRows(x) | Op::SumRows(x) => {
                let (r, _) = val(*x).dims2();
                let k = if matches!(node.op, Op::MeanRows(_)) {
                    1.0 / r as f64
                } else {
                    1.0
                };
                acc(*x, &mut |s| {
                    for chunk in s.chunks_exact_mut(g.len()) {
                        chunk.iter_mut().zip(g).for_each(|(d, &gg)| *d += k * gg);
                    }
                });
            }
            Op::L2NormRows(x) => {
                let tx = val(*x);
                let c = tx.cols();
                let y = &node.value.data;
                acc(*x, &mut |s| {
                    for (i, (&gg, &n)) in g.iter().zip(y).enumerate() {
                        if n > 0.0 {
                            axpy(gg / n, tx.row(i), &mut s[i * c..(i + 1) * c]);
                        }
                    }
                });
            }
            Op::DotRows(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = ta.cols();
                acc(*a, &mut |s| {
                    for (i, &gg) in g.iter().enumerate() {
                        axpy(gg, tb.row(i), &mut s[i * c..(i + 1) * c]);
                    }
                });
                acc(*b, &mut |s| {
                    for (i, &gg) in g.iter().enumerate() {
                        axpy(gg, ta.row(i), &mut s[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::CosineRows { a, b, na, nb } => {
                let (ta, tb) = (val(*a), val(*b));
                let c = ta.cols();
                let sim = &node.value.data;
                // ds/dx = y/(|x||y|) - s x/|x|^2, second term absent when |x| is clamped
                let grad_side = |s: &mut [f64],
                                 own: &Tensor,
                                 other: &Tensor,
                                 n_own: &[f64],
                                 n_other: &[f64]| {
                    for i in 0..g.len() {
                        let out = &mut s[i * c..(i + 1) * c];
                        axpy(g[i] / (n_own[i] * n_other[i]), other.row(i), out);
                        if n_own[i] > EPS_NORM {
                            axpy(-g[i] * sim[i] / (n_own[i] * n_own[i]), own.row(i), out);
                        }
                    }
                };
                acc(*a, &mut |s| grad_side(s, ta, tb, na, nb));
                acc(*b, &mut |s| grad_side(s, tb, ta, nb, na));
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let c = y.cols();
                acc(*x, &mut |s| {
                    for (i, gi) in g.chunks_exact(c).enumerate() {
                        let yi = y.row(i);
                        let inner = dot(gi, yi);
                        for ((d, &gg), &yy) in s[i * c..(i + 1) * c].iter_mut().zip(gi).zip(yi) {
                            *d += yy * (gg - inner);
                        }
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let split = val(*a).numel();
                acc(*a, &mut |s| add_into(s, &g[..split]));
                acc(*b, &mut |s| add_into(s, &g[split..]));
            }
            Op::ScaleRows(x, w) => {
                let c = val(*x).cols();
                acc(*x, &mut |s| {
                    for (i, &k) in w.iter().enumerate() {
                        axpy(k, &g[i * c..(i + 1) * c], &mut s[i * c..(i + 1) * c]);
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = val(*x).numel() as f64;
                acc(*x, &mut |s| s.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::BceWithLogits {
                logits,
                targets,
                mask,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let z = &val(*logits).data;
                let k = g[0] / *count as f64;
                acc(*logits, &mut |s| {
                    for i in 0..s.len() {
                        if mask[i] {
                            s[i] += k * (sigmoid(z[i]) - targets[i]);
                        }
                    }
                });
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(k: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(d, &v)| *d += k * v);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn column_sums(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for i in 0..r {
        add_into(&mut out, &data[i * c..(i + 1) * c]);
    }
    out
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x != 0.0 {
                axpy(x, &b[p * n..(p + 1) * n], row);
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Plain cosine similarity with the crate-wide norm floor.
pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    cosine_from_parts(dot(x, y), dot(x, x), dot(y, y))
}

/// `xy / sqrt(xx * yy)`; for `x == y` this is exactly 1 because
/// `sqrt(fl(d * d)) == d` under round-to-nearest. Falls back to the product
/// of clamped norms when a norm is below the floor or the product leaves the
/// normal range. Clamped to [-1, 1] against rounding.
fn cosine_from_parts(xy: f64, xx: f64, yy: f64) -> f64 {
    let floor = EPS_NORM * EPS_NORM;
    let p = xx * yy;
    let s = if xx >= floor && yy >= floor && p.is_normal() {
        xy / p.sqrt()
    } else {
        xy / (xx.sqrt().max(EPS_NORM) * yy.sqrt().max(EPS_NORM))
    };
    s.clamp(-1.0, 1.0)
}
