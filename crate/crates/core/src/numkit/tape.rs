use super::{NumError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { src: Var, axis: usize, start: usize },
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Abs(Var),
    Softmax { src: Var, axis: usize },
    LogSoftmax { src: Var, axis: usize },
    Sum(Var),
    Mean(Var),
    Gather { table: Var, ids: Vec<usize> },
    TileRows(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it and
/// one reverse sweep in index order is a valid topological traversal.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Raw gradient buffer, `None` when `var` does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `var`; zeros when unreachable.
    pub fn tensor(&self, var: Var) -> Tensor {
        let shape = &self.shapes[var.0];
        match self.get(var) {
            Some(g) => Tensor::new(shape.clone(), g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn check_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(), NumError> {
    if a.shape() != b.shape() {
        return Err(NumError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Applies `f` to every line of `data` along the split `(outer, n, inner)`.
fn for_each_line(
    (outer, n, inner): (usize, usize, usize),
    mut f: impl FnMut(&mut dyn FnMut(usize) -> usize),
) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            f(&mut |j| base + j * inner);
        }
    }
}

fn softmax_forward(x: &Tensor, axis: usize, log: bool) -> Result<Tensor, NumError> {
    let split = x.axis_split(axis)?;
    let n = split.1;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for_each_line(split, |at| {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            max = max.max(src[at(j)]);
        }
        let mut total = 0.0;
        for j in 0..n {
            total += (src[at(j)] - max).exp();
        }
        let log_total = total.ln();
        for j in 0..n {
            let k = at(j);
            out[k] = if log {
                src[k] - max - log_total
            } else {
                (src[k] - max).exp() / total
            };
        }
    });
    Tensor::new(x.shape().to_vec(), out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            nodes: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Parameters and constants are both leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.value(var).data()[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn map(&mut self, src: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let x = self.value(src);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("elementwise shape");
        self.push(value, op)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let (x, y) = (self.value(a), self.value(b));
        check_same(name, x, y)?;
        let data = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&p, &q)| f(p, q))
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (x, y) = (self.value(a), self.value(b));
        let mismatch = || NumError::ShapeMismatch {
            op: "matmul",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        };
        let ((m, k), (k2, n)) = match (x.dims2(), y.dims2()) {
            (Some(p), Some(q)) => (p, q),
            _ => return Err(mismatch()),
        };
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        matmul_into(x.data(), y.data(), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip("add", a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip("sub", a, b, Op::Sub(a, b), |p, q| p - q)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip("mul", a, b, Op::Mul(a, b), |p, q| p * q)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, Op::Scale(a, factor), |v| v * factor)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        if let Some(bad) = self
            .value(a)
            .data()
            .iter()
            .find(|&&v| v <= 0.0 || v.is_nan())
        {
            return Err(NumError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.map(a, Op::Log(a), f64::ln))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let value = softmax_forward(self.value(a), axis, false)?;
        Ok(self.push(value, Op::Softmax { src: a, axis }))
    }

    /// Numerically stable `log(softmax(a))`.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumError> {
        let value = softmax_forward(self.value(a), axis, true)?;
        Ok(self.push(value, Op::LogSoftmax { src: a, axis }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mean = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(mean), Op::Mean(a))
    }

    /// Joins tensors along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumError> {
        let first = self.value(*parts.first().ok_or(NumError::Empty("concat"))?);
        let (outer, _, inner) = first.axis_split(axis)?;
        let mut shape = first.shape().to_vec();
        let mut extent = 0;
        for &p in parts {
            let t = self.value(p);
            let same_rank = t.rank() == shape.len();
            let agrees = same_rank
                && t.shape()
                    .iter()
                    .zip(&shape)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !agrees {
                return Err(NumError::ShapeMismatch {
                    op: "concat",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            extent += t.shape()[axis];
        }
        shape[axis] = extent;
        let mut out = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, NumError> {
        let x = self.value(a);
        let (outer, n, inner) = x.axis_split(axis)?;
        if len == 0 || start + len > n {
            return Err(NumError::SliceBounds {
                axis,
                start,
                len,
                shape: x.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Slice {
                src: a,
                axis,
                start,
            },
        ))
    }

    /// Selects rows of a rank-2 table: the embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let t = self.value(table);
        let (rows, cols) = t.dims2().ok_or_else(|| NumError::ShapeMismatch {
            op: "gather_rows",
            left: t.shape().to_vec(),
            right: vec![ids.len()],
        })?;
        if ids.is_empty() {
            return Err(NumError::Empty("gather_rows"));
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(NumError::Index { index: id, rows });
            }
            out.extend_from_slice(t.row_slice(id));
        }
        let value = Tensor::new(vec![ids.len(), cols], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Repeats a `1 × n` row `rows` times, used to apply a bias to a batch.
    pub fn tile_rows(&mut self, a: Var, rows: usize) -> Result<Var, NumError> {
        let x = self.value(a);
        match x.dims2() {
            Some((1, n)) if rows > 0 => {
                let data = x.data().repeat(rows);
                let value = Tensor::new(vec![rows, n], data)?;
                Ok(self.push(value, Op::TileRows(a)))
            }
            _ => Err(NumError::ShapeMismatch {
                op: "tile_rows",
                left: x.shape().to_vec(),
                right: vec![rows],
            }),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let root = self.value(loss);
        if !root.is_scalar() {
            return Err(NumError::NonScalarLoss(root.shape().to_vec()));
        }
        let count = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; count];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..count).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k) = x.dims2().expect("matmul lhs");
                let n = y.dims2().expect("matmul rhs").1;
                // dA = G · Bᵀ
                let da = self.slot(grads, *a);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &y.data()[p * n..(p + 1) * n];
                        da[i * k + p] += grow.iter().zip(brow).map(|(u, v)| u * v).sum::<f64>();
                    }
                }
                // dB = Aᵀ · G
                let db = self.slot(grads, *b);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = x.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                add_into(self.slot(grads, *a), g);
                add_into(self.slot(grads, *b), g);
            }
            Op::Sub(a, b) => {
                add_into(self.slot(grads, *a), g);
                for (d, gv) in self.slot(grads, *b).iter_mut().zip(g) {
                    *d -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a).data(), self.value(*b).data());
                for ((d, gv), yv) in self.slot(grads, *a).iter_mut().zip(g).zip(y) {
                    *d += gv * yv;
                }
                for ((d, gv), xv) in self.slot(grads, *b).iter_mut().zip(g).zip(x) {
                    *d += gv * xv;
                }
            }
            Op::Scale(a, factor) => {
                for (d, gv) in self.slot(grads, *a).iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            Op::Sigmoid(a) => {
                for ((d, gv), y) in self.slot(grads, *a).iter_mut().zip(g).zip(out) {
                    *d += gv * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                for ((d, gv), y) in self.slot(grads, *a).iter_mut().zip(g).zip(out) {
                    *d += gv * (1.0 - y * y);
                }
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                for ((d, gv), xv) in self.slot(grads, *a).iter_mut().zip(g).zip(x) {
                    *d += gv / xv;
                }
            }
            Op::Abs(a) => {
                let x = self.value(*a).data();
                for ((d, gv), xv) in self.slot(grads, *a).iter_mut().zip(g).zip(x) {
                    if *xv > 0.0 {
                        *d += gv;
                    } else if *xv < 0.0 {
                        *d -= gv;
                    }
                }
            }
            Op::Softmax { src, axis } => {
                let split = node.value.axis_split(*axis).expect("softmax axis");
                let n = split.1;
                let d = self.slot(grads, *src);
                for_each_line(split, |at| {
                    let dot: f64 = (0..n).map(|j| g[at(j)] * out[at(j)]).sum();
                    for j in 0..n {
                        let k = at(j);
                        d[k] += out[k] * (g[k] - dot);
                    }
                });
            }
            Op::LogSoftmax { src, axis } => {
                let split = node.value.axis_split(*axis).expect("log_softmax axis");
                let n = split.1;
                let d = self.slot(grads, *src);
                for_each_line(split, |at| {
                    let total: f64 = (0..n).map(|j| g[at(j)]).sum();
                    for j in 0..n {
                        let k = at(j);
                        d[k] += g[k] - out[k].exp() * total;
                    }
                });
            }
            Op::Sum(a) => {
                for d in self.slot(grads, *a).iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(a) => {
                let d = self.slot(grads, *a);
                let share = g[0] / d.len() as f64;
                for v in d.iter_mut() {
                    *v += share;
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, extent, inner) = node.value.axis_split(*axis).expect("concat axis");
                let mut offset = 0;
                for &p in parts {
                    let width = self.value(p).shape()[*axis];
                    let d = self.slot(grads, p);
                    for o in 0..outer {
                        let src = o * extent * inner + offset * inner;
                        let dst = o * width * inner;
                        add_into(
                            &mut d[dst..dst + width * inner],
                            &g[src..src + width * inner],
                        );
                    }
                    offset += width;
                }
            }
            Op::Slice { src, axis, start } => {
                let (outer, n, inner) = self.value(*src).axis_split(*axis).expect("slice axis");
                let len = node.value.shape()[*axis];
                let d = self.slot(grads, *src);
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let from = o * len * inner;
                    add_into(&mut d[dst..dst + len * inner], &g[from..from + len * inner]);
                }
            }
            Op::Gather { table, ids } => {
                let cols = self.value(*table).dims2().expect("gather table").1;
                let d = self.slot(grads, *table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(
                        &mut d[id * cols..(id + 1) * cols],
                        &g[r * cols..(r + 1) * cols],
                    );
                }
            }
            Op::TileRows(a) => {
                let d = self.slot(grads, *a);
                let n = d.len();
                for chunk in g.chunks(n) {
                    add_into(d, chunk);
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
