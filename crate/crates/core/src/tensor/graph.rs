use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterRegistry};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    MatVec(Var, Var),
    VecMat(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    Outer(Var, Var),
    Affine(Var, f64),
    ScaleBy(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    LnFloor(Var, f64),
    Softmax(Var),
    Normalize(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Sum(Var),
    Gather(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ScatterAdd(Var, Vec<usize>),
    Min(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// A tape of tensor operations supporting reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the tape is already topologically
/// sorted and `backward` is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<ParamId, Var>,
    no_grad: bool,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records values only; every node has `requires_grad = false`.
    pub fn inference() -> Self {
        Self {
            no_grad: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v` (zeros if untouched).
    pub fn grad(&self, v: Var) -> Tensor {
        let shape = self.nodes[v.0].value.shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = !self.no_grad && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A leaf that participates in differentiation.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let rg = !self.no_grad;
        self.push_raw(t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    /// Binds a registry parameter as a leaf, once per graph.
    ///
    /// Frozen parameters become constants, so no gradient is ever computed for them.
    pub fn param(&mut self, reg: &ParameterRegistry, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let p = reg.get(id);
        let rg = p.trainable && !self.no_grad;
        let v = self.push_raw(p.value.clone(), Op::Leaf, rg);
        self.bound.insert(id, v);
        v
    }

    /// Gradients of every bound trainable parameter, ordered by parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, &[f64])> {
        let mut out: Vec<(ParamId, &[f64])> = self
            .bound
            .iter()
            .filter_map(|(&id, &v)| self.grads[v.0].as_deref().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = super::matmul(ta, tb).map_err(|_| dim_err("matmul", ta, tb))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ` for `a: [m×k]`, `b: [n×k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.cols() {
            return Err(dim_err("matmul_bt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = ta.row(i);
            for j in 0..n {
                out[i * n + j] = dot(ar, tb.row(j));
            }
        }
        let _ = k;
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push(t, Op::MatMulBt(a, b), &[a, b]))
    }

    /// `W · x` for `W: [m×n]`, `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.shape().len() != 2 || tw.cols() != tx.len() {
            return Err(dim_err("matvec", tw, tx));
        }
        let out: Vec<f64> = (0..tw.rows()).map(|i| dot(tw.row(i), tx.data())).collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), &[w, x]))
    }

    /// `aᵀ · M` for `a: [n]`, `M: [n×m]`, i.e. the `a`-weighted sum of the rows of `M`.
    pub fn vecmat(&mut self, a: Var, m: Var) -> Result<Var> {
        let (ta, tm) = (self.value(a), self.value(m));
        if tm.shape().len() != 2 || tm.rows() != ta.len() {
            return Err(dim_err("vecmat", ta, tm));
        }
        let mut out = vec![0.0; tm.cols()];
        for (i, &ai) in ta.data().iter().enumerate() {
            axpy(&mut out, ai, tm.row(i));
        }
        Ok(self.push(Tensor::vector(out), Op::VecMat(a, m), &[a, m]))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("min", a, b, f64::min)?;
        Ok(self.push(t, Op::Min(a, b), &[a, b]))
    }

    /// Adds vector `v: [c]` to every row of `m: [r×c]`.
    pub fn add_row_broadcast(&mut self, m: Var, v: Var) -> Result<Var> {
        let (tm, tv) = (self.value(m), self.value(v));
        if tm.shape().len() != 2 || tm.cols() != tv.len() {
            return Err(dim_err("add_row_broadcast", tm, tv));
        }
        let c = tm.cols();
        let data = tm.data().iter().enumerate().map(|(i, x)| x + tv.data()[i % c]).collect();
        let t = Tensor::new(tm.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRowBroadcast(m, v), &[m, v]))
    }

    pub fn outer(&mut self, u: Var, v: Var) -> Var {
        let (tu, tv) = (self.value(u), self.value(v));
        let data = tu.data().iter().flat_map(|&a| tv.data().iter().map(move |&b| a * b)).collect();
        let t = Tensor::new(vec![tu.len(), tv.len()], data).expect("outer shape");
        self.push(t, Op::Outer(u, v), &[u, v])
    }

    /// `scale · x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Affine(x, scale), &[x])
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(s));
        if !ts.is_scalar() {
            return Err(dim_err("scale_by", tx, ts));
        }
        let k = ts.item();
        let data = tx.data().iter().map(|v| v * k).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::ScaleBy(x, s), &[x, s]))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.map(x, sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        self.push(t, Op::Tanh(x), &[x])
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn ln_floor(&mut self, x: Var, floor: f64) -> Var {
        let t = self.map(x, |v| v.max(floor).ln());
        self.push(t, Op::LnFloor(x, floor), &[x])
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let tx = self.value(x);
        Tensor::new(tx.shape().to_vec(), tx.data().iter().map(|&v| f(v)).collect()).expect("same shape")
    }

    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let y = super::softmax_stable(self.value(x).data(), mask)?;
        Ok(self.push(Tensor::vector(y), Op::Softmax(x), &[x]))
    }

    /// `x / Σx`; fails when the sum is not strictly positive.
    pub fn normalize(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s: f64 = tx.data().iter().sum();
        if !(s > 0.0) {
            return Err(Error::degenerate(format!("normalizer sum is {s}")));
        }
        let data = tx.data().iter().map(|v| v / s).collect();
        let t = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Normalize(x, s), &[x]))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().flat_map(|v| self.value(*v).data().iter().copied()).collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if len == 0 || start + len > tx.len() {
            return Err(Error::contract(format!(
                "slice {start}..{} out of range for {:?}",
                start + len,
                tx.shape()
            )));
        }
        let t = Tensor::vector(tx.data()[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice(x, start), &[x]))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(first) = rows.first() else {
            return Err(Error::contract("stack_rows of no rows"));
        };
        let c = self.value(*first).len();
        let mut data = Vec::with_capacity(c * rows.len());
        for r in rows {
            let t = self.value(*r);
            if t.len() != c {
                return Err(dim_err("stack_rows", self.value(*first), t));
            }
            data.extend_from_slice(t.data());
        }
        let t = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(t, Op::StackRows(rows.to_vec()), rows))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 || i >= tm.rows() {
            return Err(Error::contract(format!("row {i} out of range for {:?}", tm.shape())));
        }
        let t = Tensor::vector(tm.row(i).to_vec());
        Ok(self.push(t, Op::Row(m, i), &[m]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Selects elements of a vector: `y[j] = x[idx[j]]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        if idx.is_empty() {
            return Err(Error::contract("gather with no indices"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= tx.len()) {
            return Err(Error::contract(format!("gather index {bad} out of range {}", tx.len())));
        }
        let t = Tensor::vector(idx.iter().map(|&i| tx.data()[i]).collect());
        Ok(self.push(t, Op::Gather(x, idx.to_vec()), &[x]))
    }

    /// Selects rows of a matrix: `y[j] = M[idx[j]]`.
    pub fn gather_rows(&mut self, m: Var, idx: &[usize]) -> Result<Var> {
        let tm = self.value(m);
        if tm.shape().len() != 2 || idx.is_empty() {
            return Err(Error::contract("gather_rows needs a matrix and at least one index"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= tm.rows()) {
            return Err(Error::contract(format!("row index {bad} out of range for {} rows", tm.rows())));
        }
        let c = tm.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(tm.row(i));
        }
        let t = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(t, Op::GatherRows(m, idx.to_vec()), &[m]))
    }

    /// `y = zeros(size); y[idx[k]] += x[k]`.
    pub fn scatter_add(&mut self, x: Var, idx: &[usize], size: usize) -> Result<Var> {
        let tx = self.value(x);
        if idx.len() != tx.len() {
            return Err(Error::Dimension {
                op: "scatter_add",
                left: tx.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= size) {
            return Err(Error::contract(format!("scatter index {bad} out of range {size}")));
        }
        let mut out = vec![0.0; size];
        for (k, &i) in idx.iter().enumerate() {
            out[i] += tx.data()[k];
        }
        Ok(self.push(Tensor::vector(out), Op::ScatterAdd(x, idx.to_vec()), &[x]))
    }

    /// Populates gradients of `loss` with respect to every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let val = |v: Var| &nodes[v.0].value;
        let y = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if let Some(ga) = buf(grads, nodes, *a) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            ga[r * k + p] += dot(grow, tb.row(p));
                        }
                    }
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            axpy(&mut gb[p * n..(p + 1) * n], ta.data()[r * k + p], grow);
                        }
                    }
                }
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                if let Some(ga) = buf(grads, nodes, *a) {
                    for r in 0..m {
                        for j in 0..n {
                            axpy(&mut ga[r * k..(r + 1) * k], g[r * n + j], tb.row(j));
                        }
                    }
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    for r in 0..m {
                        for j in 0..n {
                            axpy(&mut gb[j * k..(j + 1) * k], g[r * n + j], ta.row(r));
                        }
                    }
                }
            }
            Op::MatVec(w, x) => {
                let (tw, tx) = (val(*w), val(*x));
                let n = tw.cols();
                if let Some(gw) = buf(grads, nodes, *w) {
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(&mut gw[r * n..(r + 1) * n], gr, tx.data());
                        }
                    }
                }
                if let Some(gx) = buf(grads, nodes, *x) {
                    for (r, &gr) in g.iter().enumerate() {
                        if gr != 0.0 {
                            axpy(gx, gr, tw.row(r));
                        }
                    }
                }
            }
            Op::VecMat(a, m) => {
                let (ta, tm) = (val(*a), val(*m));
                let c = tm.cols();
                if let Some(ga) = buf(grads, nodes, *a) {
                    for (r, gr) in ga.iter_mut().enumerate() {
                        *gr += dot(g, tm.row(r));
                    }
                }
                if let Some(gm) = buf(grads, nodes, *m) {
                    for (r, &ar) in ta.data().iter().enumerate() {
                        axpy(&mut gm[r * c..(r + 1) * c], ar, g);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = buf(grads, nodes, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    axpy(gb, 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf(grads, nodes, *a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    axpy(gb, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if let Some(ga) = buf(grads, nodes, *a) {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(tb.data()) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(ta.data()) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Min(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let take_a: Vec<bool> = ta.data().iter().zip(tb.data()).map(|(x, y)| x <= y).collect();
                if let Some(ga) = buf(grads, nodes, *a) {
                    for (k, o) in ga.iter_mut().enumerate() {
                        if take_a[k] {
                            *o += g[k];
                        }
                    }
                }
                if let Some(gb) = buf(grads, nodes, *b) {
                    for (k, o) in gb.iter_mut().enumerate() {
                        if !take_a[k] {
                            *o += g[k];
                        }
                    }
                }
            }
            Op::AddRowBroadcast(m, v) => {
                let c = val(*v).len();
                if let Some(gm) = buf(grads, nodes, *m) {
                    axpy(gm, 1.0, g);
                }
                if let Some(gv) = buf(grads, nodes, *v) {
                    for row in g.chunks(c) {
                        axpy(gv, 1.0, row);
                    }
                }
            }
            Op::Outer(u, v) => {
                let (tu, tv) = (val(*u), val(*v));
                let c = tv.len();
                if let Some(gu) = buf(grads, nodes, *u) {
                    for (r, o) in gu.iter_mut().enumerate() {
                        *o += dot(&g[r * c..(r + 1) * c], tv.data());
                    }
                }
                if let Some(gv) = buf(grads, nodes, *v) {
                    for (r, &ur) in tu.data().iter().enumerate() {
                        axpy(gv, ur, &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Affine(x, scale) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    axpy(gx, *scale, g);
                }
            }
            Op::ScaleBy(x, s) => {
                let (tx, ts) = (val(*x), val(*s));
                if let Some(gx) = buf(grads, nodes, *x) {
                    axpy(gx, ts.item(), g);
                }
                if let Some(gs) = buf(grads, nodes, *s) {
                    gs[0] += dot(g, tx.data());
                }
            }
            Op::Sigmoid(x) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y.data()) {
                        *o += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(x) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y.data()) {
                        *o += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::LnFloor(x, floor) => {
                let tx = val(*x);
                if let Some(gx) = buf(grads, nodes, *x) {
                    for ((o, gi), xi) in gx.iter_mut().zip(g).zip(tx.data()) {
                        if *xi > *floor {
                            *o += gi / xi;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    let gy = dot(g, y.data());
                    for ((o, gi), yi) in gx.iter_mut().zip(g).zip(y.data()) {
                        *o += yi * (gi - gy);
                    }
                }
            }
            Op::Normalize(x, s) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    let gy = dot(g, y.data());
                    for (o, gi) in gx.iter_mut().zip(g) {
                        *o += (gi - gy) / s;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = val(*p).len();
                    if let Some(gp) = buf(grads, nodes, *p) {
                        axpy(gp, 1.0, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Slice(x, start) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    axpy(&mut gx[*start..*start + g.len()], 1.0, g);
                }
            }
            Op::StackRows(rows) => {
                let c = y.cols();
                for (r, v) in rows.iter().enumerate() {
                    if let Some(gv) = buf(grads, nodes, *v) {
                        axpy(gv, 1.0, &g[r * c..(r + 1) * c]);
                    }
                }
            }
            Op::Row(m, r) => {
                let c = g.len();
                if let Some(gm) = buf(grads, nodes, *m) {
                    axpy(&mut gm[r * c..(r + 1) * c], 1.0, g);
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    gx.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Gather(x, idx) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for (j, &i) in idx.iter().enumerate() {
                        gx[i] += g[j];
                    }
                }
            }
            Op::GatherRows(m, idx) => {
                let c = y.cols();
                if let Some(gm) = buf(grads, nodes, *m) {
                    for (j, &i) in idx.iter().enumerate() {
                        axpy(&mut gm[i * c..(i + 1) * c], 1.0, &g[j * c..(j + 1) * c]);
                    }
                }
            }
            Op::ScatterAdd(x, idx) => {
                if let Some(gx) = buf(grads, nodes, *x) {
                    for (k, &i) in idx.iter().enumerate() {
                        gx[k] += g[i];
                    }
                }
            }
        }
    }
}

fn buf<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
