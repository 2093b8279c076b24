//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! Every op appends one node to the tape and writes its output into a
//! shared value arena. [`Tape::backward`] walks the nodes in reverse and
//! accumulates gradients into a parallel arena. Nodes only ever read from
//! earlier nodes, so a node's inputs always live below its own offset.
//!
//! Leaves created with [`Tape::param`] carry a [`ParamKey`] so the caller
//! can route their gradients back into parameter storage afterwards. The
//! tape is reusable: [`Tape::clear`] keeps the allocations.
//!
//! Shape mismatches between op inputs are programming errors and panic.

use alloc::vec::Vec;

use super::activation::Activation;
use super::tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Identifies the parameter (and optionally the table row) a leaf was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamKey {
    pub param: usize,
    pub row: Option<u32>,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MulScalar(Var, Var),
    Recip(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumN(u32, u32),
    Dot(Var, Var),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Stack(u32, u32),
    Gather(Var, u32, u32),
    Softmax(Var),
    Max(Var),
    Act(Activation, Var),
    PairSigmoid(Var, Var),
    Mix {
        weights: Var,
        x: Var,
        table: Var,
        start: u32,
        count: u32,
    },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    offset: u32,
    len: u32,
    rows: u32,
}

impl Node {
    fn range(&self) -> core::ops::Range<usize> {
        let o = self.offset as usize;
        o..o + self.len as usize
    }

    fn cols(&self) -> usize {
        (self.len / self.rows.max(1)) as usize
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<f64>,
    grads: Vec<f64>,
    links: Vec<u32>,
    acts: Vec<Activation>,
    leaves: Vec<(Var, ParamKey)>,
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn sigmoid(x: f64) -> f64 {
    Activation::Sigmoid.eval(x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.grads.clear();
        self.links.clear();
        self.acts.clear();
        self.leaves.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, len: usize, rows: usize) -> (Var, usize) {
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.nodes.push(Node {
            op,
            offset: offset as u32,
            len: len as u32,
            rows: rows as u32,
        });
        (Var((self.nodes.len() - 1) as u32), offset)
    }

    fn node(&self, v: Var) -> Node {
        self.nodes[v.index()]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[self.node(v).range()]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.len, 1, "node is not a scalar");
        self.values[n.offset as usize]
    }

    pub fn size(&self, v: Var) -> usize {
        self.node(v).len as usize
    }

    /// `(rows, cols)` as recorded when the node was created.
    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows as usize, n.cols())
    }

    /// Constant leaf (no gradient routing).
    pub fn constant(&mut self, values: &[f64]) -> Var {
        self.constant_matrix(values, 1)
    }

    pub fn constant_matrix(&mut self, values: &[f64], rows: usize) -> Var {
        let offset = self.values.len();
        self.values.extend_from_slice(values);
        self.nodes.push(Node {
            op: Op::Leaf,
            offset: offset as u32,
            len: values.len() as u32,
            rows: rows as u32,
        });
        Var((self.nodes.len() - 1) as u32)
    }

    /// Parameter leaf; `rows > 1` marks a matrix.
    pub fn param(&mut self, key: ParamKey, values: &[f64], rows: usize) -> Var {
        let v = self.constant_matrix(values, rows);
        self.leaves.push((v, key));
        v
    }

    fn same_len(&self, a: Var, b: Var) -> usize {
        let (la, lb) = (self.size(a), self.size(b));
        assert_eq!(la, lb, "elementwise op on mismatched sizes");
        la
    }

    fn unary(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let n = self.node(a);
        let (v, o) = self.push(op, n.len as usize, n.rows as usize);
        let src = n.offset as usize;
        for i in 0..n.len as usize {
            self.values[o + i] = f(self.values[src + i]);
        }
        v
    }

    fn binary(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Var {
        let len = self.same_len(a, b);
        let (na, nb) = (self.node(a), self.node(b));
        let (v, o) = self.push(op, len, na.rows as usize);
        for i in 0..len {
            self.values[o + i] = f(
                self.values[na.offset as usize + i],
                self.values[nb.offset as usize + i],
            );
        }
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.unary(Op::Affine(a, scale), a, |x| scale * x + shift)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// Vector times a scalar node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        self.unary(Op::MulScalar(a, s), a, |x| x * k)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(Op::Recip(a), a, |x| 1.0 / x)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(Op::Ln(a), a, libm::log)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(Op::Clamp(a, lo, hi), a, |x| x.clamp(lo, hi))
    }

    pub fn activation(&mut self, act: Activation, a: Var) -> Var {
        self.unary(Op::Act(act, a), a, |x| act.eval(x))
    }

    /// `Σ_j w_j f_j(x)` over a bank of activations. The `K x D` table of
    /// activation outputs stays on the tape for the reverse pass.
    pub fn mix(&mut self, functions: &[Activation], weights: Var, x: Var) -> Var {
        let (nw, nx) = (self.node(weights), self.node(x));
        let k = functions.len();
        assert_eq!(nw.len as usize, k, "mix needs one weight per function");
        let d = nx.len as usize;
        let ox = nx.offset as usize;
        let (table, ot) = self.push(Op::Leaf, k * d, k);
        for (j, f) in functions.iter().enumerate() {
            for i in 0..d {
                self.values[ot + j * d + i] = f.eval(self.values[ox + i]);
            }
        }
        let start = self.acts.len() as u32;
        self.acts.extend_from_slice(functions);
        let op = Op::Mix {
            weights,
            x,
            table,
            start,
            count: k as u32,
        };
        let (v, o) = self.push(op, d, 1);
        for j in 0..k {
            let wj = self.values[nw.offset as usize + j];
            for i in 0..d {
                self.values[o + i] += wj * self.values[ot + j * d + i];
            }
        }
        v
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).iter().sum();
        let (v, o) = self.push(Op::Sum(a), 1, 1);
        self.values[o] = total;
        v
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "sum_n of nothing");
        let len = self.size(xs[0]);
        let rows = self.node(xs[0]).rows as usize;
        let start = self.links.len() as u32;
        self.links.extend(xs.iter().map(|x| x.0));
        let (v, o) = self.push(Op::SumN(start, xs.len() as u32), len, rows);
        for &x in xs {
            let n = self.node(x);
            assert_eq!(n.len as usize, len, "sum_n on mismatched sizes");
            for i in 0..len {
                self.values[o + i] += self.values[n.offset as usize + i];
            }
        }
        v
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let d = tensor::dot(self.value(a), self.value(b));
        let (v, o) = self.push(Op::Dot(a, b), 1, 1);
        self.values[o] = d;
        v
    }

    /// `W x` where `W` is a matrix node.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (nw, nx) = (self.node(w), self.node(x));
        let (rows, cols) = (nw.rows as usize, nw.cols());
        assert_eq!(nx.len as usize, cols, "matvec dimension mismatch");
        let (v, o) = self.push(Op::MatVec(w, x), rows, 1);
        let (head, out) = self.values.split_at_mut(o);
        tensor::matvec(&head[nw.range()], rows, cols, &head[nx.range()], out);
        v
    }

    /// `Wᵀ y` where `W` is a matrix node.
    pub fn matvec_t(&mut self, w: Var, y: Var) -> Var {
        let (nw, ny) = (self.node(w), self.node(y));
        let (rows, cols) = (nw.rows as usize, nw.cols());
        assert_eq!(ny.len as usize, rows, "matvec_t dimension mismatch");
        let (v, o) = self.push(Op::MatTVec(w, y), cols, 1);
        let (head, out) = self.values.split_at_mut(o);
        tensor::matvec_t(&head[nw.range()], rows, cols, &head[ny.range()], out);
        v
    }

    /// Concatenate equally sized nodes as the rows of a matrix; stacking
    /// scalars gives a column vector.
    pub fn stack(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "stack of nothing");
        let width = self.size(xs[0]);
        let start = self.links.len() as u32;
        self.links.extend(xs.iter().map(|x| x.0));
        let (v, o) = self.push(Op::Stack(start, xs.len() as u32), width * xs.len(), xs.len());
        for (k, &x) in xs.iter().enumerate() {
            let n = self.node(x);
            assert_eq!(n.len as usize, width, "stack on mismatched sizes");
            let src = n.offset as usize;
            self.values
                .copy_within(src..src + width, o + k * width);
        }
        v
    }

    /// Select elements of a vector node by index.
    pub fn gather(&mut self, src: Var, indices: &[usize]) -> Var {
        let n = self.node(src);
        let start = self.links.len() as u32;
        self.links.extend(indices.iter().map(|&i| {
            assert!(i < n.len as usize, "gather index out of range");
            i as u32
        }));
        let (v, o) = self.push(Op::Gather(src, start, indices.len() as u32), indices.len(), 1);
        for (k, &i) in indices.iter().enumerate() {
            self.values[o + k] = self.values[n.offset as usize + i];
        }
        v
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a);
        if n.len == 0 {
            return Err(Error::Empty("softmax input"));
        }
        let (v, o) = self.push(Op::Softmax(a), n.len as usize, 1);
        let (head, out) = self.values.split_at_mut(o);
        tensor::softmax_into(&head[n.range()], out)?;
        Ok(v)
    }

    /// Largest element; the gradient goes to the first maximiser.
    pub fn max(&mut self, a: Var) -> Var {
        let m = self
            .value(a)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let (v, o) = self.push(Op::Max(a), 1, 1);
        self.values[o] = m;
        v
    }

    /// Matrix of `σ(a_j − b_k)` with `a` indexing rows.
    pub fn pair_sigmoid(&mut self, a: Var, b: Var) -> Var {
        let (na, nb) = (self.node(a), self.node(b));
        let (p, q) = (na.len as usize, nb.len as usize);
        let (v, o) = self.push(Op::PairSigmoid(a, b), p * q, p);
        for j in 0..p {
            let aj = self.values[na.offset as usize + j];
            for k in 0..q {
                let bk = self.values[nb.offset as usize + k];
                self.values[o + j * q + k] = sigmoid(aj - bk);
            }
        }
        v
    }

    /// Reverse pass from a scalar node. Gradients are then available
    /// through [`Tape::grad`] and [`Tape::param_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ln = self.node(loss);
        if ln.len != 1 {
            return Err(Error::NotScalar(ln.len as usize));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            let node = self
                .nodes
                .iter()
                .position(|n| n.range().contains(&i))
                .unwrap_or(0);
            return Err(Error::NonFinite { node });
        }
        self.grads.clear();
        self.grads.resize(self.values.len(), 0.0);
        self.grads[ln.offset as usize] = 1.0;

        for idx in (0..=loss.index()).rev() {
            let node = self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let out = node.offset as usize;
            let (lower, upper) = self.grads.split_at_mut(out);
            let g = &upper[..node.len as usize];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let vals = &self.values;
            let nodes = &self.nodes;
            let off = |v: Var| nodes[v.index()].offset as usize;
            let n = g.len();
            let y = &vals[node.range()];
            match node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    axpy(&mut lower[off(a)..off(a) + n], 1.0, g);
                    axpy(&mut lower[off(b)..off(b) + n], 1.0, g);
                }
                Op::Sub(a, b) => {
                    axpy(&mut lower[off(a)..off(a) + n], 1.0, g);
                    axpy(&mut lower[off(b)..off(b) + n], -1.0, g);
                }
                Op::Mul(a, b) => {
                    let (oa, ob) = (off(a), off(b));
                    for (i, &gi) in g.iter().enumerate() {
                        lower[oa + i] += gi * vals[ob + i];
                        lower[ob + i] += gi * vals[oa + i];
                    }
                }
                Op::Affine(a, scale) => {
                    axpy(&mut lower[off(a)..off(a) + n], scale, g);
                }
                Op::MulScalar(a, s) => {
                    let (oa, os) = (off(a), off(s));
                    let k = vals[os];
                    let mut gs = 0.0;
                    for (i, &gi) in g.iter().enumerate() {
                        gs += gi * vals[oa + i];
                        lower[oa + i] += gi * k;
                    }
                    lower[os] += gs;
                }
                Op::Recip(a) => {
                    let oa = off(a);
                    for (i, &gi) in g.iter().enumerate() {
                        lower[oa + i] -= gi * y[i] * y[i];
                    }
                }
                Op::Ln(a) => {
                    let oa = off(a);
                    for (i, &gi) in g.iter().enumerate() {
                        lower[oa + i] += gi / vals[oa + i];
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let oa = off(a);
                    for (i, &gi) in g.iter().enumerate() {
                        let x = vals[oa + i];
                        if x >= lo && x <= hi {
                            lower[oa + i] += gi;
                        }
                    }
                }
                Op::Act(act, a) => {
                    let oa = off(a);
                    for (i, &gi) in g.iter().enumerate() {
                        lower[oa + i] += gi * act.derivative(vals[oa + i], y[i]);
                    }
                }
                Op::Mix {
                    weights,
                    x,
                    table,
                    start,
                    count,
                } => {
                    let (ow, ox, ot) = (off(weights), off(x), off(table));
                    let d = node.len as usize;
                    let acts = &self.acts[start as usize..(start + count) as usize];
                    let xv = &vals[ox..ox + d];
                    for (j, f) in acts.iter().enumerate() {
                        let wj = vals[ow + j];
                        let row = &vals[ot + j * d..ot + (j + 1) * d];
                        lower[ow + j] += tensor::dot(g, row);
                        let gx = &mut lower[ox..ox + d];
                        for i in 0..d {
                            gx[i] += g[i] * wj * f.derivative(xv[i], row[i]);
                        }
                    }
                }
                Op::Sum(a) => {
                    let na = nodes[a.index()];
                    for i in na.range() {
                        lower[i] += g[0];
                    }
                }
                Op::SumN(start, count) => {
                    for &x in &self.links[start as usize..(start + count) as usize] {
                        let ox = nodes[x as usize].offset as usize;
                        axpy(&mut lower[ox..ox + n], 1.0, g);
                    }
                }
                Op::Dot(a, b) => {
                    let (oa, ob) = (off(a), off(b));
                    let len = nodes[a.index()].len as usize;
                    if a == b {
                        axpy(&mut lower[oa..oa + len], 2.0 * g[0], &vals[oa..oa + len]);
                    } else {
                        axpy(&mut lower[oa..oa + len], g[0], &vals[ob..ob + len]);
                        axpy(&mut lower[ob..ob + len], g[0], &vals[oa..oa + len]);
                    }
                }
                Op::MatVec(w, x) => {
                    let nw = nodes[w.index()];
                    let (rows, cols) = (nw.rows as usize, nw.cols());
                    let (ow, ox) = (nw.offset as usize, off(x));
                    let xv = &vals[ox..ox + cols];
                    let wv = &vals[ow..ow + rows * cols];
                    for (r, &gr) in g.iter().enumerate().take(rows) {
                        if gr != 0.0 {
                            let base = ow + r * cols;
                            axpy(&mut lower[base..base + cols], gr, xv);
                        }
                    }
                    let gx = &mut lower[ox..ox + cols];
                    for (r, &gr) in g.iter().enumerate().take(rows) {
                        if gr != 0.0 {
                            axpy(gx, gr, &wv[r * cols..(r + 1) * cols]);
                        }
                    }
                }
                Op::MatTVec(w, yv) => {
                    let nw = nodes[w.index()];
                    let (rows, cols) = (nw.rows as usize, nw.cols());
                    let (ow, oy) = (nw.offset as usize, off(yv));
                    for r in 0..rows {
                        let yr = vals[oy + r];
                        let base = ow + r * cols;
                        axpy(&mut lower[base..base + cols], yr, g);
                        lower[oy + r] += tensor::dot(&vals[base..base + cols], g);
                    }
                }
                Op::Stack(start, count) => {
                    let width = node.len as usize / count as usize;
                    for (k, &x) in self.links[start as usize..(start + count) as usize]
                        .iter()
                        .enumerate()
                    {
                        let ox = nodes[x as usize].offset as usize;
                        axpy(&mut lower[ox..ox + width], 1.0, &g[k * width..(k + 1) * width]);
                    }
                }
                Op::Gather(src, start, count) => {
                    let os = off(src);
                    for (k, &i) in self.links[start as usize..(start + count) as usize]
                        .iter()
                        .enumerate()
                    {
                        lower[os + i as usize] += g[k];
                    }
                }
                Op::Softmax(a) => {
                    let oa = off(a);
                    let gy = tensor::dot(g, y);
                    for (i, &gi) in g.iter().enumerate() {
                        lower[oa + i] += y[i] * (gi - gy);
                    }
                }
                Op::Max(a) => {
                    let na = nodes[a.index()];
                    let xs = &vals[na.range()];
                    let arg = xs
                        .iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                            if v > best.1 {
                                (i, v)
                            } else {
                                best
                            }
                        })
                        .0;
                    lower[na.offset as usize + arg] += g[0];
                }
                Op::PairSigmoid(a, b) => {
                    let (na, nb) = (nodes[a.index()], nodes[b.index()]);
                    let (p, q) = (na.len as usize, nb.len as usize);
                    let (oa, ob) = (na.offset as usize, nb.offset as usize);
                    for j in 0..p {
                        for k in 0..q {
                            let s = y[j * q + k];
                            let d = g[j * q + k] * s * (1.0 - s);
                            lower[oa + j] += d;
                            lower[ob + k] -= d;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[self.node(v).range()]
    }

    /// Gradients of every parameter leaf, in creation order.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamKey, &[f64])> + '_ {
        self.leaves
            .iter()
            .map(move |&(v, key)| (key, &self.grads[self.node(v).range()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = x[i];
                x[i] = orig + h;
                let up = f(&x);
                x[i] = orig - h;
                let down = f(&x);
                x[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.constant(&[3.0]);
        let y = t.mul(x, x);
        t.backward(y).unwrap();
        assert_eq!(t.scalar(y), 9.0);
        assert_eq!(t.grad(x), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.constant(&[1.0, 2.0]);
        assert!(matches!(t.backward(x), Err(Error::NotScalar(2))));
    }

    #[test]
    fn non_finite_rejected() {
        let mut t = Tape::new();
        let x = t.constant(&[0.0]);
        let l = t.ln(x);
        assert!(matches!(t.backward(l), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn off_path_parameters_get_zero() {
        let mut t = Tape::new();
        let a = t.param(ParamKey { param: 0, row: None }, &[1.0, 2.0], 1);
        let b = t.param(ParamKey { param: 1, row: None }, &[5.0, 5.0], 1);
        let _unused = t.add(a, b);
        let s = t.sum(a);
        t.backward(s).unwrap();
        let grads: Vec<_> = t.param_grads().map(|(k, g)| (k.param, g.to_vec())).collect();
        assert_eq!(grads, vec![(0, vec![1.0, 1.0]), (1, vec![0.0, 0.0])]);
    }

    fn softmax_xent(t: &mut Tape, logits: &[f64], target: usize) -> (Var, Var) {
        let x = t.constant(logits);
        let p = t.softmax(x).unwrap();
        let pick = t.gather(p, &[target]);
        let lp = t.ln(pick);
        let loss = t.scale(lp, -1.0);
        (x, loss)
    }

    #[test]
    fn softmax_cross_entropy_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.0, -2.5];
        let mut t = Tape::new();
        let (x, loss) = softmax_xent(&mut t, &logits, 2);
        t.backward(loss).unwrap();
        let analytic = t.grad(x).to_vec();
        let numeric = central_diff(
            |z| {
                let mut t = Tape::new();
                let (_, l) = softmax_xent(&mut t, z, 2);
                t.scalar(l)
            },
            &logits,
            1e-4,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            assert!(rel < 1e-5, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn matrix_ops_match_finite_differences() {
        // f(W, x) = sum(softmax(W x) * tanh(Wᵀ W x)), exercises matvec, matvec_t,
        // stack, max, recip, pair_sigmoid and clamp.
        let w0 = [0.2, -0.5, 0.8, 0.1, 0.3, -0.7];
        let x0 = [0.4, -1.1, 0.9];
        let build = |t: &mut Tape, w: &[f64], x: &[f64]| -> (Var, Var, Var) {
            let wv = t.param(ParamKey { param: 0, row: None }, w, 2);
            let xv = t.param(ParamKey { param: 1, row: None }, x, 1);
            let h = t.matvec(wv, xv);
            let p = t.softmax(h).unwrap();
            let back = t.matvec_t(wv, h);
            let act = t.activation(Activation::Tanh, back);
            let m = t.max(act);
            let inv = t.affine(m, 1.0, 2.0);
            let r = t.recip(inv);
            let ps = t.pair_sigmoid(p, back);
            let pss = t.sum(ps);
            let cl = t.clamp(h, -0.3, 10.0);
            let d = t.dot(cl, p);
            let parts = t.stack(&[r, pss, d]);
            (wv, xv, t.sum(parts))
        };
        let mut t = Tape::new();
        let (wv, xv, loss) = build(&mut t, &w0, &x0);
        t.backward(loss).unwrap();
        let gw = t.grad(wv).to_vec();
        let gx = t.grad(xv).to_vec();
        let nw = central_diff(
            |w| {
                let mut t = Tape::new();
                let l = build(&mut t, w, &x0).2;
                t.scalar(l)
            },
            &w0,
            1e-5,
        );
        let nx = central_diff(
            |x| {
                let mut t = Tape::new();
                let l = build(&mut t, &w0, x).2;
                t.scalar(l)
            },
            &x0,
            1e-5,
        );
        for (a, n) in gw.iter().chain(&gx).zip(nw.iter().chain(&nx)) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-5, "analytic {a} numeric {n}");
        }
    }

    #[test]
    fn mix_matches_stacked_activations() {
        let bank = Activation::ALL;
        let xs = [-1.3, -0.2, 0.0, 0.4, 2.1];
        let ws: Vec<f64> = (0..bank.len()).map(|j| 0.05 + 0.01 * j as f64).collect();
        let coeffs = [0.3, -1.0, 0.7, 0.2, 1.5];

        let mut fused = Tape::new();
        let x = fused.constant(&xs);
        let w = fused.constant(&ws);
        let m = fused.mix(&bank, w, x);
        let c = fused.constant(&coeffs);
        let out = fused.dot(m, c);
        fused.backward(out).unwrap();

        let mut plain = Tape::new();
        let x2 = plain.constant(&xs);
        let w2 = plain.constant(&ws);
        let rows: Vec<Var> = bank.iter().map(|&a| plain.activation(a, x2)).collect();
        let stacked = plain.stack(&rows);
        let m2 = plain.matvec_t(stacked, w2);
        let c2 = plain.constant(&coeffs);
        let out2 = plain.dot(m2, c2);
        plain.backward(out2).unwrap();

        for (a, b) in fused.value(m).iter().zip(plain.value(m2)) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in fused.grad(x).iter().zip(plain.grad(x2)) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in fused.grad(w).iter().zip(plain.grad(w2)) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
