//! Reverse-mode tape over 2-D tensors.
//!
//! A [`Graph`] borrows the parameter store read-only, records every op with
//! its forward value, and [`Graph::backward`] accumulates parameter gradients
//! into a separate [`Grads`] buffer.

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};
use super::NeuralError;

pub type ParamId = usize;

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Rounds every value to the nearest binary32, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x as f32 as f64;
            }
        }
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads(store.tensors.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn zero(&mut self) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.0 {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather { pid: ParamId, ids: Vec<usize> },
    Rows { pid: ParamId, start: usize },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Cos { a: Var, b: Var, na: f64, nb: f64 },
    CrossEntropy { logits: Var, label: usize, weight: f64, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

const LN_EPS: f64 = 1e-5;

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph { store, nodes: Vec::with_capacity(256) }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(pid) => &self.store.tensors[pid].data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.shape(v);
        Tensor::from_vec(r, c, self.value(v).to_vec())
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        let [r, c] = t.shape;
        self.push(r, c, t.data, Op::Input)
    }

    pub fn param(&mut self, pid: ParamId) -> Var {
        let [r, c] = self.store.tensors[pid].shape;
        self.push(r, c, Vec::new(), Op::Param(pid))
    }

    /// Rows `ids` of parameter `pid`.
    pub fn gather(&mut self, pid: ParamId, ids: &[usize]) -> Var {
        let t = &self.store.tensors[pid];
        let c = t.cols();
        let mut v = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            v.extend_from_slice(t.row(i));
        }
        self.push(ids.len(), c, v, Op::Gather { pid, ids: ids.to_vec() })
    }

    /// Rows `start..start + len` of parameter `pid`.
    pub fn rows(&mut self, pid: ParamId, start: usize, len: usize) -> Var {
        let t = &self.store.tensors[pid];
        let c = t.cols();
        let v = t.data[start * c..(start + len) * c].to_vec();
        self.push(len, c, v, Op::Rows { pid, start })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push(m, n, out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimensions");
        let mut out = vec![0.0; m * n];
        matmul_bt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        self.push(m, n, out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(r, c, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push(r, c, out, Op::Sub(a, b))
    }

    /// Adds the 1×c row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(b), (1, c), "add_row shapes");
        let bv = self.value(b);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            for (o, x) in row.iter_mut().zip(bv) {
                *o += x;
            }
        }
        self.push(r, c, out, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(r, c, out, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, k: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x + k).collect();
        self.push(r, c, out, Op::AddConst(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        self.push(r, c, out, Op::Relu(a))
    }

    /// Row-wise softmax with max-shift.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(r, c, out, Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(g), (1, c));
        assert_eq!(self.shape(b), (1, c));
        let xv = self.value(x);
        let gv = self.value(g);
        let bv = self.value(b);
        let mut out = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        self.push(r, c, out, Op::LayerNorm { x, g, b, xhat, inv_std })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(x);
        assert!(start + len <= c);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + start..i * c + start + len]);
        }
        self.push(r, len, out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|p| self.shape(*p).1).collect();
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (p, w) in parts.iter().zip(&widths) {
                assert_eq!(self.shape(*p).0, r, "concat rows");
                out.extend_from_slice(&self.value(*p)[i * w..(i + 1) * w]);
            }
        }
        self.push(r, c, out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = vec![0.0; c];
        for row in self.value(x).chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= r as f64);
        self.push(1, c, out, Op::MeanRows(x))
    }

    /// Cosine similarity of two equal-length vectors, as a 1×1 node.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        assert_eq!(self.value(a).len(), self.value(b).len(), "cosine lengths");
        let av = self.value(a);
        let bv = self.value(b);
        let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(NeuralError::ZeroVector);
        }
        let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        Ok(self.push(1, 1, vec![dot / (na * nb)], Op::Cos { a, b, na, nb }))
    }

    /// −w · log softmax(logits)[label], a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, label: usize, weight: f64) -> Var {
        let z = self.value(logits);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = -weight * (z[label] - max - lse);
        let mut probs = z.to_vec();
        softmax_in_place(&mut probs);
        self.push(1, 1, vec![loss], Op::CrossEntropy { logits, label, weight, probs })
    }

    /// Back-propagates `seed · ∂root` and adds parameter gradients to `grads`.
    pub fn backward(&self, root: Var, seed: f64, grads: &mut Grads) {
        let mut g: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let (r, c) = self.shape(root);
        g[root.0] = Some(vec![seed; r * c]);
        for idx in (0..=root.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => add_into(&mut grads.0[*pid], &dy),
                Op::Gather { pid, ids } => {
                    let c = node.cols;
                    let dst = &mut grads.0[*pid];
                    for (k, &i) in ids.iter().enumerate() {
                        add_into(&mut dst[i * c..(i + 1) * c], &dy[k * c..(k + 1) * c]);
                    }
                }
                Op::Rows { pid, start } => {
                    let c = node.cols;
                    add_into(&mut grads.0[*pid][start * c..start * c + dy.len()], &dy);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    let ga = grad_slot(&mut g, *a, m * k);
                    matmul_bt_acc(&dy, self.value(*b), ga, m, n, k);
                    let gb = grad_slot(&mut g, *b, k * n);
                    matmul_at_acc(self.value(*a), &dy, gb, m, k, n);
                }
                Op::MatMulT(a, b) => {
                    let (m, k) = self.shape(*a);
                    let n = node.cols;
                    let ga = grad_slot(&mut g, *a, m * k);
                    matmul_acc(&dy, self.value(*b), ga, m, n, k);
                    let gb = grad_slot(&mut g, *b, n * k);
                    matmul_at_acc(&dy, self.value(*a), gb, m, n, k);
                }
                Op::Add(a, b) => {
                    add_into(grad_slot(&mut g, *a, dy.len()), &dy);
                    add_into(grad_slot(&mut g, *b, dy.len()), &dy);
                }
                Op::Sub(a, b) => {
                    add_into(grad_slot(&mut g, *a, dy.len()), &dy);
                    let gb = grad_slot(&mut g, *b, dy.len());
                    for (o, d) in gb.iter_mut().zip(&dy) {
                        *o -= d;
                    }
                }
                Op::AddRow(a, b) => {
                    add_into(grad_slot(&mut g, *a, dy.len()), &dy);
                    let c = node.cols;
                    let gb = grad_slot(&mut g, *b, c);
                    for row in dy.chunks(c) {
                        add_into(gb, row);
                    }
                }
                Op::Scale(a, s) => {
                    let ga = grad_slot(&mut g, *a, dy.len());
                    for (o, d) in ga.iter_mut().zip(&dy) {
                        *o += s * d;
                    }
                }
                Op::AddConst(a) => add_into(grad_slot(&mut g, *a, dy.len()), &dy),
                Op::Relu(a) => {
                    let ga = grad_slot(&mut g, *a, dy.len());
                    for ((o, d), y) in ga.iter_mut().zip(&dy).zip(&node.value) {
                        if *y > 0.0 {
                            *o += d;
                        }
                    }
                }
                Op::Softmax(a) => {
                    let c = node.cols;
                    let ga = grad_slot(&mut g, *a, dy.len());
                    for ((grow, drow), yrow) in ga.chunks_mut(c).zip(dy.chunks(c)).zip(node.value.chunks(c)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for ((o, d), y) in grow.iter_mut().zip(drow).zip(yrow) {
                            *o += y * (d - dot);
                        }
                    }
                }
                Op::LayerNorm { x, g: gv, b, xhat, inv_std } => {
                    let (r, c) = (node.rows, node.cols);
                    let gamma = self.value(*gv).to_vec();
                    {
                        let gg = grad_slot(&mut g, *gv, c);
                        for i in 0..r {
                            for j in 0..c {
                                gg[j] += dy[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    {
                        let gb = grad_slot(&mut g, *b, c);
                        for row in dy.chunks(c) {
                            add_into(gb, row);
                        }
                    }
                    let gx = grad_slot(&mut g, *x, r * c);
                    let nf = c as f64;
                    let mut dxhat = vec![0.0; c];
                    for i in 0..r {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let d = dy[i * c + j] * gamma[j];
                            dxhat[j] = d;
                            s1 += d;
                            s2 += d * xhat[i * c + j];
                        }
                        for j in 0..c {
                            gx[i * c + j] += inv_std[i] / nf * (nf * dxhat[j] - s1 - xhat[i * c + j] * s2);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (r, c) = self.shape(*x);
                    let w = node.cols;
                    let gx = grad_slot(&mut g, *x, r * c);
                    for i in 0..r {
                        add_into(&mut gx[i * c + start..i * c + start + w], &dy[i * w..(i + 1) * w]);
                    }
                }
                Op::ConcatCols(parts) => {
                    let r = node.rows;
                    let c = node.cols;
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(*p).1;
                        let gp = grad_slot(&mut g, *p, r * w);
                        for i in 0..r {
                            add_into(&mut gp[i * w..(i + 1) * w], &dy[i * c + off..i * c + off + w]);
                        }
                        off += w;
                    }
                }
                Op::MeanRows(x) => {
                    let (r, c) = self.shape(*x);
                    let gx = grad_slot(&mut g, *x, r * c);
                    for row in gx.chunks_mut(c) {
                        for (o, d) in row.iter_mut().zip(&dy) {
                            *o += d / r as f64;
                        }
                    }
                }
                Op::Cos { a, b, na, nb } => {
                    let cval = node.value[0];
                    let d = dy[0];
                    let av = self.value(*a).to_vec();
                    let bv = self.value(*b).to_vec();
                    let ga = grad_slot(&mut g, *a, av.len());
                    for (o, (x, y)) in ga.iter_mut().zip(av.iter().zip(&bv)) {
                        *o += d * (y / (na * nb) - cval * x / (na * na));
                    }
                    let gb = grad_slot(&mut g, *b, bv.len());
                    for (o, (x, y)) in gb.iter_mut().zip(av.iter().zip(&bv)) {
                        *o += d * (x / (na * nb) - cval * y / (nb * nb));
                    }
                }
                Op::CrossEntropy { logits, label, weight, probs } => {
                    let gl = grad_slot(&mut g, *logits, probs.len());
                    for (j, (o, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let t = if j == *label { 1.0 } else { 0.0 };
                        *o += dy[0] * weight * (p - t);
                    }
                }
            }
        }
    }

    /// Values of every softmax node, in creation order.
    pub fn softmax_values(&self) -> Vec<Tensor> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Softmax(_)))
            .map(|n| Tensor::from_vec(n.rows, n.cols, n.value.clone()))
            .collect()
    }
}

fn grad_slot(g: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    g[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}
