//! Minimal reverse-mode differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse from a scalar output. Parameters are bound by
//! reference, so building a graph does not copy weights.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Val<'a> {
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl Val<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Val::Owned(v) => v,
            Val::Borrowed(s) => s,
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    /// Per-row standardization; keeps `1/sqrt(var + eps)` per row.
    Normalize(Var, Vec<f64>),
    /// Standardize, scale and shift; keeps `1/sqrt(var + eps)` per row and the standardized rows.
    LayerNorm {
        a: Var,
        gain: Var,
        bias: Var,
        inv_std: Vec<f64>,
        z: Vec<f64>,
    },
    /// `x * (1 + scale) + shift` with `[scale || shift]` in a `1 x 2c` row.
    Film(Var, Var),
    AddN(Vec<Var>),
    SoftmaxRows(Var),
    /// Column-wise softmax within consecutive blocks of `usize` rows.
    SoftmaxGroups(Var, usize),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    /// Sum over rows of `-log softmax(row)[target]`; keeps the softmax.
    SoftmaxXent(Var, Vec<usize>, Vec<f64>),
    /// Mean binary cross-entropy on logits.
    BceLogits(Var, Vec<f64>),
}

struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Val<'a>,
    op: Op,
    tracked: bool,
}

/// Operation record for one forward pass.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar output with respect to every tracked node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of leaf `v`, or `None` when `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Move the gradient of `v` out.
    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub(crate) fn matmul(a: &[f64], r: usize, k: usize, b: &[f64], c: usize, out: &mut [f64]) {
    let k4 = k - k % 4;
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for p in (0..k4).step_by(4) {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            let rows = &b[p * c..(p + 4) * c];
            let (b0, rest) = rows.split_at(c);
            let (b1, rest) = rest.split_at(c);
            let (b2, b3) = rest.split_at(c);
            for ((((o, x0), x1), x2), x3) in orow.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3) {
                *o += a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
            }
        }
        for p in k4..k {
            let aip = arow[p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *o += aip * bv;
            }
        }
    }
}

/// `out += a * b^T` with `a: r x k`, `b: c x k`.
fn matmul_t(a: &[f64], r: usize, k: usize, b: &[f64], c: usize, out: &mut [f64]) {
    let mut bt = vec![0.0; k * c];
    for j in 0..c {
        for p in 0..k {
            bt[p * c + j] = b[j * k + p];
        }
    }
    matmul(a, r, k, &bt, c, out);
}

/// `out += a^T * b` with `a: r x k`, `b: r x c`.
fn t_matmul(a: &[f64], r: usize, k: usize, b: &[f64], c: usize, out: &mut [f64]) {
    let r4 = r - r % 4;
    for i in (0..r4).step_by(4) {
        let rows = &b[i * c..(i + 4) * c];
        let (g0, rest) = rows.split_at(c);
        let (g1, rest) = rest.split_at(c);
        let (g2, g3) = rest.split_at(c);
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            let orow = &mut out[p * c..(p + 1) * c];
            for ((((o, x0), x1), x2), x3) in orow.iter_mut().zip(g0).zip(g1).zip(g2).zip(g3) {
                *o += a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
            }
        }
    }
    for i in r4..r {
        let brow = &b[i * c..(i + 1) * c];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_row(src: &[f64], dst: &mut [f64]) {
    let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (d, &x) in dst.iter_mut().zip(src) {
        *d = libm::exp(x - m);
        s += *d;
    }
    for d in dst.iter_mut() {
        *d /= s;
    }
}

const NORM_EPS: f64 = 1e-5;

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, tracked: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value: Val::Owned(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowing `data`.
    pub fn param(&mut self, rows: usize, cols: usize, data: &'a [f64]) -> Var {
        self.leaf(rows, cols, data, true)
    }

    /// Leaf borrowing `data` that never receives a gradient.
    pub fn frozen(&mut self, rows: usize, cols: usize, data: &'a [f64]) -> Var {
        self.leaf(rows, cols, data, false)
    }

    fn leaf(&mut self, rows: usize, cols: usize, data: &'a [f64], tracked: bool) -> Var {
        assert_eq!(data.len(), rows * cols, "leaf shape mismatch");
        self.nodes.push(Node {
            rows,
            cols,
            value: Val::Borrowed(data),
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Owned constant input.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(data.len(), rows * cols, "constant shape mismatch");
        self.push(rows, cols, data, Op::Leaf, false)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.as_slice()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (k2, c) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimension");
        let mut out = vec![0.0; r * c];
        matmul(self.value(a), r, k, self.value(b), c, &mut out);
        let t = self.tracked(a) || self.tracked(b);
        self.push(r, c, out, Op::MatMul(a, b), t)
    }

    /// `a * b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (r, k) = self.shape(a);
        let (c, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimension");
        let mut out = vec![0.0; r * c];
        matmul_t(self.value(a), r, k, self.value(b), c, &mut out);
        let t = self.tracked(a) || self.tracked(b);
        self.push(r, c, out, Op::MatMulT(a, b), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let t = self.tracked(a) || self.tracked(b);
        self.push(r, c, out, Op::Add(a, b), t)
    }

    /// Add a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "add_row shape");
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(x, y)| x + y))
            .collect();
        let t = self.tracked(a) || self.tracked(row);
        self.push(r, c, out, Op::AddRow(a, row), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shape");
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let t = self.tracked(a) || self.tracked(b);
        self.push(r, c, out, Op::Mul(a, b), t)
    }

    /// Multiply every row of `a` by a `1 x c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(row), (1, c), "mul_row shape");
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(x, y)| x * y))
            .collect();
        let t = self.tracked(a) || self.tracked(row);
        self.push(r, c, out, Op::MulRow(a, row), t)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        let t = self.tracked(a);
        self.push(r, c, out, Op::Scale(a, s), t)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let t = self.tracked(a);
        self.push(r, c, out, Op::Relu(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let t = self.tracked(a);
        self.push(r, c, out, Op::Sigmoid(a), t)
    }

    /// Standardize each row to zero mean and unit variance.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for (src, dst) in self.value(a).chunks(c).zip(out.chunks_mut(c)) {
            let mean = src.iter().sum::<f64>() / c as f64;
            let var = src.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / libm::sqrt(var + NORM_EPS);
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = (x - mean) * is;
            }
            inv_std.push(is);
        }
        let t = self.tracked(a);
        self.push(r, c, out, Op::Normalize(a, inv_std), t)
    }

    /// Layer normalization with learned per-column gain and bias.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(self.shape(gain), (1, c), "layer_norm gain shape");
        assert_eq!(self.shape(bias), (1, c), "layer_norm bias shape");
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut z = vec![0.0; r * c];
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for ((src, zr), or) in self.value(a).chunks(c).zip(z.chunks_mut(c)).zip(out.chunks_mut(c)) {
            let mean = src.iter().sum::<f64>() / c as f64;
            let var = src.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / libm::sqrt(var + NORM_EPS);
            for k in 0..c {
                zr[k] = (src[k] - mean) * is;
                or[k] = zr[k] * gv[k] + bv[k];
            }
            inv_std.push(is);
        }
        let t = self.tracked(a) || self.tracked(gain) || self.tracked(bias);
        self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                a,
                gain,
                bias,
                inv_std,
                z,
            },
            t,
        )
    }

    /// FiLM modulation `x * (1 + scale) + shift`; `mods` is the `1 x 2c` row `[scale || shift]`.
    pub fn film(&mut self, x: Var, mods: Var) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(mods), (1, 2 * c), "film modulation shape");
        let (scale, shift) = self.value(mods).split_at(c);
        let mut out = Vec::with_capacity(r * c);
        for row in self.value(x).chunks(c) {
            out.extend(row.iter().zip(scale).zip(shift).map(|((v, s), b)| v * (1.0 + s) + b));
        }
        let t = self.tracked(x) || self.tracked(mods);
        self.push(r, c, out, Op::Film(x, mods), t)
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        let (r, c) = self.shape(parts[0]);
        let mut out = self.value(parts[0]).to_vec();
        for &p in &parts[1..] {
            assert_eq!(self.shape(p), (r, c), "add_n shape");
            out.iter_mut().zip(self.value(p)).for_each(|(o, x)| *o += x);
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        self.push(r, c, out, Op::AddN(parts.to_vec()), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let mut out = vec![0.0; r * c];
        for (src, dst) in self.value(a).chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(src, dst);
        }
        let t = self.tracked(a);
        self.push(r, c, out, Op::SoftmaxRows(a), t)
    }

    /// Softmax down each column within consecutive blocks of `group` rows.
    pub fn softmax_groups(&mut self, a: Var, group: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(group > 0 && r % group == 0, "rows must split into groups");
        let x = self.value(a);
        let mut out = vec![0.0; r * c];
        for g0 in (0..r).step_by(group) {
            for col in 0..c {
                let m = (g0..g0 + group).map(|i| x[i * c + col]).fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for i in g0..g0 + group {
                    let e = libm::exp(x[i * c + col] - m);
                    out[i * c + col] = e;
                    s += e;
                }
                for i in g0..g0 + group {
                    out[i * c + col] /= s;
                }
            }
        }
        let t = self.tracked(a);
        self.push(r, c, out, Op::SoftmaxGroups(a, group), t)
    }

    /// Row `k` of the result is row `idx[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let (r, c) = self.shape(a);
        let src = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in &idx {
            assert!(i < r, "gather index out of range");
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let t = self.tracked(a);
        self.push(idx.len(), c, out, Op::Gather(a, idx), t)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = self.shape(a);
        assert!(start + len <= c, "slice out of range");
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let t = self.tracked(a);
        self.push(r, len, out, Op::SliceCols(a, start), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, r, "concat row mismatch");
                self.shape(p).1
            })
            .collect();
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let t = parts.iter().any(|&p| self.tracked(p));
        self.push(r, c, out, Op::ConcatCols(parts.to_vec()), t)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape size");
        let out = self.value(a).to_vec();
        let t = self.tracked(a);
        self.push(rows, cols, out, Op::Reshape(a), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let t = self.tracked(a);
        self.push(1, 1, vec![s], Op::Sum(a), t)
    }

    /// Summed softmax cross-entropy of each row against a class index.
    pub fn softmax_xent(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let (r, c) = self.shape(logits);
        assert_eq!(targets.len(), r, "one target per row");
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for ((src, dst), &tgt) in self.value(logits).chunks(c).zip(probs.chunks_mut(c)).zip(&targets) {
            let m = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(src.iter().map(|x| libm::exp(x - m)).sum::<f64>());
            loss += lse - src[tgt];
            softmax_row(src, dst);
        }
        let t = self.tracked(logits);
        self.push(1, 1, vec![loss], Op::SoftmaxXent(logits, targets, probs), t)
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let x = self.value(logits);
        assert_eq!(targets.len(), x.len(), "one target per logit");
        let total: f64 = x
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + libm::log1p(libm::exp(-x.abs())))
            .sum();
        let loss = total / x.len() as f64;
        let t = self.tracked(logits);
        self.push(1, 1, vec![loss], Op::BceLogits(logits, targets), t)
    }

    /// Reverse pass from a `1 x 1` output. Only leaf gradients are kept.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);
        let mut pool: Vec<Vec<f64>> = Vec::new();
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads, &mut pool);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            } else {
                pool.push(g);
            }
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>], pool: &mut Vec<Vec<f64>>) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].tracked {
                return;
            }
            let n = &self.nodes[v.0];
            let buf = grads[v.0].get_or_insert_with(|| {
                let mut b = pool.pop().unwrap_or_default();
                b.clear();
                b.resize(n.rows * n.cols, 0.0);
                b
            });
            f(buf);
        };
        let out = node.value.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.shape(*a);
                let c = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| matmul_t(g, r, c, bv, k, ga));
                acc(*b, &mut |gb| t_matmul(av, r, k, g, c, gb));
            }
            Op::MatMulT(a, b) => {
                let (r, k) = self.shape(*a);
                let c = node.cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| matmul(g, r, c, bv, k, ga));
                acc(*b, &mut |gb| t_matmul(g, r, c, av, k, gb));
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |gv| gv.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(a, row) => {
                let c = node.cols;
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*row, &mut |gr| {
                    for chunk in g.chunks(c) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                acc(*a, &mut |ga| {
                    for ((x, gy), bb) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gy * bb;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((x, gy), aa) in gb.iter_mut().zip(g).zip(av) {
                        *x += gy * aa;
                    }
                });
            }
            Op::MulRow(a, row) => {
                let c = node.cols;
                let (av, rv) = (self.value(*a), self.value(*row));
                acc(*a, &mut |ga| {
                    for (k, (x, gy)) in ga.iter_mut().zip(g).enumerate() {
                        *x += gy * rv[k % c];
                    }
                });
                acc(*row, &mut |gr| {
                    for (k, (gy, aa)) in g.iter().zip(av).enumerate() {
                        gr[k % c] += gy * aa;
                    }
                });
            }
            Op::Scale(a, s) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                acc(*a, &mut |ga| {
                    for ((x, gy), &inp) in ga.iter_mut().zip(g).zip(av) {
                        if inp > 0.0 {
                            *x += gy;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                acc(*a, &mut |ga| {
                    for ((x, gy), &y) in ga.iter_mut().zip(g).zip(out) {
                        *x += gy * y * (1.0 - y);
                    }
                });
            }
            Op::Normalize(a, inv_std) => {
                let c = node.cols;
                acc(*a, &mut |ga| {
                    for (row, is) in inv_std.iter().enumerate() {
                        let gy = &g[row * c..(row + 1) * c];
                        let z = &out[row * c..(row + 1) * c];
                        let mean_g = gy.iter().sum::<f64>() / c as f64;
                        let mean_gz = gy.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for k in 0..c {
                            ga[row * c + k] += is * (gy[k] - mean_g - z[k] * mean_gz);
                        }
                    }
                });
            }
            Op::LayerNorm {
                a,
                gain,
                bias,
                inv_std,
                z,
            } => {
                let c = node.cols;
                let gv = self.value(*gain);
                acc(*a, &mut |ga| {
                    let mut gz = vec![0.0; c];
                    for (row, is) in inv_std.iter().enumerate() {
                        let gy = &g[row * c..(row + 1) * c];
                        let zr = &z[row * c..(row + 1) * c];
                        gz.iter_mut().zip(gy).zip(gv).for_each(|((d, y), w)| *d = y * w);
                        let mean_g = gz.iter().sum::<f64>() / c as f64;
                        let mean_gz = gz.iter().zip(zr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                        for k in 0..c {
                            ga[row * c + k] += is * (gz[k] - mean_g - zr[k] * mean_gz);
                        }
                    }
                });
                acc(*gain, &mut |gg| {
                    for (gy, zr) in g.chunks(c).zip(z.chunks(c)) {
                        gg.iter_mut().zip(gy).zip(zr).for_each(|((d, y), zz)| *d += y * zz);
                    }
                });
                acc(*bias, &mut |gb| {
                    for gy in g.chunks(c) {
                        gb.iter_mut().zip(gy).for_each(|(d, y)| *d += y);
                    }
                });
            }
            Op::Film(x, mods) => {
                let c = node.cols;
                let (xv, mv) = (self.value(*x), self.value(*mods));
                acc(*x, &mut |gx| {
                    for (gxr, gy) in gx.chunks_mut(c).zip(g.chunks(c)) {
                        gxr.iter_mut().zip(gy).zip(&mv[..c]).for_each(|((d, y), s)| *d += y * (1.0 + s));
                    }
                });
                acc(*mods, &mut |gm| {
                    let (gs, gb) = gm.split_at_mut(c);
                    for (gy, xr) in g.chunks(c).zip(xv.chunks(c)) {
                        gs.iter_mut().zip(gy).zip(xr).for_each(|((d, y), xx)| *d += y * xx);
                        gb.iter_mut().zip(gy).for_each(|(d, y)| *d += y);
                    }
                });
            }
            Op::AddN(parts) => {
                for &p in parts {
                    acc(p, &mut |gp| gp.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::SoftmaxRows(a) => {
                let c = node.cols;
                acc(*a, &mut |ga| {
                    for ((gx, gy), y) in ga.chunks_mut(c).zip(g.chunks(c)).zip(out.chunks(c)) {
                        let dot: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            gx[k] += y[k] * (gy[k] - dot);
                        }
                    }
                });
            }
            Op::SoftmaxGroups(a, group) => {
                let (r, c, group) = (node.rows, node.cols, *group);
                acc(*a, &mut |ga| {
                    for g0 in (0..r).step_by(group) {
                        for col in 0..c {
                            let dot: f64 = (g0..g0 + group).map(|i| g[i * c + col] * out[i * c + col]).sum();
                            for i in g0..g0 + group {
                                ga[i * c + col] += out[i * c + col] * (g[i * c + col] - dot);
                            }
                        }
                    }
                });
            }
            Op::Gather(a, idx) => {
                let c = node.cols;
                acc(*a, &mut |ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        let src = &g[k * c..(k + 1) * c];
                        ga[i * c..(i + 1) * c].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let (start, len) = (*start, node.cols);
                let c = self.shape(*a).1;
                acc(*a, &mut |ga| {
                    for (row, chunk) in g.chunks(len).enumerate() {
                        ga[row * c + start..row * c + start + len]
                            .iter_mut()
                            .zip(chunk)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let c = node.cols;
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, &mut |gp| {
                        for (row, chunk) in g.chunks(c).enumerate() {
                            gp[row * w..(row + 1) * w]
                                .iter_mut()
                                .zip(&chunk[offset..offset + w])
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(a) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sum(a) => {
                let s = g[0];
                acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += s));
            }
            Op::SoftmaxXent(a, targets, probs) => {
                let c = self.shape(*a).1;
                let s = g[0];
                acc(*a, &mut |ga| {
                    for (row, &tgt) in targets.iter().enumerate() {
                        for k in 0..c {
                            let y = f64::from(u8::from(k == tgt));
                            ga[row * c + k] += s * (probs[row * c + k] - y);
                        }
                    }
                });
            }
            Op::BceLogits(a, targets) => {
                let x = self.value(*a);
                let s = g[0] / x.len() as f64;
                acc(*a, &mut |ga| {
                    for ((gx, &xv), &y) in ga.iter_mut().zip(x).zip(targets) {
                        *gx += s * (sigmoid(xv) - y);
                    }
                });
            }
        }
    }
}
