//! Reverse-mode tape over a fixed operation vocabulary.
//!
//! Nodes are appended in execution order, so the tape is already a
//! topological order and backward is a single reverse sweep. Parameters are
//! borrowed leaves; gradients accumulate additively per node.

use std::borrow::Cow;
use std::rc::Rc;

use rand::Rng;

use super::tensor::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Visibility pattern for [`Tape::softmax`].
#[derive(Debug, Clone, PartialEq)]
pub enum Mask {
    None,
    /// Row `i` sees columns `0..=i`.
    Causal,
    /// Row-major `true` = visible, same shape as the input.
    Visible(Vec<bool>),
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatMulNt { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { a: Var, rows: usize, cols: usize },
    Add { a: Var, b: Var },
    AddRow { a: Var, b: Var, cols: usize },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f64 },
    Relu { a: Var },
    Gelu { a: Var },
    Softmax { a: Var, cols: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, cols: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    Gather { table: Var, ids: Vec<usize>, cols: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64>, cols: usize, weight: f64 },
    Dropout { a: Var, mask: Vec<f64> },
    Rotary { a: Var, coeffs: Rc<Vec<[f64; 2]>> },
    SliceCols { a: Var, start: usize, width: usize, cols: usize },
    ConcatCols { parts: Vec<(Var, usize)>, cols: usize },
    Sum { a: Var },
    GroupDot { h: Var, c: Var, groups: usize, dim: usize },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients from one backward sweep, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => {
            let c = *shape.last().unwrap();
            (shape.iter().product::<usize>() / c, c)
        }
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf borrowing the tensor's storage.
    pub fn param(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(t.into_data()),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is valid")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(format!("{what}: expected a matrix, got {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul lhs")?;
        let (k2, n) = self.matrix(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul: [{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul_nt lhs")?;
        let (n, k2) = self.matrix(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul_nt: [{m},{k}] x [{n},{k2}]^T")));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMulNt { a, b, m, k, n }, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.matrix(a, "transpose")?;
        let x = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = x[r * cols + c];
            }
        }
        Ok(self.push(vec![cols, rows], out, Op::Transpose { a, rows, cols }, &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a, b }, &[a, b]))
    }

    /// Adds vector `b` to every row of matrix `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (_, cols) = self.matrix(a, "add_row")?;
        if self.shape(b) != [cols] {
            return Err(Error::dim(format!(
                "add_row: bias {:?} for {cols} columns",
                self.shape(b)
            )));
        }
        let bias = self.value(b);
        let out = self
            .value(a)
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(bias).map(|(x, y)| x + y))
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow { a, b, cols }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale { a, s }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        self.push(self.shape(a).to_vec(), out, Op::Relu { a }, &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        self.push(self.shape(a).to_vec(), out, Op::Gelu { a }, &[a])
    }

    /// Softmax over the last dimension. Masked entries are exactly zero.
    pub fn softmax(&mut self, a: Var, mask: &Mask) -> Result<Var> {
        let (rows, cols) = dims2(self.shape(a));
        if let Mask::Visible(v) = mask {
            if v.len() != rows * cols {
                return Err(Error::dim(format!(
                    "softmax mask has {} entries for {} values",
                    v.len(),
                    rows * cols
                )));
            }
        }
        let x = self.value(a);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let visible = |c: usize| match mask {
                Mask::None => true,
                Mask::Causal => c <= r,
                Mask::Visible(v) => v[r * cols + c],
            };
            let row = &x[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .filter(|&c| visible(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Domain(format!("softmax row {r} is fully masked")));
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut sum = 0.0;
            for c in (0..cols).filter(|&c| visible(c)) {
                o[c] = (row[c] - max).exp();
                sum += o[c];
            }
            for v in o.iter_mut() {
                *v /= sum;
            }
        }
        Ok(self.push(self.shape(a).to_vec(), out, Op::Softmax { a, cols }, &[a]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = dims2(self.shape(x));
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(Error::dim(format!(
                "layer_norm: gain {:?} / bias {:?} for {cols} features",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        let n = cols as f64;
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = g[c] * h + b[c];
            }
        }
        let op = Op::LayerNorm { x, gain, bias, cols, xhat, rstd };
        Ok(self.push(self.shape(x).to_vec(), out, op, &[x, gain, bias]))
    }

    /// Rows `ids` of a `[vocab, dim]` table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, cols) = self.matrix(table, "gather")?;
        if ids.is_empty() {
            return Err(Error::dim("gather: empty id list"));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index { index: id, len: vocab });
            }
            out.extend_from_slice(&t[id * cols..(id + 1) * cols]);
        }
        let op = Op::Gather { table, ids: ids.to_vec(), cols };
        Ok(self.push(vec![ids.len(), cols], out, op, &[table]))
    }

    /// Mean of `-log softmax(logits[r])[targets[r]]` over rows.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let weight = 1.0 / targets.len().max(1) as f64;
        self.cross_entropy_weighted(logits, targets, None, weight)
    }

    /// `weight * sum_r -log softmax(logits[r])[targets[r]]`, with an optional
    /// class removed from every normalizer.
    pub fn cross_entropy_weighted(
        &mut self,
        logits: Var,
        targets: &[usize],
        ignore_class: Option<usize>,
        weight: f64,
    ) -> Result<Var> {
        let (rows, cols) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != rows {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {rows} rows",
                targets.len()
            )));
        }
        let x = self.value(logits);
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(Error::Index { index: t, len: cols });
            }
            if Some(t) == ignore_class {
                return Err(Error::Domain(format!("cross_entropy: target {t} is the ignored class")));
            }
            let row = &x[r * cols..(r + 1) * cols];
            let p = &mut probs[r * cols..(r + 1) * cols];
            // Skip the ignored class by working on the slices around it.
            let cut = ignore_class.filter(|&c| c < cols);
            let (lo, hi) = match cut {
                Some(c) => (c, c + 1),
                None => (cols, cols),
            };
            let max = row[..lo]
                .iter()
                .chain(&row[hi..])
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            let (p_lo, p_rest) = p.split_at_mut(lo);
            let p_hi = &mut p_rest[hi - lo..];
            for (pv, &v) in p_lo.iter_mut().zip(&row[..lo]).chain(p_hi.iter_mut().zip(&row[hi..])) {
                *pv = (v - max).exp();
                sum += *pv;
            }
            let inv = 1.0 / sum;
            for v in p.iter_mut() {
                *v *= inv;
            }
            loss += max + sum.ln() - row[t];
        }
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
            cols,
            weight,
        };
        Ok(self.push(vec![1], vec![weight * loss], op, &[logits]))
    }

    /// Inverted dropout; `rate == 0` returns the input unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Dropout { a, mask }, &[a]))
    }

    /// Per-pair complex scaling `(re, im)` of each row; `coeffs` holds
    /// `rows * cols / 2` entries.
    pub fn rotary(&mut self, a: Var, coeffs: Rc<Vec<[f64; 2]>>) -> Result<Var> {
        let (rows, cols) = self.matrix(a, "rotary")?;
        if cols % 2 != 0 || coeffs.len() * 2 != rows * cols {
            return Err(Error::dim(format!(
                "rotary: {} coefficients for [{rows},{cols}]",
                coeffs.len()
            )));
        }
        let mut out = vec![0.0; rows * cols];
        for ((o, p), c) in out
            .chunks_exact_mut(2)
            .zip(self.value(a).chunks_exact(2))
            .zip(coeffs.iter())
        {
            o[0] = c[0] * p[0] - c[1] * p[1];
            o[1] = c[1] * p[0] + c[0] * p[1];
        }
        Ok(self.push(vec![rows, cols], out, Op::Rotary { a, coeffs }, &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.matrix(a, "slice_cols")?;
        if width == 0 || start + width > cols {
            return Err(Error::dim(format!(
                "slice_cols: [{start}, {}) of {cols} columns",
                start + width
            )));
        }
        let x = self.value(a);
        let out = (0..rows)
            .flat_map(|r| x[r * cols + start..r * cols + start + width].iter().copied())
            .collect();
        let op = Op::SliceCols { a, start, width, cols };
        Ok(self.push(vec![rows, width], out, op, &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::dim("concat_cols: no inputs"))?;
        let (rows, _) = self.matrix(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, w) = self.matrix(p, "concat_cols")?;
            if r != rows {
                return Err(Error::dim(format!("concat_cols: {r} rows vs {rows}")));
            }
            widths.push(w);
        }
        let cols: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let op = Op::ConcatCols {
            parts: parts.iter().copied().zip(widths).collect(),
            cols,
        };
        Ok(self.push(vec![rows, cols], out, op, parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![1], vec![s], Op::Sum { a }, &[a])
    }

    /// `out[p, j] = h[p] . c[p * groups + j]` for `h: [L, d]`, `c: [L * groups, d]`.
    pub fn group_dot(&mut self, h: Var, c: Var, groups: usize) -> Result<Var> {
        let (rows, dim) = self.matrix(h, "group_dot")?;
        let (crows, cdim) = self.matrix(c, "group_dot")?;
        if groups == 0 || crows != rows * groups || cdim != dim {
            return Err(Error::dim(format!(
                "group_dot: h [{rows},{dim}], c [{crows},{cdim}], groups {groups}"
            )));
        }
        let hv = self.value(h);
        let cv = self.value(c);
        let mut out = vec![0.0; rows * groups];
        for p in 0..rows {
            let hrow = &hv[p * dim..(p + 1) * dim];
            for j in 0..groups {
                let r = p * groups + j;
                out[r] = dot(hrow, &cv[r * dim..(r + 1) * dim]);
            }
        }
        Ok(self.push(vec![rows, groups], out, Op::GroupDot { h, c, groups, dim }, &[h, c]))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar output, got {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(vec![1.0]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'p>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        macro_rules! acc {
            ($v:expr) => {
                slot(nodes, grads, $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(ga) = acc!(a) {
                    matmul_nt_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = acc!(b) {
                    matmul_tn_acc(av, g, gb, m, k, n);
                }
            }
            &Op::MatMulNt { a, b, m, k, n } => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(ga) = acc!(a) {
                    matmul_acc(g, bv, ga, m, n, k);
                }
                if let Some(gb) = acc!(b) {
                    matmul_tn_acc(g, av, gb, m, n, k);
                }
            }
            &Op::Transpose { a, rows, cols } => {
                if let Some(ga) = acc!(a) {
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(gv) = acc!(v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::AddRow { a, b, cols } => {
                if let Some(ga) = acc!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = acc!(b) {
                    for row in g.chunks_exact(cols) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                }
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                if let Some(ga) = acc!(a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = acc!(b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            &Op::Scale { a, s } => {
                if let Some(ga) = acc!(a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            &Op::Relu { a } => {
                let av = self.value(a);
                if let Some(ga) = acc!(a) {
                    for ((x, gi), ai) in ga.iter_mut().zip(g).zip(av) {
                        if *ai > 0.0 {
                            *x += gi;
                        }
                    }
                }
            }
            &Op::Gelu { a } => {
                let av = self.value(a);
                if let Some(ga) = acc!(a) {
                    for ((x, gi), &xi) in ga.iter_mut().zip(g).zip(av) {
                        let t = (GELU_C * (xi + GELU_A * xi * xi * xi)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * xi * xi);
                        *x += gi * (0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * du);
                    }
                }
            }
            &Op::Softmax { a, cols } => {
                let y = &node.value;
                if let Some(ga) = acc!(a) {
                    for ((gar, yr), gr) in ga
                        .chunks_exact_mut(cols)
                        .zip(y.chunks_exact(cols))
                        .zip(g.chunks_exact(cols))
                    {
                        let s: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for ((x, yi), gi) in gar.iter_mut().zip(yr).zip(gr) {
                            *x += yi * (gi - s);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, cols, xhat, rstd } => {
                let cols = *cols;
                let gv = self.value(*gain);
                if let Some(gg) = acc!(*gain) {
                    for (gr, hr) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                        for c in 0..cols {
                            gg[c] += gr[c] * hr[c];
                        }
                    }
                }
                if let Some(gb) = acc!(*bias) {
                    for gr in g.chunks_exact(cols) {
                        gb.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                }
                if let Some(gx) = acc!(*x) {
                    let n = cols as f64;
                    for (r, ((gxr, gr), hr)) in gx
                        .chunks_exact_mut(cols)
                        .zip(g.chunks_exact(cols))
                        .zip(xhat.chunks_exact(cols))
                        .enumerate()
                    {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[c];
                        }
                        for c in 0..cols {
                            let dh = gr[c] * gv[c];
                            gxr[c] += rstd[r] / n * (n * dh - sum_dh - hr[c] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Gather { table, ids, cols } => {
                let cols = *cols;
                if let Some(gt) = acc!(*table) {
                    for (gr, &id) in g.chunks_exact(cols).zip(ids) {
                        gt[id * cols..(id + 1) * cols]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, cols, weight } => {
                let cols = *cols;
                let scale = g[0] * weight;
                if let Some(gl) = acc!(*logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        let gr = &mut gl[r * cols..(r + 1) * cols];
                        for (x, p) in gr.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                            *x += scale * p;
                        }
                        gr[t] -= scale;
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if let Some(ga) = acc!(*a) {
                    for ((x, gi), m) in ga.iter_mut().zip(g).zip(mask) {
                        *x += gi * m;
                    }
                }
            }
            Op::Rotary { a, coeffs } => {
                // Adjoint of a scaled rotation is the conjugate scaling.
                if let Some(ga) = acc!(*a) {
                    for ((x, gp), c) in ga.chunks_exact_mut(2).zip(g.chunks_exact(2)).zip(coeffs.iter()) {
                        x[0] += c[0] * gp[0] + c[1] * gp[1];
                        x[1] += -c[1] * gp[0] + c[0] * gp[1];
                    }
                }
            }
            &Op::SliceCols { a, start, width, cols } => {
                if let Some(ga) = acc!(a) {
                    for (r, gr) in g.chunks_exact(width).enumerate() {
                        ga[r * cols + start..r * cols + start + width]
                            .iter_mut()
                            .zip(gr)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::ConcatCols { parts, cols } => {
                let rows = g.len() / cols;
                let mut offset = 0;
                for &(p, w) in parts {
                    if let Some(gp) = acc!(p) {
                        for r in 0..rows {
                            gp[r * w..(r + 1) * w]
                                .iter_mut()
                                .zip(&g[r * cols + offset..r * cols + offset + w])
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += w;
                }
            }
            &Op::Sum { a } => {
                if let Some(ga) = acc!(a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            &Op::GroupDot { h, c, groups, dim } => {
                let (hv, cv) = (self.value(h), self.value(c));
                if let Some(gh) = acc!(h) {
                    for (r, &gi) in g.iter().enumerate() {
                        let p = r / groups;
                        for (x, cj) in gh[p * dim..(p + 1) * dim].iter_mut().zip(&cv[r * dim..(r + 1) * dim]) {
                            *x += gi * cj;
                        }
                    }
                }
                if let Some(gc) = acc!(c) {
                    for (r, &gi) in g.iter().enumerate() {
                        let p = r / groups;
                        for (x, hj) in gc[r * dim..(r + 1) * dim].iter_mut().zip(&hv[p * dim..(p + 1) * dim]) {
                            *x += gi * hj;
                        }
                    }
                }
            }
        }
    }
}

fn slot<'g>(nodes: &[Node<'_>], grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]))
}
