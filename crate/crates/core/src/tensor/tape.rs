use super::kernels::{self, gemm};
use super::{axis_layout, softmax_along, Result, Tensor, TensorError, CE_EPS};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    MatMulNt { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add(usize, usize),
    AddRow { x: usize, bias: usize },
    AddConst(usize),
    Mul(usize, usize),
    Scale(usize, f64),
    OneMinus(usize),
    Relu(usize),
    Sigmoid(usize),
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, mean: Vec<f64>, rstd: Vec<f64> },
    Gather { table: usize, ids: Vec<usize> },
    SliceCols { x: usize, start: usize },
    ConcatCols(Vec<usize>),
    Transpose(usize),
    RowScale { x: usize, s: usize },
    PadCols { x: usize },
    ScatterAdd { base: usize, positions: Vec<usize>, weights: usize },
    Sum(usize),
    Mean(usize),
    Nll { p: usize, targets: Vec<usize> },
}

/// Records operations in execution order and replays them backward.
///
/// Inputs always precede outputs, so a single reverse sweep over the node
/// list is a valid topological order. Nodes whose inputs never require a
/// gradient are skipped during the sweep.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn acc(dst: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    dst.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Gradient of the last backward pass with respect to `v`. Leaves that
    /// require a gradient but were disconnected from the loss read as zeros.
    pub fn grad(&self, v: Var) -> Option<Vec<f64>> {
        match &self.grads[v.0] {
            Some(g) => Some(g.clone()),
            None if self.needs_grad[v.0] && self.consumed => {
                Some(vec![0.0; self.values[v.0].numel()])
            }
            None => None,
        }
    }

    /// Clears accumulated gradients so that `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.consumed = false;
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.needs_grad[i])
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.values[v.0].shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(shape_err(op, s, &[0, 0])),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul")?;
        let (k2, n) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.values[a.0].data(), self.values[b.0].data(), m, k, n);
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul { a: a.0, b: b.0, m, k, n },
            ng,
        ))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul_nt")?;
        let (n, k2) = self.mat(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul_nt(self.values[a.0].data(), self.values[b.0].data(), m, k, n);
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMulNt { a: a.0, b: b.0, m, k, n },
            ng,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(t, Op::Add(a.0, b.0), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.values[a.0]
            .data()
            .iter()
            .zip(self.values[b.0].data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.ng(&[a.0, b.0]);
        Ok(self.push(t, Op::Mul(a.0, b.0), ng))
    }

    /// Adds a rank-1 `bias` of length `cols` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.values[x.0].dims2();
        if self.values[bias.0].numel() != cols {
            return Err(shape_err("add_row", self.shape(x), self.shape(bias)));
        }
        let mut data = self.values[x.0].data().to_vec();
        kernels::add_row(&mut data, self.values[bias.0].data());
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.ng(&[x.0, bias.0]);
        Ok(self.push(t, Op::AddRow { x: x.0, bias: bias.0 }, ng))
    }

    /// `x + c` for a constant `c` of identical shape (used for additive masks).
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        if self.shape(x) != c.shape() {
            return Err(shape_err("add_const", self.shape(x), c.shape()));
        }
        let data = self.values[x.0]
            .data()
            .iter()
            .zip(c.data())
            .map(|(a, b)| a + b)
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.ng(&[x.0]);
        Ok(self.push(t, Op::AddConst(x.0), ng))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = &self.values[x.0];
        let t = Tensor {
            shape: src.shape().to_vec(),
            data: src.data().iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        };
        let ng = self.ng(&[x.0]);
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x.0, c))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 - v, Op::OneMinus(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x.0))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (outer, len, inner) = axis_layout(self.shape(x), axis)?;
        let out = softmax_along(self.values[x.0].data(), self.shape(x), axis)?;
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(&[x.0]);
        Ok(self.push(t, Op::Softmax { x: x.0, outer, len, inner }, ng))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let axis = self.shape(x).len().saturating_sub(1);
        self.softmax(x, axis)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (_, cols) = self.values[x.0].dims2();
        if self.values[gamma.0].numel() != cols || self.values[beta.0].numel() != cols {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (out, mean, rstd) = kernels::layer_norm_rows(
            self.values[x.0].data(),
            self.values[gamma.0].data(),
            self.values[beta.0].data(),
            cols,
        );
        let t = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            t,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, mean, rstd },
            ng,
        ))
    }

    /// Selects rows of a `[rows×cols]` table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.mat(table, "gather_rows")?;
        let src = self.values[table.0].data();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index { op: "gather_rows", index: id, len: rows });
            }
            data.extend_from_slice(&src[id * cols..(id + 1) * cols]);
        }
        let t = Tensor::new(vec![ids.len(), cols], data)?;
        let ng = self.ng(&[table.0]);
        Ok(self.push(t, Op::Gather { table: table.0, ids: ids.to_vec() }, ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.mat(x, "slice_cols")?;
        if start + len > cols {
            return Err(TensorError::Index { op: "slice_cols", index: start + len, len: cols });
        }
        let src = self.values[x.0].data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let t = Tensor::new(vec![rows, len], data)?;
        let ng = self.ng(&[x.0]);
        Ok(self.push(t, Op::SliceCols { x: x.0, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.mat(p, "concat_cols")?.0,
            None => return Err(shape_err("concat_cols", &[], &[])),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.mat(p, "concat_cols")?;
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.values[p.0].data()[r * w..(r + 1) * w]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let t = Tensor::new(vec![rows, total], data)?;
        let ng = self.ng(&ids);
        Ok(self.push(t, Op::ConcatCols(ids), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.mat(x, "transpose")?;
        let src = self.values[x.0].data();
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = src[r * cols + c];
            }
        }
        let t = Tensor::new(vec![cols, rows], data)?;
        let ng = self.ng(&[x.0]);
        Ok(self.push(t, Op::Transpose(x.0), ng))
    }

    /// Multiplies row `r` of `x: [m×n]` by `s[r]` where `s` has `m` elements.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (rows, cols) = self.values[x.0].dims2();
        if self.values[s.0].numel() != rows {
            return Err(shape_err("row_scale", self.shape(x), self.shape(s)));
        }
        let sv = self.values[s.0].data();
        let data = self.values[x.0]
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v * sv[i / cols.max(1)])
            .collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        let ng = self.ng(&[x.0, s.0]);
        Ok(self.push(t, Op::RowScale { x: x.0, s: s.0 }, ng))
    }

    /// Right-pads every row of `x` with zeros up to `width` columns.
    pub fn pad_cols(&mut self, x: Var, width: usize) -> Result<Var> {
        let (rows, cols) = self.values[x.0].dims2();
        if width < cols {
            return Err(shape_err("pad_cols", self.shape(x), &[rows, width]));
        }
        let mut data = vec![0.0; rows * width];
        let src = self.values[x.0].data();
        for r in 0..rows {
            data[r * width..r * width + cols].copy_from_slice(&src[r * cols..(r + 1) * cols]);
        }
        let shape = if self.shape(x).len() == 1 { vec![width] } else { vec![rows, width] };
        let t = Tensor::new(shape, data)?;
        let ng = self.ng(&[x.0]);
        Ok(self.push(t, Op::PadCols { x: x.0 }, ng))
    }

    /// Row-wise scatter-add: `out[r, positions[j]] += weights[r, j]`.
    ///
    /// A rank-1 `base` with rank-1 `weights` is the single-row case.
    pub fn scatter_add(&mut self, base: Var, positions: &[usize], weights: Var) -> Result<Var> {
        let (rows, width) = self.values[base.0].dims2();
        let (wrows, wcols) = self.values[weights.0].dims2();
        if wrows != rows || wcols != positions.len() {
            return Err(shape_err("scatter_add", self.shape(base), self.shape(weights)));
        }
        if let Some(&bad) = positions.iter().find(|&&p| p >= width) {
            return Err(TensorError::Index { op: "scatter_add", index: bad, len: width });
        }
        let mut data = self.values[base.0].data().to_vec();
        let w = self.values[weights.0].data();
        for r in 0..rows {
            for (j, &p) in positions.iter().enumerate() {
                data[r * width + p] += w[r * wcols + j];
            }
        }
        let t = Tensor::new(self.shape(base).to_vec(), data)?;
        let ng = self.ng(&[base.0, weights.0]);
        Ok(self.push(
            t,
            Op::ScatterAdd { base: base.0, positions: positions.to_vec(), weights: weights.0 },
            ng,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values[x.0].data().iter().sum();
        let ng = self.ng(&[x.0]);
        self.push(Tensor::scalar(s), Op::Sum(x.0), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.values[x.0].data();
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.ng(&[x.0]);
        self.push(Tensor::scalar(s), Op::Mean(x.0), ng)
    }

    /// Mean over rows of `-ln(max(p[r, targets[r]], ε))`.
    pub fn nll_rows(&mut self, p: Var, targets: &[usize]) -> Result<Var> {
        let (rows, cols) = self.values[p.0].dims2();
        if targets.len() != rows {
            return Err(shape_err("nll_rows", self.shape(p), &[targets.len()]));
        }
        let data = self.values[p.0].data();
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= cols {
                return Err(TensorError::Index { op: "nll_rows", index: t, len: cols });
            }
            total -= data[r * cols + t].max(CE_EPS).ln();
        }
        let ng = self.ng(&[p.0]);
        Ok(self.push(
            Tensor::scalar(total / rows.max(1) as f64),
            Op::Nll { p: p.0, targets: targets.to_vec() },
            ng,
        ))
    }

    /// Cross-entropy of a single distribution against one target id.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var> {
        self.nll_rows(p, &[target])
    }

    /// Propagates `d loss / d node` to every node that needs a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::BackwardTwice);
        }
        if self.values[loss.0].numel() != 1 {
            return Err(TensorError::NotScalar(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, &g);
            if matches!(self.ops[i], Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        let Self { values, ops, needs_grad, grads, .. } = self;
        let val = |j: usize| values[j].data();
        let want = |j: usize| needs_grad[j];
        match &ops[i] {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if want(a) {
                    let da = acc(&mut grads[a], m * k);
                    gemm(g, false, val(b), true, da, m, n, k, 1.0);
                }
                if want(b) {
                    let db = acc(&mut grads[b], k * n);
                    gemm(val(a), true, g, false, db, k, m, n, 1.0);
                }
            }
            &Op::MatMulNt { a, b, m, k, n } => {
                if want(a) {
                    let da = acc(&mut grads[a], m * k);
                    gemm(g, false, val(b), false, da, m, n, k, 1.0);
                }
                if want(b) {
                    let db = acc(&mut grads[b], n * k);
                    gemm(g, true, val(a), false, db, n, m, k, 1.0);
                }
            }
            &Op::Add(a, b) => {
                for j in [a, b] {
                    if want(j) {
                        let d = acc(&mut grads[j], g.len());
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                    }
                }
            }
            &Op::AddRow { x, bias } => {
                if want(x) {
                    let d = acc(&mut grads[x], g.len());
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if want(bias) {
                    let cols = values[bias].numel();
                    let d = acc(&mut grads[bias], cols);
                    for row in g.chunks(cols) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                }
            }
            &Op::AddConst(x) => {
                let d = acc(&mut grads[x], g.len());
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            &Op::Mul(a, b) => {
                if want(a) {
                    let (bv, d) = (val(b), acc(&mut grads[a], g.len()));
                    for j in 0..g.len() {
                        d[j] += g[j] * bv[j];
                    }
                }
                if want(b) {
                    let (av, d) = (values[a].data(), acc(&mut grads[b], g.len()));
                    for j in 0..g.len() {
                        d[j] += g[j] * av[j];
                    }
                }
            }
            &Op::Scale(x, c) => {
                let d = acc(&mut grads[x], g.len());
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g * c);
            }
            &Op::OneMinus(x) => {
                let d = acc(&mut grads[x], g.len());
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
            }
            &Op::Relu(x) => {
                let (xv, d) = (values[x].data(), acc(&mut grads[x], g.len()));
                for j in 0..g.len() {
                    if xv[j] > 0.0 {
                        d[j] += g[j];
                    }
                }
            }
            &Op::Sigmoid(x) => {
                let (y, d) = (values[i].data(), acc(&mut grads[x], g.len()));
                for j in 0..g.len() {
                    d[j] += g[j] * y[j] * (1.0 - y[j]);
                }
            }
            &Op::Softmax { x, outer, len, inner } => {
                let (y, d) = (values[i].data(), acc(&mut grads[x], g.len()));
                for o in 0..outer {
                    for c in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + c;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            d[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, mean, rstd } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let cols = values[gamma].numel();
                let xv = values[x].data();
                let gv = values[gamma].data();
                let rows = mean.len();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let off = r * cols;
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..cols {
                        let xh = (xv[off + j] - mean[r]) * rstd[r];
                        let dxh = g[off + j] * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        dgamma[j] += g[off + j] * xh;
                        dbeta[j] += g[off + j];
                    }
                    let n = cols as f64;
                    for j in 0..cols {
                        let xh = (xv[off + j] - mean[r]) * rstd[r];
                        let dxh = g[off + j] * gv[j];
                        dx[off + j] = rstd[r] * (dxh - sum_dxh / n - xh * sum_dxh_xh / n);
                    }
                }
                for (j, src) in [(x, dx), (gamma, dgamma), (beta, dbeta)] {
                    if needs_grad[j] {
                        let d = acc(&mut grads[j], src.len());
                        d.iter_mut().zip(&src).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let cols = values[table].dims2().1;
                let d = acc(&mut grads[table], values[table].numel());
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        d[id * cols + c] += g[r * cols + c];
                    }
                }
            }
            &Op::SliceCols { x, start } => {
                let cols = values[x].dims2().1;
                let len = values[i].dims2().1;
                let d = acc(&mut grads[x], values[x].numel());
                for (r, row) in g.chunks(len.max(1)).enumerate() {
                    for (c, v) in row.iter().enumerate() {
                        d[r * cols + start + c] += v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = values[i].dims2().1;
                let mut off = 0;
                for &p in parts {
                    let w = values[p].dims2().1;
                    if needs_grad[p] {
                        let d = acc(&mut grads[p], values[p].numel());
                        for (r, row) in g.chunks(total).enumerate() {
                            for c in 0..w {
                                d[r * w + c] += row[off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            &Op::Transpose(x) => {
                let (rows, cols) = values[x].dims2();
                let d = acc(&mut grads[x], rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            }
            &Op::RowScale { x, s } => {
                let (rows, cols) = values[x].dims2();
                if needs_grad[x] {
                    let sv = values[s].data();
                    let d = acc(&mut grads[x], rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            d[r * cols + c] += g[r * cols + c] * sv[r];
                        }
                    }
                }
                if needs_grad[s] {
                    let xv = values[x].data();
                    let d = acc(&mut grads[s], rows);
                    for r in 0..rows {
                        d[r] += (0..cols).map(|c| g[r * cols + c] * xv[r * cols + c]).sum::<f64>();
                    }
                }
            }
            &Op::PadCols { x } => {
                let (rows, cols) = values[x].dims2();
                let width = values[i].dims2().1;
                let d = acc(&mut grads[x], rows * cols);
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[r * width + c];
                    }
                }
            }
            Op::ScatterAdd { base, positions, weights } => {
                let (base, weights) = (*base, *weights);
                let width = values[base].dims2().1;
                if needs_grad[base] {
                    let d = acc(&mut grads[base], g.len());
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if needs_grad[weights] {
                    let (rows, wcols) = values[weights].dims2();
                    let d = acc(&mut grads[weights], rows * wcols);
                    for r in 0..rows {
                        for (j, &p) in positions.iter().enumerate() {
                            d[r * wcols + j] += g[r * width + p];
                        }
                    }
                }
            }
            &Op::Sum(x) => {
                let d = acc(&mut grads[x], values[x].numel());
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            &Op::Mean(x) => {
                let n = values[x].numel();
                let d = acc(&mut grads[x], n);
                d.iter_mut().for_each(|d| *d += g[0] / n as f64);
            }
            Op::Nll { p, targets } => {
                let p = *p;
                let (rows, cols) = values[p].dims2();
                let pv = values[p].data();
                let d = acc(&mut grads[p], rows * cols);
                for (r, &t) in targets.iter().enumerate() {
                    let v = pv[r * cols + t];
                    if v > CE_EPS {
                        d[r * cols + t] -= g[0] / (v * rows as f64);
                    }
                }
            }
        }
    }
}
