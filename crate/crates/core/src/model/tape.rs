//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! Every forward pass records its operations on a [`Tape`]; `backward`
//! replays them in reverse and accumulates parameter gradients into a flat
//! buffer laid out like [`super::ModelParameters::values`].

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            rows * cols,
            data.len(),
            "shape {rows}x{cols} vs {} values",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scalar(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}

/// `c = a' * b' + beta * c`, where `a'` is `m x k` (stored transposed when
/// `a_t`), `b'` is `k x n` (stored transposed when `b_t`) and `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
pub const BCE_CLAMP: f64 = 1e-7;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug)]
enum Op {
    Leaf,
    Param {
        offset: usize,
    },
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Cols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    Row {
        x: Var,
        row: usize,
    },
    Cosine {
        a: Var,
        b: Var,
        na: f64,
        nb: f64,
    },
    Sigmoid(Var),
    Alignment {
        cos: Var,
        label: f64,
        margin: f64,
    },
    Bce {
        score: Var,
        label: f64,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// A parameter tensor whose gradient lands at `offset` in the flat buffer.
    pub fn param(&mut self, m: Mat, offset: usize) -> Var {
        self.push(m, Op::Param { offset }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.cols, bv.rows,
            "matmul {}x{} * {}x{}",
            av.rows, av.cols, bv.rows, bv.cols
        );
        let mut out = Mat::zeros(av.rows, bv.cols);
        gemm(
            av.rows,
            av.cols,
            bv.cols,
            &av.data,
            false,
            &bv.data,
            false,
            0.0,
            &mut out.data,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols);
        let mut out = Mat::zeros(av.rows, bv.rows);
        gemm(
            av.rows,
            av.cols,
            bv.rows,
            &av.data,
            false,
            &bv.data,
            true,
            0.0,
            &mut out.data,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols));
        let mut out = av.clone();
        add_into(&mut out.data, &bv.data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows, 1);
        assert_eq!(av.cols, bv.cols);
        let mut out = av.clone();
        for r in 0..out.rows {
            add_into(out.row_mut(r), &bv.data);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::AddRow(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    /// Row-wise layer normalisation with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut out = Mat::zeros(rows, cols);
        let mut xhat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. Columns with `key_mask[c] == false` get exactly zero
    /// weight.
    pub fn softmax_rows(&mut self, x: Var, key_mask: Option<&[bool]>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        if let Some(m) = key_mask {
            assert_eq!(m.len(), cols);
        }
        let keep = |c: usize| key_mask.map_or(true, |m| m[c]);
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let max = (0..cols)
                .filter(|&c| keep(c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                continue;
            }
            let mut total = 0.0;
            let o = out.row_mut(r);
            for c in 0..cols {
                if keep(c) {
                    o[c] = (row[c] - max).exp();
                    total += o[c];
                }
            }
            o.iter_mut().for_each(|v| *v /= total);
        }
        let ng = self.ng(x);
        self.push(out, Op::Softmax(x), ng)
    }

    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols);
        let mut out = Mat::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.ng(x);
        self.push(out, Op::Cols { x, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Mat::zeros(rows, cols);
        let mut at = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows);
            for r in 0..rows {
                out.data[r * cols + at..r * cols + at + pv.cols].copy_from_slice(pv.row(r));
            }
            at += pv.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols);
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            ng,
        )
    }

    /// Embedding lookup.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let tv = self.value(table);
        let mut out = Mat::zeros(idx.len(), tv.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(tv.row(i));
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    pub fn row(&mut self, x: Var, row: usize) -> Var {
        let xv = self.value(x);
        let out = Mat::from_vec(1, xv.cols, xv.row(row).to_vec());
        let ng = self.ng(x);
        self.push(out, Op::Row { x, row }, ng)
    }

    /// Cosine similarity of two `1 x n` rows; 0 (with zero gradient) when
    /// either has zero norm. The flag reports that degenerate case.
    pub fn cosine(&mut self, a: Var, b: Var) -> (Var, bool) {
        let (av, bv) = (&self.value(a).data, &self.value(b).data);
        assert_eq!(av.len(), bv.len());
        let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        let na = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = bv.iter().map(|x| x * x).sum::<f64>().sqrt();
        let degenerate = !(na > 0.0 && nb > 0.0);
        let c = if degenerate { 0.0 } else { dot / (na * nb) };
        let ng = self.ng(a) || self.ng(b);
        (
            self.push(
                Mat::from_vec(1, 1, vec![c]),
                Op::Cosine { a, b, na, nb },
                ng,
            ),
            degenerate,
        )
    }

    /// `y (1 - cos) + (1 - y) max(0, cos - margin)`
    pub fn alignment(&mut self, cos: Var, label: f64, margin: f64) -> Var {
        let c = self.value(cos).scalar();
        let v = label * (1.0 - c) + (1.0 - label) * (c - margin).max(0.0);
        let ng = self.ng(cos);
        self.push(
            Mat::from_vec(1, 1, vec![v]),
            Op::Alignment { cos, label, margin },
            ng,
        )
    }

    /// Binary cross-entropy of a probability, clamped `BCE_CLAMP` away from 0 and 1.
    pub fn bce(&mut self, score: Var, label: f64) -> Var {
        let s = self.value(score).scalar().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let v = -(label * s.ln() + (1.0 - label) * (1.0 - s).ln());
        let ng = self.ng(score);
        self.push(Mat::from_vec(1, 1, vec![v]), Op::Bce { score, label }, ng)
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v: f64 = terms.iter().map(|&(t, w)| w * self.value(t).scalar()).sum();
        let ng = terms.iter().any(|&(t, _)| self.ng(t));
        self.push(
            Mat::from_vec(1, 1, vec![v]),
            Op::WeightedSum(terms.to_vec()),
            ng,
        )
    }

    /// Back-propagates from the scalar `loss` and adds parameter gradients
    /// into `grad_out`.
    pub fn backward(&self, loss: Var, grad_out: &mut [f64]) {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param { offset } => {
                    add_into(&mut grad_out[*offset..*offset + g.data.len()], &g.data);
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows, av.cols, bv.cols);
                    if self.ng(*a) {
                        let ga = self.grad_slot(&mut grads, *a);
                        gemm(m, n, k, &g.data, false, &bv.data, true, 1.0, &mut ga.data);
                    }
                    if self.ng(*b) {
                        let gb = self.grad_slot(&mut grads, *b);
                        gemm(k, m, n, &av.data, true, &g.data, false, 1.0, &mut gb.data);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.rows, av.cols, bv.rows);
                    if self.ng(*a) {
                        let ga = self.grad_slot(&mut grads, *a);
                        gemm(m, n, k, &g.data, false, &bv.data, false, 1.0, &mut ga.data);
                    }
                    if self.ng(*b) {
                        let gb = self.grad_slot(&mut grads, *b);
                        gemm(n, m, k, &g.data, true, &av.data, false, 1.0, &mut gb.data);
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if self.ng(*v) {
                            add_into(&mut self.grad_slot(&mut grads, *v).data, &g.data);
                        }
                    }
                }
                Op::AddRow(a, b) => {
                    if self.ng(*a) {
                        add_into(&mut self.grad_slot(&mut grads, *a).data, &g.data);
                    }
                    if self.ng(*b) {
                        let gb = self.grad_slot(&mut grads, *b);
                        for r in 0..g.rows {
                            add_into(&mut gb.data, g.row(r));
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = self.grad_slot(&mut grads, *a);
                    for (d, v) in ga.data.iter_mut().zip(&g.data) {
                        *d += s * v;
                    }
                }
                Op::Gelu(a) => {
                    let x = &self.value(*a).data;
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((d, v), xv) in ga.data.iter_mut().zip(&g.data).zip(x) {
                        *d += v * gelu_grad(*xv);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value.data;
                    let ga = self.grad_slot(&mut grads, *a);
                    for ((d, v), yv) in ga.data.iter_mut().zip(&g.data).zip(y) {
                        *d += v * yv * (1.0 - yv);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (rows, cols) = (g.rows, g.cols);
                    if self.ng(*gamma) {
                        let gg = self.grad_slot(&mut grads, *gamma);
                        for r in 0..rows {
                            for c in 0..cols {
                                gg.data[c] += g.data[r * cols + c] * xhat[r * cols + c];
                            }
                        }
                    }
                    if self.ng(*beta) {
                        let gb = self.grad_slot(&mut grads, *beta);
                        for r in 0..rows {
                            add_into(&mut gb.data, g.row(r));
                        }
                    }
                    if self.ng(*x) {
                        let gamma_v = self.value(*gamma).data.clone();
                        let gx = self.grad_slot(&mut grads, *x);
                        let n = cols as f64;
                        let mut dxhat = vec![0.0; cols];
                        for r in 0..rows {
                            let mut sum = 0.0;
                            let mut sum_xh = 0.0;
                            for c in 0..cols {
                                let d = g.data[r * cols + c] * gamma_v[c];
                                dxhat[c] = d;
                                sum += d;
                                sum_xh += d * xhat[r * cols + c];
                            }
                            let is = inv_std[r];
                            for c in 0..cols {
                                gx.data[r * cols + c] +=
                                    is / n * (n * dxhat[c] - sum - xhat[r * cols + c] * sum_xh);
                            }
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let gx = self.grad_slot(&mut grads, *x);
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let out = gx.row_mut(r);
                        for c in 0..y.cols {
                            out[c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::Cols { x, start } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    for r in 0..g.rows {
                        add_into(&mut gx.row_mut(r)[*start..*start + g.cols], g.row(r));
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let pc = self.value(*p).cols;
                        if self.ng(*p) {
                            let gp = self.grad_slot(&mut grads, *p);
                            for r in 0..g.rows {
                                add_into(gp.row_mut(r), &g.row(r)[at..at + pc]);
                            }
                        }
                        at += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let len = self.value(*p).data.len();
                        if self.ng(*p) {
                            let gp = self.grad_slot(&mut grads, *p);
                            add_into(&mut gp.data, &g.data[at..at + len]);
                        }
                        at += len;
                    }
                }
                Op::Gather { table, idx } => {
                    let gt = self.grad_slot(&mut grads, *table);
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(gt.row_mut(i), g.row(r));
                    }
                }
                Op::Row { x, row } => {
                    let gx = self.grad_slot(&mut grads, *x);
                    add_into(gx.row_mut(*row), &g.data);
                }
                Op::Cosine { a, b, na, nb } => {
                    if *na > 0.0 && *nb > 0.0 {
                        let c = node.value.scalar();
                        let up = g.scalar();
                        let av = self.value(*a).data.clone();
                        let bv = self.value(*b).data.clone();
                        if self.ng(*a) {
                            let ga = self.grad_slot(&mut grads, *a);
                            for ((d, x), y) in ga.data.iter_mut().zip(&av).zip(&bv) {
                                *d += up * (y / (na * nb) - c * x / (na * na));
                            }
                        }
                        if self.ng(*b) {
                            let gb = self.grad_slot(&mut grads, *b);
                            for ((d, x), y) in gb.data.iter_mut().zip(&av).zip(&bv) {
                                *d += up * (x / (na * nb) - c * y / (nb * nb));
                            }
                        }
                    }
                }
                Op::Alignment { cos, label, margin } => {
                    let c = self.value(*cos).scalar();
                    let hinge = if c > *margin { 1.0 } else { 0.0 };
                    let d = -label + (1.0 - label) * hinge;
                    self.grad_slot(&mut grads, *cos).data[0] += g.scalar() * d;
                }
                Op::Bce { score, label } => {
                    let s = self.value(*score).scalar();
                    let d = if s <= BCE_CLAMP || s >= 1.0 - BCE_CLAMP {
                        0.0
                    } else {
                        -label / s + (1.0 - label) / (1.0 - s)
                    };
                    self.grad_slot(&mut grads, *score).data[0] += g.scalar() * d;
                }
                Op::WeightedSum(terms) => {
                    for (t, w) in terms {
                        if self.ng(*t) {
                            self.grad_slot(&mut grads, *t).data[0] += g.scalar() * w;
                        }
                    }
                }
            }
        }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Mat>], v: Var) -> &'g mut Mat {
        let value = &self.nodes[v.0].value;
        grads[v.0].get_or_insert_with(|| Mat::zeros(value.rows, value.cols))
    }
}
