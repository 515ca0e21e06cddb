//! Reverse-mode differentiation over a tape of 2-D arrays.
//!
//! A [`Graph`] records every operation of one forward pass. Parameters enter
//! as borrowed leaves, so building a graph never copies model weights.
//! [`Graph::backward`] walks the tape in reverse and returns one gradient per
//! parameter of the store the graph was built against.

use std::borrow::Cow;

use ndarray::{s, Array2, Axis};

use super::params::{Gradients, ParamId, ParamStore};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// matrix plus a `1 x m` row broadcast over rows
    AddRow(Var, Var),
    /// matrix plus an `n x 1` column broadcast over columns
    AddCol(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Array2<f64>),
    Transpose(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ReplaceRows {
        x: Var,
        row: Var,
        rows: Vec<usize>,
    },
    MeanRows(Var),
    AvgPoolCols(Var, usize),
    /// `out.flat[i] = in.flat[map[i]]`
    Gather(Var, Vec<usize>),
    CrossEntropy {
        logits: Var,
        target: usize,
        probs: Array2<f64>,
    },
    MaskedMse {
        pred: Var,
        target: Array2<f64>,
        rows: Vec<usize>,
    },
}

struct Node<'p> {
    value: Cow<'p, Array2<f64>>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const K: f64 = 0.044_715;
    let u = C * (x + K * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x);
    (y, dy)
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
            param_vars: vec![None; store.len()],
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.value(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x m row");
        let out = self.value(a) + self.value(row);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn add_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.value(col).ncols(), 1, "add_col expects an n x 1 column");
        let out = self.value(a) + self.value(col);
        self.push(out, Op::AddCol(a, col))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        self.push(out, Op::Scale(a, s))
    }

    pub fn mul_const(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let out = self.value(a) * &mask;
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| gelu_parts(x).0);
        self.push(out, Op::Gelu(a))
    }

    /// Row-wise layer normalization with `1 x m` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let mut xhat = Array2::zeros((n, m));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * is;
            }
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row /= sum;
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Copy of `x` with each listed row replaced by the `1 x m` vector `row`.
    pub fn replace_rows(&mut self, x: Var, row: Var, rows: &[usize]) -> Var {
        let mut out = self.value(x).clone();
        let r = self.value(row).row(0).to_owned();
        for &i in rows {
            out.row_mut(i).assign(&r);
        }
        self.push(
            out,
            Op::ReplaceRows {
                x,
                row,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_axis(Axis(0)).expect("mean of empty matrix").insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// Non-overlapping average pooling along columns; trailing columns that do
    /// not fill a window are dropped.
    pub fn avg_pool_cols(&mut self, a: Var, p: usize) -> Var {
        let v = self.value(a);
        let (n, m) = v.dim();
        let h = m / p;
        let out = Array2::from_shape_fn((n, h), |(i, j)| {
            v.slice(s![i, j * p..(j + 1) * p]).sum() / p as f64
        });
        self.push(out, Op::AvgPoolCols(a, p))
    }

    /// Rearranges elements: `out.flat[i] = a.flat[map[i]]` with output shape `shape`.
    pub fn gather(&mut self, a: Var, map: Vec<usize>, shape: (usize, usize)) -> Var {
        let src = self.value(a);
        let flat = src.as_slice().map(Cow::Borrowed).unwrap_or_else(|| Cow::Owned(src.iter().copied().collect()));
        let data: Vec<f64> = map.iter().map(|&k| flat[k]).collect();
        let out = Array2::from_shape_vec(shape, data).expect("gather: shape and map length differ");
        self.push(out, Op::Gather(a, map))
    }

    /// `-log softmax(logits)[target]` for a `1 x K` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let row = self.value(logits).row(0).to_owned();
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - row[target];
        let probs = row.mapv(|v| (v - lse).exp()).insert_axis(Axis(0));
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                target,
                probs,
            },
        )
    }

    /// Mean over `rows` of the squared L2 distance to a fixed target; 0 when
    /// `rows` is empty. The target takes no gradient.
    pub fn masked_mse(&mut self, pred: Var, target: Array2<f64>, rows: &[usize]) -> Var {
        let p = self.value(pred);
        assert_eq!(p.dim(), target.dim(), "masked_mse: shapes differ");
        let loss = if rows.is_empty() {
            0.0
        } else {
            rows.iter()
                .map(|&i| {
                    p.row(i)
                        .iter()
                        .zip(target.row(i))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / rows.len() as f64
        };
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::MaskedMse {
                pred,
                target,
                rows: rows.to_vec(),
            },
        )
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));
        let mut out = Gradients::zeros_like(self.store);

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *a, g);
                }
                Op::AddCol(a, col) => {
                    acc(&mut grads, *col, g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g * *s),
                Op::MulConst(a, mask) => acc(&mut grads, *a, g * mask),
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Gelu(a) => {
                    let d = self.value(*a).mapv(|x| gelu_parts(x).1);
                    acc(&mut grads, *a, g * d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gamma_v = self.value(*gamma);
                    acc(&mut grads, *gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * gamma_v;
                    let (n, m) = dxhat.dim();
                    let mut dx = Array2::zeros((n, m));
                    for i in 0..n {
                        let dr = dxhat.row(i);
                        let xr = xhat.row(i);
                        let mean_d = dr.sum() / m as f64;
                        let mean_dx = dr.dot(&xr) / m as f64;
                        for j in 0..m {
                            dx[[i, j]] = inv_std[i] * (dr[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Array2::zeros(y.dim());
                    for (i, (yr, gr)) in y.rows().into_iter().zip(g.rows()).enumerate() {
                        let dot = yr.dot(&gr);
                        for j in 0..yr.len() {
                            dx[[i, j]] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::SliceCols(a, start) => {
                    let mut full = Array2::zeros(self.value(*a).dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::SliceRows(a, start) => {
                    let mut full = Array2::zeros(self.value(*a).dim());
                    full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::ReplaceRows { x, row, rows } => {
                    let mut gx = g.clone();
                    let mut grow = Array2::zeros((1, g.ncols()));
                    for &i in rows {
                        {
                            let mut r = grow.row_mut(0);
                            r += &g.row(i);
                        }
                        gx.row_mut(i).fill(0.0);
                    }
                    acc(&mut grads, *row, grow);
                    acc(&mut grads, *x, gx);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let full = Array2::from_shape_fn((n, g.ncols()), |(_, j)| g[[0, j]] / n as f64);
                    acc(&mut grads, *a, full);
                }
                Op::AvgPoolCols(a, p) => {
                    let mut full = Array2::zeros(self.value(*a).dim());
                    for ((i, j), gv) in g.indexed_iter() {
                        for k in 0..*p {
                            full[[i, j * p + k]] = gv / *p as f64;
                        }
                    }
                    acc(&mut grads, *a, full);
                }
                Op::Gather(a, map) => {
                    let shape = self.value(*a).dim();
                    let mut flat = vec![0.0; shape.0 * shape.1];
                    for (gv, &k) in g.iter().zip(map) {
                        flat[k] += gv;
                    }
                    acc(&mut grads, *a, Array2::from_shape_vec(shape, flat).unwrap());
                }
                Op::CrossEntropy {
                    logits,
                    target,
                    probs,
                } => {
                    let mut d = probs.clone();
                    d[[0, *target]] -= 1.0;
                    acc(&mut grads, *logits, d * g[[0, 0]]);
                }
                Op::MaskedMse { pred, target, rows } => {
                    let p = self.value(*pred);
                    let mut d = Array2::zeros(p.dim());
                    if !rows.is_empty() {
                        let k = 2.0 * g[[0, 0]] / rows.len() as f64;
                        for &i in rows {
                            let diff = (&p.row(i) - &target.row(i)) * k;
                            d.row_mut(i).assign(&diff);
                        }
                    }
                    acc(&mut grads, *pred, d);
                }
            }
        }
        out
    }
}
