//! Reverse-accumulation gradient tape.
//!
//! A [`Graph`] records every operation of one forward pass. Values are computed
//! eagerly; [`Graph::backward`] walks the record in reverse and accumulates
//! gradients. Parameters enter through [`Graph::param`] and their gradients are
//! written back with [`Gradients::accumulate_into`].

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{row_stats, Tensor2};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Node handle on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Gelu(Var),
    Square(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor2<T>,
        inv_std: Vec<T>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    SegmentMean {
        x: Var,
        assign: Vec<usize>,
        counts: Vec<usize>,
    },
    RowSum(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor2<T>,
    },
    BceWithLogits {
        logits: Var,
        targets: Tensor2<T>,
    },
    Dice {
        logits: Var,
        targets: Tensor2<T>,
    },
}

struct Node<T> {
    value: Tensor2<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn bce_logit<T: Scalar>(x: T, t: T) -> T {
    x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln()
}

/// Laplace-smoothed dice cost `1 - (2<p,g> + 1) / (|p|_1 + |g|_1 + 1)`.
pub fn dice_cost<T: Scalar>(probs: &[T], targets: &[T]) -> T {
    let (num, den) = dice_parts(probs, targets);
    T::one() - num / den
}

fn dice_parts<T: Scalar>(probs: &[T], targets: &[T]) -> (T, T) {
    let two = T::of(2.0);
    let inter: T = probs.iter().zip(targets).map(|(&p, &g)| p * g).sum();
    let sp: T = probs.iter().copied().sum();
    let sg: T = targets.iter().copied().sum();
    (two * inter + T::one(), sp + sg + T::one())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor2<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor2<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor2<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.tensor(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// `x + 1·row` for a `1 × cols` row.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: xv.shape(),
                rhs: rv.shape(),
            });
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    /// `x + col·1ᵀ` for a `rows × 1` column.
    pub fn add_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.cols() != 1 || cv.rows() != xv.rows() {
            return Err(Error::Dimension {
                op: "add_col",
                lhs: xv.shape(),
                rhs: cv.shape(),
            });
        }
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let c = cv[(i, 0)];
            for o in out.row_mut(i) {
                *o += c;
            }
        }
        let rg = self.rg(x) || self.rg(col);
        Ok(self.push(out, Op::AddCol(x, col), rg))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * v);
        let rg = self.rg(x);
        self.push(out, Op::Square(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.abs());
        let rg = self.rg(x);
        self.push(out, Op::Abs(x), rg)
    }

    /// Row softmax of `x + bias`; `bias` is a constant additive mask whose
    /// `-inf` entries receive exactly zero weight.
    pub fn softmax_rows(&mut self, x: Var, bias: Option<&Tensor2<T>>) -> Result<Var> {
        let out = match bias {
            Some(b) => self.value(x).add(b)?.row_softmax()?,
            None => self.value(x).row_softmax()?,
        };
        let rg = self.rg(x);
        Ok(self.push(out, Op::Softmax(x), rg))
    }

    /// Row layer norm with `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        if gv.shape() != (1, xv.cols()) || bv.shape() != (1, xv.cols()) {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: xv.shape(),
                rhs: gv.shape(),
            });
        }
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let row = xhat.row_mut(i);
            let (mean, is) = row_stats(row, eps);
            for v in row.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let mut out = xhat.clone();
        for i in 0..out.rows() {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = *o * gv.data()[j] + bv.data()[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: xv.shape(),
                rhs: (start, end),
            });
        }
        let out = xv.slice_cols(start, end);
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor2<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor2::concat_cols(&vals)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::Dimension {
                op: "select_rows",
                lhs: xv.shape(),
                rhs: (bad, 0),
            });
        }
        let out = xv.select_rows(idx);
        let rg = self.rg(x);
        Ok(self.push(out, Op::SelectRows(x, idx.to_vec()), rg))
    }

    /// Mean of the rows of `x` grouped by `assign` into `groups` output rows.
    pub fn segment_mean(&mut self, x: Var, assign: &[usize], groups: usize) -> Result<Var> {
        let xv = self.value(x);
        if assign.len() != xv.rows() {
            return Err(Error::Dimension {
                op: "segment_mean",
                lhs: xv.shape(),
                rhs: (assign.len(), groups),
            });
        }
        let mut counts = vec![0usize; groups];
        for &a in assign {
            if a >= groups {
                return Err(Error::Partition(format!("id {a} >= {groups} superpoints")));
            }
            counts[a] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Partition(format!(
                "superpoint {empty} has no members"
            )));
        }
        let mut out = Tensor2::zeros(groups, xv.cols());
        for (i, &a) in assign.iter().enumerate() {
            for (o, &v) in out.row_mut(a).iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        for (g, &c) in counts.iter().enumerate() {
            let inv = T::one() / T::from_usize(c).unwrap();
            for o in out.row_mut(g) {
                *o *= inv;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::SegmentMean {
                x,
                assign: assign.to_vec(),
                counts,
            },
            rg,
        ))
    }

    /// Row sums as a `rows × 1` column.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor2::column_vector(
            (0..xv.rows())
                .map(|i| xv.row(i).iter().copied().sum())
                .collect(),
        );
        let rg = self.rg(x);
        self.push(out, Op::RowSum(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor2::filled(1, 1, self.value(x).sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.sum(x);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Mean cross-entropy of row logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if targets.len() != lv.rows() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: lv.shape(),
                rhs: (targets.len(), 1),
            });
        }
        let probs = lv.row_softmax()?;
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - row[t];
        }
        let n = T::from_usize(targets.len().max(1)).unwrap();
        let out = Tensor2::filled(1, 1, total / n);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy over all entries, computed from logits.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor2<T>) -> Result<Var> {
        let lv = self.value(logits);
        let l = lv.zip_map(targets, "bce_with_logits", bce_logit)?;
        let n = T::from_usize(l.len().max(1)).unwrap();
        let out = Tensor2::filled(1, 1, l.sum() / n);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::BceWithLogits {
                logits,
                targets: targets.clone(),
            },
            rg,
        ))
    }

    /// Mean over rows of the Laplace-smoothed dice cost of `sigmoid(logits)`.
    pub fn dice(&mut self, logits: Var, targets: &Tensor2<T>) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != targets.shape() {
            return Err(Error::Dimension {
                op: "dice",
                lhs: lv.shape(),
                rhs: targets.shape(),
            });
        }
        let probs = lv.map(sigmoid);
        let mut total = T::zero();
        for i in 0..lv.rows() {
            total += dice_cost(probs.row(i), targets.row(i));
        }
        let n = T::from_usize(lv.rows().max(1)).unwrap();
        let out = Tensor2::filled(1, 1, total / n);
        let rg = self.rg(logits);
        Ok(self.push(
            out,
            Op::Dice {
                logits,
                targets: targets.clone(),
            },
            rg,
        ))
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                lhs: lv.shape(),
                rhs: (1, 1),
            });
        }
        if !lv.all_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor2::filled(1, 1, T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &gout, &mut grads)?;
            grads[idx] = Some(gout);
        }

        let params = self
            .params
            .iter()
            .filter_map(|(&id, &v)| grads[v.0].take().map(|g| (id, g)))
            .collect();
        Ok(Gradients { params })
    }

    fn send(&self, grads: &mut [Option<Tensor2<T>>], to: Var, g: Tensor2<T>) -> Result<()> {
        if !self.rg(to) {
            return Ok(());
        }
        match &mut grads[to.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        node: &Node<T>,
        gout: &Tensor2<T>,
        grads: &mut [Option<Tensor2<T>>],
    ) -> Result<()> {
        match &node.op {
            Op::Constant | Op::Param => {}
            &Op::MatMul(a, b) => {
                if self.rg(a) {
                    self.send(grads, a, gout.matmul_t(self.value(b))?)?;
                }
                if self.rg(b) {
                    self.send(grads, b, self.value(a).t_matmul(gout)?)?;
                }
            }
            &Op::MatMulT(a, b) => {
                if self.rg(a) {
                    self.send(grads, a, gout.matmul(self.value(b))?)?;
                }
                if self.rg(b) {
                    self.send(grads, b, gout.t_matmul(self.value(a))?)?;
                }
            }
            &Op::Add(a, b) => {
                self.send(grads, a, gout.clone())?;
                self.send(grads, b, gout.clone())?;
            }
            &Op::Sub(a, b) => {
                self.send(grads, a, gout.clone())?;
                self.send(grads, b, gout.scale(-T::one()))?;
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    self.send(grads, a, gout.hadamard(self.value(b))?)?;
                }
                if self.rg(b) {
                    self.send(grads, b, gout.hadamard(self.value(a))?)?;
                }
            }
            &Op::Scale(a, s) => self.send(grads, a, gout.scale(s))?,
            &Op::AddRow(x, row) => {
                self.send(grads, x, gout.clone())?;
                if self.rg(row) {
                    let mut r = Tensor2::zeros(1, gout.cols());
                    for i in 0..gout.rows() {
                        for (o, &g) in r.data_mut().iter_mut().zip(gout.row(i)) {
                            *o += g;
                        }
                    }
                    self.send(grads, row, r)?;
                }
            }
            &Op::AddCol(x, col) => {
                self.send(grads, x, gout.clone())?;
                if self.rg(col) {
                    let c = (0..gout.rows())
                        .map(|i| gout.row(i).iter().copied().sum())
                        .collect();
                    self.send(grads, col, Tensor2::column_vector(c))?;
                }
            }
            &Op::Gelu(x) => {
                let g = gout.zip_map(self.value(x), "gelu", |g, v| g * gelu_grad(v))?;
                self.send(grads, x, g)?;
            }
            &Op::Square(x) => {
                let g = gout.zip_map(self.value(x), "square", |g, v| g * (v + v))?;
                self.send(grads, x, g)?;
            }
            &Op::Abs(x) => {
                let g = gout.zip_map(self.value(x), "abs", |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })?;
                self.send(grads, x, g)?;
            }
            &Op::Softmax(x) => {
                let y = &node.value;
                let mut g = Tensor2::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), gout.row(i));
                    let dotp: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for (j, o) in g.row_mut(i).iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - dotp);
                    }
                }
                self.send(grads, x, g)?;
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain);
                let cols = xhat.cols();
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = Tensor2::zeros(1, cols);
                    let mut db = Tensor2::zeros(1, cols);
                    for i in 0..xhat.rows() {
                        for j in 0..cols {
                            dg.data_mut()[j] += gout[(i, j)] * xhat[(i, j)];
                            db.data_mut()[j] += gout[(i, j)];
                        }
                    }
                    self.send(grads, *gain, dg)?;
                    self.send(grads, *bias, db)?;
                }
                if self.rg(*x) {
                    let n = T::from_usize(cols).unwrap();
                    let mut dx = Tensor2::zeros(xhat.rows(), cols);
                    for i in 0..xhat.rows() {
                        let xh = xhat.row(i);
                        let dxhat: Vec<T> =
                            (0..cols).map(|j| gout[(i, j)] * gv.data()[j]).collect();
                        let m1 = dxhat.iter().copied().sum::<T>() / n;
                        let m2 = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                            *o = inv_std[i] * (dxhat[j] - m1 - xh[j] * m2);
                        }
                    }
                    self.send(grads, *x, dx)?;
                }
            }
            &Op::SliceCols(x, start) => {
                let (r, c) = self.value(x).shape();
                let mut g = Tensor2::zeros(r, c);
                for i in 0..r {
                    g.row_mut(i)[start..start + gout.cols()].copy_from_slice(gout.row(i));
                }
                self.send(grads, x, g)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        self.send(grads, p, gout.slice_cols(start, start + w))?;
                    }
                    start += w;
                }
            }
            Op::SelectRows(x, idx) => {
                let (r, c) = self.value(*x).shape();
                let mut g = Tensor2::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in g.row_mut(i).iter_mut().zip(gout.row(k)) {
                        *o += v;
                    }
                }
                self.send(grads, *x, g)?;
            }
            Op::SegmentMean { x, assign, counts } => {
                let (r, c) = self.value(*x).shape();
                let mut g = Tensor2::zeros(r, c);
                for (i, &a) in assign.iter().enumerate() {
                    let inv = T::one() / T::from_usize(counts[a]).unwrap();
                    for (o, &v) in g.row_mut(i).iter_mut().zip(gout.row(a)) {
                        *o = v * inv;
                    }
                }
                self.send(grads, *x, g)?;
            }
            &Op::RowSum(x) => {
                let (r, c) = self.value(x).shape();
                let g = Tensor2::from_fn(r, c, |i, _| gout[(i, 0)]);
                self.send(grads, x, g)?;
            }
            &Op::Sum(x) => {
                let (r, c) = self.value(x).shape();
                self.send(grads, x, Tensor2::filled(r, c, gout[(0, 0)]))?;
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let scale = gout[(0, 0)] / T::from_usize(targets.len().max(1)).unwrap();
                let mut g = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    g[(i, t)] -= T::one();
                }
                self.send(grads, *logits, g.scale(scale))?;
            }
            Op::BceWithLogits { logits, targets } => {
                let scale = gout[(0, 0)] / T::from_usize(targets.len().max(1)).unwrap();
                let g = self
                    .value(*logits)
                    .zip_map(targets, "bce", |x, t| (sigmoid(x) - t) * scale)?;
                self.send(grads, *logits, g)?;
            }
            Op::Dice { logits, targets } => {
                let lv = self.value(*logits);
                let scale = gout[(0, 0)] / T::from_usize(lv.rows().max(1)).unwrap();
                let two = T::of(2.0);
                let mut g = Tensor2::zeros(lv.rows(), lv.cols());
                for i in 0..lv.rows() {
                    let p: Vec<T> = lv.row(i).iter().map(|&v| sigmoid(v)).collect();
                    let gt = targets.row(i);
                    let (num, den) = dice_parts(&p, gt);
                    for (j, o) in g.row_mut(i).iter_mut().enumerate() {
                        let dp = -(two * gt[j] * den - num) / (den * den);
                        *o = dp * p[j] * (T::one() - p[j]) * scale;
                    }
                }
                self.send(grads, *logits, g)?;
            }
        }
        Ok(())
    }
}

/// Parameter gradients produced by one reverse pass.
#[derive(Debug)]
pub struct Gradients<T> {
    params: Vec<(ParamId, Tensor2<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor2<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Adds into `store` grads; frozen parameters are skipped.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, g) in &self.params {
            let p = store.get_mut(*id);
            if !p.frozen {
                p.grad.add_assign(g)?;
            }
        }
        Ok(())
    }
}
