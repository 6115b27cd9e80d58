//! Reverse-mode differentiation over a per-step tape of matrix operations.
//!
//! Operations append nodes holding their forward value. [`Tape::backward`]
//! walks the nodes in reverse, producing a gradient for every node that the
//! loss depends on, and adds the gradients of parameter leaves into the
//! owning [`ParamStore`]. A tape is single-use: a second backward call fails
//! with [`Error::GraphConsumed`].

use std::sync::Arc;

use super::dense::{dot, norm2, DenseMatrix};
use super::params::{ParamId, ParamStore};
use super::sparse::SparseMatrix;
use crate::error::{Error, Result};

/// Norm floor used by normalizing and cosine ops.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<DenseMatrix>),
    Propagate {
        adj: Arc<SparseMatrix>,
        input: Var,
        hops: usize,
    },
    ReplaceRows {
        base: Var,
        rows: Arc<[usize]>,
        token: Var,
    },
    Softmax(Var),
    WeightedSum {
        inputs: Vec<Var>,
        weights: Var,
    },
    RowNormalize(Var),
    PairDots {
        a: Var,
        b: Var,
        pairs: Arc<[(usize, usize)]>,
    },
    ScaledCosine {
        pred: Var,
        target: Arc<DenseMatrix>,
        rows: Arc<[usize]>,
        eta: f64,
    },
    SoftmaxNll {
        pos: Var,
        neg: Var,
        include_positive: bool,
    },
    Sum(Var),
    ConcatCols(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn scalar(v: f64) -> DenseMatrix {
    DenseMatrix::filled(1, 1, v)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
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

    fn push(&mut self, value: DenseMatrix, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite output of {:?}",
                std::mem::discriminant(&op)
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Result<Var> {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let value = self.value(a).scale(alpha);
        self.push(value, Op::Scale(a, alpha))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, mask: Arc<DenseMatrix>) -> Result<Var> {
        let value = self.value(a).hadamard(&mask)?;
        self.push(value, Op::MulConst(a, mask))
    }

    /// `adj^hops · input`; the adjacency is treated as a constant.
    pub fn propagate(&mut self, adj: Arc<SparseMatrix>, input: Var, hops: usize) -> Result<Var> {
        if adj.rows() != adj.cols() {
            return Err(Error::ShapeMismatch {
                op: "propagate",
                lhs: (adj.rows(), adj.cols()),
                rhs: self.shape(input),
            });
        }
        let mut value = self.value(input).clone();
        for _ in 0..hops {
            value = adj.spmm(&value)?;
        }
        if hops == 0 && adj.cols() != value.rows() {
            return Err(Error::ShapeMismatch {
                op: "propagate",
                lhs: (adj.rows(), adj.cols()),
                rhs: value.shape(),
            });
        }
        self.push(value, Op::Propagate { adj, input, hops })
    }

    /// Copy of `base` with each listed row overwritten by the 1×f `token`.
    pub fn replace_rows(&mut self, base: Var, rows: Arc<[usize]>, token: Var) -> Result<Var> {
        let (n, f) = self.shape(base);
        if self.shape(token) != (1, f) {
            return Err(Error::ShapeMismatch {
                op: "replace_rows",
                lhs: (n, f),
                rhs: self.shape(token),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                node_count: n,
            });
        }
        let mut value = self.value(base).clone();
        let tok = self.value(token).row(0).to_vec();
        for &r in rows.iter() {
            value.row_mut(r).copy_from_slice(&tok);
        }
        self.push(value, Op::ReplaceRows { base, rows, token })
    }

    /// Softmax over all entries of a 1×R row.
    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        let x = self.value(logits);
        if x.rows() != 1 || x.cols() == 0 {
            return Err(Error::EmptyList("softmax"));
        }
        let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = x.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let value =
            DenseMatrix::from_vec(1, exps.len(), exps.into_iter().map(|e| e / total).collect())?;
        self.push(value, Op::Softmax(logits))
    }

    /// `Σ_r weights[r] · inputs[r]` for a 1×R weight row.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: Var) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::EmptyList("weighted_sum"))?;
        if self.shape(weights) != (1, inputs.len()) {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: (1, inputs.len()),
                rhs: self.shape(weights),
            });
        }
        let w = self.value(weights).data().to_vec();
        let (rows, cols) = self.shape(first);
        let mut value = DenseMatrix::zeros(rows, cols);
        for (&input, &wr) in inputs.iter().zip(&w) {
            value.axpy(wr, self.value(input))?;
        }
        self.push(
            value,
            Op::WeightedSum {
                inputs: inputs.to_vec(),
                weights,
            },
        )
    }

    /// Scales every row to unit length (norm floored at [`NORM_FLOOR`]).
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let n = norm2(row).max(NORM_FLOOR);
            row.iter_mut().for_each(|v| *v /= n);
        }
        self.push(value, Op::RowNormalize(a))
    }

    /// Row dot products `a[i] · b[j]` for each `(i, j)`, laid out row-major as `rows × cols`.
    pub fn pair_dots(
        &mut self,
        a: Var,
        b: Var,
        pairs: Arc<[(usize, usize)]>,
        rows: usize,
        cols: usize,
    ) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() || rows * cols != pairs.len() {
            return Err(Error::ShapeMismatch {
                op: "pair_dots",
                lhs: am.shape(),
                rhs: bm.shape(),
            });
        }
        for &(i, j) in pairs.iter() {
            if i >= am.rows() || j >= bm.rows() {
                return Err(Error::IndexOutOfRange {
                    index: i.max(j),
                    node_count: am.rows().min(bm.rows()),
                });
            }
        }
        let data = pairs
            .iter()
            .map(|&(i, j)| dot(am.row(i), bm.row(j)))
            .collect();
        let value = DenseMatrix::from_vec(rows, cols, data)?;
        self.push(value, Op::PairDots { a, b, pairs })
    }

    /// Mean over `rows` of `(1 − cos(pred_i, target_i))^eta`.
    pub fn scaled_cosine(
        &mut self,
        pred: Var,
        target: Arc<DenseMatrix>,
        rows: Arc<[usize]>,
        eta: f64,
    ) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "scaled_cosine",
                lhs: p.shape(),
                rhs: target.shape(),
            });
        }
        if rows.is_empty() {
            return Err(Error::EmptyList("scaled_cosine rows"));
        }
        let mut total = 0.0;
        for &r in rows.iter() {
            if r >= p.rows() {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    node_count: p.rows(),
                });
            }
            let (pr, tr) = (p.row(r), target.row(r));
            let (np, nt) = (norm2(pr), norm2(tr));
            if np < NORM_FLOOR || nt < NORM_FLOOR {
                return Err(Error::DegenerateRow { row: r });
            }
            let c = dot(pr, tr) / (np * nt);
            total += (1.0 - c).max(0.0).powf(eta);
        }
        let value = scalar(total / rows.len() as f64);
        self.push(
            value,
            Op::ScaledCosine {
                pred,
                target,
                rows,
                eta,
            },
        )
    }

    /// `Σ_e −log( exp(pos_e) / Z_e )` where `Z_e` sums `exp` over row `e` of `neg`
    /// and, when `include_positive`, also over `pos_e`.
    pub fn softmax_nll(&mut self, pos: Var, neg: Var, include_positive: bool) -> Result<Var> {
        let (p, n) = (self.value(pos), self.value(neg));
        if p.cols() != 1 || p.rows() != n.rows() {
            return Err(Error::ShapeMismatch {
                op: "softmax_nll",
                lhs: p.shape(),
                rhs: n.shape(),
            });
        }
        if !include_positive && n.cols() == 0 && p.rows() > 0 {
            return Err(Error::EmptyList("softmax_nll negatives"));
        }
        let mut total = 0.0;
        for e in 0..p.rows() {
            let pe = p.get(e, 0);
            let negs = n.row(e).iter().copied();
            let lse = if include_positive {
                log_sum_exp(std::iter::once(pe).chain(negs))
            } else {
                log_sum_exp(negs)
            };
            total += lse - pe;
        }
        self.push(
            scalar(total),
            Op::SoftmaxNll {
                pos,
                neg,
                include_positive,
            },
        )
    }

    /// Places matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::EmptyList("concat_cols"));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let shape = self.shape(p);
            if shape.0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: shape,
                });
            }
            cols += shape.1;
        }
        let mut value = DenseMatrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            for r in 0..rows {
                value.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Sum of scalar nodes; an empty list yields a constant zero.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let mut iter = terms.iter().copied();
        let Some(mut acc) = iter.next() else {
            return self.constant(scalar(0.0));
        };
        for t in iter {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Computes gradients of the 1×1 node `loss` and adds those of parameter
    /// leaves into `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, grad) {
                store.get_mut(*id).grad.add_assign(&g)?;
            }
        }
        Ok(())
    }

    /// Per-node gradients of `loss`; `None` where the loss does not depend on the node.
    pub fn gradients(&mut self, loss: Var) -> Result<Vec<Option<DenseMatrix>>> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.shape(loss),
                rhs: (1, 1),
            });
        }
        self.consumed = true;
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(scalar(1.0));

        fn accumulate(grads: &mut [Option<DenseMatrix>], v: Var, g: DenseMatrix) -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).tmatmul(&g)?;
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g.clone())?;
                }
                Op::Scale(a, alpha) => accumulate(&mut grads, *a, g.scale(*alpha))?,
                Op::MulConst(a, mask) => accumulate(&mut grads, *a, g.hadamard(mask)?)?,
                Op::Propagate { adj, input, hops } => {
                    let mut d = g.clone();
                    for _ in 0..*hops {
                        d = adj.spmm_transpose(&d)?;
                    }
                    accumulate(&mut grads, *input, d)?;
                }
                Op::ReplaceRows { base, rows, token } => {
                    let mut dbase = g.clone();
                    let mut dtok = DenseMatrix::zeros(1, g.cols());
                    for &r in rows.iter() {
                        for (t, &v) in dtok.row_mut(0).iter_mut().zip(g.row(r)) {
                            *t += v;
                        }
                        dbase.row_mut(r).fill(0.0);
                    }
                    accumulate(&mut grads, *base, dbase)?;
                    accumulate(&mut grads, *token, dtok)?;
                }
                Op::Softmax(logits) => {
                    let y = &node.value;
                    let gy = dot(g.data(), y.data());
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(yi, gi)| yi * (gi - gy))
                        .collect();
                    accumulate(
                        &mut grads,
                        *logits,
                        DenseMatrix::from_vec(1, y.cols(), data)?,
                    )?;
                }
                Op::WeightedSum { inputs, weights } => {
                    let w = self.value(*weights).data().to_vec();
                    let mut dw = DenseMatrix::zeros(1, inputs.len());
                    for (r, (&input, &wr)) in inputs.iter().zip(&w).enumerate() {
                        dw.set(0, r, dot(g.data(), self.value(input).data()));
                        accumulate(&mut grads, input, g.scale(wr))?;
                    }
                    accumulate(&mut grads, *weights, dw)?;
                }
                Op::RowNormalize(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut dx = DenseMatrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let n = norm2(x.row(r));
                        let (yr, gr) = (y.row(r), g.row(r));
                        let out = dx.row_mut(r);
                        if n < NORM_FLOOR {
                            for (o, &gv) in out.iter_mut().zip(gr) {
                                *o = gv / NORM_FLOOR;
                            }
                        } else {
                            let yg = dot(yr, gr);
                            for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                                *o = (gv - yv * yg) / n;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, dx)?;
                }
                Op::PairDots { a, b, pairs } => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let mut da = DenseMatrix::zeros(am.rows(), am.cols());
                    let mut db = DenseMatrix::zeros(bm.rows(), bm.cols());
                    for (&(i, j), &gp) in pairs.iter().zip(g.data()) {
                        if gp == 0.0 {
                            continue;
                        }
                        for (o, &v) in da.row_mut(i).iter_mut().zip(bm.row(j)) {
                            *o += gp * v;
                        }
                        for (o, &v) in db.row_mut(j).iter_mut().zip(am.row(i)) {
                            *o += gp * v;
                        }
                    }
                    accumulate(&mut grads, *a, da)?;
                    accumulate(&mut grads, *b, db)?;
                }
                Op::ScaledCosine {
                    pred,
                    target,
                    rows,
                    eta,
                } => {
                    let p = self.value(*pred);
                    let scale = g.data()[0] / rows.len() as f64;
                    let mut dp = DenseMatrix::zeros(p.rows(), p.cols());
                    for &r in rows.iter() {
                        let (pr, tr) = (p.row(r), target.row(r));
                        let (np, nt) = (norm2(pr), norm2(tr));
                        let c = dot(pr, tr) / (np * nt);
                        let one_minus = (1.0 - c).max(0.0);
                        // d/dc (1-c)^eta
                        let outer = if *eta == 1.0 {
                            -1.0
                        } else if one_minus == 0.0 {
                            0.0
                        } else {
                            -eta * one_minus.powf(eta - 1.0)
                        };
                        let coef = scale * outer;
                        for ((o, &pv), &tv) in dp.row_mut(r).iter_mut().zip(pr).zip(tr) {
                            *o += coef * (tv / (np * nt) - c * pv / (np * np));
                        }
                    }
                    accumulate(&mut grads, *pred, dp)?;
                }
                Op::SoftmaxNll {
                    pos,
                    neg,
                    include_positive,
                } => {
                    let (p, n) = (self.value(*pos), self.value(*neg));
                    let gs = g.data()[0];
                    let mut dp = DenseMatrix::zeros(p.rows(), 1);
                    let mut dn = DenseMatrix::zeros(n.rows(), n.cols());
                    for e in 0..p.rows() {
                        let pe = p.get(e, 0);
                        let negs = n.row(e);
                        let lse = if *include_positive {
                            log_sum_exp(std::iter::once(pe).chain(negs.iter().copied()))
                        } else {
                            log_sum_exp(negs.iter().copied())
                        };
                        let mut d_pos = -1.0;
                        if *include_positive {
                            d_pos += (pe - lse).exp();
                        }
                        dp.set(e, 0, gs * d_pos);
                        for (o, &v) in dn.row_mut(e).iter_mut().zip(negs) {
                            *o = gs * (v - lse).exp();
                        }
                    }
                    accumulate(&mut grads, *pos, dp)?;
                    accumulate(&mut grads, *neg, dn)?;
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    accumulate(&mut grads, *a, DenseMatrix::filled(r, c, g.data()[0]))?;
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (rows, cols) = self.shape(p);
                        let mut dp = DenseMatrix::zeros(rows, cols);
                        for r in 0..rows {
                            dp.row_mut(r)
                                .copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, p, dp)?;
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, m: DenseMatrix) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, m).unwrap();
        (s, id)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (mut store, id) = store_with(
            "w",
            DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        let loss = tape.sum(w).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad, DenseMatrix::filled(2, 2, 1.0));
    }

    #[test]
    fn zero_scaled_loss_gives_zero_gradient() {
        let (mut store, id) = store_with("w", DenseMatrix::filled(2, 2, 3.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        let s = tape.sum(w).unwrap();
        let loss = tape.scale(s, 0.0).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(id).grad, DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn backward_twice_is_rejected() {
        let (mut store, id) = store_with("w", DenseMatrix::filled(1, 1, 1.0));
        let mut tape = Tape::new();
        let w = tape.param(&store, id).unwrap();
        tape.backward(w, &mut store).unwrap();
        assert!(matches!(
            tape.backward(w, &mut store),
            Err(Error::GraphConsumed)
        ));
    }

    #[test]
    fn unreachable_params_keep_zero_gradient() {
        let mut store = ParamStore::new();
        let a = store.add("a", DenseMatrix::filled(1, 2, 1.0)).unwrap();
        let b = store.add("b", DenseMatrix::filled(1, 2, 1.0)).unwrap();
        let mut tape = Tape::new();
        let va = tape.param(&store, a).unwrap();
        let _vb = tape.param(&store, b).unwrap();
        let loss = tape.sum(va).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(b).grad, DenseMatrix::zeros(1, 2));
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_bt() {
        let a = DenseMatrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = DenseMatrix::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.5, 3.0]).unwrap();
        let (mut store, id) = store_with("a", a);
        let mut tape = Tape::new();
        let va = tape.param(&store, id).unwrap();
        let vb = tape.constant(b.clone()).unwrap();
        let prod = tape.matmul(va, vb).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss, &mut store).unwrap();
        let expect = DenseMatrix::filled(2, 2, 1.0)
            .matmul(&b.transpose())
            .unwrap();
        assert!(store.get(id).grad.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn replace_rows_cases() {
        let x = DenseMatrix::from_vec(3, 3, (0..9).map(f64::from).collect()).unwrap();
        let tok = DenseMatrix::from_vec(1, 3, vec![-1.0, -2.0, -3.0]).unwrap();
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone()).unwrap();
        let vt = tape.constant(tok.clone()).unwrap();

        let none = tape.replace_rows(vx, Arc::from(Vec::new()), vt).unwrap();
        assert_eq!(tape.value(none), &x);

        let all = tape.replace_rows(vx, Arc::from(vec![0, 1, 2]), vt).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(all).row(r), tok.row(0));
        }

        let one = tape.replace_rows(vx, Arc::from(vec![2]), vt).unwrap();
        assert_eq!(tape.value(one).row(0), x.row(0));
        assert_eq!(tape.value(one).row(1), x.row(1));
        assert_eq!(tape.value(one).row(2), tok.row(0));

        let bad_token = tape.constant(DenseMatrix::zeros(1, 2)).unwrap();
        assert!(tape
            .replace_rows(vx, Arc::from(vec![0]), bad_token)
            .is_err());
    }

    fn cosine_value(p: Vec<f64>, t: Vec<f64>, eta: f64) -> f64 {
        let f = p.len();
        let mut tape = Tape::new();
        let vp = tape
            .constant(DenseMatrix::from_vec(1, f, p).unwrap())
            .unwrap();
        let target = Arc::new(DenseMatrix::from_vec(1, f, t).unwrap());
        let l = tape
            .scaled_cosine(vp, target, Arc::from(vec![0]), eta)
            .unwrap();
        tape.scalar(l)
    }

    #[test]
    fn scaled_cosine_reference_cases() {
        assert!(cosine_value(vec![1.0, 2.0], vec![1.0, 2.0], 2.0).abs() < 1e-15);
        assert!((cosine_value(vec![1.0, 0.0], vec![0.0, 3.0], 1.0) - 1.0).abs() < 1e-15);
        assert!((cosine_value(vec![1.0, -2.0], vec![-2.0, 4.0], 2.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn scaled_cosine_rejects_zero_rows() {
        let mut tape = Tape::new();
        let vp = tape.constant(DenseMatrix::zeros(2, 2)).unwrap();
        let target = Arc::new(DenseMatrix::filled(2, 2, 1.0));
        let err = tape
            .scaled_cosine(vp, target, Arc::from(vec![1]), 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 1 }));
    }

    fn nll(pos: Vec<f64>, neg: Vec<Vec<f64>>) -> f64 {
        let e = pos.len();
        let mut tape = Tape::new();
        let vp = tape
            .constant(DenseMatrix::from_vec(e, 1, pos).unwrap())
            .unwrap();
        let negm = if neg.iter().all(Vec::is_empty) {
            DenseMatrix::zeros(e, 0)
        } else {
            DenseMatrix::from_rows(&neg).unwrap()
        };
        let vn = tape.constant(negm).unwrap();
        let l = tape.softmax_nll(vp, vn, true).unwrap();
        tape.scalar(l)
    }

    #[test]
    fn edge_softmax_reference_cases() {
        assert_eq!(nll(vec![0.3], vec![vec![]]), 0.0);
        assert!((nll(vec![0.7], vec![vec![0.7]]) - 2f64.ln()).abs() < 1e-15);
        // -ln(e / (e + 2))
        assert!((nll(vec![1.0], vec![vec![0.0, 0.0]]) - 0.551_444_713_932_051_4).abs() < 1e-12);
    }

    #[test]
    fn edge_softmax_is_stable_at_extremes() {
        let v = nll(
            vec![-50.0, 50.0],
            vec![vec![50.0, 50.0], vec![-50.0, -50.0]],
        );
        assert!(v.is_finite());
        assert!((v - (100.0 + 2f64.ln())).abs() < 1e-9);
    }
}
