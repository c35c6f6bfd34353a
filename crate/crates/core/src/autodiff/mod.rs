//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to [`Tensor`] handles. Calling
//! [`Tape::backward`] on a `1x1` result walks the record in reverse and
//! returns the gradient of every leaf created with [`Tape::leaf`].
//!
//! Shapes are checked on every operation; there is no broadcasting apart
//! from [`Tape::scale`].

mod gradcheck;

use std::cell::{Ref, RefCell};
use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub use gradcheck::{gradcheck, GradcheckReport};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn id(&self) -> usize {
        self.id
    }
}

/// Elementwise activation applied after a graph convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    SparseMul(Arc<SparseMatrix>, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(f64, usize),
    Relu(usize),
    Square(usize),
    Sqrt(usize),
    GatherRows(usize, Vec<usize>),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    Sum(usize),
    RowMin(usize, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) => vec![*a, *b],
            Op::SparseMul(_, a)
            | Op::Scale(_, a)
            | Op::Relu(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::GatherRows(a, _)
            | Op::Sum(a)
            | Op::RowMin(a, _) => vec![*a],
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients produced by [`Tape::backward`], indexed by tensor.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&Array2<f64>> {
        self.grads.get(t.id).and_then(Option::as_ref)
    }

    /// Gradient of a leaf; panics if `t` is not a gradient-tracking leaf.
    pub fn wrt(&self, t: Tensor) -> &Array2<f64> {
        self.get(t).expect("tensor is not a gradient-tracking leaf")
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op) -> Tensor {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = op.inputs().iter().any(|&i| nodes[i].requires_grad);
        let (rows, cols) = value.dim();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Tensor {
            id: nodes.len() - 1,
            rows,
            cols,
        }
    }

    /// Records a trainable input.
    pub fn leaf(&self, value: Array2<f64>) -> Tensor {
        let t = self.push(value, Op::Leaf);
        self.nodes.borrow_mut()[t.id].requires_grad = true;
        t
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&self, value: Array2<f64>) -> Tensor {
        self.push(value, Op::Leaf)
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes.borrow()[t.id].requires_grad
    }

    /// Borrowed view of a recorded value.
    pub fn value(&self, t: Tensor) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[t.id].value)
    }

    /// Value of a `1x1` tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.value(t)[[0, 0]]
    }

    fn values<R>(&self, ids: &[usize], f: impl FnOnce(&[&Array2<f64>]) -> R) -> R {
        let nodes = self.nodes.borrow();
        let refs: Vec<&Array2<f64>> = ids.iter().map(|&i| &nodes[i].value).collect();
        f(&refs)
    }

    fn same_shape(op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                op,
                left: a.shape(),
                right: b.shape(),
            });
        }
        Ok(())
    }

    pub fn matmul(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.cols != b.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let v = self.values(&[a.id, b.id], |v| v[0].dot(v[1]));
        Ok(self.push(v, Op::MatMul(a.id, b.id)))
    }

    /// Left-multiplies by a constant sparse matrix.
    pub fn sparse_matmul(&self, m: &Arc<SparseMatrix>, x: Tensor) -> Result<Tensor> {
        if m.shape().1 != x.rows {
            return Err(Error::Dimension {
                op: "sparse_matmul",
                left: m.shape(),
                right: x.shape(),
            });
        }
        let v = self.values(&[x.id], |v| m.mul_dense(v[0].view()));
        Ok(self.push(v, Op::SparseMul(Arc::clone(m), x.id)))
    }

    pub fn add(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape("add", a, b)?;
        let v = self.values(&[a.id, b.id], |v| v[0] + v[1]);
        Ok(self.push(v, Op::Add(a.id, b.id)))
    }

    pub fn sub(&self, a: Tensor, b: Tensor) -> Result<Tensor> {
        Self::same_shape("sub", a, b)?;
        let v = self.values(&[a.id, b.id], |v| v[0] - v[1]);
        Ok(self.push(v, Op::Sub(a.id, b.id)))
    }

    pub fn scale(&self, c: f64, a: Tensor) -> Tensor {
        let v = self.values(&[a.id], |v| v[0] * c);
        self.push(v, Op::Scale(c, a.id))
    }

    pub fn activate(&self, act: Activation, a: Tensor) -> Tensor {
        match act {
            Activation::Identity => a,
            Activation::Relu => self.relu(a),
        }
    }

    pub fn relu(&self, a: Tensor) -> Tensor {
        let v = self.values(&[a.id], |v| v[0].mapv(|x| x.max(0.0)));
        self.push(v, Op::Relu(a.id))
    }

    pub fn square(&self, a: Tensor) -> Tensor {
        let v = self.values(&[a.id], |v| v[0].mapv(|x| x * x));
        self.push(v, Op::Square(a.id))
    }

    pub fn sqrt(&self, a: Tensor) -> Tensor {
        let v = self.values(&[a.id], |v| v[0].mapv(f64::sqrt));
        self.push(v, Op::Sqrt(a.id))
    }

    /// Row `i` of the result is row `indices[i]` of `a`.
    pub fn gather_rows(&self, a: Tensor, indices: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= a.rows) {
            return Err(Error::Dimension {
                op: "gather_rows",
                left: a.shape(),
                right: (bad, 0),
            });
        }
        let v = self.values(&[a.id], |v| v[0].select(Axis(0), indices));
        Ok(self.push(v, Op::GatherRows(a.id, indices.to_vec())))
    }

    pub fn concat_rows(&self, parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_rows of nothing"))?;
        if let Some(bad) = parts.iter().find(|p| p.cols != first.cols) {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: first.shape(),
                right: bad.shape(),
            });
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let v = self.values(&ids, |v| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("column counts checked")
        });
        Ok(self.push(v, Op::ConcatRows(ids)))
    }

    pub fn concat_cols(&self, parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_cols of nothing"))?;
        if let Some(bad) = parts.iter().find(|p| p.rows != first.rows) {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: first.shape(),
                right: bad.shape(),
            });
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let v = self.values(&ids, |v| {
            let views: Vec<_> = v.iter().map(|a| a.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("row counts checked")
        });
        Ok(self.push(v, Op::ConcatCols(ids)))
    }

    /// Sum of all entries, as a `1x1` tensor.
    pub fn sum(&self, a: Tensor) -> Tensor {
        let v = self.values(&[a.id], |v| Array2::from_elem((1, 1), v[0].sum()));
        self.push(v, Op::Sum(a.id))
    }

    /// Row minima of a distance matrix as an `n x 1` tensor, plus the argmin
    /// of every row (lowest index on ties). The argmins are constants for
    /// the backward pass.
    pub fn min_index_rows(&self, d: Tensor) -> Result<(Tensor, Vec<usize>)> {
        if d.cols == 0 {
            return Err(Error::EmptyInput("min_index_rows over zero columns"));
        }
        let (mins, argmin) = self.values(&[d.id], |v| {
            let mut mins = Array2::zeros((d.rows, 1));
            let mut argmin = Vec::with_capacity(d.rows);
            for (i, row) in v[0].rows().into_iter().enumerate() {
                let (j, m) = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |(bj, bm), (j, &x)| if x < bm { (j, x) } else { (bj, bm) });
                mins[[i, 0]] = m;
                argmin.push(j);
            }
            (mins, argmin)
        });
        let t = self.push(mins, Op::RowMin(d.id, argmin.clone()));
        Ok((t, argmin))
    }

    /// Reverse pass from a `1x1` loss.
    ///
    /// Every gradient-tracking leaf receives an entry, zero if the loss does
    /// not depend on it. Contributions from repeated uses of a node add up.
    pub fn backward(&self, loss: Tensor) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(Error::NonScalarLoss(loss.shape()));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut send = |target: usize, contrib: Array2<f64>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(acc) => *acc += &contrib,
                    slot => *slot = Some(contrib),
                }
            };
            let wants = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        send(*a, g.dot(&nodes[*b].value.t()));
                    }
                    if wants(*b) {
                        send(*b, nodes[*a].value.t().dot(&g));
                    }
                }
                Op::SparseMul(m, x) => send(*x, m.transpose_mul_dense(g.view())),
                Op::Add(a, b) => {
                    if wants(*a) {
                        send(*a, g.clone());
                    }
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        send(*a, g.clone());
                    }
                    send(*b, -g);
                }
                Op::Scale(c, a) => send(*a, g * *c),
                Op::Relu(a) => {
                    let mut out = g;
                    Zip::from(&mut out)
                        .and(&nodes[*a].value)
                        .for_each(|o, &x| {
                            if x <= 0.0 {
                                *o = 0.0;
                            }
                        });
                    send(*a, out);
                }
                Op::Square(a) => {
                    let mut out = g;
                    Zip::from(&mut out)
                        .and(&nodes[*a].value)
                        .for_each(|o, &x| *o *= 2.0 * x);
                    send(*a, out);
                }
                Op::Sqrt(a) => {
                    let mut out = g;
                    Zip::from(&mut out)
                        .and(&node.value)
                        .for_each(|o, &y| *o *= 0.5 / y);
                    send(*a, out);
                }
                Op::GatherRows(a, idx) => {
                    let mut out = Array2::zeros(nodes[*a].value.dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = out.row_mut(src);
                        row += &g.row(r);
                    }
                    send(*a, out);
                }
                Op::ConcatRows(ids) => {
                    let mut start = 0;
                    for &i in ids {
                        let n = nodes[i].value.nrows();
                        if wants(i) {
                            send(i, g.slice(s![start..start + n, ..]).to_owned());
                        }
                        start += n;
                    }
                }
                Op::ConcatCols(ids) => {
                    let mut start = 0;
                    for &i in ids {
                        let n = nodes[i].value.ncols();
                        if wants(i) {
                            send(i, g.slice(s![.., start..start + n]).to_owned());
                        }
                        start += n;
                    }
                }
                Op::Sum(a) => send(*a, Array2::from_elem(nodes[*a].value.dim(), g[[0, 0]])),
                Op::RowMin(a, argmin) => {
                    let mut out = Array2::zeros(nodes[*a].value.dim());
                    for (r, &c) in argmin.iter().enumerate() {
                        out[[r, c]] = g[[r, 0]];
                    }
                    send(*a, out);
                }
            }
        }

        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[id].is_none() {
                grads[id] = Some(Array2::zeros(node.value.dim()));
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn add_zero_is_identity_with_unit_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0], [3.0, 4.0]]);
        let z = tape.constant(Array2::zeros((2, 2)));
        let y = tape.add(x, z).unwrap();
        assert_eq!(*tape.value(y), *tape.value(x));
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x), &Array2::<f64>::ones((2, 2)));
        assert!(g.get(z).is_none());
    }

    #[test]
    fn relu_forward_and_backward() {
        let tape = Tape::new();
        let x = tape.leaf(array![[-1.0, 2.0]]);
        let y = tape.relu(x);
        assert_eq!(*tape.value(y), array![[0.0, 2.0]]);
        let g = tape.backward(tape.sum(y)).unwrap();
        assert_eq!(g.wrt(x), &array![[0.0, 1.0]]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, -2.0, 3.0]]);
        let loss = tape.sum(tape.square(x));
        assert_eq!(tape.scalar(loss), 14.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x), &array![[2.0, -4.0, 6.0]]);
    }

    #[test]
    fn reuse_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(array![[1.0, 5.0], [0.0, -1.0]]);
        let loss = tape.add(tape.sum(x), tape.sum(x)).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x), &Array2::from_elem((2, 2), 2.0));
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Array2::zeros((3, 4)));
        let b = tape.leaf(Array2::zeros((3, 2)));
        match tape.matmul(a, b) {
            Err(Error::Dimension { left, right, .. }) => {
                assert_eq!((left, right), ((3, 4), (3, 2)));
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let a = tape.leaf(Array2::zeros((2, 1)));
        assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss((2, 1)))));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0]]);
        let b = tape.leaf(array![[1.0, 2.0]]);
        let g = tape.backward(tape.sum(a)).unwrap();
        assert_eq!(g.wrt(b), &Array2::<f64>::zeros((1, 2)));
    }

    #[test]
    fn row_min_picks_lowest_index_on_ties() {
        let tape = Tape::new();
        let d = tape.leaf(array![[2.0, 1.0, 1.0], [0.5, 3.0, 0.5]]);
        let (m, idx) = tape.min_index_rows(d).unwrap();
        assert_eq!(idx, vec![1, 0]);
        assert_eq!(*tape.value(m), array![[1.0], [0.5]]);
        let g = tape.backward(tape.sum(m)).unwrap();
        assert_eq!(g.wrt(d), &array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
    }

    #[test]
    fn gather_and_concat_route_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = tape.leaf(array![[5.0, 6.0]]);
        let rows = tape.concat_rows(&[a, b]).unwrap();
        let picked = tape.gather_rows(rows, &[2, 0, 2]).unwrap();
        let cols = tape.concat_cols(&[picked, picked]).unwrap();
        assert_eq!(cols.shape(), (3, 4));
        let g = tape.backward(tape.sum(cols)).unwrap();
        assert_eq!(g.wrt(a), &array![[2.0, 2.0], [0.0, 0.0]]);
        assert_eq!(g.wrt(b), &array![[4.0, 4.0]]);
    }

    #[test]
    fn sparse_matmul_matches_dense_route() {
        let m = Arc::new(SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, -2.0), (1, 1, 0.5)]));
        let x0 = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = tape.sparse_matmul(&m, x).unwrap();
        let loss = tape.sum(tape.square(y));
        let g = tape.backward(loss).unwrap();

        let tape2 = Tape::new();
        let x2 = tape2.leaf(x0);
        let md = tape2.constant(m.to_dense());
        let y2 = tape2.matmul(md, x2).unwrap();
        let g2 = tape2.backward(tape2.sum(tape2.square(y2))).unwrap();
        assert_eq!(g.wrt(x), g2.wrt(x2));
    }
}
