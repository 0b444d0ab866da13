//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! Every operation on a [`Var`] appends a node holding its forward value and
//! enough bookkeeping to push gradients back to its parents. A tape is
//! single-threaded and short-lived: build one per example, call
//! [`Tape::backward`] once, read the gradients, drop it.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::mat::{gemm_into, Mat};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

enum Op<T> {
    Leaf,
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    AddCol(usize, usize),
    MulCol(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Transpose(usize),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    LeakyRelu(usize, T),
    Softplus(usize),
    Square(usize),
    Abs(usize),
    Clamp(usize, T, T),
    SumAll(usize),
    MeanRows(usize),
    SumRows(usize),
    SumCols(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNorm(usize, Vec<T>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    ShiftRows(usize, isize),
    GradReverse(usize, T),
}

struct Node<T> {
    value: Mat<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one forward computation.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<usize, usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    params: HashMap<usize, Mat<T>>,
    leaves: HashMap<usize, Mat<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::with_capacity(1024)), params: RefCell::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Mat<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Mat<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// A free input whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&self, value: Mat<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// The node for a stored parameter; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id.index()) {
            return Var { tape: self, id: node };
        }
        let v = self.push(store.get(id).clone(), Op::Param(id.index()), true);
        self.params.borrow_mut().insert(id.index(), v.id);
        v
    }

    pub fn concat_cols(&self, parts: &[Var<'_, T>]) -> Var<'_, T> {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[ids[0]].value.rows();
            let cols: usize = ids.iter().map(|&i| nodes[i].value.cols()).sum();
            let mut out = Mat::zeros(rows, cols);
            for r in 0..rows {
                let mut off = 0;
                let dst = out.row_mut(r);
                for &i in &ids {
                    let m = &nodes[i].value;
                    assert_eq!(m.rows(), rows, "concat_cols row mismatch");
                    dst[off..off + m.cols()].copy_from_slice(m.row(r));
                    off += m.cols();
                }
            }
            out
        };
        let needs = self.needs(&ids);
        self.push(value, Op::ConcatCols(ids), needs)
    }

    pub fn concat_rows(&self, parts: &[Var<'_, T>]) -> Var<'_, T> {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let cols = nodes[ids[0]].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for &i in &ids {
                let m = &nodes[i].value;
                assert_eq!(m.cols(), cols, "concat_rows column mismatch");
                data.extend_from_slice(m.data());
                rows += m.rows();
            }
            Mat::from_vec(rows, cols, data).expect("consistent concat")
        };
        let needs = self.needs(&ids);
        self.push(value, Op::ConcatRows(ids), needs)
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[output.id].value.shape(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Mat<T>>> = (0..=output.id).map(|_| None).collect();
        grads[output.id] = Some(Mat::filled(1, 1, T::one()));
        let mut out = Gradients { params: HashMap::new(), leaves: HashMap::new() };

        for i in (0..=output.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |j: usize, f: &mut dyn FnMut(&mut Mat<T>)| {
                if !nodes[j].needs_grad {
                    return;
                }
                let slot = grads[j].get_or_insert_with(|| {
                    let (r, c) = nodes[j].value.shape();
                    Mat::zeros(r, c)
                });
                f(slot);
            };
            let y = &node.value;
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(i, g);
                }
                Op::Param(p) => {
                    out.params.insert(*p, g);
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |ga| ga.axpy(T::one(), &g));
                    acc(*b, &mut |gb| gb.axpy(T::one(), &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |ga| ga.axpy(T::one(), &g));
                    acc(*b, &mut |gb| gb.axpy(-T::one(), &g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    acc(*a, &mut |ga| zip3(ga, &g, vb, |x, gy, w| *x += gy * w));
                    acc(*b, &mut |gb| zip3(gb, &g, va, |x, gy, w| *x += gy * w));
                }
                Op::AddRow(a, row) => {
                    acc(*a, &mut |ga| ga.axpy(T::one(), &g));
                    acc(*row, &mut |gr| {
                        for r in 0..g.rows() {
                            for (o, &x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    });
                }
                Op::MulRow(a, row) => {
                    let (va, vr) = (&nodes[*a].value, &nodes[*row].value);
                    acc(*a, &mut |ga| {
                        for r in 0..g.rows() {
                            let gr = g.row(r);
                            for ((o, &x), &w) in ga.row_mut(r).iter_mut().zip(gr).zip(vr.data()) {
                                *o += x * w;
                            }
                        }
                    });
                    acc(*row, &mut |grow| {
                        for r in 0..g.rows() {
                            for ((o, &x), &v) in grow.data_mut().iter_mut().zip(g.row(r)).zip(va.row(r)) {
                                *o += x * v;
                            }
                        }
                    });
                }
                Op::AddCol(a, col) => {
                    acc(*a, &mut |ga| ga.axpy(T::one(), &g));
                    acc(*col, &mut |gc| {
                        for r in 0..g.rows() {
                            gc.data_mut()[r] += g.row(r).iter().copied().sum::<T>();
                        }
                    });
                }
                Op::MulCol(a, col) => {
                    let (va, vc) = (&nodes[*a].value, &nodes[*col].value);
                    acc(*a, &mut |ga| {
                        for r in 0..g.rows() {
                            let w = vc.data()[r];
                            for (o, &x) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += x * w;
                            }
                        }
                    });
                    acc(*col, &mut |gc| {
                        for r in 0..g.rows() {
                            let s: T = g.row(r).iter().zip(va.row(r)).map(|(&x, &v)| x * v).sum();
                            gc.data_mut()[r] += s;
                        }
                    });
                }
                Op::Scale(a, s) => acc(*a, &mut |ga| ga.axpy(*s, &g)),
                Op::AddScalar(a) => acc(*a, &mut |ga| ga.axpy(T::one(), &g)),
                Op::MatMul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    acc(*a, &mut |ga| gemm_into(&g, false, vb, true, T::one(), ga));
                    acc(*b, &mut |gb| gemm_into(va, true, &g, false, T::one(), gb));
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    acc(*a, &mut |ga| gemm_into(&g, false, vb, false, T::one(), ga));
                    acc(*b, &mut |gb| gemm_into(&g, true, va, false, T::one(), gb));
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    acc(*a, &mut |ga| ga.axpy(T::one(), &gt));
                }
                Op::Exp(a) => acc(*a, &mut |ga| zip3(ga, &g, y, |x, gy, yy| *x += gy * yy)),
                Op::Ln(a) => {
                    let va = &nodes[*a].value;
                    acc(*a, &mut |ga| zip3(ga, &g, va, |x, gy, v| *x += gy / v));
                }
                Op::Tanh(a) => acc(*a, &mut |ga| zip3(ga, &g, y, |x, gy, yy| *x += gy * (T::one() - yy * yy))),
                Op::Sigmoid(a) => acc(*a, &mut |ga| zip3(ga, &g, y, |x, gy, yy| *x += gy * yy * (T::one() - yy))),
                Op::Relu(a) => {
                    let va = &nodes[*a].value;
                    acc(*a, &mut |ga| {
                        zip3(ga, &g, va, |x, gy, v| {
                            if v > T::zero() {
                                *x += gy
                            }
                        })
                    });
                }
                Op::LeakyRelu(a, slope) => {
                    let va = &nodes[*a].value;
                    let s = *slope;
                    acc(*a, &mut |ga| zip3(ga, &g, va, |x, gy, v| *x += if v > T::zero() { gy } else { gy * s }));
                }
                Op::Softplus(a) => {
                    let va = &nodes[*a].value;
                    acc(*a, &mut |ga| zip3(ga, &g, va, |x, gy, v| *x += gy * sigmoid(v)));
                }
                Op::Square(a) => {
                    let va = &nodes[*a].value;
                    let two = T::lit(2.0);
                    acc(*a, &mut |ga| zip3(ga, &g, va, |x, gy, v| *x += two * v * gy));
                }
                Op::Abs(a) => {
                    let va = &nodes[*a].value;
                    acc(*a, &mut |ga| {
                        zip3(ga, &g, va, |x, gy, v| {
                            if v > T::zero() {
                                *x += gy
                            } else if v < T::zero() {
                                *x -= gy
                            }
                        })
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let va = &nodes[*a].value;
                    let (lo, hi) = (*lo, *hi);
                    acc(*a, &mut |ga| {
                        zip3(ga, &g, va, |x, gy, v| {
                            if v >= lo && v <= hi {
                                *x += gy
                            }
                        })
                    });
                }
                Op::SumAll(a) => {
                    let s = g.data()[0];
                    acc(*a, &mut |ga| ga.data_mut().iter_mut().for_each(|x| *x += s));
                }
                Op::MeanRows(a) => {
                    let rows = nodes[*a].value.rows();
                    let inv = T::one() / T::lit(rows as f64);
                    acc(*a, &mut |ga| {
                        for r in 0..rows {
                            for (o, &x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                                *o += x * inv;
                            }
                        }
                    });
                }
                Op::SumRows(a) => {
                    let rows = nodes[*a].value.rows();
                    acc(*a, &mut |ga| {
                        for r in 0..rows {
                            for (o, &x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                                *o += x;
                            }
                        }
                    });
                }
                Op::SumCols(a) => {
                    acc(*a, &mut |ga| {
                        for r in 0..ga.rows() {
                            let s = g.data()[r];
                            ga.row_mut(r).iter_mut().for_each(|x| *x += s);
                        }
                    });
                }
                Op::SoftmaxRows(a) => {
                    acc(*a, &mut |ga| {
                        for r in 0..g.rows() {
                            let (gr, yr) = (g.row(r), y.row(r));
                            let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                            for ((o, &gy), &yy) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                                *o += yy * (gy - dot);
                            }
                        }
                    });
                }
                Op::LogSoftmaxRows(a) => {
                    acc(*a, &mut |ga| {
                        for r in 0..g.rows() {
                            let (gr, yr) = (g.row(r), y.row(r));
                            let s: T = gr.iter().copied().sum();
                            for ((o, &gy), &yy) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                                *o += gy - yy.exp() * s;
                            }
                        }
                    });
                }
                Op::LayerNorm(a, rstd) => {
                    acc(*a, &mut |ga| {
                        let n = T::lit(g.cols() as f64);
                        #[allow(clippy::needless_range_loop)]
                        for r in 0..g.rows() {
                            let (gr, yr) = (g.row(r), y.row(r));
                            let mg = gr.iter().copied().sum::<T>() / n;
                            let mgy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                            for ((o, &gy), &yy) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                                *o += rstd[r] * (gy - mg - yy * mgy);
                            }
                        }
                    });
                }
                Op::SliceCols(a, start) => {
                    let start = *start;
                    acc(*a, &mut |ga| {
                        for r in 0..g.rows() {
                            for (o, &x) in ga.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    });
                }
                Op::SliceRows(a, start) => {
                    let start = *start;
                    acc(*a, &mut |ga| {
                        for r in 0..g.rows() {
                            for (o, &x) in ga.row_mut(start + r).iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    });
                }
                Op::ConcatCols(ids) => {
                    let mut off = 0;
                    for &j in ids {
                        let w = nodes[j].value.cols();
                        acc(j, &mut |gj| {
                            for r in 0..g.rows() {
                                for (o, &x) in gj.row_mut(r).iter_mut().zip(&g.row(r)[off..off + w]) {
                                    *o += x;
                                }
                            }
                        });
                        off += w;
                    }
                }
                Op::ConcatRows(ids) => {
                    let mut off = 0;
                    for &j in ids {
                        let h = nodes[j].value.rows();
                        acc(j, &mut |gj| {
                            for r in 0..h {
                                for (o, &x) in gj.row_mut(r).iter_mut().zip(g.row(off + r)) {
                                    *o += x;
                                }
                            }
                        });
                        off += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    acc(*a, &mut |ga| {
                        for (r, &src) in idx.iter().enumerate() {
                            for (o, &x) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    });
                }
                Op::ShiftRows(a, offset) => {
                    let offset = *offset;
                    acc(*a, &mut |ga| {
                        let rows = ga.rows() as isize;
                        for r in 0..g.rows() {
                            let src = r as isize + offset;
                            if (0..rows).contains(&src) {
                                for (o, &x) in ga.row_mut(src as usize).iter_mut().zip(g.row(r)) {
                                    *o += x;
                                }
                            }
                        }
                    });
                }
                Op::GradReverse(a, lambda) => acc(*a, &mut |ga| ga.axpy(-*lambda, &g)),
            }
        }
        out
    }
}

fn zip3<T: Scalar>(out: &mut Mat<T>, a: &Mat<T>, b: &Mat<T>, f: impl Fn(&mut T, T, T)) {
    for ((o, &x), &y) in out.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
        f(o, x, y);
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    if x > T::lit(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl<T> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Mat<T>> {
        self.params.get(&id.index())
    }

    pub fn wrt(&self, v: Var<'_, T>) -> Option<&Mat<T>>
    where
        T: Scalar,
    {
        self.leaves.get(&v.id).or_else(|| {
            let nodes = v.tape.nodes.borrow();
            match nodes[v.id].op {
                Op::Param(p) => self.params.get(&p),
                _ => None,
            }
        })
    }

    /// Parameter gradients in store order; `None` for parameters not reached.
    pub fn into_param_vec(self, n_params: usize) -> Vec<Option<Mat<T>>> {
        let mut out: Vec<Option<Mat<T>>> = (0..n_params).map(|_| None).collect();
        for (p, g) in self.params {
            if p < n_params {
                out[p] = Some(g);
            }
        }
        out
    }
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var(#{}, {r}x{c})", self.id)
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the forward value. Drop before recording further ops.
    pub fn borrow_value(&self) -> Ref<'t, Mat<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Mat<T> {
        self.borrow_value().clone()
    }

    pub fn scalar(&self) -> T {
        let v = self.borrow_value();
        assert_eq!(v.shape(), (1, 1), "scalar() on a non-scalar node");
        v.data()[0]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.borrow_value().shape()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    fn unary(self, op: impl FnOnce(usize) -> Op<T>, f: impl Fn(T) -> T) -> Self {
        let value = self.borrow_value().map(f);
        let needs = self.needs_grad();
        self.tape.push(value, op(self.id), needs)
    }

    fn binary_same(self, other: Self, op: Op<T>, f: impl Fn(T, T) -> T, what: &str) -> Self {
        let value = {
            let (a, b) = (self.borrow_value(), other.borrow_value());
            assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Mat::from_vec(a.rows(), a.cols(), data).expect("same shape")
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, op, needs)
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(self, row: Self) -> Self {
        let value = {
            let (a, r) = (self.borrow_value(), row.borrow_value());
            assert_eq!(r.shape(), (1, a.cols()), "add_row: row shape mismatch");
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (o, &x) in out.row_mut(i).iter_mut().zip(r.data()) {
                    *o += x;
                }
            }
            out
        };
        let needs = self.tape.needs(&[self.id, row.id]);
        self.tape.push(value, Op::AddRow(self.id, row.id), needs)
    }

    /// Multiplies every row elementwise by a `1 x cols` row.
    pub fn mul_row(self, row: Self) -> Self {
        let value = {
            let (a, r) = (self.borrow_value(), row.borrow_value());
            assert_eq!(r.shape(), (1, a.cols()), "mul_row: row shape mismatch");
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (o, &x) in out.row_mut(i).iter_mut().zip(r.data()) {
                    *o *= x;
                }
            }
            out
        };
        let needs = self.tape.needs(&[self.id, row.id]);
        self.tape.push(value, Op::MulRow(self.id, row.id), needs)
    }

    /// Adds a `rows x 1` column to every column.
    pub fn add_col(self, col: Self) -> Self {
        let value = {
            let (a, c) = (self.borrow_value(), col.borrow_value());
            assert_eq!(c.shape(), (a.rows(), 1), "add_col: column shape mismatch");
            let mut out = a.clone();
            for i in 0..out.rows() {
                let w = c.data()[i];
                out.row_mut(i).iter_mut().for_each(|o| *o += w);
            }
            out
        };
        let needs = self.tape.needs(&[self.id, col.id]);
        self.tape.push(value, Op::AddCol(self.id, col.id), needs)
    }

    /// Multiplies every column elementwise by a `rows x 1` column.
    pub fn mul_col(self, col: Self) -> Self {
        let value = {
            let (a, c) = (self.borrow_value(), col.borrow_value());
            assert_eq!(c.shape(), (a.rows(), 1), "mul_col: column shape mismatch");
            let mut out = a.clone();
            for i in 0..out.rows() {
                let w = c.data()[i];
                out.row_mut(i).iter_mut().for_each(|o| *o *= w);
            }
            out
        };
        let needs = self.tape.needs(&[self.id, col.id]);
        self.tape.push(value, Op::MulCol(self.id, col.id), needs)
    }

    pub fn scale(self, s: T) -> Self {
        self.unary(|a| Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(self, s: T) -> Self {
        self.unary(Op::AddScalar, |x| x + s)
    }

    pub fn matmul(self, other: Self) -> Self {
        let value = {
            let (a, b) = (self.borrow_value(), other.borrow_value());
            assert_eq!(a.cols(), b.rows(), "matmul: {}x{} by {}x{}", a.rows(), a.cols(), b.rows(), b.cols());
            let mut out = Mat::zeros(a.rows(), b.cols());
            gemm_into(&a, false, &b, false, T::zero(), &mut out);
            out
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, Op::MatMul(self.id, other.id), needs)
    }

    /// `self * other^T`.
    pub fn matmul_t(self, other: Self) -> Self {
        let value = {
            let (a, b) = (self.borrow_value(), other.borrow_value());
            assert_eq!(a.cols(), b.cols(), "matmul_t: {}x{} by ({}x{})^T", a.rows(), a.cols(), b.rows(), b.cols());
            let mut out = Mat::zeros(a.rows(), b.rows());
            gemm_into(&a, false, &b, true, T::zero(), &mut out);
            out
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        self.tape.push(value, Op::MatMulT(self.id, other.id), needs)
    }

    pub fn transpose(self) -> Self {
        let value = self.borrow_value().transpose();
        let needs = self.needs_grad();
        self.tape.push(value, Op::Transpose(self.id), needs)
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp, |x| x.exp())
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Ln, |x| x.ln())
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh, |x| x.tanh())
    }

    pub fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn relu(self) -> Self {
        self.unary(Op::Relu, |x| x.max(T::zero()))
    }

    pub fn leaky_relu(self, slope: T) -> Self {
        self.unary(|a| Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * slope })
    }

    pub fn softplus(self) -> Self {
        self.unary(Op::Softplus, softplus)
    }

    pub fn square(self) -> Self {
        self.unary(Op::Square, |x| x * x)
    }

    pub fn abs(self) -> Self {
        self.unary(Op::Abs, |x| x.abs())
    }

    pub fn clamp(self, lo: T, hi: T) -> Self {
        self.unary(|a| Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sum(self) -> Self {
        let value = Mat::filled(1, 1, self.borrow_value().sum());
        let needs = self.needs_grad();
        self.tape.push(value, Op::SumAll(self.id), needs)
    }

    pub fn mean(self) -> Self {
        let n = self.borrow_value().len();
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Column means, `1 x cols`.
    pub fn mean_rows(self) -> Self {
        let value = self.borrow_value().mean_rows();
        let needs = self.needs_grad();
        self.tape.push(value, Op::MeanRows(self.id), needs)
    }

    /// Column sums, `1 x cols`.
    pub fn sum_rows(self) -> Self {
        let value = {
            let a = self.borrow_value();
            let mut out = Mat::zeros(1, a.cols());
            for r in 0..a.rows() {
                for (o, &x) in out.data_mut().iter_mut().zip(a.row(r)) {
                    *o += x;
                }
            }
            out
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::SumRows(self.id), needs)
    }

    /// Row sums, `rows x 1`.
    pub fn sum_cols(self) -> Self {
        let value = {
            let a = self.borrow_value();
            let data = (0..a.rows()).map(|r| a.row(r).iter().copied().sum()).collect();
            Mat::from_vec(a.rows(), 1, data).expect("column")
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::SumCols(self.id), needs)
    }

    pub fn softmax_rows(self) -> Self {
        let value = {
            let mut out = self.borrow_value().clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let mut s = T::zero();
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    s += *x;
                }
                row.iter_mut().for_each(|x| *x = *x / s);
            }
            out
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::SoftmaxRows(self.id), needs)
    }

    pub fn log_softmax_rows(self) -> Self {
        let value = {
            let mut out = self.borrow_value().clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
                row.iter_mut().for_each(|x| *x -= lse);
            }
            out
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::LogSoftmaxRows(self.id), needs)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(self, eps: T) -> Self {
        let (value, rstd) = {
            let a = self.borrow_value();
            let n = T::lit(a.cols() as f64);
            let mut out = a.clone();
            let mut rstd = Vec::with_capacity(a.rows());
            for r in 0..a.rows() {
                let row = out.row_mut(r);
                let mean = row.iter().copied().sum::<T>() / n;
                let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
                let rs = T::one() / (var + eps).sqrt();
                row.iter_mut().for_each(|x| *x = (*x - mean) * rs);
                rstd.push(rs);
            }
            (out, rstd)
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::LayerNorm(self.id, rstd), needs)
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Self {
        let value = {
            let a = self.borrow_value();
            assert!(start <= end && end <= a.cols(), "slice_cols {start}..{end} of {}", a.cols());
            Mat::from_fn(a.rows(), end - start, |r, c| a.get(r, start + c))
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::SliceCols(self.id, start), needs)
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Self {
        let value = {
            let a = self.borrow_value();
            assert!(start <= end && end <= a.rows(), "slice_rows {start}..{end} of {}", a.rows());
            Mat::from_vec(end - start, a.cols(), a.data()[start * a.cols()..end * a.cols()].to_vec()).expect("row slice")
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::SliceRows(self.id, start), needs)
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(self, index: &[usize]) -> Self {
        let value = {
            let a = self.borrow_value();
            let mut data = Vec::with_capacity(index.len() * a.cols());
            for &i in index {
                assert!(i < a.rows(), "gather_rows index {i} out of {}", a.rows());
                data.extend_from_slice(a.row(i));
            }
            Mat::from_vec(index.len(), a.cols(), data).expect("gather")
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::GatherRows(self.id, index.to_vec()), needs)
    }

    /// Output row `t` is input row `t + offset`, zero outside the input.
    pub fn shift_rows(self, offset: isize) -> Self {
        let value = {
            let a = self.borrow_value();
            let rows = a.rows() as isize;
            let mut out = Mat::zeros(a.rows(), a.cols());
            for r in 0..a.rows() {
                let src = r as isize + offset;
                if (0..rows).contains(&src) {
                    out.row_mut(r).copy_from_slice(a.row(src as usize));
                }
            }
            out
        };
        let needs = self.needs_grad();
        self.tape.push(value, Op::ShiftRows(self.id, offset), needs)
    }

    /// Identity forward; backward multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(self, lambda: T) -> Self {
        let value = self.value();
        let needs = self.needs_grad();
        self.tape.push(value, Op::GradReverse(self.id, lambda), needs)
    }

    /// Same value, cut from the gradient path.
    pub fn detach(self) -> Self {
        let value = self.value();
        self.tape.constant(value)
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Var<'t, T>;
    fn add(self, rhs: Self) -> Self {
        self.binary_same(rhs, Op::Add(self.id, rhs.id), |a, b| a + b, "add")
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Var<'t, T>;
    fn sub(self, rhs: Self) -> Self {
        self.binary_same(rhs, Op::Sub(self.id, rhs.id), |a, b| a - b, "sub")
    }
}

impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Var<'t, T>;
    fn mul(self, rhs: Self) -> Self {
        self.binary_same(rhs, Op::Mul(self.id, rhs.id), |a, b| a * b, "mul")
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}
