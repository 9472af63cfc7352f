//! Reverse-mode gradient tape over whole tensors.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the nodes from the loss down to the first one, exactly once each,
//! accumulating adjoints into zero-initialized buffers. Nodes that do not
//! depend on any parameter are skipped during the backward sweep.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`GradientTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Relu(Var),
    Concat(Var, Var),
    Add(Var, Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records tensor operations in execution order.
#[derive(Debug, Clone, Default)]
pub struct GradientTape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> GradientTape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A trainable leaf; gradients are reported for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient (input data).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// `x·W + b`, with `b` broadcast across rows.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if !xv.is_matrix() || !wv.is_matrix() || xv.shape()[1] != wv.shape()[0] {
            return Err(Error::shape("dense", xv.shape(), wv.shape()));
        }
        if bv.len() != wv.shape()[1] {
            return Err(Error::shape("dense bias", wv.shape(), bv.shape()));
        }
        let mut y = xv.matmul(wv)?;
        let m = y.cols();
        for row in y.data_mut().chunks_mut(m) {
            for (o, &bias) in row.iter_mut().zip(bv.data()) {
                *o += bias;
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Dense { x, w, b }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    /// Column-wise concatenation of two matrices with equal row counts;
    /// the columns of `a` come first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || !bv.is_matrix() || av.rows() != bv.rows() {
            return Err(Error::shape("concat", av.shape(), bv.shape()));
        }
        let (n, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let y = Tensor::new(vec![n, ca + cb], data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Concat(a, b), needs))
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), needs))
    }

    /// Mean softmax cross-entropy of `n×C` logits against integer labels.
    /// Produces a one-element tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if !lv.is_matrix() || lv.rows() != labels.len() {
            return Err(Error::shape("softmax_cross_entropy", lv.shape(), &[labels.len()]));
        }
        let (n, c) = (lv.rows(), lv.cols());
        if c < 2 {
            return Err(Error::Input(format!("need at least 2 classes, got {c}")));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Input(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let denom: T = row.iter().map(|&z| (z - max).exp()).sum();
            let log_denom = denom.ln();
            total += log_denom - (row[y] - max);
            probs.extend(row.iter().map(|&z| (z - max).exp() / denom));
        }
        let loss = Tensor::scalar(total / T::count(n));
        let probs = Tensor::new(vec![n, c], probs)?;
        let needs = self.needs(logits);
        Ok(self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            needs,
        ))
    }

    /// Propagates d(loss)/d(node) to every node the loss depends on.
    ///
    /// `loss` must be a one-element tensor, the last node on the tape, and finite.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 + 1 != self.nodes.len() {
            return Err(Error::Input("loss must be the final tape node".into()));
        }
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", lv.shape(), &[1]));
        }
        if !lv.all_finite() {
            return Err(Error::Numeric(format!("loss is {}", lv.data()[0])));
        }

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Dense { x, w, b } => {
                    let wv = self.value(*w);
                    if self.needs(*x) {
                        let dx = g.matmul(&wv.transpose())?;
                        accumulate(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        let dw = self.value(*x).transpose().matmul(&g)?;
                        accumulate(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        let db = Tensor::new(self.value(*b).shape().to_vec(), g.sum_rows().into_data())?;
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let dx = g.zip_map(
                        xv,
                        "relu backward",
                        |gi, xi| if xi > T::zero() { gi } else { T::zero() },
                    )?;
                    accumulate(&mut grads, *x, dx);
                }
                Op::Concat(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let n = g.rows();
                    let mut da = Vec::with_capacity(n * ca);
                    let mut db = Vec::with_capacity(n * cb);
                    for i in 0..n {
                        let row = g.row(i);
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, Tensor::new(vec![n, ca], da)?);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, Tensor::new(vec![n, cb], db)?);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let n = probs.rows();
                    let c = probs.cols();
                    let k = g.data()[0] / T::count(n);
                    let mut d = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        d.data_mut()[i * c + y] -= T::one();
                    }
                    accumulate(&mut grads, *logits, d.scale(k));
                }
            }
        }

        // Only leaves keep their buffers after the sweep.
        Ok(Gradients { grads })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Adjoints produced by [`GradientTape::backward`], keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, materialized as zeros when the loss does not reach it.
    pub fn wrt(&self, tape: &GradientTape<T>, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}
