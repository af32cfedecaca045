//! Reverse-mode differentiation over a recorded operation list.
//!
//! The operator set is closed: exactly the primitives the coordinate
//! networks and the sparse dictionary need. Forward values are computed
//! eagerly at record time and cached on the node, so `backward` is a single
//! reverse pass over the list. Nodes are appended in execution order, which
//! makes reverse index order a valid reverse topological order.

use crate::error::{Error, Result};
use crate::tensor::matrix::{Matrix, Scalar};

pub type NodeId = usize;

enum Op<T> {
    LeafParam,
    LeafConst,
    /// a * b
    MatMul { a: NodeId, b: NodeId },
    /// a * b^T; lets row-stored dictionaries multiply without materializing
    /// a transpose at every step.
    MatMulTb { a: NodeId, b: NodeId },
    /// Row vector `bias` added to every row of `a`.
    AddBias { a: NodeId, bias: NodeId },
    /// sin of the input; the cosine comes out of the same reduction at
    /// forward time and is kept for the backward pass.
    Sin { a: NodeId, cos: Matrix<T> },
    Relu { a: NodeId },
    /// factor * a, factor fixed at record time.
    Scale { a: NodeId, factor: T },
    /// a - b, same shapes.
    Sub { a: NodeId, b: NodeId },
    Square { a: NodeId },
    /// Mean over all entries; the only reduction, always 1x1.
    Mean { a: NodeId },
    /// Keeps the k largest entries of each row (ties to the lower index),
    /// zeroes the rest. Kept positions are recorded for the backward pass;
    /// kept values pass through unmodified.
    TopKMask { a: NodeId, kept: Vec<u32>, k: usize },
}

struct Node<T: Scalar> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. One tape per forward/backward pair.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by `Tape::backward`. Buffers are freshly
/// allocated per call; a `None` entry means the loss does not depend on that
/// node and its gradient is identically zero.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn of(&self, id: NodeId) -> Option<&Matrix<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient for `id`, materializing zeros of the given shape when the
    /// node is off the loss path.
    pub fn take_or_zeros(&mut self, id: NodeId, rows: usize, cols: usize) -> Matrix<T> {
        self.grads
            .get_mut(id)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Matrix::zeros(rows, cols))
    }
}

/// Selects the indices of the `k` largest entries of `row`, breaking value
/// ties toward the lower index. Returned indices are ascending.
pub(crate) fn select_topk_indices<T: Scalar>(row: &[T], k: usize) -> Vec<u32> {
    debug_assert!(k <= row.len());
    let mut order: Vec<u32> = (0..row.len() as u32).collect();
    if k < row.len() {
        order.select_nth_unstable_by(k - 1, |&i, &j| {
            let (a, b) = (row[i as usize], row[j as usize]);
            // descending by value, ascending by index on ties
            b.partial_cmp(&a)
                .expect("non-finite value in top-k selection")
                .then(i.cmp(&j))
        });
        order.truncate(k);
    }
    order.sort_unstable();
    order
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::LeafParam, true)
    }

    /// Records a fixed leaf (inputs, targets, frozen weights).
    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::LeafConst, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.matmul(&self.nodes[b].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul { a, b }, rg))
    }

    pub fn matmul_tb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let bt = self.nodes[b].value.transpose();
        let value = self.nodes[a].value.matmul(&bt)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMulTb { a, b }, rg))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[bias].value);
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} against {:?}", bv.shape(), av.shape()),
            ));
        }
        let value = av.add_row_broadcast(bv)?;
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(value, Op::AddBias { a, bias }, rg))
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let (value, cos) = self.nodes[a].value.sin_cos_all();
        let rg = self.requires(a);
        self.push(value, Op::Sin { a, cos }, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.relu();
        let rg = self.requires(a);
        self.push(value, Op::Relu { a }, rg)
    }

    pub fn scale(&mut self, a: NodeId, factor: T) -> NodeId {
        let value = self.nodes[a].value.map(|x| x * factor);
        let rg = self.requires(a);
        self.push(value, Op::Scale { a, factor }, rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.nodes[a].value.sub(&self.nodes[b].value)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Sub { a, b }, rg))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.map(|x| x * x);
        let rg = self.requires(a);
        self.push(value, Op::Square { a }, rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let value = Matrix::from_vec(1, 1, vec![T::real(self.nodes[a].value.mean_all())])
            .expect("1x1");
        let rg = self.requires(a);
        self.push(value, Op::Mean { a }, rg)
    }

    /// Row-wise top-k mask. Requires 1 <= k <= cols and finite inputs.
    pub fn topk_mask(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        let av = &self.nodes[a].value;
        if k == 0 || k > av.cols() {
            return Err(Error::contract(
                "topk_mask",
                format!("k = {} outside 1..={}", k, av.cols()),
            ));
        }
        if !av.is_finite() {
            return Err(Error::numeric("topk_mask", "non-finite input"));
        }
        let (rows, cols) = av.shape();
        let mut value = Matrix::zeros(rows, cols);
        let mut kept = Vec::with_capacity(rows * k);
        for r in 0..rows {
            let row = av.row(r);
            let idx = select_topk_indices(row, k);
            for &i in &idx {
                value.set(r, i as usize, row[i as usize]);
            }
            kept.extend_from_slice(&idx);
        }
        let rg = self.requires(a);
        Ok(self.push(value, Op::TopKMask { a, kept, k }, rg))
    }

    /// Accumulates `loss` gradients for every node, visiting the list in
    /// reverse record order. `loss` must be 1x1.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = &self.nodes[loss].value;
        if lv.shape() != (1, 1) {
            return Err(Error::contract(
                "backward",
                format!("loss must be a 1x1 scalar, got {:?}", lv.shape()),
            ));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Matrix::from_vec(1, 1, vec![T::one()]).expect("1x1"));

        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().expect("checked above");
            match &self.nodes[id].op {
                Op::LeafParam | Op::LeafConst => {
                    grads[id] = Some(g);
                }
                Op::MatMul { a, b } => {
                    if self.requires(*a) {
                        let contrib = g.matmul(&self.nodes[*b].value.transpose())?;
                        accumulate(&mut grads[*a], contrib)?;
                    }
                    if self.requires(*b) {
                        let contrib = self.nodes[*a].value.transpose().matmul(&g)?;
                        accumulate(&mut grads[*b], contrib)?;
                    }
                    grads[id] = Some(g);
                }
                Op::MatMulTb { a, b } => {
                    if self.requires(*a) {
                        let contrib = g.matmul(&self.nodes[*b].value)?;
                        accumulate(&mut grads[*a], contrib)?;
                    }
                    if self.requires(*b) {
                        let contrib = g.transpose().matmul(&self.nodes[*a].value)?;
                        accumulate(&mut grads[*b], contrib)?;
                    }
                    grads[id] = Some(g);
                }
                Op::AddBias { a, bias } => {
                    if self.requires(*a) {
                        accumulate(&mut grads[*a], g.clone())?;
                    }
                    if self.requires(*bias) {
                        let mut sums = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (s, &x) in sums.row_mut(0).iter_mut().zip(g.row(r)) {
                                *s += x;
                            }
                        }
                        accumulate(&mut grads[*bias], sums)?;
                    }
                    grads[id] = Some(g);
                }
                Op::Sin { a, cos } => {
                    if self.requires(*a) {
                        let contrib = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                            g.get(r, c) * cos.get(r, c)
                        });
                        accumulate(&mut grads[*a], contrib)?;
                    }
                    grads[id] = Some(g);
                }
                Op::Relu { a } => {
                    if self.requires(*a) {
                        let input = &self.nodes[*a].value;
                        let contrib = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                            if input.get(r, c) > T::zero() {
                                g.get(r, c)
                            } else {
                                T::zero()
                            }
                        });
                        accumulate(&mut grads[*a], contrib)?;
                    }
                    grads[id] = Some(g);
                }
                Op::Scale { a, factor } => {
                    if self.requires(*a) {
                        accumulate(&mut grads[*a], g.map(|x| x * *factor))?;
                    }
                    grads[id] = Some(g);
                }
                Op::Sub { a, b } => {
                    if self.requires(*a) {
                        accumulate(&mut grads[*a], g.clone())?;
                    }
                    if self.requires(*b) {
                        accumulate(&mut grads[*b], g.map(|x| -x))?;
                    }
                    grads[id] = Some(g);
                }
                Op::Square { a } => {
                    if self.requires(*a) {
                        let input = &self.nodes[*a].value;
                        let two = T::real(2.0);
                        let contrib = Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                            two * input.get(r, c) * g.get(r, c)
                        });
                        accumulate(&mut grads[*a], contrib)?;
                    }
                    grads[id] = Some(g);
                }
                Op::Mean { a } => {
                    if self.requires(*a) {
                        let (rows, cols) = self.nodes[*a].value.shape();
                        let scale = g.get(0, 0) / T::real((rows * cols) as f64);
                        let contrib = Matrix::from_fn(rows, cols, |_, _| scale);
                        accumulate(&mut grads[*a], contrib)?;
                    }
                    grads[id] = Some(g);
                }
                Op::TopKMask { a, kept, k } => {
                    if self.requires(*a) {
                        let (rows, cols) = g.shape();
                        let mut contrib = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            for &i in &kept[r * k..(r + 1) * k] {
                                contrib.set(r, i as usize, g.get(r, i as usize));
                            }
                        }
                        accumulate(&mut grads[*a], contrib)?;
                    }
                    grads[id] = Some(g);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Matrix<T>>, contrib: Matrix<T>) -> Result<()> {
    match slot {
        None => *slot = Some(contrib),
        Some(existing) => existing.add_scaled(&contrib, T::one())?,
    }
    Ok(())
}
