//! Reverse-mode gradient tape over the operation set the reasoner and loss
//! need: `linear`, `concat`, `add`, `scale`, `dot`, `sum_list`, `relu`,
//! `logsumexp`, and `neg_logsoftmax_pick`.
//!
//! A tape is built per query (topology changes with masking and pruning and
//! is never reused). Leaves are either constants or slices of named
//! parameters; [`Tape::backward`] walks the nodes once in reverse and returns
//! the accumulated gradient per parameter leaf. Second-order derivatives are
//! not supported: a tape can run backward once.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::params::{ParamRef, ParamStore};
use crate::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValId(u32);

impl ValId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already ran backward")]
    BackwardConsumed,
    #[error("logsumexp/pick needs at least one score")]
    EmptyScores,
    #[error("pick target out of range")]
    BadPickTarget,
}

/// Which softmax slot is the target: a taped score or one of the implicit
/// zero scores standing in for unreached entities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PickTarget {
    Input(usize),
    ImplicitZero,
}

#[derive(Debug)]
enum Node {
    Constant,
    Param { binding: usize },
    Linear { w: ValId, x: ValId },
    Concat { a: ValId, b: ValId },
    Add { a: ValId, b: ValId },
    Scale { c: f64, x: ValId },
    Dot { a: ValId, b: ValId },
    SumList { xs: Vec<ValId> },
    Relu { x: ValId },
    LogSumExp { xs: Vec<ValId>, zeros: usize },
    NegLogSoftmaxPick { xs: Vec<ValId>, zeros: usize, target: PickTarget },
}

/// Gradient of the loss with respect to one bound parameter slice.
#[derive(Clone, Debug)]
pub struct LeafGrad {
    pub param: ParamRef,
    pub grad: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    vals: Vec<Tensor>,
    bindings: Vec<ParamRef>,
    consumed: bool,
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

    pub fn value(&self, id: ValId) -> &Tensor {
        &self.vals[id.index()]
    }

    fn push(&mut self, node: Node, value: Tensor) -> ValId {
        let id = ValId(self.vals.len() as u32);
        self.nodes.push(node);
        self.vals.push(value);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> ValId {
        self.push(Node::Constant, value)
    }

    /// Binds a parameter slice as a leaf; its gradient is reported by
    /// [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore, r: ParamRef) -> ValId {
        let value = Tensor::new(r.shape.clone(), store.slice(&r).to_vec());
        let binding = self.bindings.len();
        self.bindings.push(r);
        self.push(Node::Param { binding }, value)
    }

    /// `y = W x` for `W: [m, n]`, `x: [n]`.
    pub fn linear(&mut self, w: ValId, x: ValId) -> Result<ValId, TapeError> {
        let (ws, xs) = (self.vals[w.index()].shape(), self.vals[x.index()].shape());
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(TapeError::ShapeMismatch {
                op: "linear",
                detail: format!("W {ws:?} vs x {xs:?}"),
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let wd = self.vals[w.index()].data();
        let xd = self.vals[x.index()].data();
        let mut y = vec![0.0; m];
        for i in 0..m {
            let row = &wd[i * n..(i + 1) * n];
            y[i] = row.iter().zip(xd).map(|(a, b)| a * b).sum();
        }
        Ok(self.push(Node::Linear { w, x }, Tensor::vector(y)))
    }

    pub fn concat(&mut self, a: ValId, b: ValId) -> Result<ValId, TapeError> {
        let (sa, sb) = (self.vals[a.index()].shape(), self.vals[b.index()].shape());
        if sa.len() != 1 || sb.len() != 1 {
            return Err(TapeError::ShapeMismatch {
                op: "concat",
                detail: format!("{sa:?} vs {sb:?}"),
            });
        }
        let mut data = self.vals[a.index()].data().to_vec();
        data.extend_from_slice(self.vals[b.index()].data());
        Ok(self.push(Node::Concat { a, b }, Tensor::vector(data)))
    }

    pub fn add(&mut self, a: ValId, b: ValId) -> Result<ValId, TapeError> {
        let (sa, sb) = (self.vals[a.index()].shape(), self.vals[b.index()].shape());
        if sa != sb {
            return Err(TapeError::ShapeMismatch { op: "add", detail: format!("{sa:?} vs {sb:?}") });
        }
        let data = self.vals[a.index()]
            .data()
            .iter()
            .zip(self.vals[b.index()].data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = sa.to_vec();
        Ok(self.push(Node::Add { a, b }, Tensor::new(shape, data)))
    }

    pub fn scale(&mut self, c: f64, x: ValId) -> ValId {
        let t = &self.vals[x.index()];
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| c * v).collect());
        self.push(Node::Scale { c, x }, out)
    }

    pub fn dot(&mut self, a: ValId, b: ValId) -> Result<ValId, TapeError> {
        let (sa, sb) = (self.vals[a.index()].shape(), self.vals[b.index()].shape());
        if sa.len() != 1 || sa != sb {
            return Err(TapeError::ShapeMismatch { op: "dot", detail: format!("{sa:?} vs {sb:?}") });
        }
        let y = self.vals[a.index()]
            .data()
            .iter()
            .zip(self.vals[b.index()].data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Node::Dot { a, b }, Tensor::scalar(y)))
    }

    /// Elementwise sum of a non-empty list of same-shaped tensors.
    pub fn sum_list(&mut self, xs: &[ValId]) -> Result<ValId, TapeError> {
        let Some((&first, rest)) = xs.split_first() else {
            return Err(TapeError::ShapeMismatch {
                op: "sum_list",
                detail: "empty input list".into(),
            });
        };
        let shape = self.vals[first.index()].shape().to_vec();
        let mut data = self.vals[first.index()].data().to_vec();
        for &x in rest {
            let t = &self.vals[x.index()];
            if t.shape() != shape {
                return Err(TapeError::ShapeMismatch {
                    op: "sum_list",
                    detail: format!("{:?} vs {shape:?}", t.shape()),
                });
            }
            for (acc, v) in data.iter_mut().zip(t.data()) {
                *acc += v;
            }
        }
        Ok(self.push(Node::SumList { xs: xs.to_vec() }, Tensor::new(shape, data)))
    }

    pub fn relu(&mut self, x: ValId) -> ValId {
        let t = &self.vals[x.index()];
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| v.max(0.0)).collect());
        self.push(Node::Relu { x }, out)
    }

    /// `log(sum_i exp(s_i) + zeros * exp(0))` over scalar scores, numerically
    /// stabilized. `zeros` counts implicit zero scores appended to the pool.
    pub fn logsumexp(&mut self, xs: &[ValId], zeros: usize) -> Result<ValId, TapeError> {
        let value = self.lse_value(xs, zeros)?;
        Ok(self.push(Node::LogSumExp { xs: xs.to_vec(), zeros }, Tensor::scalar(value)))
    }

    /// Multi-class log-loss against the softmax over `xs` plus `zeros`
    /// implicit zero scores: `logsumexp(all) - s_target`.
    pub fn neg_logsoftmax_pick(
        &mut self,
        xs: &[ValId],
        zeros: usize,
        target: PickTarget,
    ) -> Result<ValId, TapeError> {
        let lse = self.lse_value(xs, zeros)?;
        let target_score = match target {
            PickTarget::Input(i) => {
                let id = *xs.get(i).ok_or(TapeError::BadPickTarget)?;
                self.scalar_at(id)?
            }
            PickTarget::ImplicitZero => {
                if zeros == 0 {
                    return Err(TapeError::BadPickTarget);
                }
                0.0
            }
        };
        let node = Node::NegLogSoftmaxPick { xs: xs.to_vec(), zeros, target };
        Ok(self.push(node, Tensor::scalar(lse - target_score)))
    }

    fn scalar_at(&self, id: ValId) -> Result<f64, TapeError> {
        self.vals[id.index()].as_scalar().ok_or_else(|| TapeError::ShapeMismatch {
            op: "pick",
            detail: format!("score has shape {:?}", self.vals[id.index()].shape()),
        })
    }

    fn lse_value(&self, xs: &[ValId], zeros: usize) -> Result<f64, TapeError> {
        if xs.is_empty() && zeros == 0 {
            return Err(TapeError::EmptyScores);
        }
        let mut m = if zeros > 0 { 0.0 } else { f64::NEG_INFINITY };
        for &x in xs {
            m = m.max(self.scalar_at(x)?);
        }
        let mut sum = zeros as f64 * math::exp(-m);
        for &x in xs {
            sum += math::exp(self.scalar_at(x)? - m);
        }
        Ok(m + math::ln(sum))
    }

    /// Stabilized softmax over taped scores plus implicit zeros; returns the
    /// probabilities of the taped scores only.
    fn softmax_probs(&self, xs: &[ValId], zeros: usize) -> Vec<f64> {
        let lse = self.lse_value(xs, zeros).expect("validated at forward time");
        xs.iter().map(|&x| math::exp(self.vals[x.index()].as_scalar().unwrap() - lse)).collect()
    }

    /// Reverse pass from a scalar loss. Returns the gradient for every bound
    /// parameter leaf (untouched parameters simply don't appear). A tape can
    /// only run backward once.
    pub fn backward(&mut self, loss: ValId) -> Result<Vec<LeafGrad>, TapeError> {
        if self.consumed {
            return Err(TapeError::BackwardConsumed);
        }
        self.consumed = true;
        if !self.vals[loss.index()].is_scalar() {
            return Err(TapeError::NonScalarLoss(self.vals[loss.index()].shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index()] = Some(vec![1.0]);

        let touch = |grads: &mut Vec<Option<Vec<f64>>>, id: ValId, len: usize| {
            grads[id.index()].get_or_insert_with(|| vec![0.0; len]);
        };

        for i in (0..=loss.index()).rev() {
            let Some(gy) = grads[i].take() else { continue };
            match &self.nodes[i] {
                Node::Constant | Node::Param { .. } => {
                    grads[i] = Some(gy); // keep leaf gradients for collection
                }
                Node::Linear { w, x } => {
                    let (w, x) = (*w, *x);
                    let n = self.vals[x.index()].len();
                    let m = gy.len();
                    touch(&mut grads, w, m * n);
                    touch(&mut grads, x, n);
                    let wd = self.vals[w.index()].data().to_vec();
                    let xd = self.vals[x.index()].data().to_vec();
                    {
                        let gw = grads[w.index()].as_mut().unwrap();
                        for r in 0..m {
                            for c in 0..n {
                                gw[r * n + c] += gy[r] * xd[c];
                            }
                        }
                    }
                    let gx = grads[x.index()].as_mut().unwrap();
                    for c in 0..n {
                        let mut acc = 0.0;
                        for r in 0..m {
                            acc += wd[r * n + c] * gy[r];
                        }
                        gx[c] += acc;
                    }
                }
                Node::Concat { a, b } => {
                    let (a, b) = (*a, *b);
                    let la = self.vals[a.index()].len();
                    let lb = self.vals[b.index()].len();
                    touch(&mut grads, a, la);
                    touch(&mut grads, b, lb);
                    for (g, v) in grads[a.index()].as_mut().unwrap().iter_mut().zip(&gy[..la]) {
                        *g += v;
                    }
                    for (g, v) in grads[b.index()].as_mut().unwrap().iter_mut().zip(&gy[la..]) {
                        *g += v;
                    }
                    debug_assert_eq!(gy.len(), la + lb);
                }
                Node::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    touch(&mut grads, a, gy.len());
                    touch(&mut grads, b, gy.len());
                    for (g, v) in grads[a.index()].as_mut().unwrap().iter_mut().zip(&gy) {
                        *g += v;
                    }
                    for (g, v) in grads[b.index()].as_mut().unwrap().iter_mut().zip(&gy) {
                        *g += v;
                    }
                }
                Node::Scale { c, x } => {
                    let (c, x) = (*c, *x);
                    touch(&mut grads, x, gy.len());
                    for (g, v) in grads[x.index()].as_mut().unwrap().iter_mut().zip(&gy) {
                        *g += c * v;
                    }
                }
                Node::Dot { a, b } => {
                    let (a, b) = (*a, *b);
                    let len = self.vals[a.index()].len();
                    touch(&mut grads, a, len);
                    touch(&mut grads, b, len);
                    let ad = self.vals[a.index()].data().to_vec();
                    let bd = self.vals[b.index()].data().to_vec();
                    let g0 = gy[0];
                    for (g, v) in grads[a.index()].as_mut().unwrap().iter_mut().zip(&bd) {
                        *g += g0 * v;
                    }
                    for (g, v) in grads[b.index()].as_mut().unwrap().iter_mut().zip(&ad) {
                        *g += g0 * v;
                    }
                }
                Node::SumList { xs } => {
                    for &x in xs.clone().iter() {
                        touch(&mut grads, x, gy.len());
                        for (g, v) in grads[x.index()].as_mut().unwrap().iter_mut().zip(&gy) {
                            *g += v;
                        }
                    }
                }
                Node::Relu { x } => {
                    let x = *x;
                    touch(&mut grads, x, gy.len());
                    let xd = self.vals[x.index()].data().to_vec();
                    let gx = grads[x.index()].as_mut().unwrap();
                    for j in 0..gy.len() {
                        if xd[j] > 0.0 {
                            gx[j] += gy[j];
                        }
                    }
                }
                Node::LogSumExp { xs, zeros } => {
                    let (xs, zeros) = (xs.clone(), *zeros);
                    let probs = self.softmax_probs(&xs, zeros);
                    let g0 = gy[0];
                    for (&x, p) in xs.iter().zip(probs) {
                        touch(&mut grads, x, 1);
                        grads[x.index()].as_mut().unwrap()[0] += g0 * p;
                    }
                }
                Node::NegLogSoftmaxPick { xs, zeros, target } => {
                    let (xs, zeros, target) = (xs.clone(), *zeros, *target);
                    let probs = self.softmax_probs(&xs, zeros);
                    let g0 = gy[0];
                    for (j, (&x, p)) in xs.iter().zip(probs).enumerate() {
                        let indicator = matches!(target, PickTarget::Input(t) if t == j);
                        touch(&mut grads, x, 1);
                        grads[x.index()].as_mut().unwrap()[0] +=
                            g0 * (p - if indicator { 1.0 } else { 0.0 });
                    }
                }
            }
        }

        let mut out = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::Param { binding } = node {
                if let Some(grad) = grads[i].take() {
                    out.push(LeafGrad { param: self.bindings[*binding].clone(), grad });
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use approx::assert_relative_eq;

    fn store_with(name: &str, shape: Vec<usize>, data: Vec<f64>) -> (ParamStore, ParamRef) {
        let mut store = ParamStore::new();
        let id = store.add(name, shape, data);
        let r = store.full_ref(id);
        (store, r)
    }

    #[test]
    fn dot_backward_is_the_other_operand() {
        let (store, wref) = store_with("w", vec![3], vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, wref);
        let x = tape.constant(Tensor::vector(vec![4.0, 5.0, 6.0]));
        let y = tape.dot(w, x).unwrap();
        assert_eq!(tape.value(y).as_scalar(), Some(32.0));
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].grad, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn logsumexp_uniform_case() {
        let mut tape = Tape::new();
        let xs: Vec<ValId> = (0..4).map(|_| tape.constant(Tensor::scalar(0.0))).collect();
        let y = tape.logsumexp(&xs, 0).unwrap();
        assert_relative_eq!(tape.value(y).as_scalar().unwrap(), 4.0_f64.ln(), epsilon = 1e-12);

        let mut tape2 = Tape::new();
        let y2 = tape2.logsumexp(&[], 4).unwrap();
        assert_relative_eq!(tape2.value(y2).as_scalar().unwrap(), 4.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn pick_matches_manual_loss() {
        // scores (10, 0, 0), target 0 -> ln(1 + 2 e^-10)
        let mut tape = Tape::new();
        let s0 = tape.constant(Tensor::scalar(10.0));
        let s1 = tape.constant(Tensor::scalar(0.0));
        let s2 = tape.constant(Tensor::scalar(0.0));
        let loss = tape.neg_logsoftmax_pick(&[s0, s1, s2], 0, PickTarget::Input(0)).unwrap();
        let want = (1.0_f64 + 2.0 * (-10.0_f64).exp()).ln();
        assert_relative_eq!(tape.value(loss).as_scalar().unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn pick_gradient_is_softmax_minus_onehot() {
        let (store, sref) = store_with("s", vec![2], vec![1.0, -1.0]);
        let mut tape = Tape::new();
        let s = tape.param(&store, sref);
        // split the vector into scalar scores via dot with basis vectors
        let e0 = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let e1 = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let s0 = tape.dot(s, e0).unwrap();
        let s1 = tape.dot(s, e1).unwrap();
        let loss = tape.neg_logsoftmax_pick(&[s0, s1], 0, PickTarget::Input(0)).unwrap();
        let grads = tape.backward(loss).unwrap();
        let z = (1.0_f64).exp() + (-1.0_f64).exp();
        let p0 = (1.0_f64).exp() / z;
        let p1 = (-1.0_f64).exp() / z;
        assert_relative_eq!(grads[0].grad[0], p0 - 1.0, epsilon = 1e-12);
        assert_relative_eq!(grads[0].grad[1], p1, epsilon = 1e-12);
    }

    #[test]
    fn untouched_param_has_no_grad_entry() {
        let mut store = ParamStore::new();
        let a = store.add("a", vec![2], vec![1.0, 2.0]);
        let b = store.add("b", vec![2], vec![3.0, 4.0]);
        let aref = store.full_ref(a);
        let _bref = store.full_ref(b);
        let mut tape = Tape::new();
        let av = tape.param(&store, aref);
        let c = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let y = tape.dot(av, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[0].param.id, a);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let err = tape.add(a, b).unwrap_err();
        assert!(matches!(err, TapeError::ShapeMismatch { op: "add", .. }));
        let w = tape.constant(Tensor::new(vec![2, 2], vec![0.0; 4]));
        let err = tape.linear(w, b).unwrap_err();
        assert!(matches!(err, TapeError::ShapeMismatch { op: "linear", .. }));
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(1.0));
        let y = tape.scale(2.0, x);
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), TapeError::BackwardConsumed);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TapeError::NonScalarLoss(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = x . x  => dy/dx = 2x
        let (store, xref) = store_with("x", vec![2], vec![3.0, -2.0]);
        let mut tape = Tape::new();
        let x = tape.param(&store, xref);
        let y = tape.dot(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads[0].grad, vec![6.0, -4.0]);
    }
}
