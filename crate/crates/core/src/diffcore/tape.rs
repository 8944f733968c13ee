use std::fmt;
use std::sync::Arc;

use super::tensor::{log_softmax_slice, softmax_slice, Tensor};
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation whose forward and backward rules live outside this module.
pub trait CustomOp: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Vector-Jacobian product: one gradient per input, each shaped like
    /// that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

/// Recorded operation kinds. Softmax-style ops act on the last axis.
#[derive(Clone, Debug)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    /// `[m, k] x [k, n] -> [m, n]`
    MatMul,
    /// `[m, n] x [n] -> [m]`
    MatVec,
    Tanh,
    Exp,
    Softmax,
    LogSoftmax,
    /// Entries of a vector or rows of a matrix.
    Gather(Vec<usize>),
    /// Along axis 0; operands share their trailing shape.
    Concat,
    /// Mean over every element; scalar result.
    Mean,
    /// `[m, n] -> [n]`
    MeanRows,
    Sum,
    Scale(f64),
    Reshape(Vec<usize>),
    Custom(Arc<dyn CustomOp>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::MatVec => "matvec",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Gather(_) => "gather",
            OpKind::Concat => "concat",
            OpKind::Mean => "mean",
            OpKind::MeanRows => "mean_rows",
            OpKind::Sum => "sum",
            OpKind::Scale(_) => "scale",
            OpKind::Reshape(_) => "reshape",
            OpKind::Custom(op) => op.name(),
        }
    }
}

#[derive(Debug)]
struct Node {
    kind: Option<OpKind>,
    operands: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Eager tape for reverse-mode differentiation.
///
/// Every `apply` computes its value immediately and appends a node, so node
/// ids are already in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that feeds it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, or zeros shaped like `like` when `id` does not
    /// reach the root.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> Error {
    let shapes = shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ");
    Error::ShapeMismatch { op, shapes }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(None, Vec::new(), value, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(None, Vec::new(), value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, kind: Option<OpKind>, operands: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            kind,
            operands,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn apply(&mut self, kind: OpKind, operands: &[NodeId]) -> Result<NodeId> {
        for id in operands {
            if id.0 >= self.nodes.len() {
                return Err(Error::invalid(format!("{}: unknown node {}", kind.name(), id.0)));
            }
        }
        let value = {
            let inputs: Vec<&Tensor> = operands.iter().map(|id| &self.nodes[id.0].value).collect();
            forward(&kind, &inputs)?
        };
        let requires_grad = operands.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(Some(kind), operands.to_vec(), value, requires_grad))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn matvec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatVec, &[a, v])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Softmax, &[a])
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::LogSoftmax, &[a])
    }

    pub fn gather(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::Gather(indices), &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MeanRows, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(factor), &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::Reshape(shape), &[a])
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, operands: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::Custom(op), operands)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::from_fn(root_value.shape(), |_| 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            let Some(kind) = &node.kind else { continue };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.operands.iter().map(|id| &self.nodes[id.0].value).collect();
            let needs: Vec<bool> = node
                .operands
                .iter()
                .map(|id| self.nodes[id.0].requires_grad)
                .collect();
            let input_grads = backward_rule(kind, &inputs, &node.value, &grad, &needs);
            for ((operand, g), need) in node.operands.iter().zip(input_grads).zip(needs) {
                if !need {
                    continue;
                }
                match &mut grads[operand.0] {
                    Some(acc) => acc.accumulate(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(grad);
        }
        Ok(Gradients { grads })
    }
}

fn forward(kind: &OpKind, x: &[&Tensor]) -> Result<Tensor> {
    let name = kind.name();
    let arity = |n: usize| -> Result<()> {
        if x.len() == n {
            Ok(())
        } else {
            Err(Error::invalid(format!("{name}: expected {n} operands, got {}", x.len())))
        }
    };
    match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            arity(2)?;
            let (a, b) = (x[0], x[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(name, &[a.shape(), b.shape()]));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&p, &q)| match kind {
                    OpKind::Add => p + q,
                    OpKind::Sub => p - q,
                    _ => p * q,
                })
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        OpKind::MatMul => {
            arity(2)?;
            let (a, b) = (x[0], x[1]);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(mismatch(name, &[a.shape(), b.shape()]));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o += aip * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)
        }
        OpKind::MatVec => {
            arity(2)?;
            let (a, v) = (x[0], x[1]);
            if a.rank() != 2 || v.rank() != 1 || a.shape()[1] != v.shape()[0] {
                return Err(mismatch(name, &[a.shape(), v.shape()]));
            }
            let m = a.shape()[0];
            let out = (0..m)
                .map(|i| a.row(i).iter().zip(v.data()).map(|(p, q)| p * q).sum())
                .collect();
            Ok(Tensor::vector(out))
        }
        OpKind::Tanh => {
            arity(1)?;
            Ok(x[0].map(f64::tanh))
        }
        OpKind::Exp => {
            arity(1)?;
            Ok(x[0].map(f64::exp))
        }
        OpKind::Softmax | OpKind::LogSoftmax => {
            arity(1)?;
            let a = x[0];
            if a.rank() == 0 || a.rank() > 2 || a.last_dim() == 0 {
                return Err(mismatch(name, &[a.shape()]));
            }
            let f = if matches!(kind, OpKind::Softmax) {
                softmax_slice
            } else {
                log_softmax_slice
            };
            let data = (0..a.outer_len()).flat_map(|i| f(a.row(i))).collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        OpKind::Gather(indices) => {
            arity(1)?;
            let a = x[0];
            let (len, width) = match a.rank() {
                1 => (a.numel(), 1),
                2 => (a.shape()[0], a.shape()[1]),
                _ => return Err(mismatch(name, &[a.shape()])),
            };
            if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
                return Err(Error::ShapeMismatch {
                    op: "gather",
                    shapes: format!("index {bad} out of range for shape {:?}", a.shape()),
                });
            }
            let data = indices
                .iter()
                .flat_map(|&i| a.data()[i * width..(i + 1) * width].iter().copied())
                .collect();
            let shape = if a.rank() == 1 {
                vec![indices.len()]
            } else {
                vec![indices.len(), width]
            };
            Tensor::new(shape, data)
        }
        OpKind::Concat => {
            if x.is_empty() {
                return Err(Error::invalid("concat: no operands"));
            }
            let trailing = &x[0].shape()[1.min(x[0].rank())..];
            if x[0].rank() == 0 || x.iter().any(|t| t.rank() != x[0].rank() || &t.shape()[1..] != trailing) {
                let shapes: Vec<&[usize]> = x.iter().map(|t| t.shape()).collect();
                return Err(mismatch(name, &shapes));
            }
            let lead: usize = x.iter().map(|t| t.shape()[0]).sum();
            let mut shape = vec![lead];
            shape.extend_from_slice(trailing);
            let data = x.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::new(shape, data)
        }
        OpKind::Mean => {
            arity(1)?;
            let a = x[0];
            if a.numel() == 0 {
                return Err(mismatch(name, &[a.shape()]));
            }
            Ok(Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64))
        }
        OpKind::MeanRows => {
            arity(1)?;
            let a = x[0];
            if a.rank() != 2 || a.shape()[0] == 0 {
                return Err(mismatch(name, &[a.shape()]));
            }
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let mut out = vec![0.0; n];
            for i in 0..m {
                for (o, v) in out.iter_mut().zip(a.row(i)) {
                    *o += v;
                }
            }
            Ok(Tensor::vector(out.into_iter().map(|v| v / m as f64).collect()))
        }
        OpKind::Sum => {
            arity(1)?;
            Ok(Tensor::scalar(x[0].data().iter().sum()))
        }
        OpKind::Scale(c) => {
            arity(1)?;
            Ok(x[0].map(|v| v * c))
        }
        OpKind::Reshape(shape) => {
            arity(1)?;
            let n: usize = shape.iter().product();
            if n != x[0].numel() {
                return Err(mismatch(name, &[x[0].shape(), shape]));
            }
            x[0].reshaped(shape)
        }
        OpKind::Custom(op) => op.forward(x),
    }
}

fn backward_rule(kind: &OpKind, x: &[&Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Vec<Tensor> {
    let zeros_like = |t: &Tensor| Tensor::zeros(t.shape());
    match kind {
        OpKind::Add => vec![g.clone(), g.clone()],
        OpKind::Sub => vec![g.clone(), g.map(|v| -v)],
        OpKind::Mul => {
            let ga = Tensor::from_fn(g.shape(), |i| g.data()[i] * x[1].data()[i]);
            let gb = Tensor::from_fn(g.shape(), |i| g.data()[i] * x[0].data()[i]);
            vec![ga, gb]
        }
        OpKind::MatMul => {
            let (a, b) = (x[0], x[1]);
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let (ad, bd, gd) = (a.data(), b.data(), g.data());
            let mut ga = vec![0.0; m * k];
            if needs[0] {
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] = (0..n).map(|j| gd[i * n + j] * bd[p * n + j]).sum();
                    }
                }
            }
            let mut gb = vec![0.0; k * n];
            if needs[1] {
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += aip * gd[i * n + j];
                        }
                    }
                }
            }
            vec![
                Tensor::new(vec![m, k], ga).expect("matmul grad shape"),
                Tensor::new(vec![k, n], gb).expect("matmul grad shape"),
            ]
        }
        OpKind::MatVec => {
            let (a, v) = (x[0], x[1]);
            let (m, n) = (a.shape()[0], a.shape()[1]);
            let gd = g.data();
            let mut ga = vec![0.0; m * n];
            if needs[0] {
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = gd[i] * v.data()[j];
                    }
                }
            }
            let mut gv = vec![0.0; n];
            for i in 0..m {
                for (o, aij) in gv.iter_mut().zip(a.row(i)) {
                    *o += aij * gd[i];
                }
            }
            vec![
                Tensor::new(vec![m, n], ga).expect("matvec grad shape"),
                Tensor::vector(gv),
            ]
        }
        OpKind::Tanh => vec![Tensor::from_fn(g.shape(), |i| {
            let y = out.data()[i];
            g.data()[i] * (1.0 - y * y)
        })],
        OpKind::Exp => vec![Tensor::from_fn(g.shape(), |i| g.data()[i] * out.data()[i])],
        OpKind::Softmax => {
            let width = out.last_dim();
            let mut data = Vec::with_capacity(out.numel());
            for r in 0..out.outer_len() {
                let y = out.row(r);
                let gr = &g.data()[r * width..(r + 1) * width];
                let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                data.extend(y.iter().zip(gr).map(|(p, q)| p * (q - dot)));
            }
            vec![Tensor::new(out.shape().to_vec(), data).expect("softmax grad shape")]
        }
        OpKind::LogSoftmax => {
            let width = out.last_dim();
            let mut data = Vec::with_capacity(out.numel());
            for r in 0..out.outer_len() {
                let y = out.row(r);
                let gr = &g.data()[r * width..(r + 1) * width];
                let total: f64 = gr.iter().sum();
                data.extend(y.iter().zip(gr).map(|(lp, q)| q - lp.exp() * total));
            }
            vec![Tensor::new(out.shape().to_vec(), data).expect("log_softmax grad shape")]
        }
        OpKind::Gather(indices) => {
            let a = x[0];
            let width = if a.rank() == 1 { 1 } else { a.shape()[1] };
            let mut ga = zeros_like(a);
            for (slot, &i) in indices.iter().enumerate() {
                let src = &g.data()[slot * width..(slot + 1) * width];
                for (o, v) in ga.data_mut()[i * width..(i + 1) * width].iter_mut().zip(src) {
                    *o += v;
                }
            }
            vec![ga]
        }
        OpKind::Concat => {
            let mut offset = 0;
            x.iter()
                .map(|t| {
                    let n = t.numel();
                    let part = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    Tensor::new(t.shape().to_vec(), part).expect("concat grad shape")
                })
                .collect()
        }
        OpKind::Mean => {
            let n = x[0].numel() as f64;
            let v = g.item() / n;
            vec![Tensor::from_fn(x[0].shape(), |_| v)]
        }
        OpKind::MeanRows => {
            let m = x[0].shape()[0];
            let n = x[0].shape()[1];
            let scale = 1.0 / m as f64;
            vec![Tensor::from_fn(x[0].shape(), |i| g.data()[i % n] * scale)]
        }
        OpKind::Sum => {
            let v = g.item();
            vec![Tensor::from_fn(x[0].shape(), |_| v)]
        }
        OpKind::Scale(c) => vec![g.map(|v| v * c)],
        OpKind::Reshape(_) => vec![g.reshaped(x[0].shape()).expect("reshape grad shape")],
        OpKind::Custom(op) => op.backward(x, out, g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn add_forward() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![0.0; 3]));
        let s = tape.softmax(a).unwrap();
        assert!(close(tape.value(s).data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn tanh_at_origin() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![0.0]));
        let t = tape.tanh(a).unwrap();
        assert_eq!(tape.value(t).data(), &[0.0]);
    }

    #[test]
    fn matvec_shape_error_names_op() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let v = tape.leaf(Tensor::zeros(&[2]));
        let err = tape.matvec(a, v).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matvec") && msg.contains("[2, 3]") && msg.contains("[2]"), "{msg}");
    }

    #[test]
    fn mean_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]));
        let m = tape.mean(x).unwrap();
        let g = tape.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![2.0]));
        let s = tape.scale(x, 1.0).unwrap();
        let y = tape.mul(s, s).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn log_softmax_first_entry_gradient() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let ls = tape.log_softmax(s).unwrap();
        let first = tape.gather(ls, vec![0]).unwrap();
        let g = tape.backward(first).unwrap();
        assert!(close(g.get(s).unwrap().data(), &[0.5, -0.5], 1e-15));
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.tanh(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn shared_operand_accumulates() {
        // y = x*x + x  =>  dy/dx = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0]));
        let sq = tape.mul(x, x).unwrap();
        let y = tape.add(sq, x).unwrap();
        let y = tape.sum(y).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = tape.mul(c, x).unwrap();
        let y = tape.sum(y).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn gather_rows_and_concat() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let rows = tape.gather(m, vec![2, 0, 2]).unwrap();
        assert_eq!(tape.value(rows).shape(), &[3, 2]);
        assert_eq!(tape.value(rows).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let v = tape.leaf(Tensor::vector(vec![9.0]));
        let w = tape.leaf(Tensor::vector(vec![8.0, 7.0]));
        let cat = tape.concat(&[v, w]).unwrap();
        assert_eq!(tape.value(cat).data(), &[9.0, 8.0, 7.0]);
        let total = tape.sum(rows).unwrap();
        let g = tape.backward(total).unwrap();
        assert_eq!(g.get(m).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
