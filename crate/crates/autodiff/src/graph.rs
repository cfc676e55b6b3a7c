//! Dynamic tape of recorded operations with reverse-mode backward.

use crate::error::{Result, TensorError};
use crate::ops::{self, Op};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Op,
    inputs: Vec<usize>,
    /// Extra shape argument needed to replay the node (reshape target,
    /// narrow length).
    target: Vec<usize>,
    requires_grad: bool,
}

/// Append-only tape. Nodes are stored in creation order, so every input id
/// precedes its consumer and the reverse insertion order is a valid
/// topological order for backward.
///
/// Build a fresh graph for every step; parameters enter as leaves.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag is taken from the tensor.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            inputs: Vec::new(),
            target: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that accumulates a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_requires_grad(false))
    }

    fn node(&self, v: Var) -> Result<&Node> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element variable.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }

    fn record(&mut self, op: Op, inputs: &[Var], target: Vec<usize>) -> Result<Var> {
        for &v in inputs {
            self.node(v)?;
        }
        let ins: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let shape = ops::infer_shape(&op, &ins, &target)?;
        let out = ops::forward(&op, &ins, shape);
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: out,
            op,
            inputs: inputs.iter().map(|v| v.0).collect(),
            target,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add, &[a, b], Vec::new())
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub, &[a, b], Vec::new())
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul, &[a, b], Vec::new())
    }

    /// Adds `b` to every trailing block of `x`; `b.shape` must equal the
    /// trailing dims of `x.shape` (bias rows, positional tables).
    pub fn add_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        self.record(Op::AddBroadcast, &[x, b], Vec::new())
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.record(Op::Affine { scale, shift }, &[x], Vec::new())
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, 1.0, c)
    }

    /// `[..., m, k] × [k, n]` (shared right operand) or
    /// `[..., m, k] × [..., k, n]` (matching batch dims).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul, &[a, b], Vec::new())
    }

    /// `x: [N, Cin, L]`, `w: [Cout, Cin, K]`, optional `bias: [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let op = Op::Conv {
            stride: (1, stride),
            pad: (0, pad),
            one_d: true,
        };
        match bias {
            Some(b) => self.record(op, &[x, w, b], Vec::new()),
            None => self.record(op, &[x, w], Vec::new()),
        }
    }

    /// `x: [N, Cin, H, W]`, `w: [Cout, Cin, KH, KW]`, optional `bias: [Cout]`.
    /// Stride and zero padding are given per axis as `(height, width)`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let op = Op::Conv {
            stride,
            pad,
            one_d: false,
        };
        match bias {
            Some(b) => self.record(op, &[x, w, b], Vec::new()),
            None => self.record(op, &[x, w], Vec::new()),
        }
    }

    /// Sub-pixel upsampling: `[N, C*rh*rw, H, W] -> [N, C, H*rh, W*rw]`.
    pub fn pixel_shuffle(&mut self, x: Var, rh: usize, rw: usize) -> Result<Var> {
        self.record(Op::PixelShuffle { rh, rw }, &[x], Vec::new())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sigmoid, &[x], Vec::new())
    }

    /// Natural log. Non-positive inputs produce a `NonFinite` error.
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Log, &[x], Vec::new())
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.record(Op::Softmax { axis }, &[x], Vec::new())
    }

    /// Normalizes along `axis` and applies a learned gain and bias of length
    /// `shape[axis]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, axis: usize, eps: f64) -> Result<Var> {
        self.record(Op::LayerNorm { axis, eps }, &[x, gain, bias], Vec::new())
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum, &[x], Vec::new())
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Mean, &[x], Vec::new())
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.record(Op::Reshape, &[x], shape.to_vec())
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        self.record(Op::Permute { perm: perm.to_vec() }, &[x], Vec::new())
    }

    pub fn transpose(&mut self, x: Var, a: usize, b: usize) -> Result<Var> {
        let rank = self.node(x)?.value.rank();
        if a >= rank || b >= rank {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: self.shape(x).to_vec(),
                reason: format!("axes ({a}, {b}) out of range"),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: Vec::new(),
                reason: "no inputs".into(),
            });
        }
        self.record(Op::Concat { axis }, xs, Vec::new())
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.record(Op::Narrow { axis, start }, &[x], vec![len])
    }

    /// Gated linear unit `a ⊙ σ(b)`.
    pub fn glu(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Glu, &[a, b], Vec::new())
    }

    /// Splits `x` in half along `axis` and gates the first half with the
    /// second.
    pub fn glu_split(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.node(x)?.value.shape().to_vec();
        if axis >= shape.len() || shape[axis] % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "glu",
                shape,
                reason: format!("axis {axis} must have even extent"),
            });
        }
        let half = shape[axis] / 2;
        let a = self.narrow(x, axis, 0, half)?;
        let b = self.narrow(x, axis, half, half)?;
        self.glu(a, b)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.record(Op::Clamp { lo, hi }, &[x], Vec::new())
    }

    /// Mean absolute difference, a scalar.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::L1, &[a, b], Vec::new())
    }

    /// Accumulates `∂loss/∂leaf` into every leaf that requires a gradient.
    ///
    /// Calling it twice without [`Graph::zero_grad`] adds the gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.op == Op::Leaf {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].requires_grad).collect();
            let input_grads = ops::backward(&node.op, &ins, &node.value, &g, &needs);
            let inputs = node.inputs.clone();
            for (j, ig) in inputs.into_iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    /// Recomputes every non-leaf node from its recorded inputs and reports
    /// whether all saved activations are reproduced bit-exactly.
    pub fn replay_matches(&self) -> bool {
        self.nodes.iter().all(|node| {
            if node.op == Op::Leaf {
                return true;
            }
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let Ok(shape) = ops::infer_shape(&node.op, &ins, &node.target) else {
                return false;
            };
            let again = ops::forward(&node.op, &ins, shape);
            again.shape() == node.value.shape()
                && again
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }
}
