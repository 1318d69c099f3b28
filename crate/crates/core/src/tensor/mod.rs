//! Reverse-mode differentiation over real tensors, with complex tensors
//! carried as (re, im) pairs of real nodes.
//!
//! Every op appends a node to a [`Tape`]; [`Tape::backward`] replays the tape
//! in reverse recording order. Values and gradients are `f64`; persistent
//! parameters are stored as `f32` by [`crate::params::ParamStore`] and widened
//! when they are loaded onto a tape.

mod complex;
mod kernels;
mod ops;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::math;

pub use kernels::{conv2d_backward, conv2d_forward};
pub use complex::AMPLITUDE_TIE;
pub use ops::{argmax_per_channel, argmax_per_channel_within, AMPLITUDE_FLOOR, BCE_CLAMP, NORM_EPS};

/// Dense row-major real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl RealTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err!("shape {:?} needs {} values, got {}", shape, n, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![v; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn numel(&self) -> usize {
        self.data.len()
    }
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value at a multi-index.
    pub fn at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, (&x, &d)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(x < d, "index {x} out of bounds for axis {i} of extent {d}");
            off = off * d + x;
        }
        self.data[off]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err!("cannot reshape {:?} to {:?}", self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// Complex tensor stored as separate real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTensor {
    pub re: RealTensor,
    pub im: RealTensor,
}

impl ComplexTensor {
    pub fn new(re: RealTensor, im: RealTensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(shape_err!("re {:?} vs im {:?}", re.shape(), im.shape()));
        }
        Ok(Self { re, im })
    }

    pub fn from_polar(amplitude: &RealTensor, phase: &RealTensor) -> Result<Self> {
        if amplitude.shape() != phase.shape() {
            return Err(shape_err!("amplitude {:?} vs phase {:?}", amplitude.shape(), phase.shape()));
        }
        let re = amplitude.data().iter().zip(phase.data()).map(|(&a, &p)| a * math::cos(p)).collect();
        let im = amplitude.data().iter().zip(phase.data()).map(|(&a, &p)| a * math::sin(p)).collect();
        Ok(Self {
            re: RealTensor { shape: amplitude.shape.clone(), data: re },
            im: RealTensor { shape: amplitude.shape.clone(), data: im },
        })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    /// Elementwise modulus.
    pub fn amplitude(&self) -> RealTensor {
        let data = self.re.data.iter().zip(&self.im.data).map(|(&r, &i)| math::hypot(r, i)).collect();
        RealTensor { shape: self.re.shape.clone(), data }
    }

    /// Elementwise argument in (−π, π].
    pub fn phase(&self) -> RealTensor {
        let data = self
            .re
            .data
            .iter()
            .zip(&self.im.data)
            .map(|(&r, &i)| {
                let p = math::atan2(i, r);
                // atan2 returns −π for (negative, −0.0)
                if p <= -math::PI {
                    math::PI
                } else {
                    p
                }
            })
            .collect();
        RealTensor { shape: self.re.shape.clone(), data }
    }
}

/// Handle to a real node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a complex value: a pair of real nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

/// Backward rule for ops defined outside this module.
pub trait CustomBackward {
    fn inputs(&self) -> &[Var];
    /// Returns one gradient buffer per input (same order as [`Self::inputs`]).
    fn backward(&self, inputs: &[&RealTensor], output: &RealTensor, grad_out: &[f64]) -> Vec<Vec<f64>>;
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Relu(Var),
    Magnitude(Var, Var),
    Arg(Var, Var),
    Conv2d { x: Var, w: Var, bias: Option<Var>, k: usize, cin: usize, cout: usize, h: usize, w_: usize },
    InstanceNorm { x: Var, channels: usize, n: usize, inv_std: Vec<f64> },
    ChannelScale { x: Var, s: Var },
    ChannelShift { x: Var, b: Var },
    MeanSpatial { x: Var, channels: usize, n: usize },
    Gather { x: Var, n: usize, idx: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var>, out: usize, inp: usize },
    Narrow { x: Var, outer: usize, axis_len: usize, inner: usize, start: usize, len: usize },
    Reshape(Var),
    Concat(Vec<Var>),
    Sum(Var),
    BceWithLogits { logit: Var, label: f64 },
    Bce { p: Var, label: f64 },
    CrossEntropy { logits: Var, label: usize },
    Custom(Box<dyn CustomBackward>),
}

pub(crate) struct Node {
    pub(crate) value: RealTensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Linear record of operations for one forward pass.
///
/// A tape and its tensors belong to one worker; independent tapes can run on
/// separate threads and their [`Gradients`] are merged by the caller.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by one [`Tape::backward`] call, indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
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

    pub(crate) fn push(&mut self, value: RealTensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; gradients are reported for it when `requires_grad`.
    pub fn leaf(&mut self, value: RealTensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: RealTensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: RealTensor) -> Var {
        self.leaf(value, false)
    }

    pub fn complex_leaf(&mut self, value: ComplexTensor, requires_grad: bool) -> CVar {
        let re = self.leaf(value.re, requires_grad);
        let im = self.leaf(value.im, requires_grad);
        CVar { re, im }
    }

    pub fn value(&self, v: Var) -> &RealTensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn complex_value(&self, z: CVar) -> ComplexTensor {
        ComplexTensor { re: self.value(z.re).clone(), im: self.value(z.im).clone() }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        let t = self.value(v);
        debug_assert_eq!(t.numel(), 1);
        t.data()[0]
    }

    /// Replays the tape in reverse from a one-element output and returns the
    /// gradient of that output with respect to every `requires_grad` leaf.
    /// Leaves the output does not depend on receive zero gradients.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).numel() != 1 {
            return Err(shape_err!("backward needs a scalar output, got {:?}", self.shape(output)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            self.backward_node(id, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[id].is_none() {
                grads[id] = Some(vec![0.0; node.value.numel()]);
            } else if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}
