//! Scalar reverse-mode differentiation on a Wengert tape.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Unary;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpId {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Unary(Unary),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: OpId,
    /// Up to two parent indices; unused slots repeat the node's own index
    /// with a zero partial.
    inputs: [usize; 2],
    partials: [T; 2],
    value: T,
}

/// Append-only record of a scalar computation.
///
/// Every node stores its primal and the local partials with respect to its
/// inputs, so the backward sweep never re-evaluates anything.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<Vec<usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    index: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.index, self.value())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: OpId, inputs: [usize; 2], partials: [T; 2], value: T) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            inputs,
            partials,
            value,
        });
        nodes.len() - 1
    }

    fn leaf(&self, value: T) -> usize {
        let idx = self.len();
        self.push(OpId::Leaf, [idx, idx], [T::zero(), T::zero()], value)
    }

    /// A leaf that is not differentiated.
    pub fn constant(&self, value: T) -> Var<'_, T> {
        Var {
            tape: self,
            index: self.leaf(value),
        }
    }

    /// A leaf whose adjoint is reported by [`Tape::gradient`], in
    /// registration order.
    pub fn parameter(&self, value: T) -> Var<'_, T> {
        let index = self.leaf(value);
        self.params.borrow_mut().push(index);
        Var { tape: self, index }
    }

    pub fn parameters(&self, values: &[T]) -> Vec<Var<'_, T>> {
        values.iter().map(|&v| self.parameter(v)).collect()
    }

    fn binary(&self, op: OpId, a: usize, b: usize) -> usize {
        let (va, vb) = {
            let nodes = self.nodes.borrow();
            (nodes[a].value, nodes[b].value)
        };
        let (value, pa, pb) = match op {
            OpId::Add => (va + vb, T::one(), T::one()),
            OpId::Sub => (va - vb, T::one(), -T::one()),
            OpId::Mul => (va * vb, vb, va),
            OpId::Div => {
                let inv = T::one() / vb;
                (va * inv, inv, -va * inv * inv)
            }
            _ => unreachable!("not a binary op"),
        };
        self.push(op, [a, b], [pa, pb], value)
    }

    fn unary(&self, op: Unary, a: usize) -> usize {
        let x = self.nodes.borrow()[a].value;
        let (value, d) = op.value_and_derivative(x);
        self.push(OpId::Unary(op), [a, a], [d, T::zero()], value)
    }

    /// Reverse sweep from `output`. Returns `∂output/∂p` for every parameter
    /// registered on this tape.
    ///
    /// Fails with [`Error::NonFinite`] naming the first node whose primal is
    /// not finite.
    pub fn gradient(&self, output: Var<'_, T>) -> Result<Vec<T>> {
        let nodes = self.nodes.borrow();
        if let Some((i, node)) = nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()) {
            return Err(Error::NonFinite {
                what: "tape forward pass".into(),
                index: format!("node {i} ({:?})", node.op),
            });
        }
        let mut adjoint = vec![T::zero(); output.index + 1];
        adjoint[output.index] = T::one();
        for i in (0..=output.index).rev() {
            let node = &nodes[i];
            if node.op == OpId::Leaf {
                continue;
            }
            let bar = adjoint[i];
            for k in 0..2 {
                let p = node.partials[k];
                if !p.is_zero() {
                    adjoint[node.inputs[k]] += bar * p;
                }
            }
        }
        Ok(self
            .params
            .borrow()
            .iter()
            .map(|&p| {
                if p <= output.index {
                    adjoint[p]
                } else {
                    T::zero()
                }
            })
            .collect())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn value(&self) -> T {
        self.tape.nodes.borrow()[self.index].value
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn apply(self, op: Unary) -> Self {
        Var {
            tape: self.tape,
            index: self.tape.unary(op, self.index),
        }
    }

    pub fn tanh(self) -> Self {
        self.apply(Unary::Tanh)
    }
    pub fn gelu(self) -> Self {
        self.apply(Unary::Gelu)
    }
    pub fn exp(self) -> Self {
        self.apply(Unary::Exp)
    }
    pub fn ln(self) -> Self {
        self.apply(Unary::Ln)
    }
    pub fn sin(self) -> Self {
        self.apply(Unary::Sin)
    }
    pub fn cos(self) -> Self {
        self.apply(Unary::Cos)
    }
    pub fn sqrt(self) -> Self {
        self.apply(Unary::Sqrt)
    }
    pub fn square(self) -> Self {
        self.apply(Unary::Square)
    }

    fn lift(self, c: T) -> Self {
        self.tape.constant(c)
    }

    fn bin(self, op: OpId, rhs: Self) -> Self {
        debug_assert!(
            std::ptr::eq(self.tape, rhs.tape),
            "vars from different tapes"
        );
        Var {
            tape: self.tape,
            index: self.tape.binary(op, self.index, rhs.index),
        }
    }
}

macro_rules! var_binop {
    ($tr:ident, $m:ident, $op:expr) => {
        impl<'t, T: Scalar> $tr for Var<'t, T> {
            type Output = Var<'t, T>;
            fn $m(self, rhs: Self) -> Self {
                self.bin($op, rhs)
            }
        }
        impl<'t, T: Scalar> $tr<T> for Var<'t, T> {
            type Output = Var<'t, T>;
            fn $m(self, rhs: T) -> Self {
                let c = self.lift(rhs);
                self.bin($op, c)
            }
        }
    };
}
var_binop!(Add, add, OpId::Add);
var_binop!(Sub, sub, OpId::Sub);
var_binop!(Mul, mul, OpId::Mul);
var_binop!(Div, div, OpId::Div);

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Var<'t, T>;
    fn neg(self) -> Self {
        self.apply(Unary::Neg)
    }
}
