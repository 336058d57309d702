//! Tape-based reverse-mode differentiation of scalar expressions.
//!
//! Each arithmetic operation on a [`Var`] appends one node, holding its value
//! and the local partial derivatives with respect to at most two parents, to
//! the shared [`Tape`]. [`Tape::gradients`] then sweeps the tape once in
//! reverse to obtain the adjoint of every node.
//!
//! The neural fields are not recorded scalar by scalar: their outputs enter
//! the tape as leaves and the adjoints of those leaves are pushed through the
//! networks' own batched backward passes (see [`crate::nn`]).

use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;
use core::ops::{Add, Div, Mul, Neg, Sub};

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Node {
    value: f64,
    parents: [u32; 2],
    partials: [f64; 2],
    arity: u8,
    op: &'static str,
}

/// Recording of a scalar computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, op: &'static str, arity: u8, parents: [u32; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(Node {
            value,
            parents,
            partials,
            arity,
            op,
        });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// An independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, "input", 0, [0; 2], [0.0; 2])
    }

    /// A constant; identical to [`Tape::var`] but named for readability.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(value, "constant", 0, [0; 2], [0.0; 2])
    }

    /// Adjoints of every recorded node with respect to `output`.
    ///
    /// Fails if any node on the tape holds a non-finite value, naming the
    /// operation that produced it.
    pub fn gradients(&self, output: Var<'_>) -> Result<Gradients> {
        debug_assert!(core::ptr::eq(self, output.tape), "variable from another tape");
        let nodes = self.nodes.borrow();
        let end = output.index as usize + 1;
        if let Some((i, n)) = nodes[..end].iter().enumerate().find(|(_, n)| !n.value.is_finite()) {
            return Err(Error::NonFinite { op: n.op, node: i });
        }
        let mut adj = vec![0.0; nodes.len()];
        adj[output.index as usize] = 1.0;
        for i in (0..end).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = &nodes[i];
            for k in 0..n.arity as usize {
                adj[n.parents[k] as usize] += a * n.partials[k];
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    #[inline]
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoints.get(v.index as usize).copied().unwrap_or(0.0)
    }
}

impl<'t> Var<'t> {
    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    #[inline]
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    #[inline]
    fn unary(self, value: f64, d: f64, op: &'static str) -> Var<'t> {
        self.tape.push(value, op, 1, [self.index, 0], [d, 0.0])
    }

    #[inline]
    fn binary(self, o: Var<'t>, value: f64, da: f64, db: f64, op: &'static str) -> Var<'t> {
        self.tape.push(value, op, 2, [self.index, o.index], [da, db])
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(e, e, "exp")
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(self.value.ln(), 1.0 / self.value, "ln")
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s, "sqrt")
    }

    pub fn square(self) -> Var<'t> {
        self.unary(self.value * self.value, 2.0 * self.value, "square")
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let v = self.value.powf(p);
        self.unary(v, p * self.value.powf(p - 1.0), "powf")
    }

    pub fn recip(self) -> Var<'t> {
        let r = 1.0 / self.value;
        self.unary(r, -r * r, "recip")
    }

    /// Logistic sigmoid `1 / (1 + e^(-x))`.
    pub fn sigmoid(self) -> Var<'t> {
        let s = sigmoid(self.value);
        self.unary(s, s * (1.0 - s), "sigmoid")
    }

    /// `|x|` with derivative `sign(x)` (0 at the kink).
    pub fn abs(self) -> Var<'t> {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.value.abs(), d, "abs")
    }

    /// `max(x, c)`; the derivative is zero where the constant wins.
    pub fn max_const(self, c: f64) -> Var<'t> {
        if self.value >= c {
            self.unary(self.value, 1.0, "max")
        } else {
            self.unary(c, 0.0, "max")
        }
    }

    /// `min(x, c)`; the derivative is zero where the constant wins.
    pub fn min_const(self, c: f64) -> Var<'t> {
        if self.value <= c {
            self.unary(self.value, 1.0, "min")
        } else {
            self.unary(c, 0.0, "min")
        }
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.max_const(lo).min_const(hi)
    }

    /// Sum of a non-empty sequence; `None` when empty.
    pub fn sum<I: IntoIterator<Item = Var<'t>>>(iter: I) -> Option<Var<'t>> {
        iter.into_iter().reduce(|a, b| a + b)
    }
}

/// Plain logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.value + o.value, 1.0, 1.0, "add")
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.value - o.value, 1.0, -1.0, "sub")
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, o: Var<'t>) -> Var<'t> {
        self.binary(o, self.value * o.value, o.value, self.value, "mul")
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, o: Var<'t>) -> Var<'t> {
        let q = self.value / o.value;
        self.binary(o, q, 1.0 / o.value, -q / o.value, "div")
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0, "neg")
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(self.value + c, 1.0, "add_const")
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self.unary(self.value - c, 1.0, "sub_const")
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(self.value * c, c, "mul_const")
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self.unary(self.value / c, 1.0 / c, "div_const")
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        v.unary(self - v.value, -1.0, "rsub_const")
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn product_rule() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x;
        let g = tape.gradients(y).unwrap();
        assert_eq!(y.value(), 9.0);
        assert_eq!(g.wrt(x), 6.0);
    }

    #[test]
    fn composite_matches_finite_differences() {
        let f = |x: f64| (sigmoid(2.0 * x) / (1.0 + x * x)).powf(1.0 / 2.2) + (x.exp() - 1.0).abs().sqrt();
        for &x0 in &[-1.3, -0.2, 0.4, 1.7] {
            let tape = Tape::new();
            let x = tape.var(x0);
            let y = ((x * 2.0).sigmoid() / (x.square() + 1.0)).powf(1.0 / 2.2) + (x.exp() - 1.0).abs().sqrt();
            assert!((y.value() - f(x0)).abs() < 1e-14);
            let g = tape.gradients(y).unwrap().wrt(x);
            let fd = central_diff(f, x0);
            assert!((g - fd).abs() < 1e-7 * fd.abs().max(1.0), "{g} vs {fd}");
        }
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let tape = Tape::new();
        let a = tape.var(2.0);
        let b = tape.var(-0.5);
        let c = a * b;
        let y = c * c + c * a - b / a;
        let g = tape.gradients(y).unwrap();
        // y = a²b² + a²b - b/a
        let (av, bv) = (2.0, -0.5);
        assert!((g.wrt(a) - (2.0 * av * bv * bv + 2.0 * av * bv + bv / (av * av))).abs() < 1e-14);
        assert!((g.wrt(b) - (2.0 * av * av * bv + av * av - 1.0 / av)).abs() < 1e-14);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.var(1.5);
        let _unused = x * 3.0;
        let k = tape.constant(4.0);
        let g = tape.gradients(k).unwrap();
        assert_eq!(g.wrt(x), 0.0);
    }

    #[test]
    fn clamps_block_gradient() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let y = x.max_const(0.0) + x.min_const(-2.0);
        assert_eq!(tape.gradients(y).unwrap().wrt(x), 0.0);
    }

    #[test]
    fn non_finite_is_reported_with_op() {
        let tape = Tape::new();
        let x = tape.var(-1.0);
        let y = x.ln() * 2.0;
        match tape.gradients(y) {
            Err(Error::NonFinite { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
