//! Arithmetic contexts shared by the network and the residual operators.
//!
//! Network and residual code is written once against [`NetArith`] /
//! [`JetArith`] and runs on three backends: plain `f64` values
//! ([`ValueEval`]), Taylor jets without recording ([`JetEval`]), and the
//! recording [`Tape`](crate::tape::Tape).

use crate::jet::{Jet, JetShape};

/// Operations a network forward pass needs.
pub trait NetArith {
    type Var: Copy;

    fn add(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn sub(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn mul(&mut self, a: Self::Var, b: Self::Var) -> Self::Var;
    fn scale(&mut self, a: Self::Var, s: f64) -> Self::Var;
    fn offset(&mut self, a: Self::Var, s: f64) -> Self::Var;
    fn tanh(&mut self, a: Self::Var) -> Self::Var;

    /// `params[bias] + Σ_k params[weights + k] * inputs[k]`.
    fn affine(&mut self, weights: usize, bias: usize, inputs: &[Self::Var]) -> Self::Var;
}

/// Jet-valued contexts additionally expose derivative coefficients.
pub trait JetArith: NetArith {
    fn shape(&self) -> JetShape;

    fn constant(&mut self, value: f64) -> Self::Var;

    /// Raw derivative `∂^α a` (coefficient times `α!`) of the multi-index at
    /// coefficient position `index`, as a constant.
    fn derivative(&mut self, a: Self::Var, index: usize) -> Self::Var;

    fn value_of(&self, a: Self::Var) -> f64;

    fn neg(&mut self, a: Self::Var) -> Self::Var {
        self.scale(a, -1.0)
    }

    fn square(&mut self, a: Self::Var) -> Self::Var {
        self.mul(a, a)
    }

    /// `a^n` by repeated multiplication, `n >= 1`.
    fn powi(&mut self, a: Self::Var, n: u32) -> Self::Var {
        assert!(n >= 1, "powi exponent must be positive");
        let mut out = a;
        for _ in 1..n {
            out = self.mul(out, a);
        }
        out
    }
}

/// Plain `f64` forward evaluation against a flat parameter vector.
pub struct ValueEval<'a> {
    params: &'a [f64],
}

impl<'a> ValueEval<'a> {
    pub fn new(params: &'a [f64]) -> Self {
        ValueEval { params }
    }
}

impl NetArith for ValueEval<'_> {
    type Var = f64;

    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn scale(&mut self, a: f64, s: f64) -> f64 {
        a * s
    }
    fn offset(&mut self, a: f64, s: f64) -> f64 {
        a + s
    }
    fn tanh(&mut self, a: f64) -> f64 {
        a.tanh()
    }
    fn affine(&mut self, weights: usize, bias: usize, inputs: &[f64]) -> f64 {
        let w = &self.params[weights..weights + inputs.len()];
        let mut acc = self.params[bias];
        for (wk, xk) in w.iter().zip(inputs) {
            acc += wk * xk;
        }
        acc
    }
}

/// Deliberate corruption hooks used by negative-control checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales every derivative coefficient of `tanh` by `1 + 1e-3`.
    TanhDerivative,
}

/// Jet forward evaluation without recording.
pub struct JetEval<'a> {
    params: &'a [f64],
    shape: JetShape,
    fault: Option<Fault>,
}

impl<'a> JetEval<'a> {
    pub fn new(params: &'a [f64], shape: JetShape) -> Self {
        JetEval {
            params,
            shape,
            fault: None,
        }
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }
}

impl NetArith for JetEval<'_> {
    type Var = Jet;

    fn add(&mut self, a: Jet, b: Jet) -> Jet {
        a + b
    }
    fn sub(&mut self, a: Jet, b: Jet) -> Jet {
        a - b
    }
    fn mul(&mut self, a: Jet, b: Jet) -> Jet {
        a * b
    }
    fn scale(&mut self, a: Jet, s: f64) -> Jet {
        a.scale(s)
    }
    fn offset(&mut self, a: Jet, s: f64) -> Jet {
        a.offset(s)
    }
    fn tanh(&mut self, a: Jet) -> Jet {
        let mut t = a.tanh();
        if self.fault == Some(Fault::TanhDerivative) {
            for c in &mut t.coeffs_mut()[1..] {
                *c *= 1.0 + 1e-3;
            }
        }
        t
    }
    fn affine(&mut self, weights: usize, bias: usize, inputs: &[Jet]) -> Jet {
        let w = &self.params[weights..weights + inputs.len()];
        let mut acc = Jet::constant(self.shape, self.params[bias]);
        for (wk, xk) in w.iter().zip(inputs) {
            acc.axpy(*wk, xk);
        }
        acc
    }
}

impl JetArith for JetEval<'_> {
    fn shape(&self) -> JetShape {
        self.shape
    }
    fn constant(&mut self, value: f64) -> Jet {
        Jet::constant(self.shape, value)
    }
    fn derivative(&mut self, a: Jet, index: usize) -> Jet {
        Jet::constant(self.shape, a.coeff(index) * self.shape.factorial(index))
    }
    fn value_of(&self, a: Jet) -> f64 {
        a.value()
    }
}

/// Jet arithmetic with no parameters; used to evaluate residual operators
/// on analytically constructed jets.
pub struct PlainJets {
    shape: JetShape,
}

impl PlainJets {
    pub fn new(shape: JetShape) -> Self {
        PlainJets { shape }
    }
}

impl NetArith for PlainJets {
    type Var = Jet;

    fn add(&mut self, a: Jet, b: Jet) -> Jet {
        a + b
    }
    fn sub(&mut self, a: Jet, b: Jet) -> Jet {
        a - b
    }
    fn mul(&mut self, a: Jet, b: Jet) -> Jet {
        a * b
    }
    fn scale(&mut self, a: Jet, s: f64) -> Jet {
        a.scale(s)
    }
    fn offset(&mut self, a: Jet, s: f64) -> Jet {
        a.offset(s)
    }
    fn tanh(&mut self, a: Jet) -> Jet {
        a.tanh()
    }
    fn affine(&mut self, _weights: usize, _bias: usize, _inputs: &[Jet]) -> Jet {
        panic!("PlainJets carries no parameters")
    }
}

impl JetArith for PlainJets {
    fn shape(&self) -> JetShape {
        self.shape
    }
    fn constant(&mut self, value: f64) -> Jet {
        Jet::constant(self.shape, value)
    }
    fn derivative(&mut self, a: Jet, index: usize) -> Jet {
        Jet::constant(self.shape, a.coeff(index) * self.shape.factorial(index))
    }
    fn value_of(&self, a: Jet) -> f64 {
        a.value()
    }
}
