//! Recording tape over jet arithmetic with a single reverse sweep.
//!
//! Every node holds a jet value. The reverse sweep propagates jet-valued
//! adjoints (one adjoint per Taylor coefficient), so a loss built from
//! derivative coefficients (`u_xx`, `ψ_xyy`, ...) is differentiated exactly
//! with respect to the network parameters. Parameters perturb only the
//! constant coefficient of their leaf, so a parameter's gradient is the
//! constant coefficient of its accumulated adjoint.

use crate::arith::{JetArith, NetArith};
use crate::error::{PinnError, Result};
use crate::jet::{Jet, JetShape};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Input,
    Param,
    Add,
    Sub,
    Mul,
    Scale,
    Offset,
    Tanh,
    Derivative,
    Affine,
}

/// Local partial derivative of a node with respect to one parent, viewed as
/// a linear map on the parent's coefficients.
#[derive(Clone, Copy, Debug)]
pub enum Partial {
    /// Multiplication by a scalar.
    Scalar(f64),
    /// Truncated multiplication by a stored jet.
    Jet(u32),
    /// Truncated multiplication by the value of another node.
    ValueOf(u32),
    /// The node equals `scale * parent.coeffs[index]` as a constant.
    Select { index: u8, scale: f64 },
}

#[derive(Clone, Copy, Debug)]
enum Links {
    Leaf,
    Param(u32),
    Unary {
        a: u32,
        pa: Partial,
    },
    Binary {
        a: u32,
        pa: Partial,
        b: u32,
        pb: Partial,
    },
    /// `params[bias] + Σ params[weight + k] * inputs[k]`; the inputs live in
    /// `Tape::links[start..start + len]`.
    Affine {
        start: u32,
        len: u32,
        weight: u32,
        bias: u32,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct TapeNode {
    kind: OpKind,
    links: Links,
}

impl TapeNode {
    pub fn kind(&self) -> OpKind {
        self.kind
    }
}

/// Flat parameter-gradient vector aligned with the network's flat view.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        assert_eq!(self.len(), other.len(), "gradient length mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, s: f64, other: &GradientVector) {
        assert_eq!(self.len(), other.len(), "gradient length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

impl From<Vec<f64>> for GradientVector {
    fn from(v: Vec<f64>) -> Self {
        GradientVector(v)
    }
}

/// Topologically ordered record of jet operations.
///
/// A tape is reused across collocation points with [`Tape::reset`]; it is
/// not shareable while recording.
pub struct Tape {
    shape: JetShape,
    params: Vec<f64>,
    nodes: Vec<TapeNode>,
    values: Vec<Jet>,
    links: Vec<u32>,
    partial_jets: Vec<Jet>,
    adjoints: Vec<Jet>,
}

impl Tape {
    pub fn new(shape: JetShape, params: Vec<f64>) -> Self {
        Tape {
            shape,
            params,
            nodes: Vec::new(),
            values: Vec::new(),
            links: Vec::new(),
            partial_jets: Vec::new(),
            adjoints: Vec::new(),
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Drops all recorded nodes; parameters are kept.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.links.clear();
        self.partial_jets.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &TapeNode {
        &self.nodes[v.index()]
    }

    pub fn value(&self, v: Var) -> &Jet {
        &self.values[v.index()]
    }

    /// Indices of the tape nodes a node reads from (parameters excluded).
    pub fn parents(&self, v: Var) -> Vec<usize> {
        match self.nodes[v.index()].links {
            Links::Leaf | Links::Param(_) => Vec::new(),
            Links::Unary { a, .. } => vec![a as usize],
            Links::Binary { a, b, .. } => vec![a as usize, b as usize],
            Links::Affine { start, len, .. } => self.links
                [start as usize..(start + len) as usize]
                .iter()
                .map(|&i| i as usize)
                .collect(),
        }
    }

    /// Leaf seeded with an input jet.
    pub fn input(&mut self, jet: Jet) -> Var {
        assert_eq!(jet.shape(), self.shape, "input jet shape mismatch");
        self.push(OpKind::Input, Links::Leaf, jet)
    }

    /// Leaf for parameter `index`, a constant jet.
    pub fn param(&mut self, index: usize) -> Var {
        let v = Jet::constant(self.shape, self.params[index]);
        self.push(OpKind::Param, Links::Param(index as u32), v)
    }

    fn push(&mut self, kind: OpKind, links: Links, value: Jet) -> Var {
        let id = self.nodes.len();
        assert!(id < u32::MAX as usize, "tape overflow");
        self.nodes.push(TapeNode { kind, links });
        self.values.push(value);
        Var(id as u32)
    }

    fn value_partial(&self, v: Var) -> Partial {
        let j = &self.values[v.index()];
        if j.is_constant() {
            Partial::Scalar(j.value())
        } else {
            Partial::ValueOf(v.0)
        }
    }

    /// Gradient of the value coefficient of `loss` with respect to every
    /// parameter.
    pub fn backward(&mut self, loss: Var) -> Result<GradientVector> {
        let mut g = GradientVector::zeros(self.params.len());
        self.backward_into(&[(loss, 1.0)], g.as_mut_slice())?;
        Ok(g)
    }

    /// Accumulates `Σ_s seed_s · ∂(value of node_s)/∂θ` into `grad`.
    pub fn backward_into(&mut self, seeds: &[(Var, f64)], grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(PinnError::Shape(format!(
                "gradient buffer has {} entries, tape has {} parameters",
                grad.len(),
                self.params.len()
            )));
        }
        let Some(top) = seeds.iter().map(|(v, _)| v.index()).max() else {
            return Ok(());
        };
        self.adjoints.clear();
        self.adjoints.resize(top + 1, Jet::zero(self.shape));
        for &(v, s) in seeds {
            self.adjoints[v.index()].coeffs_mut()[0] += s;
        }

        for i in (0..=top).rev() {
            let adj = self.adjoints[i];
            if adj.coeffs().iter().all(|&c| c == 0.0) {
                continue;
            }
            if !adj.is_finite() {
                return Err(PinnError::numeric(
                    format!("tape node {i} ({:?})", self.nodes[i].kind),
                    "non-finite adjoint during reverse sweep",
                ));
            }
            match self.nodes[i].links {
                Links::Leaf => {}
                Links::Param(p) => grad[p as usize] += adj.value(),
                Links::Unary { a, pa } => self.apply(pa, &adj, a),
                Links::Binary { a, pa, b, pb } => {
                    self.apply(pa, &adj, a);
                    self.apply(pb, &adj, b);
                }
                Links::Affine {
                    start,
                    len,
                    weight,
                    bias,
                } => {
                    let (start, len, weight) = (start as usize, len as usize, weight as usize);
                    for k in 0..len {
                        let input = self.links[start + k] as usize;
                        let w = self.params[weight + k];
                        self.adjoints[input].axpy(w, &adj);
                        grad[weight + k] += adj.dot(&self.values[input]);
                    }
                    grad[bias as usize] += adj.value();
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn apply(&mut self, partial: Partial, adj: &Jet, target: u32) {
        let t = target as usize;
        match partial {
            Partial::Scalar(s) => self.adjoints[t].axpy(s, adj),
            Partial::Jet(j) => {
                let p = self.partial_jets[j as usize];
                Jet::mul_transpose_accumulate(adj, &p, &mut self.adjoints[t]);
            }
            Partial::ValueOf(n) => {
                let p = self.values[n as usize];
                Jet::mul_transpose_accumulate(adj, &p, &mut self.adjoints[t]);
            }
            Partial::Select { index, scale } => {
                self.adjoints[t].coeffs_mut()[index as usize] += scale * adj.value();
            }
        }
    }
}

impl NetArith for Tape {
    type Var = Var;

    fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index()] + self.values[b.index()];
        let links = Links::Binary {
            a: a.0,
            pa: Partial::Scalar(1.0),
            b: b.0,
            pb: Partial::Scalar(1.0),
        };
        self.push(OpKind::Add, links, v)
    }

    fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index()] - self.values[b.index()];
        let links = Links::Binary {
            a: a.0,
            pa: Partial::Scalar(1.0),
            b: b.0,
            pb: Partial::Scalar(-1.0),
        };
        self.push(OpKind::Sub, links, v)
    }

    fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.values[a.index()] * self.values[b.index()];
        let links = Links::Binary {
            a: a.0,
            pa: self.value_partial(b),
            b: b.0,
            pb: self.value_partial(a),
        };
        self.push(OpKind::Mul, links, v)
    }

    fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.values[a.index()].scale(s);
        let links = Links::Unary {
            a: a.0,
            pa: Partial::Scalar(s),
        };
        self.push(OpKind::Scale, links, v)
    }

    fn offset(&mut self, a: Var, s: f64) -> Var {
        let v = self.values[a.index()].offset(s);
        let links = Links::Unary {
            a: a.0,
            pa: Partial::Scalar(1.0),
        };
        self.push(OpKind::Offset, links, v)
    }

    fn tanh(&mut self, a: Var) -> Var {
        let (v, d) = self.values[a.index()].tanh_with_derivative();
        let pa = if d.is_constant() {
            Partial::Scalar(d.value())
        } else {
            self.partial_jets.push(d);
            Partial::Jet((self.partial_jets.len() - 1) as u32)
        };
        self.push(OpKind::Tanh, Links::Unary { a: a.0, pa }, v)
    }

    fn affine(&mut self, weights: usize, bias: usize, inputs: &[Var]) -> Var {
        let mut acc = Jet::constant(self.shape, self.params[bias]);
        for (k, x) in inputs.iter().enumerate() {
            acc.axpy(self.params[weights + k], &self.values[x.index()]);
        }
        let start = self.links.len() as u32;
        self.links.extend(inputs.iter().map(|v| v.0));
        let links = Links::Affine {
            start,
            len: inputs.len() as u32,
            weight: weights as u32,
            bias: bias as u32,
        };
        self.push(OpKind::Affine, links, acc)
    }
}

impl JetArith for Tape {
    fn shape(&self) -> JetShape {
        self.shape
    }

    fn constant(&mut self, value: f64) -> Var {
        self.input(Jet::constant(self.shape, value))
    }

    fn derivative(&mut self, a: Var, index: usize) -> Var {
        let scale = self.shape.factorial(index);
        let v = Jet::constant(self.shape, self.values[a.index()].coeff(index) * scale);
        let links = Links::Unary {
            a: a.0,
            pa: Partial::Select {
                index: index as u8,
                scale,
            },
        };
        self.push(OpKind::Derivative, links, v)
    }

    fn value_of(&self, a: Var) -> f64 {
        self.values[a.index()].value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: usize, o: usize) -> JetShape {
        JetShape::new(d, o).unwrap()
    }

    #[test]
    fn linear_least_squares_gradient() {
        // loss = (w x - y)^2 at w = 2, x = 3, y = 1 -> 2 x (w x - y) = 30
        let s = shape(1, 1);
        let mut tape = Tape::new(s, vec![2.0]);
        let w = tape.param(0);
        let x = tape.constant(3.0);
        let wx = tape.mul(w, x);
        let r = tape.offset(wx, -1.0);
        let loss = tape.mul(r, r);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.as_slice(), &[30.0]);

        let h = 1e-6;
        let f = |w: f64| (w * 3.0 - 1.0).powi(2);
        let fd = (f(2.0 + h) - f(2.0 - h)) / (2.0 * h);
        assert!((fd - 30.0).abs() < 1e-6);
    }

    #[test]
    fn unreached_parameter_has_exact_zero_gradient() {
        let s = shape(2, 2);
        let mut tape = Tape::new(s, vec![1.5, -0.7]);
        let a = tape.param(0);
        let _b = tape.param(1);
        let loss = tape.mul(a, a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.as_slice()[1], 0.0);
        assert_eq!(g.as_slice()[0], 3.0);
    }

    #[test]
    fn derivative_loss_of_one_neuron() {
        // u(x) = v * tanh(w x + b); loss = u_x = v w (1 - tanh^2)
        let params = vec![0.8, -0.3, 1.7]; // w, b, v
        let x0 = 0.4;
        let s = shape(1, 2);
        let ux = |p: &[f64]| {
            let t = (p[0] * x0 + p[1]).tanh();
            p[2] * p[0] * (1.0 - t * t)
        };
        let mut tape = Tape::new(s, params.clone());
        let x = tape.input(Jet::seed_in(s, 0, x0).unwrap());
        let z = tape.affine(0, 1, &[x]);
        let a = tape.tanh(z);
        let v = tape.param(2);
        let u = tape.mul(v, a);
        let loss = tape.derivative(u, 1);
        assert!((tape.value_of(loss) - ux(&params)).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut p = params.clone();
            p[k] += h;
            let up = ux(&p);
            p[k] -= 2.0 * h;
            let um = ux(&p);
            let fd = (up - um) / (2.0 * h);
            let rel = (g.as_slice()[k] - fd).abs() / fd.abs().max(1.0);
            assert!(rel < 1e-6, "param {k}: {} vs {fd}", g.as_slice()[k]);
        }
    }

    #[test]
    fn second_derivative_loss_through_tanh() {
        // loss = u_xx of tanh(w x^2 + b) w.r.t. w, b; checked against FD of
        // the closed-form second derivative.
        let s = shape(1, 2);
        let x0 = 0.6;
        let uxx = |w: f64, b: f64| {
            let t = (w * x0 * x0 + b).tanh();
            let sech2 = 1.0 - t * t;
            // d/dx = sech2 * 2 w x ; d2/dx2 = -2 t sech2 (2wx)^2 + sech2 * 2w
            -2.0 * t * sech2 * (2.0 * w * x0).powi(2) + sech2 * 2.0 * w
        };
        let (w, b) = (1.3, -0.2);
        let mut tape = Tape::new(s, vec![w, b]);
        let x = tape.input(Jet::seed_in(s, 0, x0).unwrap());
        let xx = tape.mul(x, x);
        let z = tape.affine(0, 1, &[xx]);
        let u = tape.tanh(z);
        let loss = tape.derivative(u, 2);
        assert!((tape.value_of(loss) - uxx(w, b)).abs() < 1e-12);
        let g = tape.backward(loss).unwrap();
        let h = 1e-6;
        let fdw = (uxx(w + h, b) - uxx(w - h, b)) / (2.0 * h);
        let fdb = (uxx(w, b + h) - uxx(w, b - h)) / (2.0 * h);
        assert!((g.as_slice()[0] - fdw).abs() < 1e-6 * fdw.abs().max(1.0));
        assert!((g.as_slice()[1] - fdb).abs() < 1e-6 * fdb.abs().max(1.0));
    }

    #[test]
    fn parents_precede_children() {
        let s = shape(2, 2);
        let mut tape = Tape::new(s, vec![0.1, 0.2, 0.3]);
        let x = tape.input(Jet::seed_in(s, 0, 0.5).unwrap());
        let y = tape.input(Jet::seed_in(s, 1, -0.5).unwrap());
        let z = tape.affine(0, 2, &[x, y]);
        let t = tape.tanh(z);
        let m = tape.mul(t, x);
        let _ = tape.derivative(m, 4);
        for i in 0..tape.len() {
            for p in tape.parents(Var(i as u32)) {
                assert!(p < i);
            }
        }
    }

    #[test]
    fn non_finite_adjoint_is_reported() {
        let s = shape(1, 1);
        let mut tape = Tape::new(s, vec![1.0]);
        let w = tape.param(0);
        let big = tape.scale(w, f64::INFINITY);
        let loss = tape.mul(big, w);
        let err = tape.backward(loss).unwrap_err();
        assert!(matches!(err, PinnError::Numeric { .. }), "{err}");
    }

    #[test]
    fn repeated_evaluation_is_bitwise_identical() {
        let s = shape(2, 3);
        let run = || {
            let mut tape = Tape::new(s, vec![0.31, -0.12, 0.05]);
            let x = tape.input(Jet::seed_in(s, 0, 0.2).unwrap());
            let y = tape.input(Jet::seed_in(s, 1, 0.9).unwrap());
            let z = tape.affine(0, 2, &[x, y]);
            let t = tape.tanh(z);
            let c = tape.derivative(t, 7);
            let g = tape.backward(c).unwrap();
            (tape.value_of(c).to_bits(), g.into_vec())
        };
        let (a, ga) = run();
        let (b, gb) = run();
        assert_eq!(a, b);
        assert_eq!(
            ga.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            gb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
