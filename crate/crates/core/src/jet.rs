//! Truncated multivariate Taylor jets.
//!
//! A [`Jet`] carries the Taylor expansion of a scalar in up to two input
//! variables, truncated at total degree 1 to 3. Coefficients are stored in
//! graded order (all degree-0 terms, then degree 1, ...) and normalized:
//! the coefficient of multi-index `α` is `∂^α u / α!`. Multiplication is
//! then a plain truncated convolution over multi-indices.
//!
//! Multi-index order for two variables is
//! `(0,0) (1,0) (0,1) (2,0) (1,1) (0,2) (3,0) (2,1) (1,2) (0,3)`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{PinnError, Result};

/// Largest coefficient count over all supported shapes (dims 2, order 3).
pub const MAX_COEFFS: usize = 10;
pub const MAX_ORDER: usize = 3;
pub const MAX_DIMS: usize = 2;

/// Number of input variables and truncation order of a jet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct JetShape {
    dims: u8,
    order: u8,
}

impl JetShape {
    pub fn new(dims: usize, order: usize) -> Result<Self> {
        if !(1..=MAX_DIMS).contains(&dims) {
            return Err(PinnError::Config(format!(
                "jet dims must be 1..={MAX_DIMS}, got {dims}"
            )));
        }
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(PinnError::Config(format!(
                "jet order must be 1..={MAX_ORDER}, got {order}"
            )));
        }
        Ok(JetShape {
            dims: dims as u8,
            order: order as u8,
        })
    }

    pub fn dims(self) -> usize {
        self.dims as usize
    }

    pub fn order(self) -> usize {
        self.order as usize
    }

    /// Number of multi-indices of total degree `<= order`.
    pub fn len(self) -> usize {
        self.tables().multi.len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// Position of a multi-index in the coefficient array.
    pub fn index_of(self, multi: &[usize]) -> Option<usize> {
        if multi.len() != self.dims() {
            return None;
        }
        self.tables().multi.iter().position(|m| {
            m.iter()
                .take(self.dims())
                .zip(multi)
                .all(|(&a, &b)| a as usize == b)
        })
    }

    pub fn multi_index(self, index: usize) -> [usize; MAX_DIMS] {
        let m = self.tables().multi[index];
        [m[0] as usize, m[1] as usize]
    }

    pub fn degree(self, index: usize) -> usize {
        self.tables().degree[index] as usize
    }

    /// `α!` for the multi-index at `index`.
    pub fn factorial(self, index: usize) -> f64 {
        self.tables().factorial[index]
    }

    pub(crate) fn tables(self) -> &'static ShapeTables {
        static TABLES: OnceLock<Vec<ShapeTables>> = OnceLock::new();
        let all = TABLES.get_or_init(|| {
            let mut v = Vec::with_capacity(MAX_DIMS * MAX_ORDER);
            for dims in 1..=MAX_DIMS {
                for order in 1..=MAX_ORDER {
                    v.push(ShapeTables::build(dims, order));
                }
            }
            v
        });
        &all[(self.dims as usize - 1) * MAX_ORDER + (self.order as usize - 1)]
    }
}

impl fmt::Display for JetShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(dims {}, order {})", self.dims, self.order)
    }
}

/// Precomputed multi-index bookkeeping for one shape.
pub(crate) struct ShapeTables {
    pub multi: Vec<[u8; MAX_DIMS]>,
    pub degree: Vec<u8>,
    pub factorial: Vec<f64>,
    /// `(i, j, k)` with `multi[i] + multi[j] == multi[k]`, sorted by `k`.
    pub products: Vec<[u8; 3]>,
    /// `products[prod_start[k]..prod_start[k + 1]]` all target `k`.
    pub prod_start: Vec<usize>,
}

impl ShapeTables {
    fn build(dims: usize, order: usize) -> Self {
        let mut multi = Vec::new();
        for deg in 0..=order {
            if dims == 1 {
                multi.push([deg as u8, 0]);
            } else {
                for first in (0..=deg).rev() {
                    multi.push([first as u8, (deg - first) as u8]);
                }
            }
        }
        let degree: Vec<u8> = multi.iter().map(|m| m[0] + m[1]).collect();
        let fact = |n: u8| (1..=n as u32).map(f64::from).product::<f64>();
        let factorial = multi.iter().map(|m| fact(m[0]) * fact(m[1])).collect();

        let mut products = Vec::new();
        let mut prod_start = Vec::with_capacity(multi.len() + 1);
        for (k, mk) in multi.iter().enumerate() {
            prod_start.push(products.len());
            for (i, mi) in multi.iter().enumerate() {
                for (j, mj) in multi.iter().enumerate() {
                    if mi[0] + mj[0] == mk[0] && mi[1] + mj[1] == mk[1] {
                        products.push([i as u8, j as u8, k as u8]);
                    }
                }
            }
        }
        prod_start.push(products.len());
        ShapeTables {
            multi,
            degree,
            factorial,
            products,
            prod_start,
        }
    }
}

/// Truncated Taylor expansion of a scalar. `Copy`, stack allocated.
#[derive(Clone, Copy, PartialEq)]
pub struct Jet {
    shape: JetShape,
    coeffs: [f64; MAX_COEFFS],
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("shape", &self.shape)
            .field("coeffs", &self.coeffs())
            .finish()
    }
}

impl Jet {
    pub fn zero(shape: JetShape) -> Self {
        Jet {
            shape,
            coeffs: [0.0; MAX_COEFFS],
        }
    }

    pub fn constant(shape: JetShape, value: f64) -> Self {
        let mut j = Jet::zero(shape);
        j.coeffs[0] = value;
        j
    }

    /// Jet of the input variable `var_index` at `value`.
    pub fn seed(var_index: usize, value: f64, dims: usize, order: usize) -> Result<Self> {
        let shape = JetShape::new(dims, order)?;
        Jet::seed_in(shape, var_index, value)
    }

    pub fn seed_in(shape: JetShape, var_index: usize, value: f64) -> Result<Self> {
        if var_index >= shape.dims() {
            return Err(PinnError::Config(format!(
                "seed variable {var_index} out of range for {} input(s)",
                shape.dims()
            )));
        }
        let mut j = Jet::constant(shape, value);
        // degree-1 multi-indices follow the constant, one per variable
        j.coeffs[1 + var_index] = 1.0;
        Ok(j)
    }

    pub fn from_coeffs(shape: JetShape, coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() != shape.len() {
            return Err(PinnError::Shape(format!(
                "{} coefficients supplied for shape {shape} (needs {})",
                coeffs.len(),
                shape.len()
            )));
        }
        let mut j = Jet::zero(shape);
        j.coeffs[..coeffs.len()].copy_from_slice(coeffs);
        Ok(j)
    }

    /// Build a jet from raw (un-normalized) partial derivatives given in
    /// coefficient order.
    pub fn from_derivatives(shape: JetShape, derivs: &[f64]) -> Result<Self> {
        let mut j = Jet::from_coeffs(shape, derivs)?;
        for i in 0..shape.len() {
            j.coeffs[i] /= shape.factorial(i);
        }
        Ok(j)
    }

    #[inline]
    pub fn shape(&self) -> JetShape {
        self.shape
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    #[inline]
    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs[..self.shape.len()]
    }

    #[inline]
    pub(crate) fn coeffs_mut(&mut self) -> &mut [f64] {
        let n = self.shape.len();
        &mut self.coeffs[..n]
    }

    #[inline]
    pub fn coeff(&self, index: usize) -> f64 {
        self.coeffs[index]
    }

    /// Raw partial derivative `∂^α u` for the multi-index `multi`.
    pub fn derivative(&self, multi: &[usize]) -> Result<f64> {
        let idx = self.shape.index_of(multi).ok_or_else(|| {
            PinnError::Config(format!(
                "derivative {multi:?} not available in jet of shape {}",
                self.shape
            ))
        })?;
        Ok(self.coeffs[idx] * self.shape.factorial(idx))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs().iter().all(|c| c.is_finite())
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs()[1..].iter().all(|&c| c == 0.0)
    }

    fn check_shape(&self, other: &Jet) -> Result<()> {
        if self.shape != other.shape {
            return Err(PinnError::Shape(format!(
                "jet shape mismatch: {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Jet) -> Result<Jet> {
        self.check_shape(other)?;
        Ok(*self + *other)
    }

    pub fn checked_sub(&self, other: &Jet) -> Result<Jet> {
        self.check_shape(other)?;
        Ok(*self - *other)
    }

    pub fn checked_mul(&self, other: &Jet) -> Result<Jet> {
        self.check_shape(other)?;
        Ok(*self * *other)
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut out = *self;
        for c in out.coeffs_mut() {
            *c *= s;
        }
        out
    }

    /// `self + s` (shifts the value coefficient only).
    pub fn offset(&self, s: f64) -> Jet {
        let mut out = *self;
        out.coeffs[0] += s;
        out
    }

    /// `self + s * other`, in place.
    #[inline]
    pub fn axpy(&mut self, s: f64, other: &Jet) {
        let n = self.shape.len();
        for i in 0..n {
            self.coeffs[i] += s * other.coeffs[i];
        }
    }

    #[inline]
    pub fn dot(&self, other: &Jet) -> f64 {
        let n = self.shape.len();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.coeffs[i] * other.coeffs[i];
        }
        acc
    }

    /// Composition with `tanh`.
    ///
    /// Uses the degree-graded recurrence obtained by applying the Euler
    /// operator `Σ x_i ∂_i` to `c = tanh(a)`: for `|γ| = k`,
    /// `k c_γ = Σ_{α+β=γ, |α|≥1} |α| a_α d_β` with `d = 1 - c²`.
    pub fn tanh(&self) -> Jet {
        self.tanh_with_derivative().0
    }

    /// Returns `(tanh(a), 1 - tanh(a)^2)`; the second jet is the local
    /// partial used by the reverse sweep.
    pub fn tanh_with_derivative(&self) -> (Jet, Jet) {
        let shape = self.shape;
        let t = shape.tables();
        let n = shape.len();
        let mut c = Jet::zero(shape);
        let mut d = Jet::zero(shape);
        c.coeffs[0] = self.coeffs[0].tanh();
        d.coeffs[0] = 1.0 - c.coeffs[0] * c.coeffs[0];

        let mut k = 1;
        while k < n {
            let deg = t.degree[k];
            let mut end = k;
            while end < n && t.degree[end] == deg {
                end += 1;
            }
            for g in k..end {
                let mut acc = 0.0;
                for p in &t.products[t.prod_start[g]..t.prod_start[g + 1]] {
                    let (i, j) = (p[0] as usize, p[1] as usize);
                    let di = t.degree[i];
                    if di > 0 {
                        acc += f64::from(di) * self.coeffs[i] * d.coeffs[j];
                    }
                }
                c.coeffs[g] = acc / f64::from(deg);
            }
            for g in k..end {
                let mut acc = 0.0;
                for p in &t.products[t.prod_start[g]..t.prod_start[g + 1]] {
                    acc += c.coeffs[p[0] as usize] * c.coeffs[p[1] as usize];
                }
                d.coeffs[g] = -acc;
            }
            k = end;
        }
        (c, d)
    }

    /// Reverse-mode rule for `c = a * p` with `p` held fixed:
    /// `adj_a += adj_c ⋆ᵀ p`.
    #[inline]
    pub(crate) fn mul_transpose_accumulate(adj_c: &Jet, p: &Jet, adj_a: &mut Jet) {
        let t = adj_c.shape.tables();
        for q in &t.products {
            let (i, j, k) = (q[0] as usize, q[1] as usize, q[2] as usize);
            adj_a.coeffs[i] += adj_c.coeffs[k] * p.coeffs[j];
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    #[inline]
    fn add(self, rhs: Jet) -> Jet {
        assert_eq!(self.shape, rhs.shape, "jet shape mismatch in add");
        let mut out = self;
        out.axpy(1.0, &rhs);
        out
    }
}

impl Sub for Jet {
    type Output = Jet;
    #[inline]
    fn sub(self, rhs: Jet) -> Jet {
        assert_eq!(self.shape, rhs.shape, "jet shape mismatch in sub");
        let mut out = self;
        out.axpy(-1.0, &rhs);
        out
    }
}

impl Neg for Jet {
    type Output = Jet;
    #[inline]
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, rhs: Jet) -> Jet {
        assert_eq!(self.shape, rhs.shape, "jet shape mismatch in mul");
        let t = self.shape.tables();
        let mut out = Jet::zero(self.shape);
        for q in &t.products {
            let (i, j, k) = (q[0] as usize, q[1] as usize, q[2] as usize);
            out.coeffs[k] += self.coeffs[i] * rhs.coeffs[j];
        }
        out
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    #[inline]
    fn mul(self, rhs: f64) -> Jet {
        self.scale(rhs)
    }
}
