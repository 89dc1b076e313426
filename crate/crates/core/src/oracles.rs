//! Non-neural reference solutions: the Cole–Hopf quadrature solution of
//! viscous Burgers, a steady streamfunction–vorticity solver for the
//! lid-driven cavity, and a central finite-difference derivative checker.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{PinnError, Result};
use crate::jet::{JetShape, MAX_DIMS};

// ---------------------------------------------------------------------------
// Gauss–Hermite quadrature

/// Gauss–Hermite rule for the weight `exp(-z²)` with weights stored as
/// natural logarithms, so rules with several hundred nodes keep their tail
/// weights.
#[derive(Clone, Debug)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl HermiteRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Number of eigenvalues below `lam` of the symmetric tridiagonal Jacobi
/// matrix of the Hermite weight (zero diagonal, off-diagonal `sqrt(k/2)`),
/// by Sturm sequence.
fn hermite_count_below(n: usize, lam: f64) -> usize {
    let mut count = 0;
    let mut q = -lam;
    if q < 0.0 {
        count += 1;
    }
    for k in 1..n {
        let b2 = k as f64 / 2.0;
        let qq = if q == 0.0 { 1e-300 } else { q };
        q = -lam - b2 / qq;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Nodes are bracketed by Sturm-sequence bisection on the Jacobi matrix and
/// polished by Newton iteration on the orthonormal Hermite recurrence.
///
/// The recurrence is started at `π^{-1/4} e^{-z²/4}` instead of `π^{-1/4}`;
/// the common factor leaves the Newton step unchanged and keeps the
/// polynomial values inside `f64` range up to about 1000 nodes.
pub fn gauss_hermite(n: usize) -> Result<HermiteRule> {
    if n == 0 {
        return Err(PinnError::Config("Gauss-Hermite needs at least one node".into()));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut lw = vec![0.0; n];
    let bound = (2.0 * nf).sqrt() + 2.0;
    for i in 0..n.div_ceil(2) {
        // i-th largest root = eigenvalue number n - 1 - i in ascending order
        let k = n - 1 - i;
        let (mut lo, mut hi) = (0.0, bound);
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if hermite_count_below(n, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut z = 0.5 * (lo + hi);
        let mut converged = false;
        let mut p_prev = 0.0;
        for _ in 0..50 {
            let mut p1 = PIM4 * (-0.25 * z * z).exp();
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            p_prev = p2;
            let pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged || !(z >= lo - 1e-6 && z <= hi + 1e-6) {
            return Err(PinnError::Accuracy(format!(
                "Gauss-Hermite node {i} of {n} did not converge"
            )));
        }
        // w = 2 / (2n p_{n-1}²) with p_{n-1} = p_prev e^{z²/4}
        let log_w = (2.0f64).ln() - (2.0 * nf).ln() - 2.0 * p_prev.abs().ln() - 0.5 * z * z;
        x[i] = z;
        x[n - 1 - i] = -z;
        lw[i] = log_w;
        lw[n - 1 - i] = log_w;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok(HermiteRule {
        nodes: x,
        log_weights: lw,
    })
}

fn cached_rule(n: usize) -> Result<Arc<HermiteRule>> {
    static RULES: OnceLock<Mutex<BTreeMap<usize, Arc<HermiteRule>>>> = OnceLock::new();
    let cache = RULES.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = cache.lock().expect("rule cache poisoned");
    if let Some(r) = guard.get(&n) {
        return Ok(r.clone());
    }
    let r = Arc::new(gauss_hermite(n)?);
    guard.insert(n, r.clone());
    Ok(r)
}

// ---------------------------------------------------------------------------
// Cole–Hopf

/// Quadrature sizes evaluated by [`burgers_cole_hopf`]; the answer comes
/// from the last one.
pub const COLE_HOPF_NODES: [usize; 2] = [400, 800];
/// Accepted change between the two rules, relative to `max(1, |u|)`.
pub const COLE_HOPF_TOL: f64 = 1e-8;

fn cole_hopf_with(rule: &HermiteRule, x: f64, t: f64, nu: f64) -> f64 {
    // u = -∫ sin(πy) F(y) e^{-z²} dz / ∫ F(y) e^{-z²} dz,
    // y = x - sqrt(4νt) z, F(y) = exp(-cos(πy) / (2πν))
    let s = (4.0 * nu * t).sqrt();
    let k = 1.0 / (2.0 * PI * nu);
    let mut max_e = f64::NEG_INFINITY;
    let exps: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.log_weights)
        .map(|(&z, &lw)| {
            let e = lw - k * (PI * (x - s * z)).cos();
            max_e = max_e.max(e);
            e
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (&z, &e) in rule.nodes.iter().zip(&exps) {
        let w = (e - max_e).exp();
        num += w * (PI * (x - s * z)).sin();
        den += w;
    }
    -num / den
}

/// Viscous Burgers solution for `u(x, 0) = -sin(πx)` on `[-1, 1]` with
/// homogeneous Dirichlet walls, by the Cole–Hopf transform.
pub fn burgers_cole_hopf(x: f64, t: f64, nu: f64) -> Result<f64> {
    if !(x.is_finite() && t.is_finite() && nu > 0.0) || t < 0.0 {
        return Err(PinnError::Domain(format!(
            "Cole-Hopf needs t >= 0 and nu > 0 (x={x}, t={t}, nu={nu})"
        )));
    }
    if t == 0.0 {
        return Ok(-(PI * x).sin());
    }
    // the finest rule always supplies the value, so the result is a smooth
    // function of (x, t); coarser rules only certify convergence
    let values = COLE_HOPF_NODES
        .iter()
        .map(|&n| Ok(cole_hopf_with(&*cached_rule(n)?, x, t, nu)))
        .collect::<Result<Vec<f64>>>()?;
    let best = values[values.len() - 1];
    let change = (best - values[values.len() - 2]).abs();
    if change <= COLE_HOPF_TOL * best.abs().max(1.0) {
        return Ok(best);
    }
    Err(PinnError::Accuracy(format!(
        "Cole-Hopf quadrature unconverged at x={x}, t={t}: change {change:e} between {} and {} nodes",
        COLE_HOPF_NODES[COLE_HOPF_NODES.len() - 2],
        COLE_HOPF_NODES[COLE_HOPF_NODES.len() - 1]
    )))
}

// ---------------------------------------------------------------------------
// Gridded fields

pub const GRID_FORMAT: &str = "pinn-grid-v1";

/// Named fields on a tensor grid. Values are stored row-major with `x`
/// varying fastest: `value[j * x.len() + i]` sits at `(x[i], y[j])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub format: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fields: BTreeMap<String, Vec<f64>>,
}

impl GridField {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        GridField {
            format: GRID_FORMAT.into(),
            x,
            y,
            fields: BTreeMap::new(),
        }
    }

    pub fn nx(&self) -> usize {
        self.x.len()
    }

    pub fn ny(&self) -> usize {
        self.y.len()
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.nx() * self.ny() {
            return Err(PinnError::Shape(format!(
                "field {name} has {} values, grid has {}",
                values.len(),
                self.nx() * self.ny()
            )));
        }
        self.fields.insert(name.to_string(), values);
        Ok(())
    }

    pub fn field(&self, name: &str) -> Result<&[f64]> {
        self.fields
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| PinnError::Usage(format!("grid has no field {name:?}")))
    }

    fn validate(&self) -> Result<()> {
        if self.format != GRID_FORMAT {
            return Err(PinnError::Config(format!("unknown grid format {:?}", self.format)));
        }
        for axis in [&self.x, &self.y] {
            if axis.len() < 2 || axis.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(PinnError::Config(
                    "grid axes need at least two strictly increasing nodes".into(),
                ));
            }
        }
        for (name, v) in &self.fields {
            if v.len() != self.nx() * self.ny() {
                return Err(PinnError::Shape(format!("field {name} has the wrong length")));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(PinnError::numeric(format!("grid field {name}"), "non-finite value"));
            }
        }
        Ok(())
    }

    fn cell(axis: &[f64], q: f64) -> Option<(usize, f64)> {
        let (lo, hi) = (axis[0], axis[axis.len() - 1]);
        if !(q >= lo && q <= hi) {
            return None;
        }
        let k = axis.partition_point(|&a| a <= q).clamp(1, axis.len() - 1) - 1;
        let s = (q - axis[k]) / (axis[k + 1] - axis[k]);
        Some((k, s))
    }

    /// Bilinear interpolation of `name` at `(x, y)`.
    pub fn interpolate(&self, name: &str, x: f64, y: f64) -> Result<f64> {
        let f = self.field(name)?;
        let (Some((i, sx)), Some((j, sy))) = (Self::cell(&self.x, x), Self::cell(&self.y, y))
        else {
            return Err(PinnError::Domain(format!("({x}, {y}) lies outside the grid")));
        };
        let nx = self.nx();
        let at = |ii: usize, jj: usize| f[jj * nx + ii];
        Ok((1.0 - sx) * (1.0 - sy) * at(i, j)
            + sx * (1.0 - sy) * at(i + 1, j)
            + (1.0 - sx) * sy * at(i, j + 1)
            + sx * sy * at(i + 1, j + 1))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let g: GridField = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        g.validate()?;
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// Lid-driven cavity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavitySolverConfig {
    pub re: f64,
    pub grid_n: usize,
    pub tol: f64,
    pub max_iterations: usize,
    /// Over-relaxation factor of the vorticity sweep.
    pub vorticity_relaxation: f64,
}

impl CavitySolverConfig {
    pub fn new(re: f64, grid_n: usize) -> Self {
        CavitySolverConfig {
            re,
            grid_n,
            tol: 1e-8,
            max_iterations: 2_000_000,
            vorticity_relaxation: 1.0,
        }
    }
}

/// Converged cavity solution on the unit square: fields `psi`, `omega`,
/// `u`, `v` on a `grid_n × grid_n` node grid.
#[derive(Clone, Debug)]
pub struct CavityReference {
    pub grid: GridField,
    pub re: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl CavityReference {
    pub fn velocity_at(&self, x: f64, y: f64) -> Result<[f64; 2]> {
        Ok([
            self.grid.interpolate("u", x, y)?,
            self.grid.interpolate("v", x, y)?,
        ])
    }

    /// Loads a gridded file carrying at least `u` and `v`.
    pub fn from_grid(grid: GridField, re: f64) -> Result<Self> {
        grid.validate()?;
        grid.field("u")?;
        grid.field("v")?;
        Ok(CavityReference {
            grid,
            re,
            iterations: 0,
            residual: 0.0,
        })
    }
}

/// Steady streamfunction–vorticity solve with `ω = -Δψ`, second-order
/// central differences and Thom's wall vorticity. Lid at `y = 1` moves with
/// unit speed in `+x`.
///
/// Each iteration is one SOR sweep for `ψ` followed by one (relaxed)
/// Gauss–Seidel sweep of the vorticity transport equation. The residual is
/// the max-norm of both discrete equations in update form (multiplied by
/// `h²/4`).
pub fn cavity_fd_solve(cfg: &CavitySolverConfig) -> Result<CavityReference> {
    let n = cfg.grid_n;
    if n < 5 {
        return Err(PinnError::Config(format!("cavity grid needs n >= 5, got {n}")));
    }
    if !(cfg.re > 0.0) {
        return Err(PinnError::Config("Reynolds number must be positive".into()));
    }
    let h = 1.0 / (n - 1) as f64;
    let idx = |i: usize, j: usize| j * n + i;
    let mut psi = vec![0.0; n * n];
    let mut om = vec![0.0; n * n];
    let beta = 2.0 / (1.0 + (PI * h).sin());
    let relax = cfg.vorticity_relaxation;
    let c = 0.5 * cfg.re * h;
    let lid = 1.0;

    let mut residual = f64::INFINITY;
    let mut it = 0;
    while it < cfg.max_iterations {
        it += 1;
        // Thom wall vorticity, ψ = 0 on all walls
        for k in 0..n {
            om[idx(k, 0)] = -2.0 * psi[idx(k, 1)] / (h * h);
            om[idx(k, n - 1)] = -2.0 * psi[idx(k, n - 2)] / (h * h) - 2.0 * lid / h;
            om[idx(0, k)] = -2.0 * psi[idx(1, k)] / (h * h);
            om[idx(n - 1, k)] = -2.0 * psi[idx(n - 2, k)] / (h * h);
        }
        let check = it % 50 == 0;
        let mut r_psi: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let p = idx(i, j);
                let target =
                    0.25 * (psi[p + 1] + psi[p - 1] + psi[p + n] + psi[p - n] + h * h * om[p]);
                if check {
                    r_psi = r_psi.max((target - psi[p]).abs());
                }
                psi[p] += beta * (target - psi[p]);
            }
        }
        let mut r_om: f64 = 0.0;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let p = idx(i, j);
                let u = (psi[p + n] - psi[p - n]) / (2.0 * h);
                let v = -(psi[p + 1] - psi[p - 1]) / (2.0 * h);
                let target = 0.25
                    * (om[p + 1] + om[p - 1] + om[p + n] + om[p - n]
                        - c * (u * (om[p + 1] - om[p - 1]) + v * (om[p + n] - om[p - n])));
                if check {
                    r_om = r_om.max((target - om[p]).abs());
                }
                om[p] += relax * (target - om[p]);
            }
        }
        if check {
            residual = r_psi.max(r_om);
            if !residual.is_finite() || residual > 1e12 {
                return Err(PinnError::Solver(format!(
                    "cavity iteration diverged at iteration {it} (residual {residual:e})"
                )));
            }
            if residual < cfg.tol {
                break;
            }
        }
    }
    if residual >= cfg.tol {
        return Err(PinnError::Solver(format!(
            "cavity iteration stopped after {it} iterations with residual {residual:e} (tol {:e})",
            cfg.tol
        )));
    }

    let mut u = vec![0.0; n * n];
    let mut v = vec![0.0; n * n];
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            let p = idx(i, j);
            u[p] = (psi[p + n] - psi[p - n]) / (2.0 * h);
            v[p] = -(psi[p + 1] - psi[p - 1]) / (2.0 * h);
        }
    }
    for i in 1..n - 1 {
        u[idx(i, n - 1)] = lid;
    }
    let axis: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
    let mut grid = GridField::new(axis.clone(), axis);
    grid.insert("psi", psi)?;
    grid.insert("omega", om)?;
    grid.insert("u", u)?;
    grid.insert("v", v)?;
    Ok(CavityReference {
        grid,
        re: cfg.re,
        iterations: it,
        residual,
    })
}

type CavityCache = Mutex<BTreeMap<(u64, usize), Arc<CavityReference>>>;
static CAVITY_CACHE: OnceLock<CavityCache> = OnceLock::new();

/// Process-wide cache of cavity solutions keyed by `(Re, grid_n)`.
pub fn cavity_reference(re: f64, grid_n: usize) -> Result<Arc<CavityReference>> {
    let cache = CAVITY_CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let key = (re.to_bits(), grid_n);
    if let Some(r) = cache.lock().expect("cavity cache poisoned").get(&key) {
        return Ok(r.clone());
    }
    let r = Arc::new(cavity_fd_solve(&CavitySolverConfig::new(re, grid_n))?);
    cache
        .lock()
        .expect("cavity cache poisoned")
        .insert(key, r.clone());
    Ok(r)
}

/// Replaces the cached solution for `(re, grid_n)`, e.g. with an externally
/// computed reference loaded through [`CavityReference::from_grid`].
pub fn install_cavity_reference(reference: CavityReference) -> Result<()> {
    let n = reference.grid.nx();
    if reference.grid.ny() != n {
        return Err(PinnError::Shape("cavity reference grid must be square".into()));
    }
    let cache = CAVITY_CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    cache
        .lock()
        .expect("cavity cache poisoned")
        .insert((reference.re.to_bits(), n), Arc::new(reference));
    Ok(())
}

// ---------------------------------------------------------------------------
// Finite differences

/// Offsets and weights of the central 1-D stencils, before dividing by `hᵏ`.
fn stencil(order: usize) -> &'static [(i32, f64)] {
    match order {
        0 => &[(0, 1.0)],
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        _ => unreachable!("stencil order checked by caller"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdEstimate {
    pub multi_index: [usize; MAX_DIMS],
    /// Raw derivative estimate (not divided by `α!`).
    pub value: f64,
    /// Stencil half-width in grid steps per dimension.
    pub reach: [usize; MAX_DIMS],
    /// Leading truncation error is `O(h^truncation_order)`.
    pub truncation_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdReport {
    pub h: f64,
    pub point: Vec<f64>,
    pub evaluations: usize,
    /// One entry per multi-index of degree `<= order`, in jet coefficient order.
    pub estimates: Vec<FdEstimate>,
}

impl FdReport {
    pub fn values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.value).collect()
    }
}

/// Central-difference estimates of every partial derivative of `f` up to
/// `order` (at most 3) at `point`, as tensor products of 1-D stencils.
pub fn finite_diff_check(
    f: impl Fn(&[f64]) -> f64,
    point: &[f64],
    order: usize,
    h: f64,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(PinnError::Config(format!("step must be positive, got {h}")));
    }
    let shape = JetShape::new(point.len(), order.max(1))?;
    if order == 0 {
        return Err(PinnError::Config("derivative order must be at least 1".into()));
    }
    let dims = point.len();
    let mut cache: BTreeMap<[i32; MAX_DIMS], f64> = BTreeMap::new();
    let mut eval = |off: [i32; MAX_DIMS]| -> f64 {
        *cache.entry(off).or_insert_with(|| {
            let q: Vec<f64> = (0..dims).map(|d| point[d] + off[d] as f64 * h).collect();
            f(&q)
        })
    };
    let mut estimates = Vec::with_capacity(shape.len());
    for idx in 0..shape.len() {
        let alpha = shape.multi_index(idx);
        let sx = stencil(alpha[0]);
        let sy = if dims > 1 { stencil(alpha[1]) } else { stencil(0) };
        let mut acc = 0.0;
        for &(ox, wx) in sx {
            for &(oy, wy) in sy {
                acc += wx * wy * eval([ox, oy]);
            }
        }
        let deg = alpha[0] + alpha[1];
        let reach = [alpha[0].div_ceil(2), alpha[1].div_ceil(2)];
        estimates.push(FdEstimate {
            multi_index: alpha,
            value: acc / h.powi(deg as i32),
            reach,
            truncation_order: if deg == 0 { 0 } else { 2 },
        });
    }
    Ok(FdReport {
        h,
        point: point.to_vec(),
        evaluations: cache.len(),
        estimates,
    })
}

/// `|a - b| / max(|b|, 1)`: relative error that degrades to absolute error
/// near zero.
pub fn mixed_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
