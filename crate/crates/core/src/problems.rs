//! Benchmark PDE problems: residual operators, condition targets and exact
//! or reference solutions.
//!
//! All problems have two input coordinates. Residuals are written against
//! [`JetArith`] so the same code evaluates analytic jets, network jets and
//! recorded tape nodes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::arith::JetArith;
use crate::error::{PinnError, Result};
use crate::jet::{Jet, JetShape};
use crate::network::{Architecture, NetworkConfig};
use crate::oracles::{burgers_cole_hopf, cavity_reference};

/// Coefficient positions of the two-variable jet layout.
pub mod idx {
    pub const U: usize = 0;
    pub const X: usize = 1;
    pub const Y: usize = 2;
    pub const XX: usize = 3;
    pub const XY: usize = 4;
    pub const YY: usize = 5;
    pub const XXX: usize = 6;
    pub const XXY: usize = 7;
    pub const XYY: usize = 8;
    pub const YYY: usize = 9;
}

/// Tolerance for "point lies on a manifold / inside the box" checks.
pub const ON_MANIFOLD_TOL: f64 = 1e-12;

pub const PROBLEM_NAMES: [&str; 5] = [
    "burgers",
    "helmholtz14",
    "helmholtz44",
    "klein_gordon",
    "cavity",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Equation {
    /// `u_t + u u_x = ν u_xx` on `(x, t)`.
    Burgers { nu: f64 },
    /// `u_xx + u_yy + k² u = q(x, y)`.
    Helmholtz { k: f64, a1: f64, a2: f64 },
    /// `u_tt + α u_xx + β u + γ u^exponent = f(x, t)` with a manufactured `u`.
    KleinGordon {
        alpha: f64,
        beta: f64,
        gamma: f64,
        exponent: u32,
    },
    /// Steady incompressible Navier–Stokes in streamfunction–pressure form;
    /// network outputs are `(ψ, p)`.
    Cavity { re: f64, reference_grid: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Initial,
    InitialVelocity,
    Boundary,
    Lid,
    Wall,
}

/// Which task loss a condition feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionSlot {
    Initial,
    Boundary,
}

/// A straight piece of the domain boundary with one coordinate fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub slot: ConditionSlot,
    pub kind: TargetKind,
    pub fixed_axis: usize,
    pub fixed_value: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionTarget {
    pub point: [f64; 2],
    pub value: Vec<f64>,
    pub kind: TargetKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PressureAnchor {
    pub point: [f64; 2],
    pub value: f64,
}

/// Evaluation grid and slice used for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub nx: usize,
    pub ny: usize,
    pub slice_axis: usize,
    pub slice_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub name: String,
    pub equation: Equation,
    pub axes: [String; 2],
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub output_dim: usize,
    pub jet_order: usize,
    pub interior_points: usize,
    pub segments: Vec<Segment>,
    pub pressure_anchor: Option<PressureAnchor>,
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub eval: EvalSettings,
}

fn seg(slot: ConditionSlot, kind: TargetKind, axis: usize, value: f64, count: usize) -> Segment {
    Segment {
        slot,
        kind,
        fixed_axis: axis,
        fixed_value: value,
        count,
    }
}

impl ProblemSpec {
    pub fn preset(name: &str) -> Result<Self> {
        use ConditionSlot::{Boundary as B, Initial as I};
        let spec = match name {
            "burgers" => ProblemSpec {
                name: name.into(),
                equation: Equation::Burgers { nu: 0.01 / PI },
                axes: ["x".into(), "t".into()],
                lower: [-1.0, 0.0],
                upper: [1.0, 1.0],
                output_dim: 1,
                jet_order: 2,
                interior_points: 10_000,
                segments: vec![
                    seg(I, TargetKind::Initial, 1, 0.0, 100),
                    seg(B, TargetKind::Boundary, 0, -1.0, 50),
                    seg(B, TargetKind::Boundary, 0, 1.0, 50),
                ],
                pressure_anchor: None,
                hidden: vec![20; 4],
                iterations: 40_000,
                eval: EvalSettings {
                    nx: 256,
                    ny: 100,
                    slice_axis: 1,
                    slice_value: 0.99,
                },
            },
            "helmholtz14" | "helmholtz44" => {
                let a1 = if name == "helmholtz14" { 1.0 } else { 4.0 };
                ProblemSpec {
                    name: name.into(),
                    equation: Equation::Helmholtz { k: 1.0, a1, a2: 4.0 },
                    axes: ["x".into(), "y".into()],
                    lower: [-1.0, -1.0],
                    upper: [1.0, 1.0],
                    output_dim: 1,
                    jet_order: 2,
                    interior_points: 10_000,
                    segments: vec![
                        seg(B, TargetKind::Boundary, 0, -1.0, 100),
                        seg(B, TargetKind::Boundary, 0, 1.0, 100),
                        seg(B, TargetKind::Boundary, 1, -1.0, 100),
                        seg(B, TargetKind::Boundary, 1, 1.0, 100),
                    ],
                    pressure_anchor: None,
                    hidden: vec![50; 4],
                    iterations: 40_000,
                    eval: EvalSettings {
                        nx: 256,
                        ny: 256,
                        slice_axis: 0,
                        slice_value: 0.75,
                    },
                }
            }
            "klein_gordon" => ProblemSpec {
                name: name.into(),
                equation: Equation::KleinGordon {
                    alpha: -1.0,
                    beta: 0.0,
                    gamma: 1.0,
                    exponent: 3,
                },
                axes: ["x".into(), "t".into()],
                lower: [0.0, 0.0],
                upper: [1.0, 1.0],
                output_dim: 1,
                jet_order: 2,
                interior_points: 10_000,
                segments: vec![
                    seg(I, TargetKind::Initial, 1, 0.0, 200),
                    seg(B, TargetKind::Boundary, 0, 0.0, 100),
                    seg(B, TargetKind::Boundary, 0, 1.0, 100),
                ],
                pressure_anchor: None,
                hidden: vec![50; 3],
                iterations: 40_000,
                eval: EvalSettings {
                    nx: 256,
                    ny: 256,
                    slice_axis: 1,
                    slice_value: 1.0,
                },
            },
            "cavity" => ProblemSpec {
                name: name.into(),
                equation: Equation::Cavity {
                    re: 100.0,
                    reference_grid: 129,
                },
                axes: ["x".into(), "y".into()],
                lower: [0.0, 0.0],
                upper: [1.0, 1.0],
                output_dim: 2,
                jet_order: 3,
                interior_points: 1000,
                segments: vec![
                    seg(I, TargetKind::Lid, 1, 1.0, 300),
                    seg(B, TargetKind::Wall, 0, 0.0, 100),
                    seg(B, TargetKind::Wall, 0, 1.0, 100),
                    seg(B, TargetKind::Wall, 1, 0.0, 100),
                ],
                pressure_anchor: Some(PressureAnchor {
                    point: [0.0, 0.0],
                    value: 0.0,
                }),
                hidden: vec![50; 3],
                iterations: 20_000,
                eval: EvalSettings {
                    nx: 129,
                    ny: 129,
                    slice_axis: 1,
                    slice_value: 0.8,
                },
            },
            other => {
                return Err(PinnError::Usage(format!(
                    "unknown problem {other:?}; expected one of {}",
                    PROBLEM_NAMES.join(", ")
                )))
            }
        };
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..2 {
            if !(self.lower[a] < self.upper[a]) || !self.lower[a].is_finite() || !self.upper[a].is_finite()
            {
                return Err(PinnError::Config(format!(
                    "{}: empty or non-finite bounds on axis {a}",
                    self.name
                )));
            }
        }
        let need = self.required_order();
        if self.jet_order < need || self.jet_order > crate::jet::MAX_ORDER {
            return Err(PinnError::Config(format!(
                "{}: jet order {} outside [{need}, {}]",
                self.name,
                self.jet_order,
                crate::jet::MAX_ORDER
            )));
        }
        let outputs = if matches!(self.equation, Equation::Cavity { .. }) { 2 } else { 1 };
        if self.output_dim != outputs {
            return Err(PinnError::Config(format!(
                "{}: output_dim must be {outputs}",
                self.name
            )));
        }
        if self.interior_points == 0 {
            return Err(PinnError::Config(format!("{}: no interior points", self.name)));
        }
        for s in &self.segments {
            let on_face = s.fixed_axis < 2
                && (s.fixed_value == self.lower[s.fixed_axis]
                    || s.fixed_value == self.upper[s.fixed_axis]);
            if !on_face {
                return Err(PinnError::Config(format!(
                    "{}: condition segment {:?} is not a face of the domain",
                    self.name, s
                )));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(PinnError::Config(format!("{}: invalid hidden sizes", self.name)));
        }
        match self.equation {
            Equation::Burgers { nu } if !(nu > 0.0) => {
                Err(PinnError::Config("burgers: viscosity must be positive".into()))
            }
            Equation::Cavity { re, reference_grid } if !(re > 0.0) || reference_grid < 5 => {
                Err(PinnError::Config(
                    "cavity: Re must be positive and the reference grid at least 5".into(),
                ))
            }
            Equation::KleinGordon { exponent: 0, .. } => {
                Err(PinnError::Config("klein_gordon: exponent must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn required_order(&self) -> usize {
        match self.equation {
            Equation::Cavity { .. } => 3,
            _ => 2,
        }
    }

    pub fn jet_shape(&self) -> JetShape {
        JetShape::new(2, self.jet_order).expect("validated jet order")
    }

    pub fn network(&self, architecture: Architecture) -> NetworkConfig {
        NetworkConfig::new(2, self.hidden.clone(), self.output_dim, architecture)
    }

    pub fn has_initial(&self) -> bool {
        self.segments.iter().any(|s| s.slot == ConditionSlot::Initial)
    }

    pub fn slot_count(&self, slot: ConditionSlot) -> usize {
        self.segments
            .iter()
            .filter(|s| s.slot == slot)
            .map(|s| s.count)
            .sum()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|a| {
            p[a] >= self.lower[a] - ON_MANIFOLD_TOL && p[a] <= self.upper[a] + ON_MANIFOLD_TOL
        })
    }

    fn check_inside(&self, p: [f64; 2]) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(PinnError::Domain(format!(
                "{}: point ({}, {}) lies outside the domain",
                self.name, p[0], p[1]
            )))
        }
    }

    /// Exact or reference solution at `p`. Cavity returns the velocity
    /// `(u, v)`, every other problem a single value.
    pub fn exact_solution(&self, p: [f64; 2]) -> Result<Vec<f64>> {
        self.check_inside(p)?;
        let (x, y) = (p[0], p[1]);
        Ok(match self.equation {
            Equation::Burgers { nu } => vec![burgers_cole_hopf(x, y, nu)?],
            Equation::Helmholtz { a1, a2, .. } => vec![(a1 * PI * x).sin() * (a2 * PI * y).sin()],
            Equation::KleinGordon { .. } => vec![klein_gordon_exact(x, y)],
            Equation::Cavity { re, reference_grid } => {
                cavity_reference(re, reference_grid)?.velocity_at(x, y)?.to_vec()
            }
        })
    }

    /// Targets for points on the manifolds of `slot`. Klein–Gordon initial
    /// points produce a value and a velocity target each.
    pub fn condition_targets(
        &self,
        slot: ConditionSlot,
        points: &[[f64; 2]],
    ) -> Result<Vec<ConditionTarget>> {
        let mut out = Vec::with_capacity(points.len());
        for &p in points {
            self.check_inside(p)?;
            let segment = self
                .segments
                .iter()
                .filter(|s| s.slot == slot)
                .find(|s| (p[s.fixed_axis] - s.fixed_value).abs() <= ON_MANIFOLD_TOL)
                .ok_or_else(|| {
                    PinnError::Domain(format!(
                        "{}: ({}, {}) is not on a {:?} manifold",
                        self.name, p[0], p[1], slot
                    ))
                })?;
            let target = |value: Vec<f64>, kind| ConditionTarget {
                point: p,
                value,
                kind,
            };
            match (&self.equation, segment.kind) {
                (Equation::Burgers { .. }, TargetKind::Initial) => {
                    out.push(target(vec![-(PI * p[0]).sin()], TargetKind::Initial))
                }
                (Equation::Burgers { .. }, kind) => out.push(target(vec![0.0], kind)),
                (Equation::KleinGordon { .. }, TargetKind::Initial) => {
                    out.push(target(vec![klein_gordon_exact(p[0], p[1])], TargetKind::Initial));
                    out.push(target(
                        vec![klein_gordon_exact_jet(p[0], p[1], JetShape::new(2, 1)?).coeff(idx::Y)],
                        TargetKind::InitialVelocity,
                    ));
                }
                (Equation::Cavity { .. }, TargetKind::Lid) => {
                    out.push(target(vec![1.0, 0.0], TargetKind::Lid))
                }
                (Equation::Cavity { .. }, kind) => out.push(target(vec![0.0, 0.0], kind)),
                (_, kind) => out.push(target(self.exact_solution(p)?, kind)),
            }
        }
        Ok(out)
    }

    /// PDE residual components at `p` given the network output jets
    /// (one component; two for the cavity).
    pub fn residuals<A: JetArith>(
        &self,
        ctx: &mut A,
        p: [f64; 2],
        out: &[A::Var],
    ) -> Result<Vec<A::Var>> {
        Ok(match self.equation {
            Equation::Burgers { nu } => vec![residual_burgers(ctx, out[0], nu)?],
            Equation::Helmholtz { k, a1, a2 } => {
                vec![residual_helmholtz(ctx, out[0], p, k, a1, a2)?]
            }
            Equation::KleinGordon {
                alpha,
                beta,
                gamma,
                exponent,
            } => vec![residual_klein_gordon(
                ctx,
                out[0],
                p,
                KleinGordonParams {
                    alpha,
                    beta,
                    gamma,
                    exponent,
                },
            )?],
            Equation::Cavity { re, .. } => {
                let (rx, ry) = residual_cavity(ctx, out[0], out[1], re)?;
                vec![rx, ry]
            }
        })
    }

    /// Prediction minus target for one condition.
    pub fn condition_residuals<A: JetArith>(
        &self,
        ctx: &mut A,
        target: &ConditionTarget,
        out: &[A::Var],
    ) -> Result<Vec<A::Var>> {
        check_order(ctx, 1)?;
        Ok(match target.kind {
            TargetKind::Initial | TargetKind::Boundary => {
                let u = ctx.derivative(out[0], idx::U);
                vec![ctx.offset(u, -target.value[0])]
            }
            TargetKind::InitialVelocity => {
                let ut = ctx.derivative(out[0], idx::Y);
                vec![ctx.offset(ut, -target.value[0])]
            }
            TargetKind::Lid | TargetKind::Wall => {
                let u = ctx.derivative(out[0], idx::Y);
                let v = ctx.derivative(out[0], idx::X);
                let v = ctx.neg(v);
                vec![
                    ctx.offset(u, -target.value[0]),
                    ctx.offset(v, -target.value[1]),
                ]
            }
        })
    }

    /// Quantity compared against [`Self::exact_solution`] on evaluation
    /// grids: `u`, or the velocity `(ψ_y, -ψ_x)` for the cavity.
    pub fn observable(&self, out: &[Jet]) -> Vec<f64> {
        match self.equation {
            Equation::Cavity { .. } => vec![out[0].coeff(idx::Y), -out[0].coeff(idx::X)],
            _ => vec![out[0].value()],
        }
    }

    /// Jet order needed to evaluate [`Self::observable`].
    pub fn observable_order(&self) -> usize {
        match self.equation {
            Equation::Cavity { .. } => 1,
            _ => 0,
        }
    }
}

fn check_order<A: JetArith>(ctx: &A, need: usize) -> Result<()> {
    let shape = ctx.shape();
    if shape.order() < need || shape.dims() != 2 {
        return Err(PinnError::Config(format!(
            "residual needs a two-variable jet of order >= {need}, got dims {} order {}",
            shape.dims(),
            shape.order()
        )));
    }
    Ok(())
}

/// `u_t + u u_x - ν u_xx` on `(x, t)` jets.
pub fn residual_burgers<A: JetArith>(ctx: &mut A, u: A::Var, nu: f64) -> Result<A::Var> {
    check_order(ctx, 2)?;
    let v = ctx.derivative(u, idx::U);
    let ux = ctx.derivative(u, idx::X);
    let ut = ctx.derivative(u, idx::Y);
    let uxx = ctx.derivative(u, idx::XX);
    let adv = ctx.mul(v, ux);
    let lhs = ctx.add(ut, adv);
    let diff = ctx.scale(uxx, nu);
    Ok(ctx.sub(lhs, diff))
}

pub fn helmholtz_forcing(x: f64, y: f64, k: f64, a1: f64, a2: f64) -> f64 {
    (-(a1 * PI).powi(2) - (a2 * PI).powi(2) + k * k) * (a1 * PI * x).sin() * (a2 * PI * y).sin()
}

/// Jet of `sin(a1 π x) sin(a2 π y)` at `(x, y)`, up to order 3.
pub fn helmholtz_exact_jet(x: f64, y: f64, a1: f64, a2: f64, shape: JetShape) -> Jet {
    let (w1, w2) = (a1 * PI, a2 * PI);
    let (sx, cx, sy, cy) = ((w1 * x).sin(), (w1 * x).cos(), (w2 * y).sin(), (w2 * y).cos());
    let d = [
        sx * sy,
        w1 * cx * sy,
        w2 * sx * cy,
        -w1 * w1 * sx * sy,
        w1 * w2 * cx * cy,
        -w2 * w2 * sx * sy,
        -w1.powi(3) * cx * sy,
        -w1 * w1 * w2 * sx * cy,
        -w1 * w2 * w2 * cx * sy,
        -w2.powi(3) * sx * cy,
    ];
    Jet::from_derivatives(shape, &d[..shape.len()]).expect("two-variable jet of order <= 3")
}

/// `u_xx + u_yy + k² u - q(x, y)`.
pub fn residual_helmholtz<A: JetArith>(
    ctx: &mut A,
    u: A::Var,
    p: [f64; 2],
    k: f64,
    a1: f64,
    a2: f64,
) -> Result<A::Var> {
    check_order(ctx, 2)?;
    let v = ctx.derivative(u, idx::U);
    let uxx = ctx.derivative(u, idx::XX);
    let uyy = ctx.derivative(u, idx::YY);
    let lap = ctx.add(uxx, uyy);
    let ku = ctx.scale(v, k * k);
    let lhs = ctx.add(lap, ku);
    Ok(ctx.offset(lhs, -helmholtz_forcing(p[0], p[1], k, a1, a2)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KleinGordonParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub exponent: u32,
}

impl Default for KleinGordonParams {
    fn default() -> Self {
        KleinGordonParams {
            alpha: -1.0,
            beta: 0.0,
            gamma: 1.0,
            exponent: 3,
        }
    }
}

/// Manufactured solution `u = x cos(5πt) + (x t)³`.
pub fn klein_gordon_exact(x: f64, t: f64) -> f64 {
    x * (5.0 * PI * t).cos() + (x * t).powi(3)
}

/// Jet of the manufactured solution at `(x, t)` from its closed-form
/// partial derivatives (exact up to order 3).
pub fn klein_gordon_exact_jet(x: f64, t: f64, shape: JetShape) -> Jet {
    let w = 5.0 * PI;
    let (c, s) = ((w * t).cos(), (w * t).sin());
    let d = [
        klein_gordon_exact(x, t),
        c + 3.0 * x * x * t.powi(3),            // x
        -w * x * s + 3.0 * x.powi(3) * t * t,   // t
        6.0 * x * t.powi(3),                    // xx
        -w * s + 9.0 * x * x * t * t,           // xt
        -w * w * x * c + 6.0 * x.powi(3) * t,   // tt
        6.0 * t.powi(3),                        // xxx
        18.0 * x * t * t,                       // xxt
        -w * w * c + 18.0 * x * x * t,          // xtt
        w.powi(3) * x * s + 6.0 * x.powi(3),    // ttt
    ];
    Jet::from_derivatives(shape, &d[..shape.len()]).expect("two-variable shape")
}

/// `f = u_tt + α u_xx + β u + γ u^k` of the manufactured solution.
pub fn klein_gordon_forcing_with(p: KleinGordonParams, x: f64, t: f64) -> f64 {
    let w = 5.0 * PI;
    let u = klein_gordon_exact(x, t);
    let utt = -w * w * x * (w * t).cos() + 6.0 * x.powi(3) * t;
    let uxx = 6.0 * x * t.powi(3);
    utt + p.alpha * uxx + p.beta * u + p.gamma * u.powi(p.exponent as i32)
}

/// Forcing for the default coefficients:
/// `-25π² x cos(5πt) + 6x³t - 6xt³ + u³`.
pub fn forcing_klein_gordon(x: f64, t: f64) -> f64 {
    klein_gordon_forcing_with(KleinGordonParams::default(), x, t)
}

/// `u_tt + α u_xx + β u + γ u^k - f(x, t)` on `(x, t)` jets.
pub fn residual_klein_gordon<A: JetArith>(
    ctx: &mut A,
    u: A::Var,
    p: [f64; 2],
    params: KleinGordonParams,
) -> Result<A::Var> {
    check_order(ctx, 2)?;
    if params.exponent == 0 {
        return Err(PinnError::Config("klein_gordon: exponent must be >= 1".into()));
    }
    let v = ctx.derivative(u, idx::U);
    let uxx = ctx.derivative(u, idx::XX);
    let utt = ctx.derivative(u, idx::YY);
    let a = ctx.scale(uxx, params.alpha);
    let mut lhs = ctx.add(utt, a);
    if params.beta != 0.0 {
        let b = ctx.scale(v, params.beta);
        lhs = ctx.add(lhs, b);
    }
    if params.gamma != 0.0 {
        let pw = ctx.powi(v, params.exponent);
        let g = ctx.scale(pw, params.gamma);
        lhs = ctx.add(lhs, g);
    }
    Ok(ctx.offset(lhs, -klein_gordon_forcing_with(params, p[0], p[1])))
}

/// Momentum residuals with `u = ψ_y`, `v = -ψ_x`:
/// `rx = u u_x + v u_y + p_x - Δu / Re`, `ry = u v_x + v v_y + p_y - Δv / Re`.
pub fn residual_cavity<A: JetArith>(
    ctx: &mut A,
    psi: A::Var,
    p: A::Var,
    re: f64,
) -> Result<(A::Var, A::Var)> {
    check_order(ctx, 3)?;
    let inv_re = 1.0 / re;
    let d = |ctx: &mut A, i| ctx.derivative(psi, i);
    let u = d(ctx, idx::Y);
    let ux = d(ctx, idx::XY);
    let uy = d(ctx, idx::YY);
    let uxx = d(ctx, idx::XXY);
    let uyy = d(ctx, idx::YYY);
    // v and its derivatives carry a minus sign
    let nv = d(ctx, idx::X);
    let nvx = d(ctx, idx::XX);
    let nvy = d(ctx, idx::XY);
    let nvxx = d(ctx, idx::XXX);
    let nvyy = d(ctx, idx::XYY);
    let px = ctx.derivative(p, idx::X);
    let py = ctx.derivative(p, idx::Y);

    let a = ctx.mul(u, ux);
    let b = ctx.mul(nv, uy);
    let adv = ctx.sub(a, b);
    let lap = ctx.add(uxx, uyy);
    let visc = ctx.scale(lap, inv_re);
    let rx = ctx.add(adv, px);
    let rx = ctx.sub(rx, visc);

    // u v_x + v v_y = -(u nv_x) + nv nv_y
    let a = ctx.mul(u, nvx);
    let b = ctx.mul(nv, nvy);
    let adv = ctx.sub(b, a);
    let lap = ctx.add(nvxx, nvyy);
    // -Δv / Re = +Δ(nv) / Re
    let visc = ctx.scale(lap, inv_re);
    let ry = ctx.add(adv, py);
    let ry = ctx.add(ry, visc);
    Ok((rx, ry))
}

/// `u_x + v_y` of the velocity derived from a streamfunction jet.
pub fn streamfunction_divergence(psi: &Jet) -> f64 {
    let f = |i: usize| psi.coeff(i) * psi.shape().factorial(i);
    // u_x = ψ_yx, v_y = -ψ_xy
    f(idx::XY) - f(idx::XY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::PlainJets;
    use crate::oracles::{finite_diff_check, mixed_error};
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    fn shape(order: usize) -> JetShape {
        JetShape::new(2, order).unwrap()
    }

    fn value(v: Jet) -> f64 {
        assert!(v.is_constant());
        v.value()
    }

    fn from_derivs(order: usize, d: &[f64]) -> Jet {
        Jet::from_derivatives(shape(order), d).unwrap()
    }

    #[test]
    fn burgers_examples() {
        let s = shape(2);
        let mut ctx = PlainJets::new(s);
        let c = Jet::constant(s, 0.7);
        assert_eq!(value(residual_burgers(&mut ctx, c, 0.1).unwrap()), 0.0);
        let x = Jet::seed_in(s, 0, 0.35).unwrap();
        assert_eq!(value(residual_burgers(&mut ctx, x, 0.1).unwrap()), 0.35);
        let mut low = PlainJets::new(shape(1));
        let x1 = Jet::seed_in(shape(1), 0, 0.2).unwrap();
        assert!(matches!(
            residual_burgers(&mut low, x1, 0.1),
            Err(PinnError::Config(_))
        ));
    }

    #[test]
    fn burgers_residual_on_cole_hopf_jets() {
        // jets assembled from oracle values and high-accuracy FD derivatives
        let nu = 0.01 / PI;
        let mut rng = stream_rng(8, Stream::Fixture);
        let s = shape(2);
        let mut ctx = PlainJets::new(s);
        for _ in 0..20 {
            let x = rng.gen_range(-0.9..0.9);
            let t = rng.gen_range(0.05..0.3);
            let f = |p: &[f64]| burgers_cole_hopf(p[0], p[1], nu).unwrap();
            let d = finite_diff_check(f, &[x, t], 2, 1e-4).unwrap().values();
            let u = from_derivs(2, &d);
            let r = value(residual_burgers(&mut ctx, u, nu).unwrap());
            assert!(r.abs() < 1e-4, "residual {r} at ({x}, {t})");
        }
    }

    fn helmholtz_exact_jet(x: f64, y: f64, a1: f64, a2: f64, order: usize) -> Jet {
        super::helmholtz_exact_jet(x, y, a1, a2, shape(order))
    }

    #[test]
    fn helmholtz_exact_solution_has_zero_residual() {
        let mut rng = stream_rng(2, Stream::Fixture);
        let mut ctx = PlainJets::new(shape(2));
        for &(a1, a2) in &[(1.0, 4.0), (4.0, 4.0)] {
            for _ in 0..50 {
                let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let u = helmholtz_exact_jet(p[0], p[1], a1, a2, 2);
                let r = value(residual_helmholtz(&mut ctx, u, p, 1.0, a1, a2).unwrap());
                assert!(r.abs() < 1e-10, "{r}");
            }
        }
    }

    #[test]
    fn helmholtz_zero_field_and_linearity() {
        let s = shape(2);
        let mut ctx = PlainJets::new(s);
        let p = [0.3, -0.55];
        let q = helmholtz_forcing(p[0], p[1], 1.0, 1.0, 4.0);
        let r0 = value(residual_helmholtz(&mut ctx, Jet::zero(s), p, 1.0, 1.0, 4.0).unwrap());
        assert_eq!(r0, -q);
        let origin = value(residual_helmholtz(&mut ctx, Jet::zero(s), [0.0, 0.0], 1.0, 4.0, 4.0).unwrap());
        assert_eq!(origin, 0.0);

        let mut rng = stream_rng(3, Stream::Fixture);
        let rand_jet = |rng: &mut crate::rng::StreamRng| {
            let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            Jet::from_coeffs(s, &c).unwrap()
        };
        for _ in 0..20 {
            let (u1, u2) = (rand_jet(&mut rng), rand_jet(&mut rng));
            let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let mut r = |u: Jet| value(residual_helmholtz(&mut ctx, u, p, 1.0, 1.0, 4.0).unwrap());
            let lhs = r(u1.scale(a) + u2.scale(b)) - (a + b - 1.0) * q;
            let rhs = a * r(u1) + b * r(u2);
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn klein_gordon_forcing_examples() {
        for &t in &[0.0, 0.3, 0.77, 1.0] {
            assert_eq!(forcing_klein_gordon(0.0, t), 0.0);
        }
        for &x in &[0.1, 0.5, 0.9] {
            let f = forcing_klein_gordon(x, 0.0);
            let expect = -25.0 * PI * PI * x + x.powi(3);
            assert!((f - expect).abs() < 1e-12);
        }
        // closed form against a hand-written formula and an FD application of the operator
        let mut rng = stream_rng(4, Stream::Fixture);
        for _ in 0..50 {
            let (x, t) = (rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95));
            let u = klein_gordon_exact(x, t);
            let spelled = -25.0 * PI * PI * x * (5.0 * PI * t).cos() + 6.0 * x.powi(3) * t
                - 6.0 * x * t.powi(3)
                + u.powi(3);
            assert!((forcing_klein_gordon(x, t) - spelled).abs() < 1e-12);
            let d = finite_diff_check(|p| klein_gordon_exact(p[0], p[1]), &[x, t], 2, 1e-4)
                .unwrap()
                .values();
            let fd = d[5] - d[3] + d[0].powi(3);
            assert!(mixed_error(fd, forcing_klein_gordon(x, t)) < 1e-5);
        }
    }

    #[test]
    fn klein_gordon_manufactured_solution_has_zero_residual() {
        let mut rng = stream_rng(5, Stream::Fixture);
        let s = shape(2);
        let mut ctx = PlainJets::new(s);
        for _ in 0..50 {
            let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let u = klein_gordon_exact_jet(p[0], p[1], s);
            let r = value(residual_klein_gordon(&mut ctx, u, p, KleinGordonParams::default()).unwrap());
            assert!(r.abs() < 1e-8, "{r}");
        }
        let z = value(
            residual_klein_gordon(&mut ctx, Jet::zero(s), [0.4, 0.6], KleinGordonParams::default())
                .unwrap(),
        );
        assert_eq!(z, -forcing_klein_gordon(0.4, 0.6));
    }

    #[test]
    fn klein_gordon_jet_matches_finite_differences() {
        let s = shape(3);
        let (x, t) = (0.37, 0.61);
        let jet = klein_gordon_exact_jet(x, t, s);
        let fd = |h| {
            finite_diff_check(|p| klein_gordon_exact(p[0], p[1]), &[x, t], 3, h)
                .unwrap()
                .values()
        };
        let (fine, coarse) = (fd(1e-4), fd(1e-3));
        for i in 0..s.len() {
            let raw = jet.coeff(i) * s.factorial(i);
            let (d, tol) = if s.degree(i) == 3 { (&coarse, 1e-3) } else { (&fine, 1e-5) };
            assert!(mixed_error(d[i], raw) < tol, "index {i}: {} vs {raw}", d[i]);
        }
    }

    #[test]
    fn klein_gordon_linear_when_gamma_is_zero() {
        let s = shape(2);
        let mut ctx = PlainJets::new(s);
        let params = KleinGordonParams {
            gamma: 0.0,
            ..Default::default()
        };
        let p = [0.2, 0.8];
        let f = klein_gordon_forcing_with(params, p[0], p[1]);
        let u1 = Jet::from_coeffs(s, &[0.1, 0.4, -0.2, 1.5, 0.3, -2.0]).unwrap();
        let u2 = Jet::from_coeffs(s, &[-0.3, 0.2, 0.9, -0.5, 0.1, 0.7]).unwrap();
        let mut r = |u: Jet| value(residual_klein_gordon(&mut ctx, u, p, params).unwrap()) + f;
        let lhs = r(u1 + u2);
        let rhs = r(u1) + r(u2);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn cavity_rest_state_and_shear_flow() {
        let s = shape(3);
        let mut ctx = PlainJets::new(s);
        let (rx, ry) =
            residual_cavity(&mut ctx, Jet::zero(s), Jet::constant(s, 3.0), 100.0).unwrap();
        assert_eq!((value(rx), value(ry)), (0.0, 0.0));
        // ψ = y²/2 gives u = y, v = 0
        let y = Jet::seed_in(s, 1, 0.4).unwrap();
        let psi = (y * y).scale(0.5);
        let (rx, ry) = residual_cavity(&mut ctx, psi, Jet::zero(s), 100.0).unwrap();
        assert_eq!((value(rx), value(ry)), (0.0, 0.0));
    }

    #[test]
    fn cavity_residual_on_polynomials() {
        // ψ = x²y + y³/3 + 2xy², p = x y:
        // u = ψ_y = x² + y² + 4xy, v = -ψ_x = -(2xy + 2y²)
        let s = shape(3);
        let mut ctx = PlainJets::new(s);
        let re = 100.0;
        let mut rng = stream_rng(6, Stream::Fixture);
        for _ in 0..20 {
            let (x0, y0) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let x = Jet::seed_in(s, 0, x0).unwrap();
            let y = Jet::seed_in(s, 1, y0).unwrap();
            let psi = x * x * y + (y * y * y).scale(1.0 / 3.0) + (x * y * y).scale(2.0);
            let p = x * y;
            let (rx, ry) = residual_cavity(&mut ctx, psi, p, re).unwrap();
            let u = x0 * x0 + y0 * y0 + 4.0 * x0 * y0;
            let v = -(2.0 * x0 * y0 + 2.0 * y0 * y0);
            let (ux, uy) = (2.0 * x0 + 4.0 * y0, 2.0 * y0 + 4.0 * x0);
            let (vx, vy) = (-2.0 * y0, -(2.0 * x0 + 4.0 * y0));
            let lap_u = 4.0;
            let lap_v = -4.0;
            let ex = u * ux + v * uy + y0 - lap_u / re;
            let ey = u * vx + v * vy + x0 - lap_v / re;
            assert!((value(rx) - ex).abs() < 1e-10);
            assert!((value(ry) - ey).abs() < 1e-10);
            assert!(streamfunction_divergence(&psi).abs() < 1e-12);
        }
        let mut low = PlainJets::new(shape(2));
        let z = Jet::zero(shape(2));
        assert!(residual_cavity(&mut low, z, z, re).is_err());
    }

    #[test]
    fn condition_target_examples() {
        let b = ProblemSpec::preset("burgers").unwrap();
        let t = b.condition_targets(ConditionSlot::Initial, &[[0.5, 0.0]]).unwrap();
        assert_eq!(t[0].value, vec![-1.0]);
        assert!(matches!(
            b.condition_targets(ConditionSlot::Initial, &[[0.5, 0.1]]),
            Err(PinnError::Domain(_))
        ));
        let bc = b.condition_targets(ConditionSlot::Boundary, &[[1.0, 0.3]]).unwrap();
        assert_eq!(bc[0].value, vec![0.0]);

        let kg = ProblemSpec::preset("klein_gordon").unwrap();
        let t = kg.condition_targets(ConditionSlot::Initial, &[[0.3, 0.0]]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].kind, TargetKind::Initial);
        assert!((t[0].value[0] - 0.3).abs() < 1e-15);
        assert_eq!(t[1].kind, TargetKind::InitialVelocity);
        assert_eq!(t[1].value, vec![0.0]);
        let h = kg.condition_targets(ConditionSlot::Boundary, &[[1.0, 0.5]]).unwrap();
        assert!((h[0].value[0] - klein_gordon_exact(1.0, 0.5)).abs() < 1e-15);

        let cav = ProblemSpec::preset("cavity").unwrap();
        let lid = cav.condition_targets(ConditionSlot::Initial, &[[0.4, 1.0]]).unwrap();
        assert_eq!((lid[0].kind, lid[0].value.clone()), (TargetKind::Lid, vec![1.0, 0.0]));
        let wall = cav.condition_targets(ConditionSlot::Boundary, &[[0.0, 0.4]]).unwrap();
        assert_eq!((wall[0].kind, wall[0].value.clone()), (TargetKind::Wall, vec![0.0, 0.0]));
        assert!(cav.condition_targets(ConditionSlot::Boundary, &[[0.5, 1.0]]).is_err());
    }

    #[test]
    fn exact_solution_examples() {
        let h = ProblemSpec::preset("helmholtz14").unwrap();
        assert!((h.exact_solution([0.5, 0.125]).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(matches!(h.exact_solution([1.5, 0.0]), Err(PinnError::Domain(_))));
        let kg = ProblemSpec::preset("klein_gordon").unwrap();
        assert_eq!(kg.exact_solution([1.0, 0.0]).unwrap(), vec![1.0]);
        let b = ProblemSpec::preset("burgers").unwrap();
        for &x in &[-0.7, 0.0, 0.3] {
            assert_eq!(b.exact_solution([x, 0.0]).unwrap(), vec![-(PI * x).sin()]);
        }
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PROBLEM_NAMES {
            let p = ProblemSpec::preset(name).unwrap();
            p.validate().unwrap();
            let json = serde_json::to_string(&p).unwrap();
            let back: ProblemSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, p);
        }
        assert!(matches!(ProblemSpec::preset("heat"), Err(PinnError::Usage(_))));
        let cav = ProblemSpec::preset("cavity").unwrap();
        assert_eq!(cav.slot_count(ConditionSlot::Boundary), 300);
        assert_eq!(cav.slot_count(ConditionSlot::Initial), 300);
        let mut bad = ProblemSpec::preset("cavity").unwrap();
        bad.jet_order = 2;
        assert!(bad.validate().is_err());
    }
}
