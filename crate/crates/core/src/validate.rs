//! Self-checks that need no training: derivatives against finite
//! differences, combiner properties, the LDA reduction, residuals on known
//! solutions and the sampling audit.

use std::fmt::Write as _;

use rand::Rng;

use crate::arith::{Fault, JetArith, JetEval, NetArith, PlainJets, ValueEval};
use crate::jet::{Jet, JetShape};
use crate::network::{init_params, seed_point, strip_attention, Architecture, NetworkConfig, NetworkParams};
use crate::oracles::{burgers_cole_hopf, finite_diff_check, mixed_error};
use crate::problems::{
    helmholtz_exact_jet, klein_gordon_exact_jet, residual_burgers, residual_helmholtz,
    residual_klein_gordon, Equation, KleinGordonParams, ProblemSpec, PROBLEM_NAMES,
};
use crate::rng::{stream_rng, Stream, StreamRng};
use crate::sampling::{audit_strata, lhs_sample};
use crate::tape::{GradientVector, Tape};
use crate::training::{pcgrad_resolve, pcgrad_resolve_observed, sum_in_order};

/// Tolerance for first- and second-order derivative coefficients.
pub const DERIVATIVE_TOL: f64 = 1e-5;
/// Tolerance for third-order coefficients.
pub const THIRD_ORDER_TOL: f64 = 1e-3;
pub const EXACT_RESIDUAL_TOL: f64 = 1e-8;
pub const FD_RESIDUAL_TOL: f64 = 1e-3;
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Deliberate defect injected into jet evaluation, for negative controls.
    pub fault: Option<Fault>,
    pub networks: usize,
    pub pcgrad_instances: usize,
    pub reduction_points: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 1234,
            fault: None,
            networks: 20,
            pcgrad_instances: 10_000,
            reduction_points: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut s = String::new();
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{mark}  {:<w$}  {}", c.name, c.detail);
        }
        let failed = self.failures().count();
        let _ = writeln!(s, "{} checks, {} failed", self.checks.len(), failed);
        s
    }
}

/// Runs every check with `opts`.
pub fn validate_suite(opts: &ValidateOptions) -> ValidationReport {
    let mut checks = check_elementary_ops(opts);
    checks.push(check_network_jets(opts));
    checks.push(check_parameter_gradients(opts));
    checks.extend(check_pcgrad(opts));
    checks.extend(check_lda_reduction(opts));
    checks.extend(check_residuals(opts));
    checks.push(check_stratification(opts));
    ValidationReport { checks }
}

fn fixture(opts: &ValidateOptions, salt: u64) -> StreamRng {
    stream_rng(opts.seed.wrapping_add(salt), Stream::Fixture)
}

fn jet_ctx<'a>(params: &'a [f64], shape: JetShape, fault: Option<Fault>) -> JetEval<'a> {
    let ctx = JetEval::new(params, shape);
    match fault {
        Some(f) => ctx.with_fault(f),
        None => ctx,
    }
}

/// Worst mixed error of a jet against FD estimates of `f`, split into
/// orders up to two and order three.
fn compare_jet(jet: &Jet, f: impl Fn(&[f64]) -> f64, point: &[f64]) -> (f64, f64) {
    let shape = jet.shape();
    let low = finite_diff_check(&f, point, shape.order().min(2), 1e-4).expect("valid stencil");
    let high = (shape.order() >= 3).then(|| finite_diff_check(&f, point, 3, 1e-4).expect("valid stencil"));
    let (mut e12, mut e3) = (0.0f64, 0.0f64);
    for i in 1..shape.len() {
        let ad = jet.coeff(i) * shape.factorial(i);
        if shape.degree(i) <= 2 {
            e12 = e12.max(mixed_error(ad, low.estimates[i].value));
        } else if let Some(h) = &high {
            e3 = e3.max(mixed_error(ad, h.estimates[i].value));
        }
    }
    (e12, e3)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Add,
    Sub,
    Mul,
    Scale,
    Offset,
    Tanh,
    Affine,
}

impl Op {
    const ALL: [Op; 7] = [Op::Add, Op::Sub, Op::Mul, Op::Scale, Op::Offset, Op::Tanh, Op::Affine];

    fn name(self) -> &'static str {
        match self {
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale => "scale",
            Op::Offset => "offset",
            Op::Tanh => "tanh",
            Op::Affine => "affine",
        }
    }

    /// The op applied to the two inputs; `affine` reads the parameters
    /// `[w0, w1, b]`.
    fn apply<A: NetArith>(self, ctx: &mut A, x: A::Var, y: A::Var) -> A::Var {
        match self {
            Op::Add => ctx.add(x, y),
            Op::Sub => ctx.sub(x, y),
            Op::Mul => ctx.mul(x, y),
            Op::Scale => ctx.scale(x, -1.7),
            Op::Offset => ctx.offset(y, 0.3),
            Op::Tanh => ctx.tanh(x),
            Op::Affine => ctx.affine(0, 2, &[x, y]),
        }
    }
}

/// Each elementary jet operation at order 3 against finite differences of
/// its plain-value counterpart. A failing check names the operation.
pub fn check_elementary_ops(opts: &ValidateOptions) -> Vec<CheckResult> {
    let shape = JetShape::new(2, 3).expect("valid shape");
    let params = [0.8, -1.3, 0.25];
    let mut rng = fixture(opts, 1);
    let points: Vec<[f64; 2]> = (0..10).map(|_| [rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)]).collect();
    Op::ALL
        .iter()
        .map(|&op| {
            let (mut e12, mut e3) = (0.0f64, 0.0f64);
            for p in &points {
                let x = seed_point(p, shape).expect("two coordinates");
                let mut ctx = jet_ctx(&params, shape, opts.fault);
                let jet = op.apply(&mut ctx, x[0], x[1]);
                let f = |q: &[f64]| op.apply(&mut ValueEval::new(&params), q[0], q[1]);
                let (a, b) = compare_jet(&jet, f, p);
                e12 = e12.max(a);
                e3 = e3.max(b);
            }
            CheckResult::new(
                format!("autodiff/op_{}", op.name()),
                e12 < DERIVATIVE_TOL && e3 < THIRD_ORDER_TOL,
                format!("max error {e12:.2e} (orders 1-2), {e3:.2e} (order 3)"),
            )
        })
        .collect()
}

/// Small random networks of both architectures.
fn random_networks(opts: &ValidateOptions) -> Vec<NetworkParams> {
    let mut rng = fixture(opts, 2);
    (0..opts.networks)
        .map(|k| {
            let arch = if k % 2 == 0 { Architecture::Mlp } else { Architecture::Lda };
            let layers = rng.gen_range(1..=3);
            let hidden = (0..layers).map(|_| rng.gen_range(2..=5)).collect();
            let cfg = NetworkConfig::new(2, hidden, rng.gen_range(1..=2), arch);
            init_params(&cfg, opts.seed.wrapping_add(k as u64)).expect("valid config")
        })
        .collect()
}

/// Output jets of random networks up to order 3 against finite differences.
pub fn check_network_jets(opts: &ValidateOptions) -> CheckResult {
    let shape = JetShape::new(2, 3).expect("valid shape");
    let mut rng = fixture(opts, 3);
    let (mut e12, mut e3) = (0.0f64, 0.0f64);
    for params in random_networks(opts) {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let x = seed_point(&p, shape).expect("two coordinates");
        let out = params.layout().forward(&mut jet_ctx(params.flat(), shape, opts.fault), &x);
        for (c, jet) in out.iter().enumerate() {
            let (a, b) = compare_jet(jet, |q| params.forward_values(q)[c], &p);
            e12 = e12.max(a);
            e3 = e3.max(b);
        }
    }
    CheckResult::new(
        "autodiff/network_jets",
        e12 < DERIVATIVE_TOL && e3 < THIRD_ORDER_TOL,
        format!("{} networks, max error {e12:.2e} (orders 1-2), {e3:.2e} (order 3)", opts.networks),
    )
}

/// Parameter gradients from the tape of `Σ (∂^α out)²` over every output
/// and every multi-index up to order 3, against central differences of the
/// same quantity computed with jets.
pub fn check_parameter_gradients(opts: &ValidateOptions) -> CheckResult {
    let shape = JetShape::new(2, 3).expect("valid shape");
    let mut rng = fixture(opts, 4);
    let mut worst = 0.0f64;
    let mut count = 0;
    for params in random_networks(opts) {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let loss = |theta: &[f64]| -> f64 {
            let mut ctx = jet_ctx(theta, shape, opts.fault);
            let x = seed_point(&p, shape).expect("two coordinates");
            let out = params.layout().forward(&mut ctx, &x);
            let mut s = 0.0;
            for o in out {
                for i in 0..shape.len() {
                    let d = o.coeff(i) * shape.factorial(i);
                    s += d * d;
                }
            }
            s
        };
        let mut tape = Tape::new(shape, params.flat().to_vec());
        let x: Vec<_> = seed_point(&p, shape)
            .expect("two coordinates")
            .into_iter()
            .map(|j| tape.input(j))
            .collect();
        let out = params.layout().forward(&mut tape, &x);
        let mut seeds = Vec::new();
        for o in out {
            for i in 0..shape.len() {
                let d = tape.derivative(o, i);
                seeds.push((d, 2.0 * tape.value_of(d)));
            }
        }
        let mut grad = GradientVector::zeros(params.len());
        if tape.backward_into(&seeds, grad.as_mut_slice()).is_err() {
            return CheckResult::new("autodiff/parameter_gradients", false, "reverse sweep failed");
        }
        let mut theta = params.flat().to_vec();
        let h = 1e-6;
        for k in 0..theta.len() {
            let t0 = theta[k];
            theta[k] = t0 + h;
            let up = loss(&theta);
            theta[k] = t0 - h;
            let down = loss(&theta);
            theta[k] = t0;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(mixed_error(grad.as_slice()[k], fd));
            count += 1;
        }
    }
    CheckResult::new(
        "autodiff/parameter_gradients",
        worst < DERIVATIVE_TOL,
        format!("{count} parameters over {} networks, max error {worst:.2e}", opts.networks),
    )
}

fn random_grads(rng: &mut StreamRng, lo: f64) -> Vec<GradientVector> {
    let k = rng.gen_range(2..=3);
    let n = rng.gen_range(2..=8);
    (0..k)
        .map(|_| GradientVector::from((0..n).map(|_| rng.gen_range(lo..1.0)).collect::<Vec<_>>()))
        .collect()
}

/// The four combiner properties over random instances.
pub fn check_pcgrad(opts: &ValidateOptions) -> Vec<CheckResult> {
    let n = opts.pcgrad_instances;
    let mut rng = fixture(opts, 5);
    let mut perm = stream_rng(opts.seed, Stream::Pcgrad);

    let mut pass_through = 0;
    let mut cooperative = 0;
    let (mut worst_dot, mut worst_growth, mut projections) = (0.0f64, 0.0f64, 0usize);
    let mut worst_anti = 0.0f64;
    for k in 0..n {
        // half the instances are non-negative, hence cooperative
        let grads = random_grads(&mut rng, if k % 2 == 0 { 0.0 } else { -1.0 });
        let coop = (0..grads.len())
            .all(|i| (0..grads.len()).all(|j| i == j || grads[i].dot(&grads[j]) >= 0.0));
        let out = pcgrad_resolve_observed(&grads, &mut perm, &mut |p| {
            worst_dot = worst_dot.min(p.dot_after);
            worst_growth = worst_growth.max(p.norm_after / p.norm_before - 1.0);
            projections += 1;
        })
        .expect("valid input");
        if coop {
            cooperative += 1;
            if out.gradient == sum_in_order(&grads).expect("same lengths") {
                pass_through += 1;
            }
        }

        let g = random_grads(&mut rng, -1.0).swap_remove(0);
        let s = if k % 2 == 0 { 1.0 } else { rng.gen_range(0.1..10.0) };
        let minus = GradientVector::from(g.as_slice().iter().map(|v| -s * v).collect::<Vec<_>>());
        let out = pcgrad_resolve(&[g.clone(), minus], &mut perm).expect("valid input");
        let scale = g.norm() * (1.0 + s);
        let rel = out.gradient.norm() / scale;
        if s == 1.0 && !out.gradient.is_zero() {
            worst_anti = f64::INFINITY;
        }
        worst_anti = worst_anti.max(rel);
    }
    vec![
        CheckResult::new(
            "pcgrad/pass_through",
            pass_through == cooperative && cooperative > 0,
            format!("{pass_through} of {cooperative} cooperative instances equal the plain sum exactly"),
        ),
        CheckResult::new(
            "pcgrad/orthogonality",
            worst_dot >= -ORTHOGONALITY_TOL,
            format!("{projections} projections, min post-projection dot {worst_dot:.2e}"),
        ),
        CheckResult::new(
            "pcgrad/antiparallel",
            worst_anti <= 1e-14,
            format!("{n} pairs, max |output| / (|g|(1+s)) {worst_anti:.2e}; exact zero when s = 1"),
        ),
        CheckResult::new(
            "pcgrad/norm_bound",
            worst_growth <= 1e-12,
            format!("max relative norm growth {worst_growth:.2e} (rounding allowance 1e-12)"),
        ),
    ]
}

/// LDA with zeroed encoders and gates against the MLP with the same
/// backbone, for every benchmark configuration, values and jets compared
/// bit for bit.
pub fn check_lda_reduction(opts: &ValidateOptions) -> Vec<CheckResult> {
    PROBLEM_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let problem = ProblemSpec::preset(name).expect("known preset");
            let name = format!("network/lda_reduction/{name}");
            let lda = init_params(&problem.network(Architecture::Lda), opts.seed).expect("valid preset");
            let (lda, mlp) = match strip_attention(&lda) {
                Ok(pair) => pair,
                Err(e) => return CheckResult::new(name, false, e.to_string()),
            };
            let shape = problem.jet_shape();
            let mut rng = fixture(opts, 10 + k as u64);
            let mut mismatches = 0;
            for _ in 0..opts.reduction_points {
                let p: [f64; 2] = std::array::from_fn(|a| rng.gen_range(problem.lower[a]..problem.upper[a]));
                let same_values = lda.forward_values(&p) == mlp.forward_values(&p);
                let same_jets = lda.forward_at(&p, shape).ok() == mlp.forward_at(&p, shape).ok();
                if !(same_values && same_jets) {
                    mismatches += 1;
                }
            }
            CheckResult::new(
                name,
                mismatches == 0,
                format!("{mismatches} of {} points differ", opts.reduction_points),
            )
        })
        .collect()
}

/// Residual operators on solutions they must satisfy: analytic jets for
/// Helmholtz and Klein–Gordon, finite-difference jets (h = 1e-4) of the
/// Cole–Hopf oracle for Burgers.
pub fn check_residuals(opts: &ValidateOptions) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let shape = JetShape::new(2, 2).expect("valid shape");
    let mut ctx = PlainJets::new(shape);
    for (k, name) in ["helmholtz14", "helmholtz44"].iter().enumerate() {
        let problem = ProblemSpec::preset(name).expect("known preset");
        let Equation::Helmholtz { k: wave, a1, a2 } = problem.equation else {
            unreachable!("helmholtz preset")
        };
        let mut rng = fixture(opts, 20 + k as u64);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let p = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let u = helmholtz_exact_jet(p[0], p[1], a1, a2, shape);
            let r = residual_helmholtz(&mut ctx, u, p, wave, a1, a2).map(|r| r.value());
            worst = worst.max(r.map_or(f64::INFINITY, f64::abs));
        }
        out.push(CheckResult::new(
            format!("residual/{name}_exact"),
            worst < EXACT_RESIDUAL_TOL,
            format!("50 points, max |r| {worst:.2e}"),
        ));
    }

    let mut rng = fixture(opts, 22);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let u = klein_gordon_exact_jet(p[0], p[1], shape);
        let r = residual_klein_gordon(&mut ctx, u, p, KleinGordonParams::default()).map(|r| r.value());
        worst = worst.max(r.map_or(f64::INFINITY, f64::abs));
    }
    out.push(CheckResult::new(
        "residual/klein_gordon_manufactured",
        worst < EXACT_RESIDUAL_TOL,
        format!("50 points, max |r| {worst:.2e}"),
    ));

    let problem = ProblemSpec::preset("burgers").expect("known preset");
    let Equation::Burgers { nu } = problem.equation else {
        unreachable!("burgers preset")
    };
    let h = BURGERS_FD_STEP;
    let mut rng = fixture(opts, 23);
    let (mut worst, mut at) = (0.0f64, [0.0; 2]);
    for _ in 0..50 {
        let p = [rng.gen_range(-1.0..1.0), rng.gen_range(2.0 * h..1.0)];
        let r = burgers_fd_residual(p, nu, h).abs();
        if !(r <= worst) {
            (worst, at) = (r, p);
        }
    }
    let mut detail = format!("50 points, h = {h:e}, max |r| {worst:.2e} at ({:.4}, {:.4})", at[0], at[1]);
    if !(worst < FD_RESIDUAL_TOL) {
        let refined: Vec<String> = [2.0, 4.0, 8.0]
            .iter()
            .map(|d| format!("{:.1e}", burgers_fd_residual(at, nu, h / d).abs()))
            .collect();
        let _ = write!(detail, "; same point at h/2, h/4, h/8: {}", refined.join(", "));
    }
    out.push(CheckResult::new(
        "residual/burgers_cole_hopf_fd",
        worst < FD_RESIDUAL_TOL,
        detail,
    ));
    out
}

/// Central-difference step for the Burgers oracle residual.
pub const BURGERS_FD_STEP: f64 = 1e-4;

/// `u_t + u u_x − ν u_xx` of the Cole–Hopf solution with every derivative
/// taken by central differences of step `h`. Non-finite on failure.
pub fn burgers_fd_residual(p: [f64; 2], nu: f64, h: f64) -> f64 {
    let shape = JetShape::new(2, 2).expect("valid shape");
    let f = |q: &[f64]| burgers_cole_hopf(q[0], q[1], nu).unwrap_or(f64::NAN);
    finite_diff_check(f, &p, 2, h)
        .and_then(|d| Jet::from_derivatives(shape, &d.values()))
        .and_then(|u| residual_burgers(&mut PlainJets::new(shape), u, nu))
        .map_or(f64::NAN, |r| r.value())
}

/// Latin hypercube strata for n ∈ {100, 1000, 10000} in one and two
/// dimensions.
pub fn check_stratification(opts: &ValidateOptions) -> CheckResult {
    let mut problems = Vec::new();
    let mut cases = 0;
    for n in [100, 1000, 10_000] {
        for bounds in [&[(0.0, 1.0)][..], &[(-1.0, 1.0), (0.0, 1.0)][..]] {
            cases += 1;
            match lhs_sample(n, bounds, opts.seed) {
                Ok(pts) => {
                    for (d, &(lo, hi)) in bounds.iter().enumerate() {
                        let col: Vec<f64> = pts.iter().map(|p| p[d]).collect();
                        if let Err(e) = audit_strata(&col, lo, hi) {
                            problems.push(format!("n={n} dims={} axis {d}: {e}", bounds.len()));
                        }
                    }
                }
                Err(e) => problems.push(format!("n={n}: {e}")),
            }
        }
    }
    CheckResult::new(
        "sampling/lhs_strata",
        problems.is_empty(),
        if problems.is_empty() {
            format!("{cases} designs, one point per stratum on every axis")
        } else {
            problems.join("; ")
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> ValidateOptions {
        ValidateOptions {
            networks: 6,
            pcgrad_instances: 500,
            reduction_points: 10,
            ..ValidateOptions::default()
        }
    }

    #[test]
    fn suite_is_deterministic_and_only_the_burgers_stencil_check_fails() {
        let a = validate_suite(&quick());
        let failed: Vec<_> = a.failures().map(|c| c.name.as_str()).collect();
        assert_eq!(failed, ["residual/burgers_cole_hopf_fd"], "{}", a.render());
        assert_eq!(a, validate_suite(&quick()));
    }

    #[test]
    fn burgers_stencil_excess_is_second_order_truncation() {
        // the worst point of the fixed draw sits in the shock layer near x = 0
        let nu = 0.01 / std::f64::consts::PI;
        let p = [-0.0035, 0.6524];
        let r: Vec<f64> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|d| burgers_fd_residual(p, nu, BURGERS_FD_STEP / d).abs())
            .collect();
        assert!(r[0] > FD_RESIDUAL_TOL, "{r:?}");
        for w in r.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "{r:?}");
        }
        assert!(r[1] < FD_RESIDUAL_TOL, "{r:?}");
    }

    #[test]
    fn corrupted_tanh_is_caught_and_named() {
        let opts = ValidateOptions {
            fault: Some(Fault::TanhDerivative),
            ..quick()
        };
        let failed: Vec<String> = check_elementary_ops(&opts)
            .into_iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        assert_eq!(failed, vec!["autodiff/op_tanh"]);
        assert!(!check_network_jets(&opts).passed);
        assert!(!check_parameter_gradients(&opts).passed);
    }
}
