//! Task losses, per-task gradients, the conflict-resolving combiner, Adam,
//! and the training loop.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arith::{JetArith, JetEval};
use crate::error::{PinnError, Result};
use crate::jet::{Jet, JetShape};
use crate::network::{seed_point, Architecture, Layout, NetworkParams};
use crate::problems::{idx, ConditionTarget, PressureAnchor, ProblemSpec, TargetKind};
use crate::rng::{stream_rng, Stream};
use crate::sampling::CollocationSet;
use crate::tape::{GradientVector, Tape};

/// Points per work unit. Fixed so that partial sums, and therefore every
/// loss and gradient, do not depend on the number of worker threads.
pub const CHUNK: usize = 256;

/// Task order used throughout: PDE, initial, boundary.
pub const TASK_NAMES: [&str; 3] = ["pde", "ic", "bc"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Std,
    Lda,
    Gc,
    Acr,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Std, Variant::Lda, Variant::Gc, Variant::Acr];

    pub fn architecture(self) -> Architecture {
        match self {
            Variant::Std | Variant::Gc => Architecture::Mlp,
            Variant::Lda | Variant::Acr => Architecture::Lda,
        }
    }

    pub fn resolves_conflicts(self) -> bool {
        matches!(self, Variant::Gc | Variant::Acr)
    }

    /// Row label used in summary tables.
    pub fn model_name(self) -> &'static str {
        match self {
            Variant::Std => "Std-PINN",
            Variant::Lda => "LDA-PINN",
            Variant::Gc => "GC-PINN",
            Variant::Acr => "ACR-PINN",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Variant::Std => "std",
            Variant::Lda => "lda",
            Variant::Gc => "gc",
            Variant::Acr => "acr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.key().eq_ignore_ascii_case(s) || v.model_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| PinnError::Usage(format!("unknown variant {s:?}; expected std, lda, gc or acr")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.epsilon.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PinnError::Config(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub iterations: usize,
    pub adam: AdamConfig,
    /// Weights of the PDE, initial and boundary losses.
    pub loss_weights: [f64; 3],
    /// Trace cadence in iterations; the first and last iterations are
    /// always recorded.
    pub log_every: usize,
}

impl TrainingConfig {
    pub fn new(variant: Variant, iterations: usize) -> Self {
        TrainingConfig {
            variant,
            iterations,
            adam: AdamConfig::default(),
            loss_weights: [1.0; 3],
            log_every: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.log_every == 0 {
            return Err(PinnError::Config("log_every must be positive".into()));
        }
        if self.loss_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PinnError::Config(format!(
                "loss weights must be finite and non-negative, got {:?}",
                self.loss_weights
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub pde: f64,
    pub ic: f64,
    pub bc: f64,
}

impl TaskLosses {
    pub fn as_array(&self) -> [f64; 3] {
        [self.pde, self.ic, self.bc]
    }

    pub fn weighted_total(&self, weights: [f64; 3]) -> f64 {
        weights[0] * self.pde + weights[1] * self.ic + weights[2] * self.bc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskGradients {
    pub pde: GradientVector,
    pub ic: GradientVector,
    pub bc: GradientVector,
    pub losses: TaskLosses,
}

impl TaskGradients {
    pub fn to_vec(&self) -> Vec<GradientVector> {
        vec![self.pde.clone(), self.ic.clone(), self.bc.clone()]
    }
}

/// One squared-residual term of a task loss.
#[derive(Clone, Debug, PartialEq)]
pub enum LossTerm {
    Interior([f64; 2]),
    Condition(ConditionTarget),
    Anchor(PressureAnchor),
}

impl LossTerm {
    pub fn point(&self) -> [f64; 2] {
        match self {
            LossTerm::Interior(p) => *p,
            LossTerm::Condition(t) => t.point,
            LossTerm::Anchor(a) => a.point,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            LossTerm::Interior(_) => "pde residual",
            LossTerm::Condition(t) => match t.kind {
                TargetKind::Initial => "initial condition",
                TargetKind::InitialVelocity => "initial velocity",
                TargetKind::Boundary => "boundary condition",
                TargetKind::Lid => "lid condition",
                TargetKind::Wall => "wall condition",
            },
            LossTerm::Anchor(_) => "pressure anchor",
        }
    }
}

/// Weighted loss terms of the three tasks, built once per collocation set.
///
/// Each task loss is `Σ_k weight_k |r_k|²`. Interior points carry `1/N`;
/// condition targets carry one over the count of their target kind, so a
/// slot holding two kinds is the sum of two means. The cavity pressure
/// anchor is a single term of weight one in the boundary task.
#[derive(Clone, Debug)]
pub struct TrainingData {
    pub tasks: [Vec<(LossTerm, f64)>; 3],
}

impl TrainingData {
    pub fn new(problem: &ProblemSpec, points: &CollocationSet) -> Result<Self> {
        points.check_against(problem)?;
        let n = points.interior.len() as f64;
        let pde = points
            .interior
            .iter()
            .map(|&p| (LossTerm::Interior(p), 1.0 / n))
            .collect();
        let ic = condition_terms(&points.initial);
        let mut bc = condition_terms(&points.boundary);
        if let Some(anchor) = &problem.pressure_anchor {
            bc.push((LossTerm::Anchor(anchor.clone()), 1.0));
        }
        Ok(TrainingData {
            tasks: [pde, ic, bc],
        })
    }
}

fn condition_terms(targets: &[ConditionTarget]) -> Vec<(LossTerm, f64)> {
    let count = |k: TargetKind| targets.iter().filter(|t| t.kind == k).count() as f64;
    targets
        .iter()
        .map(|t| (LossTerm::Condition(t.clone()), 1.0 / count(t.kind)))
        .collect()
}

fn term_residuals<A: JetArith>(
    ctx: &mut A,
    layout: &Layout,
    problem: &ProblemSpec,
    input: &[A::Var],
    term: &LossTerm,
) -> Result<Vec<A::Var>> {
    let out = layout.forward(ctx, input);
    match term {
        LossTerm::Interior(p) => problem.residuals(ctx, *p, &out),
        LossTerm::Condition(t) => problem.condition_residuals(ctx, t, &out),
        LossTerm::Anchor(a) => {
            let p = ctx.derivative(out[1], idx::U);
            Ok(vec![ctx.offset(p, -a.value)])
        }
    }
}

fn non_finite(term: &LossTerm) -> PinnError {
    let p = term.point();
    PinnError::numeric(
        format!("{} at ({}, {})", term.label(), p[0], p[1]),
        "non-finite residual",
    )
}

/// Squared residual norms `|r|²` of every term of every task, on jets
/// without recording.
pub fn term_squares(params: &NetworkParams, problem: &ProblemSpec, data: &TrainingData) -> Result<[Vec<f64>; 3]> {
    let shape = problem.jet_shape();
    let layout = params.layout();
    let eval = |(term, _): &(LossTerm, f64)| -> Result<f64> {
        let mut ctx = JetEval::new(params.flat(), shape);
        let x = seed_point(&term.point(), shape)?;
        let r = term_residuals(&mut ctx, layout, problem, &x, term)?;
        let sq: f64 = r.iter().map(|j: &Jet| j.value() * j.value()).sum();
        if sq.is_finite() {
            Ok(sq)
        } else {
            Err(non_finite(term))
        }
    };
    let mut out: [Vec<f64>; 3] = Default::default();
    for (task, terms) in data.tasks.iter().enumerate() {
        out[task] = terms.par_iter().map(eval).collect::<Result<_>>()?;
    }
    Ok(out)
}

/// The three task losses at `params`, without gradients.
pub fn task_losses(params: &NetworkParams, problem: &ProblemSpec, data: &TrainingData) -> Result<TaskLosses> {
    let squares = term_squares(params, problem, data)?;
    let mut l = [0.0; 3];
    for task in 0..3 {
        for chunk in data.tasks[task]
            .chunks(CHUNK)
            .zip(squares[task].chunks(CHUNK))
        {
            let partial: f64 = chunk.0.iter().zip(chunk.1).map(|((_, w), s)| w * s).sum();
            l[task] += partial;
        }
    }
    Ok(TaskLosses {
        pde: l[0],
        ic: l[1],
        bc: l[2],
    })
}

fn chunk_gradient(
    params: &NetworkParams,
    problem: &ProblemSpec,
    shape: JetShape,
    terms: &[(LossTerm, f64)],
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new(shape, params.flat().to_vec());
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let mut seeds = Vec::with_capacity(2);
    for (term, w) in terms {
        tape.reset();
        let x: Vec<_> = seed_point(&term.point(), shape)?
            .into_iter()
            .map(|j| tape.input(j))
            .collect();
        let r = term_residuals(&mut tape, params.layout(), problem, &x, term)?;
        seeds.clear();
        let mut sq = 0.0;
        for &v in &r {
            let val = tape.value(v).value();
            sq += val * val;
            seeds.push((v, 2.0 * w * val));
        }
        if !sq.is_finite() {
            return Err(non_finite(term));
        }
        loss += w * sq;
        tape.backward_into(&seeds, &mut grad).map_err(|e| match e {
            PinnError::Numeric { detail, .. } => {
                let p = term.point();
                PinnError::numeric(format!("{} at ({}, {})", term.label(), p[0], p[1]), detail)
            }
            other => other,
        })?;
    }
    Ok((loss, grad))
}

fn task_gradient(
    params: &NetworkParams,
    problem: &ProblemSpec,
    terms: &[(LossTerm, f64)],
) -> Result<(f64, GradientVector)> {
    let shape = problem.jet_shape();
    let parts: Vec<(f64, Vec<f64>)> = terms
        .par_chunks(CHUNK)
        .map(|c| chunk_gradient(params, problem, shape, c))
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    Ok((loss, GradientVector::from(grad)))
}

/// Loss values and parameter gradients of the three tasks, one reverse
/// sweep per collocation term.
pub fn task_gradients(
    params: &NetworkParams,
    problem: &ProblemSpec,
    data: &TrainingData,
) -> Result<TaskGradients> {
    let (l_pde, pde) = task_gradient(params, problem, &data.tasks[0])?;
    let (l_ic, ic) = task_gradient(params, problem, &data.tasks[1])?;
    let (l_bc, bc) = task_gradient(params, problem, &data.tasks[2])?;
    Ok(TaskGradients {
        pde,
        ic,
        bc,
        losses: TaskLosses {
            pde: l_pde,
            ic: l_ic,
            bc: l_bc,
        },
    })
}

/// `Σ_k v_k`, accumulated left to right from zero.
pub fn sum_in_order(vectors: &[GradientVector]) -> Result<GradientVector> {
    let n = check_lengths(vectors)?;
    let mut out = GradientVector::zeros(n);
    for v in vectors {
        for (a, b) in out.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *a += b;
        }
    }
    Ok(out)
}

/// `Σ_k w_k g_k`: each vector is scaled first, then summed in order.
pub fn weighted_sum(grads: &[GradientVector], weights: &[f64]) -> Result<GradientVector> {
    sum_in_order(&scale_all(grads, weights)?)
}

fn scale_all(grads: &[GradientVector], weights: &[f64]) -> Result<Vec<GradientVector>> {
    if grads.len() != weights.len() {
        return Err(PinnError::Shape(format!(
            "{} gradients but {} weights",
            grads.len(),
            weights.len()
        )));
    }
    Ok(grads
        .iter()
        .zip(weights)
        .map(|(g, &w)| GradientVector::from(g.as_slice().iter().map(|x| w * x).collect::<Vec<_>>()))
        .collect())
}

fn check_lengths(vectors: &[GradientVector]) -> Result<usize> {
    let n = vectors.first().map_or(0, |v| v.len());
    if vectors.iter().any(|v| v.len() != n) {
        return Err(PinnError::Shape("gradient vectors differ in length".into()));
    }
    Ok(n)
}

/// One projection performed by [`pcgrad_resolve_observed`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub task: usize,
    pub against: usize,
    pub dot_before: f64,
    pub dot_after: f64,
    pub norm_before: f64,
    pub norm_after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub gradient: GradientVector,
    pub conflicts: usize,
}

/// Conflict-resolved combination of task gradients.
///
/// Each task's working copy is visited against the other tasks in a fresh
/// random order; whenever it has a negative inner product with an original
/// task gradient, that component is projected out. The working copies are
/// then summed in task order.
pub fn pcgrad_resolve<R: Rng + ?Sized>(grads: &[GradientVector], rng: &mut R) -> Result<Resolved> {
    resolve(grads, rng, None)
}

/// [`pcgrad_resolve`], reporting every projection to `observe`.
pub fn pcgrad_resolve_observed<R: Rng + ?Sized>(
    grads: &[GradientVector],
    rng: &mut R,
    observe: &mut dyn FnMut(&Projection),
) -> Result<Resolved> {
    resolve(grads, rng, Some(observe))
}

fn resolve<R: Rng + ?Sized>(
    grads: &[GradientVector],
    rng: &mut R,
    mut observe: Option<&mut dyn FnMut(&Projection)>,
) -> Result<Resolved> {
    if grads.len() < 2 {
        return Err(PinnError::Shape(format!(
            "conflict resolution needs at least two tasks, got {}",
            grads.len()
        )));
    }
    check_lengths(grads)?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(PinnError::numeric(format!("task gradient {i}"), "non-finite entry"));
    }
    let norms_sq: Vec<f64> = grads.iter().map(|g| g.norm_sq()).collect();
    let mut conflicts = 0;
    let mut working = Vec::with_capacity(grads.len());
    for i in 0..grads.len() {
        let mut g = grads[i].clone();
        let mut order: Vec<usize> = (0..grads.len()).filter(|&j| j != i).collect();
        order.shuffle(rng);
        for j in order {
            let dot = g.dot(&grads[j]);
            if dot < 0.0 {
                let norm_before = observe.as_ref().map(|_| g.norm());
                g.add_scaled(-dot / norms_sq[j], &grads[j]);
                conflicts += 1;
                if let (Some(f), Some(norm_before)) = (observe.as_mut(), norm_before) {
                    f(&Projection {
                        task: i,
                        against: j,
                        dot_before: dot,
                        dot_after: g.dot(&grads[j]),
                        norm_before,
                        norm_after: g.norm(),
                    });
                }
            }
        }
        working.push(g);
    }
    Ok(Resolved {
        gradient: sum_in_order(&working)?,
        conflicts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update. A gradient with a non-finite entry is
    /// refused and leaves both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut [f64], grad: &GradientVector, cfg: &AdamConfig) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(PinnError::Shape(format!(
                "Adam state has {} entries, parameters {}, gradient {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        if let Some(k) = grad.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(PinnError::numeric(
                format!("gradient entry {k}"),
                "non-finite value; Adam step refused",
            ));
        }
        self.t += 1;
        let exp = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - cfg.beta1.powi(exp);
        let c2 = 1.0 - cfg.beta2.powi(exp);
        for (k, &g) in grad.as_slice().iter().enumerate() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        Ok(())
    }
}

/// One line of the convergence trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    #[serde(rename = "L_pde")]
    pub l_pde: f64,
    #[serde(rename = "L_ic")]
    pub l_ic: f64,
    #[serde(rename = "L_bc")]
    pub l_bc: f64,
    pub rel_l2: Option<f64>,
    pub rel_linf: Option<f64>,
    /// Projections applied since the previous record.
    pub conflicts: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub trace: Vec<TraceRecord>,
    pub final_losses: TaskLosses,
    pub total_conflicts: u64,
}

/// Relative L2 and L∞ errors of a parameter set, if evaluation is wanted.
pub type ErrorProbe<'a> = &'a mut dyn FnMut(&NetworkParams) -> Result<(f64, f64)>;

/// Combine task gradients the way `variant` prescribes.
pub fn combine<R: Rng + ?Sized>(
    grads: &TaskGradients,
    config: &TrainingConfig,
    rng: &mut R,
) -> Result<Resolved> {
    let scaled = scale_all(&grads.to_vec(), &config.loss_weights)?;
    if config.variant.resolves_conflicts() {
        pcgrad_resolve(&scaled, rng)
    } else {
        Ok(Resolved {
            gradient: sum_in_order(&scaled)?,
            conflicts: 0,
        })
    }
}

/// Full-batch training from `init` on a fixed collocation set.
///
/// Records a trace line at iteration 0, every `log_every` iterations and at
/// the final iteration; the losses in a record belong to the parameters
/// after that many updates. `on_record` sees each record as it is made.
pub fn train_network(
    problem: &ProblemSpec,
    data: &TrainingData,
    init: NetworkParams,
    config: &TrainingConfig,
    seed: u64,
    mut probe: Option<ErrorProbe<'_>>,
    on_record: &mut dyn FnMut(&TraceRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if init.config().architecture != config.variant.architecture() {
        return Err(PinnError::Config(format!(
            "variant {} needs a {:?} network",
            config.variant,
            config.variant.architecture()
        )));
    }
    let mut params = init;
    let mut adam = AdamState::new(params.len());
    let mut rng = stream_rng(seed, Stream::Pcgrad);
    let mut trace = Vec::new();
    let mut since_record = 0;
    let mut total_conflicts = 0u64;
    let mut record = |k: usize, losses: &TaskLosses, params: &NetworkParams, conflicts: usize| -> Result<()> {
        let (rel_l2, rel_linf) = match probe.as_mut() {
            Some(f) => {
                let (a, b) = f(params)?;
                (Some(a), Some(b))
            }
            None => (None, None),
        };
        let rec = TraceRecord {
            iteration: k,
            l_pde: losses.pde,
            l_ic: losses.ic,
            l_bc: losses.bc,
            rel_l2,
            rel_linf,
            conflicts,
        };
        on_record(&rec)?;
        trace.push(rec);
        Ok(())
    };

    for k in 0..config.iterations {
        let grads = task_gradients(&params, problem, data)?;
        if k % config.log_every == 0 {
            record(k, &grads.losses, &params, since_record)?;
            since_record = 0;
        }
        let combined = combine(&grads, config, &mut rng)?;
        since_record += combined.conflicts;
        total_conflicts += combined.conflicts as u64;
        adam.step(params.flat_mut(), &combined.gradient, &config.adam)?;
    }
    let final_losses = task_losses(&params, problem, data)?;
    record(config.iterations, &final_losses, &params, since_record)?;
    Ok(TrainOutcome {
        params,
        trace,
        final_losses,
        total_conflicts,
    })
}
