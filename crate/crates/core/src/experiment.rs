//! Experiment configuration and the (variant × seed) run matrix.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{PinnError, Result};
use crate::metrics::{aggregate_runs, write_summary, ErrorSummary, GridEvaluator, RunErrors};
use crate::network::{init_params, NetworkParams};
use crate::problems::ProblemSpec;
use crate::sampling::{sample_problem_points, CollocationSet};
use crate::training::{
    train_network, AdamConfig, TaskLosses, TraceRecord, TrainingConfig, TrainingData, Variant,
};

pub const DEFAULT_SEEDS: [u64; 5] = [1234, 1235, 1236, 1237, 1238];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub adam: AdamConfig,
    pub loss_weights: [f64; 3],
    pub log_every: usize,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        let t = TrainingConfig::new(Variant::Std, 0);
        TrainingSettings {
            adam: t.adam,
            loss_weights: t.loss_weights,
            log_every: t.log_every,
        }
    }
}

/// User-facing experiment file.
///
/// ```json
/// {
///   "problem": "burgers",
///   "variants": ["std", "acr"],
///   "seeds": [1234],
///   "iterations": 500,
///   "training": { "adam": { "learning_rate": 0.001 }, "log_every": 50 },
///   "overrides": { "eval": { "nx": 128, "ny": 50, "slice_axis": 1, "slice_value": 0.99 } },
///   "output_dir": "out"
/// }
/// ```
///
/// Everything except `problem` is optional. `overrides` is merged into the
/// problem preset (objects recursively, other values replaced) before the
/// preset is validated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: String,
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub training: TrainingSettings,
    #[serde(default)]
    pub overrides: Option<Value>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn all_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

impl ExperimentConfig {
    /// Full protocol for `problem`: all variants, the five default seeds and
    /// the preset iteration count.
    pub fn full_protocol(problem: &str) -> Self {
        ExperimentConfig {
            problem: problem.to_string(),
            variants: all_variants(),
            seeds: default_seeds(),
            iterations: None,
            training: TrainingSettings::default(),
            overrides: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            PinnError::Usage(format!("invalid experiment config at `{}`: {}", e.path(), e.inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| PinnError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(&self) -> Result<ResolvedExperiment> {
        let preset = ProblemSpec::preset(&self.problem)?;
        let mut value = serde_json::to_value(&preset)?;
        if let Some(patch) = &self.overrides {
            merge(&mut value, patch);
        }
        let problem: ProblemSpec = serde_path_to_error::deserialize(value).map_err(|e| {
            PinnError::Usage(format!("invalid override at `overrides.{}`: {}", e.path(), e.inner()))
        })?;
        problem
            .validate()
            .map_err(|e| PinnError::Usage(format!("overrides: {e}")))?;
        if problem.name != self.problem {
            return Err(PinnError::Usage("`overrides.name` cannot rename the problem".into()));
        }
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(PinnError::Usage("`variants` and `seeds` must be nonempty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(v) = self.variants.iter().find(|v| !seen.insert(**v)) {
            return Err(PinnError::Usage(format!("`variants` lists {v} twice")));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(PinnError::Usage(format!("`seeds` lists {s} twice")));
        }
        let resolved = ResolvedExperiment {
            iterations: self.iterations.unwrap_or(problem.iterations),
            problem,
            variants: self.variants.clone(),
            seeds: self.seeds.clone(),
            training: self.training.clone(),
        };
        resolved
            .training_config(resolved.variants[0])
            .validate()
            .map_err(|e| PinnError::Usage(format!("training: {e}")))?;
        Ok(resolved)
    }
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Fully expanded experiment: everything a run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedExperiment {
    pub problem: ProblemSpec,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub training: TrainingSettings,
}

impl ResolvedExperiment {
    pub fn training_config(&self, variant: Variant) -> TrainingConfig {
        TrainingConfig {
            variant,
            iterations: self.iterations,
            adam: self.training.adam,
            loss_weights: self.training.loss_weights,
            log_every: self.training.log_every,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { error: String },
}

/// Outcome of one (variant, seed) run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub problem: String,
    pub variant: Variant,
    pub model: String,
    pub seed: u64,
    pub iterations: usize,
    pub collocation_hash: String,
    pub status: RunStatus,
    pub final_losses: Option<TaskLosses>,
    pub final_total_loss: Option<f64>,
    pub rel_l2: Option<f64>,
    pub rel_linf: Option<f64>,
    pub conflicts: u64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
    #[serde(skip)]
    pub params: Option<NetworkParams>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn errors(&self) -> Option<RunErrors> {
        Some(RunErrors {
            seed: self.seed,
            rel_l2: self.rel_l2?,
            rel_linf: self.rel_linf?,
        })
    }
}

/// Where a run writes its files, if anywhere.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub config_json: String,
}

/// Trains one variant on a shared collocation set and evaluates it.
///
/// A numeric failure ends this run with a `Failed` status and whatever
/// trace was recorded; errors writing files are returned.
pub fn run_single(
    exp: &ResolvedExperiment,
    variant: Variant,
    points: &CollocationSet,
    evaluator: &GridEvaluator,
    output: Option<&RunOutput>,
) -> Result<RunReport> {
    let problem = &exp.problem;
    let seed = points.seed;
    let mut report = RunReport {
        problem: problem.name.clone(),
        variant,
        model: variant.model_name().to_string(),
        seed,
        iterations: exp.iterations,
        collocation_hash: points.content_hash(),
        status: RunStatus::Completed,
        final_losses: None,
        final_total_loss: None,
        rel_l2: None,
        rel_linf: None,
        conflicts: 0,
        trace: Vec::new(),
        params: None,
    };
    let mut trace_file = match output {
        Some(out) => {
            fs::create_dir_all(&out.dir)?;
            fs::write(out.dir.join("config.json"), &out.config_json)?;
            Some(BufWriter::new(File::create(out.dir.join("trace.jsonl"))?))
        }
        None => None,
    };
    let cfg = exp.training_config(variant);
    let mut trace = Vec::new();
    let result = (|| -> Result<_> {
        let data = TrainingData::new(problem, points)?;
        let init = init_params(&problem.network(variant.architecture()), seed)?;
        let mut probe = |p: &NetworkParams| evaluator.errors(p);
        let mut on_record = |r: &TraceRecord| -> Result<()> {
            if let Some(f) = trace_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(r)?)?;
            }
            trace.push(r.clone());
            Ok(())
        };
        let outcome = train_network(problem, &data, init, &cfg, seed, Some(&mut probe), &mut on_record)?;
        let field = evaluator.evaluate(&outcome.params)?;
        Ok((outcome, field))
    })();
    if let Some(mut f) = trace_file {
        f.flush()?;
    }
    report.trace = trace;
    match result {
        Ok((outcome, field)) => {
            report.final_losses = Some(outcome.final_losses);
            report.final_total_loss = Some(outcome.final_losses.weighted_total(cfg.loss_weights));
            report.rel_l2 = Some(field.rel_l2()?);
            report.rel_linf = Some(field.rel_linf()?);
            report.conflicts = outcome.total_conflicts;
            if let Some(out) = output {
                field.write_heatmap(&out.dir.join("heatmap.csv"))?;
                field
                    .slice(problem.eval.slice_axis, problem.eval.slice_value)?
                    .write_csv(&out.dir.join("slice.csv"))?;
                outcome.params.save(&out.dir.join("params.json"), Some(seed))?;
            }
            report.params = Some(outcome.params);
        }
        Err(e @ (PinnError::Io(_) | PinnError::Csv(_))) => return Err(e),
        Err(e) => report.status = RunStatus::Failed { error: e.to_string() },
    }
    if let Some(out) = output {
        fs::write(out.dir.join("run.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub reports: Vec<RunReport>,
    pub summaries: Vec<ErrorSummary>,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.reports.iter().filter(|r| !r.succeeded()).count()
    }
}

/// Directory of one run below an output root.
pub fn run_dir(root: &Path, problem: &str, variant: Variant, seed: u64) -> PathBuf {
    root.join(problem).join(variant.key()).join(format!("seed_{seed}"))
}

/// Runs every (variant, seed) pair, at most `jobs` at a time.
///
/// Points are sampled once per seed and shared by all variants. With an
/// output root, each run writes `config.json`, `trace.jsonl`,
/// `heatmap.csv`, `slice.csv`, `params.json` and `run.json` into its own
/// directory, and `<root>/<problem>/summary.csv` holds one row per variant
/// with at least one completed run.
pub fn run_experiment(
    exp: &ResolvedExperiment,
    out_root: Option<&Path>,
    jobs: usize,
    progress: &(dyn Fn(&RunReport) + Sync),
) -> Result<ExperimentOutcome> {
    let config_json = exp.to_json()?;
    if let Some(root) = out_root {
        let dir = root.join(&exp.problem.name);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("config.json"), &config_json)?;
    }
    let evaluator = GridEvaluator::for_problem(&exp.problem)?;
    let points: Vec<CollocationSet> = exp
        .seeds
        .iter()
        .map(|&s| sample_problem_points(&exp.problem, s))
        .collect::<Result<_>>()?;
    let pairs: Vec<(Variant, usize)> = exp
        .variants
        .iter()
        .flat_map(|&v| (0..points.len()).map(move |k| (v, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PinnError::Config(format!("thread pool: {e}")))?;
    let reports: Vec<RunReport> = pool.install(|| {
        pairs
            .par_iter()
            .with_max_len(1)
            .map(|&(variant, k)| {
                let output = out_root.map(|root| RunOutput {
                    dir: run_dir(root, &exp.problem.name, variant, points[k].seed),
                    config_json: config_json.clone(),
                });
                let r = run_single(exp, variant, &points[k], &evaluator, output.as_ref())?;
                progress(&r);
                Ok(r)
            })
            .collect::<Result<_>>()
    })?;
    let mut summaries = Vec::new();
    for &v in &exp.variants {
        let runs: Vec<RunErrors> = reports
            .iter()
            .filter(|r| r.variant == v)
            .filter_map(RunReport::errors)
            .collect();
        if !runs.is_empty() {
            summaries.push(aggregate_runs(v.model_name(), exp.iterations, &runs)?);
        }
    }
    if let Some(root) = out_root {
        write_summary(&root.join(&exp.problem.name).join("summary.csv"), &summaries)?;
    }
    Ok(ExperimentOutcome { reports, summaries })
}
