//! Error metrics, evaluation grids, report files and multi-seed statistics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PinnError, Result};
use crate::jet::JetShape;
use crate::network::NetworkParams;
use crate::oracles::cavity_reference;
use crate::problems::{Equation, ProblemSpec};

/// `‖pred − exact‖₂ / ‖exact‖₂`.
pub fn relative_l2(pred: &[f64], exact: &[f64]) -> Result<f64> {
    check_pair(pred, exact)?;
    let den = exact.iter().map(|e| e * e).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(PinnError::Metric("exact field has zero L2 norm".into()));
    }
    let num = pred
        .iter()
        .zip(exact)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// `max |pred − exact| / max |exact|`.
pub fn relative_linf(pred: &[f64], exact: &[f64]) -> Result<f64> {
    check_pair(pred, exact)?;
    let den = exact.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    if den == 0.0 {
        return Err(PinnError::Metric("exact field is identically zero".into()));
    }
    let num = pred
        .iter()
        .zip(exact)
        .fold(0.0f64, |m, (p, e)| m.max((p - e).abs()));
    Ok(num / den)
}

fn check_pair(pred: &[f64], exact: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != exact.len() {
        return Err(PinnError::Metric(format!(
            "field lengths {} and {} must match and be nonzero",
            pred.len(),
            exact.len()
        )));
    }
    if let Some(k) = pred.iter().chain(exact).position(|v| !v.is_finite()) {
        return Err(PinnError::numeric(format!("field entry {k}"), "non-finite value"));
    }
    Ok(())
}

/// `n` uniform nodes from `lo` to `hi`; a single node sits at the midpoint.
pub fn grid_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|k| if k == n - 1 { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// Prediction, reference and pointwise error on a tensor grid, stored with
/// the first axis varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrid {
    pub axes: [String; 2],
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub pred: Vec<f64>,
    pub exact: Vec<f64>,
    pub abs_err: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeatmapRow {
    a: f64,
    b: f64,
    pred: f64,
    exact: f64,
    abs_err: f64,
}

impl FieldGrid {
    pub fn rel_l2(&self) -> Result<f64> {
        relative_l2(&self.pred, &self.exact)
    }

    pub fn rel_linf(&self) -> Result<f64> {
        relative_linf(&self.pred, &self.exact)
    }

    /// CSV with header `<axis0>,<axis1>,pred,exact,abs_err`, one row per node.
    pub fn write_heatmap(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([&self.axes[0], &self.axes[1], "pred", "exact", "abs_err"])?;
        let nx = self.x.len();
        for (k, ((p, e), a)) in self.pred.iter().zip(&self.exact).zip(&self.abs_err).enumerate() {
            w.serialize((self.x[k % nx], self.y[k / nx], p, e, a))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file written by [`FieldGrid::write_heatmap`].
    pub fn read_heatmap(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let h = r.headers()?.clone();
        if h.len() != 5 || &h[2] != "pred" || &h[3] != "exact" || &h[4] != "abs_err" {
            return Err(PinnError::Config(format!("unexpected heatmap header {h:?}")));
        }
        let axes = [h[0].to_string(), h[1].to_string()];
        let rows: Vec<HeatmapRow> = r
            .records()
            .map(|rec| Ok(rec?.deserialize(None)?))
            .collect::<Result<_>>()?;
        let mut x = Vec::new();
        for row in &rows {
            if x.contains(&row.a) {
                break;
            }
            x.push(row.a);
        }
        if x.is_empty() || !rows.len().is_multiple_of(x.len()) {
            return Err(PinnError::Shape("heatmap rows do not form a tensor grid".into()));
        }
        let y = rows.iter().step_by(x.len()).map(|r| r.b).collect();
        Ok(FieldGrid {
            axes,
            x,
            y,
            pred: rows.iter().map(|r| r.pred).collect(),
            exact: rows.iter().map(|r| r.exact).collect(),
            abs_err: rows.iter().map(|r| r.abs_err).collect(),
        })
    }

    /// Profile along the grid line of `axis` nearest to `value`.
    pub fn slice(&self, axis: usize, value: f64) -> Result<Slice> {
        let fixed = match axis {
            0 => &self.x,
            1 => &self.y,
            _ => return Err(PinnError::Usage(format!("slice axis must be 0 or 1, got {axis}"))),
        };
        let (lo, hi) = (fixed[0], fixed[fixed.len() - 1]);
        if !(value >= lo && value <= hi) {
            return Err(PinnError::Domain(format!(
                "slice {}={value} outside [{lo}, {hi}]",
                self.axes[axis]
            )));
        }
        let line = (0..fixed.len())
            .min_by(|&a, &b| (fixed[a] - value).abs().total_cmp(&(fixed[b] - value).abs()))
            .expect("nonempty axis");
        let nx = self.x.len();
        let nodes: Vec<usize> = if axis == 1 {
            (0..nx).map(|i| line * nx + i).collect()
        } else {
            (0..self.y.len()).map(|j| j * nx + line).collect()
        };
        let pick = |f: &[f64]| nodes.iter().map(|&k| f[k]).collect::<Vec<_>>();
        Ok(Slice {
            fixed_axis: self.axes[axis].clone(),
            free_axis: self.axes[1 - axis].clone(),
            value: fixed[line],
            coord: if axis == 1 { self.x.clone() } else { self.y.clone() },
            pred: pick(&self.pred),
            exact: pick(&self.exact),
            abs_err: pick(&self.abs_err),
        })
    }
}

/// 1-D profile of a [`FieldGrid`] along one grid line.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub fixed_axis: String,
    pub free_axis: String,
    /// Grid coordinate of the extracted line.
    pub value: f64,
    pub coord: Vec<f64>,
    pub pred: Vec<f64>,
    pub exact: Vec<f64>,
    pub abs_err: Vec<f64>,
}

impl Slice {
    /// One-line grid holding this profile; slicing it along the same line
    /// gives the profile back.
    pub fn as_grid(&self) -> FieldGrid {
        let (axes, x, y) = (
            [self.free_axis.clone(), self.fixed_axis.clone()],
            self.coord.clone(),
            vec![self.value],
        );
        FieldGrid {
            axes,
            x,
            y,
            pred: self.pred.clone(),
            exact: self.exact.clone(),
            abs_err: self.abs_err.clone(),
        }
    }

    /// CSV with header `<free axis>,pred,exact,abs_err`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([&self.free_axis, "pred", "exact", "abs_err"])?;
        for k in 0..self.coord.len() {
            w.serialize((self.coord[k], self.pred[k], self.exact[k], self.abs_err[k]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reference values on a fixed grid, computed once and reused for every
/// evaluation of a run.
///
/// The cavity is compared through the velocity magnitude. When the grid
/// size equals the oracle's grid, the oracle's own nodes are used, so no
/// interpolation enters the reference field.
#[derive(Clone, Debug)]
pub struct GridEvaluator {
    problem: ProblemSpec,
    x: Vec<f64>,
    y: Vec<f64>,
    exact: Vec<f64>,
}

impl GridEvaluator {
    pub fn new(problem: &ProblemSpec, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(PinnError::Config("evaluation grid needs at least one node per axis".into()));
        }
        let mut x = grid_axis(problem.lower[0], problem.upper[0], nx);
        let mut y = grid_axis(problem.lower[1], problem.upper[1], ny);
        let exact = match problem.equation {
            Equation::Cavity { re, reference_grid } if nx == reference_grid && ny == reference_grid => {
                let r = cavity_reference(re, reference_grid)?;
                x = r.grid.x.clone();
                y = r.grid.y.clone();
                let (u, v) = (r.grid.field("u")?, r.grid.field("v")?);
                u.iter().zip(v).map(|(a, b)| a.hypot(*b)).collect()
            }
            _ => {
                let nodes: Vec<[f64; 2]> = (0..nx * ny).map(|k| [x[k % nx], y[k / nx]]).collect();
                nodes
                    .par_iter()
                    .map(|&p| problem.exact_solution(p).map(|s| magnitude(&s)))
                    .collect::<Result<_>>()?
            }
        };
        Ok(GridEvaluator {
            problem: problem.clone(),
            x,
            y,
            exact,
        })
    }

    /// Evaluator on the problem's configured evaluation grid.
    pub fn for_problem(problem: &ProblemSpec) -> Result<Self> {
        Self::new(problem, problem.eval.nx, problem.eval.ny)
    }

    pub fn exact(&self) -> &[f64] {
        &self.exact
    }

    pub fn nodes(&self) -> usize {
        self.exact.len()
    }

    pub fn predict(&self, params: &NetworkParams) -> Result<Vec<f64>> {
        let nx = self.x.len();
        let order = self.problem.observable_order();
        let shape = JetShape::new(2, order.max(1))?;
        (0..self.exact.len())
            .into_par_iter()
            .map(|k| {
                let p = [self.x[k % nx], self.y[k / nx]];
                if order == 0 {
                    Ok(params.forward_values(&p)[0])
                } else {
                    let out = params.forward_at(&p, shape)?;
                    Ok(magnitude(&self.problem.observable(&out)))
                }
            })
            .collect()
    }

    pub fn evaluate(&self, params: &NetworkParams) -> Result<FieldGrid> {
        let pred = self.predict(params)?;
        let abs_err = pred.iter().zip(&self.exact).map(|(p, e)| (p - e).abs()).collect();
        Ok(FieldGrid {
            axes: self.problem.axes.clone(),
            x: self.x.clone(),
            y: self.y.clone(),
            pred,
            exact: self.exact.clone(),
            abs_err,
        })
    }

    /// Relative L2 and L∞ errors of `params` on this grid.
    pub fn errors(&self, params: &NetworkParams) -> Result<(f64, f64)> {
        let pred = self.predict(params)?;
        Ok((relative_l2(&pred, &self.exact)?, relative_linf(&pred, &self.exact)?))
    }
}

fn magnitude(v: &[f64]) -> f64 {
    match v {
        [s] => *s,
        _ => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
    }
}

/// Prediction, reference and error fields of `params` on an `nx × ny` grid.
pub fn evaluate_on_grid(params: &NetworkParams, problem: &ProblemSpec, nx: usize, ny: usize) -> Result<FieldGrid> {
    GridEvaluator::new(problem, nx, ny)?.evaluate(params)
}

/// Final errors of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunErrors {
    pub seed: u64,
    pub rel_l2: f64,
    pub rel_linf: f64,
}

/// Mean and sample standard deviation over seeds for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub model: String,
    pub iterations: usize,
    pub runs: Vec<RunErrors>,
    pub rel_l2_mean: f64,
    pub rel_l2_std: f64,
    pub rel_linf_mean: f64,
    pub rel_linf_std: f64,
    /// Set when only one run was aggregated and the deviations are 0 by
    /// convention.
    pub single_run: bool,
}

/// Aggregates runs of one model. The runs are sorted by seed first, so the
/// result does not depend on the order of `runs`.
pub fn aggregate_runs(model: &str, iterations: usize, runs: &[RunErrors]) -> Result<ErrorSummary> {
    if runs.is_empty() {
        return Err(PinnError::Usage(format!("no runs to aggregate for {model}")));
    }
    let mut runs = runs.to_vec();
    runs.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(a.rel_l2.total_cmp(&b.rel_l2))
            .then(a.rel_linf.total_cmp(&b.rel_linf))
    });
    let (l2_mean, l2_std) = mean_std(runs.iter().map(|r| r.rel_l2));
    let (linf_mean, linf_std) = mean_std(runs.iter().map(|r| r.rel_linf));
    Ok(ErrorSummary {
        model: model.to_string(),
        iterations,
        single_run: runs.len() == 1,
        runs,
        rel_l2_mean: l2_mean,
        rel_l2_std: l2_std,
        rel_linf_mean: linf_mean,
        rel_linf_std: linf_std,
    })
}

/// Mean and `n − 1` standard deviation; 0 deviation for a single value.
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub iterations: usize,
    pub runs: usize,
    pub rel_l2_mean: f64,
    pub rel_l2_std: f64,
    pub rel_linf_mean: f64,
    pub rel_linf_std: f64,
}

impl From<&ErrorSummary> for SummaryRow {
    fn from(s: &ErrorSummary) -> Self {
        SummaryRow {
            model: s.model.clone(),
            iterations: s.iterations,
            runs: s.runs.len(),
            rel_l2_mean: s.rel_l2_mean,
            rel_l2_std: s.rel_l2_std,
            rel_linf_mean: s.rel_linf_mean,
            rel_linf_std: s.rel_linf_std,
        }
    }
}

pub fn write_summary(path: &Path, summaries: &[ErrorSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summaries {
        w.serialize(SummaryRow::from(s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, Architecture};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn relative_error_examples() {
        let e = [3.0, -4.0, 0.0];
        assert_eq!(relative_l2(&e, &e).unwrap(), 0.0);
        assert_eq!(relative_l2(&[6.0, -8.0, 0.0], &e).unwrap(), 1.0);
        assert_eq!(relative_l2(&[3.0, -4.0, 0.5], &e).unwrap(), 0.5 / 5.0);
        assert_eq!(relative_linf(&e, &e).unwrap(), 0.0);
        assert_eq!(relative_linf(&[3.25, -3.75, 0.25], &e).unwrap(), 0.25 / 4.0);
        assert_eq!(relative_linf(&[1.0, 0.3], &[1.0, 0.0]).unwrap(), 0.3);
        assert!(matches!(relative_l2(&[1.0], &[0.0]), Err(PinnError::Metric(_))));
        assert!(matches!(relative_linf(&[1.0], &[0.0]), Err(PinnError::Metric(_))));
        assert!(matches!(relative_l2(&[], &[]), Err(PinnError::Metric(_))));
    }

    proptest! {
        #[test]
        fn metrics_are_scale_free(
            pairs in prop::collection::vec((-5.0f64..5.0, 0.1f64..5.0), 1..40),
            a in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        ) {
            let (p, e): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let sp: Vec<f64> = p.iter().map(|v| a * v).collect();
            let se: Vec<f64> = e.iter().map(|v| a * v).collect();
            let (l2, l2s) = (relative_l2(&p, &e).unwrap(), relative_l2(&sp, &se).unwrap());
            prop_assert!((l2 - l2s).abs() <= 1e-12 * l2.max(1.0));
            let (li, lis) = (relative_linf(&p, &e).unwrap(), relative_linf(&sp, &se).unwrap());
            prop_assert!((li - lis).abs() <= 1e-12 * li.max(1.0));
            prop_assert!(li >= 0.0);
            prop_assert_eq!(li == 0.0, p == e);
        }
    }

    #[test]
    fn zero_network_on_helmholtz_has_unit_errors() {
        let problem = ProblemSpec::preset("helmholtz14").unwrap();
        let params = crate::network::NetworkParams::zeros(&problem.network(Architecture::Mlp)).unwrap();
        let f = evaluate_on_grid(&params, &problem, 64, 64).unwrap();
        assert_eq!(f.rel_l2().unwrap(), 1.0);
        assert_eq!(f.rel_linf().unwrap(), 1.0);
    }

    #[test]
    fn single_node_grid_is_the_domain_centre() {
        let problem = ProblemSpec::preset("klein_gordon").unwrap();
        let params = init_params(&problem.network(Architecture::Lda), 3).unwrap();
        let f = evaluate_on_grid(&params, &problem, 1, 1).unwrap();
        assert_eq!((f.x.clone(), f.y.clone()), (vec![0.5], vec![0.5]));
        let u = params.forward_values(&[0.5, 0.5])[0];
        let e = crate::problems::klein_gordon_exact(0.5, 0.5);
        assert_eq!(f.rel_l2().unwrap(), (u - e).abs() / e.abs());
        assert_eq!(f.rel_linf().unwrap(), (u - e).abs() / e.abs());
    }

    #[test]
    fn slices_follow_the_exact_solution() {
        let problem = ProblemSpec::preset("burgers").unwrap();
        let params = init_params(&problem.network(Architecture::Mlp), 1).unwrap();
        let f = evaluate_on_grid(&params, &problem, 33, 11).unwrap();
        let s = f.slice(1, 0.0).unwrap();
        assert_eq!(s.value, 0.0);
        for (x, e) in s.coord.iter().zip(&s.exact) {
            assert!((e + (PI * x).sin()).abs() < 1e-12, "{x}: {e}");
        }
        let again = s.as_grid().slice(1, s.value).unwrap();
        assert_eq!(again, s);
        assert!(matches!(f.slice(1, 1.5), Err(PinnError::Domain(_))));

        let h = ProblemSpec::preset("helmholtz14").unwrap();
        let f = evaluate_on_grid(&params_for(&h), &h, 41, 41).unwrap();
        let s = f.slice(0, 0.75).unwrap();
        assert_eq!(s.value, 0.75);
        for (y, e) in s.coord.iter().zip(&s.exact) {
            assert!((e - (0.75 * PI).sin() * (4.0 * PI * y).sin()).abs() < 1e-12);
        }
    }

    fn params_for(p: &ProblemSpec) -> NetworkParams {
        init_params(&p.network(Architecture::Mlp), 2).unwrap()
    }

    #[test]
    fn cavity_grid_uses_oracle_nodes() {
        let mut problem = ProblemSpec::preset("cavity").unwrap();
        if let Equation::Cavity { reference_grid, .. } = &mut problem.equation {
            *reference_grid = 33;
        }
        let ev = GridEvaluator::new(&problem, 33, 33).unwrap();
        let Equation::Cavity { re, .. } = problem.equation else { unreachable!() };
        let r = cavity_reference(re, 33).unwrap();
        let (u, v) = (r.grid.field("u").unwrap(), r.grid.field("v").unwrap());
        for k in 0..ev.nodes() {
            assert_eq!(ev.exact()[k], u[k].hypot(v[k]));
        }
        let params = params_for(&problem);
        let f = ev.evaluate(&params).unwrap();
        assert_eq!(f.x, r.grid.x);
        assert!(f.rel_l2().unwrap() > 0.0);
    }

    #[test]
    fn heatmap_and_summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let problem = ProblemSpec::preset("klein_gordon").unwrap();
        let f = evaluate_on_grid(&params_for(&problem), &problem, 7, 5).unwrap();
        let path = dir.path().join("heatmap.csv");
        f.write_heatmap(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,t,pred,exact,abs_err\n"));
        assert_eq!(FieldGrid::read_heatmap(&path).unwrap(), f);

        let runs = [
            RunErrors { seed: 2, rel_l2: 3.0, rel_linf: 0.1 },
            RunErrors { seed: 1, rel_l2: 1.0, rel_linf: 0.1 + 0.2 },
        ];
        let s = aggregate_runs("ACR-PINN", 10, &runs).unwrap();
        let path = dir.path().join("summary.csv");
        write_summary(&path, std::slice::from_ref(&s)).unwrap();
        assert_eq!(read_summary(&path).unwrap(), vec![SummaryRow::from(&s)]);
    }

    #[test]
    fn aggregation_examples() {
        let r = |seed, e| RunErrors { seed, rel_l2: e, rel_linf: 2.0 * e };
        let s = aggregate_runs("m", 1, &[r(1, 1.0), r(2, 3.0)]).unwrap();
        assert_eq!((s.rel_l2_mean, s.rel_l2_std), (2.0, 2f64.sqrt()));
        assert!(!s.single_run);
        let same: Vec<_> = (0..5).map(|k| r(k, 0.25)).collect();
        let s = aggregate_runs("m", 1, &same).unwrap();
        assert_eq!((s.rel_l2_mean, s.rel_l2_std), (0.25, 0.0));
        let s = aggregate_runs("m", 1, &[r(7, 0.5)]).unwrap();
        assert!(s.single_run && s.rel_l2_std == 0.0);
        assert!(matches!(aggregate_runs("m", 1, &[]), Err(PinnError::Usage(_))));
    }

    proptest! {
        #[test]
        fn aggregation_is_permutation_invariant(
            errs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..8),
            rot in 0usize..8,
        ) {
            let runs: Vec<RunErrors> = errs
                .iter()
                .enumerate()
                .map(|(k, &(a, b))| RunErrors { seed: 1234 + k as u64, rel_l2: a, rel_linf: b })
                .collect();
            let mut shuffled = runs.clone();
            shuffled.reverse();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            prop_assert_eq!(aggregate_runs("m", 1, &runs).unwrap(), aggregate_runs("m", 1, &shuffled).unwrap());
        }
    }
}
