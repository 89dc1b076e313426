//! Training point sets: Latin hypercube interior points and uniform
//! condition points, all drawn from the sampling stream of the run seed.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PinnError, Result};
use crate::problems::{ConditionSlot, ConditionTarget, ProblemSpec};
use crate::rng::{stream_rng, Stream};

/// Index of the stratum holding `x` when `[lo, hi]` is cut into `n` equal
/// pieces. The upper end belongs to the last stratum.
pub fn stratum_of(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    let k = ((x - lo) / (hi - lo) * n as f64).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

/// Latin hypercube sample of `n` points in the box `bounds`. Each dimension
/// gets its own random stratum permutation and a uniform offset within the
/// stratum.
pub fn lhs_sample_with<R: Rng>(
    n: usize,
    bounds: &[(f64, f64)],
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(PinnError::Config("LHS needs at least one point".into()));
    }
    if bounds.is_empty() {
        return Err(PinnError::Config("LHS needs at least one dimension".into()));
    }
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(PinnError::Config(format!(
                "degenerate LHS bounds [{lo}, {hi}] in dimension {d}"
            )));
        }
    }
    let mut points = vec![vec![0.0; bounds.len()]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        perm.shuffle(rng);
        let width = (hi - lo) / n as f64;
        for (i, &k) in perm.iter().enumerate() {
            let u: f64 = rng.gen();
            let mut x = lo + (k as f64 + u) * width;
            // keep rounding from pushing x across a stratum edge
            x = x.clamp(lo, hi);
            while stratum_of(x, lo, hi, n) < k {
                x = x.next_up();
            }
            while stratum_of(x, lo, hi, n) > k {
                x = x.next_down();
            }
            points[i][d] = x;
        }
    }
    Ok(points)
}

pub fn lhs_sample(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>> {
    lhs_sample_with(n, bounds, &mut stream_rng(seed, Stream::Sampling))
}

/// Checks that every one of the `n = values.len()` strata of `[lo, hi]`
/// holds exactly one value.
pub fn audit_strata(values: &[f64], lo: f64, hi: f64) -> std::result::Result<(), String> {
    let n = values.len();
    let mut hits = vec![0u32; n];
    for &x in values {
        if !(x >= lo && x <= hi) {
            return Err(format!("{x} outside [{lo}, {hi}]"));
        }
        hits[stratum_of(x, lo, hi, n)] += 1;
    }
    match hits.iter().position(|&h| h != 1) {
        None => Ok(()),
        Some(k) => Err(format!("stratum {k} holds {} samples", hits[k])),
    }
}

pub const POINTS_FORMAT: &str = "pinn-points-v1";

/// All training points of one (problem, seed) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub format: String,
    pub problem: String,
    pub seed: u64,
    pub interior: Vec<[f64; 2]>,
    pub initial: Vec<ConditionTarget>,
    pub boundary: Vec<ConditionTarget>,
}

impl CollocationSet {
    /// SHA-256 over the problem name, seed and the little-endian bytes of
    /// every coordinate and target value, in storage order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.problem.as_bytes());
        h.update(self.seed.to_le_bytes());
        h.update((self.interior.len() as u64).to_le_bytes());
        for p in &self.interior {
            h.update(p[0].to_le_bytes());
            h.update(p[1].to_le_bytes());
        }
        for group in [&self.initial, &self.boundary] {
            h.update((group.len() as u64).to_le_bytes());
            for t in group {
                h.update(t.point[0].to_le_bytes());
                h.update(t.point[1].to_le_bytes());
                h.update([t.kind as u8]);
                for v in &t.value {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: CollocationSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if set.format != POINTS_FORMAT {
            return Err(PinnError::Config(format!(
                "unknown point-set format {:?}",
                set.format
            )));
        }
        Ok(set)
    }

    /// Checks counts and manifold membership against `spec`.
    pub fn check_against(&self, spec: &ProblemSpec) -> Result<()> {
        if self.interior.len() != spec.interior_points {
            return Err(PinnError::Shape(format!(
                "{} interior points, problem needs {}",
                self.interior.len(),
                spec.interior_points
            )));
        }
        if let Some(p) = self.interior.iter().find(|p| !spec.contains(**p)) {
            return Err(PinnError::Domain(format!("interior point {p:?} outside domain")));
        }
        for (slot, group) in [
            (ConditionSlot::Initial, &self.initial),
            (ConditionSlot::Boundary, &self.boundary),
        ] {
            if group.len() != expected_targets(spec, slot) {
                return Err(PinnError::Shape(format!(
                    "{} {slot:?} targets, problem needs {}",
                    group.len(),
                    expected_targets(spec, slot)
                )));
            }
            for t in group {
                let fresh = spec.condition_targets(slot, &[t.point])?;
                if !fresh.contains(t) {
                    return Err(PinnError::Domain(format!(
                        "{slot:?} target at {:?} does not match the problem definition",
                        t.point
                    )));
                }
            }
        }
        Ok(())
    }
}

fn expected_targets(spec: &ProblemSpec, slot: ConditionSlot) -> usize {
    let per_point = match (&spec.equation, slot) {
        (crate::problems::Equation::KleinGordon { .. }, ConditionSlot::Initial) => 2,
        _ => 1,
    };
    spec.slot_count(slot) * per_point
}

/// Interior points by LHS over the whole box, then initial-slot segments,
/// then boundary-slot segments, each segment uniform along its free axis.
pub fn sample_problem_points(spec: &ProblemSpec, seed: u64) -> Result<CollocationSet> {
    spec.validate()?;
    let mut rng = stream_rng(seed, Stream::Sampling);
    let bounds = [(spec.lower[0], spec.upper[0]), (spec.lower[1], spec.upper[1])];
    let interior = lhs_sample_with(spec.interior_points, &bounds, &mut rng)?
        .into_iter()
        .map(|p| [p[0], p[1]])
        .collect();
    let mut groups = Vec::with_capacity(2);
    for slot in [ConditionSlot::Initial, ConditionSlot::Boundary] {
        let mut points = Vec::with_capacity(spec.slot_count(slot));
        for s in spec.segments.iter().filter(|s| s.slot == slot) {
            let free = 1 - s.fixed_axis;
            for _ in 0..s.count {
                let mut p = [0.0; 2];
                p[s.fixed_axis] = s.fixed_value;
                p[free] = rng.gen_range(spec.lower[free]..spec.upper[free]);
                points.push(p);
            }
        }
        groups.push(spec.condition_targets(slot, &points)?);
    }
    let boundary = groups.pop().expect("two slots");
    let initial = groups.pop().expect("two slots");
    Ok(CollocationSet {
        format: POINTS_FORMAT.into(),
        problem: spec.name.clone(),
        seed,
        interior,
        initial,
        boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{TargetKind, PROBLEM_NAMES};
    use proptest::prelude::*;

    #[test]
    fn four_points_in_unit_interval() {
        let pts = lhs_sample(4, &[(0.0, 1.0)], 9).unwrap();
        let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        for (k, x) in xs.iter().enumerate() {
            assert!(*x >= 0.25 * k as f64 && *x < 0.25 * (k + 1) as f64);
        }
    }

    #[test]
    fn single_point_and_bad_bounds() {
        let p = lhs_sample(1, &[(2.0, 3.0), (-1.0, 1.0)], 4).unwrap();
        assert!(p[0][0] >= 2.0 && p[0][0] <= 3.0 && p[0][1].abs() <= 1.0);
        assert!(matches!(lhs_sample(3, &[(1.0, 1.0)], 0), Err(PinnError::Config(_))));
        assert!(matches!(lhs_sample(0, &[(0.0, 1.0)], 0), Err(PinnError::Config(_))));
    }

    #[test]
    fn audit_detects_double_occupancy() {
        assert!(audit_strata(&[0.1, 0.6], 0.0, 1.0).is_ok());
        assert!(audit_strata(&[0.1, 0.2], 0.0, 1.0).is_err());
        assert!(audit_strata(&[0.1, 1.2], 0.0, 1.0).is_err());
    }

    #[test]
    fn paper_point_counts() {
        let b = sample_problem_points(&ProblemSpec::preset("burgers").unwrap(), 1234).unwrap();
        assert_eq!((b.interior.len(), b.initial.len(), b.boundary.len()), (10_000, 100, 100));
        let c = sample_problem_points(&ProblemSpec::preset("cavity").unwrap(), 1234).unwrap();
        assert_eq!((c.interior.len(), c.initial.len(), c.boundary.len()), (1000, 300, 300));
        assert!(c.initial.iter().all(|t| t.kind == TargetKind::Lid));
        let kg = sample_problem_points(&ProblemSpec::preset("klein_gordon").unwrap(), 1).unwrap();
        assert_eq!((kg.initial.len(), kg.boundary.len()), (400, 200));
    }

    #[test]
    fn every_preset_passes_audit_and_manifold_checks() {
        for name in PROBLEM_NAMES {
            let spec = ProblemSpec::preset(name).unwrap();
            let set = sample_problem_points(&spec, 1235).unwrap();
            set.check_against(&spec).unwrap();
            for a in 0..2 {
                let v: Vec<f64> = set.interior.iter().map(|p| p[a]).collect();
                audit_strata(&v, spec.lower[a], spec.upper[a]).unwrap();
            }
            for s in &spec.segments {
                let group = if s.slot == ConditionSlot::Initial { &set.initial } else { &set.boundary };
                let on = group
                    .iter()
                    .filter(|t| t.point[s.fixed_axis] == s.fixed_value)
                    .count();
                assert!(on >= s.count, "{name}: segment {s:?}");
            }
        }
    }

    #[test]
    fn sets_are_deterministic_and_hash_stable() {
        let spec = ProblemSpec::preset("helmholtz14").unwrap();
        let a = sample_problem_points(&spec, 7).unwrap();
        let b = sample_problem_points(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 64);
        let c = sample_problem_points(&spec, 8).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let spec = ProblemSpec::preset("klein_gordon").unwrap();
        let a = sample_problem_points(&spec, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("points.json");
        a.save(&path).unwrap();
        let b = CollocationSet::load(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lhs_is_stratified_in_every_dimension(
            n in 1usize..400,
            dims in 1usize..4,
            lo in -50.0f64..50.0,
            width in 1e-3f64..100.0,
            seed in any::<u64>(),
        ) {
            let bounds = vec![(lo, lo + width); dims];
            let pts = lhs_sample(n, &bounds, seed).unwrap();
            prop_assert_eq!(pts.len(), n);
            for d in 0..dims {
                let v: Vec<f64> = pts.iter().map(|p| p[d]).collect();
                prop_assert!(audit_strata(&v, lo, lo + width).is_ok());
            }
            prop_assert_eq!(pts, lhs_sample(n, &bounds, seed).unwrap());
        }
    }
}
