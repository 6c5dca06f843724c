use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::funcalc::{AdaptedProcess, Generator};
use crate::measures::{backward, ebar_step, eunder_step, Carrier, DriftBound, NodeValues, ScenarioTree, DEFAULT_DEPTH_CAP};
use crate::pathspace::{DiscretePath, PathPoint, TimeGrid};
use crate::solvers::remaining_steps;
use crate::stopping::StoppingTime;
use crate::viscosity::localization::Localization;
use crate::viscosity::tangency::{check_sample, CheckSettings, LocalSample, Mode, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmartingaleReport {
    pub mode: Mode,
    pub t: f64,
    pub u0: f64,
    /// `inf_tau E_upper[u_tau]` (sub) or `sup_tau E_lower[u_tau]` (super).
    pub extremum: f64,
    /// Signed excess: `u0 - extremum` (sub) or `extremum - u0` (super).
    pub violation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Leaf stopping levels of the optimal rule when the check fails.
    pub witness: Option<Vec<usize>>,
    pub depth: usize,
}

/// `inf_tau E_upper[X_tau]` (sub) or `sup_tau E_lower[X_tau]` (super) at
/// every node, by `V = min(X, E_upper-step V)` resp. `max(X, E_lower-step V)`.
pub fn stopping_extremum(tree: &ScenarioTree, x: &NodeValues, bound: DriftBound, mode: Mode) -> Result<NodeValues> {
    bound.check(tree.step())?;
    let (l, s) = (bound.value(), tree.sqrt_step());
    let leaves = x.level(tree.depth()).to_vec();
    backward(tree, leaves, |lv, id, up, down| {
        let here = x.get(lv, id);
        Ok(match mode {
            Mode::Sub => here.min(ebar_step(up, down, l, s).0),
            Mode::Super => here.max(eunder_step(up, down, l, s).0),
        })
    })
}

/// `u` against every stopping time up to the localization depth on the
/// suffix tree below `pt`.
///
/// Sub: `u_t <= E_upper[u_tau] + tol` for all `tau`. Super:
/// `u_t >= E_lower[u_tau] - tol` for all `tau`. With `L = 0` both reduce to the
/// linear regular sub/supermartingale property.
pub fn regular_submartingale_check(
    u: &dyn AdaptedProcess,
    grid: &TimeGrid,
    pt: &PathPoint,
    bound: DriftBound,
    mode: Mode,
    loc: &Localization,
    tol: f64,
) -> Result<SubmartingaleReport> {
    let remaining = remaining_steps(grid, pt)?;
    if remaining == 0 {
        return Err(invalid("no stopping times left at the horizon"));
    }
    let depth = loc.depth(remaining);
    let tree = ScenarioTree::rooted(pt.path().clone(), depth, DEFAULT_DEPTH_CAP)?;
    let uv = tree.process_values(|p| u.value(p))?;
    let v = stopping_extremum(&tree, &uv, bound, mode)?;
    let u0 = uv.root();
    let extremum = v.root();
    let violation = match mode {
        Mode::Sub => u0 - extremum,
        Mode::Super => extremum - u0,
    };
    let pass = violation <= tol;
    let witness = if pass {
        None
    } else {
        let tau = StoppingTime::first_hit(depth, 1, |l, id| v.get(l, id) == uv.get(l, id))?;
        Some(tau.leaf_levels().to_vec())
    };
    Ok(SubmartingaleReport {
        mode,
        t: pt.time(),
        u0,
        extremum,
        violation,
        tolerance: tol,
        pass,
        witness,
        depth,
    })
}

/// `count` on-tree points drawn with a seeded random walk, plus one point at
/// each index in `include`. Every point leaves at least one step to the horizon.
pub fn sample_points(grid: &TimeGrid, count: usize, seed: u64, include: &[usize]) -> Result<Vec<PathPoint>> {
    let n = grid.steps();
    if let Some(k) = include.iter().find(|k| **k >= n) {
        return Err(invalid(format!("point index {k} leaves no step before the horizon")));
    }
    let s = grid.step().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let walk = |index: usize, rng: &mut ChaCha8Rng| {
        let mut vals = vec![0.0; index + 1];
        for i in 1..=index {
            let up = rng.random::<bool>();
            vals[i] = vals[i - 1] + if up { s } else { -s };
        }
        PathPoint::new(DiscretePath::from_rows_unchecked(grid.step(), 1, vals))
    };
    let mut out = Vec::with_capacity(count + include.len());
    for &k in include {
        out.push(walk(k, &mut rng));
    }
    for _ in 0..count {
        let k = rng.random_range(0..n);
        out.push(walk(k, &mut rng));
    }
    Ok(out)
}

/// A named candidate for the equivalence experiment.
#[derive(Clone)]
pub struct Candidate {
    pub name: String,
    pub process: Arc<dyn AdaptedProcess>,
}

impl std::fmt::Debug for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Candidate({})", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceRow {
    pub candidate: String,
    pub point: usize,
    pub t: f64,
    pub mode: Mode,
    pub martingale_pass: bool,
    pub viscosity: Verdict,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub rows: Vec<EquivalenceRow>,
    pub agreements: usize,
    pub inconclusive: usize,
}

impl EquivalenceReport {
    pub fn agreement_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 1.0;
        }
        self.agreements as f64 / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("candidate,point,t,mode,martingale_pass,viscosity,agree\n");
        for r in &self.rows {
            let mode = match r.mode {
                Mode::Sub => "sub",
                Mode::Super => "super",
            };
            let v = match r.viscosity {
                Verdict::Pass => "pass",
                Verdict::Fail => "fail",
                Verdict::Inconclusive => "inconclusive",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.candidate, r.point, r.t, mode, r.martingale_pass, v, r.agree
            ));
        }
        out
    }
}

/// Compares the martingale-side and jet-side characterizations of sub- and
/// supersolutions of `-d_t u - G = 0` with `G = 1/2 gamma + L |p|`.
///
/// Inconclusive jet verdicts count as disagreements.
pub fn equivalence_experiment(
    candidates: &[Candidate],
    grid: &TimeGrid,
    points: &[PathPoint],
    settings: &CheckSettings,
    martingale_tol: f64,
) -> Result<EquivalenceReport> {
    let l = settings.bound.value();
    let g = if l == 0.0 {
        Generator::Heat
    } else {
        Generator::DriftHjb { bound: l }
    };
    let loc = settings.localization_for(grid);
    let jobs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..points.len()).map(move |p| (c, p)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(c, p)| -> Result<Vec<EquivalenceRow>> {
            let cand = &candidates[c];
            let pt = &points[p];
            let u = cand.process.as_ref();
            let sample = LocalSample::new(u, grid, pt, &loc)?;
            let jets = settings.jets.candidates(u, grid, pt)?;
            [Mode::Sub, Mode::Super]
                .into_iter()
                .map(|mode| {
                    let m = regular_submartingale_check(u, grid, pt, settings.bound, mode, &loc, martingale_tol)?;
                    let v = check_sample(&sample, &jets, &g, mode, settings)?.verdict;
                    let agree = match v {
                        Verdict::Pass => m.pass,
                        Verdict::Fail => !m.pass,
                        Verdict::Inconclusive => false,
                    };
                    Ok(EquivalenceRow {
                        candidate: cand.name.clone(),
                        point: p,
                        t: pt.time(),
                        mode,
                        martingale_pass: m.pass,
                        viscosity: v,
                        agree,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let agreements = rows.iter().filter(|r| r.agree).count();
    let inconclusive = rows.iter().filter(|r| r.viscosity == Verdict::Inconclusive).count();
    Ok(EquivalenceReport {
        rows,
        agreements,
        inconclusive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonVerdict {
    Pass,
    Fail,
    /// Terminal values are not ordered, so comparison says nothing.
    PreconditionFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub verdict: ComparisonVerdict,
    /// `max (sub - sup)` over all nodes.
    pub max_excess: f64,
    pub worst_node: (usize, usize),
    /// `max (sub - sup)` over the terminal level.
    pub terminal_excess: f64,
}

/// Checks `sub <= sup + tol` everywhere given `sub <= sup + tol` at the leaves.
pub fn comparison_check(sub: &NodeValues, sup: &NodeValues, tol: f64) -> Result<ComparisonReport> {
    let n = sub.num_levels();
    if n == 0 || n != sup.num_levels() || (0..n).any(|l| sub.level(l).len() != sup.level(l).len()) {
        return Err(invalid("comparison needs values on the same carrier"));
    }
    let last = n - 1;
    let terminal_excess = sub
        .level(last)
        .iter()
        .zip(sup.level(last))
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut max_excess = f64::NEG_INFINITY;
    let mut worst_node = (0, 0);
    for (l, id, a) in sub.iter() {
        let d = a - sup.get(l, id);
        if d > max_excess {
            max_excess = d;
            worst_node = (l, id);
        }
    }
    let verdict = if terminal_excess > tol {
        ComparisonVerdict::PreconditionFailed
    } else if max_excess > tol {
        ComparisonVerdict::Fail
    } else {
        ComparisonVerdict::Pass
    };
    Ok(ComparisonReport {
        verdict,
        max_excess,
        worst_node,
        terminal_excess,
    })
}

/// [`comparison_check`] on two processes over the full tree of `grid`.
pub fn comparison_on_tree(
    sub: &dyn AdaptedProcess,
    sup: &dyn AdaptedProcess,
    grid: &TimeGrid,
    tol: f64,
) -> Result<ComparisonReport> {
    let tree = ScenarioTree::new(grid)?;
    let a = tree.process_values(|p| sub.value(p))?;
    let b = tree.process_values(|p| sup.value(p))?;
    comparison_check(&a, &b, tol)
}
