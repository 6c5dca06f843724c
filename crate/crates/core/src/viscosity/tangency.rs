use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::funcalc::{discrete_derivatives, AdaptedProcess, Generator, Paraboloid};
use crate::measures::{Carrier, DriftBound, NodeValues, ScenarioTree, DEFAULT_DEPTH_CAP};
use crate::pathspace::{PathPoint, TimeGrid};
use crate::solvers::remaining_steps;
use crate::stopping::{snell_absorbed, ObstacleProcess};
use crate::viscosity::localization::Localization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Test jets touching from above in mean (`min` / lower expectation).
    Sub,
    /// Test jets touching from below in mean (`max` / upper expectation).
    Super,
}

/// Per-jet tangency tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Tolerance {
    /// `scale * h * (1 + |q| + |p| + |gamma|)`.
    Scaled { scale: f64 },
    Absolute { value: f64 },
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::Scaled { scale: 5.0 }
    }
}

impl Tolerance {
    pub fn for_jet(&self, phi: &Paraboloid, h: f64) -> f64 {
        match self {
            Self::Scaled { scale } => scale * h * phi.size(),
            Self::Absolute { value } => *value,
        }
    }
}

/// `u` on every node of the localized suffix tree below a point.
///
/// The values do not depend on the test jet, so one sample serves the whole
/// jet search at that point.
pub struct LocalSample {
    pub point: PathPoint,
    pub tree: ScenarioTree,
    pub u: NodeValues,
    pub exit: Vec<Vec<bool>>,
    /// `E_0[H]` in steps.
    pub expected_exit: f64,
    pub step: f64,
}

impl LocalSample {
    pub fn new(u: &dyn AdaptedProcess, grid: &TimeGrid, pt: &PathPoint, loc: &Localization) -> Result<Self> {
        let remaining = remaining_steps(grid, pt)?;
        if remaining == 0 {
            return Err(invalid("no localization possible at the horizon"));
        }
        let tree = ScenarioTree::rooted(pt.path().clone(), loc.depth(remaining), DEFAULT_DEPTH_CAP)?;
        let uv = tree.process_values(|p| u.value(p))?;
        let exit = loc.exit_mask(&tree);
        let expected_exit = loc.expected_exit(&tree)?;
        Ok(Self {
            point: pt.clone(),
            tree,
            u: uv,
            exit,
            expected_exit,
            step: grid.step(),
        })
    }

    pub fn u0(&self) -> f64 {
        self.u.root()
    }
}

/// Outcome of one tangency test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangencyReport {
    pub mode: Mode,
    pub q: f64,
    pub p: f64,
    pub gamma: f64,
    /// `W_0 - (phi - u)_0`: `<= 0` in sub mode, `>= 0` in super mode.
    pub gap: f64,
    /// `gap / (E_0[H] h)`, a per-unit-time drift mismatch.
    pub normalized_gap: f64,
    /// `|gap|` at round-off level.
    pub exact: bool,
    /// `|normalized_gap| <= tolerance`.
    pub tangent: bool,
    pub tolerance: f64,
    /// `-q - G(t, omega, u, p, gamma)`.
    pub generator_value: f64,
    pub depth: usize,
}

/// Tangency in mean of `phi` to `u` at the sample's point.
///
/// Sub mode: `W = min((phi - u), E_lower-step(W))` stopped at `H`, computed as
/// the negated Snell envelope of `-(phi - u)`. Super mode mirrors with the
/// upper expectation.
pub fn tangency_in_mean(
    sample: &LocalSample,
    phi: &Paraboloid,
    g: &Generator,
    bound: DriftBound,
    mode: Mode,
    tol: Tolerance,
) -> Result<TangencyReport> {
    if phi.dim() != 1 {
        return Err(invalid("tangency tests run on one-dimensional paths"));
    }
    let tree = &sample.tree;
    let x0 = tree.start().last()[0];
    let h = sample.step;
    let sign = match mode {
        Mode::Sub => -1.0,
        Mode::Super => 1.0,
    };
    let levels = (0..=tree.depth())
        .map(|l| {
            (0..tree.width(l))
                .map(|id| {
                    let diff = phi.eval(l as f64 * h, &[tree.position(l, id) - x0]) - sample.u.get(l, id);
                    sign * diff
                })
                .collect()
        })
        .collect();
    let obstacle = ObstacleProcess::new(tree, NodeValues::from_levels(levels))?;
    let env = snell_absorbed(tree, &obstacle, bound, sample.exit.clone())?;
    let x0v = obstacle.get(0, 0);
    let gap = sign * (env.root() - x0v);
    let scale = obstacle.values().max_abs().max(1.0);
    let tolerance = tol.for_jet(phi, h);
    let normalized_gap = gap / (sample.expected_exit * h);
    let pt = &sample.point;
    let generator_value = -phi.q() - g.eval(pt.time(), pt.path(), sample.u0(), phi.p(), phi.gamma());
    Ok(TangencyReport {
        mode,
        q: phi.q(),
        p: phi.p()[0],
        gamma: phi.gamma()[0],
        gap,
        normalized_gap,
        exact: gap.abs() <= 1e-12 * scale,
        tangent: normalized_gap.abs() <= tolerance,
        tolerance,
        generator_value,
        depth: tree.depth(),
    })
}

/// Jet candidates: a grid plus candidates seeded from bump derivatives of `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JetSearch {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub gamma: Vec<f64>,
    pub seeded: bool,
}

fn steps(lo: f64, hi: f64, by: f64) -> Vec<f64> {
    let n = ((hi - lo) / by).round() as i64;
    (0..=n).map(|k| lo + k as f64 * by).collect()
}

impl Default for JetSearch {
    fn default() -> Self {
        Self {
            q: steps(-2.0, 2.0, 0.25),
            p: steps(-2.0, 2.0, 0.25),
            gamma: steps(-4.0, 4.0, 0.5),
            seeded: true,
        }
    }
}

impl JetSearch {
    pub fn candidates(&self, u: &dyn AdaptedProcess, grid: &TimeGrid, pt: &PathPoint) -> Result<Vec<Paraboloid>> {
        let mut out = Vec::with_capacity(self.q.len() * self.p.len() * self.gamma.len() + 27);
        for &q in &self.q {
            for &p in &self.p {
                for &g in &self.gamma {
                    out.push(Paraboloid::scalar(q, p, g));
                }
            }
        }
        if self.seeded {
            let d = discrete_derivatives(u, pt.path(), grid.horizon(), None)?;
            if let Some(q0) = d.time {
                let (p0, g0) = (d.gradient[0], d.hessian[0]);
                for dq in [-0.25, 0.0, 0.25] {
                    for dp in [-0.25, 0.0, 0.25] {
                        for dg in [-0.5, 0.0, 0.5] {
                            out.push(Paraboloid::scalar(q0 + dq, p0 + dp, g0 + dg));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// A violating jet at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub path: Vec<f64>,
    pub mode: Mode,
    pub q: f64,
    pub p: f64,
    pub gamma: f64,
    pub gap: f64,
    pub normalized_gap: f64,
    pub generator_value: f64,
    pub tolerance: f64,
    pub depth: usize,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViscosityReport {
    pub mode: Mode,
    pub verdict: Verdict,
    pub jets_tested: usize,
    pub jets_tangent: usize,
    /// Violations from exactly tangent jets, worst first.
    pub witnesses: Vec<Witness>,
    /// Violations from jets tangent only within tolerance.
    pub borderline: usize,
}

/// Settings shared by the jet-based checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub bound: DriftBound,
    pub localization: Option<Localization>,
    pub tolerance: Tolerance,
    pub jets: JetSearch,
    /// Witnesses kept per report.
    pub max_witnesses: usize,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            bound: DriftBound::zero(),
            localization: None,
            tolerance: Tolerance::default(),
            jets: JetSearch::default(),
            max_witnesses: 5,
        }
    }
}

impl CheckSettings {
    pub fn localization_for(&self, grid: &TimeGrid) -> Localization {
        self.localization
            .unwrap_or_else(|| Localization::default_for(grid.steps(), grid.step()))
    }
}

fn violates(mode: Mode, r: &TangencyReport) -> bool {
    match mode {
        Mode::Sub => r.generator_value > r.tolerance,
        Mode::Super => r.generator_value < -r.tolerance,
    }
}

/// Every tangent jet must satisfy `-q - G <= tol` (sub) or `>= -tol` (super).
///
/// A violation from an exactly tangent jet fails the check; violations only
/// from jets tangent within tolerance leave it inconclusive.
pub fn viscosity_check(
    u: &dyn AdaptedProcess,
    g: &Generator,
    grid: &TimeGrid,
    pt: &PathPoint,
    mode: Mode,
    settings: &CheckSettings,
) -> Result<ViscosityReport> {
    let loc = settings.localization_for(grid);
    let sample = LocalSample::new(u, grid, pt, &loc)?;
    let jets = settings.jets.candidates(u, grid, pt)?;
    check_sample(&sample, &jets, g, mode, settings)
}

pub fn subsolution_check(
    u: &dyn AdaptedProcess,
    g: &Generator,
    grid: &TimeGrid,
    pt: &PathPoint,
    settings: &CheckSettings,
) -> Result<ViscosityReport> {
    viscosity_check(u, g, grid, pt, Mode::Sub, settings)
}

pub fn supersolution_check(
    u: &dyn AdaptedProcess,
    g: &Generator,
    grid: &TimeGrid,
    pt: &PathPoint,
    settings: &CheckSettings,
) -> Result<ViscosityReport> {
    viscosity_check(u, g, grid, pt, Mode::Super, settings)
}

/// Runs the jet search on a precomputed sample.
pub fn check_sample(
    sample: &LocalSample,
    jets: &[Paraboloid],
    g: &Generator,
    mode: Mode,
    settings: &CheckSettings,
) -> Result<ViscosityReport> {
    let mut tangent = 0;
    let mut borderline = 0;
    let mut witnesses = Vec::new();
    for phi in jets {
        let r = tangency_in_mean(sample, phi, g, settings.bound, mode, settings.tolerance)?;
        if !r.tangent {
            continue;
        }
        tangent += 1;
        if !violates(mode, &r) {
            continue;
        }
        if r.exact {
            witnesses.push(Witness {
                t: sample.point.time(),
                path: sample.point.path().values().to_vec(),
                mode,
                q: r.q,
                p: r.p,
                gamma: r.gamma,
                gap: r.gap,
                normalized_gap: r.normalized_gap,
                generator_value: r.generator_value,
                tolerance: r.tolerance,
                depth: r.depth,
                exact: true,
            });
        } else {
            borderline += 1;
        }
    }
    witnesses.sort_by(|a, b| b.generator_value.abs().total_cmp(&a.generator_value.abs()));
    let verdict = if !witnesses.is_empty() {
        Verdict::Fail
    } else if borderline > 0 || tangent == 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    witnesses.truncate(settings.max_witnesses);
    Ok(ViscosityReport {
        mode,
        verdict,
        jets_tested: jets.len(),
        jets_tangent: tangent,
        witnesses,
        borderline,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::pathspace::{DiscretePath, PathFunctional};
    use crate::stopping::{enumerate_stopping_times, stopped_expectation};
    use crate::measures::DriftControl;
    use crate::viscosity::process::{HeatSolution, ProcessSum, TimeSlope};

    fn setup(n: usize) -> (TimeGrid, PathPoint) {
        let g = TimeGrid::new(1.0, n).unwrap();
        let s = g.step().sqrt();
        let p = DiscretePath::scalar(g.step(), &[0.0, s, 0.0, s]).unwrap();
        (g, PathPoint::new(p))
    }

    fn zero_process() -> impl Fn(&DiscretePath) -> Result<f64> + Sync + Send {
        |_: &DiscretePath| Ok(0.0)
    }

    #[test]
    fn constant_difference_is_tangent_both_ways() {
        let (g, pt) = setup(16);
        let u = HeatSolution::new(PathFunctional::terminal(), g);
        let loc = Localization::default_for(16, g.step());
        let s = LocalSample::new(&u, &g, &pt, &loc).unwrap();
        let phi = Paraboloid::scalar(0.0, 1.0, 0.0);
        for mode in [Mode::Sub, Mode::Super] {
            let r = tangency_in_mean(&s, &phi, &Generator::Heat, DriftBound::zero(), mode, Tolerance::default()).unwrap();
            assert!(r.exact && r.tangent);
            assert_eq!(r.generator_value, 0.0);
        }
    }

    #[test]
    fn time_slope_jets() {
        let (g, pt) = setup(16);
        let u = zero_process();
        let loc = Localization::new(10.0, 4).unwrap();
        let s = LocalSample::new(&u, &g, &pt, &loc).unwrap();
        let up = tangency_in_mean(&s, &Paraboloid::scalar(1.0, 0.0, 0.0), &Generator::Heat, DriftBound::zero(), Mode::Sub, Tolerance::default()).unwrap();
        assert!(up.exact && up.tangent);
        assert_eq!(up.generator_value, -1.0);
        let down = tangency_in_mean(&s, &Paraboloid::scalar(-1.0, 0.0, 0.0), &Generator::Heat, DriftBound::zero(), Mode::Sub, Tolerance::default()).unwrap();
        assert!(down.gap < 0.0 && !down.exact);
        // Exhaustive oracle: the best stopping time is the localization horizon.
        let phi = Paraboloid::scalar(-1.0, 0.0, 0.0);
        let x = s.tree.process_values(|p| Ok(phi.eval(p.end_time() - pt.time(), &[0.0]))).unwrap();
        let best = enumerate_stopping_times(4)
            .unwrap()
            .iter()
            .map(|tau| stopped_expectation(&s.tree, &x, tau, &DriftControl::zero(&s.tree)).unwrap().root())
            .fold(f64::INFINITY, f64::min);
        assert!((down.gap - best).abs() < 1e-15);
    }

    #[test]
    fn gap_sign_forced_by_immediate_stop() {
        let (g, pt) = setup(16);
        let u = HeatSolution::new(PathFunctional::running_max(), g);
        let loc = Localization::default_for(16, g.step());
        let s = LocalSample::new(&u, &g, &pt, &loc).unwrap();
        for phi in JetSearch::default().candidates(&u, &g, &pt).unwrap().iter().step_by(37) {
            for l in [0.0, 1.0] {
                let b = DriftBound::new(l).unwrap();
                let sub = tangency_in_mean(&s, phi, &Generator::Heat, b, Mode::Sub, Tolerance::default()).unwrap();
                let sup = tangency_in_mean(&s, phi, &Generator::Heat, b, Mode::Super, Tolerance::default()).unwrap();
                assert!(sub.gap <= 0.0 && sup.gap >= 0.0);
            }
        }
    }

    #[test]
    fn heat_solution_passes_and_slopes_split() {
        let (g, pt) = setup(20);
        let settings = CheckSettings::default();
        let u: Arc<dyn AdaptedProcess> = Arc::new(HeatSolution::new(PathFunctional::terminal(), g));
        assert_eq!(subsolution_check(u.as_ref(), &Generator::Heat, &g, &pt, &settings).unwrap().verdict, Verdict::Pass);
        assert_eq!(supersolution_check(u.as_ref(), &Generator::Heat, &g, &pt, &settings).unwrap().verdict, Verdict::Pass);
        let up = TimeSlope::new(u.clone(), 1.0);
        assert_eq!(subsolution_check(&up, &Generator::Heat, &g, &pt, &settings).unwrap().verdict, Verdict::Pass);
        let rep = supersolution_check(&up, &Generator::Heat, &g, &pt, &settings).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        assert!((rep.witnesses[0].generator_value + 1.0).abs() <= 0.25 + 1e-9);
    }

    #[test]
    fn small_slope_resolved_on_fine_grid() {
        let g = TimeGrid::new(1.0, 1024).unwrap();
        let pt = PathPoint::origin(g.step(), 1);
        let settings = CheckSettings {
            localization: Some(Localization::new(1.0, 4).unwrap()),
            jets: JetSearch {
                q: steps(-0.2, 0.2, 0.025),
                p: vec![0.75, 1.0, 1.25],
                gamma: steps(-0.4, 0.4, 0.05),
                seeded: false,
            },
            ..CheckSettings::default()
        };
        let u = TimeSlope::new(Arc::new(PathFunctional::terminal()), 0.1);
        assert_eq!(subsolution_check(&u, &Generator::Heat, &g, &pt, &settings).unwrap().verdict, Verdict::Pass);
        let rep = supersolution_check(&u, &Generator::Heat, &g, &pt, &settings).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        let margin = rep.witnesses[0].generator_value;
        assert!(margin < 0.0 && (margin + 0.1).abs() <= 0.025 + 1e-12, "{margin}");
    }

    #[test]
    fn jet_sums_stay_tangent() {
        let (g, pt) = setup(16);
        let loc = Localization::default_for(16, g.step());
        let a: Arc<dyn AdaptedProcess> = Arc::new(HeatSolution::new(PathFunctional::terminal(), g));
        let b: Arc<dyn AdaptedProcess> = Arc::new(TimeSlope::new(Arc::new(zero_process()), -0.5));
        let sum = ProcessSum(a.clone(), b.clone());
        let (sa, sb, ss) = (
            LocalSample::new(a.as_ref(), &g, &pt, &loc).unwrap(),
            LocalSample::new(b.as_ref(), &g, &pt, &loc).unwrap(),
            LocalSample::new(&sum, &g, &pt, &loc).unwrap(),
        );
        let tight = Tolerance::Absolute { value: 0.0 };
        let heat = Generator::Heat;
        let z = DriftBound::zero();
        let mut pairs = 0;
        for j1 in [Paraboloid::scalar(0.0, 1.0, 0.0), Paraboloid::scalar(0.5, 1.0, 1.0), Paraboloid::scalar(-0.5, 0.0, 1.0)] {
            for j2 in [Paraboloid::scalar(-0.5, 0.0, 0.0), Paraboloid::scalar(0.0, 0.5, 0.0), Paraboloid::scalar(1.0, -1.0, -1.0)] {
                let t1 = tangency_in_mean(&sa, &j1, &heat, z, Mode::Sub, tight).unwrap().exact;
                let t2 = tangency_in_mean(&sb, &j2, &heat, z, Mode::Sub, tight).unwrap().exact;
                if t1 && t2 {
                    pairs += 1;
                    let s = Paraboloid::scalar(j1.q() + j2.q(), j1.p()[0] + j2.p()[0], j1.gamma()[0] + j2.gamma()[0]);
                    assert!(tangency_in_mean(&ss, &s, &heat, z, Mode::Sub, tight).unwrap().exact);
                }
            }
        }
        assert!(pairs >= 2);
    }

    #[test]
    fn tighter_tolerance_accepts_fewer_jets() {
        let (g, pt) = setup(16);
        let u = HeatSolution::new(PathFunctional::running_max(), g);
        let loc = Localization::default_for(16, g.step());
        let s = LocalSample::new(&u, &g, &pt, &loc).unwrap();
        let jets = JetSearch::default().candidates(&u, &g, &pt).unwrap();
        let mut prev = usize::MAX;
        for scale in [10.0, 5.0, 2.0, 1.0, 0.5, 0.0] {
            let tol = Tolerance::Scaled { scale };
            let count = jets
                .iter()
                .filter(|j| tangency_in_mean(&s, j, &Generator::Heat, DriftBound::zero(), Mode::Sub, tol).unwrap().tangent)
                .count();
            assert!(count <= prev);
            prev = count;
        }
    }

    #[test]
    fn horizon_point_rejected() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let pt = PathPoint::new(DiscretePath::scalar(0.5, &[0.0, 0.1, 0.2]).unwrap());
        let u = zero_process();
        assert!(subsolution_check(&u, &Generator::Heat, &g, &pt, &CheckSettings::default()).is_err());
    }
}
