use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ppde_core::measures::DriftBound;
use ppde_core::pathspace::{FunctionalSpec, TimeGrid};
use ppde_core::solvers::{Backend, OperatorSpec, Reference};
use ppde_core::funcalc::{Driver, GeneratorSpec};
use ppde_core::viscosity::{Localization, Mode, Tolerance, Verdict};

/// A config file: one or more experiments sharing a name and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub experiments: Vec<Experiment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub label: String,
    /// Fail the experiment if it takes longer than this.
    #[serde(default)]
    pub max_seconds: Option<f64>,
    #[serde(flatten)]
    pub spec: ExperimentSpec,
}

/// `steps` as a single count or an increasing sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Steps {
    One(usize),
    Many(Vec<usize>),
}

impl Steps {
    pub fn all(&self) -> Vec<usize> {
        match self {
            Self::One(n) => vec![*n],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "unit")]
    pub horizon: f64,
    pub steps: Steps,
}

fn unit() -> f64 {
    1.0
}

impl GridSpec {
    pub fn grids(&self) -> Result<Vec<TimeGrid>> {
        let steps = self.steps.all();
        if steps.is_empty() {
            bail!("grid.steps: empty sequence");
        }
        steps
            .iter()
            .map(|n| TimeGrid::new(self.horizon, *n).with_context(|| format!("grid with {n} steps")))
            .collect()
    }

    pub fn single(&self) -> Result<TimeGrid> {
        match &self.steps {
            Steps::One(n) => Ok(TimeGrid::new(self.horizon, *n)?),
            Steps::Many(_) => bail!("grid.steps: this experiment takes a single step count"),
        }
    }
}

/// `|value - expected| <= tol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub value: f64,
    #[serde(default)]
    pub tol: f64,
}

/// `F(y, z) = y_coef y + z_abs |z| + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    #[serde(default)]
    pub y_coef: f64,
    #[serde(default)]
    pub z_abs: f64,
    #[serde(default)]
    pub constant: f64,
}

impl DriverSpec {
    pub fn build(&self) -> Result<Driver> {
        if ![self.y_coef, self.z_abs, self.constant].iter().all(|v| v.is_finite()) {
            bail!("driver: coefficients must be finite");
        }
        Ok(Driver::affine(self.y_coef, self.z_abs, self.constant))
    }
}

/// On-tree evaluation points: `count` seeded random walks whose lengths cycle
/// through `[min_index, n)`, plus one walk per entry of `include`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsSpec {
    pub count: usize,
    #[serde(default)]
    pub min_index: usize,
    #[serde(default)]
    pub include: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MethodSpec {
    #[default]
    Exact,
    MonteCarlo { paths: usize },
}

/// An adapted process built from a functional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub functional: FunctionalSpec,
    /// Use `E[xi | F_t]` instead of `xi` on the prefix.
    #[serde(default)]
    pub heat: bool,
    /// Adds `slope * t`.
    #[serde(default)]
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemSpec {
    Bsde { driver: DriverSpec, functional: FunctionalSpec },
    Scheme { operator: OperatorSpec, functional: FunctionalSpec },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatChecks {
    #[serde(default)]
    pub value: Option<Expect>,
    /// Value equals the functional on the prefix (frozen) within this tolerance.
    #[serde(default)]
    pub frozen: Option<f64>,
    #[serde(default)]
    pub increasing: bool,
    #[serde(default)]
    pub below: Option<f64>,
    #[serde(default)]
    pub gap_ratio: Option<GapRatio>,
}

/// `(limit - v(from)) / (limit - v(to))` within `range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapRatio {
    pub limit: f64,
    pub from: usize,
    pub to: usize,
    pub range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeChecks {
    /// `error <= c / n` on every row.
    #[serde(default)]
    pub error_times_n: Option<f64>,
    /// Successive error ratios inside the range.
    #[serde(default)]
    pub ratio: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomObstacles {
    pub count: usize,
    pub max_steps: usize,
    /// Drift bounds are drawn in `[0, max_bound)`.
    #[serde(default = "unit")]
    pub max_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnellChecks {
    #[serde(default)]
    pub value: Option<Expect>,
    /// Skorokhod sum, path residual and extremal re-solve within this tolerance.
    #[serde(default)]
    pub decomposition: Option<f64>,
    /// `D^eps` conservation at every level for each listed `eps`.
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default = "tight")]
    pub eps_tol: f64,
}

fn tight() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdCheck {
    pub points: usize,
    #[serde(default)]
    pub half_width: Option<f64>,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeChecks {
    #[serde(default)]
    pub value: Option<Expect>,
    /// Compare the finest-grid root against explicit finite differences.
    #[serde(default)]
    pub fd: Option<FdCheck>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyChecks {
    #[serde(default)]
    pub max_deviation: Option<f64>,
    /// Deviation over `h` stays below this.
    #[serde(default)]
    pub deviation_per_h: Option<f64>,
    /// Successive deviation ratios at least this.
    #[serde(default)]
    pub min_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityChecks {
    /// `|u^eps - u - eps T| <= 1e-12`.
    #[serde(default)]
    pub exact_shift: bool,
    /// `deviation <= eps * eps_factor + h * h_factor`.
    #[serde(default)]
    pub eps_factor: Option<f64>,
    #[serde(default)]
    pub h_factor: f64,
}

/// Expected verdicts per mode; unset modes are not checked.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictChecks {
    #[serde(default)]
    pub sub: Option<Verdict>,
    #[serde(default, rename = "super")]
    pub sup: Option<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PassChecks {
    #[serde(default)]
    pub sub: Option<bool>,
    #[serde(default, rename = "super")]
    pub sup: Option<bool>,
}

fn both_modes() -> Vec<Mode> {
    vec![Mode::Sub, Mode::Super]
}

fn one() -> f64 {
    1.0
}

fn martingale_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSpec {
    Heat {
        functional: FunctionalSpec,
        grid: GridSpec,
        #[serde(default)]
        backend: Backend,
        #[serde(default)]
        method: MethodSpec,
        /// Evaluate at these points instead of the origin.
        #[serde(default)]
        points: Option<PointsSpec>,
        #[serde(default)]
        checks: HeatChecks,
    },
    Bsde {
        driver: DriverSpec,
        functional: FunctionalSpec,
        grid: GridSpec,
        #[serde(default)]
        backend: Backend,
        #[serde(default)]
        checks: HeatChecks,
    },
    Ebar {
        functional: FunctionalSpec,
        bound: f64,
        grid: GridSpec,
        #[serde(default)]
        lower: bool,
        #[serde(default)]
        backend: Backend,
        #[serde(default)]
        checks: HeatChecks,
    },
    Snell {
        #[serde(default)]
        obstacle: Option<FunctionalSpec>,
        #[serde(default)]
        grid: Option<GridSpec>,
        #[serde(default)]
        bound: f64,
        #[serde(default)]
        random: Option<RandomObstacles>,
        #[serde(default)]
        checks: SnellChecks,
    },
    Scheme {
        operator: OperatorSpec,
        functional: FunctionalSpec,
        grid: GridSpec,
        #[serde(default)]
        backend: Backend,
        #[serde(default)]
        checks: SchemeChecks,
    },
    Certify {
        operator: OperatorSpec,
        hs: Vec<f64>,
        #[serde(default)]
        t: f64,
        #[serde(default)]
        x: f64,
        #[serde(default)]
        monotonicity_trials: usize,
        #[serde(default)]
        checks: CertifyChecks,
    },
    Converge {
        problem: ProblemSpec,
        grid: GridSpec,
        reference: Reference,
        #[serde(default)]
        backend: Backend,
        #[serde(default)]
        checks: ConvergeChecks,
    },
    Compare {
        /// `None` compares heat values.
        #[serde(default)]
        driver: Option<DriverSpec>,
        pairs: usize,
        grid: GridSpec,
        /// Allowed ordering slack as a multiple of `h`.
        #[serde(default)]
        tol_per_h: f64,
    },
    Stability {
        driver: DriverSpec,
        functional: FunctionalSpec,
        grid: GridSpec,
        eps: Vec<f64>,
        #[serde(default)]
        backend: Backend,
        #[serde(default)]
        checks: StabilityChecks,
    },
    CheckViscosity {
        process: ProcessSpec,
        generator: GeneratorSpec,
        grid: GridSpec,
        points: PointsSpec,
        #[serde(default)]
        bound: f64,
        #[serde(default = "both_modes")]
        modes: Vec<Mode>,
        #[serde(default)]
        tolerance: Option<Tolerance>,
        #[serde(default)]
        localization: Option<Localization>,
        #[serde(default)]
        checks: VerdictChecks,
    },
    CheckSubmartingale {
        process: ProcessSpec,
        grid: GridSpec,
        points: PointsSpec,
        #[serde(default)]
        bound: f64,
        #[serde(default = "both_modes")]
        modes: Vec<Mode>,
        #[serde(default = "martingale_tol")]
        tol: f64,
        #[serde(default)]
        localization: Option<Localization>,
        #[serde(default)]
        checks: PassChecks,
    },
    Equivalence {
        functionals: Vec<FunctionalSpec>,
        deltas: Vec<f64>,
        grid: GridSpec,
        points: PointsSpec,
        #[serde(default)]
        bound: f64,
        #[serde(default)]
        tolerance: Option<Tolerance>,
        #[serde(default)]
        localization: Option<Localization>,
        #[serde(default = "martingale_tol")]
        martingale_tol: f64,
        /// Required fraction of agreeing rows.
        #[serde(default = "one")]
        min_agreement: f64,
    },
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Heat { .. } => "heat",
            Self::Bsde { .. } => "bsde",
            Self::Ebar { .. } => "ebar",
            Self::Snell { .. } => "snell",
            Self::Scheme { .. } => "scheme",
            Self::Certify { .. } => "certify",
            Self::Converge { .. } => "converge",
            Self::Compare { .. } => "compare",
            Self::Stability { .. } => "stability",
            Self::CheckViscosity { .. } => "check-viscosity",
            Self::CheckSubmartingale { .. } => "check-submartingale",
            Self::Equivalence { .. } => "equivalence",
        }
    }
}

pub const KINDS: &[(&str, &str)] = &[
    ("heat", "E[xi | F_t] at the origin or at sampled points"),
    ("bsde", "explicit BSDE value with an affine driver"),
    ("ebar", "upper (or lower) expectation over drift-controlled measures"),
    ("snell", "Snell envelope of an obstacle, or randomized certification"),
    ("scheme", "monotone scheme root, optionally against finite differences"),
    ("certify", "scheme consistency and monotonicity certificates"),
    ("converge", "convergence table over an n-sequence"),
    ("compare", "comparison on random ordered terminal pairs"),
    ("stability", "driver perturbation F + eps"),
    ("check-viscosity", "jet-based sub/supersolution checks"),
    ("check-submartingale", "regular sub/supermartingale checks"),
    ("equivalence", "martingale-axis vs jet-axis verdicts on slope-shifted candidates"),
];

fn check_bound(bound: f64, grids: &[TimeGrid], field: &str) -> Result<()> {
    let b = DriftBound::new(bound).with_context(|| field.to_string())?;
    for g in grids {
        b.check(g.step())
            .with_context(|| format!("{field}: L sqrt(h) must be <= 1 on the {}-step grid", g.steps()))?;
    }
    Ok(())
}

fn check_points(p: &PointsSpec, g: &TimeGrid) -> Result<()> {
    if p.min_index >= g.steps() {
        bail!("points.min_index {} leaves no step before the horizon", p.min_index);
    }
    if let Some(k) = p.include.iter().find(|k| **k >= g.steps()) {
        bail!("points.include: index {k} leaves no step before the horizon");
    }
    Ok(())
}

fn check_functional(f: &FunctionalSpec, field: &str) -> Result<()> {
    f.build().with_context(|| field.to_string())?;
    if f.min_dim() > 1 {
        bail!("{field}: needs a {}-dimensional path; experiments run on scalar paths", f.min_dim());
    }
    Ok(())
}

impl Experiment {
    /// Field-level validation beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("experiment '{}' ({})", self.label, self.spec.kind());
        self.validate_spec().with_context(ctx)
    }

    fn validate_spec(&self) -> Result<()> {
        match &self.spec {
            ExperimentSpec::Heat { functional, grid, method, points, .. } => {
                check_functional(functional, "functional")?;
                let grids = grid.grids()?;
                if let MethodSpec::MonteCarlo { paths } = method {
                    if *paths < 2 {
                        bail!("method.paths must be >= 2");
                    }
                }
                if let Some(p) = points {
                    for g in &grids {
                        check_points(p, g)?;
                    }
                }
            }
            ExperimentSpec::Bsde { driver, functional, grid, .. }
            | ExperimentSpec::Stability { driver, functional, grid, .. } => {
                driver.build()?;
                check_functional(functional, "functional")?;
                grid.grids()?;
            }
            ExperimentSpec::Ebar { functional, bound, grid, .. } => {
                check_functional(functional, "functional")?;
                check_bound(*bound, &grid.grids()?, "bound")?;
            }
            ExperimentSpec::Snell { obstacle, grid, bound, random, .. } => match (obstacle, grid, random) {
                (Some(o), Some(g), None) => {
                    check_functional(o, "obstacle")?;
                    check_bound(*bound, &[g.single()?], "bound")?;
                }
                (None, None, Some(r)) => {
                    if r.count == 0 || r.max_steps == 0 || r.max_steps > 16 {
                        bail!("random: need count >= 1 and 1 <= max_steps <= 16");
                    }
                    if !(r.max_bound > 0.0 && r.max_bound <= 1.0) {
                        bail!("random.max_bound must lie in (0, 1] so that L sqrt(h) <= 1 for h <= 1");
                    }
                }
                _ => bail!("give either obstacle and grid, or random"),
            },
            ExperimentSpec::Scheme { operator, functional, grid, checks, .. } => {
                let op = operator.build()?;
                check_functional(functional, "functional")?;
                for g in grid.grids()? {
                    op.validate(g.step()).with_context(|| format!("operator on the {}-step grid", g.steps()))?;
                }
                if checks.fd.is_some() && !markovian(functional) {
                    bail!("checks.fd: the functional must depend on the terminal value only");
                }
            }
            ExperimentSpec::Certify { operator, hs, .. } => {
                let op = operator.build()?;
                if hs.is_empty() || hs.windows(2).any(|w| w[1] >= w[0]) {
                    bail!("hs must be a non-empty decreasing sequence");
                }
                for h in hs {
                    op.validate(*h)?;
                }
            }
            ExperimentSpec::Converge { problem, grid, .. } => {
                let ns = grid.steps.all();
                if ns.windows(2).any(|w| w[1] <= w[0]) {
                    bail!("grid.steps must be increasing");
                }
                match problem {
                    ProblemSpec::Bsde { driver, functional } => {
                        driver.build()?;
                        check_functional(functional, "problem.functional")?;
                    }
                    ProblemSpec::Scheme { operator, functional } => {
                        let op = operator.build()?;
                        check_functional(functional, "problem.functional")?;
                        for g in grid.grids()? {
                            op.validate(g.step())?;
                        }
                    }
                }
            }
            ExperimentSpec::Compare { driver, pairs, grid, .. } => {
                if let Some(d) = driver {
                    d.build()?;
                }
                if *pairs == 0 {
                    bail!("pairs must be >= 1");
                }
                let g = grid.single()?;
                if g.steps() > 16 {
                    bail!("compare runs on the full tree: at most 16 steps");
                }
            }
            ExperimentSpec::CheckViscosity { process, generator, grid, points, bound, .. } => {
                check_functional(&process.functional, "process.functional")?;
                generator.build()?;
                let g = grid.single()?;
                check_bound(*bound, &[g], "bound")?;
                check_points(points, &g)?;
            }
            ExperimentSpec::CheckSubmartingale { process, grid, points, bound, .. } => {
                check_functional(&process.functional, "process.functional")?;
                let g = grid.single()?;
                check_bound(*bound, &[g], "bound")?;
                check_points(points, &g)?;
            }
            ExperimentSpec::Equivalence { functionals, deltas, grid, points, bound, min_agreement, .. } => {
                if functionals.is_empty() {
                    bail!("functionals: need at least one");
                }
                for f in functionals {
                    check_functional(f, "functionals")?;
                }
                if deltas.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                    bail!("deltas must be positive");
                }
                let g = grid.single()?;
                check_bound(*bound, &[g], "bound")?;
                check_points(points, &g)?;
                if !(0.0..=1.0).contains(min_agreement) {
                    bail!("min_agreement must lie in [0, 1]");
                }
            }
        }
        Ok(())
    }
}

/// Functionals of the terminal value alone, usable as `psi(omega_T)`.
pub fn markovian(f: &FunctionalSpec) -> bool {
    match f {
        FunctionalSpec::Terminal { .. } => true,
        FunctionalSpec::Power { inner, .. } | FunctionalSpec::PositivePart { inner } => markovian(inner),
        FunctionalSpec::Affine { terms, .. } => terms.iter().all(|t| markovian(&t.functional)),
        _ => false,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiments.is_empty() {
            bail!("experiments: need at least one");
        }
        let mut labels = std::collections::BTreeSet::new();
        for e in &self.experiments {
            if e.label.is_empty() || !e.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                bail!("label '{}': use letters, digits, '-' or '_'", e.label);
            }
            if !labels.insert(e.label.as_str()) {
                bail!("label '{}' appears twice", e.label);
            }
            e.validate()?;
        }
        Ok(())
    }
}
