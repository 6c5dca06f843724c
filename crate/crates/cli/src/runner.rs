use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ppde_core::funcalc::{AdaptedProcess, Generator};
use ppde_core::measures::{ebar_tree, eunder_tree, DriftBound, NodeValues, ScenarioTree};
use ppde_core::pathspace::{DiscretePath, FunctionalSpec, PathFunctional, PathPoint, TimeGrid};
use ppde_core::solvers::{
    check_consistency, check_monotonicity, convergence_study, default_paraboloid_grid, heat_nodes,
    markovian_fd, monotone_scheme, prepare, solve_bsde, solve_heat, stability_experiment, Backend,
    FdGrid, HeatMethod, MarkovGenerator, OperatorSpec, Problem, SchemeOperator,
};
use ppde_core::stopping::{
    doob_meyer, extremal_measure, hitting_time_eps, linear_snell, optimal_rule, snell, stopped_ebar,
    ObstacleProcess,
};
use ppde_core::viscosity::{
    comparison_check, equivalence_experiment, regular_submartingale_check, viscosity_check, Candidate,
    CheckSettings, ComparisonVerdict, HeatSolution, Mode, TimeSlope,
};

use crate::config::{
    markovian, Expect, Experiment, ExperimentConfig, ExperimentSpec, HeatChecks, MethodSpec,
    PointsSpec, ProblemSpec, ProcessSpec, RandomObstacles,
};
use crate::report::{cell, ExperimentResult, RunReport, Table};

/// Runs every experiment of `cfg` with `seed` (the config seed unless overridden).
pub fn run(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<RunReport> {
    cfg.validate()?;
    let seed = seed.unwrap_or(cfg.seed);
    let mut results = Vec::with_capacity(cfg.experiments.len());
    for (k, e) in cfg.experiments.iter().enumerate() {
        log::info!("running '{}' ({})", e.label, e.spec.kind());
        let started = Instant::now();
        let mut r = run_experiment(e, seed.wrapping_add(k as u64))
            .with_context(|| format!("experiment '{}'", e.label))?;
        r.seconds = started.elapsed().as_secs_f64();
        if let Some(limit) = e.max_seconds {
            r.check("max_seconds", r.seconds <= limit, format!("limit {limit} s"));
        }
        r.finish();
        results.push(r);
    }
    Ok(RunReport {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        pass: results.iter().all(|r| r.pass),
        config: cfg.clone(),
        results,
    })
}

fn run_experiment(e: &Experiment, seed: u64) -> Result<ExperimentResult> {
    let mut r = ExperimentResult::new(&e.label, e.spec.kind());
    match &e.spec {
        ExperimentSpec::Heat { functional, grid, backend, method, points, checks } => {
            let xi = functional.build()?;
            let method = |b: Backend| match method {
                MethodSpec::Exact => HeatMethod::Exact { backend: b },
                MethodSpec::MonteCarlo { paths } => HeatMethod::MonteCarlo { paths: *paths, seed },
            };
            match points {
                None => {
                    let mut t = Table::new(&["n", "h", "value", "std_error"]);
                    let mut values = Vec::new();
                    for g in grid.grids()? {
                        let v = solve_heat(&xi, &g, &PathPoint::origin(g.step(), 1), method(*backend))?;
                        t.push(vec![g.steps().to_string(), g.step().to_string(), v.value.to_string(), cell(v.std_error)]);
                        values.push((g.steps(), v.value));
                    }
                    r.table = Some(t);
                    series_checks(&mut r, &values, checks);
                }
                Some(p) => {
                    let mut t = Table::new(&["n", "point", "index", "t", "x", "value", "std_error", "prefix_value"]);
                    let mut worst_frozen: f64 = 0.0;
                    let mut count = 0;
                    for g in grid.grids()? {
                        for (k, pt) in make_points(p, &g, seed)?.iter().enumerate() {
                            let v = solve_heat(&xi, &g, pt, method(*backend))?;
                            let here = xi.eval(pt.path())?;
                            worst_frozen = worst_frozen.max((v.value - here).abs());
                            if let Some(ex) = checks.value {
                                count += 1;
                                if (v.value - ex.value).abs() > ex.tol {
                                    r.check("value", false, format!("n={} point {k}: {} vs {}", g.steps(), v.value, ex.value));
                                }
                            }
                            t.push(vec![
                                g.steps().to_string(),
                                k.to_string(),
                                pt.index().to_string(),
                                pt.time().to_string(),
                                pt.path().last()[0].to_string(),
                                v.value.to_string(),
                                cell(v.std_error),
                                here.to_string(),
                            ]);
                        }
                    }
                    if let Some(ex) = checks.value {
                        if r.check_named("value").is_none() {
                            r.check("value", true, format!("{count} points within {} of {}", ex.tol, ex.value));
                        }
                    }
                    if let Some(tol) = checks.frozen {
                        r.check("frozen", worst_frozen <= tol, format!("max |u - xi(prefix)| = {worst_frozen:e}, tol {tol:e}"));
                    }
                    r.scalar("max_frozen_deviation", worst_frozen);
                    r.table = Some(t);
                }
            }
        }
        ExperimentSpec::Bsde { driver, functional, grid, backend, checks } => {
            let (d, xi) = (driver.build()?, functional.build()?);
            let mut t = Table::new(&["n", "h", "value", "within_bound"]);
            let mut values = Vec::new();
            let mut bounded = true;
            for g in grid.grids()? {
                let s = solve_bsde(&d, &xi, &g, &PathPoint::origin(g.step(), 1), *backend)?;
                bounded &= s.within_bound().unwrap_or(true);
                t.push(vec![
                    g.steps().to_string(),
                    g.step().to_string(),
                    s.root().to_string(),
                    s.within_bound().map(|b| b.to_string()).unwrap_or_default(),
                ]);
                values.push((g.steps(), s.root()));
            }
            r.check("a_priori_bound", bounded, "max |Y| within (|xi| + T sup|F(0,0)|) e^{L T}");
            r.table = Some(t);
            series_checks(&mut r, &values, checks);
        }
        ExperimentSpec::Ebar { functional, bound, grid, lower, backend, checks } => {
            let xi = functional.build()?;
            let b = DriftBound::new(*bound)?;
            let mut t = Table::new(&["n", "h", "value", "lambda_star_root"]);
            let mut values = Vec::new();
            for g in grid.grids()? {
                let p = prepare(&xi, &DiscretePath::origin(g.step(), 1), g.steps(), *backend)?;
                let e = if *lower {
                    eunder_tree(p.carrier.as_ref(), p.leaves, b)?
                } else {
                    ebar_tree(p.carrier.as_ref(), p.leaves, b)?
                };
                let lam = if g.steps() > 0 { Some(e.lambda_star.root()) } else { None };
                t.push(vec![g.steps().to_string(), g.step().to_string(), e.root().to_string(), cell(lam)]);
                values.push((g.steps(), e.root()));
            }
            r.table = Some(t);
            series_checks(&mut r, &values, checks);
        }
        ExperimentSpec::Snell { obstacle, grid, bound, random, checks } => match (obstacle, grid, random) {
            (Some(o), Some(g), None) => {
                let g = g.single()?;
                let tree = ScenarioTree::new(&g)?;
                let obs = ObstacleProcess::from_functional(&tree, &o.build()?)?;
                let env = snell(&tree, &obs, DriftBound::new(*bound)?)?;
                r.scalar("root", env.root());
                if let Some(ex) = checks.value {
                    expect_check(&mut r, "value", env.root(), ex);
                }
                let (dec, eps) = certify_snell(&tree, &obs, &env, &checks.eps)?;
                if let Some(tol) = checks.decomposition {
                    r.check("decomposition", dec <= tol, format!("max residual {dec:e}, tol {tol:e}"));
                }
                if !checks.eps.is_empty() {
                    r.check("eps_conservation", eps <= checks.eps_tol, format!("max deviation {eps:e}, tol {:e}", checks.eps_tol));
                }
                r.table = Some(Table::from_csv(&env.to_csv()));
            }
            (None, None, Some(rand_spec)) => random_snell(&mut r, rand_spec, checks, seed)?,
            _ => bail!("snell: give either obstacle and grid, or random"),
        },
        ExperimentSpec::Scheme { operator, functional, grid, backend, checks } => {
            let op = operator.build()?;
            let xi = functional.build()?;
            let mut t = Table::new(&["n", "h", "value"]);
            let mut last = None;
            for g in grid.grids()? {
                let v = monotone_scheme(&op, &xi, &g, &PathPoint::origin(g.step(), 1), *backend)?.root();
                t.push(vec![g.steps().to_string(), g.step().to_string(), v.to_string()]);
                if let Some(ex) = checks.value {
                    if (v - ex.value).abs() > ex.tol {
                        r.check("value", false, format!("n={}: {v} vs {}", g.steps(), ex.value));
                    }
                }
                last = Some((g, v));
            }
            if let Some(ex) = checks.value {
                if r.check_named("value").is_none() {
                    r.check("value", true, format!("every n within {:e} of {}", ex.tol, ex.value));
                }
            }
            let (g, v) = last.expect("validated non-empty");
            r.scalar("finest_value", v);
            if let Some(fd) = &checks.fd {
                if !markovian(functional) {
                    bail!("checks.fd: the functional must depend on the terminal value only");
                }
                let gen = match operator {
                    OperatorSpec::Heat => MarkovGenerator::Heat,
                    OperatorSpec::DriftHjb { bound } => MarkovGenerator::DriftHjb { bound: *bound },
                    OperatorSpec::Semilinear { .. } => bail!("checks.fd: no finite-difference reference for semilinear operators"),
                };
                let psi = |x: f64| {
                    DiscretePath::scalar(g.step(), &[0.0, x]).and_then(|p| xi.eval(&p)).unwrap_or(f64::NAN)
                };
                let sol = markovian_fd(gen, psi, g.horizon(), FdGrid { half_width: fd.half_width, points: fd.points, time_steps: None })?;
                let reference = sol.value_at(0.0)?;
                let dev = (v - reference).abs();
                r.scalar("fd_value", reference);
                r.scalar("fd_time_steps", sol.time_steps as f64);
                r.check("fd", dev <= fd.tol, format!("|scheme - fd| = {dev:e} at n={}, tol {:e}", g.steps(), fd.tol));
            }
            r.table = Some(t);
        }
        ExperimentSpec::Certify { operator, hs, t: t0, x, monotonicity_trials, checks } => {
            let op = operator.build()?;
            let gen = op.generator().context("operator has no reference generator")?;
            certify(&mut r, &op, &gen, hs, *t0, *x, *monotonicity_trials, checks, seed)?;
        }
        ExperimentSpec::Converge { problem, grid, reference, backend, checks } => {
            let prob = match problem {
                ProblemSpec::Bsde { driver, functional } => Problem::Bsde { driver: driver.build()?, xi: functional.build()? },
                ProblemSpec::Scheme { operator, functional } => Problem::Scheme { op: operator.build()?, xi: functional.build()? },
            };
            let ns = grid.steps.all();
            let table = convergence_study(&prob, grid.horizon, &ns, *reference, *backend)?;
            r.scalar("reference", table.reference);
            if let Some(c) = checks.error_times_n {
                let bad: Vec<String> = table
                    .rows
                    .iter()
                    .filter_map(|row| row.error.filter(|e| *e > c / row.n as f64).map(|e| format!("n={}: {e:e}", row.n)))
                    .collect();
                r.check("error_times_n", bad.is_empty(), if bad.is_empty() { format!("error <= {c}/n on every row") } else { bad.join("; ") });
            }
            if let Some([lo, hi]) = checks.ratio {
                let ratios: Vec<f64> = table.rows.iter().filter_map(|row| row.ratio).collect();
                let ok = !ratios.is_empty() && ratios.iter().all(|q| (lo..=hi).contains(q));
                r.check("ratio", ok, format!("ratios {ratios:?} in [{lo}, {hi}]"));
            }
            r.table = Some(Table::from_csv(&table.to_csv()));
        }
        ExperimentSpec::Compare { driver, pairs, grid, tol_per_h } => {
            let g = grid.single()?;
            let d = driver.map(|d| d.build()).transpose()?;
            compare(&mut r, d.as_ref(), *pairs, &g, tol_per_h * g.step(), seed)?;
        }
        ExperimentSpec::Stability { driver, functional, grid, eps, backend, checks } => {
            let g = grid.single()?;
            let rep = stability_experiment(&driver.build()?, &functional.build()?, g.horizon(), g.steps(), eps, *backend)?;
            let mut t = Table::new(&["eps", "value", "deviation", "comparison_bound"]);
            let mut worst_shift: f64 = 0.0;
            let mut over = Vec::new();
            for row in &rep.rows {
                t.push(vec![row.eps.to_string(), row.value.to_string(), row.deviation.to_string(), row.comparison_bound.to_string()]);
                worst_shift = worst_shift.max((row.value - rep.base - row.eps * g.horizon()).abs());
                if let Some(c) = checks.eps_factor {
                    let lim = row.eps.abs() * c + g.step() * checks.h_factor;
                    if row.deviation > lim {
                        over.push(format!("eps={}: {} > {lim}", row.eps, row.deviation));
                    }
                }
            }
            r.scalar("base", rep.base);
            r.scalar("slope", rep.slope);
            if checks.exact_shift {
                r.check("exact_shift", worst_shift <= 1e-12, format!("max |u^eps - u - eps T| = {worst_shift:e}"));
            }
            if let Some(c) = checks.eps_factor {
                let detail = if over.is_empty() { format!("deviation <= {c} eps + {} h", checks.h_factor) } else { over.join("; ") };
                r.check("deviation_bound", over.is_empty(), detail);
            }
            r.table = Some(t);
        }
        ExperimentSpec::CheckViscosity { process, generator, grid, points, bound, modes, tolerance, localization, checks } => {
            let g = grid.single()?;
            let u = build_process(process, &g)?;
            let gen = generator.build()?;
            let mut settings = CheckSettings { bound: DriftBound::new(*bound)?, localization: *localization, ..CheckSettings::default() };
            if let Some(tol) = tolerance {
                settings.tolerance = *tol;
            }
            let pts = make_points(points, &g, seed)?;
            viscosity_points(&mut r, u.as_ref(), &gen, &g, &pts, modes, &settings, checks)?;
        }
        ExperimentSpec::CheckSubmartingale { process, grid, points, bound, modes, tol, localization, checks } => {
            let g = grid.single()?;
            let u = build_process(process, &g)?;
            let loc = localization.unwrap_or_else(|| CheckSettings::default().localization_for(&g));
            let b = DriftBound::new(*bound)?;
            let pts = make_points(points, &g, seed)?;
            let mut t = Table::new(&["point", "index", "t", "mode", "u0", "extremum", "violation", "pass", "depth"]);
            let mut all = [(Mode::Sub, true), (Mode::Super, true)];
            for (k, pt) in pts.iter().enumerate() {
                for &mode in modes {
                    let rep = regular_submartingale_check(u.as_ref(), &g, pt, b, mode, &loc, *tol)?;
                    t.push(vec![
                        k.to_string(),
                        pt.index().to_string(),
                        pt.time().to_string(),
                        mode_name(mode).into(),
                        rep.u0.to_string(),
                        rep.extremum.to_string(),
                        rep.violation.to_string(),
                        rep.pass.to_string(),
                        rep.depth.to_string(),
                    ]);
                    all.iter_mut().filter(|(m, _)| *m == mode).for_each(|(_, p)| *p &= rep.pass);
                    if !rep.pass {
                        r.witnesses.push(serde_json::json!({"point": k, "path": pt.path().values(), "report": rep}));
                    }
                }
            }
            for (mode, expected) in [(Mode::Sub, checks.sub), (Mode::Super, checks.sup)] {
                if let Some(want) = expected {
                    let got = all.iter().find(|(m, _)| *m == mode).map(|(_, p)| *p).unwrap_or(true);
                    r.check(format!("{}_pass", mode_name(mode)), got == want, format!("expected {want}, observed {got} over {} points", pts.len()));
                }
            }
            r.table = Some(t);
        }
        ExperimentSpec::Equivalence { functionals, deltas, grid, points, bound, tolerance, localization, martingale_tol, min_agreement } => {
            let g = grid.single()?;
            let mut settings = CheckSettings { bound: DriftBound::new(*bound)?, localization: *localization, ..CheckSettings::default() };
            if let Some(tol) = tolerance {
                settings.tolerance = *tol;
            }
            let candidates = equivalence_candidates(functionals, deltas, &g)?;
            let pts = make_points(points, &g, seed)?;
            let rep = equivalence_experiment(&candidates, &g, &pts, &settings, *martingale_tol)?;
            r.scalar("candidates", candidates.len() as f64);
            r.scalar("rows", rep.rows.len() as f64);
            r.scalar("agreement_rate", rep.agreement_rate());
            r.scalar("inconclusive", rep.inconclusive as f64);
            for row in rep.rows.iter().filter(|row| !row.agree) {
                r.witnesses.push(serde_json::to_value(row)?);
            }
            r.check(
                "agreement",
                rep.agreement_rate() >= *min_agreement,
                format!("{} of {} rows agree ({} inconclusive), required rate {min_agreement}", rep.agreements, rep.rows.len(), rep.inconclusive),
            );
            r.table = Some(Table::from_csv(&rep.to_csv()));
        }
    }
    Ok(r)
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Sub => "sub",
        Mode::Super => "super",
    }
}

fn expect_check(r: &mut ExperimentResult, name: &str, got: f64, ex: Expect) {
    let dev = (got - ex.value).abs();
    r.check(name, dev <= ex.tol, format!("{got} vs {} (|diff| = {dev:e}, tol {:e})", ex.value, ex.tol));
}

/// Checks on a sequence of `(n, value)` pairs at the origin.
fn series_checks(r: &mut ExperimentResult, values: &[(usize, f64)], c: &HeatChecks) {
    if let Some(&(_, v)) = values.last() {
        r.scalar("finest_value", v);
    }
    if let Some(ex) = c.value {
        let bad: Vec<String> = values
            .iter()
            .filter(|(_, v)| (v - ex.value).abs() > ex.tol)
            .map(|(n, v)| format!("n={n}: {v}"))
            .collect();
        let detail = if bad.is_empty() { format!("every n within {:e} of {}", ex.tol, ex.value) } else { bad.join("; ") };
        r.check("value", bad.is_empty(), detail);
    }
    if c.increasing {
        let ok = values.windows(2).all(|w| w[1].1 > w[0].1);
        r.check("increasing", ok, "strictly increasing in n");
    }
    if let Some(b) = c.below {
        let ok = values.iter().all(|(_, v)| *v < b);
        r.check("below", ok, format!("every value below {b}"));
    }
    if let Some(gr) = &c.gap_ratio {
        let find = |n: usize| values.iter().find(|(m, _)| *m == n).map(|(_, v)| *v);
        match (find(gr.from), find(gr.to)) {
            (Some(a), Some(b)) => {
                let q = (gr.limit - a) / (gr.limit - b);
                r.scalar("gap_ratio", q);
                r.check("gap_ratio", (gr.range[0]..=gr.range[1]).contains(&q), format!("{q} in [{}, {}]", gr.range[0], gr.range[1]));
            }
            _ => r.check("gap_ratio", false, format!("n={} or n={} not in the sequence", gr.from, gr.to)),
        }
    }
}

/// Points from `spec`: the `include` indices first, then `count` walks with
/// lengths uniform in `[min_index, n)`.
pub fn make_points(spec: &PointsSpec, grid: &TimeGrid, seed: u64) -> Result<Vec<PathPoint>> {
    let n = grid.steps();
    if spec.min_index >= n {
        bail!("points.min_index {} leaves no step before the horizon", spec.min_index);
    }
    let s = grid.step().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walk = |index: usize| -> Result<PathPoint> {
        let mut vals = vec![0.0; index + 1];
        for i in 1..=index {
            vals[i] = vals[i - 1] + if rng.random::<bool>() { s } else { -s };
        }
        Ok(PathPoint::new(DiscretePath::scalar(grid.step(), &vals)?))
    };
    let mut out = Vec::with_capacity(spec.include.len() + spec.count);
    for &k in &spec.include {
        if k >= n {
            bail!("points.include: index {k} leaves no step before the horizon");
        }
        out.push(walk(k)?);
    }
    let mut idx = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for _ in 0..spec.count {
        let k = idx.random_range(spec.min_index..n);
        out.push(walk(k)?);
    }
    Ok(out)
}

fn build_process(p: &ProcessSpec, grid: &TimeGrid) -> Result<Arc<dyn AdaptedProcess>> {
    let xi = p.functional.build()?;
    let base: Arc<dyn AdaptedProcess> = if p.heat { Arc::new(HeatSolution::new(xi, *grid)) } else { Arc::new(xi) };
    Ok(if p.slope != 0.0 { Arc::new(TimeSlope::new(base, p.slope)) } else { base })
}

fn spec_name(f: &FunctionalSpec) -> String {
    serde_json::to_value(f)
        .ok()
        .and_then(|v| v.get("name").and_then(|n| n.as_str()).map(str::to_string))
        .unwrap_or_else(|| "functional".into())
}

/// Heat solutions of each functional and their `+- delta t` shifts.
fn equivalence_candidates(functionals: &[FunctionalSpec], deltas: &[f64], g: &TimeGrid) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (k, f) in functionals.iter().enumerate() {
        let name = format!("{k}:{}", spec_name(f));
        let u: Arc<dyn AdaptedProcess> = Arc::new(HeatSolution::new(f.build()?, *g));
        out.push(Candidate { name: name.clone(), process: u.clone() });
        for d in deltas {
            out.push(Candidate { name: format!("{name}+{d}t"), process: Arc::new(TimeSlope::new(u.clone(), *d)) });
            out.push(Candidate { name: format!("{name}-{d}t"), process: Arc::new(TimeSlope::new(u.clone(), -*d)) });
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn viscosity_points(
    r: &mut ExperimentResult,
    u: &dyn AdaptedProcess,
    gen: &Generator,
    g: &TimeGrid,
    pts: &[PathPoint],
    modes: &[Mode],
    settings: &CheckSettings,
    checks: &crate::config::VerdictChecks,
) -> Result<()> {
    let jobs: Vec<(usize, Mode)> = (0..pts.len()).flat_map(|k| modes.iter().map(move |m| (k, *m))).collect();
    let reports = jobs
        .par_iter()
        .map(|&(k, mode)| viscosity_check(u, gen, g, &pts[k], mode, settings).map(|rep| (k, rep)))
        .collect::<ppde_core::Result<Vec<_>>>()?;
    let mut t = Table::new(&["point", "index", "t", "mode", "verdict", "jets_tested", "jets_tangent", "borderline", "witnesses"]);
    let mut mismatches = [0usize; 2];
    for (k, rep) in &reports {
        let pt = &pts[*k];
        let verdict = serde_json::to_value(rep.verdict)?.as_str().unwrap_or_default().to_string();
        t.push(vec![
            k.to_string(),
            pt.index().to_string(),
            pt.time().to_string(),
            mode_name(rep.mode).into(),
            verdict,
            rep.jets_tested.to_string(),
            rep.jets_tangent.to_string(),
            rep.borderline.to_string(),
            rep.witnesses.len().to_string(),
        ]);
        for w in &rep.witnesses {
            r.witnesses.push(serde_json::to_value(w)?);
        }
        let (slot, want) = match rep.mode {
            Mode::Sub => (0, checks.sub),
            Mode::Super => (1, checks.sup),
        };
        if want.is_some_and(|v| v != rep.verdict) {
            mismatches[slot] += 1;
        }
    }
    for (slot, mode, want) in [(0, Mode::Sub, checks.sub), (1, Mode::Super, checks.sup)] {
        if let Some(v) = want {
            let v = serde_json::to_value(v)?;
            r.check(
                format!("{}_verdict", mode_name(mode)),
                mismatches[slot] == 0,
                format!("expected {} at {} points, {} mismatches", v.as_str().unwrap_or_default(), pts.len(), mismatches[slot]),
            );
        }
    }
    r.table = Some(t);
    Ok(())
}

/// Worst decomposition residual and worst `D^eps` deviation for one envelope.
fn certify_snell(
    tree: &ScenarioTree,
    obs: &ObstacleProcess,
    env: &ppde_core::stopping::SnellEnvelope,
    eps: &[f64],
) -> Result<(f64, f64)> {
    let dm = doob_meyer(env);
    let mut dec = dm.max_skorokhod(env).max(dm.max_path_residual(env)).max(dm.max_conditional_mean(env)?);
    let lin = linear_snell(tree, obs, &extremal_measure(env)?)?;
    for (l, id, y) in env.y.iter() {
        dec = dec.max((lin.get(l, id) - y).abs());
    }
    let tau = optimal_rule(env)?;
    dec = dec.max((stopped_ebar(env, &tau)?[0] - env.root()).abs());
    let mut worst: f64 = 0.0;
    for &e in eps {
        for t in 0..=env.depth() {
            let d = hitting_time_eps(env, t, e)?;
            for (id, v) in stopped_ebar(env, &d)?.iter().enumerate() {
                worst = worst.max((v - env.y.get(t, id)).abs());
            }
        }
    }
    Ok((dec, worst))
}

fn random_snell(r: &mut ExperimentResult, spec: &RandomObstacles, checks: &crate::config::SnellChecks, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Table::new(&["instance", "n", "bound", "root", "decomposition", "eps_deviation"]);
    let (mut dec_worst, mut eps_worst): (f64, f64) = (0.0, 0.0);
    for k in 0..spec.count {
        let n = 1 + k % spec.max_steps;
        let tree = ScenarioTree::new(&TimeGrid::new(1.0, n)?)?;
        let l = rng.random_range(0.0..spec.max_bound);
        let x = NodeValues::from_levels((0..=n).map(|lv| (0..1usize << lv).map(|_| rng.random_range(-2.0..2.0)).collect()).collect());
        let obs = ObstacleProcess::new(&tree, x)?;
        let env = snell(&tree, &obs, DriftBound::new(l)?)?;
        let (dec, eps) = certify_snell(&tree, &obs, &env, &checks.eps)?;
        dec_worst = dec_worst.max(dec);
        eps_worst = eps_worst.max(eps);
        t.push(vec![k.to_string(), n.to_string(), l.to_string(), env.root().to_string(), dec.to_string(), eps.to_string()]);
    }
    r.scalar("instances", spec.count as f64);
    r.scalar("max_decomposition_residual", dec_worst);
    r.scalar("max_eps_deviation", eps_worst);
    if let Some(tol) = checks.decomposition {
        r.check("decomposition", dec_worst <= tol, format!("max residual {dec_worst:e} over {} instances, tol {tol:e}", spec.count));
    }
    if !checks.eps.is_empty() {
        r.check("eps_conservation", eps_worst <= checks.eps_tol, format!("max deviation {eps_worst:e}, tol {:e}", checks.eps_tol));
    }
    if checks.value.is_some() {
        bail!("checks.value needs a fixed obstacle");
    }
    r.table = Some(t);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn certify(
    r: &mut ExperimentResult,
    op: &SchemeOperator,
    gen: &Generator,
    hs: &[f64],
    t0: f64,
    x: f64,
    trials: usize,
    checks: &crate::config::CertifyChecks,
    seed: u64,
) -> Result<()> {
    let jets = default_paraboloid_grid();
    let per_jet = jets
        .par_iter()
        .map(|phi| check_consistency(op, gen, phi, t0, x, hs))
        .collect::<ppde_core::Result<Vec<_>>>()?;
    let worst: Vec<f64> = (0..hs.len())
        .map(|i| per_jet.iter().map(|rows| rows[i].max_deviation).fold(0.0, f64::max))
        .collect();
    let mut t = Table::new(&["h", "max_deviation", "deviation_over_h", "ratio", "monotonicity_violations"]);
    let mut violations = 0;
    for (i, &h) in hs.iter().enumerate() {
        let ratio = (i > 0 && worst[i] > 0.0).then(|| worst[i - 1] / worst[i]);
        let v = if trials > 0 { check_monotonicity(op, h, trials, seed.wrapping_add(i as u64))?.violations } else { 0 };
        violations += v;
        t.push(vec![h.to_string(), worst[i].to_string(), (worst[i] / h).to_string(), cell(ratio), v.to_string()]);
    }
    let max_dev = worst.iter().copied().fold(0.0, f64::max);
    r.scalar("jets", jets.len() as f64);
    r.scalar("max_deviation", max_dev);
    if let Some(tol) = checks.max_deviation {
        r.check("max_deviation", max_dev <= tol, format!("{max_dev:e} over {} jets, tol {tol:e}", jets.len()));
    }
    if let Some(c) = checks.deviation_per_h {
        let q = hs.iter().zip(&worst).map(|(h, w)| w / h).fold(0.0, f64::max);
        r.check("deviation_per_h", q <= c, format!("max deviation/h = {q}, bound {c}"));
    }
    if let Some(m) = checks.min_ratio {
        let ratios: Vec<f64> = worst.windows(2).map(|w| w[0] / w[1]).collect();
        let ok = !ratios.is_empty() && ratios.iter().all(|q| *q >= m);
        r.check("min_ratio", ok, format!("ratios {ratios:?} >= {m}"));
    }
    if trials > 0 {
        r.check("monotonicity", violations == 0, format!("{violations} violations in {} trials", trials * hs.len()));
    }
    r.table = Some(t);
    Ok(())
}

/// A random pair `xi_lo <= xi_hi` of catalog functionals.
fn ordered_pair(rng: &mut ChaCha8Rng) -> (PathFunctional, PathFunctional) {
    let lo = PathFunctional::Affine {
        constant: rng.random_range(0.0..0.5),
        terms: vec![
            (rng.random_range(-1.0..1.0), PathFunctional::terminal()),
            (rng.random_range(-1.0..1.0), PathFunctional::running_max()),
        ],
    };
    let gap = PathFunctional::time_average().scaled(rng.random_range(-2.0..2.0)).positive_part();
    let hi = PathFunctional::Affine {
        constant: rng.random_range(0.0..0.1),
        terms: vec![(1.0, lo.clone()), (1.0, gap)],
    };
    (lo, hi)
}

fn compare(r: &mut ExperimentResult, driver: Option<&ppde_core::funcalc::Driver>, pairs: usize, g: &TimeGrid, tol: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pt = PathPoint::origin(g.step(), 1);
    let mut t = Table::new(&["pair", "verdict", "max_excess", "terminal_excess"]);
    let mut failures = 0;
    for k in 0..pairs {
        let (lo, hi) = ordered_pair(&mut rng);
        let (a, b) = match driver {
            None => (heat_nodes(&lo, g, &pt, Backend::Tree)?, heat_nodes(&hi, g, &pt, Backend::Tree)?),
            Some(d) => (solve_bsde(d, &lo, g, &pt, Backend::Tree)?.y, solve_bsde(d, &hi, g, &pt, Backend::Tree)?.y),
        };
        let rep = comparison_check(&a, &b, tol)?;
        if rep.verdict != ComparisonVerdict::Pass {
            failures += 1;
            r.witnesses.push(serde_json::json!({"pair": k, "report": rep}));
        }
        let v = serde_json::to_value(rep.verdict)?;
        t.push(vec![k.to_string(), v.as_str().unwrap_or_default().into(), rep.max_excess.to_string(), rep.terminal_excess.to_string()]);
    }
    r.check("ordering", failures == 0, format!("{failures} of {pairs} pairs out of order beyond {tol:e}"));
    r.table = Some(t);
    Ok(())
}
