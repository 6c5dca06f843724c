use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::{
    ebar_step, step_probabilities, Carrier, DriftBound, DriftControl, NodeValues, ScenarioTree,
};
use crate::pathspace::{DiscretePath, PathFunctional};
use crate::stopping::time::StoppingTime;

/// Adapted obstacle `X` on every node of a scenario tree.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleProcess {
    values: NodeValues,
}

impl ObstacleProcess {
    pub fn new(tree: &ScenarioTree, values: NodeValues) -> Result<Self> {
        if values.num_levels() != tree.depth() + 1 {
            return Err(invalid(format!(
                "obstacle has {} levels, tree needs {}",
                values.num_levels(),
                tree.depth() + 1
            )));
        }
        for l in 0..=tree.depth() {
            if values.level(l).len() != tree.width(l) {
                return Err(invalid(format!("obstacle level {l} has the wrong width")));
            }
        }
        if let Some((level, node, _)) = values.iter().find(|(_, _, v)| v.is_nan()) {
            return Err(Error::NonFinite { level, node });
        }
        Ok(Self { values })
    }

    /// `xi` evaluated on each node's prefix.
    pub fn from_functional(tree: &ScenarioTree, xi: &PathFunctional) -> Result<Self> {
        Self::new(tree, tree.functional_values(xi)?)
    }

    pub fn from_fn(
        tree: &ScenarioTree,
        f: impl Fn(&DiscretePath) -> Result<f64> + Sync,
    ) -> Result<Self> {
        Self::new(tree, tree.process_values(f)?)
    }

    pub fn values(&self) -> &NodeValues {
        &self.values
    }

    pub fn get(&self, level: usize, node: usize) -> f64 {
        self.values.get(level, node)
    }
}

/// Snell envelope of an obstacle under the upper expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnellEnvelope {
    pub bound: DriftBound,
    pub step: f64,
    pub obstacle: NodeValues,
    pub y: NodeValues,
    /// One-step upper expectation of `Y` (`X` itself at leaves and absorbed nodes).
    pub continuation: NodeValues,
    /// `Y - S`, zero at leaves.
    pub dk: NodeValues,
    /// Maximizing drift at interior nodes.
    pub lambda_star: NodeValues,
    /// Nodes where the process was frozen (localized problems only).
    pub absorbed: Option<Vec<Vec<bool>>>,
}

/// `Y = max(X, Ebar-step(Y children))` backward from `Y = X` at the leaves.
pub fn snell(tree: &ScenarioTree, obstacle: &ObstacleProcess, bound: DriftBound) -> Result<SnellEnvelope> {
    snell_impl(tree, obstacle, bound, None)
}

/// Snell envelope of `X` stopped at the first node flagged in `absorbing`.
///
/// At a flagged node the recursion returns `X` regardless of the subtree.
pub fn snell_absorbed(
    tree: &ScenarioTree,
    obstacle: &ObstacleProcess,
    bound: DriftBound,
    absorbing: Vec<Vec<bool>>,
) -> Result<SnellEnvelope> {
    if absorbing.len() != tree.depth() + 1
        || absorbing.iter().enumerate().any(|(l, row)| row.len() != tree.width(l))
    {
        return Err(invalid("absorbing mask does not match the tree"));
    }
    snell_impl(tree, obstacle, bound, Some(absorbing))
}

fn snell_impl(
    tree: &ScenarioTree,
    obstacle: &ObstacleProcess,
    bound: DriftBound,
    absorbed: Option<Vec<Vec<bool>>>,
) -> Result<SnellEnvelope> {
    bound.check(tree.step())?;
    let n = tree.depth();
    let (lb, s) = (bound.value(), tree.sqrt_step());
    let x = obstacle.values();
    let frozen = |l: usize, id: usize| absorbed.as_ref().is_some_and(|m| m[l][id]);

    let mut y: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut cont = vec![Vec::new(); n + 1];
    let mut dk = vec![Vec::new(); n + 1];
    let mut lam = vec![Vec::new(); n];
    y[n] = x.level(n).to_vec();
    cont[n] = y[n].clone();
    dk[n] = vec![0.0; tree.width(n)];
    for l in (0..n).rev() {
        let w = tree.width(l);
        let (mut yl, mut cl, mut kl, mut ll) = (
            Vec::with_capacity(w),
            Vec::with_capacity(w),
            Vec::with_capacity(w),
            Vec::with_capacity(w),
        );
        for id in 0..w {
            let xv = x.get(l, id);
            if frozen(l, id) {
                yl.push(xv);
                cl.push(xv);
                kl.push(0.0);
                ll.push(0.0);
                continue;
            }
            let (u, d) = tree.children(l, id);
            let (sv, lambda) = ebar_step(y[l + 1][u], y[l + 1][d], lb, s);
            if sv.is_nan() {
                return Err(Error::NonFinite { level: l, node: id });
            }
            let yv = if xv >= sv { xv } else { sv };
            yl.push(yv);
            cl.push(sv);
            kl.push(yv - sv);
            ll.push(lambda);
        }
        y[l] = yl;
        cont[l] = cl;
        dk[l] = kl;
        lam[l] = ll;
    }
    Ok(SnellEnvelope {
        bound,
        step: tree.step(),
        obstacle: x.clone(),
        y: NodeValues::from_levels(y),
        continuation: NodeValues::from_levels(cont),
        dk: NodeValues::from_levels(dk),
        lambda_star: NodeValues::from_levels(lam),
        absorbed,
    })
}

impl SnellEnvelope {
    pub fn depth(&self) -> usize {
        self.y.num_levels() - 1
    }

    pub fn root(&self) -> f64 {
        self.y.root()
    }

    fn is_absorbed(&self, l: usize, id: usize) -> bool {
        self.absorbed.as_ref().is_some_and(|m| m[l][id])
    }

    /// `Y == X` at the node (exact comparison; `Y` is literally `max(X, S)`).
    pub fn is_stop(&self, l: usize, id: usize) -> bool {
        self.y.get(l, id) == self.obstacle.get(l, id)
    }

    /// CSV with header `level,node_id,X,Y,S,dK,lambda_star,is_stop`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,node_id,X,Y,S,dK,lambda_star,is_stop\n");
        let n = self.depth();
        for (l, id, yv) in self.y.iter() {
            let lam = if l < n {
                self.lambda_star.get(l, id).to_string()
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{l},{id},{},{yv},{},{},{lam},{}",
                self.obstacle.get(l, id),
                self.continuation.get(l, id),
                self.dk.get(l, id),
                u8::from(self.is_stop(l, id))
            );
        }
        out
    }
}

/// `tau* = inf{t : Y_t = X_t}`.
pub fn optimal_rule(env: &SnellEnvelope) -> Result<StoppingTime> {
    StoppingTime::first_hit(env.depth(), 0, |l, id| env.is_stop(l, id) || env.is_absorbed(l, id))
}

/// `D^eps_t = inf{s >= t : Y_s <= X_s + eps}`.
pub fn hitting_time_eps(env: &SnellEnvelope, start: usize, eps: f64) -> Result<StoppingTime> {
    if !(eps >= 0.0) {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    if start > env.depth() {
        return Err(invalid(format!("start level {start} beyond depth {}", env.depth())));
    }
    StoppingTime::first_hit(env.depth(), start, |l, id| {
        env.y.get(l, id) <= env.obstacle.get(l, id) + eps || env.is_absorbed(l, id)
    })
}

/// The recorded maximizing drift as a control.
pub fn extremal_measure(env: &SnellEnvelope) -> Result<DriftControl> {
    DriftControl::new(env.bound, env.lambda_star.clone())
}

/// Linear Snell envelope `Y = max(X, E^{P_lambda}[Y_next])` under a fixed control.
pub fn linear_snell(
    tree: &ScenarioTree,
    obstacle: &ObstacleProcess,
    control: &DriftControl,
) -> Result<NodeValues> {
    control.bound().check(tree.step())?;
    let n = tree.depth();
    let s = tree.sqrt_step();
    let x = obstacle.values();
    let mut y = vec![Vec::new(); n + 1];
    y[n] = x.level(n).to_vec();
    for l in (0..n).rev() {
        y[l] = (0..tree.width(l))
            .map(|id| {
                let (u, d) = tree.children(l, id);
                let pu = 0.5 * (1.0 + control.get(l, id) * s);
                let c = pu * y[l + 1][u] + (1.0 - pu) * y[l + 1][d];
                x.get(l, id).max(c)
            })
            .collect();
    }
    Ok(NodeValues::from_levels(y))
}

/// The upper-expectation recursion of `Y` stopped at `tau`, evaluated at
/// `tau.start()`; equals `Y` there when `tau` precedes any push of `K`.
pub fn stopped_ebar(env: &SnellEnvelope, tau: &StoppingTime) -> Result<Vec<f64>> {
    if tau.depth() != env.depth() {
        return Err(invalid("stopping time and envelope depths differ"));
    }
    let s = env.step.sqrt();
    let lb = env.bound.value();
    let mask = tau.stop_mask();
    let n = env.depth();
    let start = tau.start();
    let mut v = env.y.level(n).to_vec();
    for l in (start..n).rev() {
        v = (0..1usize << l)
            .map(|id| {
                if mask[l][id] {
                    env.y.get(l, id)
                } else {
                    ebar_step(v[2 * id + 1], v[2 * id], lb, s).0
                }
            })
            .collect();
    }
    Ok(v)
}

/// Discrete Doob-Meyer decomposition of a Snell envelope.
///
/// For each interior node, `Y_child - Y = dM_child - dK` with
/// `dM_child = Y_child - S`. Also `dM = H dB - L |H| h` with
/// `H = (Y_up - Y_down) / (2 sqrt(h))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoobMeyer {
    pub integrand: NodeValues,
    pub dm_up: NodeValues,
    pub dm_down: NodeValues,
    pub dk: NodeValues,
}

pub fn doob_meyer(env: &SnellEnvelope) -> DoobMeyer {
    let n = env.depth();
    let s = env.step.sqrt();
    let mut h = Vec::with_capacity(n);
    let mut up = Vec::with_capacity(n);
    let mut down = Vec::with_capacity(n);
    for l in 0..n {
        let w = 1usize << l;
        let (mut hl, mut ul, mut dl) = (vec![0.0; w], vec![0.0; w], vec![0.0; w]);
        for id in 0..w {
            if env.is_absorbed(l, id) {
                continue;
            }
            let (yu, yd) = (env.y.get(l + 1, 2 * id + 1), env.y.get(l + 1, 2 * id));
            let sv = env.continuation.get(l, id);
            hl[id] = (yu - yd) / (2.0 * s);
            ul[id] = yu - sv;
            dl[id] = yd - sv;
        }
        h.push(hl);
        up.push(ul);
        down.push(dl);
    }
    DoobMeyer {
        integrand: NodeValues::from_levels(h),
        dm_up: NodeValues::from_levels(up),
        dm_down: NodeValues::from_levels(down),
        dk: env.dk.clone(),
    }
}

impl DoobMeyer {
    /// Largest `|E^{P_lambda*}[dM | node]|` over interior nodes.
    pub fn max_conditional_mean(&self, env: &SnellEnvelope) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for l in 0..self.integrand.num_levels() {
            for id in 0..1usize << l {
                let (pu, pd) = step_probabilities(env.lambda_star.get(l, id), env.step)?;
                let m = pu * self.dm_up.get(l, id) + pd * self.dm_down.get(l, id);
                worst = worst.max(m.abs());
            }
        }
        Ok(worst)
    }

    /// Largest gap between `dM` and `H dB - L|H|h` over interior nodes.
    pub fn max_integrand_residual(&self, env: &SnellEnvelope) -> f64 {
        let s = env.step.sqrt();
        let lb = env.bound.value();
        let mut worst: f64 = 0.0;
        for (l, id, hv) in self.integrand.iter() {
            if env.is_absorbed(l, id) {
                continue;
            }
            let drift = lb * hv.abs() * env.step;
            worst = worst
                .max((self.dm_up.get(l, id) - (hv * s - drift)).abs())
                .max((self.dm_down.get(l, id) - (-hv * s - drift)).abs());
        }
        worst
    }

    /// Largest `|Y_leaf - Y_0 - (sum dM - sum dK)|` over paths.
    pub fn max_path_residual(&self, env: &SnellEnvelope) -> f64 {
        let n = env.depth();
        let mut worst: f64 = 0.0;
        for leaf in 0..1usize << n {
            let mut acc = env.y.root();
            for l in 0..n {
                let id = ScenarioTree::ancestor(n, leaf, l);
                let upward = (leaf >> (n - 1 - l)) & 1 == 1;
                let dm = if upward {
                    self.dm_up.get(l, id)
                } else {
                    self.dm_down.get(l, id)
                };
                acc += dm - self.dk.get(l, id);
            }
            worst = worst.max((acc - env.y.get(n, leaf)).abs());
        }
        worst
    }

    /// Largest `|sum_path (Y - X) dK|` over paths.
    pub fn max_skorokhod(&self, env: &SnellEnvelope) -> f64 {
        let n = env.depth();
        let mut worst: f64 = 0.0;
        for leaf in 0..1usize << n {
            let mut acc = 0.0;
            for l in 0..=n {
                let id = ScenarioTree::ancestor(n, leaf, l);
                let k = self.dk.get(l, id);
                if k != 0.0 {
                    acc += (env.y.get(l, id) - env.obstacle.get(l, id)) * k;
                }
            }
            worst = worst.max(acc.abs());
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::linear_expectation;
    use crate::pathspace::TimeGrid;
    use crate::stopping::time::{enumerate_stopping_times, stopped_expectation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tree(n: usize, t: f64) -> ScenarioTree {
        ScenarioTree::new(&TimeGrid::new(t, n).unwrap()).unwrap()
    }

    fn random_obstacle(t: &ScenarioTree, seed: u64) -> ObstacleProcess {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = (0..=t.depth())
            .map(|l| (0..t.width(l)).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        ObstacleProcess::new(t, NodeValues::from_levels(levels)).unwrap()
    }

    #[test]
    fn constant_obstacle() {
        let t = tree(4, 1.0);
        let x = ObstacleProcess::from_fn(&t, |_| Ok(2.5)).unwrap();
        let env = snell(&t, &x, DriftBound::new(1.0).unwrap()).unwrap();
        assert!(env.y.iter().all(|(_, _, v)| v == 2.5));
        assert!(env.dk.iter().all(|(_, _, v)| v == 0.0));
        assert!(optimal_rule(&env).unwrap().leaf_levels().iter().all(|l| *l == 0));
    }

    #[test]
    fn one_step_examples() {
        let t = tree(1, 1.0);
        let x = ObstacleProcess::from_fn(&t, |p| Ok(-p.last()[0])).unwrap();
        let env0 = snell(&t, &x, DriftBound::zero()).unwrap();
        assert_eq!(env0.root(), 0.0);
        let env1 = snell(&t, &x, DriftBound::new(1.0).unwrap()).unwrap();
        assert_eq!(env1.root(), 1.0);
        assert_eq!(env1.lambda_star.get(0, 0), -1.0);
    }

    #[test]
    fn decreasing_obstacle_stops_immediately() {
        let t = tree(5, 1.0);
        let x = ObstacleProcess::from_fn(&t, |p| Ok(-(p.steps() as f64))).unwrap();
        let env = snell(&t, &x, DriftBound::new(1.0).unwrap()).unwrap();
        assert!(optimal_rule(&env).unwrap().leaf_levels().iter().all(|l| *l == 0));
    }

    #[test]
    fn dp_matches_enumeration_without_drift() {
        let t = tree(4, 1.0);
        let zero = DriftControl::zero(&t);
        for seed in 0..5 {
            let x = random_obstacle(&t, seed);
            let env = snell(&t, &x, DriftBound::zero()).unwrap();
            let tau = optimal_rule(&env).unwrap();
            let at_tau = stopped_expectation(&t, x.values(), &tau, &zero).unwrap().root();
            assert!((at_tau - env.root()).abs() < 1e-12);
            let best = enumerate_stopping_times(4)
                .unwrap()
                .iter()
                .map(|s| stopped_expectation(&t, x.values(), s, &zero).unwrap().root())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - env.root()).abs() < 1e-12);
        }
    }

    #[test]
    fn decomposition_identities() {
        let t = tree(6, 1.0);
        for seed in 0..10 {
            let x = random_obstacle(&t, 100 + seed);
            let env = snell(&t, &x, DriftBound::new(1.5).unwrap()).unwrap();
            let dm = doob_meyer(&env);
            assert!(dm.max_conditional_mean(&env).unwrap() < 1e-12);
            assert!(dm.max_integrand_residual(&env) < 1e-12);
            assert!(dm.max_path_residual(&env) < 1e-12);
            assert_eq!(dm.max_skorokhod(&env), 0.0);
            assert!(env.dk.iter().all(|(_, _, k)| k >= 0.0));
        }
    }

    #[test]
    fn terminal_only_payoff_is_a_martingale() {
        let t = tree(5, 1.0);
        let x = ObstacleProcess::from_fn(&t, |p| {
            Ok(if p.steps() == 5 { p.last()[0].powi(2) } else { f64::MIN })
        })
        .unwrap();
        let env = snell(&t, &x, DriftBound::zero()).unwrap();
        assert!(env.dk.iter().all(|(_, _, k)| k == 0.0));
        let lin = linear_expectation(&t, x.values().level(5).to_vec(), &DriftControl::zero(&t)).unwrap();
        assert_eq!(lin, env.y);
        assert_eq!(doob_meyer(&env).max_skorokhod(&env), 0.0);
    }

    #[test]
    fn eps_hitting_time_conserves() {
        let t = tree(8, 1.0);
        for seed in 0..5 {
            let x = random_obstacle(&t, 200 + seed);
            let env = snell(&t, &x, DriftBound::new(1.0).unwrap()).unwrap();
            for start in [0, 3] {
                let d = hitting_time_eps(&env, start, 0.1).unwrap();
                assert!(d.is_adapted());
                let v = stopped_ebar(&env, &d).unwrap();
                for (id, val) in v.iter().enumerate() {
                    assert!((val - env.y.get(start, id)).abs() < 1e-12);
                }
            }
            let big = hitting_time_eps(&env, 2, 1e9).unwrap();
            assert!(big.leaf_levels().iter().all(|l| *l == 2));
            assert_eq!(hitting_time_eps(&env, 0, 0.0).unwrap(), optimal_rule(&env).unwrap());
        }
    }

    #[test]
    fn extremal_measure_reproduces_envelope() {
        let t = tree(8, 1.0);
        for seed in 0..5 {
            let x = random_obstacle(&t, 300 + seed);
            let env = snell(&t, &x, DriftBound::new(2.0).unwrap()).unwrap();
            let ctl = extremal_measure(&env).unwrap();
            let lin = linear_snell(&t, &x, &ctl).unwrap();
            for (l, id, v) in lin.iter() {
                assert!((v - env.y.get(l, id)).abs() < 1e-12);
            }
            let tau = optimal_rule(&env).unwrap();
            let at = stopped_expectation(&t, x.values(), &tau, &ctl).unwrap().root();
            assert!((at - env.root()).abs() < 1e-12);
        }
        let zero = snell(&t, &random_obstacle(&t, 9), DriftBound::zero()).unwrap();
        assert!(extremal_measure(&zero).unwrap().values().iter().all(|(_, _, v)| v == 0.0));
    }

    #[test]
    fn down_favoring_obstacle_has_negative_drift() {
        let t = tree(6, 1.0);
        let x = ObstacleProcess::from_fn(&t, |p| Ok(-p.last()[0])).unwrap();
        let env = snell(&t, &x, DriftBound::new(1.0).unwrap()).unwrap();
        for (l, id, lam) in env.lambda_star.iter() {
            if env.dk.get(l, id) == 0.0 && env.y.get(l + 1, 2 * id + 1) != env.y.get(l + 1, 2 * id) {
                assert_eq!(lam, -1.0);
            }
        }
    }

    #[test]
    fn absorbed_nodes_freeze_the_obstacle() {
        let t = tree(3, 1.0);
        let x = ObstacleProcess::from_fn(&t, |p| Ok(p.last()[0])).unwrap();
        let mut mask: Vec<Vec<bool>> = (0..=3).map(|l| vec![false; 1 << l]).collect();
        mask[1] = vec![true, true];
        let env = snell_absorbed(&t, &x, DriftBound::new(1.0).unwrap(), mask).unwrap();
        let s = t.sqrt_step();
        let expect = 0.5 * (s - s) + 0.5 * s * (2.0 * s);
        assert!((env.root() - expect).abs() < 1e-15);
        assert!(snell_absorbed(&t, &x, DriftBound::zero(), vec![vec![false]]).is_err());
    }

    #[test]
    fn csv_layout() {
        let t = tree(1, 1.0);
        let x = ObstacleProcess::from_fn(&t, |p| Ok(-p.last()[0])).unwrap();
        let env = snell(&t, &x, DriftBound::new(1.0).unwrap()).unwrap();
        let csv = env.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "level,node_id,X,Y,S,dK,lambda_star,is_stop");
        assert_eq!(lines[1], "0,0,-0,1,1,0,-1,0");
        assert_eq!(lines.len(), 4);
    }
}
