use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::funcalc::generator::Generator;
use crate::funcalc::process::{AdaptedProcess, SmoothProcess};
use crate::pathspace::DiscretePath;

/// `-d_t u - G(t, omega, u, d_omega u, d2_omega u)` at the end of `prefix`.
///
/// `<= 0` marks a classical subsolution point, `>= 0` a supersolution point.
pub fn classical_residual(u: &SmoothProcess, g: &Generator, prefix: &DiscretePath) -> f64 {
    -u.time_derivative(prefix)
        - g.eval(
            prefix.end_time(),
            prefix,
            u.eval(prefix),
            &u.gradient(prefix),
            &u.hessian(prefix),
        )
}

/// Bump estimates of the path derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derivatives {
    /// `None` at the horizon.
    pub time: Option<f64>,
    pub gradient: Vec<f64>,
    /// Row-major, symmetric by construction.
    pub hessian: Vec<f64>,
    pub bump: f64,
}

/// Default vertical bump `1e-4 max(1, |omega_t|)`.
pub fn default_bump(prefix: &DiscretePath) -> f64 {
    let x = prefix.last().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-4 * x.max(1.0)
}

/// Horizontal derivative: the path held flat for one step.
pub fn time_derivative(u: &dyn AdaptedProcess, prefix: &DiscretePath, horizon: f64) -> Result<f64> {
    if prefix.end_time() >= horizon - 1e-9 * horizon.max(1.0) {
        return Err(invalid(format!(
            "time derivative needs a point before the horizon {horizon}, got t = {}",
            prefix.end_time()
        )));
    }
    Ok((u.value(&prefix.extend_flat(1))? - u.value(prefix)?) / prefix.step())
}

/// Vertical derivatives: central differences bumping the last path value.
pub fn vertical_derivatives(
    u: &dyn AdaptedProcess,
    prefix: &DiscretePath,
    bump: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(bump > 0.0 && bump.is_finite()) {
        return Err(invalid(format!("bump must be positive, got {bump}")));
    }
    let d = prefix.dim();
    let at = |bumps: &[(usize, f64)]| -> Result<f64> {
        let mut p = prefix.clone();
        for (c, b) in bumps {
            p = p.bump_last(*c, *b);
        }
        u.value(&p)
    };
    let u0 = u.value(prefix)?;
    let e = bump;
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    for i in 0..d {
        let (up, dn) = (at(&[(i, e)])?, at(&[(i, -e)])?);
        grad[i] = (up - dn) / (2.0 * e);
        hess[i * d + i] = (up - 2.0 * u0 + dn) / (e * e);
        for j in 0..i {
            let v = (at(&[(i, e), (j, e)])? - at(&[(i, e), (j, -e)])? - at(&[(i, -e), (j, e)])?
                + at(&[(i, -e), (j, -e)])?)
                / (4.0 * e * e);
            hess[i * d + j] = v;
            hess[j * d + i] = v;
        }
    }
    Ok((grad, hess))
}

/// Time, gradient and Hessian estimates; the time derivative is omitted
/// at the horizon.
pub fn discrete_derivatives(
    u: &dyn AdaptedProcess,
    prefix: &DiscretePath,
    horizon: f64,
    bump: Option<f64>,
) -> Result<Derivatives> {
    let bump = bump.unwrap_or_else(|| default_bump(prefix));
    let (gradient, hessian) = vertical_derivatives(u, prefix, bump)?;
    let time = time_derivative(u, prefix, horizon).ok();
    Ok(Derivatives {
        time,
        gradient,
        hessian,
        bump,
    })
}

/// Per-step residual of the Itô expansion of `u` along `path`.
///
/// `r_i = u_{i+1} - u_i - (d_t u + 1/2 tr d2 u) h - d_omega u . dB_i`, with
/// derivatives taken at the left endpoint.
pub fn ito_residual(u: &SmoothProcess, path: &DiscretePath) -> Vec<f64> {
    let d = path.dim();
    let h = path.step();
    (0..path.steps())
        .map(|i| {
            let (p0, p1) = (path.prefix(i), path.prefix(i + 1));
            let grad = u.gradient(&p0);
            let hess = u.hessian(&p0);
            let tr: f64 = (0..d).map(|c| hess[c * d + c]).sum();
            let mart: f64 = (0..d).map(|c| grad[c] * (path.at(i + 1, c) - path.at(i, c))).sum();
            u.eval(&p1) - u.eval(&p0) - (u.time_derivative(&p0) + 0.5 * tr) * h - mart
        })
        .collect()
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcalc::process::Paraboloid;
    use crate::measures::sample_path;
    use crate::pathspace::{PathFunctional, PathPoint, TimeGrid};

    fn square_minus_t() -> SmoothProcess {
        SmoothProcess::new(
            |p| p.last()[0].powi(2) - p.end_time(),
            |_| -1.0,
            |p| vec![2.0 * p.last()[0]],
            |_| vec![2.0],
        )
    }

    #[test]
    fn residual_examples() {
        let p = DiscretePath::scalar(0.5, &[0.0, 0.7]).unwrap();
        let phi = Paraboloid::scalar(-1.0, 0.3, 2.0);
        let u = phi.as_process(&PathPoint::origin(0.5, 1));
        assert_eq!(classical_residual(&u, &Generator::Heat, &p), 0.0);
        let t = SmoothProcess::new(|p| p.end_time(), |_| 1.0, |_| vec![0.0], |_| vec![0.0]);
        let zero = Generator::custom("zero", 0.0, |_, _, _, _, _| 0.0);
        assert_eq!(classical_residual(&t, &zero, &p), -1.0);
        assert_eq!(classical_residual(&square_minus_t(), &Generator::Heat, &p), 0.0);
    }

    #[test]
    fn bumps_on_smooth_functions() {
        let p = DiscretePath::scalar(0.25, &[0.0, 0.5, 1.0]).unwrap();
        let lin = |q: &DiscretePath| Ok(1.5 * q.last()[0]);
        let d = discrete_derivatives(&lin, &p, 1.0, None).unwrap();
        assert!((d.gradient[0] - 1.5).abs() < 1e-10);
        let sq = |q: &DiscretePath| Ok(q.last()[0].powi(2));
        let d = discrete_derivatives(&sq, &p, 1.0, Some(1e-4)).unwrap();
        assert!((d.gradient[0] - 2.0).abs() < 1e-7);
        assert!((d.hessian[0] - 2.0).abs() < 1e-4);
        assert_eq!(d.time, Some(0.0));
        let at_end = DiscretePath::scalar(0.25, &[0.0; 5]).unwrap();
        assert!(discrete_derivatives(&sq, &at_end, 1.0, None).unwrap().time.is_none());
        assert!(time_derivative(&sq, &at_end, 1.0).is_err());
    }

    #[test]
    fn paraboloid_jets_recovered() {
        let phi = Paraboloid::new(0.4, vec![1.0, -0.5], vec![2.0, 0.3, 0.3, -1.0]).unwrap();
        let anchor = PathPoint::origin(0.125, 2);
        let u = phi.as_process(&anchor);
        let p = DiscretePath::from_rows(0.125, 2, vec![0.0, 0.0, 0.3, -0.2, 0.6, 0.1]).unwrap();
        let d = discrete_derivatives(&u, &p, 1.0, None).unwrap();
        let exact = u.gradient(&p);
        for i in 0..2 {
            assert!((d.gradient[i] - exact[i]).abs() < 1e-9);
        }
        for (a, b) in d.hessian.iter().zip(phi.gamma()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!((d.time.unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn vertical_gradient_of_stopped_value_jumps() {
        let u = PathFunctional::fixed_time(0.5);
        let h = 0.125;
        let before = DiscretePath::scalar(h, &[0.0, 0.1, 0.2]).unwrap();
        let after = DiscretePath::scalar(h, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let g_before = discrete_derivatives(&u, &before, 1.0, None).unwrap().gradient[0];
        let g_after = discrete_derivatives(&u, &after, 1.0, None).unwrap().gradient[0];
        assert!((g_before - 1.0).abs() < 1e-9);
        assert_eq!(g_after, 0.0);
        let at_kink = DiscretePath::scalar(h, &[0.0, 0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((discrete_derivatives(&u, &at_kink, 1.0, None).unwrap().gradient[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ito_residuals() {
        let g = TimeGrid::new(1.0, 64).unwrap();
        let path = sample_path(&g, 1, 7, 0);
        let lin = Paraboloid::scalar(0.0, 2.0, 0.0).as_process(&PathPoint::origin(g.step(), 1));
        assert!(ito_residual(&lin, &path).iter().all(|r| r.abs() < 1e-12));
        let quad = Paraboloid::scalar(0.3, 1.0, 2.0).as_process(&PathPoint::origin(g.step(), 1));
        for (i, r) in ito_residual(&quad, &path).iter().enumerate() {
            let db = path.at(i + 1, 0) - path.at(i, 0);
            assert!((r - (db * db - g.step())).abs() < 1e-12);
        }
        // RMS of h-scaled chi-square noise halves (times sqrt 2 per step count) under refinement.
        let mut prev = f64::INFINITY;
        for n in [64, 256, 1024] {
            let g = TimeGrid::new(1.0, n).unwrap();
            let r = rms(&ito_residual(&quad, &sample_path(&g, 1, 11, 0)));
            assert!(r <= 3.0 * g.step());
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn ito_residual_flags_the_stopped_value() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        // Vertical derivative as the bump sees it: 1 up to and including T/2.
        let u = SmoothProcess::new(
            |p| PathFunctional::fixed_time(0.5).eval(p).unwrap(),
            |_| 0.0,
            |p| vec![if p.end_time() <= 0.5 { 1.0 } else { 0.0 }],
            |_| vec![0.0],
        );
        let path = sample_path(&g, 1, 3, 0);
        let r = ito_residual(&u, &path);
        let nonzero: Vec<usize> = (0..8).filter(|i| r[*i].abs() > 1e-15).collect();
        assert_eq!(nonzero, vec![4]);
    }
}
