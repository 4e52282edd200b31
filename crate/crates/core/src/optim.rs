//! Box-constrained quasi-Newton minimization (projected L-BFGS).
//!
//! Bound-active coordinates are frozen for the step, the remaining ones follow
//! the two-loop L-BFGS direction, and an Armijo backtracking search runs along
//! the projected path. Objective failures inside the line search count as
//! `+inf` and shrink the step.

use std::collections::VecDeque;

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the projected gradient's largest entry falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the relative decrease of `f` falls below this.
    pub value_tolerance: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 8,
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(lo, hi);
    }
}

/// Gradient with components that point out of the box at an active bound
/// zeroed.
fn projected_gradient(x: &[f64], g: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), &(lo, hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box. `f` returns the value and gradient; it must
/// succeed at the projected starting point.
pub fn minimize_box<F>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    cfg: &LbfgsConfig,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if x0.len() != bounds.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, {} bounds",
            x0.len(),
            bounds.len()
        )));
    }
    if bounds.iter().any(|&(lo, hi)| !(lo <= hi)) {
        return Err(Error::InvalidParameter("empty bound interval".into()));
    }
    let mut x = x0.to_vec();
    project(&mut x, bounds);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return Err(Error::Fit("objective is not finite at the starting point".into()));
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        let pg = projected_gradient(&x, &g, bounds);
        if pg.iter().fold(0.0f64, |m, v| m.max(v.abs())) < cfg.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, gi)| *p != 0.0 || *gi == 0.0).collect();
        let mut d = two_loop(&pg, &memory);
        for (di, &fr) in d.iter_mut().zip(&free) {
            if !fr {
                *di = 0.0;
            }
        }
        if dot(&d, &pg) >= 0.0 {
            memory.clear();
            d = pg.iter().map(|v| -v).collect();
        }
        let mut t = if memory.is_empty() {
            (1.0 / d.iter().map(|v| v * v).sum::<f64>().sqrt()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut xn, bounds);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            if let Ok((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ <= fx + 1e-4 * decrease {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            // no progress possible along the projected path
            converged = memory.is_empty();
            if !memory.is_empty() {
                memory.clear();
                continue;
            }
            break;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let rel = (fx - fn_) / fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if rel < cfg.value_tolerance {
            converged = true;
            break;
        }
    }
    Ok(Minimum { x, value: fx, iterations, converged })
}

/// `-H g` with `H` the L-BFGS inverse Hessian approximation.
fn two_loop(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    #[test]
    fn rosenbrock_inside_box() {
        let cfg = LbfgsConfig { max_iterations: 500, ..Default::default() };
        let r = minimize_box(rosenbrock, &[-1.2, 1.0], &[(-5.0, 5.0), (-5.0, 5.0)], &cfg).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn active_bound_is_respected() {
        // minimum of (x-3)^2 + (y+1)^2 over [0,2] x [0,2] is (2, 0)
        let f = |x: &[f64]| Ok(((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]));
        let r = minimize_box(f, &[1.0, 1.0], &[(0.0, 2.0), (0.0, 2.0)], &LbfgsConfig::default()).unwrap();
        assert_eq!(r.x, vec![2.0, 0.0]);
        assert!(r.converged);
    }

    #[test]
    fn start_outside_box_is_projected() {
        let f = |x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]]));
        let r = minimize_box(f, &[10.0], &[(1.0, 3.0)], &LbfgsConfig::default()).unwrap();
        assert_eq!(r.x, vec![1.0]);
    }

    #[test]
    fn failing_region_is_avoided() {
        // objective undefined beyond x = 0.5; minimum of (x-1)^2 restricted there
        let f = |x: &[f64]| {
            if x[0] > 0.5 {
                Err(Error::Fit("outside domain".into()))
            } else {
                Ok(((x[0] - 1.0).powi(2), vec![2.0 * (x[0] - 1.0)]))
            }
        };
        let r = minimize_box(f, &[0.0], &[(-2.0, 2.0)], &LbfgsConfig::default()).unwrap();
        assert!(r.x[0] <= 0.5 && r.x[0] > 0.4);
        assert!(r.value <= 1.0);
    }

    #[test]
    fn never_worse_than_start() {
        let cfg = LbfgsConfig { max_iterations: 3, ..Default::default() };
        let start = [-1.2, 1.0];
        let f0 = rosenbrock(&start).unwrap().0;
        let r = minimize_box(rosenbrock, &start, &[(-5.0, 5.0), (-5.0, 5.0)], &cfg).unwrap();
        assert!(r.value <= f0);
    }
}
