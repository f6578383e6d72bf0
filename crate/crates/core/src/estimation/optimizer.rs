//! Dense BFGS minimiser with Armijo backtracking and optional simple bounds.
//!
//! With bounds, the iterate is projected onto the box after every step and
//! coordinates pinned at a bound with an outward gradient are frozen for the
//! iteration (a plain active-set scheme). Accepted steps never increase the
//! objective.

use serde::{Deserialize, Serialize};

use crate::error::{OmmError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    /// Euclidean norm of the (projected) gradient of the minimised objective at exit.
    pub gradient_norm: f64,
    pub converged: bool,
    pub message: String,
    /// Objective after each accepted iteration, starting with the initial value.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct OptimSettings {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
}

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub diagnostics: OptimDiagnostics,
}

#[derive(Debug, Clone)]
pub(crate) struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Coordinates held at a bound by the current gradient.
    fn active(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        x.iter()
            .zip(g)
            .zip(self.lower.iter().zip(&self.upper))
            .map(|((&v, &gi), (&lo, &hi))| (v <= lo && gi > 0.0) || (v >= hi && gi < 0.0))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimises `objective`, which returns the value and gradient at a point.
/// Evaluation errors at trial points are treated as an infinite objective.
pub(crate) fn minimize<F>(
    mut objective: F,
    x0: Vec<f64>,
    bounds: Option<&Bounds>,
    settings: OptimSettings,
) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0;
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OmmError::NonFinite("objective at the starting point".into()));
    }
    let mut evaluations = 1;
    let mut trace = vec![f];
    let mut h = identity(n);
    let mut converged = false;
    let mut message = String::from("iteration limit reached");
    let mut iterations = 0;

    let free_gradient = |x: &[f64], g: &[f64]| -> Vec<f64> {
        match bounds {
            Some(b) => {
                let active = b.active(x, g);
                g.iter().zip(active).map(|(&v, a)| if a { 0.0 } else { v }).collect()
            }
            None => g.to_vec(),
        }
    };

    if n == 0 {
        return Ok(Minimum {
            x,
            diagnostics: OptimDiagnostics {
                iterations: 0,
                evaluations,
                gradient_norm: 0.0,
                converged: true,
                message: "no free parameters".into(),
                objective_trace: trace,
            },
        });
    }

    while iterations < settings.max_iterations {
        let pg = free_gradient(&x, &g);
        if norm(&pg) < settings.gradient_tolerance {
            converged = true;
            message = "gradient norm below tolerance".into();
            break;
        }
        let active: Vec<bool> = pg.iter().zip(&g).map(|(p, g)| *p == 0.0 && *g != 0.0).collect();
        let mut dir = matvec(&h, &pg);
        for (d, a) in dir.iter_mut().zip(&active) {
            if *a {
                *d = 0.0;
            }
            *d = -*d;
        }
        let mut slope = dot(&dir, &pg);
        if !(slope < 0.0) {
            // Curvature information went stale; restart from steepest descent.
            h = identity(n);
            dir = pg.iter().map(|v| -v).collect();
            slope = dot(&dir, &pg);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            if let Some(b) = bounds {
                b.project(&mut trial);
            }
            evaluations += 1;
            if let Ok((ft, gt)) = objective(&trial) {
                let decrease = match bounds {
                    Some(_) => dot(&pg, &trial.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()),
                    None => step * slope,
                };
                if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + 1e-4 * decrease {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            let gn = norm(&pg);
            message = format!("line search failed with gradient norm {gn:.3e}");
            break;
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if iterations == 1 {
                let scale = sy / dot(&y, &y);
                h = identity(n);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        let improved = f - f_new;
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if improved.abs() <= 1e-15 * f.abs().max(1.0) && norm(&free_gradient(&x, &g)) < settings.gradient_tolerance * 10.0 {
            converged = true;
            message = "objective stalled near a stationary point".into();
            break;
        }
    }
    if iterations == settings.max_iterations && !converged {
        let pg = free_gradient(&x, &g);
        if norm(&pg) < settings.gradient_tolerance {
            converged = true;
            message = "gradient norm below tolerance".into();
        }
    }
    let gradient_norm = norm(&free_gradient(&x, &g));
    Ok(Minimum {
        x,
        diagnostics: OptimDiagnostics {
            iterations,
            evaluations,
            gradient_norm,
            converged,
            message,
            objective_trace: trace,
        },
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn matvec(h: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&h[i * n..(i + 1) * n], v)).collect()
}

/// Inverse-Hessian update `H ← (I - ρsyᵀ)H(I - ρysᵀ) + ρssᵀ`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
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

    const SETTINGS: OptimSettings = OptimSettings {
        max_iterations: 500,
        gradient_tolerance: 1e-8,
    };

    #[test]
    fn solves_rosenbrock() {
        let m = minimize(rosenbrock, vec![-1.2, 1.0], None, SETTINGS).unwrap();
        assert!(m.diagnostics.converged, "{}", m.diagnostics.message);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
        assert!(m.diagnostics.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_bounds() {
        // minimum of (x-2)² + (y+1)² over [0,1]×[0,5] is (1, 0)
        let f = |x: &[f64]| Ok(((x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 1.0)]));
        let bounds = Bounds {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 5.0],
        };
        let m = minimize(f, vec![0.5, 3.0], Some(&bounds), SETTINGS).unwrap();
        assert!(m.diagnostics.converged);
        assert_eq!(m.x, vec![1.0, 0.0]);
    }

    #[test]
    fn quadratic_in_few_steps() {
        let f = |x: &[f64]| {
            let g: Vec<f64> = x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).collect();
            Ok((x.iter().enumerate().map(|(i, v)| 0.5 * (i as f64 + 1.0) * v * v).sum(), g))
        };
        let m = minimize(f, vec![1.0; 6], None, SETTINGS).unwrap();
        assert!(m.diagnostics.converged);
        assert!(m.diagnostics.iterations < 30);
    }
}
