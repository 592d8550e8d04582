//! Box-constrained limited-memory BFGS with projected backtracking.
//!
//! Small and dependency free; used for marginal-likelihood maximization where
//! the dimension is a handful of log-hyperparameters.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
}

const MEMORY: usize = 8;
const ARMIJO: f64 = 1e-4;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient with components that point out of the feasible box zeroed.
fn projected_gradient(x: &[f64], g: &[f64], bounds: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            let at_lower = xi <= bounds.lower[i] && gi > 0.0;
            let at_upper = xi >= bounds.upper[i] && gi < 0.0;
            if at_lower || at_upper {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Two-loop recursion: approximates `-H g`.
fn lbfgs_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / dot(y, s);
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push((rho, a));
    }
    if let Some((s, y)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y), (rho, a)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Minimizes `f` over the box. `f` returns `None` where the objective cannot
/// be evaluated; such points are rejected by the line search. Returns `None`
/// if the objective fails at the (projected) starting point.
pub fn minimize<F>(mut f: F, start: &[f64], bounds: &Bounds, max_iter: usize, tol: f64) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = start.to_vec();
    bounds.project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return None;
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(MEMORY);
    let mut iterations = 0;

    while iterations < max_iter {
        let pg = projected_gradient(&x, &g, bounds);
        let pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if pg_norm <= tol {
            break;
        }
        iterations += 1;

        let mut accepted = None;
        for use_memory in [true, false] {
            if !use_memory && history.is_empty() {
                continue;
            }
            let mut d = if use_memory && !history.is_empty() {
                lbfgs_direction(&pg, &history)
            } else {
                pg.iter().map(|v| -v).collect()
            };
            // freeze variables that sit on an active bound
            for (i, di) in d.iter_mut().enumerate() {
                if pg[i] == 0.0 && g[i] != 0.0 {
                    *di = 0.0;
                }
            }
            if dot(&d, &pg) >= 0.0 {
                d = pg.iter().map(|v| -v).collect();
            }
            let mut t = if history.is_empty() {
                (1.0 / pg_norm).min(1.0)
            } else {
                1.0
            };
            for _ in 0..40 {
                let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
                bounds.project(&mut xn);
                let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
                if step.iter().all(|s| *s == 0.0) {
                    break;
                }
                if let Some((fnew, gnew)) = f(&xn) {
                    if fnew.is_finite() && fnew <= fx + ARMIJO * dot(&g, &step) {
                        accepted = Some((xn, fnew, gnew, step));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            history.clear();
        }

        let Some((xn, fnew, gnew, step)) = accepted else {
            break;
        };
        let yk: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&step, &yk) > 1e-12 * dot(&yk, &yk).sqrt() * dot(&step, &step).sqrt() {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((step, yk));
        }
        let improvement = fx - fnew;
        x = xn;
        fx = fnew;
        g = gnew;
        if improvement.abs() <= 1e-13 * fx.abs().max(1.0) {
            break;
        }
    }
    Some(Minimum {
        x,
        value: fx,
        gradient: g,
        iterations,
    })
}
