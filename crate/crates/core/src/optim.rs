//! Unconstrained quasi-Newton maximization.
//!
//! Dense BFGS with Armijo backtracking, followed when needed by Newton steps on
//! a finite-difference Hessian of the gradient. Problem sizes here are a dozen
//! coordinates at most, so dense storage is fine.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    /// Convergence threshold on the gradient sup-norm.
    pub grad_tol: f64,
    /// Relative objective change below which progress is considered stalled.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for Controls {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            rel_tol: 1e-10,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl Outcome {
    pub fn gradient_norm(&self) -> f64 {
        sup_norm(&self.gradient)
    }
}

/// Objective returning its value and writing its gradient.
pub trait Objective {
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Objective for F {
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Point {
    x: Vec<f64>,
    /// Negated objective: the minimization target.
    f: f64,
    /// Gradient of `f`.
    g: Vec<f64>,
}

fn evaluate<O: Objective + ?Sized>(obj: &O, x: Vec<f64>) -> Point {
    let mut g = vec![0.0; x.len()];
    let v = obj.value_grad(&x, &mut g);
    let ok = v.is_finite() && g.iter().all(|x| x.is_finite());
    let f = if ok { -v } else { f64::INFINITY };
    for gi in &mut g {
        *gi = -*gi;
    }
    Point { x, f, g }
}

fn line_search<O: Objective + ?Sized>(obj: &O, at: &Point, dir: &[f64]) -> Option<Point> {
    let slope = dot(&at.g, dir);
    if slope >= 0.0 {
        return None;
    }
    let mut step = 1.0;
    for _ in 0..60 {
        let x: Vec<f64> = at.x.iter().zip(dir).map(|(x, d)| x + step * d).collect();
        if x == at.x {
            return None;
        }
        let cand = evaluate(obj, x);
        if cand.f.is_finite() && cand.f < at.f && cand.f <= at.f + 1e-4 * step * slope {
            return Some(cand);
        }
        step *= 0.5;
    }
    None
}

fn bfgs<O: Objective + ?Sized>(obj: &O, start: Point, controls: &Controls) -> (Point, usize) {
    let n = start.x.len();
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut cur = start;
    let mut first = true;
    let mut iterations = 0;
    let mut stalled = 0;
    while iterations < controls.max_iter {
        if sup_norm(&cur.g) < controls.grad_tol {
            break;
        }
        iterations += 1;
        let g = DVector::from_column_slice(&cur.g);
        let mut dir: Vec<f64> = (-(&h * &g)).iter().copied().collect();
        if dot(&dir, &cur.g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = cur.g.iter().map(|x| -x).collect();
        }
        let next = match line_search(obj, &cur, &dir) {
            Some(p) => p,
            None if !first => {
                // retry once along steepest descent from a fresh metric
                h = DMatrix::identity(n, n);
                first = true;
                let sd: Vec<f64> = cur.g.iter().map(|x| -x / sup_norm(&cur.g).max(1.0)).collect();
                match line_search(obj, &cur, &sd) {
                    Some(p) => p,
                    None => break,
                }
            }
            None => break,
        };
        let s = DVector::from_iterator(n, next.x.iter().zip(&cur.x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, next.g.iter().zip(&cur.g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * (rho * rho * yhy + rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let rel = (cur.f - next.f).abs() / cur.f.abs().max(1e-12);
        cur = next;
        if rel < controls.rel_tol {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    (cur, iterations)
}

fn fd_hessian<O: Objective + ?Sized>(obj: &O, at: &Point) -> DMatrix<f64> {
    let n = at.x.len();
    let mut hess = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let h = 1e-5 * at.x[j].abs().max(1.0);
        let mut xp = at.x.clone();
        xp[j] += h;
        let mut xm = at.x.clone();
        xm[j] -= h;
        let gp = evaluate(obj, xp).g;
        let gm = evaluate(obj, xm).g;
        for i in 0..n {
            hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

fn newton_polish<O: Objective + ?Sized>(obj: &O, start: Point, controls: &Controls) -> (Point, usize) {
    let n = start.x.len();
    let mut cur = start;
    let mut iterations = 0;
    for _ in 0..50 {
        if sup_norm(&cur.g) < controls.grad_tol {
            break;
        }
        iterations += 1;
        let hess = fd_hessian(obj, &cur);
        let g = DVector::from_column_slice(&cur.g);
        let mut lambda = 0.0;
        let mut step = None;
        for _ in 0..30 {
            let damped = &hess + DMatrix::<f64>::identity(n, n) * lambda;
            if let Some(chol) = damped.cholesky() {
                step = Some(-chol.solve(&g));
                break;
            }
            lambda = if lambda == 0.0 { 1e-8 * hess.diagonal().amax().max(1.0) } else { lambda * 10.0 };
        }
        let Some(step) = step else { break };
        let dir: Vec<f64> = step.iter().copied().collect();
        match line_search(obj, &cur, &dir) {
            Some(p) => cur = p,
            None => {
                // near the optimum the objective change drowns in rounding;
                // take the full step if it is flat in value and shrinks the gradient
                let x: Vec<f64> = cur.x.iter().zip(&dir).map(|(x, d)| x + d).collect();
                let cand = evaluate(obj, x);
                let flat = cand.f <= cur.f + 1e-12 * cur.f.abs().max(1.0);
                if cand.f.is_finite() && flat && sup_norm(&cand.g) < sup_norm(&cur.g) {
                    cur = cand;
                } else {
                    break;
                }
            }
        }
    }
    (cur, iterations)
}

/// Maximizes `obj` starting from `x0`.
pub fn maximize<O: Objective + ?Sized>(obj: &O, x0: &[f64], controls: &Controls) -> Outcome {
    let start = evaluate(obj, x0.to_vec());
    if !start.f.is_finite() {
        return Outcome {
            x: x0.to_vec(),
            value: f64::NEG_INFINITY,
            gradient: vec![f64::NAN; x0.len()],
            iterations: 0,
            converged: false,
        };
    }
    let (mut best, mut iterations) = bfgs(obj, start, controls);
    if sup_norm(&best.g) >= controls.grad_tol {
        let (polished, extra) = newton_polish(obj, best, controls);
        best = polished;
        iterations += extra;
    }
    let converged = sup_norm(&best.g) < controls.grad_tol;
    Outcome {
        value: -best.f,
        gradient: best.g.iter().map(|g| -g).collect(),
        x: best.x,
        iterations,
        converged,
    }
}

/// Central finite-difference gradient of a scalar function.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], step: f64, grad: &mut [f64]) {
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        grad[j] = (fp - fm) / (2.0 * h);
    }
}
