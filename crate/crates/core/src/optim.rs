//! Small dense constrained optimizers used by the profiling code.
//!
//! Problems here have at most a dozen variables, so everything is dense
//! Newton with explicit Hessians: a KKT solver for maximization under one
//! smooth equality constraint, and an augmented Lagrangian for general
//! smooth inequality/equality systems.

use nalgebra::{DMatrix, DVector};

/// Value, gradient, and Hessian of a smooth function at a point.
pub type Eval = (f64, DVector<f64>, DMatrix<f64>);

/// A smooth scalar function with derivatives.
pub trait Smooth {
    fn eval(&self, x: &DVector<f64>) -> Eval;
}

impl<F: Fn(&DVector<f64>) -> Eval> Smooth for F {
    fn eval(&self, x: &DVector<f64>) -> Eval {
        self(x)
    }
}

/// Outcome of a constrained maximization.
#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    /// Max constraint violation (equalities: |h|, inequalities: max(0, c)).
    pub violation: f64,
    /// Final first-order residual, scaled by the gradient magnitude.
    pub kkt_residual: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Maximize `f` subject to the single equality `h(x) = 0` by Newton on the
/// KKT system, with a least-squares merit line search.
pub fn maximize_single_equality(
    f: &dyn Smooth,
    h: &dyn Smooth,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> OptimOutcome {
    let n = x0.len();
    let mut x = x0.clone();
    let (_, gf, _) = f.eval(&x);
    let (_, gh, _) = h.eval(&x);
    let denom = gh.dot(&gh);
    let mut nu = if denom > 0.0 { gf.dot(&gh) / denom } else { 0.0 };

    let residual = |x: &DVector<f64>, nu: f64| -> (DVector<f64>, f64, f64) {
        let (_, gf, _) = f.eval(x);
        let (hv, gh, _) = h.eval(x);
        let mut r = DVector::zeros(n + 1);
        let stat = &gf - &gh * nu;
        for i in 0..n {
            r[i] = stat[i];
        }
        r[n] = hv;
        let scale = 1.0 + gf.amax();
        (r, hv.abs(), stat.amax() / scale)
    };

    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let (_, gf, hf) = f.eval(&x);
        let (hv, gh, hh) = h.eval(&x);
        let scale = 1.0 + gf.amax();
        let stat = &gf - &gh * nu;
        if stat.amax() / scale <= tol && hv.abs() <= tol * (1.0 + x.amax()) {
            break;
        }

        let mut jac = DMatrix::zeros(n + 1, n + 1);
        let hess = &hf - &hh * nu;
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = hess[(i, j)];
            }
            jac[(i, n)] = -gh[i];
            jac[(n, i)] = gh[i];
        }
        let mut rhs = DVector::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -stat[i];
        }
        rhs[n] = -hv;

        let mut tau = 0.0;
        let step = loop {
            let mut reg = jac.clone();
            for i in 0..n {
                reg[(i, i)] -= tau;
            }
            if let Some(sol) = reg.lu().solve(&rhs) {
                if sol.iter().all(|v| v.is_finite()) {
                    break Some(sol);
                }
            }
            tau = if tau == 0.0 { 1e-8 * scale } else { tau * 100.0 };
            if tau > 1e12 * scale {
                break None;
            }
        };
        let Some(step) = step else { break };

        let (r0, _, _) = residual(&x, nu);
        let base = r0.norm_squared();
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let xt = &x + step.rows(0, n) * t;
            let nut = nu + t * step[n];
            if xt.iter().all(|v| v.is_finite()) {
                let (rt, _, _) = residual(&xt, nut);
                if rt.norm_squared() <= base * (1.0 - 1e-4 * t) || rt.norm_squared() < base {
                    x = xt;
                    nu = nut;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }

    let (value, _, _) = f.eval(&x);
    let (_, hv_abs, kkt) = residual(&x, nu);
    OptimOutcome {
        violation: hv_abs,
        kkt_residual: kkt,
        converged: kkt <= tol * 10.0 && hv_abs <= tol * 10.0 * (1.0 + x.amax()),
        value,
        x,
        iterations,
    }
}

/// Options for the augmented Lagrangian loop.
#[derive(Debug, Clone)]
pub struct AugLagOptions {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub tol_constraint: f64,
    pub tol_gradient: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
}

impl Default for AugLagOptions {
    fn default() -> Self {
        AugLagOptions {
            outer_iters: 40,
            inner_iters: 60,
            tol_constraint: 1e-9,
            tol_gradient: 1e-8,
            initial_penalty: 10.0,
            penalty_growth: 8.0,
            max_penalty: 1e14,
        }
    }
}

/// Maximize `f` subject to `h_i(x) = 0` and `c_j(x) <= 0` by the method of
/// multipliers with a damped Newton inner loop.
pub fn maximize_auglag(
    f: &dyn Smooth,
    equalities: &[&dyn Smooth],
    inequalities: &[&dyn Smooth],
    x0: &DVector<f64>,
    opts: &AugLagOptions,
) -> OptimOutcome {
    let n = x0.len();
    let mut x = x0.clone();
    let mut mu = vec![0.0f64; equalities.len()];
    let mut lam = vec![0.0f64; inequalities.len()];
    let mut rho = opts.initial_penalty;
    let mut iterations = 0;
    let mut prev_violation = f64::INFINITY;

    let violation_at = |x: &DVector<f64>| -> f64 {
        let mut v: f64 = 0.0;
        for h in equalities {
            v = v.max(h.eval(x).0.abs());
        }
        for c in inequalities {
            v = v.max(c.eval(x).0.max(0.0));
        }
        v
    };

    for _outer in 0..opts.outer_iters {
        // minimize F(x) = -f + sum mu h + rho/2 h^2 + sum psi(c; lam, rho)
        let al_eval = |x: &DVector<f64>, mu: &[f64], lam: &[f64], rho: f64| -> Eval {
            let (fv, fg, fh) = f.eval(x);
            let mut value = -fv;
            let mut grad = -fg;
            let mut hess = -fh;
            for (h, &m) in equalities.iter().zip(mu.iter()) {
                let (hv, hg, hh) = h.eval(x);
                value += m * hv + 0.5 * rho * hv * hv;
                let w = m + rho * hv;
                grad += &hg * w;
                hess += &hh * w + &hg * hg.transpose() * rho;
            }
            for (c, &l) in inequalities.iter().zip(lam.iter()) {
                let (cv, cg, ch) = c.eval(x);
                let active = l + rho * cv;
                if active > 0.0 {
                    value += (active * active - l * l) / (2.0 * rho);
                    grad += &cg * active;
                    hess += &ch * active + &cg * cg.transpose() * rho;
                } else {
                    value += -l * l / (2.0 * rho);
                }
            }
            (value, grad, hess)
        };

        let mut inner_done = false;
        for _inner in 0..opts.inner_iters {
            iterations += 1;
            let (val, grad, hess) = al_eval(&x, &mu, &lam, rho);
            let scale = 1.0 + val.abs();
            if grad.amax() <= opts.tol_gradient * scale {
                inner_done = true;
                break;
            }
            let mut tau = 0.0;
            let step = loop {
                let mut reg = hess.clone();
                for i in 0..n {
                    reg[(i, i)] += tau;
                }
                match reg.cholesky() {
                    Some(ch) => {
                        let s = ch.solve(&(-&grad));
                        if s.iter().all(|v| v.is_finite()) {
                            break Some(s);
                        }
                        tau = if tau == 0.0 { 1e-8 * scale } else { tau * 100.0 };
                    }
                    None => {
                        tau = if tau == 0.0 { 1e-8 * scale } else { tau * 100.0 };
                    }
                }
                if tau > 1e14 * scale {
                    break None;
                }
            };
            let Some(step) = step else { break };
            let slope = grad.dot(&step);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..50 {
                let xt = &x + &step * t;
                if xt.iter().all(|v| v.is_finite()) {
                    let (vt, _, _) = al_eval(&xt, &mu, &lam, rho);
                    if vt <= val + 1e-4 * t * slope {
                        x = xt;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                inner_done = true;
                break;
            }
        }
        let _ = inner_done;

        let violation = violation_at(&x);
        for (h, m) in equalities.iter().zip(mu.iter_mut()) {
            *m += rho * h.eval(&x).0;
        }
        for (c, l) in inequalities.iter().zip(lam.iter_mut()) {
            *l = (*l + rho * c.eval(&x).0).max(0.0);
        }
        if violation <= opts.tol_constraint {
            let (_, grad, _) = al_eval(&x, &mu, &lam, rho);
            let (fv, fg, _) = f.eval(&x);
            let scale = 1.0 + fg.amax();
            let kkt = grad.amax() / scale;
            if kkt <= opts.tol_gradient * 100.0 {
                return OptimOutcome {
                    x,
                    value: fv,
                    violation,
                    kkt_residual: kkt,
                    converged: true,
                    iterations,
                };
            }
        }
        if violation > 0.25 * prev_violation {
            rho = (rho * opts.penalty_growth).min(opts.max_penalty);
        }
        prev_violation = violation;
    }

    let (fv, _, _) = f.eval(&x);
    let violation = violation_at(&x);
    OptimOutcome {
        violation,
        kkt_residual: f64::NAN,
        converged: false,
        value: fv,
        x,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad_obj() -> impl Fn(&DVector<f64>) -> Eval {
        // maximize -(x-1)^2 - (y-2)^2
        |x: &DVector<f64>| {
            let v = -(x[0] - 1.0).powi(2) - (x[1] - 2.0).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (x[0] - 1.0), -2.0 * (x[1] - 2.0)]);
            let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, -2.0]));
            (v, g, h)
        }
    }

    #[test]
    fn single_equality_projects_onto_line() {
        // constraint x + y = 1; optimum is the projection of (1, 2)
        let h = |x: &DVector<f64>| {
            let v = x[0] + x[1] - 1.0;
            (v, DVector::from_vec(vec![1.0, 1.0]), DMatrix::zeros(2, 2))
        };
        let out = maximize_single_equality(
            &quad_obj(),
            &h,
            &DVector::from_vec(vec![0.0, 0.0]),
            1e-10,
            100,
        );
        assert!(out.converged, "kkt={} viol={}", out.kkt_residual, out.violation);
        assert_relative_eq!(out.x[0], 0.0, epsilon = 1e-7);
        assert_relative_eq!(out.x[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn auglag_handles_active_inequality() {
        // maximize the same quadratic with x + y <= 1: same active optimum
        let c = |x: &DVector<f64>| {
            let v = x[0] + x[1] - 1.0;
            (v, DVector::from_vec(vec![1.0, 1.0]), DMatrix::zeros(2, 2))
        };
        let out = maximize_auglag(
            &quad_obj(),
            &[],
            &[&c],
            &DVector::from_vec(vec![-1.0, -1.0]),
            &AugLagOptions::default(),
        );
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 0.0, epsilon = 1e-5);
        assert_relative_eq!(out.x[1], 1.0, epsilon = 1e-5);
    }

    #[test]
    fn auglag_leaves_inactive_constraints_alone() {
        let c = |x: &DVector<f64>| {
            let v = x[0] + x[1] - 100.0;
            (v, DVector::from_vec(vec![1.0, 1.0]), DMatrix::zeros(2, 2))
        };
        let out = maximize_auglag(
            &quad_obj(),
            &[],
            &[&c],
            &DVector::from_vec(vec![0.0, 0.0]),
            &AugLagOptions::default(),
        );
        assert!(out.converged);
        assert_relative_eq!(out.x[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(out.x[1], 2.0, epsilon = 1e-5);
    }

    #[test]
    fn auglag_nonlinear_equality() {
        // maximize -(x^2 + y^2) subject to x * y = 1; optima at (1,1), (-1,-1)
        let f = |x: &DVector<f64>| {
            let v = -(x[0] * x[0] + x[1] * x[1]);
            let g = DVector::from_vec(vec![-2.0 * x[0], -2.0 * x[1]]);
            let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-2.0, -2.0]));
            (v, g, h)
        };
        let h = |x: &DVector<f64>| {
            let v = x[0] * x[1] - 1.0;
            let g = DVector::from_vec(vec![x[1], x[0]]);
            let mut hh = DMatrix::zeros(2, 2);
            hh[(0, 1)] = 1.0;
            hh[(1, 0)] = 1.0;
            (v, g, hh)
        };
        let out = maximize_auglag(
            &f,
            &[&h],
            &[],
            &DVector::from_vec(vec![2.0, 0.7]),
            &AugLagOptions::default(),
        );
        assert!(out.converged);
        assert_relative_eq!(out.value, -2.0, epsilon = 1e-5);
    }
}
