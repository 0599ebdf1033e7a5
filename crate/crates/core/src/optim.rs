//! Unconstrained quasi-Newton minimisation (BFGS with backtracking line search).

use crate::scalar::Real;

/// Function to minimise. Infeasible points should return `+inf`.
pub trait Objective<F: Real> {
    fn dim(&self) -> usize;

    fn value(&self, x: &[F]) -> F;

    /// Value and gradient at `x`. The default uses central differences.
    fn value_grad(&self, x: &[F], grad: &mut [F]) -> F {
        central_difference(|p| self.value(p), x, grad);
        self.value(x)
    }
}

/// Central-difference gradient with a per-coordinate step `eps^(1/3) max(1, |x_i|)`.
pub fn central_difference<F: Real>(f: impl Fn(&[F]) -> F, x: &[F], grad: &mut [F]) {
    let base = F::epsilon().cbrt();
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = base * x[i].abs().max(F::one());
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let down = f(&p);
        p[i] = x[i];
        grad[i] = (up - down) / (h + h);
    }
}

/// Forward-difference gradient with step `sqrt(eps) max(1, |x_i|)`.
pub fn forward_difference<F: Real>(f: impl Fn(&[F]) -> F, x: &[F], grad: &mut [F]) {
    let base = F::epsilon().sqrt();
    let f0 = f(x);
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = base * x[i].abs().max(F::one());
        p[i] = x[i] + h;
        grad[i] = (f(&p) - f0) / h;
        p[i] = x[i];
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig<F> {
    /// Stop once the relative objective change stays below this for two iterations.
    pub rel_obj_tol: F,
    /// Stop once the max-norm of the gradient is below this.
    pub grad_tol: F,
    pub max_iter: usize,
    /// Largest coordinate change allowed in one step.
    pub max_step: F,
}

impl<F: Real> Default for OptimConfig<F> {
    fn default() -> Self {
        Self {
            rel_obj_tol: F::lit(1e-8),
            grad_tol: F::lit(1e-6),
            max_iter: 2000,
            max_step: F::lit(10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    ObjectiveTolerance,
    /// No step along the search direction decreased the objective, even after
    /// resetting the Hessian approximation; the point is a numerical minimum.
    LineSearchStalled,
    MaxIterations,
    NonFiniteStart,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Self::GradientTolerance | Self::ObjectiveTolerance | Self::LineSearchStalled)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult<F> {
    pub x: Vec<F>,
    pub value: F,
    pub iterations: usize,
    pub termination: Termination,
}

impl<F: Real> OptimResult<F> {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn max_abs<F: Real>(a: &[F]) -> F {
    a.iter().fold(F::zero(), |m, v| m.max(v.abs()))
}

/// Minimises `obj` from `x0`.
pub fn bfgs<F: Real, O: Objective<F> + ?Sized>(obj: &O, x0: &[F], cfg: &OptimConfig<F>) -> OptimResult<F> {
    let n = obj.dim();
    let mut x = x0.to_vec();
    let mut g = vec![F::zero(); n];
    let mut f = obj.value_grad(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return OptimResult { x, value: f, iterations: 0, termination: Termination::NonFiniteStart };
    }
    let mut h = vec![F::zero(); n * n];
    let reset = |h: &mut [F]| {
        h.fill(F::zero());
        for i in 0..n {
            h[i * n + i] = F::one();
        }
    };
    reset(&mut h);
    let mut fresh = true;
    let mut small_changes = 0;
    let c1 = F::lit(1e-4);
    let mut d = vec![F::zero(); n];
    let mut x_new = vec![F::zero(); n];
    let mut g_new = vec![F::zero(); n];
    let mut hy = vec![F::zero(); n];

    for iter in 0..cfg.max_iter {
        if max_abs(&g) < cfg.grad_tol {
            return OptimResult { x, value: f, iterations: iter, termination: Termination::GradientTolerance };
        }
        for i in 0..n {
            d[i] = -(0..n).map(|j| h[i * n + j] * g[j]).sum::<F>();
        }
        let mut slope = dot(&d, &g);
        if !(slope < F::zero()) {
            reset(&mut h);
            fresh = true;
            for i in 0..n {
                d[i] = -g[i];
            }
            slope = dot(&d, &g);
        }
        let dmax = max_abs(&d);
        let mut alpha = if dmax > cfg.max_step { cfg.max_step / dmax } else { F::one() };

        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            let f_try = obj.value_grad(&x_new, &mut g_new);
            if f_try.is_finite() && f_try <= f + c1 * alpha * slope && g_new.iter().all(|v| v.is_finite()) {
                accepted = Some(f_try);
                break;
            }
            alpha = alpha * F::lit(0.5);
        }
        let Some(f_new) = accepted else {
            if fresh {
                return OptimResult { x, value: f, iterations: iter, termination: Termination::LineSearchStalled };
            }
            reset(&mut h);
            fresh = true;
            continue;
        };

        // s = alpha d, y = g_new - g
        let s: Vec<F> = d.iter().map(|&v| alpha * v).collect();
        let y: Vec<F> = g_new.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > F::epsilon().sqrt() * dot(&s, &s).sqrt() * yy.sqrt() {
            if fresh {
                let scale = sy / yy;
                for v in h.iter_mut() {
                    *v = *v * scale;
                }
                fresh = false;
            }
            for i in 0..n {
                hy[i] = (0..n).map(|j| h[i * n + j] * y[j]).sum();
            }
            let yhy = dot(&y, &hy);
            let rho = sy.recip();
            let coef = (F::one() + yhy * rho) * rho;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] = h[i * n + j] + coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }

        let change = (f - f_new).abs() / (f_new.abs() + cfg.rel_obj_tol);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        if change < cfg.rel_obj_tol {
            small_changes += 1;
            if small_changes >= 2 {
                return OptimResult { x, value: f, iterations: iter + 1, termination: Termination::ObjectiveTolerance };
            }
        } else {
            small_changes = 0;
        }
    }
    let gmax = max_abs(&g);
    let termination =
        if gmax < cfg.grad_tol { Termination::GradientTolerance } else { Termination::MaxIterations };
    OptimResult { x, value: f, iterations: cfg.max_iter, termination }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective<f64> for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective<f64> for Quadratic {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn value(&self, x: &[f64]) -> f64 {
            x.iter().zip(&self.0).enumerate().map(|(i, (v, c))| (i as f64 + 1.0) * (v - c).powi(2)).sum()
        }
        fn value_grad(&self, x: &[f64], g: &mut [f64]) -> f64 {
            for (i, (v, c)) in x.iter().zip(&self.0).enumerate() {
                g[i] = 2.0 * (i as f64 + 1.0) * (v - c);
            }
            self.value(x)
        }
    }

    #[test]
    fn minimises_rosenbrock_with_numeric_gradient() {
        let r = bfgs(&Rosenbrock, &[-1.2, 1.0], &OptimConfig::default());
        assert!(r.converged(), "{:?}", r.termination);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn minimises_quadratic_exactly() {
        let q = Quadratic(vec![3.0, -2.0, 0.5, 10.0]);
        let r = bfgs(&q, &[0.0; 4], &OptimConfig::default());
        assert!(r.converged());
        for (a, b) in r.x.iter().zip(&q.0) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn reports_non_finite_start() {
        struct Bad;
        impl Objective<f64> for Bad {
            fn dim(&self) -> usize {
                1
            }
            fn value(&self, _: &[f64]) -> f64 {
                f64::INFINITY
            }
        }
        let r = bfgs(&Bad, &[0.0], &OptimConfig::default());
        assert_eq!(r.termination, Termination::NonFiniteStart);
        assert!(!r.converged());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let cfg = OptimConfig { max_iter: 2, ..OptimConfig::default() };
        let r = bfgs(&Rosenbrock, &[-1.2, 1.0], &cfg);
        assert_eq!(r.termination, Termination::MaxIterations);
    }
}
