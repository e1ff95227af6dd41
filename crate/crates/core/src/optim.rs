//! Smooth unconstrained minimization by L-BFGS with a More-Thuente line
//! search.

use std::cell::{Cell, RefCell};

use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason, TerminationStatus};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub max_iterations: u64,
    /// Stop when the gradient's Euclidean norm falls below this.
    pub grad_tol: f64,
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iterations: 500,
            grad_tol: 1e-6,
            memory: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: u64,
    /// The solver stopped on its gradient or cost tolerance rather than on
    /// an error or the iteration cap.
    pub solver_converged: bool,
}

struct Problem<'a, F> {
    f: F,
    best: &'a RefCell<(f64, Vec<f64>)>,
    evaluations: Cell<u64>,
    max_evaluations: u64,
    // The solver asks for the value and the gradient at the same point in
    // separate calls.
    last: RefCell<Option<(Vec<f64>, f64, Vec<f64>)>>,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Problem<'_, F> {
    // Non-finite points and runaway line searches abort the run; the best
    // point seen so far is kept either way.
    fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>), argmin::core::Error> {
        if let Some((lx, v, g)) = self.last.borrow().as_ref() {
            if lx.as_slice() == x {
                return Ok((*v, g.clone()));
            }
        }
        let n = self.evaluations.get() + 1;
        self.evaluations.set(n);
        if n > self.max_evaluations {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(argmin::core::Error::msg("non-finite parameter"));
        }
        let (v, g) = (self.f)(x);
        if !v.is_finite() || g.iter().any(|g| !g.is_finite()) {
            return Err(argmin::core::Error::msg("non-finite objective"));
        }
        let mut best = self.best.borrow_mut();
        if v < best.0 {
            *best = (v, x.to_vec());
        }
        *self.last.borrow_mut() = Some((x.to_vec(), v, g.clone()));
        Ok((v, g))
    }
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> CostFunction for Problem<'_, F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(self.eval(x)?.0)
    }
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Gradient for Problem<'_, F> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        Ok(self.eval(x)?.1)
    }
}

/// Minimize `f`, which returns the value and gradient at a point. Returns
/// `None` only if `f` is not finite at `x0`.
pub fn minimize<F>(f: F, x0: Vec<f64>, options: &MinimizeOptions) -> Option<Minimum>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (v0, g0) = f(&x0);
    if !v0.is_finite() || g0.iter().any(|g| !g.is_finite()) {
        return None;
    }
    let best = RefCell::new((v0, x0.clone()));
    let problem = Problem {
        f: &f,
        best: &best,
        evaluations: Cell::new(0),
        max_evaluations: 20 * options.max_iterations,
        last: RefCell::new(None),
    };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), options.memory)
        .with_tolerance_grad(options.grad_tol)
        .and_then(|s| s.with_tolerance_cost(0.0))
        .expect("tolerances are non-negative");
    let run = Executor::new(problem, solver)
        .configure(|state| state.param(x0).max_iters(options.max_iterations))
        .run();
    let (iterations, solver_converged) = match &run {
        Ok(res) => (
            res.state().get_iter(),
            matches!(
                res.state().get_termination_status(),
                TerminationStatus::Terminated(TerminationReason::SolverConverged)
            ),
        ),
        Err(_) => (0, false),
    };
    drop(run);
    let (value, x) = best.into_inner();
    let (_, grad) = f(&x);
    Some(Minimum {
        grad_inf_norm: inf_norm(&grad),
        x,
        value,
        iterations,
        solver_converged,
    })
}

pub fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let m = minimize(f, vec![-1.2, 1.0], &MinimizeOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
        assert!(m.grad_inf_norm < 1e-5);
    }

    #[test]
    fn quadratic_exact() {
        let f = |x: &[f64]| {
            let v = x.iter().enumerate().map(|(i, xi)| (i + 1) as f64 * (xi - 2.0).powi(2)).sum();
            let g = x.iter().enumerate().map(|(i, xi)| 2.0 * (i + 1) as f64 * (xi - 2.0)).collect();
            (v, g)
        };
        let m = minimize(f, vec![0.0; 4], &MinimizeOptions::default()).unwrap();
        assert!(m.solver_converged);
        assert!(m.x.iter().all(|x| (x - 2.0).abs() < 1e-7));
    }
}
