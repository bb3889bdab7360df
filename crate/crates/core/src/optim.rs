//! Box-constrained Newton minimization for the small convex fits in this crate
//! (choice models, window model, logistic cancellation).

use crate::error::Result;
use crate::scalar::Scalar;

/// Value, gradient and (optionally) Hessian of an objective at one point.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub value: T,
    pub gradient: Vec<T>,
    /// Row-major `dim x dim`, present when requested.
    pub hessian: Option<Vec<T>>,
}

pub trait SmoothObjective<T: Scalar>: Sync {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[T], with_hessian: bool) -> Result<Evaluation<T>>;
}

#[derive(Clone, Debug)]
pub struct Bounds<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> Bounds<T> {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![T::neg_infinity(); dim],
            upper: vec![T::infinity(); dim],
        }
    }

    pub fn project(&self, x: &mut [T]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            if *v < lo {
                *v = lo;
            }
            if *v > hi {
                *v = hi;
            }
        }
    }

    /// `x - P(x - g)`; zero exactly at a box-constrained stationary point.
    pub fn projected_gradient(&self, x: &[T], g: &[T]) -> Vec<T> {
        let mut step: Vec<T> = x.iter().zip(g).map(|(&xi, &gi)| xi - gi).collect();
        self.project(&mut step);
        x.iter().zip(step).map(|(&xi, si)| xi - si).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig<T> {
    /// Infinity norm of the projected gradient at which to stop.
    pub tolerance: T,
    pub max_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: Vec<T>,
    pub projected_gradient_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

pub fn inf_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Projected Newton with Armijo backtracking.
///
/// Variables sitting on a bound with the gradient pushing outward are held
/// fixed for the iteration; the Newton system is solved on the rest.
pub fn minimize<T: Scalar, O: SmoothObjective<T> + ?Sized>(
    objective: &O,
    start: &[T],
    bounds: &Bounds<T>,
    config: NewtonConfig<T>,
) -> Result<Minimum<T>> {
    let n = objective.dim();
    let mut x = start.to_vec();
    bounds.project(&mut x);
    let mut eval = objective.evaluate(&x, true)?;
    let mut iterations = 0;
    let sigma = T::lit(1e-4);

    loop {
        let pg = bounds.projected_gradient(&x, &eval.gradient);
        let pg_norm = inf_norm(&pg);
        if pg_norm <= config.tolerance || iterations >= config.max_iterations {
            let converged = pg_norm <= config.tolerance;
            return Ok(finish(x, eval, pg_norm, iterations, converged));
        }
        iterations += 1;

        let g = &eval.gradient;
        let h = eval.hessian.as_ref().expect("hessian requested");
        let eps = pg_norm.min(T::lit(1e-8));
        let free: Vec<usize> = (0..n)
            .filter(|&k| {
                let at_lower = x[k] <= bounds.lower[k] + eps && g[k] > T::zero();
                let at_upper = x[k] >= bounds.upper[k] - eps && g[k] < T::zero();
                !(at_lower || at_upper)
            })
            .collect();

        let mut direction = vec![T::zero(); n];
        if !free.is_empty() {
            let m = free.len();
            let mut sub = vec![T::zero(); m * m];
            let mut rhs = vec![T::zero(); m];
            for (a, &ka) in free.iter().enumerate() {
                rhs[a] = -g[ka];
                for (b, &kb) in free.iter().enumerate() {
                    sub[a * m + b] = h[ka * n + kb];
                }
            }
            let step = solve_spd(&sub, &rhs, m);
            for (a, &ka) in free.iter().enumerate() {
                direction[ka] = step[a];
            }
        }
        let slope: T = direction.iter().zip(g).map(|(&d, &gi)| d * gi).sum();
        if !(slope < T::zero()) {
            direction = g.iter().map(|&gi| -gi).collect();
        }

        match line_search(objective, bounds, &x, &eval, &direction, sigma)? {
            Some((next_x, next_eval)) => {
                x = next_x;
                eval = next_eval;
            }
            None => {
                if let Some((next_x, next_eval)) =
                    flat_step(objective, bounds, &x, &eval, &direction, pg_norm)?
                {
                    x = next_x;
                    eval = next_eval;
                    continue;
                }
                // Newton step failed to decrease; try steepest descent once.
                let steepest: Vec<T> = g.iter().map(|&gi| -gi).collect();
                match line_search(objective, bounds, &x, &eval, &steepest, sigma)? {
                    Some((next_x, next_eval)) => {
                        x = next_x;
                        eval = next_eval;
                    }
                    None => {
                        let converged = pg_norm <= config.tolerance;
                        return Ok(finish(x, eval, pg_norm, iterations, converged));
                    }
                }
            }
        }
    }
}

fn finish<T: Scalar>(
    x: Vec<T>,
    eval: Evaluation<T>,
    pg_norm: T,
    iterations: usize,
    converged: bool,
) -> Minimum<T> {
    Minimum {
        x,
        value: eval.value,
        gradient: eval.gradient,
        hessian: eval.hessian.unwrap_or_default(),
        projected_gradient_norm: pg_norm,
        iterations,
        converged,
    }
}

/// Full step accepted when the value is flat to rounding but the projected
/// gradient shrinks, so the stopping rule stays reachable near the optimum.
#[allow(clippy::type_complexity)]
fn flat_step<T: Scalar, O: SmoothObjective<T> + ?Sized>(
    objective: &O,
    bounds: &Bounds<T>,
    x: &[T],
    eval: &Evaluation<T>,
    direction: &[T],
    pg_norm: T,
) -> Result<Option<(Vec<T>, Evaluation<T>)>> {
    let mut trial: Vec<T> = x.iter().zip(direction).map(|(&xi, &d)| xi + d).collect();
    bounds.project(&mut trial);
    if trial.as_slice() == x {
        return Ok(None);
    }
    let candidate = objective.evaluate(&trial, true)?;
    let slack = T::lit(64.0) * T::epsilon() * eval.value.abs().max(T::one());
    if !(candidate.value <= eval.value + slack) {
        return Ok(None);
    }
    let next_pg = inf_norm(&bounds.projected_gradient(&trial, &candidate.gradient));
    if next_pg < pg_norm {
        Ok(Some((trial, candidate)))
    } else {
        Ok(None)
    }
}

#[allow(clippy::type_complexity)]
fn line_search<T: Scalar, O: SmoothObjective<T> + ?Sized>(
    objective: &O,
    bounds: &Bounds<T>,
    x: &[T],
    eval: &Evaluation<T>,
    direction: &[T],
    sigma: T,
) -> Result<Option<(Vec<T>, Evaluation<T>)>> {
    let half = T::lit(0.5);
    let mut t = T::one();
    for _ in 0..60 {
        let mut trial: Vec<T> = x
            .iter()
            .zip(direction)
            .map(|(&xi, &d)| xi + t * d)
            .collect();
        bounds.project(&mut trial);
        if trial.as_slice() == x {
            return Ok(None);
        }
        let decrease: T = trial
            .iter()
            .zip(x)
            .zip(&eval.gradient)
            .map(|((&xt, &xi), &gi)| gi * (xt - xi))
            .sum();
        let candidate = objective.evaluate(&trial, true)?;
        if candidate.value.is_finite() && candidate.value <= eval.value + sigma * decrease {
            if candidate.value < eval.value || decrease < T::zero() {
                return Ok(Some((trial, candidate)));
            }
            return Ok(None);
        }
        t = t * half;
    }
    Ok(None)
}

/// Cholesky factorization `A = L L^T` of a symmetric positive definite matrix,
/// `None` when a pivot is not positive.
pub fn cholesky<T: Scalar>(a: &[T], n: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

pub fn cholesky_solve<T: Scalar>(l: &[T], b: &[T], n: usize) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Solves `A x = b` for symmetric positive semidefinite `A`, adding a growing
/// diagonal shift until the factorization succeeds.
pub fn solve_spd<T: Scalar>(a: &[T], b: &[T], n: usize) -> Vec<T> {
    if let Some(l) = cholesky(a, n) {
        return cholesky_solve(&l, b, n);
    }
    let scale = (0..n)
        .map(|i| a[i * n + i].abs())
        .fold(T::zero(), |m, v| m.max(v))
        .max(T::one());
    let mut shift = scale * T::lit(1e-10);
    loop {
        let mut shifted = a.to_vec();
        for i in 0..n {
            shifted[i * n + i] += shift;
        }
        if let Some(l) = cholesky(&shifted, n) {
            return cholesky_solve(&l, b, n);
        }
        shift = shift * T::lit(10.0);
        if !shift.is_finite() {
            return b.to_vec();
        }
    }
}

/// Diagonal of `A^{-1}` for a symmetric positive definite matrix; entries are
/// infinite when `A` is singular.
pub fn inverse_diagonal<T: Scalar>(a: &[T], n: usize) -> Vec<T> {
    match cholesky(a, n) {
        Some(l) => (0..n)
            .map(|i| {
                let mut e = vec![T::zero(); n];
                e[i] = T::one();
                cholesky_solve(&l, &e, n)[i]
            })
            .collect(),
        None => vec![T::infinity(); n],
    }
}
