//! Levenberg-Marquardt least squares with box constraints handled by
//! reparametrization.
//!
//! The solver works in internal coordinates `u`: positive parameters as
//! `x = exp(u)`, non-negative ones as `x = sqrt(u² + 1) - 1`, intervals by reflecting `u`
//! into `[lo, hi]`. Steps solve
//! `(JᵀJ + λ D) δ = -Jᵀr` with `D` the floored diagonal of `JᵀJ`, `λ` is
//! divided by `ν` on an accepted step and multiplied by `ν` on a rejected
//! one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Lowest internal coordinate of a positive parameter; keeps `exp(u)` a
/// normal float when the optimum sits on the boundary.
const LOG_FLOOR: f64 = -700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Unbounded,
    /// `x > 0`, fitted in log space.
    Positive,
    /// `x >= 0` via `x = sqrt(u² + 1) - 1`, which is smooth through the
    /// boundary and does not trap a parameter that reaches it.
    NonNegative,
    /// `lo <= x <= hi`, folded by reflection.
    Interval(f64, f64),
}

impl Bound {
    fn to_internal(self, x: f64) -> Result<f64> {
        match self {
            Bound::Unbounded => Ok(x),
            Bound::Positive if x > 0.0 => Ok(x.ln()),
            Bound::Positive => Err(Error::InvalidInput(format!("initial value {x} must be > 0"))),
            Bound::NonNegative if x >= 0.0 => Ok((x * (x + 2.0)).sqrt()),
            Bound::NonNegative => Err(Error::InvalidInput(format!("initial value {x} must be >= 0"))),
            Bound::Interval(lo, hi) => Ok(x.clamp(lo, hi)),
        }
    }

    fn to_external(self, u: f64) -> f64 {
        match self {
            Bound::Unbounded => u,
            Bound::Positive => u.max(LOG_FLOOR).exp(),
            Bound::NonNegative => u * u / ((u * u + 1.0).sqrt() + 1.0),
            Bound::Interval(lo, hi) => {
                let w = hi - lo;
                let t = (u - lo).rem_euclid(2.0 * w);
                lo + if t <= w { t } else { 2.0 * w - t }
            }
        }
    }

    /// `dx/du` at internal coordinate `u`.
    fn derivative(self, u: f64) -> f64 {
        match self {
            Bound::Unbounded => 1.0,
            Bound::Positive if u < LOG_FLOOR => 0.0,
            Bound::Positive => u.exp(),
            Bound::NonNegative => u / (u * u + 1.0).sqrt(),
            Bound::Interval(lo, hi) => {
                let w = hi - lo;
                if (u - lo).rem_euclid(2.0 * w) <= w {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub lambda0: f64,
    pub nu: f64,
    /// Relative parameter-change tolerance.
    pub xtol: f64,
    /// Relative cost-change tolerance.
    pub ftol: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: 200, lambda0: 1e-3, nu: 10.0, xtol: 1e-8, ftol: 1e-10, fd_step: 1e-6 }
    }
}

const LAMBDA_MAX: f64 = 1e16;
const DIAG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ParameterChange,
    CostChange,
    /// The Gauss-Newton model predicts no meaningful further reduction.
    Stationary,
    ZeroResidual,
    MaxIterations,
    /// Damping reached its ceiling while every trial step still evaluated:
    /// the cost is at a minimum to working precision.
    NoFurtherReduction,
    /// Damping reached its ceiling because trial steps could not be evaluated.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    /// Estimates in natural coordinates.
    pub x: Vec<f64>,
    /// `(JᵀJ)⁻¹` in natural coordinates, without residual scaling.
    pub covariance: DMatrix<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Cost after the first accepted step, if any.
    pub first_step_cost: Option<f64>,
}

impl LmReport {
    pub fn residual_norm(&self) -> f64 {
        self.cost.sqrt()
    }
}

fn eval<F>(f: &F, bounds: &[Bound], u: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let x: Vec<f64> = u.iter().zip(bounds).map(|(&ui, b)| b.to_external(ui)).collect();
    let r = f(&x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("residual"));
    }
    Ok(DVector::from_vec(r))
}

fn jacobian<F>(f: &F, bounds: &[Bound], u: &DVector<f64>, r: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut jac = DMatrix::zeros(r.len(), u.len());
    for i in 0..u.len() {
        let h = step * u[i].abs().max(1.0);
        let mut up = u.clone();
        up[i] += h;
        let col = match eval(f, bounds, &up) {
            Ok(rp) => (rp - r) / h,
            Err(_) => {
                up[i] = u[i] - h;
                (r - eval(f, bounds, &up)?) / h
            }
        };
        jac.set_column(i, &col);
    }
    Ok(jac)
}

fn invert_normal(jtj: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = jtj.clone().cholesky() {
        return ch.inverse();
    }
    let p = jtj.nrows();
    jtj.clone()
        .pseudo_inverse(1e-14 * jtj.diagonal().amax().max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::from_element(p, p, f64::NAN))
}

/// Minimizes `‖residual_fn(x)‖²` from `init` subject to `bounds`.
///
/// Failure to converge is reported through [`LmReport::converged`]; an
/// error is returned only if the residual cannot be evaluated at `init`.
pub fn levenberg_marquardt<F>(residual_fn: F, init: &[f64], bounds: &[Bound], opts: &LmOptions) -> Result<LmReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if init.len() != bounds.len() {
        return Err(Error::InvalidInput("one bound per parameter is required".into()));
    }
    if init.is_empty() {
        return Err(Error::InvalidInput("no free parameters".into()));
    }
    let mut u = DVector::from_vec(
        init.iter().zip(bounds).map(|(&x, b)| b.to_internal(x)).collect::<Result<Vec<_>>>()?,
    );
    let mut r = eval(&residual_fn, bounds, &u)?;
    let mut cost = r.norm_squared();
    let mut lambda = opts.lambda0;
    let mut iterations = 0;
    let mut accepted_steps = 0;
    let mut first_step_cost = None;
    let mut termination = Termination::MaxIterations;
    let cost_floor = f64::MIN_POSITIVE.sqrt() * r.len() as f64;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        if cost <= cost_floor {
            termination = Termination::ZeroResidual;
            break;
        }
        let jac = jacobian(&residual_fn, bounds, &u, &r, opts.fd_step)?;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let diag = jtj.diagonal().map(|v| v.max(DIAG_FLOOR * jtj.diagonal().amax().max(f64::MIN_POSITIVE)));

        // Gauss-Newton predicted decrease; negligible means stationary.
        let gn_damped = &jtj + DMatrix::from_diagonal(&(diag.clone() * 1e-12));
        if let Some(ch) = gn_damped.cholesky() {
            let delta = ch.solve(&(-&grad));
            if -grad.dot(&delta) <= 1e-10 * cost {
                termination = Termination::Stationary;
                break;
            }
        }

        let mut evaluated = false;
        loop {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * diag[i];
            }
            let step = a.cholesky().map(|ch| ch.solve(&(-&grad)));
            if let Some(delta) = step {
                let trial = &u + &delta;
                if let Ok(r_new) = eval(&residual_fn, bounds, &trial) {
                    evaluated = true;
                    let cost_new = r_new.norm_squared();
                    if cost_new < cost {
                        let rel_cost = (cost - cost_new) / cost;
                        let small_step = delta.norm() <= opts.xtol * (u.norm() + opts.xtol);
                        u = trial;
                        r = r_new;
                        cost = cost_new;
                        lambda /= opts.nu;
                        accepted_steps += 1;
                        first_step_cost.get_or_insert(cost);
                        if small_step {
                            termination = Termination::ParameterChange;
                            break 'outer;
                        }
                        if rel_cost < opts.ftol {
                            termination = Termination::CostChange;
                            break 'outer;
                        }
                        break;
                    }
                }
            }
            lambda *= opts.nu;
            if lambda > LAMBDA_MAX {
                termination = if evaluated { Termination::NoFurtherReduction } else { Termination::Stalled };
                break 'outer;
            }
        }
    }

    let converged = !matches!(termination, Termination::MaxIterations | Termination::Stalled);
    let jac = jacobian(&residual_fn, bounds, &u, &r, opts.fd_step)?;
    let cov_u = invert_normal(&(jac.transpose() * &jac));
    let t = DVector::from_iterator(u.len(), u.iter().zip(bounds).map(|(&ui, b)| b.derivative(ui)));
    let covariance = DMatrix::from_fn(u.len(), u.len(), |i, j| t[i] * cov_u[(i, j)] * t[j]);
    Ok(LmReport {
        x: u.iter().zip(bounds).map(|(&ui, b)| b.to_external(ui)).collect(),
        covariance,
        residuals: r.as_slice().to_vec(),
        cost,
        iterations,
        accepted_steps,
        converged,
        termination,
        first_step_cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn linear_least_squares() {
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let b = DVector::from_vec(vec![1.1, 2.9, 5.2, 7.1, 8.8]);
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            Ok((&a * DVector::from_column_slice(x) - &b).as_slice().to_vec())
        };
        let rep = levenberg_marquardt(f, &[10.0, -3.0], &[Bound::Unbounded; 2], &LmOptions::default()).unwrap();
        let exact = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        assert!(rep.converged);
        // cost-based stopping leaves errors of order sqrt(ftol)
        assert_abs_diff_eq!(rep.x[0], exact[0], epsilon = 1e-6);
        assert_abs_diff_eq!(rep.x[1], exact[1], epsilon = 1e-6);
        // The first step is Gauss-Newton up to the λ₀ damping.
        let optimum = (&a * &exact - &b).norm_squared();
        let start = (&a * DVector::from_vec(vec![10.0, -3.0]) - &b).norm_squared();
        let first = rep.first_step_cost.unwrap();
        assert!(first - optimum <= 1e-4 * (start - optimum), "{first} vs {optimum}");
        // (AᵀA)⁻¹ is the unscaled covariance
        let inv = (a.transpose() * &a).try_inverse().unwrap();
        assert!((rep.covariance - inv).abs().max() < 1e-6);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]) };
        let rep = levenberg_marquardt(f, &[-1.2, 1.0], &[Bound::Unbounded; 2], &LmOptions::default()).unwrap();
        assert!(rep.converged);
        assert_abs_diff_eq!(rep.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(rep.x[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn exponential_decay_with_positive_bound() {
        let t: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 2.5 * (-1.3 * t).exp()).collect();
        let f = |x: &[f64]| -> Result<Vec<f64>> {
            Ok(t.iter().zip(&y).map(|(t, y)| x[0] * (-x[1] * t).exp() - y).collect())
        };
        let rep = levenberg_marquardt(f, &[1.0, 0.2], &[Bound::Positive, Bound::Positive], &LmOptions::default()).unwrap();
        assert!(rep.converged);
        assert_abs_diff_eq!(rep.x[0], 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.x[1], 1.3, epsilon = 1e-9);
    }

    #[test]
    fn interval_bound_is_respected() {
        // Unconstrained optimum at 5 lies outside [0, 2].
        let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0] - 5.0]) };
        let rep = levenberg_marquardt(f, &[1.0], &[Bound::Interval(0.0, 2.0)], &LmOptions::default()).unwrap();
        assert!(rep.x[0] <= 2.0 && rep.x[0] >= 0.0);
        assert_abs_diff_eq!(rep.x[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn singular_jacobian_is_handled() {
        // x0 and x1 enter only through their sum.
        let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![x[0] + x[1] - 3.0, 2.0 * (x[0] + x[1]) - 6.0]) };
        let rep = levenberg_marquardt(f, &[0.0, 0.0], &[Bound::Unbounded; 2], &LmOptions::default()).unwrap();
        assert_abs_diff_eq!(rep.x[0] + rep.x[1], 3.0, epsilon = 1e-8);
        assert!(rep.covariance.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_convergence_is_flagged_not_raised() {
        let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(vec![(x[0] * 3.0).sin() + 2.0, x[0] * 1e-3]) };
        let opts = LmOptions { max_iterations: 2, ..Default::default() };
        let rep = levenberg_marquardt(f, &[0.1], &[Bound::Unbounded], &opts).unwrap();
        assert_eq!(rep.iterations, 2);
        assert!(!rep.converged);
    }

    #[test]
    fn rejects_invalid_start() {
        let f = |_: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0]) };
        assert!(levenberg_marquardt(f, &[-1.0], &[Bound::Positive], &LmOptions::default()).is_err());
        assert!(levenberg_marquardt(f, &[], &[], &LmOptions::default()).is_err());
    }

    #[test]
    fn fold_maps_into_interval() {
        let b = Bound::Interval(0.0, std::f64::consts::PI);
        for u in [-7.0, -0.5, 0.3, 3.5, 9.9, 100.0] {
            let x = b.to_external(u);
            assert!((0.0..=std::f64::consts::PI).contains(&x), "{u} -> {x}");
        }
        assert_eq!(b.to_external(-0.5), 0.5);
        assert_abs_diff_eq!(b.to_external(3.5), 2.0 * std::f64::consts::PI - 3.5, epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn recovers_random_linear_models(coef in prop::collection::vec(-5.0..5.0f64, 3)) {
            let xs: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
            let ys: Vec<f64> = xs.iter().map(|x| coef[0] + coef[1] * x + coef[2] * x * x).collect();
            let f = |c: &[f64]| -> Result<Vec<f64>> {
                Ok(xs.iter().zip(&ys).map(|(x, y)| c[0] + c[1] * x + c[2] * x * x - y).collect())
            };
            let rep = levenberg_marquardt(f, &[0.0, 0.0, 0.0], &[Bound::Unbounded; 3], &LmOptions::default()).unwrap();
            for i in 0..3 {
                prop_assert!((rep.x[i] - coef[i]).abs() < 1e-7);
            }
        }
    }
}
