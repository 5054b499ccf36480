//! Levenberg-Marquardt minimization of a sum of squared residuals.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait LeastSquaresProblem: Sync {
    fn n_params(&self) -> usize;

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn jacobian(&self, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>> {
        central_difference_jacobian(|p| self.residuals(p), x, step)
    }
}

/// Central differences with an absolute step `step` in every coordinate; columns are
/// evaluated in parallel and stored by index, so the result is schedule independent.
pub fn central_difference_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be > 0, got {step}")));
    }
    let cols: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += step;
            xm[j] -= step;
            let rp = f(&xp)?;
            let rm = f(&xm)?;
            Ok((rp - rm) / (xp[j] - xm[j]))
        })
        .collect::<Result<_>>()?;
    let m = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(m, x.len(), |i, j| cols[j][i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub rel_cost_tol: f64,
    /// Stop when the step norm falls below this.
    pub step_tol: f64,
    pub initial_damping: f64,
    /// Finite-difference step in the optimizer's coordinates.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_cost_tol: 1e-10,
            step_tol: 1e-12,
            initial_damping: 1e-3,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    CostTolerance,
    StepTolerance,
    ZeroCost,
    MaxIterations,
    DampingOverflow,
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub reason: StopReason,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

pub fn minimize<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    x0: &DVector<f64>,
    opts: &LmOptions,
) -> Result<LmReport> {
    if x0.len() != problem.n_params() {
        return Err(Error::DimensionMismatch {
            expected: problem.n_params(),
            got: x0.len(),
        });
    }
    let mut x = x0.clone();
    let mut r = problem.residuals(&x)?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("model is not finite at the initial point".into()));
    }
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut jac = problem.jacobian(&x, opts.fd_step)?;
    let n = x.len();

    let mut iterations = 0;
    let reason = loop {
        if cost == 0.0 {
            break StopReason::ZeroCost;
        }
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }
        iterations += 1;

        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let dmax = jtj.diagonal().max();
        let scale: Vec<f64> = jtj
            .diagonal()
            .iter()
            .map(|&d| d.max(1e-12 * dmax).max(f64::MIN_POSITIVE))
            .collect();

        // inner loop: raise damping until a step lowers the cost
        let outcome = loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * scale[i];
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match a.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => {
                        lambda *= 10.0;
                        if lambda > 1e20 {
                            break None;
                        }
                        continue;
                    }
                },
            };
            let step_norm = step.norm();
            let trial = &x + &step;
            let r_trial = problem.residuals(&trial);
            let accepted = match &r_trial {
                Ok(rt) if rt.iter().all(|v| v.is_finite()) => rt.norm_squared() < cost,
                _ => false,
            };
            if accepted {
                break Some((trial, r_trial.unwrap(), step_norm));
            }
            if step_norm < opts.step_tol {
                break Some((x.clone(), r.clone(), step_norm));
            }
            lambda *= 10.0;
            if lambda > 1e20 {
                break None;
            }
        };

        match outcome {
            None => break StopReason::DampingOverflow,
            Some((trial, r_trial, step_norm)) => {
                let new_cost = r_trial.norm_squared();
                if new_cost >= cost {
                    break StopReason::StepTolerance;
                }
                let rel = (cost - new_cost) / cost;
                x = trial;
                r = r_trial;
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(1e-15);
                jac = problem.jacobian(&x, opts.fd_step)?;
                if rel < opts.rel_cost_tol {
                    break StopReason::CostTolerance;
                }
                if step_norm < opts.step_tol {
                    break StopReason::StepTolerance;
                }
            }
        }
    };

    let converged = !matches!(reason, StopReason::MaxIterations);
    Ok(LmReport {
        x,
        residuals: r,
        jacobian: jac,
        cost,
        iterations,
        converged,
        reason,
        cost_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]))
        }
    }

    struct Line {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquaresProblem for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_iterator(
                self.t.len(),
                self.t.iter().zip(&self.y).map(|(t, y)| x[0] + x[1] * t - y),
            ))
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let rep = minimize(&Rosenbrock, &DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((rep.x[0] - 1.0).abs() < 1e-6 && (rep.x[1] - 1.0).abs() < 1e-6, "{}", rep.x);
        assert!(rep.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn linear_model_jacobian_is_exact() {
        let p = Line {
            t: vec![0.0, 1.0, 2.0, 3.0],
            y: vec![1.0, 3.1, 4.9, 7.2],
        };
        let j = p.jacobian(&DVector::from_vec(vec![0.3, -2.0]), 1e-3).unwrap();
        for (i, t) in p.t.iter().enumerate() {
            assert!((j[(i, 0)] - 1.0).abs() < 1e-12);
            assert!((j[(i, 1)] - t).abs() < 1e-12);
        }
        let rep = minimize(&p, &DVector::from_vec(vec![0.0, 0.0]), &LmOptions::default()).unwrap();
        // closed-form least squares
        let n = 4.0;
        let (st, sy, stt, sty) = p.t.iter().zip(&p.y).fold((0.0, 0.0, 0.0, 0.0), |a, (t, y)| {
            (a.0 + t, a.1 + y, a.2 + t * t, a.3 + t * y)
        });
        let slope = (n * sty - st * sy) / (n * stt - st * st);
        let icpt = (sy - slope * st) / n;
        assert!((rep.x[1] - slope).abs() < 1e-8);
        assert!((rep.x[0] - icpt).abs() < 1e-8);
    }

    #[test]
    fn zero_residual_stops_immediately() {
        let p = Line {
            t: vec![0.0, 1.0],
            y: vec![1.0, 2.0],
        };
        let rep = minimize(&p, &DVector::from_vec(vec![1.0, 1.0]), &LmOptions::default()).unwrap();
        assert_eq!(rep.reason, StopReason::ZeroCost);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn rejects_wrong_start_dimension() {
        assert!(minimize(&Rosenbrock, &DVector::from_vec(vec![1.0]), &LmOptions::default()).is_err());
    }
}
