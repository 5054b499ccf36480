use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub covariance: DMatrix<f64>,
    /// Condition number of `JᵀJ` (infinite when rank deficient).
    pub condition_number: f64,
    pub rank: usize,
    /// Set when `J` lacked full column rank and a pseudo-inverse was used.
    pub rank_deficient: bool,
}

impl CovarianceEstimate {
    pub fn standard_errors(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

/// `(JᵀJ)⁻¹ · chi2/dof`, through the SVD of `J` so rank loss is detected rather than
/// amplified.
pub fn covariance_from_jacobian(j: &DMatrix<f64>, chi2: f64, dof: i64) -> Result<CovarianceEstimate> {
    if dof <= 0 {
        return Err(Error::Fit(format!("degrees of freedom must be positive, got {dof}")));
    }
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Jacobian".into()));
    }
    let n = j.ncols();
    let svd = j.clone().svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD of Jacobian failed".into()))?;
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cutoff = f64::EPSILON * (j.nrows().max(n) as f64) * smax;
    let rank = s.iter().filter(|&&v| v > cutoff).count();
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition_number = if rank < n || smin == 0.0 {
        f64::INFINITY
    } else {
        (smax / smin).powi(2)
    };

    let scale = chi2 / dof as f64;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff {
            let v = vt.row(k).transpose();
            cov += &v * v.transpose() * (scale / (sk * sk));
        }
    }
    // exact symmetry
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(CovarianceEstimate {
        covariance: cov,
        condition_number,
        rank,
        rank_deficient: rank < n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_normal_equations_inverse() {
        let j = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let est = covariance_from_jacobian(&j, 2.0, 2).unwrap();
        let inv = (j.transpose() * &j).try_inverse().unwrap();
        assert!((est.covariance - inv).norm() < 1e-12);
        assert_eq!(est.rank, 2);
        assert!(!est.rank_deficient);
        assert!(est.condition_number.is_finite());
    }

    #[test]
    fn duplicated_points_halve_variance() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let j = DMatrix::from_fn(20, 2, |i, c| if c == 0 { 1.0 } else { t[i] });
        let chi2 = 0.37;
        let a = covariance_from_jacobian(&j, chi2, 18).unwrap();
        let j2 = DMatrix::from_fn(40, 2, |i, c| j[(i % 20, c)]);
        let b = covariance_from_jacobian(&j2, 2.0 * chi2, 38).unwrap();
        // dof goes from n - p to 2n - p
        let ratio = 18.0 / 38.0;
        for k in 0..2 {
            assert!((b.covariance[(k, k)] / a.covariance[(k, k)] - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_is_flagged() {
        let j = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let est = covariance_from_jacobian(&j, 1.0, 1).unwrap();
        assert!(est.rank_deficient);
        assert_eq!(est.rank, 1);
        assert!(est.condition_number.is_infinite());
        assert!(est.covariance.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nonpositive_dof_rejected() {
        let j = DMatrix::from_row_slice(1, 1, &[1.0]);
        assert!(covariance_from_jacobian(&j, 1.0, 0).is_err());
    }
}
