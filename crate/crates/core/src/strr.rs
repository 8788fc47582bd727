//! Sequential threshold ridge regression.
//!
//! Alternates a ridge solve on the active columns with hard thresholding
//! until the coefficient vector stops changing (infinity norm below the
//! tolerance) or the iteration budget runs out. Every column, the bias
//! included, is penalized by the same `lambda`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot size below which an unpenalized system is rank-deficient.
const RANK_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrrConfig {
    pub lambda: f64,
    pub tau: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for StrrConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            tau: 0.001,
            tolerance: 1e-8,
            max_iter: 10_000,
        }
    }
}

impl StrrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config(format!(
                "tolerance must be > 0, got {}",
                self.tolerance
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFit {
    pub coefficients: Vec<f64>,
    pub active: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when thresholding removed every term; the fit is then all zeros.
    pub empty: bool,
}

impl SparseFit {
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }

    fn zero(l: usize, iterations: usize) -> Self {
        Self {
            coefficients: vec![0.0; l],
            active: vec![false; l],
            iterations,
            converged: true,
            empty: true,
        }
    }
}

/// Solve `(ΘᵀΘ + λI) ξ = Θᵀy` by Cholesky factorization.
pub fn ridge_solve(theta: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if theta.ncols() == 0 {
        return Err(Error::invalid("ridge solve needs at least one column"));
    }
    if theta.nrows() != y.len() {
        return Err(Error::mismatch(format!(
            "design has {} rows, target has {}",
            theta.nrows(),
            y.len()
        )));
    }
    let gram = theta.tr_mul(theta);
    let rhs = theta.tr_mul(y);
    solve_normal(gram, &rhs, lambda)
}

/// Solve the regularized normal equations given `ΘᵀΘ` and `Θᵀy`.
pub(crate) fn solve_normal(
    mut gram: DMatrix<f64>,
    rhs: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    let p = gram.ncols();
    let scale = gram.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for i in 0..p {
        gram[(i, i)] += lambda;
    }
    let chol = gram.cholesky().ok_or(Error::RankDeficient(p))?;
    if lambda == 0.0 {
        let min_pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b * b));
        if !(min_pivot > RANK_RTOL * scale) {
            return Err(Error::RankDeficient(p));
        }
    }
    Ok(chol.solve(rhs))
}

/// Zero every entry with magnitude strictly below `tau`.
pub fn threshold(xi: &[f64], tau: f64) -> Vec<f64> {
    xi.iter()
        .map(|&v| if v.abs() < tau { 0.0 } else { v })
        .collect()
}

/// Gram matrix and moment vector of a regression, reusable across the
/// refits of one STRR run.
pub(crate) struct NormalSystem {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl NormalSystem {
    pub(crate) fn new(theta: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            gram: theta.tr_mul(theta),
            rhs: theta.tr_mul(y),
        }
    }

    pub(crate) fn solve_subset(&self, cols: &[usize], lambda: f64) -> Result<Vec<f64>> {
        let g = self.gram.select_rows(cols).select_columns(cols);
        let b = self.rhs.select_rows(cols);
        Ok(solve_normal(g, &b, lambda)?.iter().copied().collect())
    }
}

pub fn strr_fit(
    theta: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &StrrConfig,
    warm_start: Option<&[f64]>,
) -> Result<SparseFit> {
    config.validate()?;
    let l = theta.ncols();
    if theta.nrows() != y.len() {
        return Err(Error::mismatch(format!(
            "design has {} rows, target has {}",
            theta.nrows(),
            y.len()
        )));
    }
    if l == 0 {
        return Err(Error::invalid("empty candidate library"));
    }
    let system = NormalSystem::new(theta, y);

    let (mut xi, mut active) = match warm_start {
        Some(w) => {
            if w.len() != l {
                return Err(Error::mismatch(format!(
                    "warm start has length {}, library has {l}",
                    w.len()
                )));
            }
            (w.to_vec(), w.iter().map(|v| *v != 0.0).collect::<Vec<_>>())
        }
        None => {
            let all: Vec<usize> = (0..l).collect();
            (system.solve_subset(&all, config.lambda)?, vec![true; l])
        }
    };

    for iteration in 1..=config.max_iter {
        let thresholded = threshold(&xi, config.tau);
        for (a, v) in active.iter_mut().zip(&thresholded) {
            *a = *a && *v != 0.0;
        }
        let cols: Vec<usize> = (0..l).filter(|&i| active[i]).collect();
        if cols.is_empty() {
            return Ok(SparseFit::zero(l, iteration));
        }
        let sub = system.solve_subset(&cols, config.lambda)?;
        let mut next = vec![0.0; l];
        for (&c, v) in cols.iter().zip(sub) {
            next[c] = v;
        }
        let change = next
            .iter()
            .zip(&xi)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        xi = next;
        let settled = cols.iter().all(|&c| xi[c].abs() >= config.tau);
        if change < config.tolerance && settled {
            return Ok(SparseFit {
                coefficients: xi,
                active,
                iterations: iteration,
                converged: true,
                empty: false,
            });
        }
    }
    Ok(SparseFit {
        coefficients: xi,
        active,
        iterations: config.max_iter,
        converged: false,
        empty: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ridge_identity_examples() {
        let theta = DMatrix::<f64>::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let xi = ridge_solve(&theta, &y, 0.0).unwrap();
        assert_abs_diff_eq!(xi[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xi[1], 2.0, epsilon = 1e-15);
        let xi = ridge_solve(&theta, &y, 1.0).unwrap();
        assert_abs_diff_eq!(xi[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(xi[1], 1.0, epsilon = 1e-15);

        let ones = DMatrix::from_element(2, 1, 1.0);
        let xi = ridge_solve(&ones, &DVector::from_vec(vec![3.0, 3.0]), 0.0).unwrap();
        assert_abs_diff_eq!(xi[0], 3.0, epsilon = 1e-15);
    }

    #[test]
    fn ridge_rank_deficiency() {
        let theta = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            ridge_solve(&theta, &y, 0.0),
            Err(Error::RankDeficient(2))
        ));
        assert!(ridge_solve(&theta, &y, 0.1).is_ok());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold(&[0.0005, 0.5], 0.001), vec![0.0, 0.5]);
        assert_eq!(threshold(&[0.0005, -0.5], 0.0), vec![0.0005, -0.5]);
        assert_eq!(threshold(&[0.001, -0.001], 0.001), vec![0.001, -0.001]);
    }

    #[test]
    fn zero_target_gives_empty_fit() {
        let theta = DMatrix::from_fn(20, 3, |i, j| ((i * (j + 1)) as f64).sin() + j as f64);
        let y = DVector::zeros(20);
        let fit = strr_fit(&theta, &y, &StrrConfig::default(), None).unwrap();
        assert!(fit.empty && fit.converged);
        assert!(fit.iterations <= 2);
        assert!(fit.coefficients.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn threshold_above_all_coefficients_gives_empty_fit() {
        let theta = DMatrix::from_fn(30, 2, |i, j| (i as f64 * 0.3 + j as f64).cos());
        let y = DVector::from_fn(30, |i, _| 0.2 * theta[(i, 0)] - 0.1 * theta[(i, 1)]);
        let ols = ridge_solve(&theta, &y, 0.0).unwrap();
        let tau = ols.iter().fold(0.0f64, |a, b| a.max(b.abs())) * 1.5;
        let cfg = StrrConfig {
            tau,
            lambda: 0.0,
            ..Default::default()
        };
        let fit = strr_fit(&theta, &y, &cfg, None).unwrap();
        assert!(fit.empty);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let theta = DMatrix::<f64>::identity(3, 3);
        let y = DVector::zeros(2);
        assert!(strr_fit(&theta, &y, &StrrConfig::default(), None).is_err());
        let cfg = StrrConfig {
            tolerance: 0.0,
            ..Default::default()
        };
        assert!(matches!(
            strr_fit(&theta, &DVector::zeros(3), &cfg, None),
            Err(Error::Config(_))
        ));
        assert!(strr_fit(
            &theta,
            &DVector::zeros(3),
            &StrrConfig::default(),
            Some(&[1.0])
        )
        .is_err());
    }
}
