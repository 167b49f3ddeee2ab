//! Comparator predictors: factors only, and factors plus a LASSO sparse VAR.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::{forecast_factors, FactorFit};

/// Penalty grid for the per-equation LASSO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaGrid {
    /// Explicit penalties, applied to every equation.
    Explicit(Vec<f64>),
    /// `count` log-spaced values from each equation's `lambda_max` down to
    /// `ratio * lambda_max`.
    Relative { count: usize, ratio: f64 },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Relative { count: 50, ratio: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoVarFit {
    /// `N x N` coefficients on the original scale.
    pub phi: DMatrix<f64>,
    /// Penalty chosen by BIC for each equation.
    pub lambdas: Vec<f64>,
    pub nnz: usize,
}

/// Convergence when no coordinate update lowers the fit by more than this
/// fraction of `y'y / n`.
const CD_TOL: f64 = 1e-12;
const CD_MAX_SWEEPS: usize = 10_000;
/// The path stops once RSS improves by less than this fraction between
/// consecutive penalties; further terms can only raise BIC.
const PATH_RSS_TOL: f64 = 1e-5;

/// Coordinate descent for `(1/2) b'Gb - c'b + lambda |b|_1`, i.e. the LASSO
/// objective `(1/2n)|y - Xb|^2 + lambda |b|_1` up to a constant when
/// `G = X'X/n` and `c = X'y/n`. `beta` is used as the warm start and
/// overwritten with the solution.
///
/// Full sweeps alternate with sweeps restricted to the current active set
/// until a full sweep moves no coefficient by more than the tolerance.
pub fn lasso_coordinate_descent(
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    yy: f64,
    lambda: f64,
    beta: &mut DVector<f64>,
) {
    let p = cross.len();
    let tol = CD_TOL * yy.max(f64::MIN_POSITIVE);
    // G beta, maintained incrementally.
    let mut gb = gram * &*beta;
    let all: Vec<usize> = (0..p).collect();
    let mut sweeps = 0;
    while sweeps < CD_MAX_SWEEPS {
        sweeps += 1;
        if sweep(gram, cross, lambda, beta, &mut gb, &all) < tol {
            break;
        }
        let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        while sweeps < CD_MAX_SWEEPS {
            sweeps += 1;
            if sweep(gram, cross, lambda, beta, &mut gb, &active) < tol {
                break;
            }
        }
    }
}

fn sweep(
    gram: &DMatrix<f64>,
    cross: &DVector<f64>,
    lambda: f64,
    beta: &mut DVector<f64>,
    gb: &mut DVector<f64>,
    coords: &[usize],
) -> f64 {
    let mut max_change: f64 = 0.0;
    for &j in coords {
        let gjj = gram[(j, j)];
        if gjj <= 0.0 {
            continue;
        }
        let old = beta[j];
        let rho = cross[j] - gb[j] + gjj * old;
        let new = soft_threshold(rho, lambda) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            gb.axpy(delta, &gram.column(j), 1.0);
            max_change = max_change.max(delta * delta * gjj);
        }
    }
    max_change
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `(1/2n)|y - Xb|^2 + lambda |b|_1` written in Gram form with
/// `yy = y'y / n`.
pub fn lasso_objective(gram: &DMatrix<f64>, cross: &DVector<f64>, yy: f64, lambda: f64, beta: &DVector<f64>) -> f64 {
    0.5 * (yy - 2.0 * beta.dot(cross) + beta.dot(&(gram * beta))) + lambda * beta.lp_norm(1)
}

/// Row-wise LASSO VAR(1): each `xi_{i,t}` regressed on every lagged series,
/// with the penalty chosen per equation by
/// `BIC = n ln(RSS/n) + nnz ln n` along a warm-started path.
///
/// Regressors are scaled to unit mean square within the window; the model
/// has no intercept, matching the restricted VAR.
pub fn lasso_var(xi: &DMatrix<f64>, grid: &LambdaGrid) -> Result<LassoVarFit> {
    let (n, t) = xi.shape();
    if t < 3 {
        return Err(Error::InsufficientData(format!("LASSO VAR needs T >= 3, got {t}")));
    }
    match grid {
        LambdaGrid::Explicit(values) => {
            if values.is_empty() {
                return Err(Error::param("lambda_grid", "empty grid"));
            }
            if values.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
                return Err(Error::param("lambda_grid", "penalties must be finite and non-negative"));
            }
        }
        LambdaGrid::Relative { count, ratio } => {
            if *count == 0 {
                return Err(Error::param("lambda_grid", "empty grid"));
            }
            if !(*ratio > 0.0 && *ratio <= 1.0) {
                return Err(Error::param("lambda_grid", "ratio must lie in (0, 1]"));
            }
        }
    }
    let samples = t - 1;
    let nf = samples as f64;
    let lagged = xi.columns(0, samples);
    let current = xi.columns(1, samples);
    let scale = DVector::from_fn(n, |j, _| {
        let ms = lagged.row(j).norm_squared() / nf;
        if ms > 0.0 {
            ms.sqrt()
        } else {
            1.0
        }
    });
    let mut gram = (&lagged * lagged.transpose()) / nf;
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] /= scale[i] * scale[j];
        }
    }
    let mut cross_all = (&lagged * current.transpose()) / nf;
    for j in 0..n {
        cross_all.row_mut(j).unscale_mut(scale[j]);
    }

    let rows: Vec<(DVector<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let cross = cross_all.column(i).into_owned();
            let yy = current.row(i).norm_squared() / nf;
            let lambdas = match grid {
                LambdaGrid::Explicit(values) => {
                    let mut v = values.clone();
                    v.sort_by(|a, b| b.total_cmp(a));
                    v
                }
                LambdaGrid::Relative { count, ratio } => {
                    let lmax = cross.amax();
                    log_grid(lmax, *ratio, *count)
                }
            };
            let mut beta = DVector::zeros(n);
            let mut best = (f64::INFINITY, DVector::zeros(n), lambdas[0]);
            let mut prev_rss = f64::INFINITY;
            for &lambda in &lambdas {
                lasso_coordinate_descent(&gram, &cross, yy, lambda, &mut beta);
                let quad = yy - 2.0 * beta.dot(&cross) + beta.dot(&(&gram * &beta));
                let rss = (quad * nf).max(f64::MIN_POSITIVE);
                let k = beta.iter().filter(|b| **b != 0.0).count() as f64;
                let bic = nf * (rss / nf).ln() + k * nf.ln();
                if bic < best.0 {
                    best = (bic, beta.clone(), lambda);
                }
                if k > 0.0 && prev_rss.is_finite() && (prev_rss - rss) < PATH_RSS_TOL * prev_rss {
                    break;
                }
                prev_rss = rss;
            }
            let coefs = best.1.component_div(&scale);
            (coefs, best.2)
        })
        .collect();

    let mut phi = DMatrix::zeros(n, n);
    let mut lambdas = Vec::with_capacity(n);
    for (i, (coefs, lambda)) in rows.into_iter().enumerate() {
        phi.row_mut(i).copy_from(&coefs.transpose());
        lambdas.push(lambda);
    }
    let nnz = phi.iter().filter(|v| **v != 0.0).count();
    Ok(LassoVarFit { phi, lambdas, nnz })
}

fn log_grid(lmax: f64, ratio: f64, count: usize) -> Vec<f64> {
    if count == 1 || lmax <= 0.0 {
        return vec![lmax.max(0.0)];
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    (0..count)
        .map(|k| (hi + (lo - hi) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// `mean + Lambda F_{T+1}`: the factor forecast with no idiosyncratic part.
pub fn predict_factors_only(fit: &FactorFit) -> Result<DVector<f64>> {
    Ok(&fit.mean + &fit.loadings * forecast_factors(fit)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::rng_from_seed(seed);
        DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn huge_penalty_zeroes_everything() {
        let fit = lasso_var(&noise(4, 50, 1), &LambdaGrid::Explicit(vec![1e6])).unwrap();
        assert_eq!(fit.nnz, 0);
        assert!(fit.phi.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grid_validation() {
        let x = noise(3, 20, 1);
        assert!(lasso_var(&x, &LambdaGrid::Explicit(vec![])).is_err());
        assert!(lasso_var(&x, &LambdaGrid::Explicit(vec![-1.0])).is_err());
        assert!(lasso_var(&x, &LambdaGrid::Relative { count: 0, ratio: 0.1 }).is_err());
        assert!(lasso_var(&noise(3, 2, 1), &LambdaGrid::default()).is_err());
    }

    #[test]
    fn zero_penalty_matches_ols() {
        // VAR(1) with some dynamics so the OLS solution is well away from zero.
        let (n, t) = (3, 500);
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, -0.2, 0.3, 0.1, 0.0, 0.2, 0.4]);
        let e = noise(n, t, 7);
        let mut x = DMatrix::zeros(n, t);
        for s in 1..t {
            let next = &a * x.column(s - 1) + e.column(s);
            x.set_column(s, &next);
        }
        let fit = lasso_var(&x, &LambdaGrid::Explicit(vec![0.0])).unwrap();
        let lagged = x.columns(0, t - 1).transpose();
        let current = x.columns(1, t - 1).transpose();
        let gram = lagged.tr_mul(&lagged);
        let ols = gram.lu().solve(&lagged.tr_mul(&current)).unwrap().transpose();
        assert_abs_diff_eq!(fit.phi, ols, epsilon = 1e-6);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 1e-4, 50);
        assert_eq!(g.len(), 50);
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[49], 2e-4, epsilon = 1e-15);
    }

    #[test]
    fn factors_only_hand_cases() {
        let fit = FactorFit {
            loadings: DMatrix::identity(2, 2),
            factors: DMatrix::from_element(2, 4, 1.0),
            mean: DVector::zeros(2),
            eigenvalues: vec![1.0, 1.0],
            coefs: vec![DMatrix::zeros(2, 2)],
        };
        assert_eq!(predict_factors_only(&fit).unwrap(), DVector::zeros(2));
    }
}
