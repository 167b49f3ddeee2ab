//! Static factor model: PCA loadings and factors, factor VAR fitting and
//! forecasting, and order selection.
//!
//! The panel is demeaned per series over the estimation window before PCA.
//! The window mean is carried in [`FactorFit::mean`] and folded into the
//! common component by [`decompose`], so `chi + xi` reproduces the input.
//!
//! Factor VAR coefficients are ordered most-recent-lag first: `coefs[k]`
//! multiplies `F_{t-1-k}` when predicting `F_t`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorFit {
    /// `N x r` loadings with orthonormal columns.
    pub loadings: DMatrix<f64>,
    /// `r x T` estimated factors `E'(x_t - mean)`.
    pub factors: DMatrix<f64>,
    /// Per-series mean over the estimation window.
    pub mean: DVector<f64>,
    /// Top-`r` eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Fitted `P_1 .. P_{l_F}`, empty until a factor VAR is attached.
    pub coefs: Vec<DMatrix<f64>>,
}

impl FactorFit {
    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn lags(&self) -> usize {
        self.coefs.len()
    }

    /// `E'(x - mean)` for a new observation.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.loadings.tr_mul(&(x - &self.mean))
    }

    /// `P` stacked as `(P_1'; ...; P_{l_F}')`, the `(r l_F) x r` coefficient
    /// block of the least-squares problem `Y_F = X_F P`.
    pub fn stacked_coefs(&self) -> DMatrix<f64> {
        stack_coefs(&self.coefs)
    }
}

fn centered(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let t = x.ncols() as f64;
    let mean = DVector::from_fn(x.nrows(), |i, _| x.row(i).sum() / t);
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        col -= &mean;
    }
    (xc, mean)
}

fn sample_covariance(xc: &DMatrix<f64>) -> DMatrix<f64> {
    (xc * xc.transpose()) / xc.ncols() as f64
}

/// PCA on `X X' / T` of the demeaned `N x T` panel.
pub fn estimate_pca(x: &DMatrix<f64>, r: usize) -> Result<FactorFit> {
    let (n, t) = x.shape();
    if r == 0 || r > n.min(t) {
        return Err(Error::param("r", format!("must lie in 1..={}, got {r}", n.min(t))));
    }
    let (xc, mean) = centered(x);
    let eig = linalg::symmetric_eigen_desc(&sample_covariance(&xc));
    let loadings = eig.vectors.columns(0, r).into_owned();
    let factors = loadings.tr_mul(&xc);
    Ok(FactorFit {
        loadings,
        factors,
        mean,
        eigenvalues: eig.values[..r].to_vec(),
        coefs: Vec::new(),
    })
}

/// Mean squared PCA residual `V(k)` for `k = 0..=n`, computed from the
/// eigenvalues of the sample covariance.
pub fn pca_residual_variances(x: &DMatrix<f64>) -> Vec<f64> {
    let (xc, _) = centered(x);
    let values = linalg::symmetric_eigen_desc(&sample_covariance(&xc)).values;
    let n = values.len() as f64;
    let mut tail: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut out = Vec::with_capacity(values.len() + 1);
    out.push(tail / n);
    for v in &values {
        tail -= v.max(0.0);
        out.push(tail.max(0.0) / n);
    }
    out
}

/// Bai-Ng PCp2: `V(k) + k sigma^2 (N+T)/(NT) ln(min(N,T))` with
/// `sigma^2 = V(r_max)`, minimised over `k = 1..=r_max`. Residual
/// variances below `1e-10 V(0)` count as zero, so a panel of exact rank `r`
/// selects `r`.
pub fn select_num_factors(x: &DMatrix<f64>, r_max: usize) -> Result<usize> {
    let (n, t) = x.shape();
    if r_max == 0 || r_max > n.min(t) {
        return Err(Error::param(
            "r_max",
            format!("must lie in 1..={}, got {r_max}", n.min(t)),
        ));
    }
    let mut v = pca_residual_variances(x);
    let floor = 1e-10 * v[0];
    for e in v.iter_mut() {
        if *e < floor {
            *e = 0.0;
        }
    }
    let (nf, tf) = (n as f64, t as f64);
    let penalty = v[r_max] * ((nf + tf) / (nf * tf)) * nf.min(tf).ln();
    let mut best = 1;
    let mut best_ic = f64::INFINITY;
    for k in 1..=r_max {
        let ic = v[k] + k as f64 * penalty;
        if ic < best_ic {
            best_ic = ic;
            best = k;
        }
    }
    Ok(best)
}

fn stack_coefs(coefs: &[DMatrix<f64>]) -> DMatrix<f64> {
    if coefs.is_empty() {
        return DMatrix::zeros(0, 0);
    }
    let r = coefs[0].nrows();
    let mut out = DMatrix::zeros(r * coefs.len(), r);
    for (k, p) in coefs.iter().enumerate() {
        out.view_mut((k * r, 0), (r, r)).copy_from(&p.transpose());
    }
    out
}

/// Regression design for a VAR(`lags`) on columns `start..T` of `f`
/// (`start >= lags`): returns `(Y, X)` with rows indexed by target time,
/// `Y` holding `F_t'` and `X` holding `(F_{t-1}', ..., F_{t-lags}')`.
fn var_design(f: &DMatrix<f64>, lags: usize, start: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (r, t) = f.shape();
    let rows = t - start;
    let mut y = DMatrix::zeros(rows, r);
    let mut x = DMatrix::zeros(rows, r * lags);
    for (row, tt) in (start..t).enumerate() {
        for i in 0..r {
            y[(row, i)] = f[(i, tt)];
        }
        for k in 0..lags {
            for i in 0..r {
                x[(row, k * r + i)] = f[(i, tt - 1 - k)];
            }
        }
    }
    (y, x)
}

fn ols_coefs(y: &DMatrix<f64>, x: &DMatrix<f64>, lags: usize) -> Result<Vec<DMatrix<f64>>> {
    let gram = x.tr_mul(x);
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "factor VAR Gram matrix is singular at l_F = {lags}; try a smaller l_F"
        ))
    })?;
    let b = chol.solve(&x.tr_mul(y));
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!(
            "factor VAR solution is not finite at l_F = {lags}; try a smaller l_F"
        )));
    }
    let r = y.ncols();
    Ok((0..lags).map(|k| b.view((k * r, 0), (r, r)).transpose()).collect())
}

/// Least-squares VAR(`lags`) fit of the `r x T` factor paths.
pub fn fit_factor_var(f: &DMatrix<f64>, lags: usize) -> Result<Vec<DMatrix<f64>>> {
    let (r, t) = f.shape();
    if lags == 0 {
        return Err(Error::param("l_F", "must be at least 1"));
    }
    if t <= r * lags + 1 {
        return Err(Error::InsufficientData(format!(
            "factor VAR with r = {r}, l_F = {lags} needs T > {}, got {t}",
            r * lags + 1
        )));
    }
    let (y, x) = var_design(f, lags, lags);
    ols_coefs(&y, &x, lags)
}

/// AIC order selection `ln det(Sigma_l) + 2 l r^2 / T_eff` over
/// `l = 1..=l_max`, all fitted on the common sample starting at `l_max`.
pub fn select_var_order(f: &DMatrix<f64>, l_max: usize) -> Result<usize> {
    let (r, t) = f.shape();
    if l_max == 0 {
        return Err(Error::param("l_max", "must be at least 1"));
    }
    if l_max == 1 {
        return Ok(1);
    }
    if t <= l_max + r * l_max + 1 {
        return Err(Error::InsufficientData(format!(
            "AIC with l_max = {l_max} needs T > {}, got {t}",
            l_max + r * l_max + 1
        )));
    }
    let t_eff = (t - l_max) as f64;
    let mut best = 1;
    let mut best_aic = f64::INFINITY;
    for l in 1..=l_max {
        let (y, x) = var_design(f, l, l_max);
        let coefs = match ols_coefs(&y, &x, l) {
            Ok(c) => c,
            Err(_) => break,
        };
        let resid = &y - &x * stack_coefs(&coefs);
        let sigma = resid.tr_mul(&resid) / t_eff;
        let det = sigma.determinant();
        if !(det > 0.0) {
            break;
        }
        let aic = det.ln() + 2.0 * (l * r * r) as f64 / t_eff;
        if aic < best_aic {
            best_aic = aic;
            best = l;
        }
    }
    Ok(best)
}

/// `sum_k P_k F_{T+1-k}` given `history` ordered most recent first.
pub fn forecast_with(coefs: &[DMatrix<f64>], history: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = coefs
        .first()
        .ok_or_else(|| Error::param("coefs", "no factor VAR attached"))?;
    if history.len() < coefs.len() {
        return Err(Error::InsufficientData(format!(
            "forecast needs {} trailing factor observations, got {}",
            coefs.len(),
            history.len()
        )));
    }
    let mut out = DVector::zeros(first.nrows());
    for (p, f) in coefs.iter().zip(history) {
        out.gemv(1.0, p, f, 1.0);
    }
    Ok(out)
}

/// One-step-ahead factor forecast from the end of the fitted sample.
pub fn forecast_factors(fit: &FactorFit) -> Result<DVector<f64>> {
    let t = fit.factors.ncols();
    let lags = fit.lags();
    if lags > t {
        return Err(Error::InsufficientData(format!(
            "forecast needs {lags} trailing factor observations, got {t}"
        )));
    }
    let history: Vec<DVector<f64>> = (0..lags).map(|k| fit.factors.column(t - 1 - k).into_owned()).collect();
    forecast_with(&fit.coefs, &history)
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    /// `mean + Lambda F`.
    pub common: DMatrix<f64>,
    /// `X - common`.
    pub idiosyncratic: DMatrix<f64>,
}

/// Splits `x` into common and idiosyncratic parts using `fit`'s loadings
/// and mean. Factors are recomputed from `x`, so `x` may differ from the
/// fitting window.
pub fn decompose(x: &DMatrix<f64>, fit: &FactorFit) -> Result<Decomposition> {
    if x.nrows() != fit.loadings.nrows() {
        return Err(Error::Dimension(format!(
            "panel has {} series, loadings have {}",
            x.nrows(),
            fit.loadings.nrows()
        )));
    }
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        col -= &fit.mean;
    }
    let mut common = &fit.loadings * fit.loadings.tr_mul(&xc);
    for mut col in common.column_iter_mut() {
        col += &fit.mean;
    }
    let idiosyncratic = x - &common;
    Ok(Decomposition { common, idiosyncratic })
}

/// Number of factors: fixed or Bai-Ng with an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderChoice {
    Fixed(usize),
    Auto { max: usize },
}

impl OrderChoice {
    pub fn parse(value: &str, max: usize) -> std::result::Result<Self, String> {
        if value == "auto" {
            Ok(OrderChoice::Auto { max })
        } else {
            value
                .parse::<usize>()
                .map(OrderChoice::Fixed)
                .map_err(|_| format!("expected `auto` or an integer, got `{value}`"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorOptions {
    pub factors: OrderChoice,
    pub lags: OrderChoice,
}

impl Default for FactorOptions {
    fn default() -> Self {
        FactorOptions {
            factors: OrderChoice::Auto { max: 8 },
            lags: OrderChoice::Auto { max: 5 },
        }
    }
}

/// PCA plus factor VAR with the requested (or selected) orders.
pub fn fit_factor_model(x: &DMatrix<f64>, options: &FactorOptions) -> Result<FactorFit> {
    let (n, t) = x.shape();
    let r = match options.factors {
        OrderChoice::Fixed(r) => r,
        OrderChoice::Auto { max } => select_num_factors(x, max.min(n.min(t)))?,
    };
    let mut fit = estimate_pca(x, r)?;
    let lags = match options.lags {
        OrderChoice::Fixed(l) => l,
        OrderChoice::Auto { max } => select_var_order(&fit.factors, max)?,
    };
    fit.coefs = fit_factor_var(&fit.factors, lags)?;
    Ok(fit)
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
    fn rank_one_panel_is_reconstructed() {
        let u = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let v = DVector::from_fn(40, |j, _| ((j * 7) as f64).sin());
        let x = &u * v.transpose();
        let fit = estimate_pca(&x, 1).unwrap();
        let d = decompose(&x, &fit).unwrap();
        assert!(linalg::relative_frobenius(&d.common, &x) < 1e-10);
    }

    #[test]
    fn full_rank_leaves_no_residual() {
        let x = noise(5, 30, 1);
        let fit = estimate_pca(&x, 5).unwrap();
        let d = decompose(&x, &fit).unwrap();
        assert!(d.idiosyncratic.amax() < 1e-12);
        assert!(estimate_pca(&x, 6).is_err());
        assert!(estimate_pca(&x, 0).is_err());
    }

    #[test]
    fn loadings_are_orthonormal_and_residual_is_orthogonal() {
        let x = noise(12, 80, 2);
        let fit = estimate_pca(&x, 3).unwrap();
        let gram = fit.loadings.tr_mul(&fit.loadings);
        assert_abs_diff_eq!(gram, DMatrix::identity(3, 3), epsilon = 1e-10);
        let d = decompose(&x, &fit).unwrap();
        assert!(fit.loadings.tr_mul(&d.idiosyncratic).amax() < 1e-10);
        let sum = &d.common + &d.idiosyncratic;
        assert!((sum - &x).amax() < 1e-12);
    }

    #[test]
    fn pythagoras_on_demeaned_panel() {
        let mut x = noise(10, 60, 3);
        for i in 0..10 {
            let m = x.row(i).mean();
            x.row_mut(i).add_scalar_mut(-m);
        }
        let fit = estimate_pca(&x, 4).unwrap();
        let d = decompose(&x, &fit).unwrap();
        let lhs = x.norm_squared();
        let rhs = d.common.norm_squared() + d.idiosyncratic.norm_squared();
        assert!((lhs - rhs).abs() / lhs < 1e-8);
    }

    #[test]
    fn pca_is_bit_deterministic() {
        let x = noise(15, 50, 4);
        assert_eq!(estimate_pca(&x, 3).unwrap(), estimate_pca(&x, 3).unwrap());
    }

    #[test]
    fn residual_variance_is_non_increasing() {
        let v = pca_residual_variances(&noise(8, 40, 5));
        assert!(v.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(v[8].abs() < 1e-12);
    }

    #[test]
    fn single_candidate_factor_count() {
        assert_eq!(select_num_factors(&noise(5, 30, 6), 1).unwrap(), 1);
    }

    #[test]
    fn noise_panel_selects_one_factor() {
        assert_eq!(select_num_factors(&noise(50, 400, 7), 8).unwrap(), 1);
    }

    #[test]
    fn exact_scalar_recursion() {
        let mut f = DMatrix::zeros(1, 30);
        f[(0, 0)] = 1.0;
        for t in 1..30 {
            f[(0, t)] = 0.5 * f[(0, t - 1)];
        }
        let p = fit_factor_var(&f, 1).unwrap();
        assert_abs_diff_eq!(p[0][(0, 0)], 0.5, epsilon = 1e-10);
    }

    #[test]
    fn singular_factor_var_suggests_smaller_order() {
        let f = DMatrix::from_element(1, 20, 1.0);
        match fit_factor_var(&f, 2) {
            Err(Error::Singular(msg)) => assert!(msg.contains("smaller")),
            other => panic!("expected singular error, got {other:?}"),
        }
        assert!(fit_factor_var(&DMatrix::zeros(2, 4), 2).is_err());
    }

    #[test]
    fn forecast_hand_cases() {
        let fit = FactorFit {
            loadings: DMatrix::identity(1, 1),
            factors: DMatrix::from_element(1, 3, 2.0),
            mean: DVector::zeros(1),
            eigenvalues: vec![1.0],
            coefs: vec![DMatrix::from_element(1, 1, 0.5)],
        };
        assert_abs_diff_eq!(forecast_factors(&fit).unwrap()[0], 1.0, epsilon = 1e-15);
        let zero = FactorFit {
            coefs: vec![DMatrix::zeros(1, 1)],
            ..fit.clone()
        };
        assert_eq!(forecast_factors(&zero).unwrap()[0], 0.0);
        let deep = FactorFit {
            coefs: vec![DMatrix::zeros(1, 1); 4],
            ..fit
        };
        assert!(forecast_factors(&deep).is_err());
    }

    #[test]
    fn forecast_two_lags_matches_loop() {
        let p1 = DMatrix::from_row_slice(2, 2, &[0.3, -0.1, 0.2, 0.4]);
        let p2 = DMatrix::from_row_slice(2, 2, &[-0.05, 0.1, 0.0, 0.15]);
        let f = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.25, -1.0]);
        let fit = FactorFit {
            loadings: DMatrix::identity(2, 2),
            factors: f.clone(),
            mean: DVector::zeros(2),
            eigenvalues: vec![1.0, 1.0],
            coefs: vec![p1.clone(), p2.clone()],
        };
        let got = forecast_factors(&fit).unwrap();
        for i in 0..2 {
            let mut expected = 0.0;
            for j in 0..2 {
                expected += p1[(i, j)] * f[(j, 2)] + p2[(i, j)] * f[(j, 1)];
            }
            assert_abs_diff_eq!(got[i], expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn order_choice_parsing() {
        assert_eq!(OrderChoice::parse("auto", 8).unwrap(), OrderChoice::Auto { max: 8 });
        assert_eq!(OrderChoice::parse("3", 8).unwrap(), OrderChoice::Fixed(3));
        assert!(OrderChoice::parse("x", 8).is_err());
        assert_eq!(select_var_order(&noise(2, 50, 1), 1).unwrap(), 1);
    }
}
