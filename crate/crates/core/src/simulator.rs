//! FNIRVAR data generation, stationarity checks and population moments.
//!
//! The generative model is
//!
//! ```text
//! X_t  = Lambda F_t + xi_t
//! F_t  = sum_{k=1..l_F} P_k F_{t-k} + M u_t,     u_t ~ N(0, I_q)
//! xi_t = Phi xi_{t-1} + eps_t,                  eps_t ~ N(0, Gamma_eps)
//! ```
//!
//! where `M` is the shock mixer: the symmetric square root of `Gamma_u`
//! when it is square, otherwise `Gamma_u` itself (an `r x q` matrix).

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::panel::Panel;
use crate::rng::rng_from_seed;

pub const DEFAULT_BURN_IN: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnirvarParams {
    /// `N x r` loadings.
    pub loadings: DMatrix<f64>,
    /// `P_1, ..., P_{l_F}`, each `r x r`.
    pub factor_coefs: Vec<DMatrix<f64>>,
    /// `Gamma_u`, `r x q`.
    pub shock_cov: DMatrix<f64>,
    /// `Phi = A . Phi~`, `N x N`.
    pub phi: DMatrix<f64>,
    /// `Gamma_eps`, `N x N`.
    pub error_cov: DMatrix<f64>,
}

impl FnirvarParams {
    pub fn new(
        loadings: DMatrix<f64>,
        factor_coefs: Vec<DMatrix<f64>>,
        shock_cov: DMatrix<f64>,
        phi: DMatrix<f64>,
        error_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let p = FnirvarParams {
            loadings,
            factor_coefs,
            shock_cov,
            phi,
            error_cov,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let r = self.r();
        if self.factor_coefs.is_empty() {
            return Err(Error::param("factor_coefs", "need at least one lag"));
        }
        for (k, pk) in self.factor_coefs.iter().enumerate() {
            if pk.shape() != (r, r) {
                return Err(Error::Dimension(format!(
                    "P_{} is {:?}, expected ({r}, {r})",
                    k + 1,
                    pk.shape()
                )));
            }
        }
        if self.shock_cov.nrows() != r || self.shock_cov.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "Gamma_u is {:?}, expected ({r}, q)",
                self.shock_cov.shape()
            )));
        }
        if self.phi.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "Phi is {:?}, expected ({n}, {n})",
                self.phi.shape()
            )));
        }
        if self.error_cov.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "Gamma_eps is {:?}, expected ({n}, {n})",
                self.error_cov.shape()
            )));
        }
        if !linalg::is_symmetric(&self.error_cov, 1e-10) {
            return Err(Error::param("error_cov", "must be symmetric"));
        }
        let scale = self.error_cov.amax().max(1.0);
        if linalg::min_symmetric_eigenvalue(&self.error_cov) < -1e-10 * scale {
            return Err(Error::param("error_cov", "must be positive semi-definite"));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.loadings.nrows()
    }

    pub fn r(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn q(&self) -> usize {
        self.shock_cov.ncols()
    }

    pub fn factor_lags(&self) -> usize {
        self.factor_coefs.len()
    }

    /// Matrix applied to `u_t`.
    pub fn shock_mixer(&self) -> DMatrix<f64> {
        if self.shock_cov.is_square()
            && linalg::is_symmetric(&self.shock_cov, 1e-12)
            && linalg::min_symmetric_eigenvalue(&self.shock_cov) >= -1e-12
        {
            linalg::psd_sqrt(&self.shock_cov)
        } else {
            self.shock_cov.clone()
        }
    }
}

/// Builds the `(r l_F) x (r l_F)` companion matrix with `P_1 .. P_{l_F}` in
/// the top block row and `r x r` identities on the block sub-diagonal.
pub fn companion_matrix(factor_coefs: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = factor_coefs
        .first()
        .ok_or_else(|| Error::param("factor_coefs", "need at least one lag"))?;
    let r = first.nrows();
    let lags = factor_coefs.len();
    let mut c = DMatrix::zeros(r * lags, r * lags);
    for (k, pk) in factor_coefs.iter().enumerate() {
        if pk.shape() != (r, r) {
            return Err(Error::Dimension(format!(
                "P_{} is {:?}, expected ({r}, {r})",
                k + 1,
                pk.shape()
            )));
        }
        c.view_mut((0, k * r), (r, r)).copy_from(pk);
    }
    for k in 1..lags {
        c.view_mut((k * r, (k - 1) * r), (r, r)).fill_with_identity();
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stationarity {
    pub stationary: bool,
    pub rho_companion: f64,
    pub rho_phi: f64,
}

pub fn check_stationarity(params: &FnirvarParams) -> Result<Stationarity> {
    let rho_companion = linalg::spectral_radius(&companion_matrix(&params.factor_coefs)?);
    let rho_phi = linalg::spectral_radius(&params.phi);
    Ok(Stationarity {
        stationary: rho_companion < 1.0 && rho_phi < 1.0,
        rho_companion,
        rho_phi,
    })
}

fn require_stationary(params: &FnirvarParams) -> Result<Stationarity> {
    let s = check_stationarity(params)?;
    if !s.stationary {
        return Err(Error::NotStationary {
            rho_companion: s.rho_companion,
            rho_phi: s.rho_phi,
        });
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub x: Panel,
    /// `r x T` factor paths.
    pub factors: DMatrix<f64>,
    /// `N x T` common component `Lambda F`.
    pub common: DMatrix<f64>,
    /// `N x T` idiosyncratic component.
    pub idiosyncratic: DMatrix<f64>,
}

enum NoiseMap {
    Zero,
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl NoiseMap {
    fn for_covariance(cov: &DMatrix<f64>) -> Self {
        if cov.iter().all(|v| *v == 0.0) {
            return NoiseMap::Zero;
        }
        let n = cov.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || cov[(i, j)] == 0.0));
        if diagonal {
            NoiseMap::Diagonal(DVector::from_fn(n, |i, _| cov[(i, i)].max(0.0).sqrt()))
        } else {
            NoiseMap::Dense(linalg::psd_sqrt(cov))
        }
    }

    fn apply(&self, z: &DVector<f64>, out: &mut DVector<f64>) {
        match self {
            NoiseMap::Zero => out.fill(0.0),
            NoiseMap::Diagonal(d) => out.copy_from(&z.component_mul(d)),
            NoiseMap::Dense(m) => m.mul_to(z, out),
        }
    }
}

/// Iterates the model from a zero state, discarding `burn_in` leading steps.
///
/// At every step the `q` factor shocks are drawn before the `N`
/// idiosyncratic shocks; all draws come from a single stream seeded by
/// `seed`.
pub fn simulate(params: &FnirvarParams, t: usize, burn_in: usize, seed: u64) -> Result<SimulationOutput> {
    params.validate()?;
    require_stationary(params)?;
    if t == 0 {
        return Err(Error::param("t", "must be at least 1"));
    }
    let n = params.n();
    let r = params.r();
    let q = params.q();
    let lags = params.factor_lags();
    let mixer = params.shock_mixer();
    let noise = NoiseMap::for_covariance(&params.error_cov);
    let phi_is_zero = params.phi.iter().all(|v| *v == 0.0);

    let mut rng = rng_from_seed(seed);
    let mut draw = |len: usize| DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng));

    // Ring of the last `lags` factor vectors, most recent first.
    let mut history: Vec<DVector<f64>> = vec![DVector::zeros(r); lags];
    let mut xi = DVector::zeros(n);
    let mut xi_next = DVector::zeros(n);
    let mut eps = DVector::zeros(n);

    let mut factors = DMatrix::zeros(r, t);
    let mut idio = DMatrix::zeros(n, t);
    for step in 0..(burn_in + t) {
        let u = draw(q);
        let mut f = &mixer * u;
        for (k, pk) in params.factor_coefs.iter().enumerate() {
            f.gemv(1.0, pk, &history[k], 1.0);
        }
        history.rotate_right(1);
        history[0] = f;

        let z = draw(n);
        noise.apply(&z, &mut eps);
        if phi_is_zero {
            xi_next.copy_from(&eps);
        } else {
            params.phi.mul_to(&xi, &mut xi_next);
            xi_next += &eps;
        }
        std::mem::swap(&mut xi, &mut xi_next);

        if step >= burn_in {
            let col = step - burn_in;
            factors.set_column(col, &history[0]);
            idio.set_column(col, &xi);
        }
    }
    let common = &params.loadings * &factors;
    let x = Panel::from_matrix(&common + &idio)?;
    Ok(SimulationOutput {
        x,
        factors,
        common,
        idiosyncratic: idio,
    })
}

#[derive(Debug, Clone)]
pub struct PopulationCovariances {
    /// `Lambda Gamma_F Lambda'`.
    pub common: DMatrix<f64>,
    /// Solution of `Gamma_xi = Phi Gamma_xi Phi' + Gamma_eps`.
    pub idiosyncratic: DMatrix<f64>,
    /// Stationary factor covariance `Gamma_F`.
    pub factor: DMatrix<f64>,
}

pub fn population_covariances(params: &FnirvarParams) -> Result<PopulationCovariances> {
    params.validate()?;
    require_stationary(params)?;
    let idiosyncratic = linalg::solve_discrete_lyapunov(&params.phi, &params.error_cov)?;

    let r = params.r();
    let companion = companion_matrix(&params.factor_coefs)?;
    let dim = companion.nrows();
    let mixer = params.shock_mixer();
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (r, r)).copy_from(&(&mixer * mixer.transpose()));
    let state = linalg::solve_discrete_lyapunov(&companion, &q)?;
    let factor = state.view((0, 0), (r, r)).into_owned();
    let common = &params.loadings * &factor * params.loadings.transpose();
    Ok(PopulationCovariances {
        common,
        idiosyncratic,
        factor,
    })
}

/// `lambda_r(Gamma_chi) - lambda_max(Gamma_xi)`, with `lambda_r` the r-th
/// largest eigenvalue (the smallest nonzero one, since the rank is at most r).
pub fn eigengap(params: &FnirvarParams) -> Result<f64> {
    let cov = population_covariances(params)?;
    Ok(eigengap_from(
        &cov,
        params.r(),
        params.loadings.iter().any(|v| *v != 0.0),
    ))
}

pub(crate) fn eigengap_from(cov: &PopulationCovariances, r: usize, loadings_nonzero: bool) -> f64 {
    let chi = linalg::symmetric_eigen_desc(&cov.common).values;
    let xi_max = linalg::symmetric_eigen_desc(&cov.idiosyncratic).values[0];
    let lambda_r = chi.get(r.saturating_sub(1)).copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-12 * chi.first().copied().unwrap_or(0.0).abs().max(1.0);
    if loadings_nonzero && chi.first().copied().unwrap_or(0.0) <= tol {
        log::warn!("common covariance has numerical rank 0 although the loadings are nonzero");
    }
    lambda_r - xi_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_params(lambda: f64, p: &[f64], phi: f64, shock: f64, eps: f64) -> FnirvarParams {
        FnirvarParams::new(
            DMatrix::from_element(1, 1, lambda),
            p.iter().map(|v| DMatrix::from_element(1, 1, *v)).collect(),
            DMatrix::from_element(1, 1, shock),
            DMatrix::from_element(1, 1, phi),
            DMatrix::from_element(1, 1, eps),
        )
        .unwrap()
    }

    #[test]
    fn companion_of_single_lag_is_itself() {
        let p1 = DMatrix::from_row_slice(2, 2, &[0.3, 0.1, -0.2, 0.4]);
        assert_eq!(companion_matrix(std::slice::from_ref(&p1)).unwrap(), p1);
    }

    #[test]
    fn scalar_companion() {
        let c = companion_matrix(&[DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.2)]).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 1.0, 0.0]));
    }

    #[test]
    fn companion_rejects_mixed_sizes() {
        assert!(companion_matrix(&[DMatrix::identity(2, 2), DMatrix::identity(3, 3)]).is_err());
        assert!(companion_matrix(&[]).is_err());
    }

    #[test]
    fn stationarity_boundaries() {
        let ok = scalar_params(1.0, &[0.7], 0.9, 1.0, 1.0);
        let s = check_stationarity(&ok).unwrap();
        assert!(s.stationary);
        assert_abs_diff_eq!(s.rho_companion, 0.7, epsilon = 1e-12);
        let unit = scalar_params(1.0, &[0.7], 1.0, 1.0, 1.0);
        assert!(!check_stationarity(&unit).unwrap().stationary);
        let white = scalar_params(0.0, &[0.0], 0.0, 1.0, 1.0);
        assert!(check_stationarity(&white).unwrap().stationary);
        match simulate(&unit, 10, 0, 1) {
            Err(Error::NotStationary { rho_phi, .. }) => assert_abs_diff_eq!(rho_phi, 1.0, epsilon = 1e-12),
            other => panic!("expected refusal, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_simulation_is_zero() {
        let p = scalar_params(2.0, &[0.5, 0.2], 0.5, 0.0, 0.0);
        let out = simulate(&p, 50, 10, 3).unwrap();
        assert!(out.x.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_loadings_give_pure_idiosyncratic_panel() {
        let p = FnirvarParams::new(
            DMatrix::zeros(3, 2),
            vec![DMatrix::identity(2, 2) * 0.5],
            DMatrix::identity(2, 2),
            DMatrix::identity(3, 3) * 0.3,
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let out = simulate(&p, 40, 5, 9).unwrap();
        assert_eq!(out.x.values(), &out.idiosyncratic);
    }

    #[test]
    fn reconstruction_identity() {
        let p = FnirvarParams::new(
            DMatrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64 * 0.3 - 0.5),
            vec![DMatrix::identity(2, 2) * 0.4, DMatrix::identity(2, 2) * 0.1],
            DMatrix::identity(2, 2),
            DMatrix::identity(4, 4) * 0.5,
            DMatrix::identity(4, 4),
        )
        .unwrap();
        let out = simulate(&p, 100, 20, 4).unwrap();
        assert_eq!(out.common, &p.loadings * &out.factors);
        let diff = out.x.values() - (&out.common + &out.idiosyncratic);
        assert!(diff.amax() <= 1e-12);
        // Same seed, same path.
        assert_eq!(simulate(&p, 100, 20, 4).unwrap().x, out.x);
    }

    #[test]
    fn rectangular_shock_matrix_is_used_as_mixer() {
        let mixer = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 2.0, 0.0]);
        let p = FnirvarParams::new(
            DMatrix::identity(2, 2),
            vec![DMatrix::zeros(2, 2)],
            mixer.clone(),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(p.shock_mixer(), mixer);
        let cov = population_covariances(&p).unwrap();
        assert_abs_diff_eq!(cov.factor, &mixer * mixer.transpose(), epsilon = 1e-14);
    }

    #[test]
    fn scalar_population_covariance() {
        let p = scalar_params(1.0, &[0.0], 0.5, 1.0, 1.0);
        let cov = population_covariances(&p).unwrap();
        assert_abs_diff_eq!(cov.idiosyncratic[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        let p = scalar_params(1.0, &[0.0], 0.0, 1.0, 2.5);
        assert_abs_diff_eq!(
            population_covariances(&p).unwrap().idiosyncratic[(0, 0)],
            2.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn eigengap_closed_forms() {
        // Lambda = sqrt(c) e1 with Gamma_F = 1, Phi = 0, Gamma_eps = I.
        let c: f64 = 6.0;
        let mut lambda = DMatrix::zeros(3, 1);
        lambda[(0, 0)] = c.sqrt();
        let p = FnirvarParams::new(
            lambda,
            vec![DMatrix::zeros(1, 1)],
            DMatrix::identity(1, 1),
            DMatrix::zeros(3, 3),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        assert_abs_diff_eq!(eigengap(&p).unwrap(), c - 1.0, epsilon = 1e-12);

        let p0 = FnirvarParams::new(
            DMatrix::zeros(2, 1),
            vec![DMatrix::zeros(1, 1)],
            DMatrix::identity(1, 1),
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_abs_diff_eq!(eigengap(&p0).unwrap(), -4.0 / 3.0, epsilon = 1e-12);
    }
}
