//! Parameter recipes for the three simulation studies.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, Adjacency, BlockModelSpec, CommunityAssignment};
use crate::linalg;
use crate::rng::{stream_rng, Stream};
use crate::simulator::{companion_matrix, FnirvarParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    /// Factors plus a planted 4-block network VAR.
    NetworkFactor,
    /// Pure factor model without idiosyncratic component.
    FactorOnly,
    /// Single strong factor plus a 5-block network VAR, for the eigenvalue
    /// growth experiment.
    Eigengap,
}

impl std::str::FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "network_factor" => Ok(Study::NetworkFactor),
            "factor_only" => Ok(Study::FactorOnly),
            "eigengap" => Ok(Study::Eigengap),
            other => Err(Error::param("study", format!("unknown study `{other}`"))),
        }
    }
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Study::NetworkFactor => "network_factor",
            Study::FactorOnly => "factor_only",
            Study::Eigengap => "eigengap",
        })
    }
}

/// How the factor VAR coefficients are rescaled to hit a target `rho(P*)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompanionScaling {
    /// `P_k <- P_k * target / rho(P*)`. Exact for one lag; with more lags the
    /// resulting spectral radius differs from the target.
    Proportional,
    /// `P_k <- c^k P_k` with `c = target / rho(P*)`, which scales every
    /// companion eigenvalue by `c`, so `rho(P*) = target` exactly.
    Exact,
}

/// Optional overrides of any recipe value. Unset fields take the study's
/// default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpOverrides {
    pub factors: Option<usize>,
    pub shocks: Option<usize>,
    pub factor_lags: Option<usize>,
    pub blocks: Option<usize>,
    pub within_prob: Option<f64>,
    pub between_prob: Option<f64>,
    pub rho_companion: Option<f64>,
    pub rho_phi: Option<f64>,
    pub companion_scaling: Option<CompanionScaling>,
    /// Variance of the loading distribution (`sigma_Lambda^2`).
    pub loading_variance: Option<f64>,
    /// Diagonal of `Gamma_eps`.
    pub error_variance: Option<f64>,
    pub symmetrize_weights: Option<bool>,
}

/// Fully resolved recipe, echoed into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSettings {
    pub study: Study,
    pub n: usize,
    pub factors: usize,
    pub shocks: usize,
    pub factor_lags: usize,
    /// Zero for the pure factor study.
    pub blocks: usize,
    pub within_prob: f64,
    pub between_prob: f64,
    pub rho_companion: f64,
    pub rho_phi: f64,
    pub companion_scaling: CompanionScaling,
    pub loading_variance: f64,
    pub error_variance: f64,
    pub symmetrize_weights: bool,
}

/// Default loading variance for the two prediction studies. Loadings are
/// `N(0, sigma^2)`; the value sets the common-innovation share of each
/// series' one-step variance (`r * sigma^2`).
pub const PREDICTION_LOADING_VARIANCE: f64 = 0.16;
pub const PURE_FACTOR_LOADING_VARIANCE: f64 = 0.25;
pub const EIGENGAP_LOADING_VARIANCE: f64 = 9e-3;

impl DgpSettings {
    pub fn resolve(study: Study, n: usize, o: &DgpOverrides) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        let base = match study {
            Study::NetworkFactor => DgpSettings {
                study,
                n,
                factors: 5,
                shocks: 5,
                factor_lags: 2,
                blocks: 4,
                within_prob: 0.9,
                between_prob: 0.1,
                rho_companion: 0.7,
                rho_phi: 0.9,
                companion_scaling: CompanionScaling::Proportional,
                loading_variance: PREDICTION_LOADING_VARIANCE,
                error_variance: 1.0,
                symmetrize_weights: false,
            },
            Study::FactorOnly => DgpSettings {
                study,
                n,
                factors: 5,
                shocks: 5,
                factor_lags: 2,
                blocks: 0,
                within_prob: 0.0,
                between_prob: 0.0,
                rho_companion: 0.7,
                rho_phi: 0.0,
                companion_scaling: CompanionScaling::Proportional,
                loading_variance: PURE_FACTOR_LOADING_VARIANCE,
                error_variance: 0.0,
                symmetrize_weights: false,
            },
            Study::Eigengap => DgpSettings {
                study,
                n,
                factors: 1,
                shocks: 1,
                factor_lags: 5,
                blocks: 5,
                within_prob: 0.95,
                between_prob: 0.01,
                rho_companion: 0.6,
                rho_phi: 0.9,
                companion_scaling: CompanionScaling::Proportional,
                loading_variance: EIGENGAP_LOADING_VARIANCE,
                error_variance: 1.0,
                symmetrize_weights: true,
            },
        };
        let s = DgpSettings {
            study,
            n,
            factors: o.factors.unwrap_or(base.factors),
            shocks: o.shocks.unwrap_or(base.shocks),
            factor_lags: o.factor_lags.unwrap_or(base.factor_lags),
            blocks: o.blocks.unwrap_or(base.blocks),
            within_prob: o.within_prob.unwrap_or(base.within_prob),
            between_prob: o.between_prob.unwrap_or(base.between_prob),
            rho_companion: o.rho_companion.unwrap_or(base.rho_companion),
            rho_phi: o.rho_phi.unwrap_or(base.rho_phi),
            companion_scaling: o.companion_scaling.unwrap_or(base.companion_scaling),
            loading_variance: o.loading_variance.unwrap_or(base.loading_variance),
            error_variance: o.error_variance.unwrap_or(base.error_variance),
            symmetrize_weights: o.symmetrize_weights.unwrap_or(base.symmetrize_weights),
        };
        if s.factors == 0 || s.shocks == 0 || s.factor_lags == 0 {
            return Err(Error::param(
                "factors",
                "factor count, shock count and lags must be positive",
            ));
        }
        if !(s.rho_companion > 0.0 && s.rho_companion < 1.0) {
            return Err(Error::param("rho_companion", "must lie in (0, 1)"));
        }
        if s.blocks > 0 && !(s.rho_phi > 0.0 && s.rho_phi < 1.0) {
            return Err(Error::param("rho_phi", "must lie in (0, 1)"));
        }
        if s.loading_variance < 0.0 || s.error_variance < 0.0 {
            return Err(Error::param("loading_variance", "variances must be non-negative"));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone)]
pub struct StudyDgp {
    pub settings: DgpSettings,
    pub params: FnirvarParams,
    /// Planted block labels (absent for the pure factor study).
    pub labels: Option<CommunityAssignment>,
    pub adjacency: Option<Adjacency>,
}

/// Builds the parameter set for `study` at cross-section size `n`. All
/// randomness (labels, edges, weights, loadings, random VAR coefficients)
/// is derived from `seed`.
pub fn make_study_dgp(study: Study, n: usize, overrides: &DgpOverrides, seed: u64) -> Result<StudyDgp> {
    let s = DgpSettings::resolve(study, n, overrides)?;
    let r = s.factors;

    let raw_coefs: Vec<DMatrix<f64>> = match study {
        Study::NetworkFactor | Study::FactorOnly => {
            let m = DMatrix::from_fn(r, r, |i, j| if i == j { 1.0 } else { -0.2 });
            vec![m; s.factor_lags]
        }
        Study::Eigengap => {
            let mut rng = stream_rng(seed, Stream::FactorVar, 0);
            let normal = Normal::new(0.0, 0.1f64.sqrt()).expect("valid normal");
            (0..s.factor_lags)
                .map(|_| DMatrix::from_fn(r, r, |_, _| normal.sample(&mut rng)))
                .collect()
        }
    };
    let factor_coefs = rescale_factor_var(&raw_coefs, s.rho_companion, s.companion_scaling)?;

    let loadings = {
        let mut rng = stream_rng(seed, Stream::Loadings, 0);
        let sd = s.loading_variance.sqrt();
        let normal = Normal::new(0.0, sd).expect("valid normal");
        match study {
            Study::Eigengap => {
                // 0.5 N(1, s^2) + 0.5 N(-1, s^2)
                DMatrix::from_fn(n, r, |_, _| {
                    let sign = if rand::Rng::random::<bool>(&mut rng) { 1.0 } else { -1.0 };
                    sign + normal.sample(&mut rng)
                })
            }
            _ => DMatrix::from_fn(n, r, |_, _| normal.sample(&mut rng)),
        }
    };

    let (phi, labels, adjacency) = if s.blocks == 0 {
        (DMatrix::zeros(n, n), None, None)
    } else {
        let spec = BlockModelSpec::planted(s.blocks, s.within_prob, s.between_prob)?;
        let z = graph::sample_assignments(&spec, n, crate::rng::derive_seed(seed, Stream::Assignments, 0))?;
        let a = graph::sample_adjacency(&spec, &z, crate::rng::derive_seed(seed, Stream::Adjacency, 0))?;
        let w = graph::sample_weights(
            &z,
            s.symmetrize_weights,
            crate::rng::derive_seed(seed, Stream::Weights, 0),
        );
        let phi = graph::build_phi(&a, &w, s.rho_phi)?;
        (phi, Some(z), Some(a))
    };

    let params = FnirvarParams::new(
        loadings,
        factor_coefs,
        DMatrix::identity(r, s.shocks),
        phi,
        DMatrix::identity(n, n) * s.error_variance,
    )?;
    Ok(StudyDgp {
        settings: s,
        params,
        labels,
        adjacency,
    })
}

pub fn rescale_factor_var(coefs: &[DMatrix<f64>], target: f64, scaling: CompanionScaling) -> Result<Vec<DMatrix<f64>>> {
    let rho = linalg::spectral_radius(&companion_matrix(coefs)?);
    if !(rho > 1e-300) {
        return Err(Error::ZeroSpectralRadius);
    }
    let c = target / rho;
    Ok(match scaling {
        CompanionScaling::Proportional => coefs.iter().map(|p| p * c).collect(),
        CompanionScaling::Exact => coefs
            .iter()
            .enumerate()
            .map(|(k, p)| p * c.powi(k as i32 + 1))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::check_stationarity;
    use approx::assert_abs_diff_eq;

    #[test]
    fn network_factor_recipe() {
        let d = make_study_dgp(Study::NetworkFactor, 100, &DgpOverrides::default(), 1).unwrap();
        assert_eq!(d.settings.blocks, 4);
        assert_eq!((d.params.r(), d.params.q(), d.params.factor_lags()), (5, 5, 2));
        let st = check_stationarity(&d.params).unwrap();
        assert_abs_diff_eq!(st.rho_phi, 0.9, epsilon = 1e-8);
        assert!(st.stationary);
        let p1 = &d.params.factor_coefs[0];
        assert_abs_diff_eq!(p1[(0, 1)] / p1[(0, 0)], -0.2, epsilon = 1e-12);
        assert_eq!(d.labels.as_ref().unwrap().len(), 100);
    }

    #[test]
    fn exact_scaling_hits_target() {
        let o = DgpOverrides {
            companion_scaling: Some(CompanionScaling::Exact),
            ..Default::default()
        };
        let d = make_study_dgp(Study::NetworkFactor, 30, &o, 2).unwrap();
        let st = check_stationarity(&d.params).unwrap();
        assert_abs_diff_eq!(st.rho_companion, 0.7, epsilon = 1e-10);
    }

    #[test]
    fn proportional_scaling_is_exact_for_one_lag() {
        let p = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0])];
        let scaled = rescale_factor_var(&p, 0.7, CompanionScaling::Proportional).unwrap();
        assert_abs_diff_eq!(linalg::spectral_radius(&scaled[0]), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn factor_only_has_no_idiosyncratic_part() {
        let d = make_study_dgp(Study::FactorOnly, 100, &DgpOverrides::default(), 3).unwrap();
        assert!(d.params.phi.iter().all(|v| *v == 0.0));
        assert!(d.params.error_cov.iter().all(|v| *v == 0.0));
        assert!(d.labels.is_none());
        assert_eq!((d.params.r(), d.params.q(), d.params.factor_lags()), (5, 5, 2));
    }

    #[test]
    fn eigengap_recipe() {
        let d = make_study_dgp(Study::Eigengap, 50, &DgpOverrides::default(), 4).unwrap();
        assert_eq!((d.params.r(), d.params.factor_lags(), d.settings.blocks), (1, 5, 5));
        assert_eq!(d.settings.within_prob, 0.95);
        assert_eq!(d.settings.between_prob, 0.01);
        let st = check_stationarity(&d.params).unwrap();
        assert_abs_diff_eq!(st.rho_phi, 0.9, epsilon = 1e-8);
        assert!(st.stationary);
    }

    #[test]
    fn unknown_study_and_bad_overrides() {
        assert!("table9".parse::<Study>().is_err());
        let o = DgpOverrides {
            rho_companion: Some(1.2),
            ..Default::default()
        };
        assert!(make_study_dgp(Study::NetworkFactor, 10, &o, 0).is_err());
    }
}
