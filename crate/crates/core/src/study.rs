//! Eigenvalue growth of the common and idiosyncratic sample covariances as
//! the cross-section grows.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{make_study_dgp, DgpOverrides, Study};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Stream};
use crate::simulator::{simulate, DEFAULT_BURN_IN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigengapConfig {
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub t: usize,
    pub burn_in: usize,
    /// `sigma_Lambda^2` of the loading mixture.
    pub loading_variance: f64,
    pub seed: u64,
}

impl Default for EigengapConfig {
    fn default() -> Self {
        EigengapConfig {
            n_grid: vec![50, 100, 200, 400],
            replicates: 20,
            t: 1000,
            burn_in: DEFAULT_BURN_IN,
            loading_variance: crate::dgp::EIGENGAP_LOADING_VARIANCE,
            seed: 0,
        }
    }
}

/// Eigenvalues for one replicate. `common` and `idio` refer to sample
/// covariances of the simulated components; `pca_*` to the leading
/// eigenvalues of the sample covariance of the observed panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigengapRow {
    pub n: usize,
    pub replicate: usize,
    pub lambda_max_common: f64,
    /// Smallest of the `r` nonzero eigenvalues.
    pub lambda_min_common: f64,
    pub lambda_max_idio: f64,
    pub lambda_min_idio: f64,
    pub pca_first: f64,
    pub pca_second: f64,
}

/// Demeaned `M M' / T`.
fn sample_cov(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.ncols() as f64;
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        let mean = row.sum() / t;
        row.add_scalar_mut(-mean);
    }
    (&c * c.transpose()) / t
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Simulates `replicates` panels per cross-section size and records the
/// eigenvalue summaries, ordered by `(n, replicate)`.
pub fn eigengap_study(config: &EigengapConfig) -> Result<Vec<EigengapRow>> {
    if config.n_grid.is_empty() || config.replicates == 0 {
        return Err(Error::param(
            "n_grid/replicates",
            "need at least one size and one replicate",
        ));
    }
    if config.t < 2 {
        return Err(Error::param("t", "must be at least 2"));
    }
    let overrides = DgpOverrides {
        loading_variance: Some(config.loading_variance),
        ..Default::default()
    };
    let jobs: Vec<(usize, usize, usize)> = config
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(gi, &n)| (0..config.replicates).map(move |rep| (gi, n, rep)))
        .collect();
    jobs.par_iter()
        .map(|&(gi, n, rep)| {
            let index = (gi * config.replicates + rep) as u64;
            let seed = derive_seed(config.seed, Stream::Replicate, index);
            let dgp = make_study_dgp(Study::Eigengap, n, &overrides, seed)?;
            let r = dgp.params.r();
            let sim = simulate(
                &dgp.params,
                config.t,
                config.burn_in,
                derive_seed(seed, Stream::Shocks, 0),
            )?;
            let common = sorted_eigenvalues(&sample_cov(&sim.common));
            let idio = sorted_eigenvalues(&sample_cov(&sim.idiosyncratic));
            let full = sorted_eigenvalues(&sample_cov(sim.x.values()));
            Ok(EigengapRow {
                n,
                replicate: rep,
                lambda_max_common: common[0],
                lambda_min_common: common[r.min(n) - 1],
                lambda_max_idio: idio[0],
                lambda_min_idio: idio[n - 1],
                pca_first: full[0],
                pca_second: full.get(1).copied().unwrap_or(0.0),
            })
        })
        .collect()
}

pub fn write_eigengap_csv<W: Write>(rows: &[EigengapRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Ordinary least-squares line `y = a + b x`, returning `(a, b, R^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return Err(Error::InsufficientData(
            "line fit needs two or more paired points".into(),
        ));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Undefined("constant regressor".into()));
    }
    let b = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((my - b * mx, b, r2))
}
