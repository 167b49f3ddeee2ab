//! Network informed restricted VAR estimation of the idiosyncratic panel.
//!
//! The estimator embeds the sample covariance `xi xi' / T` in its leading
//! eigenvectors, clusters the embedded rows with a Gaussian mixture, keeps
//! only within-cluster VAR(1) coefficients, and fits those by per-equation
//! least squares.

mod embedding;
mod gmm;

pub use embedding::{correlation_matrix, embedding_dimension, marchenko_pastur_edge, spectral_embed};
pub use gmm::{adjusted_rand_index, canonical_labels, cluster_gmm, GmmFit, GmmOptions};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Ridge scale (times the mean Gram diagonal) used when a per-row Gram
/// matrix is singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NirvarFit {
    pub d: usize,
    pub k: usize,
    /// Cluster labels in `0..k`.
    pub labels: Vec<usize>,
    /// `N x N` restriction, `1` where two series share a cluster.
    pub restriction: DMatrix<f64>,
    /// `N x N` coefficients, zero outside the restriction.
    pub phi: DMatrix<f64>,
    /// `N x d` spectral embedding.
    pub embedding: DMatrix<f64>,
    /// Rows whose Gram matrix needed the ridge fallback.
    pub ridge_rows: Vec<usize>,
}

/// `A_ij = 1{z(i) = z(j)}`.
pub fn build_restriction(labels: &[usize]) -> DMatrix<f64> {
    let n = labels.len();
    DMatrix::from_fn(n, n, |i, j| if labels[i] == labels[j] { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone)]
pub struct RestrictedOls {
    pub phi: DMatrix<f64>,
    pub ridge_rows: Vec<usize>,
}

/// Lagged Gram `G = sum_t xi_{t-1} xi_{t-1}'` and cross products
/// `C[j, i] = sum_t xi_{j,t-1} xi_{i,t}` over `t = 1..T`.
fn lagged_moments(xi: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let t = xi.ncols();
    let lagged = xi.columns(0, t - 1);
    let current = xi.columns(1, t - 1);
    let gram = &lagged * lagged.transpose();
    let cross = &lagged * current.transpose();
    (gram, cross)
}

/// Per-equation OLS of `xi_{i,t}` on `{xi_{j,t-1} : A_ij = 1}`.
///
/// Rows with an identical active set share one factorisation. Entries
/// outside the restriction are exactly zero.
pub fn restricted_var_ols(xi: &DMatrix<f64>, restriction: &DMatrix<f64>) -> Result<RestrictedOls> {
    let (n, t) = xi.shape();
    if restriction.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "restriction is {:?}, panel has {n} series",
            restriction.shape()
        )));
    }
    if t < 2 {
        return Err(Error::InsufficientData(format!("restricted VAR needs T >= 2, got {t}")));
    }
    let (gram, cross) = lagged_moments(xi);
    let mut phi = DMatrix::zeros(n, n);
    let mut ridge_rows = Vec::new();

    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let active: Vec<usize> = (0..n).filter(|&j| restriction[(i, j)] != 0.0).collect();
        match groups.iter_mut().find(|(a, _)| *a == active) {
            Some((_, rows)) => rows.push(i),
            None => groups.push((active, vec![i])),
        }
    }
    for (active, rows) in groups {
        if active.is_empty() {
            continue;
        }
        let m = active.len();
        let g = DMatrix::from_fn(m, m, |a, b| gram[(active[a], active[b])]);
        for &i in &rows {
            let c = DVector::from_fn(m, |a, _| cross[(active[a], i)]);
            let (b, fallback) = linalg::solve_spd_with_ridge(&g, &c, RIDGE_FALLBACK);
            if fallback {
                ridge_rows.push(i);
            }
            for (a, &j) in active.iter().enumerate() {
                phi[(i, j)] = b[a];
            }
        }
    }
    if !ridge_rows.is_empty() {
        log::debug!("ridge fallback used for {} of {n} rows", ridge_rows.len());
    }
    Ok(RestrictedOls { phi, ridge_rows })
}

pub fn nirvar_forecast(phi: &DMatrix<f64>, xi_last: &DVector<f64>) -> DVector<f64> {
    phi * xi_last
}

/// Embedding dimension or cluster count: data-driven or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    #[default]
    Auto,
    Fixed(usize),
}

impl std::str::FromStr for Choice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Choice::Auto)
        } else {
            s.parse()
                .map(Choice::Fixed)
                .map_err(|_| format!("expected `auto` or an integer, got `{s}`"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NirvarOptions {
    pub d: Choice,
    /// `Auto` sets `K = d`.
    pub k: Choice,
    pub gmm: GmmOptions,
}

/// Full pipeline on an `N x T` idiosyncratic panel.
pub fn fit_nirvar(xi: &DMatrix<f64>, options: &NirvarOptions, seed: u64) -> Result<NirvarFit> {
    let (n, t) = xi.shape();
    let d = match options.d {
        Choice::Auto => embedding_dimension(xi)?,
        Choice::Fixed(d) => d,
    };
    let k = match options.k {
        Choice::Auto => d,
        Choice::Fixed(k) => k,
    };
    if k == 0 || k > n {
        return Err(Error::param("k", format!("must lie in 1..={n}, got {k}")));
    }
    let gamma = (xi * xi.transpose()) / t as f64;
    let embedding = spectral_embed(&gamma, d)?;
    let labels = cluster_gmm(&embedding, k, seed, &options.gmm)?.labels;
    let restriction = build_restriction(&labels);
    let ols = restricted_var_ols(xi, &restriction)?;
    Ok(NirvarFit {
        d,
        k,
        labels,
        restriction,
        phi: ols.phi,
        embedding,
        ridge_rows: ols.ridge_rows,
    })
}
