//! Full-covariance Gaussian mixture fitted by EM with k-means++ seeding.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when the mean per-point log-likelihood improves by less.
    pub tol: f64,
    /// Added to every covariance diagonal.
    pub ridge: f64,
    /// Extra restarts allowed when fits end with an empty component.
    pub max_reseeds: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions {
            restarts: 10,
            max_iter: 500,
            tol: 1e-6,
            ridge: 1e-6,
            max_reseeds: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    /// Labels in `0..K`, renumbered by first appearance.
    pub labels: Vec<usize>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
}

struct Component {
    weight: f64,
    mean: DVector<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

fn rows(v: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..v.nrows()).map(|i| v.row(i).transpose()).collect()
}

fn kmeans_pp(points: &[DVector<f64>], k: usize, rng: &mut Rng) -> Vec<DVector<f64>> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut dist: Vec<f64> = points.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[next].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - &c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

fn component_from(
    points: &[DVector<f64>],
    resp: &[f64],
    k: usize,
    n_comp: usize,
    ridge: f64,
    fallback_cov: &DMatrix<f64>,
) -> Component {
    let dim = points[0].len();
    let n = points.len();
    let mut nk = 0.0;
    let mut mean = DVector::zeros(dim);
    for (i, p) in points.iter().enumerate() {
        let w = resp[i * n_comp + k];
        nk += w;
        mean.axpy(w, p, 1.0);
    }
    let mut cov;
    if nk > 1e-10 {
        mean /= nk;
        cov = DMatrix::zeros(dim, dim);
        for (i, p) in points.iter().enumerate() {
            let w = resp[i * n_comp + k];
            if w > 0.0 {
                let d = p - &mean;
                cov.ger(w / nk, &d, &d, 1.0);
            }
        }
    } else {
        cov = fallback_cov.clone();
    }
    for j in 0..dim {
        cov[(j, j)] += ridge;
    }
    let chol = cov
        .clone()
        .cholesky()
        .or_else(|| {
            let mut c = fallback_cov.clone();
            for j in 0..dim {
                c[(j, j)] += ridge.max(1e-12);
            }
            c.cholesky()
        })
        .expect("ridged covariance is positive definite");
    let l = chol.l();
    let log_det = 2.0 * (0..dim).map(|j| l[(j, j)].ln()).sum::<f64>();
    Component {
        weight: (nk / n as f64).max(1e-300),
        mean,
        chol_l: l,
        log_det,
    }
}

fn log_density(c: &Component, p: &DVector<f64>) -> f64 {
    let dim = p.len() as f64;
    let diff = p - &c.mean;
    let z = c
        .chol_l
        .solve_lower_triangular(&diff)
        .expect("cholesky factor has a positive diagonal");
    -0.5 * (dim * (2.0 * std::f64::consts::PI).ln() + c.log_det + z.norm_squared())
}

/// E-step: fills `resp` (row-major `n x K`) and returns the total
/// log-likelihood.
fn e_step(points: &[DVector<f64>], comps: &[Component], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let mut total = 0.0;
    let mut logp = vec![0.0; k];
    for (i, p) in points.iter().enumerate() {
        for (j, c) in comps.iter().enumerate() {
            logp[j] = c.weight.ln() + log_density(c, p);
        }
        let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logp.iter().map(|l| (l - m).exp()).sum();
        let lse = m + s.ln();
        total += lse;
        for j in 0..k {
            resp[i * k + j] = (logp[j] - lse).exp();
        }
    }
    total
}

fn global_covariance(points: &[DVector<f64>]) -> DMatrix<f64> {
    let n = points.len() as f64;
    let dim = points[0].len();
    let mean = points.iter().fold(DVector::zeros(dim), |acc, p| acc + p) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in points {
        let d = p - &mean;
        cov.ger(1.0 / n, &d, &d, 1.0);
    }
    cov
}

fn fit_once(points: &[DVector<f64>], k: usize, opts: &GmmOptions, rng: &mut Rng) -> GmmFit {
    let n = points.len();
    let fallback = global_covariance(points);
    let centers = kmeans_pp(points, k, rng);
    let mut resp = vec![0.0; n * k];
    for (i, p) in points.iter().enumerate() {
        let nearest = (0..k)
            .min_by(|&a, &b| {
                (p - &centers[a])
                    .norm_squared()
                    .partial_cmp(&(p - &centers[b]).norm_squared())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .unwrap_or(0);
        resp[i * k + nearest] = 1.0;
    }
    let mut comps: Vec<Component> = (0..k)
        .map(|j| component_from(points, &resp, j, k, opts.ridge, &fallback))
        .collect();
    // A seed center that attracted no points keeps its own location.
    for (j, c) in comps.iter_mut().enumerate() {
        if resp.iter().skip(j).step_by(k).all(|w| *w == 0.0) {
            c.mean = centers[j].clone();
        }
    }
    let mut ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let new_ll = e_step(points, &comps, &mut resp);
        let improved = (new_ll - ll) / n as f64;
        ll = new_ll;
        if improved.abs() < opts.tol {
            break;
        }
        comps = (0..k)
            .map(|j| component_from(points, &resp, j, k, opts.ridge, &fallback))
            .collect();
    }
    let raw: Vec<usize> = (0..n)
        .map(|i| {
            let row = &resp[i * k..(i + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    GmmFit {
        labels: raw,
        log_likelihood: ll,
        iterations,
        weights: comps.iter().map(|c| c.weight).collect(),
        means: comps.into_iter().map(|c| c.mean).collect(),
    }
}

/// Renumbers labels by order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Clusters the rows of `v` into `k` groups. The best of `opts.restarts`
/// fits by log-likelihood is kept; fits that leave a component without
/// points are discarded and re-seeded.
pub fn cluster_gmm(v: &DMatrix<f64>, k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmFit> {
    let n = v.nrows();
    if k == 0 || k > n {
        return Err(Error::param("k", format!("must lie in 1..={n}, got {k}")));
    }
    if v.ncols() == 0 {
        return Err(Error::param("v", "embedding has no columns"));
    }
    if k == 1 {
        return Ok(GmmFit {
            labels: vec![0; n],
            log_likelihood: f64::NAN,
            iterations: 0,
            weights: vec![1.0],
            means: vec![DVector::from_fn(v.ncols(), |j, _| v.column(j).mean())],
        });
    }
    let points = rows(v);
    let mut best: Option<GmmFit> = None;
    let mut valid = 0;
    let attempts = opts.restarts.max(1) + opts.max_reseeds;
    for attempt in 0..attempts {
        if valid >= opts.restarts.max(1) {
            break;
        }
        let mut rng = stream_rng(seed, Stream::Clustering, attempt as u64);
        let fit = fit_once(&points, k, opts, &mut rng);
        let mut used = vec![false; k];
        for l in &fit.labels {
            used[*l] = true;
        }
        if used.iter().any(|u| !u) || !fit.log_likelihood.is_finite() {
            continue;
        }
        valid += 1;
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    let mut fit = best.ok_or_else(|| {
        Error::Clustering(format!(
            "every fit left an empty component after {attempts} attempts (K = {k})"
        ))
    })?;
    let canon = canonical_labels(&fit.labels);
    let mut order = vec![0; k];
    for (old, new) in fit.labels.iter().zip(&canon) {
        order[*new] = *old;
    }
    fit.weights = order.iter().map(|&o| fit.weights[o]).collect();
    fit.means = order.iter().map(|&o| fit.means[o].clone()).collect();
    fit.labels = canon;
    Ok(fit)
}

/// Adjusted Rand index between two labelings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "label vectors differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (x, y) in a.iter().zip(b) {
        table[*x][*y] += 1;
    }
    let choose2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&m| choose2(m)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let total = choose2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
