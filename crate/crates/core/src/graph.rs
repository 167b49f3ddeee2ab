//! Stochastic block models and the network VAR coefficient matrix.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::rng_from_seed;

/// Block connection probabilities `B` and block priors `pi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockModelSpec {
    b: DMatrix<f64>,
    pi: Vec<f64>,
}

impl BlockModelSpec {
    /// Validates `B` (square, symmetric, entries in `[0, 1]`) and `pi`
    /// (strictly positive, sums to one). A `B` that is not positive
    /// semi-definite is accepted with a warning.
    pub fn new(b: DMatrix<f64>, pi: Vec<f64>) -> Result<Self> {
        let k = pi.len();
        if k == 0 {
            return Err(Error::param("pi", "needs at least one block"));
        }
        if b.nrows() != k || b.ncols() != k {
            return Err(Error::Dimension(format!(
                "B is {}x{} but pi has {k} entries",
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::param("B", "entries must lie in [0, 1]"));
        }
        if !linalg::is_symmetric(&b, 1e-12) {
            return Err(Error::param("B", "must be symmetric"));
        }
        if pi.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::param("pi", "entries must be strictly positive"));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("pi", format!("must sum to 1, sums to {total}")));
        }
        let spec = BlockModelSpec { b, pi };
        if !spec.is_assortative() {
            log::warn!("block matrix B is not positive semi-definite (not assortative)");
        }
        Ok(spec)
    }

    /// `B` with `within` on the diagonal, `between` elsewhere, uniform `pi`.
    pub fn planted(k: usize, within: f64, between: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::param("k", "needs at least one block"));
        }
        let b = DMatrix::from_fn(k, k, |i, j| if i == j { within } else { between });
        BlockModelSpec::new(b, vec![1.0 / k as f64; k])
    }

    pub fn n_blocks(&self) -> usize {
        self.pi.len()
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn is_assortative(&self) -> bool {
        linalg::min_symmetric_eigenvalue(&self.b) >= -1e-10
    }
}

/// Block labels, 0-based (`0..K`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityAssignment {
    labels: Vec<usize>,
    n_blocks: usize,
}

impl CommunityAssignment {
    pub fn new(labels: Vec<usize>, n_blocks: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&z| z >= n_blocks) {
            return Err(Error::param("labels", format!("label {bad} outside 0..{n_blocks}")));
        }
        Ok(CommunityAssignment { labels, n_blocks })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Binary adjacency matrix stored as `0.0 / 1.0` so it can be used
/// directly in Hadamard products.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency(DMatrix<f64>);

impl Adjacency {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension("adjacency must be square".into()));
        }
        if m.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::param("A", "entries must be 0 or 1"));
        }
        Ok(Adjacency(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn sample_assignments(spec: &BlockModelSpec, n: usize, seed: u64) -> Result<CommunityAssignment> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut cumulative = Vec::with_capacity(spec.n_blocks());
    let mut acc = 0.0;
    for p in &spec.pi {
        acc += p;
        cumulative.push(acc);
    }
    let last = spec.n_blocks() - 1;
    let labels = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            cumulative.iter().position(|c| u < *c).unwrap_or(last)
        })
        .collect();
    CommunityAssignment::new(labels, spec.n_blocks())
}

/// Independent directed Bernoulli edges off the diagonal, ones on it.
pub fn sample_adjacency(spec: &BlockModelSpec, z: &CommunityAssignment, seed: u64) -> Result<Adjacency> {
    if z.n_blocks() > spec.n_blocks() {
        return Err(Error::param("z", "more blocks than the block model has"));
    }
    let n = z.len();
    let mut rng = rng_from_seed(seed);
    let mut a = DMatrix::zeros(n, n);
    // Draws in row-major order.
    for i in 0..n {
        for j in 0..n {
            let u: f64 = rng.random();
            a[(i, j)] = if i == j || u < spec.b[(z.labels[i], z.labels[j])] {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok(Adjacency(a))
}

/// Row means alternate in sign and grow with the (1-based) block label:
/// block 1 has mean +1, block 2 mean -2, block 3 mean +3, ...
pub fn block_weight_mean(label: usize) -> f64 {
    let k = (label + 1) as f64;
    if label.is_multiple_of(2) {
        k
    } else {
        -k
    }
}

/// Draws `Phi~_ij ~ N(mu_i, 1)` with `mu_i` from [`block_weight_mean`],
/// optionally symmetrized as `(Phi~ + Phi~') / 2`.
pub fn sample_weights(z: &CommunityAssignment, symmetrize: bool, seed: u64) -> DMatrix<f64> {
    let n = z.len();
    let mut rng = rng_from_seed(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mu = block_weight_mean(z.labels[i]);
        for j in 0..n {
            w[(i, j)] = mu + std_normal.sample(&mut rng);
        }
    }
    if symmetrize {
        w = (&w + w.transpose()) * 0.5;
    }
    w
}

/// `Phi = (A . Phi~) * target_rho / rho(A . Phi~)`.
pub fn build_phi(a: &Adjacency, weights: &DMatrix<f64>, target_rho: f64) -> Result<DMatrix<f64>> {
    if !(target_rho > 0.0 && target_rho < 1.0) {
        return Err(Error::param(
            "target_rho",
            format!("must lie in (0, 1), got {target_rho}"),
        ));
    }
    if a.0.shape() != weights.shape() {
        return Err(Error::Dimension(format!(
            "A is {:?}, weights are {:?}",
            a.0.shape(),
            weights.shape()
        )));
    }
    let masked = a.0.component_mul(weights);
    let rho = linalg::spectral_radius(&masked);
    if !(rho > 1e-300) {
        return Err(Error::ZeroSpectralRadius);
    }
    Ok(masked * (target_rho / rho))
}
