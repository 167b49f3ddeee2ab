use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;

/// Upper edge `(1 + sqrt(N/T))^2` of the Marchenko-Pastur bulk for unit
/// noise variance.
pub fn marchenko_pastur_edge(n: usize, t: usize) -> f64 {
    (1.0 + (n as f64 / t as f64).sqrt()).powi(2)
}

/// Sample correlation matrix of the rows of an `N x T` panel.
pub fn correlation_matrix(xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, t) = xi.shape();
    let tf = t as f64;
    let mut z = xi.clone();
    for i in 0..n {
        let mean = z.row(i).sum() / tf;
        z.row_mut(i).add_scalar_mut(-mean);
        let var = z.row(i).norm_squared() / tf;
        if !(var > 0.0) {
            return Err(Error::ZeroVariance { index: i });
        }
        z.row_mut(i).unscale_mut(var.sqrt());
    }
    Ok((&z * z.transpose()) / tf)
}

/// Number of correlation eigenvalues above the Marchenko-Pastur edge,
/// floored at one.
pub fn embedding_dimension(xi: &DMatrix<f64>) -> Result<usize> {
    let (n, t) = xi.shape();
    if t < 2 {
        return Err(Error::InsufficientData(format!("need T > 1, got {t}")));
    }
    let corr = correlation_matrix(xi)?;
    let edge = marchenko_pastur_edge(n, t);
    let values = corr.symmetric_eigenvalues();
    let d = values.iter().filter(|v| **v > edge).count();
    Ok(d.max(1))
}

/// Unit eigenvectors of the `d` largest-magnitude eigenvalues of a
/// symmetric matrix, as the columns of an `N x d` matrix.
pub fn spectral_embed(gamma: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let n = gamma.nrows();
    if !gamma.is_square() {
        return Err(Error::Dimension("embedding needs a square matrix".into()));
    }
    if d == 0 || d > n {
        return Err(Error::param("d", format!("must lie in 1..={n}, got {d}")));
    }
    let eig = linalg::symmetric_eigen_by_magnitude(gamma);
    Ok(eig.vectors.columns(0, d).into_owned())
}
