//! Dense linear-algebra helpers shared across the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order and each eigenvector's sign fixed so that its
/// largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    /// Eigenvectors stored as columns, aligned with `values`.
    pub vectors: DMatrix<f64>,
}

pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> SortedEigen {
    sorted_eigen_by(m, |v| v)
}

/// Same as [`symmetric_eigen_desc`] but ordered by eigenvalue magnitude.
pub fn symmetric_eigen_by_magnitude(m: &DMatrix<f64>) -> SortedEigen {
    sorted_eigen_by(m, f64::abs)
}

fn sorted_eigen_by(m: &DMatrix<f64>, key: impl Fn(f64) -> f64) -> SortedEigen {
    let n = m.nrows();
    // Symmetrize to wash out round-off asymmetry in products like XX'.
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        key(eig.eigenvalues[b])
            .partial_cmp(&key(eig.eigenvalues[a]))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    SortedEigen { values, vectors }
}

/// Flips columns so the entry of largest magnitude is positive. Ties go to
/// the lowest row index.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..m.nrows() {
            let a = m[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if m.nrows() > 0 && m[(best, j)] < 0.0 {
            m.column_mut(j).neg_mut();
        }
    }
}

/// Largest eigenvalue modulus over the full complex spectrum.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    if m.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solves `X = A X A' + Q` by the doubling iteration
/// `X_{k+1} = X_k + A_k X_k A_k'`, `A_{k+1} = A_k^2`.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension(format!(
            "lyapunov: A is {}x{}, Q is {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::NotStationary {
            rho_companion: f64::NAN,
            rho_phi: rho,
        });
    }
    let mut x = q.clone();
    let mut ak = a.clone();
    for _ in 0..200 {
        let inc = &ak * &x * ak.transpose();
        let inc_norm = inc.amax();
        x += inc;
        if inc_norm <= 1e-17 * x.amax().max(f64::MIN_POSITIVE) {
            break;
        }
        ak = &ak * &ak;
    }
    Ok((&x + x.transpose()) * 0.5)
}

/// Symmetric positive semi-definite square root; negative round-off
/// eigenvalues are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetric_eigen_desc(m);
    let n = m.nrows();
    let mut scaled = eig.vectors.clone();
    for j in 0..n {
        let s = eig.values[j].max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    &scaled * eig.vectors.transpose()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (0..m.nrows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves the symmetric positive-definite system `G b = c`, falling back to
/// a ridge of `ridge_scale * trace(G) / dim` when Cholesky fails. Returns
/// the solution and whether the fallback fired.
pub fn solve_spd_with_ridge(g: &DMatrix<f64>, c: &DVector<f64>, ridge_scale: f64) -> (DVector<f64>, bool) {
    if let Some(chol) = g.clone().cholesky() {
        let sol = chol.solve(c);
        if sol.iter().all(|v| v.is_finite()) && well_conditioned(&chol) {
            return (sol, false);
        }
    }
    let dim = g.nrows().max(1) as f64;
    let mut penalty = ridge_scale * g.trace() / dim;
    if !(penalty > 0.0) {
        penalty = ridge_scale;
    }
    let mut ridged = g.clone();
    for _ in 0..8 {
        for i in 0..ridged.nrows() {
            ridged[(i, i)] = g[(i, i)] + penalty;
        }
        if let Some(chol) = ridged.clone().cholesky() {
            return (chol.solve(c), true);
        }
        penalty *= 100.0;
    }
    (DVector::zeros(c.len()), true)
}

fn well_conditioned(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    // cond(G) ~ (max/min)^2; refuse anything beyond ~1e14.
    max == 0.0 || min / max > 1e-7
}

/// Frobenius norm of the difference, relative to `b`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eigen_sorted_descending_with_sign_rule() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 2.0]);
        let e = symmetric_eigen_desc(&m);
        assert_eq!(e.values, vec![5.0, 2.0, 1.0]);
        assert_abs_diff_eq!(e.vectors[(1, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.vectors[(2, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn magnitude_ordering_puts_large_negative_first() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0]));
        let e = symmetric_eigen_by_magnitude(&m);
        assert_eq!(e.values, vec![-3.0, 2.0, 1.0]);
    }

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&m), 1.0, epsilon = 1e-12);
        assert_eq!(spectral_radius(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn scalar_lyapunov_is_geometric_series() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let x = solve_discrete_lyapunov(&a, &q).unwrap();
        assert_abs_diff_eq!(x[(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn lyapunov_refuses_unit_root() {
        let a = DMatrix::identity(2, 2);
        assert!(solve_discrete_lyapunov(&a, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = psd_sqrt(&m);
        assert!(relative_frobenius(&(&s * &s), &m) < 1e-12);
    }

    #[test]
    fn ridge_fallback_flags_singular_gram() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let (b, fallback) = solve_spd_with_ridge(&g, &c, 1e-8);
        assert!(fallback);
        assert_abs_diff_eq!(b[0] + b[1], 1.0, epsilon = 1e-6);
    }
}
