//! Library routines checked against small independent reimplementations.

use fnirvar::baselines::{lasso_coordinate_descent, lasso_objective};
use fnirvar::factor::{estimate_pca, forecast_with};
use fnirvar::linalg::{solve_discrete_lyapunov, spectral_radius};
use fnirvar::nirvar::{build_restriction, restricted_var_ols};
use fnirvar::simulator::companion_matrix;
use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(rng))
}

/// Gaussian elimination with partial pivoting on plain vectors.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Stable random VAR(1) path.
fn var1_path(n: usize, t: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut phi = gaussian(n, n, rng);
    let rho = spectral_radius(&phi);
    phi *= 0.8 / rho;
    let mut x = DMatrix::zeros(n, t);
    for s in 1..t {
        let e: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let next = &phi * x.column(s - 1) + e;
        x.set_column(s, &next);
    }
    x
}

/// Row `i` of the restricted OLS from raw sums over `t`.
fn brute_force_row(xi: &DMatrix<f64>, active: &[usize], i: usize) -> Vec<f64> {
    let t = xi.ncols();
    let m = active.len();
    let mut g = vec![vec![0.0; m]; m];
    let mut c = vec![0.0; m];
    for s in 1..t {
        for a in 0..m {
            c[a] += xi[(active[a], s - 1)] * xi[(i, s)];
            for b in 0..m {
                g[a][b] += xi[(active[a], s - 1)] * xi[(active[b], s - 1)];
            }
        }
    }
    gauss_solve(g, c)
}

#[test]
fn restricted_ols_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, t) = (4, 200);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let xi = var1_path(n, t, &mut rng);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let a = build_restriction(&labels);
        let fit = restricted_var_ols(&xi, &a).unwrap();
        assert!(fit.ridge_rows.is_empty());
        for i in 0..n {
            let active: Vec<usize> = (0..n).filter(|&j| labels[j] == labels[i]).collect();
            let b = brute_force_row(&xi, &active, i);
            for j in 0..n {
                let expected = active.iter().position(|&a| a == j).map_or(0.0, |p| b[p]);
                worst = worst.max((fit.phi[(i, j)] - expected).abs());
            }
        }
    }
    assert!(worst < 1e-10, "max error {worst}");
}

#[test]
fn all_ones_restriction_is_unrestricted_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, t) = (6, 300);
    let xi = var1_path(n, t, &mut rng);
    let fit = restricted_var_ols(&xi, &DMatrix::from_element(n, n, 1.0)).unwrap();
    let lagged = xi.columns(0, t - 1);
    let current = xi.columns(1, t - 1);
    let gram = lagged * lagged.transpose();
    let cross = current * lagged.transpose();
    let ols = cross * gram.try_inverse().unwrap();
    assert!((&fit.phi - &ols).amax() < 1e-10);
}

fn kronecker_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let system = DMatrix::identity(n * n, n * n) - a.kronecker(a);
    let vec_q = DVector::from_column_slice(q.as_slice());
    let vec_x = system.lu().solve(&vec_q).unwrap();
    DMatrix::from_column_slice(n, n, vec_x.as_slice())
}

#[test]
fn lyapunov_matches_kronecker_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for n in 1..=6 {
        for _ in 0..5 {
            let mut a = gaussian(n, n, &mut rng);
            let target = rng.random_range(0.1..0.95);
            a *= target / spectral_radius(&a);
            let b = gaussian(n, n, &mut rng);
            let q = &b * b.transpose();
            let x = solve_discrete_lyapunov(&a, &q).unwrap();
            let oracle = kronecker_lyapunov(&a, &q);
            let scale = oracle.amax().max(1.0);
            assert!((&x - &oracle).amax() / scale < 1e-10, "n = {n}");
        }
    }
}

/// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors as columns.
fn jacobi_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-26 * a.norm_squared() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |k, c| v[(k, order[c])]);
    (values, vectors)
}

#[test]
fn pca_matches_jacobi_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let (n, t) = (20, 200);
        let mut x = gaussian(n, t, &mut rng);
        for i in 0..n {
            let scale = 1.0 + i as f64 * 0.3;
            x.row_mut(i).scale_mut(scale);
        }
        let mean = DVector::from_fn(n, |i, _| x.row(i).sum() / t as f64);
        let xc = DMatrix::from_fn(n, t, |i, s| x[(i, s)] - mean[i]);
        let cov = &xc * xc.transpose() / t as f64;
        let (values, vectors) = jacobi_eigen(&cov);

        let r = 6;
        let fit = estimate_pca(&x, r).unwrap();
        for k in 0..r {
            assert!((fit.eigenvalues[k] - values[k]).abs() < 1e-8 * values[0].max(1.0));
            let jac = vectors.column(k);
            let est = fit.loadings.column(k);
            let sign = jac.dot(&est).signum();
            assert!((est - jac * sign).amax() < 1e-8, "eigenvector {k}");
        }
        let factors = fit.loadings.transpose() * &xc;
        assert!((&factors - &fit.factors).amax() < 1e-8);
    }
}

fn power_iteration(m: &DMatrix<f64>) -> f64 {
    let mut v = DVector::from_element(m.nrows(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = m * &v;
        let next = w.norm() / v.norm();
        v = w.normalize();
        if (next - lambda).abs() < 1e-14 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

#[test]
fn spectral_radius_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let m = DMatrix::from_fn(50, 50, |_, _| rng.random::<f64>());
        let rho = spectral_radius(&m);
        let oracle = power_iteration(&m);
        assert!((rho - oracle).abs() < 1e-6 * oracle, "{rho} vs {oracle}");
    }
}

#[test]
fn companion_eigenvalues_are_roots_of_the_lag_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..10 {
        let p1 = gaussian(2, 2, &mut rng) * 0.4;
        let p2 = gaussian(2, 2, &mut rng) * 0.3;
        let companion = companion_matrix(&[p1.clone(), p2.clone()]).unwrap();
        assert_eq!(companion.shape(), (4, 4));
        let eig = companion.complex_eigenvalues();
        assert_eq!(eig.len(), 4);
        for z in eig.iter() {
            // det(z^2 I - z P_1 - P_2)
            let entry = |i: usize, j: usize| {
                let id = if i == j { z * z } else { Complex::new(0.0, 0.0) };
                id - z * p1[(i, j)] - Complex::new(p2[(i, j)], 0.0)
            };
            let det = entry(0, 0) * entry(1, 1) - entry(0, 1) * entry(1, 0);
            let scale = 1.0 + z.norm().powi(4);
            assert!(det.norm() / scale < 1e-10, "root {z}, det {det}");
        }
        let product: Complex<f64> = eig.iter().product();
        assert!((product.re - p2.determinant()).abs() < 1e-10);
    }
}

/// FISTA on `(1/2n)|y - Xb|^2 + lambda |b|_1` from the raw design.
fn fista(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let n = x.nrows() as f64;
    let lipschitz = (x.transpose() * x).symmetric_eigenvalues().max() / n;
    let step = 1.0 / lipschitz;
    let p = x.ncols();
    let mut b = DVector::zeros(p);
    let mut z = b.clone();
    let mut t: f64 = 1.0;
    for _ in 0..20_000 {
        let grad = x.transpose() * (x * &z - y) / n;
        let u = &z - grad * step;
        let next = u.map(|v| v.signum() * (v.abs() - lambda * step).max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &next + (&next - &b) * ((t - 1.0) / t_next);
        b = next;
        t = t_next;
    }
    b
}

fn raw_objective(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, b: &DVector<f64>) -> f64 {
    (y - x * b).norm_squared() / (2.0 * x.nrows() as f64) + lambda * b.lp_norm(1)
}

#[test]
fn coordinate_descent_matches_fista() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let (n, p) = (100, 5);
        let x = gaussian(n, p, &mut rng);
        let truth = DVector::from_fn(p, |j, _| if j % 2 == 0 { 1.0 } else { 0.0 });
        let noise: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let y = &x * truth + noise;
        let lambda = rng.random_range(0.01..0.5);

        let gram = x.transpose() * &x / n as f64;
        let cross = x.transpose() * &y / n as f64;
        let yy = y.norm_squared() / n as f64;
        let mut beta = DVector::zeros(p);
        lasso_coordinate_descent(&gram, &cross, yy, lambda, &mut beta);
        let reference = fista(&x, &y, lambda);

        let ours = raw_objective(&x, &y, lambda, &beta);
        let theirs = raw_objective(&x, &y, lambda, &reference);
        assert!((ours - theirs).abs() < 1e-6, "{ours} vs {theirs}");
        assert!((lasso_objective(&gram, &cross, yy, lambda, &beta) - ours).abs() < 1e-10);
        assert!((&beta - &reference).amax() < 1e-4);
    }
}

#[test]
fn factor_forecast_is_linear_in_history() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let coefs = vec![gaussian(3, 3, &mut rng), gaussian(3, 3, &mut rng)];
    let h1: Vec<DVector<f64>> = (0..2).map(|_| DVector::from_fn(3, |_, _| rng.random())).collect();
    let h2: Vec<DVector<f64>> = (0..2).map(|_| DVector::from_fn(3, |_, _| rng.random())).collect();
    let (a, b) = (1.7, -0.4);
    let mixed: Vec<DVector<f64>> = h1.iter().zip(&h2).map(|(u, v)| u * a + v * b).collect();
    let lhs = forecast_with(&coefs, &mixed).unwrap();
    let rhs = forecast_with(&coefs, &h1).unwrap() * a + forecast_with(&coefs, &h2).unwrap() * b;
    assert!((lhs - rhs).amax() < 1e-12);
    let direct = &coefs[0] * &h1[0] + &coefs[1] * &h1[1];
    assert!((forecast_with(&coefs, &h1).unwrap() - direct).amax() < 1e-12);
}
