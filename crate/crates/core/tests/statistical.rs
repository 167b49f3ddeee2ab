//! Monte Carlo checks of the simulator and estimators against population
//! quantities.

use fnirvar::dgp::{make_study_dgp, DgpOverrides, Study};
use fnirvar::factor::{fit_factor_var, select_num_factors, select_var_order};
use fnirvar::linalg::relative_frobenius;
use fnirvar::nirvar::correlation_matrix;
use fnirvar::simulator::{population_covariances, simulate, FnirvarParams};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn sample_cov(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.ncols() as f64;
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        let mean = row.sum() / t;
        row.add_scalar_mut(-mean);
    }
    (&c * c.transpose()) / t
}

fn no_factors() -> DgpOverrides {
    DgpOverrides {
        loading_variance: Some(0.0),
        ..Default::default()
    }
}

#[test]
fn long_run_idiosyncratic_covariance_matches_lyapunov() {
    let dgp = make_study_dgp(Study::NetworkFactor, 10, &no_factors(), 3).unwrap();
    let sim = simulate(&dgp.params, 100_000, 500, 4).unwrap();
    let population = population_covariances(&dgp.params).unwrap();
    let err = relative_frobenius(&sample_cov(&sim.idiosyncratic), &population.idiosyncratic);
    assert!(err < 0.15, "relative Frobenius error {err}");
}

#[test]
fn factor_covariance_matches_stationary_solution() {
    let dgp = make_study_dgp(Study::NetworkFactor, 10, &DgpOverrides::default(), 5).unwrap();
    let sim = simulate(&dgp.params, 100_000, 500, 6).unwrap();
    let population = population_covariances(&dgp.params).unwrap();
    let err = relative_frobenius(&sample_cov(&sim.factors), &population.factor);
    assert!(err < 0.15, "relative Frobenius error {err}");
}

#[test]
fn white_noise_factor_var_is_near_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = 10_000;
    let f = DMatrix::from_fn(2, t, |_, _| StandardNormal.sample(&mut rng));
    let coefs = fit_factor_var(&f, 1).unwrap();
    let se = 1.0 / (t as f64).sqrt();
    assert!(coefs[0].amax() < 3.0 * se * 1.5, "{}", coefs[0]);
    assert_eq!(select_var_order(&f, 5).unwrap(), 1);
}

#[test]
fn var2_coefficients_recovered() {
    let p1 = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.2, 0.3]);
    let p2 = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, -0.1]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = 5000;
    let mut f = DMatrix::zeros(2, t + 200);
    for s in 2..t + 200 {
        let e = DMatrix::from_fn(2, 1, |_, _| StandardNormal.sample(&mut rng));
        let next = &p1 * f.column(s - 1) + &p2 * f.column(s - 2) + e;
        f.set_column(s, &next.column(0));
    }
    let f = f.columns(200, t).into_owned();
    let coefs = fit_factor_var(&f, 2).unwrap();
    assert!((&coefs[0] - &p1).amax() < 0.05);
    assert!((&coefs[1] - &p2).amax() < 0.05);
}

#[test]
fn information_criterion_finds_five_factors() {
    let mut hits = 0;
    for seed in 0..20 {
        let dgp = make_study_dgp(Study::FactorOnly, 100, &DgpOverrides::default(), seed).unwrap();
        let sim = simulate(&dgp.params, 1500, 500, seed + 100).unwrap();
        if select_num_factors(sim.x.values(), 10).unwrap() == 5 {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn aic_finds_two_lags_on_true_factors() {
    let mut hits = 0;
    for seed in 0..20 {
        let dgp = make_study_dgp(Study::NetworkFactor, 20, &DgpOverrides::default(), seed).unwrap();
        assert_eq!(dgp.params.factor_lags(), 2);
        let sim = simulate(&dgp.params, 1500, 500, seed + 200).unwrap();
        if select_var_order(&sim.factors, 5).unwrap() == 2 {
            hits += 1;
        }
    }
    assert!(hits >= 16, "{hits}/20");
}

fn mean_abs_correlation(params: &FnirvarParams, labels: &[usize], seed: u64) -> (f64, f64) {
    let sim = simulate(params, 1500, 500, seed).unwrap();
    let corr = correlation_matrix(&sim.idiosyncratic).unwrap();
    let n = labels.len();
    let (mut within, mut nw, mut between, mut nb) = (0.0, 0, 0.0, 0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if labels[i] == labels[j] {
                within += corr[(i, j)].abs();
                nw += 1;
            } else {
                between += corr[(i, j)].abs();
                nb += 1;
            }
        }
    }
    (within / nw as f64, between / nb as f64)
}

#[test]
fn idiosyncratic_correlations_follow_blocks() {
    let mut hits = 0;
    for seed in 0..20 {
        let dgp = make_study_dgp(Study::NetworkFactor, 100, &no_factors(), seed).unwrap();
        let labels = dgp.labels.as_ref().unwrap().labels().to_vec();
        let (within, between) = mean_abs_correlation(&dgp.params, &labels, seed + 300);
        if within > between {
            hits += 1;
        }
    }
    assert_eq!(hits, 20);
}
