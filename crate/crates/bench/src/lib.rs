//! Shared fixtures for the benchmarks.

use fnirvar::dgp::{make_study_dgp, DgpOverrides, Study};
use fnirvar::factor::{decompose, fit_factor_model};
use fnirvar::simulator::simulate;
use fnirvar::{FactorOptions, OrderChoice, Panel};
use nalgebra::DMatrix;

/// Simulated panel from the factor plus network design.
pub fn network_factor_panel(n: usize, t: usize, seed: u64) -> Panel {
    let dgp = make_study_dgp(Study::NetworkFactor, n, &DgpOverrides::default(), seed).expect("valid design");
    simulate(&dgp.params, t, 200, seed + 1).expect("stationary design").x
}

/// Idiosyncratic residual of a five-factor PCA fit.
pub fn residual(x: &DMatrix<f64>) -> DMatrix<f64> {
    let opts = FactorOptions {
        factors: OrderChoice::Fixed(5),
        lags: OrderChoice::Fixed(1),
    };
    let fit = fit_factor_model(x, &opts).expect("fit");
    decompose(x, &fit).expect("decompose").idiosyncratic
}
