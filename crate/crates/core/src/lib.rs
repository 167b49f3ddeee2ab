//! Simulation, estimation and backtesting for factor-driven network
//! informed restricted VAR (FNIRVAR) models.
//!
//! A panel `X` (`N` series by `T` periods) is modelled as
//! `X_t = Lambda F_t + xi_t`, with low-rank factors following a VAR(`l_F`)
//! and the idiosyncratic part following a sparse, network structured VAR(1).

pub mod backtest;
pub mod baselines;
pub mod dgp;
pub mod error;
pub mod factor;
pub mod graph;
pub mod linalg;
pub mod nirvar;
pub mod panel;
pub mod rng;
pub mod simulator;
pub mod study;

pub use error::{Error, Result};
pub use factor::{FactorFit, FactorOptions, OrderChoice};
pub use nirvar::{Choice, NirvarFit, NirvarOptions};
pub use panel::{Layout, Panel};
pub use simulator::{FnirvarParams, SimulationOutput};
