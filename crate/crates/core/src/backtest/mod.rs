//! Rolling-window one-step-ahead backtests.
//!
//! At every evaluation step `t` a predictor fitted on columns
//! `t - lookback + 1 ..= t` forecasts `x_{t+1}`. Forecasts are scored by
//! MSPE and traded as a sign portfolio `sum_i w_i sign(x_hat_i) x_i`.

pub mod metrics;
mod report;

pub use metrics::{
    apply_costs, capped_weights, decile_filter, flip_counts, flip_weights, mask_weights, mspe, pnl_step, sharpe, sign,
    value_weights, Mspe, RunningMedian,
};
pub use report::{write_cumulative_pnl_csv, write_predictions_csv, write_steps_csv, BacktestSummary, CostSummary};

use nalgebra::{DMatrix, DMatrixView, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lasso_var, LambdaGrid};
use crate::error::{Error, Result};
use crate::factor::{decompose, fit_factor_model, forecast_with, FactorFit, FactorOptions};
use crate::nirvar::{build_restriction, fit_nirvar, restricted_var_ols, NirvarOptions};
use crate::panel::Panel;
use crate::rng::{derive_seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    #[default]
    Fnirvar,
    Factors,
    FactorsLasso,
}

impl std::str::FromStr for PredictorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fnirvar" => Ok(PredictorKind::Fnirvar),
            "factors" => Ok(PredictorKind::Factors),
            "factors-lasso" => Ok(PredictorKind::FactorsLasso),
            other => Err(format!("unknown predictor `{other}` (fnirvar|factors|factors-lasso)")),
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictorKind::Fnirvar => "fnirvar",
            PredictorKind::Factors => "factors",
            PredictorKind::FactorsLasso => "factors-lasso",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PortfolioKind {
    #[default]
    Equal,
    Value,
}

impl std::str::FromStr for PortfolioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "equal" => Ok(PortfolioKind::Equal),
            "value" => Ok(PortfolioKind::Value),
            other => Err(format!("unknown portfolio `{other}` (equal|value)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PortfolioSpec {
    pub kind: PortfolioKind,
    /// Value weights only.
    pub alpha: f64,
    /// Value weights only.
    pub beta: f64,
    /// Percentage of assets traded, by signal magnitude.
    pub decile_pct: f64,
}

impl Default for PortfolioSpec {
    fn default() -> Self {
        PortfolioSpec {
            kind: PortfolioKind::Equal,
            alpha: 0.001,
            beta: 500_000.0,
            decile_pct: 100.0,
        }
    }
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.decile_pct > 0.0 && self.decile_pct <= 100.0) {
            return Err(Error::param(
                "decile_pct",
                format!("must lie in (0, 100], got {}", self.decile_pct),
            ));
        }
        if self.kind == PortfolioKind::Value && !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::param("alpha/beta", "must be positive for value weights"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BacktestConfig {
    pub lookback: usize,
    pub refit_every: usize,
    pub predictor: PredictorKind,
    pub factors: FactorOptions,
    pub nirvar: NirvarOptions,
    pub lasso: LambdaGrid,
    pub portfolio: PortfolioSpec,
    /// One cost-adjusted variant is reported per entry.
    pub cost_bpts: Vec<f64>,
    pub periods_per_year: f64,
    /// Consecutive steps summed into one period before computing Sharpe
    /// ratios and mean PnL.
    pub periods_per_day: usize,
    /// Cluster labels are re-estimated on every `relabel_every`-th refit and
    /// reused in between. `None` relabels at every refit.
    pub relabel_every: Option<usize>,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            lookback: 1000,
            refit_every: 1,
            predictor: PredictorKind::Fnirvar,
            factors: FactorOptions::default(),
            nirvar: NirvarOptions::default(),
            lasso: LambdaGrid::default(),
            portfolio: PortfolioSpec::default(),
            cost_bpts: vec![0.0],
            periods_per_year: 252.0,
            periods_per_day: 1,
            relabel_every: None,
            seed: 0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback < 2 {
            return Err(Error::param("lookback", "must be at least 2"));
        }
        if self.refit_every == 0 {
            return Err(Error::param("refit_every", "must be at least 1"));
        }
        if self.cost_bpts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(Error::param("cost_bpts", "must be finite and non-negative"));
        }
        if !(self.periods_per_year > 0.0) {
            return Err(Error::param("periods_per_year", "must be positive"));
        }
        if self.periods_per_day == 0 {
            return Err(Error::param("periods_per_day", "must be at least 1"));
        }
        if self.relabel_every == Some(0) {
            return Err(Error::param("relabel_every", "must be at least 1"));
        }
        self.portfolio.validate()
    }
}

/// Information handed to a predictor when it is (re)fitted.
pub struct FitContext<'a, M> {
    pub seed: u64,
    /// Most recent successful fit, if any.
    pub previous: Option<&'a M>,
    /// False when the predictor should reuse structure (cluster labels)
    /// from `previous`.
    pub relabel: bool,
}

/// Orders and sizes reported by a fitted model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub factors: Option<usize>,
    pub lags: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub nnz: Option<usize>,
}

/// A one-step-ahead predictor usable by the rolling engine.
pub trait Forecaster: Sync {
    type Model: Send + Sync;

    fn name(&self) -> String;

    /// Fits on an `N x lookback` window.
    fn fit(&self, window: DMatrixView<'_, f64>, ctx: &FitContext<'_, Self::Model>) -> Result<Self::Model>;

    /// Forecast of column `t + 1` of `data`, using columns up to `t`.
    fn predict(&self, model: &Self::Model, data: &DMatrix<f64>, t: usize) -> Result<DVector<f64>>;

    fn stats(&self, _model: &Self::Model) -> FitStats {
        FitStats::default()
    }
}

/// Factor model with an optional VAR(1) for the idiosyncratic part.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub factor: FactorFit,
    pub phi: Option<DMatrix<f64>>,
    pub labels: Option<Vec<usize>>,
    pub d: Option<usize>,
}

/// The three built-in predictors.
#[derive(Debug, Clone)]
pub struct ModelPredictor {
    pub kind: PredictorKind,
    pub factors: FactorOptions,
    pub nirvar: NirvarOptions,
    pub lasso: LambdaGrid,
}

impl ModelPredictor {
    pub fn from_config(config: &BacktestConfig) -> Self {
        ModelPredictor {
            kind: config.predictor,
            factors: config.factors,
            nirvar: config.nirvar,
            lasso: config.lasso.clone(),
        }
    }
}

impl Forecaster for ModelPredictor {
    type Model = FittedModel;

    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn fit(&self, window: DMatrixView<'_, f64>, ctx: &FitContext<'_, FittedModel>) -> Result<FittedModel> {
        let window = window.into_owned();
        let mut factor = fit_factor_model(&window, &self.factors)?;
        let mut model = match self.kind {
            PredictorKind::Factors => FittedModel {
                factor: factor.clone(),
                phi: None,
                labels: None,
                d: None,
            },
            PredictorKind::Fnirvar => {
                let xi = decompose(&window, &factor)?.idiosyncratic;
                let reuse = ctx
                    .previous
                    .and_then(|p| p.labels.as_ref().map(|l| (l, p.d)))
                    .filter(|(l, _)| !ctx.relabel && l.len() == xi.nrows());
                match reuse {
                    Some((labels, d)) => {
                        let ols = restricted_var_ols(&xi, &build_restriction(labels))?;
                        FittedModel {
                            factor: factor.clone(),
                            phi: Some(ols.phi),
                            labels: Some(labels.clone()),
                            d,
                        }
                    }
                    None => {
                        let fit = fit_nirvar(&xi, &self.nirvar, ctx.seed)?;
                        FittedModel {
                            factor: factor.clone(),
                            phi: Some(fit.phi),
                            labels: Some(fit.labels),
                            d: Some(fit.d),
                        }
                    }
                }
            }
            PredictorKind::FactorsLasso => {
                let xi = decompose(&window, &factor)?.idiosyncratic;
                let fit = lasso_var(&xi, &self.lasso)?;
                FittedModel {
                    factor: factor.clone(),
                    phi: Some(fit.phi),
                    labels: None,
                    d: None,
                }
            }
        };
        // Window factors are recomputed from the data at prediction time.
        factor.factors = DMatrix::zeros(factor.r(), 0);
        model.factor = factor;
        Ok(model)
    }

    fn predict(&self, model: &FittedModel, data: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        let fit = &model.factor;
        let lags = fit.lags();
        if t + 1 < lags {
            return Err(Error::InsufficientData(format!(
                "need {lags} observations before the forecast origin"
            )));
        }
        let history: Vec<DVector<f64>> = (0..lags.max(1))
            .map(|k| fit.project(&data.column(t - k).into_owned()))
            .collect();
        let mut pred = &fit.mean + &fit.loadings * forecast_with(&fit.coefs, &history)?;
        if let Some(phi) = &model.phi {
            let xi_t = data.column(t) - &fit.mean - &fit.loadings * &history[0];
            pred += phi * xi_t;
        }
        Ok(pred)
    }

    fn stats(&self, model: &FittedModel) -> FitStats {
        FitStats {
            factors: Some(model.factor.r()),
            lags: Some(model.factor.lags()),
            d: model.d,
            k: model
                .labels
                .as_ref()
                .map(|l| l.iter().copied().max().map_or(0, |m| m + 1)),
            nnz: model.phi.as_ref().map(|p| p.iter().filter(|v| **v != 0.0).count()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedStep {
    /// Column index of the forecast target.
    pub target: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVariant {
    pub cost_bpts: f64,
    /// Per-step drag, aligned with `pnl`.
    pub cost_drag: Vec<f64>,
    pub sharpe: Option<f64>,
    pub mean_pnl_bpts: f64,
}

impl CostVariant {
    /// Raw PnL minus drag, per step.
    pub fn adjusted_pnl(&self, pnl: &[f64]) -> Vec<f64> {
        pnl.iter().zip(&self.cost_drag).map(|(p, c)| p - c).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub refits: usize,
    pub failed: usize,
    pub mean_factors: Option<f64>,
    pub mean_lags: Option<f64>,
    pub mean_d: Option<f64>,
    pub mean_k: Option<f64>,
    pub mean_nnz: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub predictor: String,
    pub n_series: usize,
    /// Steps attempted, evaluated or not.
    pub steps_total: usize,
    /// Column index of each evaluated forecast target.
    pub targets: Vec<usize>,
    pub timestamps: Vec<String>,
    pub predictions: Vec<DVector<f64>>,
    pub realizations: Vec<DVector<f64>>,
    pub weights: Vec<DVector<f64>>,
    /// Per-step PnL.
    pub pnl: Vec<f64>,
    /// PnL summed over `periods_per_day` steps.
    pub period_pnl: Vec<f64>,
    pub sharpe: Option<f64>,
    pub mean_pnl_bpts: f64,
    pub mspe: f64,
    pub mspe_se: f64,
    pub hit_rate: f64,
    pub flips: Vec<usize>,
    /// Per-step weight flipped between long and short.
    pub flip_weight: Vec<f64>,
    pub costs: Vec<CostVariant>,
    pub skipped: Vec<SkippedStep>,
    pub fits: FitDiagnostics,
}

/// Runs one of the built-in predictors.
pub fn run_rolling(panel: &Panel, config: &BacktestConfig, volumes: Option<&Panel>) -> Result<BacktestReport> {
    run_with(panel, config, &ModelPredictor::from_config(config), volumes)
}

fn batch_size() -> usize {
    (rayon::current_num_threads() * 4).max(4)
}

/// Runs any [`Forecaster`]. Fits for a batch of refit points run in
/// parallel; metrics are always assembled in step order.
pub fn run_with<F: Forecaster>(
    panel: &Panel,
    config: &BacktestConfig,
    forecaster: &F,
    volumes: Option<&Panel>,
) -> Result<BacktestReport> {
    config.validate()?;
    let x = panel.values();
    let (n, total) = x.shape();
    if total <= config.lookback + 1 {
        return Err(Error::InsufficientData(format!(
            "backtest needs T > lookback + 1, got T = {total}, lookback = {}",
            config.lookback
        )));
    }
    let mut medians = match config.portfolio.kind {
        PortfolioKind::Equal => None,
        PortfolioKind::Value => {
            let v = volumes.ok_or_else(|| Error::param("volumes", "value weights need a volume panel"))?;
            if v.values().shape() != (n, total) {
                return Err(Error::Dimension(format!(
                    "volume panel is {:?}, returns panel is {:?}",
                    v.values().shape(),
                    (n, total)
                )));
            }
            if v.values().iter().any(|x| *x < 0.0) {
                return Err(Error::param("volumes", "must be non-negative"));
            }
            let mut m = vec![RunningMedian::new(); n];
            for t in 0..config.lookback - 1 {
                for (i, rm) in m.iter_mut().enumerate() {
                    rm.push(v.values()[(i, t)]);
                }
            }
            Some((m, v.values()))
        }
    };

    let steps = total - config.lookback;
    let origin = |s: usize| config.lookback - 1 + s;
    let refit_steps: Vec<usize> = (0..steps).step_by(config.refit_every).collect();

    let mut acc = Accumulator::default();
    let mut stats: Vec<FitStats> = Vec::new();
    let mut failed = 0usize;
    let mut previous: Option<F::Model> = None;
    let sequential = config.relabel_every.is_some();
    let chunk = if sequential { 1 } else { batch_size() };

    for (batch_idx, batch) in refit_steps.chunks(chunk).enumerate() {
        let fit_one = |j: usize, s: usize, prev: Option<&F::Model>| -> Result<F::Model> {
            let t = origin(s);
            let window = x.columns(t + 1 - config.lookback, config.lookback);
            let refit_index = batch_idx * chunk + j;
            let ctx = FitContext {
                seed: derive_seed(config.seed, Stream::Backtest, s as u64),
                previous: prev,
                relabel: config.relabel_every.is_none_or(|r| refit_index.is_multiple_of(r)),
            };
            forecaster.fit(window, &ctx)
        };
        let models: Vec<Result<F::Model>> = if sequential {
            batch
                .iter()
                .enumerate()
                .map(|(j, &s)| fit_one(j, s, previous.as_ref()))
                .collect()
        } else {
            batch
                .par_iter()
                .enumerate()
                .map(|(j, &s)| fit_one(j, s, None))
                .collect()
        };

        for (&s0, model) in batch.iter().zip(models) {
            let model = match model {
                Ok(m) => {
                    stats.push(forecaster.stats(&m));
                    Some(m)
                }
                Err(e) => {
                    failed += 1;
                    log::warn!("fit at target {} failed: {e}", origin(s0) + 1);
                    acc.fit_error = Some(e.to_string());
                    None
                }
            };
            for s in s0..(s0 + config.refit_every).min(steps) {
                let t = origin(s);
                let base = match &mut medians {
                    None => DVector::from_element(n, 1.0 / n as f64),
                    Some((m, v)) => {
                        for (i, rm) in m.iter_mut().enumerate() {
                            rm.push(v[(i, t)]);
                        }
                        let nu: Vec<f64> = m.iter().map(|rm| rm.median().unwrap_or(0.0)).collect();
                        match capped_weights(&nu, config.portfolio.alpha, config.portfolio.beta) {
                            Ok(w) => w,
                            Err(e) => {
                                acc.skip(t + 1, format!("value weights: {e}"));
                                continue;
                            }
                        }
                    }
                };
                let Some(m) = model.as_ref() else {
                    acc.skip(
                        t + 1,
                        format!("fit failed: {}", acc.fit_error.clone().unwrap_or_default()),
                    );
                    continue;
                };
                let pred = match forecaster.predict(m, x, t) {
                    Ok(p) if p.iter().all(|v| v.is_finite()) => p,
                    Ok(_) => {
                        log::warn!("non-finite forecast for target {}", t + 1);
                        acc.skip(t + 1, "non-finite forecast".into());
                        continue;
                    }
                    Err(e) => {
                        log::warn!("forecast for target {} failed: {e}", t + 1);
                        acc.skip(t + 1, format!("forecast failed: {e}"));
                        continue;
                    }
                };
                let mask = decile_filter(&pred, config.portfolio.decile_pct)?;
                let weights = match mask_weights(&base, &mask) {
                    Ok(w) => w,
                    Err(e) => {
                        acc.skip(t + 1, e.to_string());
                        continue;
                    }
                };
                let real = x.column(t + 1).into_owned();
                acc.pnl.push(pnl_step(&weights, &pred, &real));
                acc.targets.push(t + 1);
                acc.predictions.push(pred);
                acc.realizations.push(real);
                acc.weights.push(weights);
            }
            if let Some(m) = model {
                if sequential {
                    previous = Some(m);
                }
            }
        }
    }

    if acc.pnl.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no evaluation step succeeded ({} skipped)",
            acc.skipped.len()
        )));
    }
    if !acc.skipped.is_empty() {
        log::warn!("{} of {steps} steps skipped", acc.skipped.len());
    }
    finish(
        acc,
        config,
        forecaster.name(),
        panel,
        n,
        steps,
        stats,
        failed,
        refit_steps.len(),
    )
}

#[derive(Default)]
struct Accumulator {
    targets: Vec<usize>,
    predictions: Vec<DVector<f64>>,
    realizations: Vec<DVector<f64>>,
    weights: Vec<DVector<f64>>,
    pnl: Vec<f64>,
    skipped: Vec<SkippedStep>,
    fit_error: Option<String>,
}

impl Accumulator {
    fn skip(&mut self, target: usize, reason: String) {
        self.skipped.push(SkippedStep { target, reason });
    }
}

/// Sums consecutive blocks of `k` values; a trailing partial block is kept.
pub fn aggregate_periods(series: &[f64], k: usize) -> Vec<f64> {
    series.chunks(k.max(1)).map(|c| c.iter().sum()).collect()
}

fn mean_of(values: impl Iterator<Item = Option<usize>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().map(|x| x as f64).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sharpe_or_warn(series: &[f64], ppy: f64, label: &str) -> Option<f64> {
    match sharpe(series, ppy) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("{label}: {e}");
            None
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    acc: Accumulator,
    config: &BacktestConfig,
    name: String,
    panel: &Panel,
    n: usize,
    steps: usize,
    stats: Vec<FitStats>,
    failed: usize,
    refits: usize,
) -> Result<BacktestReport> {
    let accuracy = mspe(&acc.predictions, &acc.realizations)?;
    let total = (acc.predictions.len() * n) as f64;
    let hits = acc
        .predictions
        .iter()
        .zip(&acc.realizations)
        .map(|(p, r)| p.iter().zip(r.iter()).filter(|(a, b)| sign(**a) == sign(**b)).count())
        .sum::<usize>();
    let flip_weight = flip_weights(&acc.predictions, &acc.weights);
    let flips = flip_counts(&acc.predictions, &acc.weights);
    let k = config.periods_per_day;
    let period_pnl = aggregate_periods(&acc.pnl, k);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let costs = config
        .cost_bpts
        .iter()
        .map(|&c| {
            let drag: Vec<f64> = flip_weight.iter().map(|f| c * 1e-4 * f).collect();
            let adjusted: Vec<f64> = acc.pnl.iter().zip(&drag).map(|(p, d)| p - d).collect();
            let periods = aggregate_periods(&adjusted, k);
            CostVariant {
                cost_bpts: c,
                sharpe: sharpe_or_warn(&periods, config.periods_per_year, &format!("cost {c} bpts")),
                mean_pnl_bpts: mean(&periods) * 1e4,
                cost_drag: drag,
            }
        })
        .collect();
    let fits = FitDiagnostics {
        refits,
        failed,
        mean_factors: mean_of(stats.iter().map(|s| s.factors)),
        mean_lags: mean_of(stats.iter().map(|s| s.lags)),
        mean_d: mean_of(stats.iter().map(|s| s.d)),
        mean_k: mean_of(stats.iter().map(|s| s.k)),
        mean_nnz: mean_of(stats.iter().map(|s| s.nnz)),
    };
    Ok(BacktestReport {
        predictor: name,
        n_series: n,
        steps_total: steps,
        timestamps: acc.targets.iter().map(|t| panel.timestamps()[*t].clone()).collect(),
        targets: acc.targets,
        sharpe: sharpe_or_warn(&period_pnl, config.periods_per_year, "raw PnL"),
        mean_pnl_bpts: mean(&period_pnl) * 1e4,
        period_pnl,
        pnl: acc.pnl,
        mspe: accuracy.mspe,
        mspe_se: accuracy.se,
        hit_rate: hits as f64 / total,
        predictions: acc.predictions,
        realizations: acc.realizations,
        weights: acc.weights,
        flips,
        flip_weight,
        costs,
        skipped: acc.skipped,
        fits,
    })
}
