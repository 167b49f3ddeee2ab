use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fnirvar::backtest::{
    run_rolling, write_cumulative_pnl_csv, write_predictions_csv, write_steps_csv, BacktestConfig,
};
use fnirvar::baselines::predict_factors_only;
use fnirvar::dgp::{make_study_dgp, DgpSettings};
use fnirvar::factor::{decompose, fit_factor_model};
use fnirvar::nirvar::fit_nirvar;
use fnirvar::panel::{clip_outliers, excess_returns};
use fnirvar::rng::{derive_seed, Stream};
use fnirvar::simulator;
use fnirvar::study::{eigengap_study, linear_fit, write_eigengap_csv, EigengapConfig, EigengapRow};
use fnirvar::Panel;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataConfig, EstimateConfig, ExperimentConfig, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::{BacktestArgs, DataArgs, EigengapArgs, EstimateArgs, SimulateArgs};

const DEFAULT_OUT_DIR: &str = "out";

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a C,
}

fn output_dir(config: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_manifest<C: Serialize>(dir: &Path, command: &str, seed: u64, config: &C) -> CliResult<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Writes `rows` as CSV with a header row.
fn write_table(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = create(path)?;
    let io = |e| CliError::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn apply_data_args(data: &mut DataConfig, args: &DataArgs) {
    if let Some(p) = &args.input {
        data.input = Some(p.clone());
    }
    if let Some(l) = args.layout {
        data.layout = l;
    }
    if let Some(m) = &args.market_id {
        data.market_id = Some(m.clone());
    }
    if let Some(c) = args.clip_threshold {
        data.clip_threshold = Some(c);
    }
}

fn load_panel(data: &DataConfig) -> CliResult<Panel> {
    let path = data
        .input
        .as_ref()
        .ok_or_else(|| CliError::Config("no input panel (set --input or data.input)".into()))?;
    let mut panel = Panel::load_csv(path, data.layout)?;
    if let Some(m) = &data.market_id {
        panel = excess_returns(&panel, m)?;
    }
    if let Some(threshold) = data.clip_threshold {
        let clipped = clip_outliers(&panel, threshold)?;
        log::info!("clipped {} entries above {threshold}", clipped.clipped);
        panel = clipped.panel;
    }
    Ok(panel)
}

/// Reorders the volume panel rows to match `returns`.
fn align_volumes(volumes: &Panel, returns: &Panel) -> CliResult<Panel> {
    if volumes.n_periods() != returns.n_periods() {
        return Err(fnirvar::Error::Dimension(format!(
            "volume panel has {} periods, returns have {}",
            volumes.n_periods(),
            returns.n_periods()
        ))
        .into());
    }
    let rows: Vec<usize> = returns
        .asset_ids()
        .iter()
        .map(|id| {
            volumes
                .index_of(id)
                .ok_or_else(|| fnirvar::Error::InvalidPanel(format!("no volumes for series `{id}`")))
        })
        .collect::<Result<_, _>>()?;
    let values = DMatrix::from_fn(rows.len(), volumes.n_periods(), |i, t| volumes.values()[(rows[i], t)]);
    Ok(Panel::new(
        values,
        returns.asset_ids().to_vec(),
        returns.timestamps().to_vec(),
    )?)
}

#[derive(Serialize)]
struct SimulateManifest<'a> {
    simulate: &'a SimulateConfig,
    dgp: &'a DgpSettings,
}

pub fn simulate(mut config: ExperimentConfig, args: &SimulateArgs) -> CliResult<()> {
    let mut sim = config.simulate.clone();
    if let Some(seed) = config.seed {
        sim.seed = seed;
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = args.$field {
                sim.$field = v;
            }
        };
    }
    set!(study);
    set!(n);
    set!(t);
    set!(burn_in);
    set!(reps);
    if let Some(v) = args.loading_variance {
        sim.dgp.loading_variance = Some(v);
    }
    if let Some(v) = args.factors {
        sim.dgp.factors = Some(v);
    }
    if let Some(v) = args.blocks {
        sim.dgp.blocks = Some(v);
    }
    if let Some(v) = args.companion_scaling {
        sim.dgp.companion_scaling = Some(v);
    }
    if sim.reps == 0 {
        return Err(CliError::Config("reps must be at least 1".into()));
    }
    config.simulate = sim.clone();
    let dir = output_dir(&config)?;
    let settings = DgpSettings::resolve(sim.study, sim.n, &sim.dgp)?;

    let outputs: Vec<_> = (0..sim.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(sim.seed, Stream::Replicate, rep as u64);
            let dgp = make_study_dgp(sim.study, sim.n, &sim.dgp, seed)?;
            let out = simulator::simulate(&dgp.params, sim.t, sim.burn_in, derive_seed(seed, Stream::Shocks, 0))?;
            Ok((out.x, dgp.labels))
        })
        .collect::<fnirvar::Result<_>>()?;

    for (rep, (panel, labels)) in outputs.iter().enumerate() {
        panel.save_csv(dir.join(format!("panel_{rep:03}.csv")))?;
        if let Some(z) = labels {
            write_table(
                &dir.join(format!("labels_{rep:03}.csv")),
                &["id".into(), "label".into()],
                panel
                    .asset_ids()
                    .iter()
                    .zip(z.labels())
                    .map(|(id, l)| vec![id.clone(), l.to_string()]),
            )?;
        }
    }
    log::info!("wrote {} panels to {}", sim.reps, dir.display());
    write_manifest(
        &dir,
        "simulate",
        sim.seed,
        &SimulateManifest {
            simulate: &sim,
            dgp: &settings,
        },
    )
}

#[derive(Serialize)]
struct EstimateManifest<'a> {
    data: &'a DataConfig,
    estimate: &'a EstimateConfig,
}

#[derive(Serialize)]
struct EstimateReport {
    n_series: usize,
    n_periods: usize,
    factors: usize,
    lags: usize,
    eigenvalues: Vec<f64>,
    /// `P_k` as row-major nested arrays, most recent lag first.
    factor_coefs: Vec<Vec<Vec<f64>>>,
    d: usize,
    k: usize,
    ridge_rows: Vec<usize>,
    /// One-step-ahead forecast of the period after the sample.
    forecast: Vec<f64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn estimate(mut config: ExperimentConfig, args: &EstimateArgs) -> CliResult<()> {
    apply_data_args(&mut config.data, &args.data);
    let mut est = config.estimate.clone();
    if let Some(seed) = config.seed {
        est.seed = seed;
    }
    args.model.apply(&mut est.factors, &mut est.nirvar)?;
    config.estimate = est.clone();
    let panel = load_panel(&config.data)?;
    let dir = output_dir(&config)?;

    let x = panel.values();
    let fit = fit_factor_model(x, &est.factors)?;
    let parts = decompose(x, &fit)?;
    let nirvar = fit_nirvar(&parts.idiosyncratic, &est.nirvar, est.seed)?;
    let last = parts.idiosyncratic.column(x.ncols() - 1).into_owned();
    let forecast = predict_factors_only(&fit)? + &nirvar.phi * last;

    let ids = panel.asset_ids();
    let mut header = vec!["id".to_string()];
    header.extend(ids.iter().cloned());
    write_table(
        &dir.join("phi.csv"),
        &header,
        ids.iter().enumerate().map(|(i, id)| {
            let mut row = vec![id.clone()];
            row.extend(nirvar.phi.row(i).iter().map(|v| v.to_string()));
            row
        }),
    )?;
    let factor_names: Vec<String> = (1..=fit.r()).map(|k| format!("f{k}")).collect();
    let mut header = vec!["id".to_string()];
    header.extend(factor_names.iter().cloned());
    write_table(
        &dir.join("loadings.csv"),
        &header,
        ids.iter().enumerate().map(|(i, id)| {
            let mut row = vec![id.clone()];
            row.extend(fit.loadings.row(i).iter().map(|v| v.to_string()));
            row
        }),
    )?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(factor_names);
    write_table(
        &dir.join("factors.csv"),
        &header,
        panel.timestamps().iter().enumerate().map(|(t, ts)| {
            let mut row = vec![ts.clone()];
            row.extend(fit.factors.column(t).iter().map(|v| v.to_string()));
            row
        }),
    )?;
    write_table(
        &dir.join("labels.csv"),
        &["id".into(), "label".into()],
        ids.iter()
            .zip(&nirvar.labels)
            .map(|(id, l)| vec![id.clone(), l.to_string()]),
    )?;
    let report = EstimateReport {
        n_series: panel.n_series(),
        n_periods: panel.n_periods(),
        factors: fit.r(),
        lags: fit.lags(),
        eigenvalues: fit.eigenvalues.clone(),
        factor_coefs: fit.coefs.iter().map(rows_of).collect(),
        d: nirvar.d,
        k: nirvar.k,
        ridge_rows: nirvar.ridge_rows.clone(),
        forecast: forecast.iter().copied().collect(),
    };
    write_json(&dir.join("report.json"), &report)?;
    write_manifest(
        &dir,
        "estimate",
        est.seed,
        &EstimateManifest {
            data: &config.data,
            estimate: &est,
        },
    )
}

#[derive(Serialize)]
struct BacktestManifest<'a> {
    data: &'a DataConfig,
    backtest: &'a BacktestConfig,
}

pub fn resolve_backtest(config: &mut ExperimentConfig, args: &BacktestArgs) -> CliResult<BacktestConfig> {
    apply_data_args(&mut config.data, &args.data);
    if let Some(v) = &args.volumes {
        config.data.volumes = Some(v.clone());
    }
    let mut bt = config.backtest.clone();
    if let Some(seed) = config.seed {
        bt.seed = seed;
    }
    args.model.apply(&mut bt.factors, &mut bt.nirvar)?;
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = args.$field {
                bt.$field = v;
            }
        };
    }
    set!(predictor);
    set!(lookback);
    set!(refit_every);
    set!(periods_per_year);
    set!(periods_per_day);
    if let Some(v) = args.relabel_every {
        bt.relabel_every = Some(v);
    }
    if let Some(v) = args.portfolio {
        bt.portfolio.kind = v;
    }
    if let Some(v) = args.alpha {
        bt.portfolio.alpha = v;
    }
    if let Some(v) = args.beta {
        bt.portfolio.beta = v;
    }
    if let Some(v) = args.decile {
        bt.portfolio.decile_pct = v;
    }
    if !args.cost_bpts.is_empty() {
        bt.cost_bpts = args.cost_bpts.clone();
    }
    bt.validate()?;
    config.backtest = bt.clone();
    Ok(bt)
}

pub fn backtest(mut config: ExperimentConfig, args: &BacktestArgs) -> CliResult<()> {
    let bt = resolve_backtest(&mut config, args)?;
    let panel = load_panel(&config.data)?;
    let volumes = match &config.data.volumes {
        Some(path) => Some(align_volumes(&Panel::load_csv(path, config.data.layout)?, &panel)?),
        None => None,
    };
    let dir = output_dir(&config)?;
    let report = run_rolling(&panel, &bt, volumes.as_ref())?;
    let summary = report.summary();
    log::info!(
        "{}: mspe {:.4} (se {:.4}), mean pnl {:.3} bpts, {} skipped",
        summary.predictor,
        summary.mspe,
        summary.mspe_se,
        summary.mean_pnl_bpts,
        summary.steps_skipped
    );
    write_json(&dir.join("report.json"), &summary)?;
    write_steps_csv(&report, create(&dir.join("steps.csv"))?)?;
    write_predictions_csv(&report, panel.asset_ids(), create(&dir.join("predictions.csv"))?)?;
    write_cumulative_pnl_csv(&report, create(&dir.join("cumulative_pnl.csv"))?)?;
    write_manifest(
        &dir,
        "backtest",
        bt.seed,
        &BacktestManifest {
            data: &config.data,
            backtest: &bt,
        },
    )
}

#[derive(Debug, Serialize)]
struct GridMeans {
    n: usize,
    lambda_max_common: f64,
    lambda_min_common: f64,
    lambda_max_idio: f64,
    lambda_min_idio: f64,
}

#[derive(Debug, Serialize)]
struct EigengapReport {
    by_n: Vec<GridMeans>,
    /// Least-squares line of mean `lambda_max_common` against `N`.
    slope: Option<f64>,
    intercept: Option<f64>,
    r_squared: Option<f64>,
}

fn grid_means(rows: &[EigengapRow], grid: &[usize]) -> Vec<GridMeans> {
    grid.iter()
        .map(|&n| {
            let sel: Vec<&EigengapRow> = rows.iter().filter(|r| r.n == n).collect();
            let mean = |f: fn(&EigengapRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / sel.len() as f64;
            GridMeans {
                n,
                lambda_max_common: mean(|r| r.lambda_max_common),
                lambda_min_common: mean(|r| r.lambda_min_common),
                lambda_max_idio: mean(|r| r.lambda_max_idio),
                lambda_min_idio: mean(|r| r.lambda_min_idio),
            }
        })
        .collect()
}

pub fn eigengap(mut config: ExperimentConfig, args: &EigengapArgs) -> CliResult<()> {
    let mut cfg: EigengapConfig = config.eigengap.clone();
    if let Some(seed) = config.seed {
        cfg.seed = seed;
    }
    if !args.n_grid.is_empty() {
        cfg.n_grid = args.n_grid.clone();
    }
    if let Some(v) = args.reps {
        cfg.replicates = v;
    }
    if let Some(v) = args.t {
        cfg.t = v;
    }
    if let Some(v) = args.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = args.loading_variance {
        cfg.loading_variance = v;
    }
    config.eigengap = cfg.clone();
    let dir = output_dir(&config)?;
    let rows = eigengap_study(&cfg)?;
    write_eigengap_csv(&rows, create(&dir.join("eigengap.csv"))?)?;

    let by_n = grid_means(&rows, &cfg.n_grid);
    let xs: Vec<f64> = by_n.iter().map(|g| g.n as f64).collect();
    let ys: Vec<f64> = by_n.iter().map(|g| g.lambda_max_common).collect();
    let line = linear_fit(&xs, &ys).ok();
    let report = EigengapReport {
        by_n,
        slope: line.map(|l| l.1),
        intercept: line.map(|l| l.0),
        r_squared: line.map(|l| l.2),
    };
    write_json(&dir.join("report.json"), &report)?;
    write_manifest(&dir, "eigengap-study", cfg.seed, &cfg)
}
