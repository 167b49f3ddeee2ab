use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{BacktestReport, FitDiagnostics, SkippedStep};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub cost_bpts: f64,
    pub sharpe: Option<f64>,
    pub mean_pnl_bpts: f64,
    pub total_drag_bpts: f64,
}

/// Scalar view of a [`BacktestReport`], without the per-step series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub predictor: String,
    pub n_series: usize,
    pub steps_total: usize,
    pub steps_evaluated: usize,
    pub steps_skipped: usize,
    pub mspe: f64,
    pub mspe_se: f64,
    pub hit_rate: f64,
    pub sharpe: Option<f64>,
    pub mean_pnl_bpts: f64,
    /// Flips per traded asset-step.
    pub flip_rate: f64,
    pub costs: Vec<CostSummary>,
    pub fits: FitDiagnostics,
    pub skipped: Vec<SkippedStep>,
}

impl BacktestReport {
    pub fn summary(&self) -> BacktestSummary {
        let traded: usize = self
            .weights
            .iter()
            .map(|w| w.iter().filter(|x| **x > 0.0).count())
            .sum();
        let flips: usize = self.flips.iter().sum();
        BacktestSummary {
            predictor: self.predictor.clone(),
            n_series: self.n_series,
            steps_total: self.steps_total,
            steps_evaluated: self.pnl.len(),
            steps_skipped: self.skipped.len(),
            mspe: self.mspe,
            mspe_se: self.mspe_se,
            hit_rate: self.hit_rate,
            sharpe: self.sharpe,
            mean_pnl_bpts: self.mean_pnl_bpts,
            flip_rate: if traded > 0 { flips as f64 / traded as f64 } else { 0.0 },
            costs: self
                .costs
                .iter()
                .map(|c| CostSummary {
                    cost_bpts: c.cost_bpts,
                    sharpe: c.sharpe,
                    mean_pnl_bpts: c.mean_pnl_bpts,
                    total_drag_bpts: c.cost_drag.iter().sum::<f64>() * 1e4,
                })
                .collect(),
            fits: self.fits.clone(),
            skipped: self.skipped.clone(),
        }
    }
}

fn cost_label(c: f64) -> String {
    format!("cost_{c}bpts")
}

/// One row per evaluated step: PnL, squared error and cost drag per
/// cost level.
pub fn write_steps_csv<W: Write>(report: &BacktestReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "target".to_string(),
        "timestamp".into(),
        "pnl".into(),
        "squared_error".into(),
        "flip_weight".into(),
    ];
    header.extend(report.costs.iter().map(|c| format!("drag_{}", cost_label(c.cost_bpts))));
    w.write_record(&header)?;
    for s in 0..report.pnl.len() {
        let n = report.predictions[s].len() as f64;
        let se = (&report.predictions[s] - &report.realizations[s]).norm_squared() / n;
        let mut row = vec![
            report.targets[s].to_string(),
            report.timestamps[s].clone(),
            report.pnl[s].to_string(),
            se.to_string(),
            report.flip_weight[s].to_string(),
        ];
        row.extend(report.costs.iter().map(|c| c.cost_drag[s].to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Long format: one row per evaluated step and asset.
pub fn write_predictions_csv<W: Write>(report: &BacktestReport, asset_ids: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "asset", "prediction", "realization", "weight"])?;
    for s in 0..report.pnl.len() {
        for (i, id) in asset_ids.iter().enumerate() {
            w.write_record([
                report.timestamps[s].as_str(),
                id.as_str(),
                &report.predictions[s][i].to_string(),
                &report.realizations[s][i].to_string(),
                &report.weights[s][i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Cumulative PnL in basis points, raw and per cost level.
pub fn write_cumulative_pnl_csv<W: Write>(report: &BacktestReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_string(), "cum_pnl_bpts".into()];
    header.extend(
        report
            .costs
            .iter()
            .map(|c| format!("cum_pnl_bpts_{}", cost_label(c.cost_bpts))),
    );
    w.write_record(&header)?;
    let mut raw = 0.0;
    let mut adj = vec![0.0; report.costs.len()];
    for s in 0..report.pnl.len() {
        raw += report.pnl[s] * 1e4;
        let mut row = vec![report.timestamps[s].clone(), raw.to_string()];
        for (a, c) in adj.iter_mut().zip(&report.costs) {
            *a += (report.pnl[s] - c.cost_drag[s]) * 1e4;
            row.push(a.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
