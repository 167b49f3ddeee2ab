//! Portfolio and forecast-accuracy arithmetic used by the rolling engine.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sign(x)` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `sum_i w_i sign(s_hat_i) s_i`.
pub fn pnl_step(weights: &DVector<f64>, signals: &DVector<f64>, realized: &DVector<f64>) -> f64 {
    weights
        .iter()
        .zip(signals.iter())
        .zip(realized.iter())
        .map(|((w, s), r)| w * sign(*s) * r)
        .sum()
}

/// Annualised `sqrt(periods_per_year) * mean / sd`, `sd` with denominator
/// `n - 1`.
pub fn sharpe(pnl: &[f64], periods_per_year: f64) -> Result<f64> {
    let n = pnl.len();
    if n < 2 {
        return Err(Error::Undefined(format!(
            "Sharpe ratio needs at least 2 periods, got {n}"
        )));
    }
    if !(periods_per_year > 0.0) {
        return Err(Error::param("periods_per_year", "must be positive"));
    }
    let mean = pnl.iter().sum::<f64>() / n as f64;
    let var = pnl.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    // Relative threshold so that a constant series polluted by rounding
    // still counts as constant.
    if !(sd > 1e-14 * mean.abs()) || sd == 0.0 {
        return Err(Error::Undefined("PnL has zero standard deviation".into()));
    }
    Ok(periods_per_year.sqrt() * mean / sd)
}

/// Positions held at one step: `sign(s_hat_i)` where `w_i > 0`, else flat.
pub fn positions(weights: &DVector<f64>, signals: &DVector<f64>) -> Vec<i8> {
    weights
        .iter()
        .zip(signals.iter())
        .map(|(w, s)| if *w > 0.0 { sign(*s) as i8 } else { 0 })
        .collect()
}

/// Per-step sum of `w_i^(t)` over assets whose position flipped between
/// long and short since the previous step. Multiply by `cost_bpts * 1e-4`
/// for the cost drag.
pub fn flip_weights(signals: &[DVector<f64>], weights: &[DVector<f64>]) -> Vec<f64> {
    let mut out = Vec::with_capacity(signals.len());
    let mut prev: Option<Vec<i8>> = None;
    for (s, w) in signals.iter().zip(weights) {
        let pos = positions(w, s);
        let charged = match &prev {
            Some(p) => pos
                .iter()
                .zip(p)
                .zip(w.iter())
                .filter(|((a, b), _)| **a as i32 * **b as i32 == -1)
                .map(|(_, w)| *w)
                .sum(),
            None => 0.0,
        };
        out.push(charged);
        prev = Some(pos);
    }
    out
}

/// Cost drag per step for flips charged at `cost_bpts` basis points of the
/// current weight.
pub fn apply_costs(signals: &[DVector<f64>], weights: &[DVector<f64>], cost_bpts: f64) -> Vec<f64> {
    flip_weights(signals, weights)
        .into_iter()
        .map(|f| cost_bpts * 1e-4 * f)
        .collect()
}

/// Number of long/short flips per asset over the whole series.
pub fn flip_counts(signals: &[DVector<f64>], weights: &[DVector<f64>]) -> Vec<usize> {
    let n = signals.first().map_or(0, |s| s.len());
    let mut counts = vec![0; n];
    let mut prev: Option<Vec<i8>> = None;
    for (s, w) in signals.iter().zip(weights) {
        let pos = positions(w, s);
        if let Some(p) = &prev {
            for (i, (a, b)) in pos.iter().zip(p).enumerate() {
                if *a as i32 * *b as i32 == -1 {
                    counts[i] += 1;
                }
            }
        }
        prev = Some(pos);
    }
    counts
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `min(alpha * nu_i, beta)` normalised to sum one, where `nu_i` is the
/// median of row `i` of the `N x t` dollar-volume history.
pub fn value_weights(volume_history: &DMatrix<f64>, alpha: f64, beta: f64) -> Result<DVector<f64>> {
    if volume_history.ncols() == 0 {
        return Err(Error::InsufficientData("empty volume history".into()));
    }
    let medians: Vec<f64> = volume_history
        .row_iter()
        .map(|row| {
            let mut v: Vec<f64> = row.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            median_sorted(&v)
        })
        .collect();
    capped_weights(&medians, alpha, beta)
}

/// `min(alpha * nu_i, beta)` normalised to sum one.
pub fn capped_weights(nu: &[f64], alpha: f64, beta: f64) -> Result<DVector<f64>> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::param("alpha/beta", "must be positive"));
    }
    let raw = DVector::from_iterator(nu.len(), nu.iter().map(|v| (alpha * v).min(beta).max(0.0)));
    let total = raw.sum();
    if !(total > 0.0) {
        return Err(Error::Undefined("all value weights are zero".into()));
    }
    Ok(raw / total)
}

/// Selects the `ceil(pct N / 100)` largest `|s_hat|`, ties broken by lower
/// asset index.
pub fn decile_filter(signals: &DVector<f64>, pct: f64) -> Result<Vec<bool>> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::param("decile_pct", format!("must lie in (0, 100], got {pct}")));
    }
    let n = signals.len();
    let keep = ((pct * n as f64 / 100.0).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        signals[b]
            .abs()
            .partial_cmp(&signals[a].abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut mask = vec![false; n];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Zeroes unselected weights and renormalises the rest to sum one.
pub fn mask_weights(weights: &DVector<f64>, mask: &[bool]) -> Result<DVector<f64>> {
    let masked = DVector::from_iterator(
        weights.len(),
        weights.iter().zip(mask).map(|(w, m)| if *m { *w } else { 0.0 }),
    );
    let total = masked.sum();
    if !(total > 0.0) {
        return Err(Error::Undefined("no weight left after decile filter".into()));
    }
    Ok(masked / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mspe {
    pub mspe: f64,
    pub se: f64,
}

/// Mean over steps of `(1/N) sum_i (x_hat - x)^2`. The standard error is the
/// sample standard deviation of the individual squared errors divided by
/// `sqrt(steps)`.
pub fn mspe(predictions: &[DVector<f64>], realizations: &[DVector<f64>]) -> Result<Mspe> {
    if predictions.is_empty() {
        return Err(Error::InsufficientData("no prediction steps".into()));
    }
    if predictions.len() != realizations.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} realizations",
            predictions.len(),
            realizations.len()
        )));
    }
    let mut errors = Vec::new();
    for (p, r) in predictions.iter().zip(realizations) {
        if p.len() != r.len() {
            return Err(Error::Dimension("prediction and realization lengths differ".into()));
        }
        errors.extend(p.iter().zip(r.iter()).map(|(a, b)| (a - b).powi(2)));
    }
    let m = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / m;
    let se = if errors.len() > 1 {
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1.0);
        var.sqrt() / (predictions.len() as f64).sqrt()
    } else {
        0.0
    };
    Ok(Mspe { mspe: mean, se })
}

#[derive(Debug, Clone, Copy)]
struct Ordered(f64);

impl PartialEq for Ordered {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ordered {}

impl PartialOrd for Ordered {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ordered {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Streaming median with two heaps.
#[derive(Debug, Clone, Default)]
pub struct RunningMedian {
    low: BinaryHeap<Ordered>,
    high: BinaryHeap<Reverse<Ordered>>,
}

impl RunningMedian {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        match self.low.peek() {
            Some(top) if x > top.0 => self.high.push(Reverse(Ordered(x))),
            _ => self.low.push(Ordered(x)),
        }
        if self.low.len() > self.high.len() + 1 {
            let v = self.low.pop().unwrap();
            self.high.push(Reverse(v));
        } else if self.high.len() > self.low.len() {
            let Reverse(v) = self.high.pop().unwrap();
            self.low.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.low.len() + self.high.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    pub fn median(&self) -> Option<f64> {
        let lo = self.low.peek()?.0;
        if self.low.len() > self.high.len() {
            Some(lo)
        } else {
            Some(0.5 * (lo + self.high.peek()?.0 .0))
        }
    }
}
