//! Canonical panel representation and CSV ingestion.
//!
//! A [`Panel`] stores an `N x T` matrix with series as rows and time as
//! columns. On disk the canonical layout is "wide": one header row whose
//! first cell is a label and whose remaining cells are timestamps, followed
//! by one row per series starting with its identifier. The transposed layout
//! (one row per time step, header of asset ids) is accepted on load.
//!
//! Missing cells are rejected rather than imputed. The loader makes no
//! assumption about whether values are simple or log returns.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    RowsAreSeries,
    RowsAreTime,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "rows_are_series" | "rows-are-series" | "series" => Ok(Layout::RowsAreSeries),
            "rows_are_time" | "rows-are-time" | "time" => Ok(Layout::RowsAreTime),
            other => Err(format!("unknown layout `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    values: DMatrix<f64>,
    asset_ids: Vec<String>,
    timestamps: Vec<String>,
}

impl Panel {
    pub fn new(values: DMatrix<f64>, asset_ids: Vec<String>, timestamps: Vec<String>) -> Result<Self> {
        if asset_ids.len() != values.nrows() {
            return Err(Error::InvalidPanel(format!(
                "{} asset ids for {} rows",
                asset_ids.len(),
                values.nrows()
            )));
        }
        if timestamps.len() != values.ncols() {
            return Err(Error::InvalidPanel(format!(
                "{} timestamps for {} columns",
                timestamps.len(),
                values.ncols()
            )));
        }
        if let Some((i, j)) = first_non_finite(&values) {
            return Err(Error::InvalidPanel(format!(
                "non-finite value for series {} at time {}",
                asset_ids[i], timestamps[j]
            )));
        }
        let mut seen = HashSet::with_capacity(asset_ids.len());
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidPanel(format!("duplicate asset id `{id}`")));
            }
        }
        if let Some(k) = first_non_increasing(&timestamps) {
            return Err(Error::InvalidPanel(format!(
                "timestamps not strictly increasing at `{}` -> `{}`",
                timestamps[k - 1],
                timestamps[k]
            )));
        }
        Ok(Panel {
            values,
            asset_ids,
            timestamps,
        })
    }

    /// Wraps a bare matrix with generated ids (`s0`, `s1`, ...) and integer
    /// timestamps.
    pub fn from_matrix(values: DMatrix<f64>) -> Result<Self> {
        let ids = (0..values.nrows()).map(|i| format!("s{i}")).collect();
        let ts = (0..values.ncols()).map(|t| t.to_string()).collect();
        Panel::new(values, ids, ts)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn n_series(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, t: usize) -> DVector<f64> {
        self.values.column(t).into_owned()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.asset_ids.iter().position(|a| a == id)
    }

    /// Columns `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Result<Panel> {
        if start >= end || end > self.n_periods() {
            return Err(Error::param(
                "window",
                format!("{start}..{end} outside 0..{}", self.n_periods()),
            ));
        }
        Ok(Panel {
            values: self.values.columns(start, end - start).into_owned(),
            asset_ids: self.asset_ids.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
        })
    }

    pub fn load_csv(path: impl AsRef<Path>, layout: Layout) -> Result<Panel> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Panel::read_csv(file, layout)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, layout: Layout) -> Result<Panel> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = Vec::new();
        for rec in rdr.records() {
            records.push(rec?);
        }
        if records.len() < 2 {
            return Err(Error::Load {
                row: records.len() + 1,
                column: 1,
                message: "expected a header row and at least one data row".into(),
            });
        }
        let header: Vec<String> = records[0].iter().skip(1).map(str::to_owned).collect();
        if header.is_empty() {
            return Err(Error::Load {
                row: 1,
                column: 2,
                message: "header row has no labels".into(),
            });
        }
        let width = header.len();
        let mut labels = Vec::with_capacity(records.len() - 1);
        let mut data = Vec::with_capacity((records.len() - 1) * width);
        for (r, rec) in records.iter().enumerate().skip(1) {
            let row = r + 1;
            let label = rec.get(0).unwrap_or("").to_owned();
            if label.is_empty() {
                return Err(Error::Load {
                    row,
                    column: 1,
                    message: "missing row label".into(),
                });
            }
            if rec.len() > width + 1 {
                return Err(Error::Load {
                    row,
                    column: width + 2,
                    message: format!("row has {} cells, header has {}", rec.len(), width + 1),
                });
            }
            for c in 0..width {
                let column = c + 2;
                let cell = rec.get(c + 1).unwrap_or("");
                if cell.is_empty() {
                    return Err(Error::Load {
                        row,
                        column,
                        message: "missing cell".into(),
                    });
                }
                let v: f64 = cell.parse().map_err(|_| Error::Load {
                    row,
                    column,
                    message: format!("cannot parse `{cell}` as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Load {
                        row,
                        column,
                        message: format!("non-finite value `{cell}`"),
                    });
                }
                data.push(v);
            }
            labels.push(label);
        }
        // `data` is row-major over file rows.
        let file_rows = labels.len();
        let by_file_rows = DMatrix::from_row_slice(file_rows, width, &data);
        let (values, ids, ts) = match layout {
            Layout::RowsAreSeries => (by_file_rows, labels, header),
            Layout::RowsAreTime => (by_file_rows.transpose(), header, labels),
        };
        let mut seen = HashSet::new();
        for (k, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                let (row, column) = match layout {
                    Layout::RowsAreSeries => (k + 2, 1),
                    Layout::RowsAreTime => (1, k + 2),
                };
                return Err(Error::Load {
                    row,
                    column,
                    message: format!("duplicate asset id `{id}`"),
                });
            }
        }
        if let Some(k) = first_non_increasing(&ts) {
            let (row, column) = match layout {
                Layout::RowsAreSeries => (1, k + 2),
                Layout::RowsAreTime => (k + 2, 1),
            };
            return Err(Error::Load {
                row,
                column,
                message: format!("timestamp `{}` does not increase on `{}`", ts[k], ts[k - 1]),
            });
        }
        Panel::new(values, ids, ts)
    }

    /// Writes the canonical wide layout. Values use Rust's shortest
    /// round-trip formatting, so a reload reproduces them exactly.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = Vec::with_capacity(self.n_periods() + 1);
        header.push("id".to_owned());
        header.extend(self.timestamps.iter().cloned());
        w.write_record(&header)?;
        for (i, id) in self.asset_ids.iter().enumerate() {
            let mut row = Vec::with_capacity(self.n_periods() + 1);
            row.push(id.clone());
            row.extend(self.values.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

/// Index `k` of the first label not strictly greater than label `k - 1`.
/// Labels are compared numerically when all of them parse as numbers and
/// lexicographically otherwise (ISO-8601 dates sort correctly either way).
fn first_non_increasing(labels: &[String]) -> Option<usize> {
    let numeric: Option<Vec<f64>> = labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    match numeric {
        Some(nums) => (1..nums.len()).find(|&k| !(nums[k] > nums[k - 1])),
        None => (1..labels.len()).find(|&k| labels[k] <= labels[k - 1]),
    }
}

/// Subtracts the market series from every other series and drops it.
pub fn excess_returns(panel: &Panel, market_id: &str) -> Result<Panel> {
    let m = panel
        .index_of(market_id)
        .ok_or_else(|| Error::param("market_id", format!("`{market_id}` not in panel")))?;
    let n = panel.n_series();
    let t = panel.n_periods();
    let keep: Vec<usize> = (0..n).filter(|&i| i != m).collect();
    let market = panel.values.row(m);
    let values = DMatrix::from_fn(keep.len(), t, |r, c| panel.values[(keep[r], c)] - market[c]);
    let ids = keep.iter().map(|&i| panel.asset_ids[i].clone()).collect();
    Panel::new(values, ids, panel.timestamps.clone())
}

#[derive(Debug, Clone)]
pub struct Clipped {
    pub panel: Panel,
    pub clipped: usize,
}

/// Sets every entry with `|x| > threshold` to zero.
pub fn clip_outliers(panel: &Panel, threshold: f64) -> Result<Clipped> {
    if !(threshold > 0.0) {
        return Err(Error::param("threshold", format!("must be positive, got {threshold}")));
    }
    let mut values = panel.values.clone();
    let mut clipped = 0;
    for v in values.iter_mut() {
        if v.abs() > threshold {
            *v = 0.0;
            clipped += 1;
        }
    }
    Ok(Clipped {
        panel: Panel {
            values,
            asset_ids: panel.asset_ids.clone(),
            timestamps: panel.timestamps.clone(),
        },
        clipped,
    })
}

/// First difference of the logarithm: `ln s[t+1] - ln s[t]`.
pub fn log_diff(series: &[f64]) -> Result<Vec<f64>> {
    if let Some((index, &value)) = series.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    Ok(series.windows(2).map(|w| w[1].ln() - w[0].ln()).collect())
}
