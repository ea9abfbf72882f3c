//! Outcome panels: long-format CSV ingestion, validation and demeaning.
//!
//! A [`PanelData`] holds `J + 1` units observed over `T` periods. The treated
//! unit is always stored at index 0 and the first `t0` periods form the
//! pre-treatment window.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PanelError {
    #[error("unit {unit:?} has no observation for period {period}")]
    MissingCell { unit: String, period: String },
    #[error("unit {unit:?} has more than one row for period {period}")]
    DuplicateCell { unit: String, period: String },
    #[error("treated unit {0:?} does not appear in the panel")]
    UnknownTreated(String),
    #[error("t0 = {t0} is outside [2, {}] for a panel with {periods} periods", periods.saturating_sub(1))]
    BadT0 { t0: usize, periods: usize },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("panel needs at least one untreated unit")]
    NoControls,
    #[error("unit {0:?} appears more than once")]
    DuplicateUnit(String),
    #[error("non-finite outcome for unit {unit:?} at period index {period}")]
    NonFinite { unit: String, period: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("csv i/o: {0}")]
    Io(String),
}

/// How period values are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PeriodKind {
    #[default]
    Integer,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PeriodLabel {
    Int(i64),
    Text(String),
}

impl fmt::Display for PeriodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PeriodLabel::Int(v) => write!(f, "{v}"),
            PeriodLabel::Text(s) => f.write_str(s),
        }
    }
}

/// Column bindings for a long-format panel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub unit: String,
    pub period: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    pub period_kind: PeriodKind,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            unit: "unit".into(),
            period: "period".into(),
            outcome: "outcome".into(),
            covariates: Vec::new(),
            period_kind: PeriodKind::Integer,
        }
    }
}

/// Named covariates, one `(J + 1) × T` matrix per covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub names: Vec<String>,
    pub values: Vec<DMatrix<f64>>,
}

/// A balanced panel with a single treated unit stored at row 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    units: Vec<String>,
    outcomes: DMatrix<f64>,
    covariates: Option<Covariates>,
    t0: usize,
    period_labels: Vec<PeriodLabel>,
}

impl PanelData {
    /// Builds a panel from a unit-by-period outcome matrix. Rows are
    /// reordered so that `treated` ends up first; the remaining units keep
    /// their relative order.
    pub fn new(
        units: Vec<String>,
        treated: &str,
        outcomes: DMatrix<f64>,
        covariates: Option<Covariates>,
        t0: usize,
        period_labels: Vec<PeriodLabel>,
    ) -> Result<Self, PanelError> {
        let n = units.len();
        if outcomes.nrows() != n {
            return Err(PanelError::Shape(format!(
                "{} unit ids but {} outcome rows",
                n,
                outcomes.nrows()
            )));
        }
        let periods = outcomes.ncols();
        if period_labels.len() != periods {
            return Err(PanelError::Shape(format!(
                "{} period labels but {} outcome columns",
                period_labels.len(),
                periods
            )));
        }
        let mut seen = HashMap::new();
        for (i, u) in units.iter().enumerate() {
            if seen.insert(u.as_str(), i).is_some() {
                return Err(PanelError::DuplicateUnit(u.clone()));
            }
        }
        let treated_idx = *seen
            .get(treated)
            .ok_or_else(|| PanelError::UnknownTreated(treated.to_string()))?;
        if n < 2 {
            return Err(PanelError::NoControls);
        }
        if t0 < 2 || t0 >= periods {
            return Err(PanelError::BadT0 { t0, periods });
        }
        if let Some(cov) = &covariates {
            if cov.names.len() != cov.values.len() {
                return Err(PanelError::Shape("covariate names/values length differ".into()));
            }
            for m in &cov.values {
                if m.nrows() != n || m.ncols() != periods {
                    return Err(PanelError::Shape("covariate matrix has wrong shape".into()));
                }
            }
        }
        for i in 0..n {
            for t in 0..periods {
                if !outcomes[(i, t)].is_finite() {
                    return Err(PanelError::NonFinite { unit: units[i].clone(), period: t });
                }
            }
        }

        let order: Vec<usize> = std::iter::once(treated_idx)
            .chain((0..n).filter(|&i| i != treated_idx))
            .collect();
        let reorder = |m: &DMatrix<f64>| DMatrix::from_fn(n, periods, |r, c| m[(order[r], c)]);
        Ok(Self {
            units: order.iter().map(|&i| units[i].clone()).collect(),
            outcomes: reorder(&outcomes),
            covariates: covariates.map(|c| Covariates {
                names: c.names,
                values: c.values.iter().map(reorder).collect(),
            }),
            t0,
            period_labels,
        })
    }

    /// Convenience constructor with unit ids `"0"`, `"1"`, ... (row 0 treated)
    /// and integer periods `1..=T`.
    pub fn from_matrix(outcomes: DMatrix<f64>, t0: usize) -> Result<Self, PanelError> {
        let units = (0..outcomes.nrows()).map(|i| i.to_string()).collect();
        let labels = (1..=outcomes.ncols() as i64).map(PeriodLabel::Int).collect();
        Self::new(units, "0", outcomes, None, t0, labels)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn treated_unit(&self) -> &str {
        &self.units[0]
    }

    /// Number of untreated units `J`.
    pub fn n_controls(&self) -> usize {
        self.units.len() - 1
    }

    pub fn n_periods(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn t1(&self) -> usize {
        self.n_periods() - self.t0
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn period_labels(&self) -> &[PeriodLabel] {
        &self.period_labels
    }

    /// Outcome of `unit` (0 = treated) at period index `t` (0-based).
    pub fn y(&self, unit: usize, t: usize) -> f64 {
        self.outcomes[(unit, t)]
    }

    pub fn treated_series(&self) -> Vec<f64> {
        self.outcomes.row(0).iter().copied().collect()
    }

    /// Returns a copy with the treated unit's outcome series replaced.
    pub fn with_treated_outcomes(&self, series: &[f64]) -> Result<Self, PanelError> {
        if series.len() != self.n_periods() {
            return Err(PanelError::Shape(format!(
                "treated series has {} entries, panel has {} periods",
                series.len(),
                self.n_periods()
            )));
        }
        let mut out = self.clone();
        for (t, &v) in series.iter().enumerate() {
            if !v.is_finite() {
                return Err(PanelError::NonFinite { unit: self.units[0].clone(), period: t });
            }
            out.outcomes[(0, t)] = v;
        }
        Ok(out)
    }

    /// Writes the panel in long format with the given column names.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &PanelSchema) -> Result<(), PanelError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let cov_names: Vec<String> = match (&self.covariates, schema.covariates.is_empty()) {
            (Some(c), true) => c.names.clone(),
            (Some(_), false) => schema.covariates.clone(),
            (None, _) => Vec::new(),
        };
        let mut header = vec![schema.unit.clone(), schema.period.clone(), schema.outcome.clone()];
        header.extend(cov_names.iter().cloned());
        wtr.write_record(&header).map_err(io_err)?;
        for (i, unit) in self.units.iter().enumerate() {
            for (t, label) in self.period_labels.iter().enumerate() {
                let mut rec = vec![unit.clone(), label.to_string(), self.outcomes[(i, t)].to_string()];
                if let Some(c) = &self.covariates {
                    rec.extend(c.values.iter().map(|m| m[(i, t)].to_string()));
                }
                wtr.write_record(&rec).map_err(io_err)?;
            }
        }
        wtr.flush().map_err(|e| PanelError::Io(e.to_string()))
    }
}

fn io_err(e: csv::Error) -> PanelError {
    PanelError::Io(e.to_string())
}

/// Parses a long-format CSV (`unit,period,outcome[,covariates...]`).
///
/// Covariate cells may be left empty for a unit as long as every non-empty
/// cell of that unit carries the same value; that value is broadcast to all
/// periods (time-invariant covariates).
pub fn load_panel<R: Read>(
    source: R,
    schema: &PanelSchema,
    treated: &str,
    t0: usize,
) -> Result<PanelData, PanelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = rdr.headers().map_err(|e| PanelError::Parse { row: 1, message: e.to_string() })?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
    };
    let unit_col = col(&schema.unit)?;
    let period_col = col(&schema.period)?;
    let outcome_col = col(&schema.outcome)?;
    let cov_cols = schema.covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>, _>>()?;

    struct Row {
        unit: usize,
        period: PeriodLabel,
        outcome: f64,
        covs: Vec<Option<f64>>,
    }

    let mut unit_ids: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is row 1
        let row_no = i + 2;
        let rec = rec.map_err(|e| PanelError::Parse { row: row_no, message: e.to_string() })?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let unit_name = field(unit_col).to_string();
        if unit_name.is_empty() {
            return Err(PanelError::Parse { row: row_no, message: "empty unit id".into() });
        }
        let period = match schema.period_kind {
            PeriodKind::Integer => PeriodLabel::Int(field(period_col).parse().map_err(|_| PanelError::Parse {
                row: row_no,
                message: format!("period {:?} is not an integer", field(period_col)),
            })?),
            PeriodKind::Text => PeriodLabel::Text(field(period_col).to_string()),
        };
        let outcome: f64 = field(outcome_col).parse().map_err(|_| PanelError::Parse {
            row: row_no,
            message: format!("outcome {:?} is not a number", field(outcome_col)),
        })?;
        if !outcome.is_finite() {
            return Err(PanelError::Parse { row: row_no, message: "outcome is not finite".into() });
        }
        let covs = cov_cols
            .iter()
            .map(|&c| {
                let s = field(c);
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some).ok_or_else(|| PanelError::Parse {
                        row: row_no,
                        message: format!("covariate {:?} is not a finite number", s),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let next = unit_ids.len();
        let unit = *unit_index.entry(unit_name.clone()).or_insert_with(|| {
            unit_ids.push(unit_name);
            next
        });
        rows.push(Row { unit, period, outcome, covs });
    }

    if !unit_index.contains_key(treated) {
        return Err(PanelError::UnknownTreated(treated.to_string()));
    }

    let mut periods: Vec<PeriodLabel> = rows.iter().map(|r| r.period.clone()).collect();
    periods.sort();
    periods.dedup();
    let period_index: HashMap<&PeriodLabel, usize> = periods.iter().enumerate().map(|(i, p)| (p, i)).collect();
    let n = unit_ids.len();
    let n_t = periods.len();
    let k = cov_cols.len();

    let mut outcomes = DMatrix::from_element(n, n_t, f64::NAN);
    let mut filled = vec![false; n * n_t];
    let mut cov_cells: Vec<Vec<Option<f64>>> = vec![vec![None; n * n_t]; k];
    for r in &rows {
        let t = period_index[&r.period];
        let slot = r.unit * n_t + t;
        if filled[slot] {
            return Err(PanelError::DuplicateCell { unit: unit_ids[r.unit].clone(), period: r.period.to_string() });
        }
        filled[slot] = true;
        outcomes[(r.unit, t)] = r.outcome;
        for (c, v) in r.covs.iter().enumerate() {
            cov_cells[c][slot] = *v;
        }
    }
    for u in 0..n {
        for t in 0..n_t {
            if !filled[u * n_t + t] {
                return Err(PanelError::MissingCell { unit: unit_ids[u].clone(), period: periods[t].to_string() });
            }
        }
    }

    let covariates = if k == 0 {
        None
    } else {
        let mut values = Vec::with_capacity(k);
        for (c, cells) in cov_cells.iter().enumerate() {
            let mut m = DMatrix::zeros(n, n_t);
            for u in 0..n {
                let unit_cells = &cells[u * n_t..(u + 1) * n_t];
                if unit_cells.iter().all(Option::is_some) {
                    for t in 0..n_t {
                        m[(u, t)] = unit_cells[t].unwrap();
                    }
                    continue;
                }
                let present: Vec<f64> = unit_cells.iter().flatten().copied().collect();
                let Some(&first) = present.first() else {
                    return Err(PanelError::MissingCell {
                        unit: unit_ids[u].clone(),
                        period: format!("(all periods of covariate {})", schema.covariates[c]),
                    });
                };
                if present.iter().any(|&v| v != first) {
                    let t = unit_cells.iter().position(Option::is_none).unwrap_or(0);
                    return Err(PanelError::MissingCell { unit: unit_ids[u].clone(), period: periods[t].to_string() });
                }
                for t in 0..n_t {
                    m[(u, t)] = first;
                }
            }
            values.push(m);
        }
        Some(Covariates { names: schema.covariates.clone(), values })
    };

    if t0 < 2 || t0 >= n_t {
        return Err(PanelError::BadT0 { t0, periods: n_t });
    }
    PanelData::new(unit_ids, treated, outcomes, covariates, t0, periods)
}

/// A panel whose outcomes have had each unit's pre-period mean removed.
#[derive(Debug, Clone, PartialEq)]
pub struct DemeanedPanel {
    pub base: PanelData,
    /// Per-unit pre-period means, treated first.
    pub unit_means: Vec<f64>,
    pub demeaned_outcomes: DMatrix<f64>,
}

/// Subtracts each unit's pre-period mean from all of its periods.
pub fn demean(panel: &PanelData) -> DemeanedPanel {
    let y = panel.outcomes();
    let t0 = panel.t0();
    let unit_means: Vec<f64> = (0..y.nrows())
        .map(|i| y.row(i).columns(0, t0).iter().sum::<f64>() / t0 as f64)
        .collect();
    let demeaned_outcomes = DMatrix::from_fn(y.nrows(), y.ncols(), |i, t| y[(i, t)] - unit_means[i]);
    DemeanedPanel { base: panel.clone(), unit_means, demeaned_outcomes }
}

impl DemeanedPanel {
    /// The demeaned outcomes as a new panel (same units, periods and t0).
    pub fn to_panel(&self) -> PanelData {
        let mut p = self.base.clone();
        p.outcomes = self.demeaned_outcomes.clone();
        p
    }
}
