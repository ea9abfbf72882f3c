//! Conformal inference for the ATT by moving-block permutations.
//!
//! For a sharp null `τ_t = α_t` the treated post-period outcomes are adjusted
//! by `α_t`, the estimator is refit on the adjusted panel, and the mean
//! absolute residual over the post-period positions is compared with the same
//! statistic under every cyclic rotation `π_j(t) = t + j mod T`. Confidence
//! sets follow by inverting the test over a grid of constant effects.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{fit, EstimatorError, Method};
use crate::moments::MomentConfig;
use crate::panel::{PanelData, PanelError};
use crate::solver::SolverOptions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConformalError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error("null has {got} entries, panel has {expected} post periods")]
    NullLength { expected: usize, got: usize },
    #[error("null value is not finite")]
    NonFiniteNull,
    #[error("level {0} is outside (0, 1)")]
    BadLevel(f64),
    #[error("grid is empty or not sorted ascending")]
    BadGrid,
    #[error("method {0} is not supported for conformal inference")]
    UnsupportedMethod(Method),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NullSpec {
    Constant(f64),
    PerPeriod(Vec<f64>),
}

impl NullSpec {
    fn values(&self, t1: usize) -> Result<Vec<f64>, ConformalError> {
        let v = match self {
            NullSpec::Constant(a) => vec![*a; t1],
            NullSpec::PerPeriod(v) if v.len() == t1 => v.clone(),
            NullSpec::PerPeriod(v) => return Err(ConformalError::NullLength { expected: t1, got: v.len() }),
        };
        if v.iter().any(|a| !a.is_finite()) {
            return Err(ConformalError::NonFiniteNull);
        }
        Ok(v)
    }
}

/// Moving-block p-value of a residual series whose last `t1` entries are the
/// post-period residuals: the share of the `T` cyclic rotations (identity
/// included) whose post-position statistic is at least the observed one.
pub fn block_p_value(residuals: &[f64], t1: usize) -> f64 {
    let t = residuals.len();
    let start = t - t1;
    let stat = |shift: usize| -> f64 {
        (start..t).map(|pos| residuals[(pos + shift) % t].abs()).sum::<f64>() / t1 as f64
    };
    let observed = stat(0);
    let count = (0..t).filter(|&j| stat(j) >= observed).count();
    count as f64 / t as f64
}

fn check_method(method: Method) -> Result<(), ConformalError> {
    if method == Method::Ols {
        return Err(ConformalError::UnsupportedMethod(method));
    }
    Ok(())
}

/// p-value of the sharp null `τ_t = α_t` for `method`.
pub fn conformal_p_value(
    panel: &PanelData,
    null: &NullSpec,
    method: Method,
    cfg: &MomentConfig,
    opts: &SolverOptions,
) -> Result<f64, ConformalError> {
    check_method(method)?;
    let t0 = panel.t0();
    let alpha = null.values(panel.t1())?;
    let mut adjusted = panel.treated_series();
    for (i, a) in alpha.iter().enumerate() {
        adjusted[t0 + i] -= a;
    }
    let extended = panel.with_treated_outcomes(&adjusted)?;
    let f = fit(method, &extended, cfg, opts)?;
    Ok(block_p_value(&f.residuals(&extended), panel.t1()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    /// The acceptance region reaches the lowest grid point, so the true set
    /// may extend further down.
    pub open_lower: bool,
    pub open_upper: bool,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        matches!((self.lower, self.upper), (Some(l), Some(u)) if l <= x && x <= u)
    }

    pub fn touches_grid_edge(&self) -> bool {
        self.open_lower || self.open_upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalReport {
    pub grid: Vec<f64>,
    pub p_values: Vec<f64>,
    pub interval: Interval,
    pub level: f64,
    pub estimator: Method,
    /// Mean post-period ATT of the unadjusted fit.
    pub tau_hat: f64,
}

impl ConformalReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "grid": self.grid,
            "p_values": self.p_values,
            "interval": self.interval,
            "level": self.level,
            "estimator": self.estimator,
            "tau_hat": self.tau_hat,
        })
    }

    /// Two-column `alpha,p` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["alpha", "p"])?;
        for (a, p) in self.grid.iter().zip(&self.p_values) {
            wtr.write_record([a.to_string(), p.to_string()])?;
        }
        wtr.flush()
    }
}

/// Smallest closed interval holding every grid point with `p > level`.
pub fn invert(grid: &[f64], p_values: &[f64], level: f64) -> Interval {
    let accepted: Vec<usize> = (0..grid.len()).filter(|&i| p_values[i] > level).collect();
    match (accepted.first(), accepted.last()) {
        (Some(&lo), Some(&hi)) => Interval {
            lower: Some(grid[lo]),
            upper: Some(grid[hi]),
            open_lower: lo == 0 && grid.len() > 1,
            open_upper: hi == grid.len() - 1 && grid.len() > 1,
        },
        _ => Interval { lower: None, upper: None, open_lower: false, open_upper: false },
    }
}

/// 41 points spanning `α̂ ± 5·sd`, where `α̂` is the mean post-period ATT and
/// `sd` the standard deviation of the pre-period residuals.
pub fn default_grid(
    panel: &PanelData,
    method: Method,
    cfg: &MomentConfig,
    opts: &SolverOptions,
) -> Result<Vec<f64>, ConformalError> {
    check_method(method)?;
    let f = fit(method, panel, cfg, opts)?;
    let pre = &f.residuals(panel)[..panel.t0()];
    let mean = pre.iter().sum::<f64>() / pre.len() as f64;
    let sd = (pre.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / pre.len() as f64).sqrt();
    let sd = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    Ok(linspace(f.mean_att() - 5.0 * sd, f.mean_att() + 5.0 * sd, 41))
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Test inversion over `grid` (or [`default_grid`] when `None`). Grid points
/// are evaluated in parallel; results keep grid order.
pub fn confidence_interval(
    panel: &PanelData,
    grid: Option<&[f64]>,
    level: f64,
    method: Method,
    cfg: &MomentConfig,
    opts: &SolverOptions,
) -> Result<ConformalReport, ConformalError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(ConformalError::BadLevel(level));
    }
    check_method(method)?;
    let grid = match grid {
        Some(g) => g.to_vec(),
        None => default_grid(panel, method, cfg, opts)?,
    };
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] <= w[1])) || grid.iter().any(|g| !g.is_finite()) {
        return Err(ConformalError::BadGrid);
    }
    let tau_hat = fit(method, panel, cfg, opts)?.mean_att();
    let p_values = grid
        .par_iter()
        .map(|&a| conformal_p_value(panel, &NullSpec::Constant(a), method, cfg, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let interval = invert(&grid, &p_values, level);
    Ok(ConformalReport { grid, p_values, interval, level, estimator: method, tau_hat })
}
