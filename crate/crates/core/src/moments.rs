//! Empirical moment systems for density matching.
//!
//! Under the mixture assumption every moment of the treated unit's outcome is
//! the same convex combination of the untreated units' moments. Averaging the
//! pre-period moments of order `γ = 1..=G` gives a linear system
//! `m̂(w) = b - A·w`; the GMM objective `m̂(w)ᵀ V m̂(w)` is then an explicit
//! quadratic in `w`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{demean, PanelData};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("moment of order {order} overflows f64; enable scaling or lower G")]
    Overflow { order: u32 },
    #[error("number of moment orders must be at least 1")]
    NoOrders,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weighting matrix is not symmetric positive semidefinite")]
    NotPsd,
    #[error("covariates requested but the panel has none")]
    NoCovariates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    None,
    /// Divide outcomes by the pooled pre-period standard deviation before
    /// raising them to a power.
    #[default]
    PooledSd,
}

/// The weighting matrix `V` of the GMM objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Identity,
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl Weighting {
    /// Materializes `V` for a moment vector of length `dim`.
    pub fn matrix(&self, dim: usize) -> Result<DMatrix<f64>, MomentError> {
        match self {
            Weighting::Identity => Ok(DMatrix::identity(dim, dim)),
            Weighting::Diagonal(d) => {
                if d.len() != dim {
                    return Err(MomentError::DimensionMismatch(format!(
                        "diagonal weighting has {} entries, moment vector has {dim}",
                        d.len()
                    )));
                }
                if d.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                    return Err(MomentError::NotPsd);
                }
                Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
            }
            Weighting::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(MomentError::DimensionMismatch(format!(
                        "weighting matrix must be {dim}×{dim}"
                    )));
                }
                let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
                check_psd(&m)?;
                Ok(m)
            }
        }
    }
}

pub(crate) fn check_psd(m: &DMatrix<f64>) -> Result<(), MomentError> {
    if !m.is_square() {
        return Err(MomentError::DimensionMismatch("weighting matrix is not square".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(MomentError::NotPsd);
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(MomentError::NotPsd);
            }
        }
    }
    let min_eig = m.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-10 * scale {
        return Err(MomentError::NotPsd);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MomentConfig {
    /// Moment orders are `1..=g`.
    pub g: u32,
    pub include_covariates: bool,
    pub scaling: Scaling,
    pub weighting: Weighting,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self { g: 5, include_covariates: false, scaling: Scaling::PooledSd, weighting: Weighting::Identity }
    }
}

impl MomentConfig {
    pub fn with_g(g: u32) -> Self {
        Self { g, ..Self::default() }
    }
}

/// Stacked empirical moments: `m̂(w) = b - A·w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    /// `(G + K) × J`; column `j` holds the moments of untreated unit `j + 1`.
    pub a_matrix: DMatrix<f64>,
    pub b_vector: DVector<f64>,
    pub gamma_orders: Vec<u32>,
    /// Outcome scale `s`; outcomes enter as `(y / s)^γ`.
    pub scale: f64,
    pub covariate_scales: Vec<f64>,
    pub demeaned: bool,
}

impl MomentSystem {
    pub fn n_moments(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn n_weights(&self) -> usize {
        self.a_matrix.ncols()
    }

    /// `b - A·w`.
    pub fn residual(&self, w: &[f64]) -> Result<DVector<f64>, MomentError> {
        if w.len() != self.n_weights() {
            return Err(MomentError::DimensionMismatch(format!(
                "{} weights for a system with {} units",
                w.len(),
                self.n_weights()
            )));
        }
        Ok(&self.b_vector - &self.a_matrix * DVector::from_column_slice(w))
    }
}

/// Population standard deviation of all pre-period entries, falling back to
/// 1 for degenerate (constant) data.
fn pooled_sd(y: &DMatrix<f64>, t0: usize) -> f64 {
    let pre = y.columns(0, t0);
    let n = pre.len() as f64;
    let mean = pre.iter().sum::<f64>() / n;
    let var = pre.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd.is_finite() && sd > 0.0 {
        sd
    } else {
        1.0
    }
}

fn assemble(
    y: &DMatrix<f64>,
    panel: &PanelData,
    cfg: &MomentConfig,
    demeaned: bool,
) -> Result<MomentSystem, MomentError> {
    if cfg.g == 0 {
        return Err(MomentError::NoOrders);
    }
    let t0 = panel.t0();
    let n_units = y.nrows();
    let j = n_units - 1;
    let scale = match cfg.scaling {
        Scaling::None => 1.0,
        Scaling::PooledSd => pooled_sd(y, t0),
    };
    let gamma_orders: Vec<u32> = (1..=cfg.g).collect();

    let covs = if cfg.include_covariates {
        Some(panel.covariates().ok_or(MomentError::NoCovariates)?)
    } else {
        None
    };
    let k = covs.map_or(0, |c| c.values.len());
    let rows = gamma_orders.len() + k;

    // per unit, per order: (1/T0) Σ_t (y/s)^γ
    let mut moments = DMatrix::zeros(rows, n_units);
    for u in 0..n_units {
        for (r, &gamma) in gamma_orders.iter().enumerate() {
            let sum: f64 = (0..t0).map(|t| (y[(u, t)] / scale).powi(gamma as i32)).sum();
            let m = sum / t0 as f64;
            if !m.is_finite() {
                return Err(MomentError::Overflow { order: gamma });
            }
            moments[(r, u)] = m;
        }
    }
    let mut covariate_scales = Vec::with_capacity(k);
    if let Some(c) = covs {
        for (i, x) in c.values.iter().enumerate() {
            let s = match cfg.scaling {
                Scaling::None => 1.0,
                Scaling::PooledSd => pooled_sd(x, t0),
            };
            covariate_scales.push(s);
            for u in 0..n_units {
                let avg = (0..t0).map(|t| x[(u, t)] / s).sum::<f64>() / t0 as f64;
                moments[(gamma_orders.len() + i, u)] = avg;
            }
        }
    }
    // the objective squares these entries, so their squares must stay finite too
    for (r, &order) in gamma_orders.iter().enumerate() {
        let sq: f64 = moments.row(r).iter().map(|v| v * v).sum();
        if !sq.is_finite() {
            return Err(MomentError::Overflow { order });
        }
    }

    let b_vector = moments.column(0).into_owned();
    let a_matrix = moments.columns(1, j).into_owned();
    Ok(MomentSystem { a_matrix, b_vector, gamma_orders, scale, covariate_scales, demeaned })
}

/// Moments of the raw outcomes (plus optional covariate averages).
pub fn build_system(panel: &PanelData, cfg: &MomentConfig) -> Result<MomentSystem, MomentError> {
    assemble(panel.outcomes(), panel, cfg, false)
}

/// Moments of the outcomes after removing each unit's pre-period mean. The
/// first-order row is identically zero and contributes nothing to the
/// objective; it is kept so the rows line up with `γ = 1..=G`.
pub fn build_demeaned_system(panel: &PanelData, cfg: &MomentConfig) -> Result<MomentSystem, MomentError> {
    let d = demean(panel);
    let mut sys = assemble(&d.demeaned_outcomes, panel, cfg, true)?;
    // exact zeros instead of rounding residue
    sys.a_matrix.row_mut(0).fill(0.0);
    sys.b_vector[0] = 0.0;
    Ok(sys)
}

/// `m̂(w)ᵀ V m̂(w)`.
pub fn gmm_objective(system: &MomentSystem, v: &DMatrix<f64>, w: &[f64]) -> Result<f64, MomentError> {
    let n = system.n_moments();
    if v.nrows() != n || v.ncols() != n {
        return Err(MomentError::DimensionMismatch(format!(
            "weighting matrix is {}×{}, moment vector has {n} entries",
            v.nrows(),
            v.ncols()
        )));
    }
    let r = system.residual(w)?;
    Ok(r.dot(&(v * &r)).max(0.0))
}
