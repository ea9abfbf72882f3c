//! Synthetic-control fits and ATT series.
//!
//! * [`fit_dmscm`]: GMM weights from raw moments, `τ̂_t = Y_{0,t} - Σ ŵ_j Y_{j,t}`.
//! * [`fit_d2mscm`]: GMM weights from demeaned moments plus the intercept
//!   `ŵ₀ = Ȳ₀ - Σ ŵ_j Ȳ_j`.
//! * [`fit_abadie`]: simplex-constrained least squares on pre-period outcomes.
//! * [`fit_fp_demeaned`]: the same least squares on demeaned outcomes.
//! * [`fit_ols`]: unconstrained least squares (no intercept), used to show the
//!   attenuation predicted by [`ls_bias_limit`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{build_demeaned_system, build_system, MomentConfig, MomentError};
use crate::panel::{demean, PanelData};
use crate::solver::{
    ls_unconstrained, numerical_rank, solve_least_squares_simplex, solve_simplex_qp, SolveDiagnostics, SolverError,
    SolverOptions, WeightVector,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("Q* + Σ is singular")]
    SingularMatrix,
    #[error("bias-limit input: {0}")]
    BadInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dmscm,
    D2mscm,
    Abadie,
    FpDemeaned,
    Ols,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Dmscm, Method::D2mscm, Method::Abadie, Method::FpDemeaned, Method::Ols];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dmscm => "dmscm",
            Method::D2mscm => "d2mscm",
            Method::Abadie => "abadie",
            Method::FpDemeaned => "fp_demeaned",
            Method::Ols => "ols",
        }
    }

    /// Whether the fit depends on the moment configuration.
    pub fn uses_moments(self) -> bool {
        matches!(self, Method::Dmscm | Method::D2mscm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "dmscm" => Ok(Method::Dmscm),
            "d2mscm" => Ok(Method::D2mscm),
            "abadie" => Ok(Method::Abadie),
            "fp_demeaned" | "fp" => Ok(Method::FpDemeaned),
            "ols" => Ok(Method::Ols),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub weights: WeightVector,
    /// Predicted untreated outcome of the treated unit, all `T` periods.
    pub counterfactual: Vec<f64>,
    /// `Y_{0,t} - counterfactual[t]` over the post periods.
    pub att: Vec<f64>,
    pub pre_fit_rmse: f64,
    pub diagnostics: SolveDiagnostics,
}

impl FitResult {
    pub fn mean_att(&self) -> f64 {
        self.att.iter().sum::<f64>() / self.att.len() as f64
    }

    /// `Y_{0,t} - counterfactual[t]` over all periods.
    pub fn residuals(&self, panel: &PanelData) -> Vec<f64> {
        (0..panel.n_periods()).map(|t| panel.y(0, t) - self.counterfactual[t]).collect()
    }

    /// JSON document with a `schema_version` field.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "method": self.method,
            "weights": self.weights.weights,
            "intercept": self.weights.intercept,
            "att": self.att,
            "counterfactual": self.counterfactual,
            "pre_fit_rmse": self.pre_fit_rmse,
            "diagnostics": self.diagnostics,
        })
    }
}

fn assemble_fit(panel: &PanelData, method: Method, weights: WeightVector, diagnostics: SolveDiagnostics) -> FitResult {
    let y = panel.outcomes();
    let t0 = panel.t0();
    let intercept = weights.intercept.unwrap_or(0.0);
    let counterfactual: Vec<f64> = (0..panel.n_periods())
        .map(|t| intercept + weights.weights.iter().enumerate().map(|(j, w)| w * y[(j + 1, t)]).sum::<f64>())
        .collect();
    let att = (t0..panel.n_periods()).map(|t| y[(0, t)] - counterfactual[t]).collect();
    let sse: f64 = (0..t0).map(|t| (y[(0, t)] - counterfactual[t]).powi(2)).sum();
    FitResult { method, weights, counterfactual, att, pre_fit_rmse: (sse / t0 as f64).sqrt(), diagnostics }
}

pub fn fit_dmscm(panel: &PanelData, cfg: &MomentConfig, opts: &SolverOptions) -> Result<FitResult, EstimatorError> {
    let system = build_system(panel, cfg)?;
    let v = cfg.weighting.matrix(system.n_moments())?;
    let (w, diag) = solve_simplex_qp(&system, &v, opts)?;
    Ok(assemble_fit(panel, Method::Dmscm, w, diag))
}

pub fn fit_d2mscm(panel: &PanelData, cfg: &MomentConfig, opts: &SolverOptions) -> Result<FitResult, EstimatorError> {
    let system = build_demeaned_system(panel, cfg)?;
    let v = cfg.weighting.matrix(system.n_moments())?;
    let (mut w, diag) = solve_simplex_qp(&system, &v, opts)?;
    let means = demean(panel).unit_means;
    w.intercept = Some(means[0] - w.weights.iter().zip(&means[1..]).map(|(a, b)| a * b).sum::<f64>());
    Ok(assemble_fit(panel, Method::D2mscm, w, diag))
}

fn pre_period_design(y: &DMatrix<f64>, t0: usize) -> (DMatrix<f64>, DVector<f64>) {
    let j = y.nrows() - 1;
    let scale = 1.0 / (t0 as f64).sqrt();
    let a = DMatrix::from_fn(t0, j, |t, c| y[(c + 1, t)] * scale);
    let b = DVector::from_fn(t0, |t, _| y[(0, t)] * scale);
    (a, b)
}

/// Simplex-constrained least squares on the pre-period outcomes.
pub fn fit_abadie(panel: &PanelData, opts: &SolverOptions) -> Result<FitResult, EstimatorError> {
    let (a, b) = pre_period_design(panel.outcomes(), panel.t0());
    let (w, diag) = solve_least_squares_simplex(&a, &b, &DMatrix::identity(a.nrows(), a.nrows()), opts)?;
    Ok(assemble_fit(panel, Method::Abadie, w, diag))
}

/// Simplex-constrained least squares on outcomes demeaned by their
/// pre-period averages. The reported intercept is `Ȳ₀ - Σ ŵ_j Ȳ_j`, so the
/// ATT equals `(Y_{0,t} - Ȳ₀) - Σ ŵ_j (Y_{j,t} - Ȳ_j)`.
pub fn fit_fp_demeaned(panel: &PanelData, opts: &SolverOptions) -> Result<FitResult, EstimatorError> {
    let d = demean(panel);
    let (a, b) = pre_period_design(&d.demeaned_outcomes, panel.t0());
    let (mut w, diag) = solve_least_squares_simplex(&a, &b, &DMatrix::identity(a.nrows(), a.nrows()), opts)?;
    let means = &d.unit_means;
    w.intercept = Some(means[0] - w.weights.iter().zip(&means[1..]).map(|(a, b)| a * b).sum::<f64>());
    Ok(assemble_fit(panel, Method::FpDemeaned, w, diag))
}

/// Unconstrained least squares weights (may leave the simplex).
pub fn fit_ols(panel: &PanelData) -> Result<FitResult, EstimatorError> {
    let w = ls_unconstrained(panel)?;
    let (a, _) = pre_period_design(panel.outcomes(), panel.t0());
    let diag = SolveDiagnostics {
        converged: true,
        rank_estimate: numerical_rank(&a),
        ..Default::default()
    };
    let mut fit = assemble_fit(panel, Method::Ols, WeightVector::new(w), diag);
    fit.diagnostics.final_objective = fit.pre_fit_rmse.powi(2);
    Ok(fit)
}

/// Dispatches to the fit for `method`. `cfg` is ignored by the least-squares
/// methods.
pub fn fit(
    method: Method,
    panel: &PanelData,
    cfg: &MomentConfig,
    opts: &SolverOptions,
) -> Result<FitResult, EstimatorError> {
    match method {
        Method::Dmscm => fit_dmscm(panel, cfg, opts),
        Method::D2mscm => fit_d2mscm(panel, cfg, opts),
        Method::Abadie => fit_abadie(panel, opts),
        Method::FpDemeaned => fit_fp_demeaned(panel, opts),
        Method::Ols => fit_ols(panel),
    }
}

/// Inputs of the least-squares attenuation formula.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasLimitInput {
    /// Second moments of the noiseless regressors (`Q*`).
    pub q_star: DMatrix<f64>,
    /// Idiosyncratic error variances (`Σ`).
    pub sigma: DMatrix<f64>,
    pub w_star: Vec<f64>,
}

impl BiasLimitInput {
    pub fn from_diagonals(q: &[f64], sigma: &[f64], w_star: &[f64]) -> Self {
        Self {
            q_star: DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            sigma: DMatrix::from_diagonal(&DVector::from_column_slice(sigma)),
            w_star: w_star.to_vec(),
        }
    }
}

/// Probability limit of unconstrained least squares when the regressors are
/// observed with noise: `w* - (Q* + Σ)⁻¹ Σ w* = (Q* + Σ)⁻¹ Q* w*`.
pub fn ls_bias_limit(input: &BiasLimitInput) -> Result<Vec<f64>, EstimatorError> {
    let j = input.w_star.len();
    if input.q_star.shape() != (j, j) || input.sigma.shape() != (j, j) {
        return Err(EstimatorError::BadInput(format!("Q* and Σ must be {j}×{j}")));
    }
    if input.q_star.diagonal().iter().chain(input.sigma.diagonal().iter()).any(|&v| v < 0.0) {
        return Err(EstimatorError::BadInput("diagonal entries must be non-negative".into()));
    }
    let total = &input.q_star + &input.sigma;
    let lu = total.lu();
    let w = DVector::from_column_slice(&input.w_star);
    let rhs = &input.q_star * w;
    let sol = lu.solve(&rhs).ok_or(EstimatorError::SingularMatrix)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::SingularMatrix);
    }
    Ok(sol.iter().copied().collect())
}
