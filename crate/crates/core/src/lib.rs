//! Density-matching synthetic control.
//!
//! Synthetic-control weights are estimated by matching the moments of the
//! treated unit's pre-period outcome distribution to a convex combination of
//! the untreated units' moments (generalized method of moments over the
//! probability simplex). Besides the DMSCM and demeaned D2MSCM estimators the
//! crate ships the least-squares baselines, bootstrap distributional effects,
//! moving-block conformal inference and a Monte Carlo lab.
//!
//! ```no_run
//! use synthctl::{estimators, moments::MomentConfig, panel, solver::SolverOptions};
//!
//! let csv = std::fs::File::open("panel.csv")?;
//! let data = panel::load_panel(csv, &panel::PanelSchema::default(), "treated", 30)?;
//! let fit = estimators::fit_dmscm(&data, &MomentConfig::with_g(5), &SolverOptions::default())?;
//! println!("weights {:?}, mean ATT {:.3}", fit.weights.weights, fit.mean_att());
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```
//!
//! The runnable programs under `examples/` cover one capability each.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod conformal;
pub mod dte;
pub mod estimators;
pub mod moments;
pub mod panel;
pub mod rng;
pub mod simlab;
pub mod solver;

/// Version tag written into every JSON document.
pub const SCHEMA_VERSION: &str = "synthctl/v1";

pub use conformal::{confidence_interval, conformal_p_value, ConformalReport, NullSpec};
pub use dte::{bootstrap_counterfactual, mmd_test, quantiles, BootstrapSample, MmdReport};
pub use estimators::{fit, fit_abadie, fit_d2mscm, fit_dmscm, fit_fp_demeaned, FitResult, Method};
pub use moments::{build_demeaned_system, build_system, gmm_objective, MomentConfig, MomentSystem};
pub use panel::{demean, load_panel, PanelData, PanelSchema};
pub use solver::{project_simplex, solve_simplex_qp, SolveDiagnostics, SolverOptions, WeightVector};
