//! Simulation designs and replication runners.
//!
//! * [`gen_mixture_dgp`]: drifting Gaussian components with a treated unit
//!   drawn from their `w*`-mixture, plus a constant effect `τ` after `t0`.
//! * [`run_replication_study`]: a grid over `J` and `G`, several estimators,
//!   `R` replications with schedule-independent seeds.
//! * [`theorem1_experiment`]: noisy regressors that bias least squares while
//!   leaving the moment conditions intact.
//! * [`symmetric_variance_mixture`]: two zero-mean components that differ only
//!   in variance, so first moments cannot identify the weights.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::{Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dte::{bootstrap_counterfactual, mmd2_unbiased, median_heuristic};
use crate::estimators::{fit, fit_dmscm, ls_bias_limit, BiasLimitInput, EstimatorError, Method};
use crate::moments::MomentConfig;
use crate::panel::{Covariates, PanelData, PeriodLabel};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::solver::{ls_unconstrained, SolverOptions};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{failed} of {total} replications failed (more than 10%); first error: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// How the drift magnitude `drift_var` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DriftScale {
    /// Increments are `N(0, drift_var)`, i.e. standard deviation `√drift_var`.
    #[default]
    Variance,
    /// Increments have standard deviation `drift_var`.
    StdDev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureDgpConfig {
    pub j: usize,
    pub t0: usize,
    pub t1: usize,
    /// Covariate dimension.
    pub k: usize,
    pub tau: f64,
    pub var_init_low: f64,
    pub var_init_high: f64,
    pub drift_var: f64,
    pub drift_scale: DriftScale,
    /// Variance increments at or below this value are replaced by it.
    pub var_floor_increment: f64,
    pub seed: u64,
}

impl Default for MixtureDgpConfig {
    fn default() -> Self {
        Self {
            j: 10,
            t0: 30,
            t1: 100,
            k: 5,
            tau: 20.0,
            var_init_low: 1.0,
            var_init_high: 20.0,
            drift_var: 10.0,
            drift_scale: DriftScale::Variance,
            var_floor_increment: 0.1,
            seed: 0,
        }
    }
}

impl MixtureDgpConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.j < 1 {
            return Err(SimError::Config("j must be at least 1".into()));
        }
        if self.t0 < 2 || self.t1 < 1 {
            return Err(SimError::Config("need t0 >= 2 and t1 >= 1".into()));
        }
        if !(self.var_init_low > 0.0) || self.var_init_high < self.var_init_low {
            return Err(SimError::Config("initial variance range must be positive and ordered".into()));
        }
        if !(self.drift_var >= 0.0) || !self.tau.is_finite() {
            return Err(SimError::Config("drift variance must be non-negative and tau finite".into()));
        }
        Ok(())
    }
}

/// Ground truth of a generated panel. Parameter paths have `T + 1` entries
/// (index 0 is the initial draw, index `t` the parameters of period `t`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureTruth {
    pub w_star: Vec<f64>,
    pub tau: f64,
    /// Outcome means per untreated unit.
    pub mean_paths: Vec<Vec<f64>>,
    /// Outcome variances per untreated unit.
    pub var_paths: Vec<Vec<f64>>,
    /// Time-invariant covariate means / variances, `J × K`.
    pub covariate_means: Vec<Vec<f64>>,
    pub covariate_vars: Vec<Vec<f64>>,
}

impl MixtureTruth {
    /// Draws `n` untreated outcomes of the treated unit from the true
    /// post-period mixture, periods chosen uniformly.
    pub fn sample_post_counterfactual(&self, t0: usize, t1: usize, n: usize, rng: &mut Rng) -> Vec<f64> {
        let chooser = WeightedIndex::new(&self.w_star).expect("w* is a probability vector");
        (0..n)
            .map(|_| {
                let t = t0 + 1 + rng.random_range(0..t1);
                let c = chooser.sample(rng);
                let z: f64 = rng.sample(StandardNormal);
                self.mean_paths[c][t] + self.var_paths[c][t].sqrt() * z
            })
            .collect()
    }
}

/// Generates one panel from the drifting Gaussian mixture design.
pub fn gen_mixture_dgp(cfg: &MixtureDgpConfig) -> Result<(PanelData, MixtureTruth), SimError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let (j, k) = (cfg.j, cfg.k);
    let t_total = cfg.t0 + cfg.t1;
    let var_init = Uniform::new_inclusive(cfg.var_init_low, cfg.var_init_high)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let drift_sd = match cfg.drift_scale {
        DriftScale::Variance => cfg.drift_var.sqrt(),
        DriftScale::StdDev => cfg.drift_var,
    };
    let drift = Normal::new(0.0, drift_sd).map_err(|e| SimError::Config(e.to_string()))?;

    let mut w_star: Vec<f64> = (0..j).map(|_| rng.random::<f64>()).collect();
    let total: f64 = w_star.iter().sum();
    w_star.iter_mut().for_each(|w| *w /= total);

    let mut mean_paths = Vec::with_capacity(j);
    let mut var_paths = Vec::with_capacity(j);
    let mut covariate_means = Vec::with_capacity(j);
    let mut covariate_vars = Vec::with_capacity(j);
    for _ in 0..j {
        let mut mu = vec![rng.sample::<f64, _>(StandardNormal)];
        let mut var = vec![var_init.sample(&mut rng)];
        for t in 0..t_total {
            mu.push(mu[t] + drift.sample(&mut rng));
            let mut inc = drift.sample(&mut rng);
            if inc <= cfg.var_floor_increment {
                inc = cfg.var_floor_increment;
            }
            var.push(var[t] + inc);
        }
        mean_paths.push(mu);
        var_paths.push(var);
        covariate_means.push((0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
        covariate_vars.push((0..k).map(|_| var_init.sample(&mut rng)).collect::<Vec<_>>());
    }

    let n_units = j + 1;
    let mut y = DMatrix::zeros(n_units, t_total);
    let mut x: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::zeros(n_units, t_total)).collect();
    let chooser = WeightedIndex::new(&w_star).map_err(|e| SimError::Config(e.to_string()))?;
    for t in 0..t_total {
        let period = t + 1;
        for u in 0..j {
            let z: f64 = rng.sample(StandardNormal);
            y[(u + 1, t)] = mean_paths[u][period] + var_paths[u][period].sqrt() * z;
            for c in 0..k {
                let z: f64 = rng.sample(StandardNormal);
                x[c][(u + 1, t)] = covariate_means[u][c] + covariate_vars[u][c].sqrt() * z;
            }
        }
        // the treated unit draws its whole (outcome, covariates) vector from one component
        let comp = chooser.sample(&mut rng);
        let z: f64 = rng.sample(StandardNormal);
        let effect = if t >= cfg.t0 { cfg.tau } else { 0.0 };
        y[(0, t)] = mean_paths[comp][period] + var_paths[comp][period].sqrt() * z + effect;
        for c in 0..k {
            let z: f64 = rng.sample(StandardNormal);
            x[c][(0, t)] = covariate_means[comp][c] + covariate_vars[comp][c].sqrt() * z;
        }
    }

    let units = std::iter::once("treated".to_string()).chain((1..=j).map(|u| format!("u{u}"))).collect();
    let covariates = (k > 0).then(|| Covariates { names: (1..=k).map(|c| format!("x{c}")).collect(), values: x });
    let labels = (1..=t_total as i64).map(PeriodLabel::Int).collect();
    let panel = PanelData::new(units, "treated", y, covariates, cfg.t0, labels)
        .map_err(|e| SimError::Config(e.to_string()))?;
    Ok((panel, MixtureTruth { w_star, tau: cfg.tau, mean_paths, var_paths, covariate_means, covariate_vars }))
}

/// Replication study specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    /// Base DGP; `j` and `seed` are overridden per cell and replication.
    pub dgp: MixtureDgpConfig,
    pub j_values: Vec<usize>,
    pub g_values: Vec<u32>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub seed: u64,
    pub include_covariates: bool,
    /// Compare bootstrap counterfactual samples with fresh draws from the true
    /// post-period mixture (squared MMD, median-heuristic bandwidth).
    pub mmd_draws: Option<usize>,
    pub record_runtime: bool,
    pub solver: SolverOptions,
}

impl Default for StudySpec {
    fn default() -> Self {
        Self {
            dgp: MixtureDgpConfig::default(),
            j_values: vec![10],
            g_values: vec![2, 5, 10],
            methods: vec![Method::Dmscm, Method::Abadie],
            replications: 100,
            seed: 20_240_601,
            include_covariates: false,
            mmd_draws: None,
            record_runtime: false,
            solver: SolverOptions::default(),
        }
    }
}

impl StudySpec {
    /// Grid of the figure comparing DMSCM and Abadie across `G`.
    pub fn figure2(replications: usize, seed: u64) -> Self {
        Self { replications, seed, ..Self::default() }
    }

    /// Error-versus-`J` grid with long post periods and MMD to the truth.
    pub fn appendix_d(replications: usize, seed: u64) -> Self {
        let mut j_values = vec![1, 5];
        j_values.extend((10..=50).step_by(5));
        Self {
            dgp: MixtureDgpConfig { t1: 1000, ..MixtureDgpConfig::default() },
            j_values,
            g_values: vec![2, 3, 5, 10],
            methods: vec![Method::Dmscm, Method::Abadie],
            replications,
            seed,
            mmd_draws: Some(500),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub j: usize,
    pub g: u32,
    pub method: Method,
    pub replication: usize,
    pub seed: u64,
    /// Mean over post periods of `|τ̂_t - τ|`.
    pub att_error: f64,
    /// `|mean_t τ̂_t - τ|`.
    pub att_bias: f64,
    /// `‖ŵ - w*‖∞`.
    pub weight_error: f64,
    pub mmd_to_truth: Option<f64>,
    pub runtime_secs: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Summary {
    /// Quartiles by linear interpolation between order statistics.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let q = crate::dte::quantiles(values, &[0.25, 0.5, 0.75]).ok()?;
        Some(Self {
            n: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            q25: q[0],
            median: q[1],
            q75: q[2],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub j: usize,
    pub g: u32,
    pub method: Method,
    pub failures: usize,
    pub att_error: Option<Summary>,
    pub att_bias: Option<Summary>,
    pub weight_error: Option<Summary>,
    pub mmd_to_truth: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<CellSummary>,
}

/// Aggregates records per `(J, G, method)` cell, in sorted cell order.
pub fn summarize(records: &[ReplicationRecord]) -> Vec<CellSummary> {
    let mut cells: BTreeMap<(usize, u32, Method), Vec<&ReplicationRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.j, r.g, r.method)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((j, g, method), rs)| {
            let ok: Vec<&&ReplicationRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
            let collect = |f: &dyn Fn(&ReplicationRecord) -> Option<f64>| {
                Summary::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            CellSummary {
                j,
                g,
                method,
                failures: rs.len() - ok.len(),
                att_error: collect(&|r| Some(r.att_error)),
                att_bias: collect(&|r| Some(r.att_bias)),
                weight_error: collect(&|r| Some(r.weight_error)),
                mmd_to_truth: collect(&|r| r.mmd_to_truth),
            }
        })
        .collect()
}

impl ReplicationResult {
    pub fn cell(&self, j: usize, g: u32, method: Method) -> Option<&CellSummary> {
        self.summaries.iter().find(|c| c.j == j && c.g == g && c.method == method)
    }

    /// Raw records as CSV. The runtime column is included only when asked
    /// for, so default output stays a pure function of the spec.
    pub fn write_records_csv<W: Write>(&self, writer: W, with_runtime: bool) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header =
            vec!["j", "g", "method", "replication", "seed", "att_error", "att_bias", "weight_error", "mmd_to_truth"];
        if with_runtime {
            header.push("runtime_secs");
        }
        header.push("error");
        wtr.write_record(&header).map_err(csv_io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let mut row = vec![
                r.j.to_string(),
                r.g.to_string(),
                r.method.to_string(),
                r.replication.to_string(),
                r.seed.to_string(),
                r.att_error.to_string(),
                r.att_bias.to_string(),
                r.weight_error.to_string(),
                opt(r.mmd_to_truth),
            ];
            if with_runtime {
                row.push(opt(r.runtime_secs));
            }
            row.push(r.error.clone().unwrap_or_default());
            wtr.write_record(&row).map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn aggregates_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "cells": self.summaries,
        })
    }

    /// Plot data `x,method,median,q25,q75`. With `x_axis = G` one series per
    /// method and `J`; with `x_axis = J` one series per method and `G`
    /// (labelled `method_g{G}` for moment-based methods).
    pub fn write_figure_csv<W: Write>(
        &self,
        writer: W,
        x_axis: FigureAxis,
        metric: FigureMetric,
    ) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["x", "method", "median", "q25", "q75"]).map_err(csv_io)?;
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.summaries {
            let s = match metric {
                FigureMetric::AttError => c.att_error,
                FigureMetric::Mmd => c.mmd_to_truth,
                FigureMetric::WeightError => c.weight_error,
            };
            let Some(s) = s else { continue };
            let (x, label) = match x_axis {
                FigureAxis::G => {
                    let label = if self.j_count() > 1 { format!("{}_j{}", c.method, c.j) } else { c.method.to_string() };
                    (c.g as usize, label)
                }
                FigureAxis::J => {
                    if !c.method.uses_moments() && !seen.insert((c.j, c.method)) {
                        // least-squares fits do not depend on G; emit once
                        continue;
                    }
                    let label =
                        if c.method.uses_moments() { format!("{}_g{}", c.method, c.g) } else { c.method.to_string() };
                    (c.j, label)
                }
            };
            wtr.write_record([x.to_string(), label, s.median.to_string(), s.q25.to_string(), s.q75.to_string()])
                .map_err(csv_io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    fn j_count(&self) -> usize {
        self.summaries.iter().map(|c| c.j).collect::<std::collections::BTreeSet<_>>().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureAxis {
    G,
    J,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureMetric {
    AttError,
    Mmd,
    WeightError,
}

fn csv_io(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e.to_string()))
}

fn error_record(j: usize, g: u32, method: Method, rep: usize, seed: u64, err: String) -> ReplicationRecord {
    ReplicationRecord {
        j,
        g,
        method,
        replication: rep,
        seed,
        att_error: f64::NAN,
        att_bias: f64::NAN,
        weight_error: f64::NAN,
        mmd_to_truth: None,
        runtime_secs: None,
        error: Some(err),
    }
}

fn run_one(spec: &StudySpec, cell: usize, j: usize, rep: usize) -> Vec<ReplicationRecord> {
    let seed = derive_seed(spec.seed, &[cell as u64, rep as u64]);
    let dgp = MixtureDgpConfig { j, seed, ..spec.dgp.clone() };
    let (panel, truth) = match gen_mixture_dgp(&dgp) {
        Ok(v) => v,
        Err(e) => {
            return spec
                .methods
                .iter()
                .flat_map(|&m| spec.g_values.iter().map(move |&g| (m, g)))
                .map(|(m, g)| error_record(j, g, m, rep, seed, e.to_string()))
                .collect()
        }
    };
    let mut out = Vec::new();
    for &method in &spec.methods {
        // least-squares fits do not depend on G: fit once, record per G
        let g_fits: Vec<u32> = if method.uses_moments() { spec.g_values.clone() } else { vec![spec.g_values[0]] };
        for g in g_fits {
            let cfg = MomentConfig { g, include_covariates: spec.include_covariates, ..MomentConfig::default() };
            let start = Instant::now();
            let result = fit(method, &panel, &cfg, &spec.solver);
            let runtime = start.elapsed().as_secs_f64();
            let record = match result {
                Ok(f) => {
                    let att_error = f.att.iter().map(|a| (a - truth.tau).abs()).sum::<f64>() / f.att.len() as f64;
                    let weight_error = f
                        .weights
                        .weights
                        .iter()
                        .zip(&truth.w_star)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    let mmd_to_truth = spec.mmd_draws.and_then(|n| {
                        let boot_seed = derive_seed(seed, &[1, method as u64, g as u64]);
                        let boot = bootstrap_counterfactual(&panel, &f.weights, n.max(2), boot_seed).ok()?;
                        let mut rng = rng_from_seed(derive_seed(seed, &[2]));
                        let truth_draws = truth.sample_post_counterfactual(dgp.t0, dgp.t1, n.max(2), &mut rng);
                        let pooled: Vec<f64> = boot.draws.iter().chain(&truth_draws).copied().collect();
                        Some(mmd2_unbiased(&boot.draws, &truth_draws, median_heuristic(&pooled)))
                    });
                    ReplicationRecord {
                        j,
                        g,
                        method,
                        replication: rep,
                        seed,
                        att_error,
                        att_bias: (f.mean_att() - truth.tau).abs(),
                        weight_error,
                        mmd_to_truth,
                        runtime_secs: spec.record_runtime.then_some(runtime),
                        error: None,
                    }
                }
                Err(e) => error_record(j, g, method, rep, seed, e.to_string()),
            };
            if method.uses_moments() {
                out.push(record);
            } else {
                for &g in &spec.g_values {
                    out.push(ReplicationRecord { g, ..record.clone() });
                }
            }
        }
    }
    out
}

/// Runs every `(J, replication)` pair in parallel. Each pair derives its seed
/// from `(spec.seed, cell index, replication index)`, so results do not
/// depend on scheduling or thread count.
pub fn run_replication_study(spec: &StudySpec) -> Result<ReplicationResult, SimError> {
    if spec.replications < 1 {
        return Err(SimError::Config("replications must be at least 1".into()));
    }
    if spec.j_values.is_empty() || spec.g_values.is_empty() || spec.methods.is_empty() {
        return Err(SimError::Config("study needs at least one J, one G and one method".into()));
    }
    if spec.g_values.contains(&0) {
        return Err(SimError::Config("G values must be at least 1".into()));
    }
    let jobs: Vec<(usize, usize, usize)> = spec
        .j_values
        .iter()
        .enumerate()
        .flat_map(|(cell, &j)| (0..spec.replications).map(move |rep| (cell, j, rep)))
        .collect();
    let mut records: Vec<ReplicationRecord> =
        jobs.par_iter().flat_map_iter(|&(cell, j, rep)| run_one(spec, cell, j, rep)).collect();
    records.sort_by_key(|r| (r.j, r.g, r.method, r.replication));

    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed * 10 > records.len() {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(SimError::TooManyFailures { failed, total: records.len(), first });
    }
    let summaries = summarize(&records);
    Ok(ReplicationResult { records, summaries })
}

/// Settings of the least-squares attenuation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Theorem1Spec {
    pub w_star: Vec<f64>,
    /// Second moments of the noiseless unit means (`Q*` diagonal).
    pub q_diag: Vec<f64>,
    /// Noise variances (`Σ` diagonal).
    pub sigma_diag: Vec<f64>,
    pub t0: usize,
    pub replications: usize,
    /// Moment orders for the GMM fit.
    pub g: u32,
    pub seed: u64,
}

impl Default for Theorem1Spec {
    fn default() -> Self {
        Self {
            w_star: vec![0.5, 0.5],
            q_diag: vec![1.0, 1.0],
            sigma_diag: vec![1.0, 1.0],
            t0: 100_000,
            replications: 10,
            g: 4,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Outcome {
    pub ols_mean: Vec<f64>,
    pub predicted_limit: Vec<f64>,
    pub gmm_mean: Vec<f64>,
}

impl Theorem1Outcome {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "ols_mean": self.ols_mean,
            "predicted_limit": self.predicted_limit,
            "gmm_mean": self.gmm_mean,
        })
    }
}

/// Draws the noiseless mean of unit `unit` (0-based) with `E[m²] = q`.
///
/// Unit 0 has the constant mean `√q`; the others have zero-mean three-point
/// laws `{-a, 0, a}` with `P(±a) = p/2`, `p = 1 / (1 + 3(unit - 1))`, so their
/// fourth moments differ. Only one unit has a non-zero mean, which keeps the
/// cross moments `E[m_j m_k]` at zero and `Q*` diagonal.
fn noiseless_mean(unit: usize, q: f64, rng: &mut Rng) -> f64 {
    if unit == 0 {
        return q.sqrt();
    }
    let p = 1.0 / (1.0 + 3.0 * (unit - 1) as f64);
    let a = (q / p).sqrt();
    let u: f64 = rng.random();
    if u < p / 2.0 {
        -a
    } else if u < p {
        a
    } else {
        0.0
    }
}

/// Generates the measurement-error panel: `Y_{j,t} = m_{j,t} + ε_{j,t}` with
/// `ε ~ N(0, σ_j)`, and a treated outcome drawn from the `w*`-mixture of the
/// units' distributions `N(m_{j,t}, σ_j)`. No post-period effect.
pub fn measurement_error_panel(spec: &Theorem1Spec, seed: u64) -> Result<PanelData, SimError> {
    let j = spec.w_star.len();
    if j == 0 || spec.q_diag.len() != j || spec.sigma_diag.len() != j {
        return Err(SimError::Config("w_star, q_diag and sigma_diag must share a non-zero length".into()));
    }
    if spec.q_diag.iter().chain(&spec.sigma_diag).any(|v| !(*v >= 0.0)) {
        return Err(SimError::Config("Q* and Σ diagonals must be non-negative".into()));
    }
    if spec.t0 < 2 {
        return Err(SimError::Config("t0 must be at least 2".into()));
    }
    let chooser = WeightedIndex::new(&spec.w_star).map_err(|e| SimError::Config(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let t = spec.t0 + 1;
    let mut y = DMatrix::zeros(j + 1, t);
    let mut means = vec![0.0; j];
    for col in 0..t {
        for u in 0..j {
            means[u] = noiseless_mean(u, spec.q_diag[u], &mut rng);
            let z: f64 = rng.sample(StandardNormal);
            y[(u + 1, col)] = means[u] + spec.sigma_diag[u].sqrt() * z;
        }
        let c = chooser.sample(&mut rng);
        let z: f64 = rng.sample(StandardNormal);
        y[(0, col)] = means[c] + spec.sigma_diag[c].sqrt() * z;
    }
    PanelData::from_matrix(y, spec.t0).map_err(|e| SimError::Config(e.to_string()))
}

/// Averages unconstrained least squares and DMSCM weights over replications
/// and reports them next to the analytic least-squares limit.
pub fn theorem1_experiment(spec: &Theorem1Spec) -> Result<Theorem1Outcome, SimError> {
    if spec.replications < 1 {
        return Err(SimError::Config("replications must be at least 1".into()));
    }
    let predicted_limit =
        ls_bias_limit(&BiasLimitInput::from_diagonals(&spec.q_diag, &spec.sigma_diag, &spec.w_star))?;
    let cfg = MomentConfig::with_g(spec.g);
    let opts = SolverOptions::default();
    let fits = (0..spec.replications)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<f64>, Vec<f64>), SimError> {
            let panel = measurement_error_panel(spec, derive_seed(spec.seed, &[rep as u64]))?;
            let ols = ls_unconstrained(&panel).map_err(EstimatorError::from)?;
            let gmm = fit_dmscm(&panel, &cfg, &opts)?.weights.weights;
            Ok((ols, gmm))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let j = spec.w_star.len();
    let mean = |second: bool| -> Vec<f64> {
        let pick = |f: &(Vec<f64>, Vec<f64>), c: usize| if second { f.1[c] } else { f.0[c] };
        (0..j).map(|c| fits.iter().map(|f| pick(f, c)).sum::<f64>() / fits.len() as f64).collect()
    };
    Ok(Theorem1Outcome { ols_mean: mean(false), predicted_limit, gmm_mean: mean(true) })
}

/// Two zero-mean Gaussian components with variances `var_a` and `var_b`; the
/// treated unit draws from their `mix`/`1 - mix` mixture. Each unit's
/// pre-period draws are centred on their sample mean, so the first sample
/// moments agree (at zero, up to rounding) as they do in the population and
/// only higher even moments separate the units. Post periods are plain draws
/// with no effect.
pub fn symmetric_variance_mixture(
    t0: usize,
    t1: usize,
    var_a: f64,
    var_b: f64,
    mix: f64,
    seed: u64,
) -> Result<PanelData, SimError> {
    if t0 < 2 || t1 < 1 {
        return Err(SimError::Config("t0 must be at least 2 and t1 at least 1".into()));
    }
    if !(var_a > 0.0 && var_b > 0.0) || !(0.0..=1.0).contains(&mix) {
        return Err(SimError::Config("variances must be positive and mix in [0, 1]".into()));
    }
    let mut rng = rng_from_seed(seed);
    let sd = [var_a.sqrt(), var_b.sqrt()];
    let t = t0 + t1;
    let mut y = DMatrix::zeros(3, t);
    for col in 0..t {
        for u in 0..2 {
            let z: f64 = rng.sample(StandardNormal);
            y[(u + 1, col)] = sd[u] * z;
        }
        let c = usize::from(rng.random::<f64>() >= mix);
        let z: f64 = rng.sample(StandardNormal);
        y[(0, col)] = sd[c] * z;
    }
    for u in 0..3 {
        let m = (0..t0).map(|col| y[(u, col)]).sum::<f64>() / t0 as f64;
        for col in 0..t0 {
            y[(u, col)] -= m;
        }
    }
    PanelData::from_matrix(y, t0).map_err(|e| SimError::Config(e.to_string()))
}

/// Time-invariant Gaussian components; the treated unit draws from their
/// `w_star` mixture, shifted by `shift` in every period and by `shift + tau`
/// after `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryMixture {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub w_star: Vec<f64>,
    pub t0: usize,
    pub t1: usize,
    pub tau: f64,
    pub shift: f64,
    /// Mix the demeaned components instead: the treated unit is centred at
    /// `Σ w*_j μ_j + shift` and its deviations follow the mixture of the
    /// controls' centred densities (the demeaned mixture model).
    #[serde(default)]
    pub demeaned: bool,
    pub seed: u64,
}

pub fn stationary_mixture_panel(spec: &StationaryMixture) -> Result<PanelData, SimError> {
    let j = spec.means.len();
    if j == 0 || spec.variances.len() != j || spec.w_star.len() != j {
        return Err(SimError::Config("means, variances and w_star must share a non-zero length".into()));
    }
    if spec.variances.iter().any(|v| !(*v >= 0.0)) {
        return Err(SimError::Config("variances must be non-negative".into()));
    }
    if spec.t0 < 2 || spec.t1 < 1 {
        return Err(SimError::Config("need t0 >= 2 and t1 >= 1".into()));
    }
    let chooser = WeightedIndex::new(&spec.w_star).map_err(|e| SimError::Config(e.to_string()))?;
    let mut rng = rng_from_seed(spec.seed);
    let mixture_mean: f64 = spec.means.iter().zip(&spec.w_star).map(|(m, w)| m * w).sum::<f64>()
        / spec.w_star.iter().sum::<f64>();
    let t = spec.t0 + spec.t1;
    let mut y = DMatrix::zeros(j + 1, t);
    for col in 0..t {
        for u in 0..j {
            let z: f64 = rng.sample(StandardNormal);
            y[(u + 1, col)] = spec.means[u] + spec.variances[u].sqrt() * z;
        }
        let c = chooser.sample(&mut rng);
        let z: f64 = rng.sample(StandardNormal);
        let effect = if col >= spec.t0 { spec.tau } else { 0.0 };
        let centre = if spec.demeaned { mixture_mean } else { spec.means[c] };
        y[(0, col)] = centre + spec.variances[c].sqrt() * z + spec.shift + effect;
    }
    PanelData::from_matrix(y, spec.t0).map_err(|e| SimError::Config(e.to_string()))
}
