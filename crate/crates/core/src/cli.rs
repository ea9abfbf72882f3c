//! Command-line front end (`synthctl fit | conformal | dte | simulate`).
//!
//! Failures print one line `error: CODE: message` on stderr. Exit codes are 0
//! on success, 1 for user or input errors and 2 for internal failures.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::conformal::{confidence_interval, linspace, ConformalError};
use crate::dte::{bootstrap_counterfactual, mmd_test, quantiles, DteError};
use crate::estimators::{fit, EstimatorError, Method};
use crate::moments::{MomentConfig, MomentError, Scaling};
use crate::panel::{load_panel, PanelData, PanelError, PanelSchema, PeriodKind};
use crate::simlab::{
    run_replication_study, theorem1_experiment, FigureAxis, FigureMetric, MixtureDgpConfig, SimError, StudySpec,
    Theorem1Spec,
};
use crate::solver::{SolverError, SolverOptions};

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: i32,
}

impl CliError {
    fn user(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into(), exit: 1 }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { code: "INTERNAL", message: message.into(), exit: 2 }
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        let code = match e {
            PanelError::MissingCell { .. } => "MISSING_CELL",
            PanelError::DuplicateCell { .. } => "DUPLICATE_CELL",
            PanelError::UnknownTreated(_) => "UNKNOWN_TREATED",
            PanelError::BadT0 { .. } => "BAD_T0",
            PanelError::Parse { .. } => "PARSE_ERROR",
            PanelError::MissingColumn(_) => "MISSING_COLUMN",
            PanelError::Io(_) => "IO_ERROR",
            _ => "BAD_PANEL",
        };
        Self::user(code, e.to_string())
    }
}

impl From<MomentError> for CliError {
    fn from(e: MomentError) -> Self {
        let code = match e {
            MomentError::Overflow { .. } => "MOMENT_OVERFLOW",
            MomentError::NoCovariates => "NO_COVARIATES",
            _ => "BAD_CONFIG",
        };
        Self::user(code, e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Moment(m) => m.into(),
            SolverError::MaxIterations { .. } => Self::user("SOLVER_MAX_ITER", e.to_string()),
            SolverError::SingularGram => Self::user("SINGULAR_GRAM", e.to_string()),
            SolverError::Empty => Self::internal(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Moment(m) => m.into(),
            EstimatorError::Solver(s) => s.into(),
            other => Self::user("BAD_INPUT", other.to_string()),
        }
    }
}

impl From<ConformalError> for CliError {
    fn from(e: ConformalError) -> Self {
        match e {
            ConformalError::Estimator(x) => x.into(),
            ConformalError::Panel(x) => x.into(),
            ConformalError::BadLevel(_) => Self::user("BAD_LEVEL", e.to_string()),
            ConformalError::BadGrid => Self::user("BAD_GRID", e.to_string()),
            other => Self::user("BAD_INPUT", other.to_string()),
        }
    }
}

impl From<DteError> for CliError {
    fn from(e: DteError) -> Self {
        let code = match e {
            DteError::BadProb(_) => "BAD_PROB",
            DteError::EmptyPost => "EMPTY_POST",
            DteError::Io(_) => "IO_ERROR",
            _ => "BAD_INPUT",
        };
        Self::user(code, e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Self::user("BAD_CONFIG", e.to_string()),
            SimError::TooManyFailures { .. } => Self::user("SIM_FAILED", e.to_string()),
            SimError::Estimator(x) => x.into(),
            SimError::Io(x) => io_error(x, "simulation output"),
            SimError::Json(x) => Self::internal(x.to_string()),
        }
    }
}

fn io_error(e: std::io::Error, what: &str) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::user("IO_NOT_FOUND", format!("{what}: {e}"))
    } else {
        CliError::user("IO_ERROR", format!("{what}: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "synthctl", version, about = "Density-matching synthetic control")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "SYNTHCTL_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an estimator and write the FitResult JSON.
    Fit(FitArgs),
    /// Conformal p-values over a grid of constant effects and the inverted interval.
    Conformal(ConformalArgs),
    /// Bootstrap the counterfactual distribution and report quantiles.
    Dte(DteArgs),
    /// Run a replication study or one of the bundled presets.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Long-format CSV panel.
    #[arg(long)]
    pub input: PathBuf,
    /// TOML file with column bindings (and optionally `treated` and `t0`).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub treated: Option<String>,
    #[arg(long)]
    pub t0: Option<usize>,
    #[arg(long)]
    pub unit_col: Option<String>,
    #[arg(long)]
    pub period_col: Option<String>,
    #[arg(long)]
    pub outcome_col: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariate_cols: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub period_kind: Option<PeriodKindArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PeriodKindArg {
    Integer,
    Text,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScalingArg {
    PooledSd,
    None,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, default_value = "dmscm", value_parser = parse_method)]
    pub method: Method,
    /// Number of moment orders G (orders 1..=G).
    #[arg(long, default_value_t = 5)]
    pub g: u32,
    /// Append covariate averages to the moment system.
    #[arg(long)]
    pub covariates: bool,
    #[arg(long, value_enum, default_value = "pooled-sd")]
    pub scaling: ScalingArg,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "fit_result.json")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConformalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Significance level ξ; the interval has coverage 1 - ξ.
    #[arg(long, default_value_t = 0.1)]
    pub level: f64,
    /// Explicit grid of constant effects (comma separated, ascending).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    /// Grid as `lo,hi,n` (n equally spaced points).
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    pub grid_range: Option<Vec<f64>>,
    #[arg(long, default_value = "conformal_report.json")]
    pub output: PathBuf,
    #[arg(long, default_value = "conformal_pvalues.csv")]
    pub csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct DteArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of bootstrap draws.
    #[arg(long = "L", default_value_t = 1000)]
    pub l: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,0.75,0.9")]
    pub probs: Vec<f64>,
    #[arg(long, default_value = "dte_draws.csv")]
    pub draws: PathBuf,
    #[arg(long, default_value = "dte_quantiles.json")]
    pub output: PathBuf,
    /// Also test the treated post-period outcomes against the draws (MMD).
    #[arg(long)]
    pub mmd: bool,
    #[arg(long, default_value_t = 500)]
    pub permutations: usize,
    #[arg(long, default_value = "dte_mmd.json")]
    pub mmd_output: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq, Deserialize)]
pub enum Preset {
    #[value(name = "figure2")]
    #[serde(rename = "figure2")]
    Figure2,
    #[value(name = "appendixD")]
    #[serde(rename = "appendixD")]
    AppendixD,
    #[value(name = "theorem1")]
    #[serde(rename = "theorem1")]
    Theorem1,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// TOML study file (keys: preset, dgp.*, methods, replications, seed, output_dir, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub j: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub g: Option<Vec<u32>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Add a runtime column to the record CSV (breaks bitwise reproducibility).
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    #[serde(default)]
    unit: Option<String>,
    #[serde(default)]
    period: Option<String>,
    #[serde(default)]
    outcome: Option<String>,
    #[serde(default)]
    covariates: Option<Vec<String>>,
    #[serde(default)]
    period_kind: Option<PeriodKind>,
    #[serde(default)]
    treated: Option<String>,
    #[serde(default)]
    t0: Option<usize>,
    #[serde(default)]
    description: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    preset: Option<Preset>,
    dgp: Option<toml::Table>,
    methods: Option<Vec<String>>,
    replications: Option<usize>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    j_values: Option<Vec<usize>>,
    g_values: Option<Vec<u32>>,
    include_covariates: Option<bool>,
    mmd_draws: Option<usize>,
    theorem1: Option<Theorem1Spec>,
}

fn read_to_string(path: &Path, what: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| io_error(e, &format!("{what} {}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(e, &format!("creating {}", dir.display())))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(e, &format!("writing {}", path.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::internal(e.to_string()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_error(e, &format!("writing {}", path.display())))
}

/// Resolves schema file + flags (flags win) and loads the panel.
pub fn load_data(args: &DataArgs) -> Result<PanelData, CliError> {
    let file: SchemaFile = match &args.schema {
        Some(p) => toml::from_str(&read_to_string(p, "schema")?)
            .map_err(|e| CliError::user("BAD_SCHEMA", format!("{}: {e}", p.display())))?,
        None => SchemaFile::default(),
    };
    let mut schema = PanelSchema::default();
    if let Some(v) = args.unit_col.clone().or(file.unit) {
        schema.unit = v;
    }
    if let Some(v) = args.period_col.clone().or(file.period) {
        schema.period = v;
    }
    if let Some(v) = args.outcome_col.clone().or(file.outcome) {
        schema.outcome = v;
    }
    if let Some(v) = args.covariate_cols.clone().or(file.covariates) {
        schema.covariates = v;
    }
    schema.period_kind = match args.period_kind {
        Some(PeriodKindArg::Integer) => PeriodKind::Integer,
        Some(PeriodKindArg::Text) => PeriodKind::Text,
        None => file.period_kind.unwrap_or_default(),
    };
    let _ = file.description;
    let treated = args
        .treated
        .clone()
        .or(file.treated)
        .ok_or_else(|| CliError::user("BAD_ARGUMENT", "--treated is required"))?;
    let t0 = args.t0.or(file.t0).ok_or_else(|| CliError::user("BAD_ARGUMENT", "--t0 is required"))?;
    let f = File::open(&args.input).map_err(|e| io_error(e, &format!("input {}", args.input.display())))?;
    Ok(load_panel(std::io::BufReader::new(f), &schema, &treated, t0)?)
}

fn model_config(m: &ModelArgs) -> Result<(MomentConfig, SolverOptions), CliError> {
    if m.g < 1 {
        return Err(CliError::user("BAD_ARGUMENT", "--g must be at least 1"));
    }
    if !(m.tol > 0.0) || m.max_iter == 0 {
        return Err(CliError::user("BAD_ARGUMENT", "--tol must be positive and --max-iter non-zero"));
    }
    let cfg = MomentConfig {
        g: m.g,
        include_covariates: m.covariates,
        scaling: match m.scaling {
            ScalingArg::PooledSd => Scaling::PooledSd,
            ScalingArg::None => Scaling::None,
        },
        ..MomentConfig::default()
    };
    Ok((cfg, SolverOptions { tol: m.tol, max_iter: m.max_iter, strict: false }))
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let panel = load_data(&args.data)?;
    let (cfg, opts) = model_config(&args.model)?;
    let f = fit(args.model.method, &panel, &cfg, &opts)?;
    write_json(&args.output, &f.to_json())?;
    let line = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(|e| io_error(e, "stdout"));
    line(out, format!("method: {}", f.method))?;
    line(out, format!("weights: {}", fmt_vec(&f.weights.weights)))?;
    line(out, format!("intercept: {}", f.weights.intercept.map_or("none".to_string(), |v| format!("{v:.6}"))))?;
    line(out, format!("pre_fit_rmse: {:.6}", f.pre_fit_rmse))?;
    line(out, format!("mean_att: {:.6}", f.mean_att()))?;
    if !f.diagnostics.converged {
        eprintln!("warning: WARN_NOT_CONVERGED: solver stopped after {} iterations", f.diagnostics.iterations);
    }
    if f.diagnostics.non_unique {
        eprintln!(
            "warning: WARN_NON_UNIQUE: moment matrix rank {} < J = {}; weights may not be unique",
            f.diagnostics.rank_estimate,
            panel.n_controls()
        );
    }
    Ok(())
}

fn cmd_conformal(args: &ConformalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::user("BAD_LEVEL", format!("level {} is outside (0, 1)", args.level)));
    }
    if args.model.method == Method::Ols {
        return Err(CliError::user("BAD_ARGUMENT", "conformal inference needs a simplex-constrained method"));
    }
    let panel = load_data(&args.data)?;
    let (cfg, opts) = model_config(&args.model)?;
    let grid = match (&args.grid, &args.grid_range) {
        (Some(_), Some(_)) => return Err(CliError::user("BAD_ARGUMENT", "use either --grid or --grid-range")),
        (Some(g), None) => Some(g.clone()),
        (None, Some(r)) => {
            if r.len() != 3 || r[2] < 1.0 || r[2].fract() != 0.0 {
                return Err(CliError::user("BAD_ARGUMENT", "--grid-range expects lo,hi,n"));
            }
            Some(linspace(r[0], r[1], r[2] as usize))
        }
        (None, None) => None,
    };
    let report = confidence_interval(&panel, grid.as_deref(), args.level, args.model.method, &cfg, &opts)?;
    write_json(&args.output, &report.to_json())?;
    let mut w = create(&args.csv)?;
    report.write_csv(&mut w).map_err(|e| io_error(e, "p-value csv"))?;
    w.flush().map_err(|e| io_error(e, "p-value csv"))?;
    let iv = &report.interval;
    let bound = |b: Option<f64>| b.map_or("empty".to_string(), |v| format!("{v:.6}"));
    writeln!(out, "{:.6} [{}, {}] @ {}", report.tau_hat, bound(iv.lower), bound(iv.upper), report.level)
        .map_err(|e| io_error(e, "stdout"))?;
    if iv.touches_grid_edge() {
        eprintln!("warning: WARN_GRID_EDGE: acceptance region touches the grid boundary; widen the grid");
    }
    if iv.lower.is_none() {
        eprintln!("warning: WARN_EMPTY_SET: no grid point was accepted");
    }
    Ok(())
}

fn cmd_dte(args: &DteArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if args.model.method == Method::Ols {
        return Err(CliError::user("BAD_ARGUMENT", "bootstrap needs simplex weights"));
    }
    let panel = load_data(&args.data)?;
    let (cfg, opts) = model_config(&args.model)?;
    let f = fit(args.model.method, &panel, &cfg, &opts)?;
    let sample = bootstrap_counterfactual(&panel, &f.weights, args.l, args.seed)?;
    let q = quantiles(&sample.draws, &args.probs)?;
    let mut w = create(&args.draws)?;
    sample.write_csv(&mut w)?;
    w.flush().map_err(|e| io_error(e, "draws csv"))?;
    write_json(
        &args.output,
        &serde_json::json!({
            "schema_version": crate::SCHEMA_VERSION,
            "method": f.method,
            "l": sample.l,
            "seed": sample.seed,
            "weights": f.weights.weights,
            "intercept": f.weights.intercept,
            "probs": args.probs,
            "quantiles": q,
        }),
    )?;
    for (p, v) in args.probs.iter().zip(&q) {
        writeln!(out, "q{p}: {v:.6}").map_err(|e| io_error(e, "stdout"))?;
    }
    if args.mmd {
        let observed: Vec<f64> = (panel.t0()..panel.n_periods()).map(|t| panel.y(0, t)).collect();
        let report = mmd_test(&observed, &sample.draws, args.permutations, args.seed)?;
        write_json(&args.mmd_output, &report.to_json())?;
        writeln!(out, "mmd2: {:.6e} p_value: {:.4}", report.mmd2, report.p_value).map_err(|e| io_error(e, "stdout"))?;
    }
    Ok(())
}

fn study_from_file(file: &StudyFile, base: StudySpec) -> Result<StudySpec, CliError> {
    let mut spec = base;
    if let Some(table) = &file.dgp {
        let mut merged = toml::Table::try_from(&spec.dgp).map_err(|e| CliError::internal(e.to_string()))?;
        for (k, v) in table {
            if !merged.contains_key(k) {
                return Err(CliError::user("BAD_CONFIG", format!("unknown dgp key {k:?}")));
            }
            merged.insert(k.clone(), v.clone());
        }
        spec.dgp = MixtureDgpConfig::deserialize(merged)
            .map_err(|e| CliError::user("BAD_CONFIG", format!("dgp: {e}")))?;
    }
    if let Some(m) = &file.methods {
        spec.methods = m
            .iter()
            .map(|s| s.parse::<Method>().map_err(|e| CliError::user("BAD_CONFIG", e)))
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = file.replications {
        spec.replications = v;
    }
    if let Some(v) = file.seed {
        spec.seed = v;
    }
    if let Some(v) = &file.j_values {
        spec.j_values = v.clone();
    }
    if let Some(v) = &file.g_values {
        spec.g_values = v.clone();
    }
    if let Some(v) = file.include_covariates {
        spec.include_covariates = v;
    }
    if file.mmd_draws.is_some() {
        spec.mmd_draws = file.mmd_draws;
    }
    Ok(spec)
}

fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let file: StudyFile = match &args.config {
        Some(p) => toml::from_str(&read_to_string(p, "config")?)
            .map_err(|e| CliError::user("BAD_CONFIG", format!("{}: {e}", p.display())))?,
        None => StudyFile::default(),
    };
    let preset = args.preset.or(file.preset);
    let out_dir = args
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("sim_out"));
    let seed_default = 20_240_601;

    if preset == Some(Preset::Theorem1) {
        let mut spec = file.theorem1.clone().unwrap_or_default();
        if let Some(r) = args.replications.or(file.replications) {
            spec.replications = r;
        }
        if let Some(s) = args.seed.or(file.seed) {
            spec.seed = s;
        }
        let res = theorem1_experiment(&spec)?;
        write_json(&out_dir.join("theorem1.json"), &res.to_json())?;
        writeln!(
            out,
            "ols_mean: {}\npredicted_limit: {}\ngmm_mean: {}",
            fmt_vec(&res.ols_mean),
            fmt_vec(&res.predicted_limit),
            fmt_vec(&res.gmm_mean)
        )
        .map_err(|e| io_error(e, "stdout"))?;
        return Ok(());
    }

    let replications = args.replications.or(file.replications);
    let seed = args.seed.or(file.seed).unwrap_or(seed_default);
    let base = match preset {
        Some(Preset::Figure2) => StudySpec::figure2(replications.unwrap_or(1000), seed),
        Some(Preset::AppendixD) => StudySpec::appendix_d(replications.unwrap_or(1000), seed),
        _ => StudySpec { seed, ..StudySpec::default() },
    };
    let mut spec = study_from_file(&file, base)?;
    if let Some(r) = args.replications {
        spec.replications = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(j) = &args.j {
        spec.j_values = j.clone();
    }
    if let Some(g) = &args.g {
        spec.g_values = g.clone();
    }
    spec.record_runtime = args.timings;

    let result = run_replication_study(&spec)?;
    let mut w = create(&out_dir.join("records.csv"))?;
    result.write_records_csv(&mut w, args.timings)?;
    w.flush().map_err(|e| io_error(e, "records.csv"))?;
    write_json(&out_dir.join("aggregates.json"), &result.aggregates_json())?;

    let figure = |name: &str, axis: FigureAxis, metric: FigureMetric| -> Result<(), CliError> {
        let mut w = create(&out_dir.join(name))?;
        result.write_figure_csv(&mut w, axis, metric)?;
        w.flush().map_err(|e| io_error(e, name))
    };
    figure("att_error_by_g.csv", FigureAxis::G, FigureMetric::AttError)?;
    if spec.j_values.len() > 1 {
        figure("att_error_by_j.csv", FigureAxis::J, FigureMetric::AttError)?;
    }
    if spec.mmd_draws.is_some() {
        figure("mmd_by_g.csv", FigureAxis::G, FigureMetric::Mmd)?;
        if spec.j_values.len() > 1 {
            figure("mmd_by_j.csv", FigureAxis::J, FigureMetric::Mmd)?;
        }
    }
    for c in &result.summaries {
        if let Some(s) = c.att_error {
            writeln!(
                out,
                "J={} G={} {}: median att_error {:.4} [q25 {:.4}, q75 {:.4}] failures {}",
                c.j, c.g, c.method, s.median, s.q25, s.q75, c.failures
            )
            .map_err(|e| io_error(e, "stdout"))?;
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, out),
        Command::Conformal(a) => cmd_conformal(a, out),
        Command::Dte(a) => cmd_dte(a, out),
        Command::Simulate(a) => cmd_simulate(a, out),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error: BAD_ARGUMENT: {first}");
            return 1;
        }
    };
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<(), CliError> {
        let mut buf: Vec<u8> = Vec::new();
        let res = match cli.threads {
            Some(0) => Err(CliError::user("BAD_ARGUMENT", "--threads must be at least 1")),
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::internal(e.to_string()))?;
                pool.install(|| dispatch(&cli, &mut buf))
            }
            None => dispatch(&cli, &mut buf),
        };
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(&buf).and_then(|_| stdout.flush()).map_err(|e| io_error(e, "stdout"))?;
        res
    }));
    match result {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {}: {}", e.code, e.message.replace('\n', " "));
            e.exit
        }
        Err(_) => {
            eprintln!("error: INTERNAL: unexpected failure");
            2
        }
    }
}
