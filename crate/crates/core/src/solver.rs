//! Convex quadratic minimization over the probability simplex.
//!
//! Every estimator in this crate reduces to `min_{w ∈ Δ} ‖b - A w‖²_V`. The
//! solver precomputes `H = AᵀVA` and `f = AᵀVb` and runs accelerated projected
//! gradient (FISTA) with function-value restarts, so the objective never
//! increases between iterates. Step size is `1 / L` with `L = 2·λmax(H)` from
//! power iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moments::{check_psd, MomentError, MomentSystem};
use crate::panel::PanelData;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("solver hit the iteration cap ({}) with projected-gradient residual {:.3e}", .diagnostics.iterations, .diagnostics.projected_gradient_norm)]
    MaxIterations { weights: WeightVector, diagnostics: SolveDiagnostics },
    #[error("pre-period Gram matrix of the untreated outcomes is singular")]
    SingularGram,
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error("quadratic has no unknowns")]
    Empty,
}

/// A point on the simplex, optionally with an additive intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub intercept: Option<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights, intercept: None }
    }

    pub fn uniform(j: usize) -> Self {
        Self::new(vec![1.0 / j as f64; j])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Non-negative entries (to -1e-12) summing to one (to 1e-9).
    pub fn is_on_simplex(&self) -> bool {
        let sum: f64 = self.weights.iter().sum();
        self.weights.iter().all(|&w| w >= -1e-12) && (sum - 1.0).abs() <= 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_objective: f64,
    pub projected_gradient_norm: f64,
    /// Numerical rank of `A`; below `J` the minimizer need not be unique.
    pub rank_estimate: usize,
    pub converged: bool,
    pub non_unique: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Turn a missed tolerance into [`SolverError::MaxIterations`] instead of
    /// returning the last iterate with `converged = false`.
    pub strict: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100_000, strict: false }
    }
}

/// Euclidean projection onto `{w : w ≥ 0, Σ w = 1}` (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// `Q(w) = wᵀHw - 2fᵀw + c`, with exact evaluators supplied by the caller for
/// the objective value and gradient (the expanded form cancels badly near the
/// optimum).
type Evaluator<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;
type GradientFn<'a> = Box<dyn Fn(&[f64]) -> DVector<f64> + 'a>;

pub(crate) struct Quadratic<'a> {
    pub h: DMatrix<f64>,
    pub value: Evaluator<'a>,
    pub gradient: GradientFn<'a>,
    pub rank: usize,
}

fn largest_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let n = h.nrows();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64) * 1e-3);
    x /= x.norm();
    let mut lambda = 0.0;
    for _ in 0..1000 {
        let y = h * &x;
        let norm = y.norm();
        if norm == 0.0 || !norm.is_finite() {
            return norm;
        }
        let next = x.dot(&y);
        x = y / norm;
        if (next - lambda).abs() <= 1e-12 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotients approach λmax from below
    lambda.max(h.diagonal().max())
}

fn pg_residual(w: &[f64], grad: &DVector<f64>, lip: f64) -> f64 {
    let step: Vec<f64> = w.iter().zip(grad.iter()).map(|(x, g)| x - g / lip).collect();
    project_simplex(&step).iter().zip(w).map(|(p, x)| (p - x).abs()).fold(0.0, f64::max)
}

pub(crate) fn minimize(q: &Quadratic<'_>, opts: &SolverOptions) -> Result<(WeightVector, SolveDiagnostics), SolverError> {
    let j = q.h.ncols();
    if j == 0 {
        return Err(SolverError::Empty);
    }
    if j == 1 {
        let w = vec![1.0];
        let diag = SolveDiagnostics {
            iterations: 0,
            final_objective: (q.value)(&w),
            projected_gradient_norm: 0.0,
            rank_estimate: q.rank,
            converged: true,
            non_unique: false,
        };
        return Ok((WeightVector::new(w), diag));
    }
    let grad = &q.gradient;
    let lip = 2.0 * largest_eigenvalue(&q.h) * (1.0 + 1e-6);

    let mut x = vec![1.0 / j as f64; j];
    let mut fx = (q.value)(&x);
    let mut diag = SolveDiagnostics { rank_estimate: q.rank, non_unique: q.rank < j, ..Default::default() };
    if !(lip > 0.0) || !lip.is_finite() {
        // constant objective: every feasible point is optimal
        diag.final_objective = fx;
        diag.converged = lip == 0.0;
        return finish(x, diag, opts);
    }

    let mut y = x.clone();
    let mut t = 1.0_f64;
    for k in 0..opts.max_iter {
        diag.iterations = k + 1;
        let gy = grad(&y);
        let mut x_new = project_simplex(&y.iter().zip(gy.iter()).map(|(a, g)| a - g / lip).collect::<Vec<_>>());
        let mut f_new = (q.value)(&x_new);
        if f_new > fx {
            // momentum overshot: restart with a plain projected-gradient step
            // from x, which cannot ascend in exact arithmetic; any increase
            // left is rounding in the objective, not in the step
            t = 1.0;
            let gx = grad(&x);
            x_new = project_simplex(&x.iter().zip(gx.iter()).map(|(a, g)| a - g / lip).collect::<Vec<_>>());
            f_new = (q.value)(&x_new);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        let moved = x_new.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = x_new;
        fx = f_new;
        t = t_next;

        let res = pg_residual(&x, &grad(&x), lip);
        diag.projected_gradient_norm = res;
        if res <= opts.tol {
            diag.converged = true;
            break;
        }
        if moved == 0.0 && beta == 0.0 {
            // x is a fixed point of the projected-gradient map
            diag.converged = res <= opts.tol;
            break;
        }
    }
    diag.final_objective = fx;
    finish(x, diag, opts)
}

fn finish(
    mut x: Vec<f64>,
    diag: SolveDiagnostics,
    opts: &SolverOptions,
) -> Result<(WeightVector, SolveDiagnostics), SolverError> {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v /= s);
    }
    let w = WeightVector::new(x);
    if opts.strict && !diag.converged {
        return Err(SolverError::MaxIterations { weights: w, diagnostics: diag });
    }
    Ok((w, diag))
}

/// Numerical rank from the singular values of `a`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    if !(smax > 0.0) {
        return 0;
    }
    let tol = smax * f64::EPSILON * a.nrows().max(a.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// Minimizes `‖b - A w‖²_V` over the simplex.
pub fn solve_least_squares_simplex(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    v: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<(WeightVector, SolveDiagnostics), SolverError> {
    let n = a.nrows();
    if b.len() != n || v.nrows() != n || v.ncols() != n {
        return Err(MomentError::DimensionMismatch(format!(
            "A has {n} rows, b has {}, V is {}×{}",
            b.len(),
            v.nrows(),
            v.ncols()
        ))
        .into());
    }
    let va = v * a;
    let h = a.transpose() * &va;
    let value = move |w: &[f64]| {
        let r = b - a * DVector::from_column_slice(w);
        r.dot(&(v * &r)).max(0.0)
    };
    let gradient = move |w: &[f64]| -> DVector<f64> {
        let r = a * DVector::from_column_slice(w) - b;
        va.transpose() * r * 2.0
    };
    let q = Quadratic { h, value: Box::new(value), gradient: Box::new(gradient), rank: numerical_rank(a) };
    minimize(&q, opts)
}

/// Minimizes the GMM objective `m̂(w)ᵀ V m̂(w)` over the simplex.
pub fn solve_simplex_qp(
    system: &MomentSystem,
    v: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<(WeightVector, SolveDiagnostics), SolverError> {
    check_psd(v)?;
    solve_least_squares_simplex(&system.a_matrix, &system.b_vector, v, opts)
}

/// Unconstrained least squares of treated on untreated pre-period outcomes,
/// without an intercept.
pub fn ls_unconstrained(panel: &PanelData) -> Result<Vec<f64>, SolverError> {
    let y = panel.outcomes();
    let t0 = panel.t0();
    let j = panel.n_controls();
    let x = DMatrix::from_fn(t0, j, |t, c| y[(c + 1, t)]);
    let target = DVector::from_fn(t0, |t, _| y[(0, t)]);
    if numerical_rank(&x) < j {
        return Err(SolverError::SingularGram);
    }
    let gram = x.transpose() * &x;
    let rhs = x.transpose() * target;
    let chol = gram.cholesky().ok_or(SolverError::SingularGram)?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}
